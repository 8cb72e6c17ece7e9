//! Trainable embedder, classifier and discriminator heads, Adam, the cosine
//! learning-rate schedule and the training loop.
//!
//! The embedder is an affine map with a per-modality additive offset followed
//! by L2 normalization. All gradients are hand-derived.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Modality, PkSampler, SamplerConfig};
use crate::embedding::{EmbeddingBatch, NORM_EPS};
use crate::losses::{
    adversarial_d_loss, adversarial_g_loss, embedding_loss, softmax_ce, AdversarialReport, LossConfig,
    LossReport, LossSelection, WeightedLossBundle,
};
use crate::{Error, Result};

/// Flat views over every tensor of a parameter (or gradient) set.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

fn flat(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn flat_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedderParams {
    /// `d_emb × d_in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// One additive offset per modality (row 0 sketch, row 1 photo).
    pub modality_offset: Array2<f64>,
    #[serde(skip)]
    version: u64,
}

// The version counter only guards forward caches; it is not part of the value.
impl PartialEq for EmbedderParams {
    fn eq(&self, other: &Self) -> bool {
        self.weight == other.weight && self.bias == other.bias && self.modality_offset == other.modality_offset
    }
}

impl EmbedderParams {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, modality_offset: Array2<f64>) -> Result<Self> {
        let d_emb = weight.nrows();
        if d_emb < 2 {
            return Err(Error::invalid("embedding dimension must be at least 2"));
        }
        if bias.len() != d_emb || modality_offset.dim() != (2, d_emb) {
            return Err(Error::invalid("bias and modality offsets must match the embedding dimension"));
        }
        Ok(Self {
            weight: weight.as_standard_layout().into_owned(),
            bias,
            modality_offset: modality_offset.as_standard_layout().into_owned(),
            version: 0,
        })
    }

    /// Gaussian weights with variance `1/d_in`, zero bias and offsets.
    pub fn init<R: Rng>(d_in: usize, d_emb: usize, rng: &mut R) -> Result<Self> {
        let scale = 1.0 / (d_in as f64).sqrt();
        let weight = Array2::from_shape_fn((d_emb, d_in), |_| scale * rng.sample::<f64, _>(StandardNormal));
        Self::new(weight, Array1::zeros(d_emb), Array2::zeros((2, d_emb)))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
            modality_offset: Array2::zeros(self.modality_offset.raw_dim()),
            version: 0,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_emb(&self) -> usize {
        self.weight.nrows()
    }

    /// Marks cached forward passes as stale.
    pub fn touch(&mut self) {
        self.version = self.version.wrapping_add(1);
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

impl ParamSet for EmbedderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            flat(&self.weight),
            self.bias.as_slice().expect("contiguous"),
            flat(&self.modality_offset),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            flat_mut(&mut self.weight),
            self.bias.as_slice_mut().expect("contiguous"),
            flat_mut(&mut self.modality_offset),
        ]
    }
}

/// Values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Array2<f64>,
    modalities: Vec<Modality>,
    pre_norm: Array1<f64>,
    outputs: Array2<f64>,
    version: u64,
}

/// Embeds `features` (one row per sample) into unit-norm rows.
pub fn embed_forward(
    params: &EmbedderParams,
    features: ArrayView2<'_, f64>,
    modalities: &[Modality],
) -> Result<(Array2<f64>, ForwardCache)> {
    if features.ncols() != params.d_in() {
        return Err(Error::invalid(format!(
            "features have {} columns, embedder expects {}",
            features.ncols(),
            params.d_in()
        )));
    }
    if features.nrows() != modalities.len() {
        return Err(Error::invalid("one modality per feature row required"));
    }
    let mut z = features.dot(&params.weight.t());
    for (mut row, m) in z.rows_mut().into_iter().zip(modalities) {
        row += &params.bias;
        row += &params.modality_offset.row(m.index());
    }
    let norms: Array1<f64> = z.rows().into_iter().map(|r| r.dot(&r).sqrt().max(NORM_EPS)).collect();
    let mut out = z;
    for (mut row, &n) in out.rows_mut().into_iter().zip(norms.iter()) {
        row /= n;
    }
    let cache = ForwardCache {
        inputs: features.to_owned(),
        modalities: modalities.to_vec(),
        pre_norm: norms,
        outputs: out.clone(),
        version: params.version,
    };
    Ok((out, cache))
}

/// Pulls a gradient on the normalized rows back to the embedder parameters.
///
/// The normalization Jacobian `(I - f fᵀ) / ‖z‖` removes the radial component
/// of the upstream gradient.
pub fn embed_backward(
    params: &EmbedderParams,
    cache: &ForwardCache,
    grad_out: &Array2<f64>,
) -> Result<EmbedderParams> {
    if cache.version != params.version {
        return Err(Error::InvalidState(
            "forward cache was produced by an older parameter version".into(),
        ));
    }
    if grad_out.dim() != cache.outputs.dim() {
        return Err(Error::invalid(format!(
            "upstream gradient shape {:?} does not match output shape {:?}",
            grad_out.shape(),
            cache.outputs.shape()
        )));
    }
    let mut grad_z = grad_out.clone();
    for ((mut gz, f), &n) in grad_z
        .rows_mut()
        .into_iter()
        .zip(cache.outputs.rows())
        .zip(cache.pre_norm.iter())
    {
        let radial = gz.dot(&f);
        gz.scaled_add(-radial, &f);
        gz /= n;
    }
    let mut grads = params.zeros_like();
    grads.weight = grad_z.t().dot(&cache.inputs);
    grads.bias = grad_z.sum_axis(Axis(0));
    for (gz, m) in grad_z.rows().into_iter().zip(&cache.modalities) {
        let mut row = grads.modality_offset.row_mut(m.index());
        row += &gz;
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// `C × d_emb`; logits are `W_c f` with no bias.
    pub weight: Array2<f64>,
}

impl ClassifierParams {
    pub fn init<R: Rng>(n_classes: usize, d_emb: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (d_emb as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((n_classes, d_emb), |_| scale * rng.sample::<f64, _>(StandardNormal)),
        }
    }

    pub fn logits(&self, embeddings: ArrayView2<'_, f64>) -> Array2<f64> {
        embeddings.dot(&self.weight.t())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorParams {
    pub weight: Array1<f64>,
    pub bias: f64,
}

impl DiscriminatorParams {
    /// Zero weights: every score starts at 0.5, so the first update points
    /// along the actual photo/sketch separation rather than a random direction.
    pub fn zeros(d_emb: usize) -> Self {
        Self {
            weight: Array1::zeros(d_emb),
            bias: 0.0,
        }
    }

    /// Probability that each row is a photo embedding.
    pub fn scores(&self, embeddings: ArrayView2<'_, f64>) -> Array1<f64> {
        embeddings.dot(&self.weight).mapv(|u| sigmoid(u + self.bias))
    }
}

impl ParamSet for DiscriminatorParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weight.as_slice().expect("contiguous"), std::slice::from_ref(&self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("contiguous"),
            std::slice::from_mut(&mut self.bias),
        ]
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Embedder plus classifier head: the generator side of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub embedder: EmbedderParams,
    pub classifier: ClassifierParams,
}

impl Model {
    pub fn init<R: Rng>(d_in: usize, d_emb: usize, n_classes: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            embedder: EmbedderParams::init(d_in, d_emb, rng)?,
            classifier: ClassifierParams::init(n_classes, d_emb, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedder: self.embedder.zeros_like(),
            classifier: ClassifierParams {
                weight: Array2::zeros(self.classifier.weight.raw_dim()),
            },
        }
    }

    /// Embeds every sample of a dataset, in storage order.
    pub fn embed_dataset(&self, ds: &Dataset) -> Result<EmbeddingBatch> {
        let (x, labels, mods) = ds.gather_all();
        let (rows, _) = embed_forward(&self.embedder, x.view(), &mods)?;
        EmbeddingBatch::new(rows, labels, mods)
    }
}

impl ParamSet for Model {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.embedder.tensors();
        t.push(flat(&self.classifier.weight));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.embedder.tensors_mut();
        t.push(flat_mut(&mut self.classifier.weight));
        t
    }
}

/// Adam moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<P: ParamSet>(params: &mut P, grads: &P, state: &mut OptimizerState, lr: f64) -> Result<()> {
    let grads = grads.tensors();
    if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let mut tensors = params.tensors_mut();
    if tensors.len() != state.first.len()
        || tensors.iter().zip(&state.first).any(|(t, m)| t.len() != m.len())
        || tensors.iter().zip(&grads).any(|(t, g)| t.len() != g.len())
    {
        return Err(Error::invalid("parameter, gradient and optimizer shapes differ"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (((p, g), m), v) in tensors
        .iter_mut()
        .zip(&grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// `base_lr · ½(1 + cos(π t / T))`.
pub fn cosine_lr(base_lr: f64, t: usize, total: usize) -> Result<f64> {
    if t > total || total == 0 {
        return Err(Error::invalid(format!("iteration {t} outside 0..={total}")));
    }
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()))
}

/// Training variant: which triplet losses join the classification loss, and
/// whether an adversarial modality discriminator is trained alongside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Method {
    pub losses: LossSelection,
    pub adversarial: bool,
}

impl Method {
    pub const CLS_ONLY: Method = Method {
        losses: LossSelection::NONE,
        adversarial: false,
    };
    pub const BASELINE: Method = Method {
        losses: LossSelection::CROSS,
        adversarial: false,
    };
    pub const MATHM: Method = Method {
        losses: LossSelection::MATHM,
        adversarial: false,
    };
    pub const GAN: Method = Method {
        losses: LossSelection::CROSS,
        adversarial: true,
    };

    /// The eight loss combinations of the component ablation, weakest first.
    pub fn ablation_rows() -> Vec<Method> {
        let sel = |cross, within, hybrid, gradient_weighting| Method {
            losses: LossSelection {
                cross,
                within,
                hybrid,
                gradient_weighting,
            },
            adversarial: false,
        };
        vec![
            sel(false, false, false, false),
            sel(true, false, false, false),
            sel(false, true, false, false),
            sel(false, false, true, false),
            sel(true, true, false, false),
            sel(true, false, true, false),
            sel(true, true, true, false),
            sel(true, true, true, true),
        ]
    }

    pub fn uses_triplets(&self) -> bool {
        self.losses.any()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Method::GAN {
            return f.write_str("gan");
        }
        if *self == Method::CLS_ONLY {
            return f.write_str("cls-only");
        }
        if *self == Method::BASELINE {
            return f.write_str("baseline");
        }
        if *self == Method::MATHM {
            return f.write_str("mathm");
        }
        let l = &self.losses;
        let mut parts = Vec::new();
        if l.cross {
            parts.push("cross");
        }
        if l.within {
            parts.push("in");
        }
        if l.hybrid {
            parts.push("hyb");
        }
        if l.gradient_weighting {
            parts.push("gw");
        }
        if self.adversarial {
            parts.push("adv");
        }
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cls-only" | "cls" => return Ok(Method::CLS_ONLY),
            "baseline" => return Ok(Method::BASELINE),
            "mathm" => return Ok(Method::MATHM),
            "gan" => return Ok(Method::GAN),
            _ => {}
        }
        let mut m = Method::CLS_ONLY;
        for part in s.split('+') {
            match part.trim() {
                "cross" => m.losses.cross = true,
                "in" | "within" => m.losses.within = true,
                "hyb" | "hybrid" => m.losses.hybrid = true,
                "gw" => m.losses.gradient_weighting = true,
                "adv" => m.adversarial = true,
                other => return Err(Error::Config(format!("unknown method component {other:?} in {s:?}"))),
            }
        }
        if m.losses.gradient_weighting && !m.losses.any() {
            return Err(Error::Config(format!("method {s:?} enables weighting without any triplet loss")));
        }
        Ok(m)
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub total_iters: usize,
    pub p: usize,
    pub k: usize,
    pub d_emb: usize,
    pub loss: LossConfig,
    pub method: Method,
    pub seed: u64,
    /// Train the per-modality embedding offsets.
    pub learn_modality_offset: bool,
    /// Scale of the generator's adversarial term (GAN variant only).
    pub adversarial_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            total_iters: 2000,
            p: 8,
            k: 4,
            d_emb: 16,
            loss: LossConfig::default(),
            method: Method::MATHM,
            seed: 0,
            learn_modality_offset: false,
            adversarial_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_iters < 1 {
            return Err(Error::Config("total_iters must be at least 1".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if self.d_emb < 2 {
            return Err(Error::Config("d_emb must be at least 2".into()));
        }
        if !(self.adversarial_weight >= 0.0) {
            return Err(Error::Config("adversarial_weight must be non-negative".into()));
        }
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.sampler().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            p: self.p,
            k: self.k,
            // Decorrelate batch order from parameter initialization.
            seed: self.seed ^ 0x5eed_ba7c_4000_0001,
        }
    }
}

/// Everything produced by one evaluation of the generator objective.
#[derive(Debug, Clone)]
pub struct GeneratorStep {
    pub value: f64,
    pub grads: Model,
    pub embeddings: Array2<f64>,
    pub classification: LossReport,
    pub triplets: Option<WeightedLossBundle>,
    pub adversarial: Option<AdversarialReport>,
}

/// Total generator objective on one batch and its gradient for every
/// embedder and classifier parameter.
///
/// `fixed_weights` overrides the per-step triplet weights, which is how a
/// gradient check holds them constant.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective(
    model: &Model,
    discriminator: Option<&DiscriminatorParams>,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    modalities: &[Modality],
    cfg: &TrainConfig,
    fixed_weights: Option<[f64; 3]>,
) -> Result<GeneratorStep> {
    let (f, cache) = embed_forward(&model.embedder, features, modalities)?;
    let logits = model.classifier.logits(f.view());
    let cls = softmax_ce(logits.view(), labels)?;
    let mut grads = model.zeros_like();
    grads.classifier.weight = cls.grad.t().dot(&f);
    let mut grad_f = cls.grad.dot(&model.classifier.weight);
    let mut value = cls.value;

    let triplets = if cfg.method.uses_triplets() {
        let mut bundle = embedding_loss(f.view(), labels, modalities, cfg.method.losses, &cfg.loss)?;
        if let Some(w) = fixed_weights {
            bundle.weights = w;
            bundle.combined_value = bundle.reports.iter().zip(w).map(|(r, w)| w * r.value).sum();
            let mut g = Array2::zeros(f.raw_dim());
            for (r, w) in bundle.reports.iter().zip(w) {
                g.scaled_add(w, &r.grad);
            }
            bundle.combined_grad = g;
        }
        value += cfg.loss.lambda * bundle.combined_value;
        grad_f.scaled_add(cfg.loss.lambda, &bundle.combined_grad);
        Some(bundle)
    } else {
        None
    };

    let adversarial = match (cfg.method.adversarial, discriminator) {
        (true, Some(d)) => {
            let (report, g_scores, scores) = discriminator_terms(d, f.view(), modalities, adversarial_g_loss)?;
            value += cfg.adversarial_weight * report.value;
            for (i, (gs, s)) in g_scores.iter().zip(scores.iter()).enumerate() {
                let coef = cfg.adversarial_weight * gs * s * (1.0 - s);
                grad_f.row_mut(i).scaled_add(coef, &d.weight);
            }
            Some(report)
        }
        (true, None) => return Err(Error::InvalidState("adversarial method without a discriminator".into())),
        _ => None,
    };

    grads.embedder = embed_backward(&model.embedder, &cache, &grad_f)?;
    Ok(GeneratorStep {
        value,
        grads,
        embeddings: f,
        classification: cls,
        triplets,
        adversarial,
    })
}

/// Scores every row, evaluates `loss` on the photo/sketch split, and returns
/// the per-row score gradient in batch order together with the scores.
fn discriminator_terms(
    d: &DiscriminatorParams,
    embeddings: ArrayView2<'_, f64>,
    modalities: &[Modality],
    loss: fn(&[f64], &[f64]) -> Result<AdversarialReport>,
) -> Result<(AdversarialReport, Vec<f64>, Array1<f64>)> {
    let scores = d.scores(embeddings);
    let photo: Vec<f64> = scores.iter().zip(modalities).filter(|(_, m)| **m == Modality::Photo).map(|(s, _)| *s).collect();
    let sketch: Vec<f64> = scores.iter().zip(modalities).filter(|(_, m)| **m == Modality::Sketch).map(|(s, _)| *s).collect();
    let report = loss(&photo, &sketch)?;
    let (mut ip, mut is) = (0, 0);
    let g = modalities
        .iter()
        .map(|m| match m {
            Modality::Photo => {
                ip += 1;
                report.grad_photo[ip - 1]
            }
            Modality::Sketch => {
                is += 1;
                report.grad_sketch[is - 1]
            }
        })
        .collect();
    Ok((report, g, scores))
}

/// Discriminator objective on fixed embeddings and its parameter gradient.
pub fn discriminator_objective(
    d: &DiscriminatorParams,
    embeddings: ArrayView2<'_, f64>,
    modalities: &[Modality],
) -> Result<(AdversarialReport, DiscriminatorParams)> {
    let (report, g_scores, scores) = discriminator_terms(d, embeddings, modalities, adversarial_d_loss)?;
    let mut grad = DiscriminatorParams {
        weight: Array1::zeros(d.weight.len()),
        bias: 0.0,
    };
    for (i, (gs, s)) in g_scores.iter().zip(scores.iter()).enumerate() {
        let coef = gs * s * (1.0 - s);
        grad.weight.scaled_add(coef, &embeddings.row(i));
        grad.bias += coef;
    }
    Ok((report, grad))
}

/// Per-iteration training record.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    pub lr: f64,
    pub l_cls: f64,
    /// Cross, within, hybrid.
    pub triplet_values: Option<[f64; 3]>,
    pub active_fractions: Option<[f64; 3]>,
    pub weights: Option<[f64; 3]>,
    /// Generator and discriminator adversarial losses.
    pub adversarial: Option<[f64; 2]>,
    pub l_total: f64,
    /// Largest |‖f‖ - 1| over the batch embeddings.
    pub max_norm_deviation: f64,
    /// Sample indices of the batch.
    pub batch: Vec<usize>,
}

/// Trained parameters with the configuration and class set that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    /// Original identities of the classes seen in training.
    pub train_class_ids: Vec<usize>,
    pub model: Model,
    pub discriminator: Option<DiscriminatorParams>,
}

pub const CHECKPOINT_FORMAT: &str = "modalmetric-checkpoint-v1";

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("unsupported checkpoint format {:?}", ck.format)));
        }
        let e = &ck.model.embedder;
        if ck.model.classifier.weight.ncols() != e.d_emb()
            || e.bias.len() != e.d_emb()
            || e.modality_offset.dim() != (2, e.d_emb())
        {
            return Err(Error::Data("checkpoint tensor shapes are inconsistent".into()));
        }
        if !e.is_finite() {
            return Err(Error::Data("checkpoint contains non-finite parameters".into()));
        }
        Ok(ck)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<IterationLog>,
}

/// Runs `cfg.total_iters` PK-sampled steps of the configured method.
///
/// Each step: sample a batch, embed, evaluate classification plus the
/// method's embedding loss, back-propagate and apply Adam at the cosine
/// learning rate. The adversarial variant then updates the discriminator on
/// the same batch embeddings with its own optimizer state.
pub fn train(train_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_set.n_classes < 2 {
        return Err(Error::Data("training needs at least 2 classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(train_set.d_in, cfg.d_emb, train_set.n_classes, &mut rng)?;
    let mut disc = cfg.method.adversarial.then(|| DiscriminatorParams::zeros(cfg.d_emb));
    let mut sampler = PkSampler::new(train_set, cfg.sampler())?;
    let mut opt = OptimizerState::new(&model);
    let mut disc_opt = disc.as_ref().map(OptimizerState::new);
    let mut log = Vec::with_capacity(cfg.total_iters);

    for iter in 0..cfg.total_iters {
        let lr = cosine_lr(cfg.base_lr, iter, cfg.total_iters)?;
        let batch = sampler.next_batch();
        let (x, labels, mods) = train_set.gather(&batch);
        let step = generator_objective(&model, disc.as_ref(), x.view(), &labels, &mods, cfg, None)?;
        if !step.value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at iteration {iter}")));
        }
        let mut grads = step.grads;
        if !cfg.learn_modality_offset {
            grads.embedder.modality_offset.fill(0.0);
        }
        adam_step(&mut model, &grads, &mut opt, lr)
            .map_err(|e| Error::Numeric(format!("iteration {iter}: {e}")))?;
        model.embedder.touch();

        let mut adversarial = None;
        if let (Some(d), Some(d_opt)) = (disc.as_mut(), disc_opt.as_mut()) {
            let (report, d_grad) = discriminator_objective(d, step.embeddings.view(), &mods)?;
            adam_step(d, &d_grad, d_opt, lr).map_err(|e| Error::Numeric(format!("iteration {iter}: {e}")))?;
            let g_value = step.adversarial.as_ref().map_or(0.0, |r| r.value);
            adversarial = Some([g_value, report.value]);
        }

        let max_norm_deviation = step
            .embeddings
            .rows()
            .into_iter()
            .map(|r| (r.dot(&r).sqrt() - 1.0).abs())
            .fold(0.0, f64::max);
        let t = step.triplets.as_ref();
        log.push(IterationLog {
            iter,
            lr,
            l_cls: step.classification.value,
            triplet_values: t.map(|b| [b.reports[0].value, b.reports[1].value, b.reports[2].value]),
            active_fractions: t.map(|b| b.active_fractions()),
            weights: t.map(|b| b.weights),
            adversarial,
            l_total: step.value,
            max_norm_deviation,
            batch,
        });
    }

    Ok(TrainOutput {
        checkpoint: Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: cfg.clone(),
            train_class_ids: train_set.class_ids.clone(),
            model,
            discriminator: disc,
        },
        log,
    })
}

/// Fraction of samples whose highest logit is their own class.
pub fn classification_accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    let emb = model.embed_dataset(ds)?;
    let logits = model.classifier.logits(emb.rows.view());
    let correct = logits
        .rows()
        .into_iter()
        .zip(&emb.labels)
        .filter(|(row, &y)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            best.0 == y
        })
        .count();
    Ok(correct as f64 / emb.len() as f64)
}
