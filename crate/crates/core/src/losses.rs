//! Loss functions with analytic gradients.
//!
//! Triplet losses take L2-normalized embedding rows and return the gradient
//! with respect to those rows; the normalization Jacobian is applied by the
//! model's backward pass. The classification loss returns its gradient with
//! respect to the logits.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::embedding::self_distance;
use crate::mining::{batch_hard_mine, Triplet, TripletKind};
use crate::{Error, Result};

/// A loss value, the fraction of active hinge terms, and the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// Share of triplets with a strictly positive hinge argument.
    pub active_fraction: f64,
    pub grad: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Triplet margin.
    pub margin: f64,
    /// Weight of the embedding loss relative to classification.
    pub lambda: f64,
    /// Losses whose active fraction is at or below this are left out of the weighting.
    pub eps_g: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            lambda: 1.0,
            eps_g: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::invalid("margin must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if !(self.eps_g > 0.0) {
            return Err(Error::invalid("eps_g must be positive"));
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy; the gradient is with respect to the logits.
pub fn softmax_ce(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<LossReport> {
    let (b, c) = logits.dim();
    if c < 2 {
        return Err(Error::invalid("classification needs at least 2 classes"));
    }
    if b == 0 || labels.len() != b {
        return Err(Error::invalid(format!("{b} logit rows for {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} outside 0..{c}")));
    }
    let mut grad = Array2::zeros((b, c));
    let mut value = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let log_z = max + sum.ln();
        value += log_z - row[labels[i]];
        for j in 0..c {
            let p = (row[j] - log_z).exp();
            grad[[i, j]] = (p - if j == labels[i] { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok(LossReport {
        value: value / b as f64,
        active_fraction: 1.0,
        grad,
    })
}

fn distance_and_direction(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
    let diff = &x - &y;
    let d = diff.dot(&diff).sqrt();
    if d > 0.0 {
        (d, diff / d)
    } else {
        // The distance is not differentiable at zero; use the zero subgradient.
        (0.0, Array1::zeros(x.len()))
    }
}

/// Mean hinge `[d_ap - d_an + margin]+` over the given triplets.
///
/// A triplet whose hinge argument is exactly zero counts as inactive and
/// contributes no gradient.
pub fn triplet_hinge(embeddings: ArrayView2<'_, f64>, triplets: &[Triplet], margin: f64) -> Result<LossReport> {
    if triplets.is_empty() {
        return Err(Error::invalid("triplet loss over an empty triplet set"));
    }
    let n_rows = embeddings.nrows();
    if let Some(t) = triplets
        .iter()
        .find(|t| t.anchor.max(t.positive).max(t.negative) >= n_rows)
    {
        return Err(Error::invalid(format!("triplet {t:?} indexes past {n_rows} rows")));
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut grad = Array2::zeros(embeddings.raw_dim());
    let mut value = 0.0;
    let mut active = 0usize;
    for t in triplets {
        let a = embeddings.row(t.anchor);
        let (d_ap, u_ap) = distance_and_direction(a, embeddings.row(t.positive));
        let (d_an, u_an) = distance_and_direction(a, embeddings.row(t.negative));
        let arg = d_ap - d_an + margin;
        if arg > 0.0 {
            value += arg;
            active += 1;
            let mut ga = grad.row_mut(t.anchor);
            ga.scaled_add(scale, &u_ap);
            ga.scaled_add(-scale, &u_an);
            grad.row_mut(t.positive).scaled_add(-scale, &u_ap);
            grad.row_mut(t.negative).scaled_add(scale, &u_an);
        }
    }
    Ok(LossReport {
        value: value * scale,
        active_fraction: active as f64 * scale,
        grad,
    })
}

/// Batch-hard mining of `kind` followed by [`triplet_hinge`].
pub fn modality_aware_loss(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    modalities: &[Modality],
    kind: TripletKind,
    margin: f64,
) -> Result<LossReport> {
    let dist = self_distance(embeddings);
    let triplets = batch_hard_mine(&dist, labels, modalities, kind)?;
    triplet_hinge(embeddings, &triplets, margin)
}

pub fn cross_modality_loss(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    modalities: &[Modality],
    margin: f64,
) -> Result<LossReport> {
    modality_aware_loss(embeddings, labels, modalities, TripletKind::Cross, margin)
}

pub fn within_modality_loss(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    modalities: &[Modality],
    margin: f64,
) -> Result<LossReport> {
    modality_aware_loss(embeddings, labels, modalities, TripletKind::Within, margin)
}

pub fn hybrid_loss(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    modalities: &[Modality],
    margin: f64,
) -> Result<LossReport> {
    modality_aware_loss(embeddings, labels, modalities, TripletKind::Hybrid, margin)
}

/// Closed-form weights that equalize `w_i * g_i` across losses while keeping
/// `Σ w_i * g_i = Σ g_i`.
///
/// Only losses with `g_i > eps_g` take part; the others get weight zero. With
/// `n` active losses, `w_i = (1/n) Σ_k g_k / g_i`.
pub fn gradient_weights(g: &[f64], eps_g: f64) -> Result<Vec<f64>> {
    if let Some(bad) = g.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("gradient magnitudes must be finite and non-negative, got {bad}")));
    }
    let active: Vec<bool> = g.iter().map(|&x| x > eps_g).collect();
    let n = active.iter().filter(|&&a| a).count();
    if n == 0 {
        return Ok(vec![0.0; g.len()]);
    }
    let total: f64 = g.iter().zip(&active).filter(|(_, &a)| a).map(|(x, _)| x).sum();
    let share = total / n as f64;
    Ok(g.iter()
        .zip(&active)
        .map(|(&x, &a)| if a { share / x } else { 0.0 })
        .collect())
}

/// Which triplet losses enter the embedding objective and how they are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossSelection {
    pub cross: bool,
    pub within: bool,
    pub hybrid: bool,
    /// Combine with [`gradient_weights`] instead of a plain sum.
    pub gradient_weighting: bool,
}

impl LossSelection {
    pub const NONE: LossSelection = LossSelection {
        cross: false,
        within: false,
        hybrid: false,
        gradient_weighting: false,
    };
    pub const CROSS: LossSelection = LossSelection {
        cross: true,
        ..Self::NONE
    };
    pub const MATHM: LossSelection = LossSelection {
        cross: true,
        within: true,
        hybrid: true,
        gradient_weighting: true,
    };

    pub fn enabled(&self) -> [bool; 3] {
        [self.cross, self.within, self.hybrid]
    }

    pub fn any(&self) -> bool {
        self.cross || self.within || self.hybrid
    }
}

/// The three modality-aware losses and their weighted combination.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLossBundle {
    /// Cross, within and hybrid, in that order.
    pub reports: [LossReport; 3],
    pub weights: [f64; 3],
    pub combined_value: f64,
    pub combined_grad: Array2<f64>,
}

impl WeightedLossBundle {
    pub fn report(&self, kind: TripletKind) -> &LossReport {
        &self.reports[kind_slot(kind)]
    }

    pub fn active_fractions(&self) -> [f64; 3] {
        [
            self.reports[0].active_fraction,
            self.reports[1].active_fraction,
            self.reports[2].active_fraction,
        ]
    }
}

fn kind_slot(kind: TripletKind) -> usize {
    match kind {
        TripletKind::Cross => 0,
        TripletKind::Within => 1,
        TripletKind::Hybrid => 2,
    }
}

/// Evaluates all three modality-aware losses on one distance matrix and
/// combines the selected ones.
///
/// Weights depend on the current batch only and are treated as constants in
/// the gradient.
pub fn embedding_loss(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    modalities: &[Modality],
    selection: LossSelection,
    cfg: &LossConfig,
) -> Result<WeightedLossBundle> {
    let dist = self_distance(embeddings);
    let mut reports = Vec::with_capacity(3);
    for kind in TripletKind::ALL {
        let triplets = batch_hard_mine(&dist, labels, modalities, kind)?;
        reports.push(triplet_hinge(embeddings, &triplets, cfg.margin)?);
    }
    let reports: [LossReport; 3] = reports.try_into().expect("three kinds");
    let enabled = selection.enabled();

    let weights = if selection.gradient_weighting {
        let idx: Vec<usize> = (0..3).filter(|&i| enabled[i]).collect();
        let g: Vec<f64> = idx.iter().map(|&i| reports[i].active_fraction).collect();
        let w = gradient_weights(&g, cfg.eps_g)?;
        let mut out = [0.0; 3];
        for (&i, wi) in idx.iter().zip(w) {
            out[i] = wi;
        }
        out
    } else {
        enabled.map(|on| if on { 1.0 } else { 0.0 })
    };

    let mut combined_grad = Array2::zeros(embeddings.raw_dim());
    let mut combined_value = 0.0;
    for (r, &w) in reports.iter().zip(&weights) {
        if w != 0.0 {
            combined_value += w * r.value;
            combined_grad.scaled_add(w, &r.grad);
        }
    }
    Ok(WeightedLossBundle {
        reports,
        weights,
        combined_value,
        combined_grad,
    })
}

/// All three triplet losses combined with gradient-based weights.
pub fn mathm_loss(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    modalities: &[Modality],
    cfg: &LossConfig,
) -> Result<WeightedLossBundle> {
    embedding_loss(embeddings, labels, modalities, LossSelection::MATHM, cfg)
}

/// Classification plus weighted embedding loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// `L_cls + λ · L_embed`, with both gradients expressed over the same rows.
///
/// `cls_grad` must already be mapped into embedding space (logit gradient
/// times the classifier weights).
pub fn total_loss(
    cls_value: f64,
    cls_grad: &Array2<f64>,
    embed_value: f64,
    embed_grad: &Array2<f64>,
    lambda: f64,
) -> Result<TotalLoss> {
    if cls_grad.shape() != embed_grad.shape() {
        return Err(Error::invalid(format!(
            "gradient shapes differ: {:?} vs {:?}",
            cls_grad.shape(),
            embed_grad.shape()
        )));
    }
    let mut grad = cls_grad.clone();
    if lambda != 0.0 {
        grad.scaled_add(lambda, embed_grad);
    }
    Ok(TotalLoss {
        value: cls_value + lambda * embed_value,
        grad,
    })
}

/// Clamp applied to discriminator outputs before taking logs.
pub const SCORE_CLAMP: f64 = 1e-7;

/// Adversarial loss with gradients for photo and sketch scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialReport {
    pub value: f64,
    pub grad_photo: Array1<f64>,
    pub grad_sketch: Array1<f64>,
}

fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

fn check_scores(photo: &[f64], sketch: &[f64]) -> Result<()> {
    if photo.is_empty() || sketch.is_empty() {
        return Err(Error::invalid("adversarial loss needs photo and sketch scores"));
    }
    if photo.iter().chain(sketch).any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite discriminator score".into()));
    }
    Ok(())
}

/// `-log s` term and its derivative, zero gradient where the clamp is active.
fn neg_log(s: f64) -> (f64, f64) {
    let c = clamp_score(s);
    (-c.ln(), if c == s { -1.0 / s } else { 0.0 })
}

/// `-log(1 - s)` term and its derivative.
fn neg_log_complement(s: f64) -> (f64, f64) {
    let c = clamp_score(s);
    (-(1.0 - c).ln(), if c == s { 1.0 / (1.0 - s) } else { 0.0 })
}

fn adversarial(
    photo: &[f64],
    sketch: &[f64],
    photo_term: fn(f64) -> (f64, f64),
    sketch_term: fn(f64) -> (f64, f64),
) -> Result<AdversarialReport> {
    check_scores(photo, sketch)?;
    let (np, ns) = (photo.len() as f64, sketch.len() as f64);
    let mut value = 0.0;
    let grad_photo = photo
        .iter()
        .map(|&s| {
            let (v, g) = photo_term(s);
            value += v / np;
            g / np
        })
        .collect();
    let grad_sketch = sketch
        .iter()
        .map(|&s| {
            let (v, g) = sketch_term(s);
            value += v / ns;
            g / ns
        })
        .collect();
    Ok(AdversarialReport {
        value,
        grad_photo,
        grad_sketch,
    })
}

/// Discriminator objective: `-(mean log D(photo) + mean log(1 - D(sketch)))`.
pub fn adversarial_d_loss(photo_scores: &[f64], sketch_scores: &[f64]) -> Result<AdversarialReport> {
    adversarial(photo_scores, sketch_scores, neg_log, neg_log_complement)
}

/// Generator objective with flipped targets:
/// `-(mean log(1 - D(photo)) + mean log D(sketch))`.
pub fn adversarial_g_loss(photo_scores: &[f64], sketch_scores: &[f64]) -> Result<AdversarialReport> {
    adversarial(photo_scores, sketch_scores, neg_log_complement, neg_log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{finite_diff_check, normalize_rows, NORM_EPS};
    use crate::mining::brute_force_mine;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use Modality::{Photo, Sketch};

    const LN2: f64 = std::f64::consts::LN_2;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn t(a: usize, p: usize, n: usize) -> Triplet {
        Triplet {
            anchor: a,
            positive: p,
            negative: n,
            kind: TripletKind::Within,
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, p: usize, k: usize, d: usize) -> (Array2<f64>, Vec<usize>, Vec<Modality>) {
        let n = 2 * p * k;
        let raw = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
        let mut labels = Vec::new();
        let mut mods = Vec::new();
        for c in 0..p {
            for m in [Sketch, Photo] {
                for _ in 0..k {
                    labels.push(c);
                    mods.push(m);
                }
            }
        }
        (normalize_rows(raw.view(), NORM_EPS), labels, mods)
    }

    #[test]
    fn softmax_examples() {
        let r = softmax_ce(Array2::zeros((3, 4)).view(), &[0, 1, 3]).unwrap();
        approx(r.value, 4f64.ln(), 1e-12);
        approx(r.value, 1.38629, 1e-5);
        let r = softmax_ce(array![[2.0, 0.0]].view(), &[0]).unwrap();
        approx(r.value, (1.0 + (-2f64).exp()).ln(), 1e-12);
        approx(r.value, 0.12693, 1e-5);
        let r = softmax_ce(array![[50.0, 0.0, 0.0]].view(), &[0]).unwrap();
        assert!(r.value < 1e-6);
        assert!(softmax_ce(array![[1.0, 0.0]].view(), &[2]).is_err());
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let logits = Array2::from_shape_fn((5, 4), |_| rng.sample::<f64, _>(StandardNormal));
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
            let r = softmax_ce(logits.view(), &labels).unwrap();
            let chk = finite_diff_check(|p| Ok(softmax_ce(p.view(), &labels)?.value), &logits, &r.grad, 1e-5).unwrap();
            assert!(chk.max_relative_error <= 1e-4, "{chk:?}");
        }
    }

    #[test]
    fn hinge_examples() {
        let e = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let r = triplet_hinge(e.view(), &[t(0, 1, 2)], 0.2).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.active_fraction, 0.0);
        assert!(r.grad.iter().all(|&x| x == 0.0));

        let e = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]];
        let r = triplet_hinge(e.view(), &[t(0, 1, 2)], 0.2).unwrap();
        approx(r.value, 2.0 - 2f64.sqrt() + 0.2, 1e-12);
        approx(r.value, 0.78579, 1e-5);
        assert_eq!(r.active_fraction, 1.0);

        // Exactly on the boundary: inactive.
        let e = array![[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let r = triplet_hinge(e.view(), &[t(0, 1, 2)], 0.0).unwrap();
        assert_eq!((r.value, r.active_fraction), (0.0, 0.0));

        assert!(triplet_hinge(e.view(), &[], 0.2).is_err());
    }

    #[test]
    fn hinge_gradient_active_triplet() {
        let e = normalize_rows(array![[1.0, 0.2, 0.0], [-0.3, 1.0, 0.4], [0.9, 0.5, 0.1]].view(), NORM_EPS);
        let tr = [t(0, 1, 2)];
        let r = triplet_hinge(e.view(), &tr, 0.2).unwrap();
        assert_eq!(r.active_fraction, 1.0);
        let chk = finite_diff_check(|p| Ok(triplet_hinge(p.view(), &tr, 0.2)?.value), &e, &r.grad, 1e-5).unwrap();
        assert_eq!(chk.checked, 9);
        assert!(chk.max_relative_error < 1e-4, "{chk:?}");
    }

    #[test]
    fn cross_loss_orthogonal_axes() {
        let e = Array2::eye(4);
        let labels = [0, 0, 1, 1];
        let mods = [Sketch, Photo, Sketch, Photo];
        let r = cross_modality_loss(e.view(), &labels, &mods, 0.2).unwrap();
        approx(r.value, 0.2, 1e-12);
        assert_eq!(r.active_fraction, 1.0);
    }

    #[test]
    fn cross_loss_zero_when_perfect() {
        let e = array![[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]];
        let labels = [0, 0, 1, 1];
        let mods = [Sketch, Photo, Sketch, Photo];
        let r = cross_modality_loss(e.view(), &labels, &mods, 0.2).unwrap();
        assert_eq!((r.value, r.active_fraction), (0.0, 0.0));
    }

    fn unit(v: [f64; 3]) -> [f64; 3] {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    }

    #[test]
    fn within_loss_cases() {
        // Two classes per modality, tightly clustered and far apart.
        let rows = [
            unit([1.0, 0.05, 0.0]),
            unit([1.0, -0.05, 0.0]),
            unit([-1.0, 0.05, 0.0]),
            unit([-1.0, -0.05, 0.0]),
            unit([0.0, 0.05, 1.0]),
            unit([0.0, -0.05, 1.0]),
            unit([0.0, 0.05, -1.0]),
            unit([0.0, -0.05, -1.0]),
        ];
        let e = Array2::from_shape_fn((8, 3), |(i, j)| rows[i][j]);
        let labels = [0, 0, 1, 1, 0, 0, 1, 1];
        let mods = [Sketch, Sketch, Sketch, Sketch, Photo, Photo, Photo, Photo];
        let r = within_modality_loss(e.view(), &labels, &mods, 0.2).unwrap();
        assert_eq!((r.value, r.active_fraction), (0.0, 0.0));

        // Shuffle photo classes: photos 4 and 6 swap positions.
        let shuffled_labels = [0, 0, 1, 1, 1, 0, 0, 1];
        let r = within_modality_loss(e.view(), &shuffled_labels, &mods, 0.2).unwrap();
        assert!(r.value > 0.0);
        let sketch_only = triplet_hinge(
            e.view(),
            &batch_hard_mine(&self_distance(e.view()), &shuffled_labels, &mods, TripletKind::Within).unwrap()[..4],
            0.2,
        )
        .unwrap();
        assert_eq!(sketch_only.value, 0.0);
    }

    /// Two tight classes 0.8 apart; photos shifted by `gap` in a third direction.
    fn gap_batch(gap: f64) -> (Array2<f64>, Vec<usize>, Vec<Modality>) {
        let mut raw = Vec::new();
        let (mut labels, mut mods) = (Vec::new(), Vec::new());
        for (c, cx) in [(0, 0.0), (1, 0.8)] {
            for (m, gy) in [(Sketch, 0.0), (Photo, gap)] {
                for jitter in [-0.02, 0.02] {
                    raw.extend([cx - 0.4 + jitter, gy - gap / 2.0, 1.0]);
                    labels.push(c);
                    mods.push(m);
                }
            }
        }
        let raw = Array2::from_shape_vec((8, 3), raw).unwrap();
        (normalize_rows(raw.view(), NORM_EPS), labels, mods)
    }

    #[test]
    fn hybrid_loss_sees_modality_gap() {
        let cfg = LossConfig::default();
        let (e, labels, mods) = gap_batch(0.9);
        let within = within_modality_loss(e.view(), &labels, &mods, cfg.margin).unwrap();
        let cross = cross_modality_loss(e.view(), &labels, &mods, cfg.margin).unwrap();
        let hybrid = hybrid_loss(e.view(), &labels, &mods, cfg.margin).unwrap();
        assert_eq!(within.value, 0.0);
        assert_eq!(cross.value, 0.0);
        assert!(hybrid.value > 0.25, "{}", hybrid.value);
        assert_eq!(hybrid.active_fraction, 1.0);

        let (e, labels, mods) = gap_batch(0.0);
        assert_eq!(hybrid_loss(e.view(), &labels, &mods, cfg.margin).unwrap().value, 0.0);
    }

    #[test]
    fn losses_equal_hinge_of_brute_force_mining() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let (p, k) = (rng.random_range(2..5), rng.random_range(2..4));
            let (e, l, m) = random_batch(&mut rng, p, k, 6);
            for kind in TripletKind::ALL {
                let fast = modality_aware_loss(e.view(), &l, &m, kind, 0.2).unwrap();
                let oracle = triplet_hinge(e.view(), &brute_force_mine(e.view(), &l, &m, kind).unwrap(), 0.2).unwrap();
                assert_eq!(fast, oracle);
                assert!(fast.value >= 0.0);
            }
        }
    }

    #[test]
    fn modality_losses_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        for _ in 0..20 {
            let (e, l, m) = random_batch(&mut rng, 3, 2, 5);
            for kind in TripletKind::ALL {
                let r = modality_aware_loss(e.view(), &l, &m, kind, 0.2).unwrap();
                let chk = finite_diff_check(
                    |p| Ok(modality_aware_loss(p.view(), &l, &m, kind, 0.2)?.value),
                    &e,
                    &r.grad,
                    1e-5,
                )
                .unwrap();
                assert!(chk.max_relative_error <= 1e-4, "{kind}: {chk:?}");
                checked += chk.checked;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(gradient_weights(&[1.0, 1.0, 1.0], 1e-6).unwrap(), vec![1.0, 1.0, 1.0]);

        let w = gradient_weights(&[0.5, 0.25, 0.25], 1e-6).unwrap();
        let expect = [2.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0];
        for (a, b) in w.iter().zip(expect) {
            approx(*a, b, 1e-12);
        }
        for (wi, gi) in w.iter().zip([0.5, 0.25, 0.25]) {
            approx(wi * gi, 1.0 / 3.0, 1e-12);
        }

        let g = [0.5, 0.0, 0.25];
        let w = gradient_weights(&g, 1e-6).unwrap();
        approx(w[0], 0.75, 1e-12);
        assert_eq!(w[1], 0.0);
        approx(w[2], 1.5, 1e-12);
        approx(w[0] * g[0] + w[2] * g[2], 0.75, 1e-12);

        assert_eq!(gradient_weights(&[0.0, 0.0, 0.0], 1e-6).unwrap(), vec![0.0; 3]);
        assert!(gradient_weights(&[0.1, -0.1, 0.2], 1e-6).is_err());
    }

    /// Independent route: solve the 3x3 system `w_i g_i - w_j g_j = 0`,
    /// `Σ w_i g_i = Σ g_i` by Gaussian elimination.
    fn solve_weights(g: [f64; 3]) -> [f64; 3] {
        let mut a = [
            [g[0], -g[1], 0.0, 0.0],
            [0.0, g[1], -g[2], 0.0],
            [g[0], g[1], g[2], g[0] + g[1] + g[2]],
        ];
        for col in 0..3 {
            let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..3 {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..4 {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]]
    }

    #[test]
    fn weights_match_linear_solve() {
        for g in [[0.5, 0.25, 0.25], [0.9, 0.1, 0.3], [0.05, 0.6, 0.6]] {
            let w = gradient_weights(&g, 1e-6).unwrap();
            let s = solve_weights(g);
            for i in 0..3 {
                approx(w[i], s[i], 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn weight_identities(g in prop::array::uniform3(prop_oneof![Just(0.0), 0.0f64..1.0])) {
            let w = gradient_weights(&g, 1e-6).unwrap();
            let active: Vec<usize> = (0..3).filter(|&i| g[i] > 1e-6).collect();
            for &i in &active {
                for &j in &active {
                    prop_assert!((w[i] * g[i] - w[j] * g[j]).abs() <= 1e-12);
                }
            }
            let lhs: f64 = active.iter().map(|&i| w[i] * g[i]).sum();
            let rhs: f64 = active.iter().map(|&i| g[i]).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn hinge_rotation_invariant(seed in any::<u64>(), angle in 0.0f64..6.28) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (e, l, m) = random_batch(&mut rng, 3, 2, 3);
            let (c, s) = (angle.cos(), angle.sin());
            let rot = array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
            let er = e.dot(&rot);
            for kind in TripletKind::ALL {
                let triplets = brute_force_mine(e.view(), &l, &m, kind).unwrap();
                let a = triplet_hinge(e.view(), &triplets, 0.2).unwrap();
                let b = triplet_hinge(er.view(), &triplets, 0.2).unwrap();
                prop_assert!((a.value - b.value).abs() <= 1e-9);
                prop_assert_eq!(a.active_fraction, b.active_fraction);
            }
        }

        #[test]
        fn zero_loss_iff_margins_satisfied(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (e, l, m) = random_batch(&mut rng, 2, 2, 2);
            for kind in TripletKind::ALL {
                let triplets = brute_force_mine(e.view(), &l, &m, kind).unwrap();
                let r = triplet_hinge(e.view(), &triplets, 0.2).unwrap();
                let satisfied = triplets.iter().all(|t| {
                    let d = |i: usize, j: usize| {
                        let x = &e.row(i) - &e.row(j);
                        x.dot(&x).sqrt()
                    };
                    d(t.anchor, t.negative) >= d(t.anchor, t.positive) + 0.2
                });
                prop_assert!(r.value >= 0.0);
                prop_assert_eq!(r.value == 0.0, satisfied);
                prop_assert_eq!(r.value == 0.0, r.active_fraction == 0.0);
            }
        }
    }

    #[test]
    fn mathm_bundle_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = LossConfig::default();
        for _ in 0..10 {
            let (e, l, m) = random_batch(&mut rng, 4, 2, 8);
            let b = mathm_loss(e.view(), &l, &m, &cfg).unwrap();
            let mut expect = Array2::<f64>::zeros(e.raw_dim());
            for (r, w) in b.reports.iter().zip(b.weights) {
                expect.scaled_add(w, &r.grad);
            }
            for (x, y) in b.combined_grad.iter().zip(expect.iter()) {
                assert!((x - y).abs() <= 1e-12);
            }
            let value: f64 = b.reports.iter().zip(b.weights).map(|(r, w)| w * r.value).sum();
            approx(b.combined_value, value, 1e-12);
            let g = b.active_fractions();
            let active: Vec<usize> = (0..3).filter(|&i| g[i] > cfg.eps_g).collect();
            for &i in &active {
                approx(b.weights[i] * g[i], b.weights[active[0]] * g[active[0]], 1e-12);
            }
        }
    }

    #[test]
    fn equal_fractions_give_plain_sum() {
        // Mutually orthogonal rows: every hinge argument is exactly the margin.
        let e = Array2::eye(8);
        let l = [0, 0, 0, 0, 1, 1, 1, 1];
        let m = [Sketch, Sketch, Photo, Photo, Sketch, Sketch, Photo, Photo];
        let cfg = LossConfig::default();
        let b = mathm_loss(e.view(), &l, &m, &cfg).unwrap();
        assert_eq!(b.active_fractions(), [1.0, 1.0, 1.0]);
        assert_eq!(b.weights, [1.0, 1.0, 1.0]);
        let sum: f64 = b.reports.iter().map(|r| r.value).sum();
        approx(b.combined_value, sum, 1e-12);
    }

    #[test]
    fn inactive_loss_gets_zero_weight() {
        assert_eq!(gradient_weights(&[1.0, 1.0, 0.0], 1e-6).unwrap(), vec![1.0, 1.0, 0.0]);
        // Below eps_g counts as inactive as well.
        assert_eq!(gradient_weights(&[1.0, 1.0, 1e-7], 1e-6).unwrap(), vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn mathm_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = LossConfig::default();
        for _ in 0..20 {
            let (e, l, m) = random_batch(&mut rng, 3, 2, 4);
            let b = mathm_loss(e.view(), &l, &m, &cfg).unwrap();
            let w = b.weights;
            // Weights are constants of the step.
            let f = |p: &Array2<f64>| -> Result<f64> {
                let r = embedding_loss(p.view(), &l, &m, LossSelection::MATHM, &cfg)?;
                Ok(r.reports.iter().zip(w).map(|(r, w)| w * r.value).sum())
            };
            let chk = finite_diff_check(f, &e, &b.combined_grad, 1e-5).unwrap();
            assert!(chk.max_relative_error <= 1e-4, "{chk:?}");
        }
    }

    #[test]
    fn total_loss_linearity() {
        let g1 = array![[1.0, 2.0]];
        let g2 = array![[0.5, -1.0]];
        let t = total_loss(1.0, &g1, 0.5, &g2, 0.0).unwrap();
        assert_eq!(t.value, 1.0);
        assert_eq!(t.grad, g1);
        let t = total_loss(1.0, &g1, 0.5, &g2, 1.0).unwrap();
        approx(t.value, 1.5, 1e-12);
        let t = total_loss(1.0, &g1, 0.5, &g2, 2.5).unwrap();
        for (x, y) in t.grad.iter().zip((&g1 + &(&g2 * 2.5)).iter()) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert!(total_loss(0.0, &g1, 0.0, &Array2::zeros((2, 2)), 1.0).is_err());
    }

    #[test]
    fn adversarial_examples() {
        let half = [0.5, 0.5, 0.5];
        approx(adversarial_d_loss(&half, &half).unwrap().value, 2.0 * LN2, 1e-12);
        approx(adversarial_g_loss(&half, &half).unwrap().value, 2.0 * LN2, 1e-12);
        approx(adversarial_d_loss(&half, &half).unwrap().value, 1.38629, 1e-5);

        let hi = 1.0 - 1e-7;
        assert!(adversarial_d_loss(&[hi, hi], &[1e-7]).unwrap().value < 1e-6);
        assert!(adversarial_g_loss(&[1e-7], &[hi, hi]).unwrap().value < 1e-6);

        approx(adversarial_d_loss(&[0.8], &[0.3]).unwrap().value, -(0.8f64.ln() + 0.7f64.ln()), 1e-12);
        approx(adversarial_d_loss(&[0.8], &[0.3]).unwrap().value, 0.57982, 1e-5);
        approx(adversarial_g_loss(&[0.8], &[0.3]).unwrap().value, -(0.2f64.ln() + 0.3f64.ln()), 1e-12);
        approx(adversarial_g_loss(&[0.8], &[0.3]).unwrap().value, 2.81341, 1e-5);

        assert!(adversarial_d_loss(&[], &[0.5]).is_err());
        assert!(adversarial_g_loss(&[0.5], &[]).is_err());
    }

    #[test]
    fn adversarial_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let scores = Array2::from_shape_fn((1, 7), |_| rng.random_range(0.05..0.95));
            let (np, _) = (3, 4);
            for loss in [adversarial_d_loss, adversarial_g_loss] {
                let split = |p: &Array2<f64>| {
                    let v = p.row(0).to_vec();
                    (v[..np].to_vec(), v[np..].to_vec())
                };
                let (ph, sk) = split(&scores);
                let r = loss(&ph, &sk).unwrap();
                let mut analytic = Array2::zeros((1, 7));
                for (i, g) in r.grad_photo.iter().chain(r.grad_sketch.iter()).enumerate() {
                    analytic[[0, i]] = *g;
                }
                let chk = finite_diff_check(
                    |p| {
                        let (ph, sk) = split(p);
                        Ok(loss(&ph, &sk)?.value)
                    },
                    &scores,
                    &analytic,
                    1e-6,
                )
                .unwrap();
                assert!(chk.max_relative_error <= 1e-4, "{chk:?}");
                assert_eq!(chk.checked, 7);
            }
        }
    }
}
