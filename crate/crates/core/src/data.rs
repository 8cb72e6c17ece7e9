//! Two-modality datasets: synthetic generation, zero-shot class splits,
//! CSV persistence and the PK batch sampler.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Sketch,
    Photo,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Sketch, Modality::Photo];

    /// Position in per-modality tables (sketch 0, photo 1).
    pub fn index(self) -> usize {
        match self {
            Modality::Sketch => 0,
            Modality::Photo => 1,
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Sketch => Modality::Photo,
            Modality::Photo => Modality::Sketch,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Sketch => "sketch",
            Modality::Photo => "photo",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "sketch" => Ok(Modality::Sketch),
            "photo" => Ok(Modality::Photo),
            other => Err(format!("unknown modality {other:?} (expected sketch or photo)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: u64,
    pub class_label: usize,
    pub modality: Modality,
    pub feature: Vec<f64>,
}

/// A labelled two-modality dataset.
///
/// Labels are contiguous `0..n_classes`. `class_ids[label]` keeps the identity
/// of each class in the dataset it was split from, so that zero-shot checks can
/// compare class sets across relabelled splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SampleRecord>,
    pub n_classes: usize,
    pub d_in: usize,
    pub class_ids: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset and checks its invariants.
    pub fn new(samples: Vec<SampleRecord>, n_classes: usize, d_in: usize) -> Result<Self> {
        let ds = Dataset {
            samples,
            n_classes,
            d_in,
            class_ids: (0..n_classes).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Data("no samples".into()));
        }
        if self.class_ids.len() != self.n_classes {
            return Err(Error::Data(format!(
                "{} class ids for {} classes",
                self.class_ids.len(),
                self.n_classes
            )));
        }
        let mut seen = vec![[false; 2]; self.n_classes];
        for s in &self.samples {
            if s.class_label >= self.n_classes {
                return Err(Error::Data(format!(
                    "sample {} has label {} but the dataset has {} classes",
                    s.id, s.class_label, self.n_classes
                )));
            }
            if s.feature.len() != self.d_in {
                return Err(Error::Data(format!(
                    "sample {} has {} features, expected {}",
                    s.id,
                    s.feature.len(),
                    self.d_in
                )));
            }
            if s.feature.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("sample {} has a non-finite feature", s.id)));
            }
            seen[s.class_label][s.modality.index()] = true;
        }
        for (c, cell) in seen.iter().enumerate() {
            for m in Modality::ALL {
                if !cell[m.index()] {
                    return Err(Error::Data(format!("class {c} has no {m} samples")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample indices grouped by `[class][modality]`.
    pub fn cell_index(&self) -> Vec<[Vec<usize>; 2]> {
        let mut cells = vec![[Vec::new(), Vec::new()]; self.n_classes];
        for (i, s) in self.samples.iter().enumerate() {
            cells[s.class_label][s.modality.index()].push(i);
        }
        cells
    }

    /// Feature rows, labels and modalities of the given samples.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>, Vec<Modality>) {
        let mut feats = Array2::zeros((indices.len(), self.d_in));
        let mut labels = Vec::with_capacity(indices.len());
        let mut mods = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            let s = &self.samples[i];
            for (c, &x) in s.feature.iter().enumerate() {
                feats[[r, c]] = x;
            }
            labels.push(s.class_label);
            mods.push(s.modality);
        }
        (feats, labels, mods)
    }

    /// Every sample, in storage order.
    pub fn gather_all(&self) -> (Array2<f64>, Vec<usize>, Vec<Modality>) {
        let all: Vec<usize> = (0..self.len()).collect();
        self.gather(&all)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub samples_per_class_per_modality: usize,
    pub d_in: usize,
    /// Isotropic noise standard deviation around each class center.
    pub cluster_spread: f64,
    /// Norm of the shared photo-minus-sketch displacement.
    pub modality_offset_norm: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 16,
            samples_per_class_per_modality: 32,
            d_in: 32,
            cluster_spread: 0.15,
            modality_offset_norm: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 classes"));
        }
        if self.samples_per_class_per_modality < 1 {
            return Err(Error::invalid("need at least 1 sample per class and modality"));
        }
        if self.d_in < 1 {
            return Err(Error::invalid("input dimension must be at least 1"));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::invalid("cluster spread must be positive"));
        }
        if !(self.modality_offset_norm >= 0.0 && self.modality_offset_norm.is_finite()) {
            return Err(Error::invalid("modality offset norm must be non-negative"));
        }
        Ok(())
    }
}

fn random_unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Draws class centers on the unit sphere and samples both modalities around
/// them; photos are additionally displaced by one fixed offset shared by every
/// class.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.d_in;
    let centers: Vec<Vec<f64>> = (0..cfg.n_classes).map(|_| random_unit(&mut rng, d)).collect();
    let offset: Vec<f64> = random_unit(&mut rng, d)
        .into_iter()
        .map(|x| x * cfg.modality_offset_norm)
        .collect();

    let mut samples =
        Vec::with_capacity(cfg.n_classes * 2 * cfg.samples_per_class_per_modality);
    let mut id = 0u64;
    for (c, center) in centers.iter().enumerate() {
        for m in Modality::ALL {
            for _ in 0..cfg.samples_per_class_per_modality {
                let feature = (0..d)
                    .map(|k| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        let shift = if m == Modality::Photo { offset[k] } else { 0.0 };
                        center[k] + shift + cfg.cluster_spread * noise
                    })
                    .collect();
                samples.push(SampleRecord {
                    id,
                    class_label: c,
                    modality: m,
                    feature,
                });
                id += 1;
            }
        }
    }
    Dataset::new(samples, cfg.n_classes, d)
}

/// Partitions classes into seen (train) and unseen (test) sets.
///
/// Both halves are relabelled to contiguous labels in ascending order of their
/// original label; `class_ids` records the original identities.
pub fn zero_shot_split(ds: &Dataset, n_unseen: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_unseen < 1 || n_unseen >= ds.n_classes {
        return Err(Error::invalid(format!(
            "n_unseen must be in 1..{}, got {n_unseen}",
            ds.n_classes
        )));
    }
    let mut order: Vec<usize> = (0..ds.n_classes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let unseen: BTreeSet<usize> = order[..n_unseen].iter().copied().collect();
    let seen: BTreeSet<usize> = order[n_unseen..].iter().copied().collect();
    Ok((subset_classes(ds, &seen), subset_classes(ds, &unseen)))
}

fn subset_classes(ds: &Dataset, classes: &BTreeSet<usize>) -> Dataset {
    let mut relabel = vec![usize::MAX; ds.n_classes];
    for (new, &old) in classes.iter().enumerate() {
        relabel[old] = new;
    }
    let samples = ds
        .samples
        .iter()
        .filter(|s| classes.contains(&s.class_label))
        .map(|s| SampleRecord {
            class_label: relabel[s.class_label],
            ..s.clone()
        })
        .collect();
    Dataset {
        samples,
        n_classes: classes.len(),
        d_in: ds.d_in,
        class_ids: classes.iter().map(|&c| ds.class_ids[c]).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Classes per batch.
    pub p: usize,
    /// Samples per class per modality.
    pub k: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn batch_size(&self) -> usize {
        2 * self.p * self.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::invalid("PK sampling needs P >= 2"));
        }
        if self.k < 2 {
            return Err(Error::invalid("PK sampling needs K >= 2"));
        }
        Ok(())
    }
}

/// Draws one PK batch: `P` distinct classes, then `K` sketches followed by `K`
/// photos of each class, all without replacement.
pub fn pk_sample<R: Rng>(ds: &Dataset, cfg: &SamplerConfig, rng: &mut R) -> Result<Vec<usize>> {
    PkSampler::check(ds, cfg)?;
    Ok(draw(&ds.cell_index(), ds.n_classes, cfg, rng))
}

fn draw<R: Rng>(cells: &[[Vec<usize>; 2]], n_classes: usize, cfg: &SamplerConfig, rng: &mut R) -> Vec<usize> {
    let classes = rand::seq::index::sample(rng, n_classes, cfg.p);
    let mut batch = Vec::with_capacity(cfg.batch_size());
    for c in classes.iter() {
        for cell in &cells[c] {
            for j in rand::seq::index::sample(rng, cell.len(), cfg.k).iter() {
                batch.push(cell[j]);
            }
        }
    }
    batch
}

/// PK sampler owning its RNG; classes are drawn afresh for every batch.
#[derive(Debug, Clone)]
pub struct PkSampler {
    cfg: SamplerConfig,
    cells: Vec<[Vec<usize>; 2]>,
    rng: ChaCha8Rng,
}

impl PkSampler {
    pub fn new(ds: &Dataset, cfg: SamplerConfig) -> Result<Self> {
        Self::check(ds, &cfg)?;
        Ok(Self {
            cells: ds.cell_index(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
        })
    }

    fn check(ds: &Dataset, cfg: &SamplerConfig) -> Result<()> {
        cfg.validate()?;
        if cfg.p > ds.n_classes {
            return Err(Error::Data(format!(
                "P = {} exceeds the {} available classes",
                cfg.p, ds.n_classes
            )));
        }
        for (c, cell) in ds.cell_index().iter().enumerate() {
            for m in Modality::ALL {
                let have = cell[m.index()].len();
                if have < cfg.k {
                    return Err(Error::Data(format!(
                        "class {c} has only {have} {m} samples, K = {} required",
                        cfg.k
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        draw(&self.cells, self.cells.len(), &self.cfg, &mut self.rng)
    }
}

const HEADER_PREFIX: [&str; 3] = ["id", "class", "modality"];

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads a dataset in the `id,class,modality,f0,...` CSV format.
pub fn read_dataset_from<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(parse_err(1, "no samples"));
    }
    if headers.len() < 4 || headers.iter().take(3).ne(HEADER_PREFIX) {
        return Err(parse_err(1, "header must start with id,class,modality,f0"));
    }
    for (k, h) in headers.iter().skip(3).enumerate() {
        if h != format!("f{k}") {
            return Err(parse_err(1, format!("expected feature column f{k}, found {h:?}")));
        }
    }
    let d_in = headers.len() - 3;

    let mut samples = Vec::new();
    let mut max_label = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let id = rec[0]
            .parse::<u64>()
            .map_err(|e| parse_err(line, format!("bad id {:?}: {e}", &rec[0])))?;
        let class_label = rec[1]
            .parse::<usize>()
            .map_err(|e| parse_err(line, format!("bad class {:?}: {e}", &rec[1])))?;
        let modality = rec[2].parse::<Modality>().map_err(|e| parse_err(line, e))?;
        let feature = rec
            .iter()
            .skip(3)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(line, format!("bad feature value {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        max_label = max_label.max(class_label);
        samples.push(SampleRecord {
            id,
            class_label,
            modality,
            feature,
        });
    }
    if samples.is_empty() {
        return Err(parse_err(1, "no samples"));
    }

    let n_classes = max_label + 1;
    let mut present = vec![false; n_classes];
    for s in &samples {
        present[s.class_label] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(parse_err(
            0,
            format!("class labels are not contiguous: label {missing} is missing"),
        ));
    }
    Dataset::new(samples, n_classes, d_in).map_err(|e| parse_err(0, e.to_string()))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_dataset_from(std::io::BufReader::new(file))
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = HEADER_PREFIX.iter().map(|s| s.to_string()).collect();
    header.extend((0..ds.d_in).map(|k| format!("f{k}")));
    wtr.write_record(&header).map_err(csv_io)?;
    for s in &ds.samples {
        let mut row = vec![s.id.to_string(), s.class_label.to_string(), s.modality.to_string()];
        row.extend(s.feature.iter().map(|x| x.to_string()));
        wtr.write_record(&row).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_dataset_to(ds, std::io::BufWriter::new(file))
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
