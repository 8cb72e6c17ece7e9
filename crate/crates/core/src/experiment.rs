//! Run configuration, multi-seed drivers and output files for the train,
//! eval, diagnose, ablate and sweep-lambda commands.
//!
//! Config files are flat `key = value` lines grouped under `[section]`
//! headers. Every key has a default, so an empty file is a valid config:
//!
//! ```text
//! [data]
//! source = synthetic        # or: csv (then set `path`)
//! n_classes = 16
//! [train]
//! method = mathm
//! total_iters = 2000
//! [run]
//! n_seeds = 5
//! out = runs/default
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{generate_synthetic, read_dataset, zero_shot_split, Dataset, SyntheticConfig};
use crate::eval::{evaluate, Direction, RetrievalMetrics};
use crate::model::{train, Checkpoint, IterationLog, Method, TrainConfig};
use crate::{Error, Result};

/// Every recognised `section.key` with its default value.
const KEYS: &[(&str, &str, &str)] = &[
    ("data", "source", "synthetic"),
    ("data", "path", ""),
    ("data", "n_classes", "16"),
    ("data", "samples_per_class", "32"),
    ("data", "d_in", "32"),
    ("data", "cluster_spread", "0.15"),
    ("data", "modality_offset_norm", "0.8"),
    ("data", "seed", "0"),
    ("split", "n_unseen", "4"),
    ("split", "seed", "0"),
    ("train", "method", "mathm"),
    ("train", "base_lr", "1e-4"),
    ("train", "total_iters", "2000"),
    ("train", "p", "8"),
    ("train", "k", "4"),
    ("train", "d_emb", "16"),
    ("train", "learn_modality_offset", "false"),
    ("train", "adversarial_weight", "1.0"),
    ("loss", "margin", "0.2"),
    ("loss", "lambda", "1.0"),
    ("loss", "eps_g", "1e-6"),
    ("eval", "k", "100"),
    ("eval", "direction", "sketch-to-photo"),
    ("eval", "checkpoints", ""),
    ("diagnose", "methods", "baseline,mathm,gan"),
    ("sweep", "lambdas", "0,0.5,1,2"),
    ("run", "seed", "0"),
    ("run", "n_seeds", "5"),
    ("run", "out", "runs/default"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub n_unseen: usize,
    pub split_seed: u64,
    /// Training settings; `train.seed` is the base seed of the run.
    pub train: TrainConfig,
    pub eval_k: usize,
    pub direction: Direction,
    /// Explicit checkpoints for `eval`; empty means the run's own layout.
    pub checkpoints: Vec<PathBuf>,
    pub diagnose_methods: Vec<Method>,
    pub lambdas: Vec<f64>,
    pub n_seeds: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_entries(&BTreeMap::new()).expect("built-in defaults are valid")
    }
}

fn known(section: &str, key: &str) -> bool {
    KEYS.iter().any(|(s, k, _)| *s == section && *k == key)
}

/// Resolves a possibly unqualified override key to `section.key`.
fn resolve_key(key: &str) -> Result<String> {
    let key = key.trim().replace('-', "_");
    if let Some((s, k)) = key.split_once('.') {
        return if known(s, k) {
            Ok(key.clone())
        } else {
            Err(Error::Config(format!("unknown config key {key:?}")))
        };
    }
    let matches: Vec<String> = KEYS
        .iter()
        .filter(|(_, k, _)| *k == key)
        .map(|(s, k, _)| format!("{s}.{k}"))
        .collect();
    match matches.len() {
        1 => Ok(matches[0].clone()),
        0 => Err(Error::Config(format!("unknown config key {key:?}"))),
        _ => Err(Error::Config(format!("ambiguous key {key:?}; use one of {}", matches.join(", ")))),
    }
}

/// Parses config text into `section.key → value` entries.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {line_no}: unterminated section header")))?
                .trim();
            if !KEYS.iter().any(|(s, _, _)| *s == name) {
                return Err(Error::Config(format!("line {line_no}: unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`")))?;
        let section = section
            .as_deref()
            .ok_or_else(|| Error::Config(format!("line {line_no}: key outside any [section]")))?;
        let key = key.trim();
        if !known(section, key) {
            return Err(Error::Config(format!("line {line_no}: unknown key {key:?} in [{section}]")));
        }
        let full = format!("{section}.{key}");
        if out.insert(full.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {line_no}: duplicate key {full}")));
        }
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(entries: &BTreeMap<String, String>, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = entries.get(key).map(String::as_str).unwrap_or_else(|| {
        let (s, k) = key.split_once('.').expect("qualified key");
        KEYS.iter().find(|(ss, kk, _)| *ss == s && *kk == k).expect("known key").2
    });
    raw.parse::<T>()
        .map_err(|e| Error::Config(format!("{key} = {raw:?}: {e}")))
}

fn parse_list<T: std::str::FromStr>(entries: &BTreeMap<String, String>, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let raw: String = parse_value(entries, key)?;
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| Error::Config(format!("{key}: {s:?}: {e}"))))
        .collect()
}

impl RunConfig {
    pub fn from_entries(e: &BTreeMap<String, String>) -> Result<Self> {
        let source: String = parse_value(e, "data.source")?;
        let data = match source.as_str() {
            "synthetic" => DataSource::Synthetic(SyntheticConfig {
                n_classes: parse_value(e, "data.n_classes")?,
                samples_per_class_per_modality: parse_value(e, "data.samples_per_class")?,
                d_in: parse_value(e, "data.d_in")?,
                cluster_spread: parse_value(e, "data.cluster_spread")?,
                modality_offset_norm: parse_value(e, "data.modality_offset_norm")?,
                seed: parse_value(e, "data.seed")?,
            }),
            "csv" => {
                let path: String = parse_value(e, "data.path")?;
                if path.is_empty() {
                    return Err(Error::Config("data.source = csv requires data.path".into()));
                }
                DataSource::Csv(PathBuf::from(path))
            }
            other => return Err(Error::Config(format!("data.source must be synthetic or csv, got {other:?}"))),
        };
        let mut train = TrainConfig {
            base_lr: parse_value(e, "train.base_lr")?,
            total_iters: parse_value(e, "train.total_iters")?,
            p: parse_value(e, "train.p")?,
            k: parse_value(e, "train.k")?,
            d_emb: parse_value(e, "train.d_emb")?,
            method: parse_value(e, "train.method")?,
            seed: parse_value(e, "run.seed")?,
            learn_modality_offset: parse_value(e, "train.learn_modality_offset")?,
            adversarial_weight: parse_value(e, "train.adversarial_weight")?,
            ..TrainConfig::default()
        };
        train.loss.margin = parse_value(e, "loss.margin")?;
        train.loss.lambda = parse_value(e, "loss.lambda")?;
        train.loss.eps_g = parse_value(e, "loss.eps_g")?;
        let cfg = RunConfig {
            data,
            n_unseen: parse_value(e, "split.n_unseen")?,
            split_seed: parse_value(e, "split.seed")?,
            train,
            eval_k: parse_value(e, "eval.k")?,
            direction: parse_value(e, "eval.direction")?,
            checkpoints: parse_list::<String>(e, "eval.checkpoints")?.into_iter().map(PathBuf::from).collect(),
            diagnose_methods: parse_list(e, "diagnose.methods")?,
            lambdas: parse_list(e, "sweep.lambdas")?,
            n_seeds: parse_value(e, "run.n_seeds")?,
            out: PathBuf::from(parse_value::<String>(e, "run.out")?),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses config text and applies `key → value` overrides on top.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut entries = parse_entries(text)?;
        for (k, v) in overrides {
            entries.insert(resolve_key(k)?, v.clone());
        }
        Self::from_entries(&entries)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds < 1 {
            return Err(Error::Config("run.n_seeds must be at least 1".into()));
        }
        if self.eval_k < 1 {
            return Err(Error::Config("eval.k must be at least 1".into()));
        }
        if self.n_unseen < 1 {
            return Err(Error::Config("split.n_unseen must be at least 1".into()));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("sweep.lambdas must be finite and non-negative".into()));
        }
        match &self.data {
            DataSource::Synthetic(s) => s.validate().map_err(|e| Error::Config(e.to_string()))?,
            DataSource::Csv(p) if !p.exists() => {
                return Err(Error::Config(format!("dataset {} does not exist", p.display())))
            }
            DataSource::Csv(_) => {}
        }
        self.train.validate()
    }

    /// Training seeds `base + 0 .. base + n_seeds`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| self.train.seed + i).collect()
    }

    pub fn with_method(&self, method: Method) -> Self {
        let mut c = self.clone();
        c.train.method = method;
        c
    }

    /// Directory holding one method/seed run.
    pub fn run_dir(&self, label: &str, seed: u64) -> PathBuf {
        self.out.join(label).join(format!("seed_{seed}"))
    }
}

/// Loads or generates the dataset and splits off the unseen classes.
pub fn prepare_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let ds = match &cfg.data {
        DataSource::Synthetic(s) => generate_synthetic(s)?,
        DataSource::Csv(p) => read_dataset(p)?,
    };
    zero_shot_split(&ds, cfg.n_unseen, cfg.split_seed)
}

/// Evaluates a checkpoint on a test set after checking that none of its
/// classes were seen in training.
pub fn evaluate_checkpoint(ck: &Checkpoint, test: &Dataset, k: usize, direction: Direction) -> Result<RetrievalMetrics> {
    if let Some(c) = test.class_ids.iter().find(|c| ck.train_class_ids.contains(c)) {
        return Err(Error::Protocol(format!(
            "class {c} of the evaluation set was seen in training (zero-shot violation)"
        )));
    }
    if test.d_in != ck.model.embedder.d_in() {
        return Err(Error::Data(format!(
            "evaluation features have {} dimensions, checkpoint expects {}",
            test.d_in,
            ck.model.embedder.d_in()
        )));
    }
    let emb = ck.model.embed_dataset(test)?;
    evaluate(&emb, k, direction)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// The per-iteration log as CSV. Triplet columns appear only for methods
/// that use triplet losses; adversarial columns only for the GAN variant.
pub fn training_log_csv(log: &[IterationLog], method: Method) -> String {
    let mut out = String::from("iter,lr,l_cls");
    if method.uses_triplets() {
        out.push_str(",l_cross,l_in,l_hyb,g_cross,g_in,g_hyb,w_cross,w_in,w_hyb");
    }
    if method.adversarial {
        out.push_str(",l_adv_g,l_adv_d");
    }
    out.push_str(",l_total\n");
    for r in log {
        let _ = write!(out, "{},{},{}", r.iter, r.lr, r.l_cls);
        if method.uses_triplets() {
            for arr in [r.triplet_values, r.active_fractions, r.weights] {
                for v in arr.unwrap_or([f64::NAN; 3]) {
                    let _ = write!(out, ",{v}");
                }
            }
        }
        if method.adversarial {
            let [g, d] = r.adversarial.unwrap_or([f64::NAN; 2]);
            let _ = write!(out, ",{g},{d}");
        }
        let _ = writeln!(out, ",{}", r.l_total);
    }
    out
}

/// Outcome of one training seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub checkpoint: Checkpoint,
    pub log: Vec<IterationLog>,
}

/// Trains one seed and writes its checkpoint and log under `dir`.
pub fn train_seed(train_set: &Dataset, tc: &TrainConfig, dir: &Path) -> Result<SeedRun> {
    let out = train(train_set, tc)?;
    write_atomic(&dir.join("training_log.csv"), training_log_csv(&out.log, tc.method).as_bytes())?;
    write_atomic(&dir.join("checkpoint.json"), out.checkpoint.to_json()?.as_bytes())?;
    Ok(SeedRun {
        seed: tc.seed,
        checkpoint: out.checkpoint,
        log: out.log,
    })
}

/// `train`: every seed of the configured method.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<SeedRun>> {
    let (train_set, _) = prepare_data(cfg)?;
    let label = cfg.train.method.to_string();
    cfg.seeds()
        .into_par_iter()
        .map(|seed| {
            let tc = TrainConfig { seed, ..cfg.train.clone() };
            train_seed(&train_set, &tc, &cfg.run_dir(&label, seed))
        })
        .collect()
}

/// Mean and sample standard deviation of each metric over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub n_seeds: usize,
    pub seeds: Vec<u64>,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(seeds: &[u64], metrics: &[RetrievalMetrics]) -> MetricSummary {
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    if let Some(first) = metrics.first() {
        for (i, (key, _)) in first.values().iter().enumerate() {
            let xs: Vec<f64> = metrics.iter().map(|m| m.values()[i].1).collect();
            let (m, s) = mean_std(&xs);
            mean.insert(key.to_string(), m);
            std.insert(key.to_string(), s);
        }
    }
    MetricSummary {
        n_seeds: metrics.len(),
        seeds: seeds.to_vec(),
        mean,
        std,
    }
}

/// Results of evaluating one method over all seeds.
#[derive(Debug, Clone)]
pub struct MethodEval {
    pub label: String,
    pub per_seed: Vec<RetrievalMetrics>,
    pub summary: MetricSummary,
    /// Training steps run here (zero when checkpoints were loaded).
    pub train_steps: usize,
    /// Largest |‖f‖ - 1| over every batch embedding of those steps.
    pub max_norm_deviation: f64,
}

impl MethodEval {
    pub fn mean(&self, key: &str) -> f64 {
        self.summary.mean.get(key).copied().unwrap_or(f64::NAN)
    }

    pub fn values(&self, key: &str) -> Vec<f64> {
        self.per_seed
            .iter()
            .map(|m| m.values().iter().find(|(k, _)| *k == key).map_or(f64::NAN, |kv| kv.1))
            .collect()
    }
}

/// `eval`: explicit checkpoints if configured, otherwise the run layout of
/// the configured method. Writes per-checkpoint `metrics.json` and, for
/// several checkpoints, `summary.json` with mean and standard deviation.
pub fn cmd_eval(cfg: &RunConfig) -> Result<MethodEval> {
    let (_, test) = prepare_data(cfg)?;
    let label = cfg.train.method.to_string();
    let paths: Vec<PathBuf> = if cfg.checkpoints.is_empty() {
        cfg.seeds()
            .into_iter()
            .map(|s| cfg.run_dir(&label, s).join("checkpoint.json"))
            .collect()
    } else {
        cfg.checkpoints.clone()
    };
    let mut per_seed = Vec::new();
    let mut used_seeds = Vec::new();
    for path in &paths {
        let ck = Checkpoint::load(path).map_err(|e| match e {
            Error::Io(io) => Error::Data(format!("cannot read checkpoint {}: {io}", path.display())),
            other => other,
        })?;
        let m = evaluate_checkpoint(&ck, &test, cfg.eval_k, cfg.direction)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        write_atomic(&dir.join("metrics.json"), &to_json(&m)?)?;
        used_seeds.push(ck.config.seed);
        per_seed.push(m);
    }
    let summary = summarize(&used_seeds, &per_seed);
    if per_seed.len() > 1 {
        write_atomic(&cfg.out.join(&label).join("summary.json"), &to_json(&summary)?)?;
    }
    Ok(MethodEval {
        label,
        per_seed,
        summary,
        train_steps: 0,
        max_norm_deviation: 0.0,
    })
}

/// Trains and evaluates every seed of one configuration in memory, writing
/// each seed's log, checkpoint and metrics under `out/label/seed_N`.
pub fn run_method(cfg: &RunConfig, train_set: &Dataset, test: &Dataset, label: &str) -> Result<MethodEval> {
    let seeds = cfg.seeds();
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let tc = TrainConfig { seed, ..cfg.train.clone() };
            let dir = cfg.run_dir(label, seed);
            let run = train_seed(train_set, &tc, &dir)?;
            let m = evaluate_checkpoint(&run.checkpoint, test, cfg.eval_k, cfg.direction)?;
            write_atomic(&dir.join("metrics.json"), &to_json(&m)?)?;
            let dev = run.log.iter().map(|r| r.max_norm_deviation).fold(0.0, f64::max);
            Ok((m, run.log.len(), dev))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_seed: Vec<RetrievalMetrics> = runs.iter().map(|r| r.0.clone()).collect();
    let summary = summarize(&seeds, &per_seed);
    write_atomic(&cfg.out.join(label).join("summary.json"), &to_json(&summary)?)?;
    Ok(MethodEval {
        label: label.to_string(),
        per_seed,
        summary,
        train_steps: runs.iter().map(|r| r.1).sum(),
        max_norm_deviation: runs.iter().map(|r| r.2).fold(0.0, f64::max),
    })
}

/// A comparison table: one row per configuration, mean and std columns.
#[derive(Debug, Clone)]
pub struct Table {
    pub key_column: &'static str,
    pub rows: Vec<MethodEval>,
    pub metrics: Vec<&'static str>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},n_seeds", self.key_column);
        for m in &self.metrics {
            let _ = write!(out, ",{m}_mean,{m}_std");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{}", row.label, row.summary.n_seeds);
            for m in &self.metrics {
                let _ = write!(out, ",{},{}", row.summary.mean[*m], row.summary.std[*m]);
            }
            out.push('\n');
        }
        out
    }

    /// Per-seed values of every metric, one row per (configuration, seed).
    pub fn per_seed_csv(&self) -> String {
        let mut out = format!("{},seed", self.key_column);
        for m in &self.metrics {
            let _ = write!(out, ",{m}");
        }
        out.push('\n');
        for row in &self.rows {
            for (i, seed) in row.summary.seeds.iter().enumerate() {
                let _ = write!(out, "{},{seed}", row.label);
                for m in &self.metrics {
                    let _ = write!(out, ",{}", row.values(m)[i]);
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let rows: Vec<BTreeMap<&str, serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                let mut o = BTreeMap::new();
                o.insert(self.key_column, serde_json::json!(r.label));
                o.insert("n_seeds", serde_json::json!(r.summary.n_seeds));
                o.insert("mean", serde_json::json!(r.summary.mean));
                o.insert("std", serde_json::json!(r.summary.std));
                o
            })
            .collect();
        to_json(&rows)
    }

    pub fn row(&self, label: &str) -> Option<&MethodEval> {
        self.rows.iter().find(|r| r.label == label)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("table.csv"), self.to_csv().as_bytes())?;
        write_atomic(&dir.join("table_per_seed.csv"), self.per_seed_csv().as_bytes())?;
        write_atomic(&dir.join("table.json"), &self.to_json()?)
    }
}

const DIAGNOSE_METRICS: &[&str] = &[
    "modality_gap",
    "within_class_same_modality",
    "within_class_cross_modality",
    "between_class_same_modality",
    "between_class_cross_modality",
    "map_at_all",
    "prec_at_k",
];

const RETRIEVAL_METRICS: &[&str] = &["map_at_all", "prec_at_k", "map_at_200", "prec_at_200", "modality_gap"];

/// `diagnose`: gap and discrepancy diagnostics for several methods on one
/// split. Existing checkpoints in the run layout are reused; missing ones
/// are trained. All checkpoints must share the same training classes.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<Table> {
    let (train_set, test) = prepare_data(cfg)?;
    let mut rows = Vec::new();
    for &method in &cfg.diagnose_methods {
        let mcfg = cfg.with_method(method);
        let label = method.to_string();
        let mut per_seed = Vec::new();
        for seed in cfg.seeds() {
            let dir = mcfg.run_dir(&label, seed);
            let path = dir.join("checkpoint.json");
            let ck = if path.exists() {
                Checkpoint::load(&path)?
            } else {
                let tc = TrainConfig { seed, ..mcfg.train.clone() };
                train_seed(&train_set, &tc, &dir)?.checkpoint
            };
            if ck.train_class_ids != train_set.class_ids {
                return Err(Error::Protocol(format!(
                    "checkpoint {} was trained on a different class split",
                    path.display()
                )));
            }
            let m = evaluate_checkpoint(&ck, &test, cfg.eval_k, cfg.direction)?;
            write_atomic(&dir.join("metrics.json"), &to_json(&m)?)?;
            per_seed.push(m);
        }
        let summary = summarize(&cfg.seeds(), &per_seed);
        rows.push(MethodEval {
            label,
            per_seed,
            summary,
            train_steps: 0,
            max_norm_deviation: 0.0,
        });
    }
    let table = Table {
        key_column: "method",
        rows,
        metrics: DIAGNOSE_METRICS.to_vec(),
    };
    table.write(&cfg.out.join("diagnose"))?;
    Ok(table)
}

/// `ablate`: the eight loss combinations, weakest first.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Table> {
    let (train_set, test) = prepare_data(cfg)?;
    let dir = cfg.out.join("ablate");
    let rows = Method::ablation_rows()
        .into_iter()
        .map(|m| {
            let mut c = cfg.with_method(m);
            c.out = dir.clone();
            run_method(&c, &train_set, &test, &m.to_string())
        })
        .collect::<Result<Vec<_>>>()?;
    let table = Table {
        key_column: "method",
        rows,
        metrics: RETRIEVAL_METRICS.to_vec(),
    };
    table.write(&dir)?;
    Ok(table)
}

/// `sweep-lambda`: the configured method at each λ of `sweep.lambdas`.
pub fn cmd_sweep_lambda(cfg: &RunConfig) -> Result<Table> {
    if cfg.lambdas.is_empty() {
        return Err(Error::Config("sweep.lambdas is empty".into()));
    }
    let (train_set, test) = prepare_data(cfg)?;
    let dir = cfg.out.join("sweep_lambda");
    let rows = cfg
        .lambdas
        .iter()
        .map(|&lambda| {
            let mut c = cfg.clone();
            c.train.loss.lambda = lambda;
            c.out = dir.clone();
            run_method(&c, &train_set, &test, &format!("{lambda}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = Table {
        key_column: "lambda",
        rows,
        metrics: RETRIEVAL_METRICS.to_vec(),
    };
    table.write(&dir)?;
    Ok(table)
}
