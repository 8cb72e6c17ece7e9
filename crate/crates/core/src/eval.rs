//! Retrieval metrics (mAP@all, mAP@n, Prec@K) and modality-gap diagnostics.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::embedding::{cosine_matrix, pairwise_distance, EmbeddingBatch};
use crate::{Error, Result};

/// Environment variable capping evaluation threads (`0` or unset = auto).
pub const THREADS_ENV: &str = "MODALMETRIC_THREADS";

/// One query's gallery ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query: usize,
    /// Gallery indices, nearest first.
    pub order: Vec<usize>,
    pub distances: Vec<f64>,
    pub relevant: Vec<bool>,
}

impl RankedList {
    pub fn relevant_count(&self) -> usize {
        self.relevant.iter().filter(|&&r| r).count()
    }
}

fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0)
}

/// Ranks the gallery for every query by ascending Euclidean distance, ties
/// to the lower gallery index. Relevance means equal labels.
pub fn retrieve(
    queries: &EmbeddingBatch,
    gallery: &EmbeddingBatch,
) -> Result<Vec<RankedList>> {
    if gallery.is_empty() {
        return Err(Error::invalid("gallery is empty"));
    }
    let dist = pairwise_distance(queries.rows.view(), gallery.rows.view())?;
    let dist = dist.view();
    let rank = |q: usize| {
        let row = dist.row(q);
        let mut order: Vec<usize> = (0..gallery.len()).collect();
        // Stable sort keeps index order among equal distances.
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
        RankedList {
            query: q,
            distances: order.iter().map(|&g| row[g]).collect(),
            relevant: order.iter().map(|&g| gallery.labels[g] == queries.labels[q]).collect(),
            order,
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::InvalidState(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..queries.len()).into_par_iter().map(rank).collect()))
}

/// Non-interpolated AP of one relevance vector, truncated to its top `n`
/// positions and divided by `min(total relevant, n)`.
fn average_precision(relevant: &[bool], n: usize) -> Option<f64> {
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevant.iter().take(n).enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total.min(n) as f64)
}

pub fn map_at_all(ranked: &[RankedList]) -> Result<f64> {
    map_at_n(ranked, usize::MAX)
}

pub fn map_at_n(ranked: &[RankedList], n: usize) -> Result<f64> {
    if ranked.is_empty() {
        return Err(Error::Metric("no queries".into()));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut sum = 0.0;
    for list in ranked {
        sum += average_precision(&list.relevant, n)
            .ok_or_else(|| Error::Metric(format!("query {} has no relevant gallery items", list.query)))?;
    }
    Ok(sum / ranked.len() as f64)
}

pub fn prec_at_k(ranked: &[RankedList], k: usize) -> Result<f64> {
    if ranked.is_empty() {
        return Err(Error::Metric("no queries".into()));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let sum: f64 = ranked
        .iter()
        .map(|l| {
            let depth = k.min(l.relevant.len());
            if depth == 0 {
                return 0.0;
            }
            l.relevant[..depth].iter().filter(|&&r| r).count() as f64 / depth as f64
        })
        .sum();
    Ok(sum / ranked.len() as f64)
}

/// Running mean of cosines for one pair category.
#[derive(Debug, Default, Clone, Copy)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

fn check_batch(emb: &EmbeddingBatch) -> Result<Array2<f64>> {
    if emb.is_empty() {
        return Err(Error::Metric("no embeddings".into()));
    }
    cosine_matrix(emb.rows.view(), emb.rows.view())
}

/// Per-class mean same-modality and cross-modality cosine over distinct
/// unordered same-class pairs.
pub fn within_class_similarities(emb: &EmbeddingBatch) -> Result<Vec<(usize, f64, f64)>> {
    let cos = check_batch(emb)?;
    let n_classes = emb.labels.iter().max().map_or(0, |m| m + 1);
    let mut same = vec![Mean::default(); n_classes];
    let mut cross = vec![Mean::default(); n_classes];
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            let c = emb.labels[i];
            if emb.labels[j] != c {
                continue;
            }
            if emb.modalities[i] == emb.modalities[j] {
                same[c].add(cos[[i, j]]);
            } else {
                cross[c].add(cos[[i, j]]);
            }
        }
    }
    let mut out = Vec::new();
    for c in 0..n_classes {
        if !emb.labels.contains(&c) {
            continue;
        }
        for m in Modality::ALL {
            let count = emb.labels.iter().zip(&emb.modalities).filter(|(l, mm)| **l == c && **mm == m).count();
            if count < 2 {
                return Err(Error::Metric(format!("class {c} has {count} {m} samples, need at least 2")));
            }
        }
        out.push((c, same[c].get().unwrap_or(0.0), cross[c].get().unwrap_or(0.0)));
    }
    Ok(out)
}

/// Mean over classes of (same-modality cosine − cross-modality cosine).
pub fn modality_gap(emb: &EmbeddingBatch) -> Result<f64> {
    let per_class = within_class_similarities(emb)?;
    Ok(per_class.iter().map(|(_, s, c)| s - c).sum::<f64>() / per_class.len() as f64)
}

/// Same-class minus different-class mean cosine, separately over
/// same-modality and cross-modality pairs: `(same_modality, cross_modality)`.
pub fn between_class_discrepancy(emb: &EmbeddingBatch) -> Result<(f64, f64)> {
    let cos = check_batch(emb)?;
    // [modality condition][same class?]
    let mut acc = [[Mean::default(); 2]; 2];
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            let cond = usize::from(emb.modalities[i] != emb.modalities[j]);
            let same_class = usize::from(emb.labels[i] == emb.labels[j]);
            acc[cond][same_class].add(cos[[i, j]]);
        }
    }
    let diff = |cond: usize, name: &str| -> Result<f64> {
        match (acc[cond][1].get(), acc[cond][0].get()) {
            (Some(same), Some(other)) => Ok(same - other),
            _ => Err(Error::Metric(format!("no same-class or different-class {name} pairs"))),
        }
    };
    Ok((diff(0, "same-modality")?, diff(1, "cross-modality")?))
}

/// Which modality supplies the queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    #[default]
    SketchToPhoto,
    PhotoToSketch,
}

impl Direction {
    pub fn query_modality(self) -> Modality {
        match self {
            Direction::SketchToPhoto => Modality::Sketch,
            Direction::PhotoToSketch => Modality::Photo,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::SketchToPhoto => "sketch-to-photo",
            Direction::PhotoToSketch => "photo-to-sketch",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sketch-to-photo" => Ok(Direction::SketchToPhoto),
            "photo-to-sketch" => Ok(Direction::PhotoToSketch),
            other => Err(Error::Config(format!("unknown direction {other:?}"))),
        }
    }
}

/// Every retrieval score and diagnostic for one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub map_at_all: f64,
    pub k: usize,
    pub prec_at_k: f64,
    pub map_at_200: f64,
    pub prec_at_200: f64,
    pub modality_gap: f64,
    pub between_class_same_modality: f64,
    pub between_class_cross_modality: f64,
    pub within_class_same_modality: f64,
    pub within_class_cross_modality: f64,
}

impl RetrievalMetrics {
    /// Numeric fields in serialization order, excluding `k`.
    pub fn values(&self) -> [(&'static str, f64); 9] {
        [
            ("map_at_all", self.map_at_all),
            ("prec_at_k", self.prec_at_k),
            ("map_at_200", self.map_at_200),
            ("prec_at_200", self.prec_at_200),
            ("modality_gap", self.modality_gap),
            ("between_class_same_modality", self.between_class_same_modality),
            ("between_class_cross_modality", self.between_class_cross_modality),
            ("within_class_same_modality", self.within_class_same_modality),
            ("within_class_cross_modality", self.within_class_cross_modality),
        ]
    }
}

/// Retrieval over the given direction plus diagnostics over all rows.
pub fn evaluate(emb: &EmbeddingBatch, k: usize, direction: Direction) -> Result<RetrievalMetrics> {
    let q = direction.query_modality();
    let queries = emb.select_modality(q);
    let gallery = emb.select_modality(q.other());
    let ranked = retrieve(&queries, &gallery)?;
    let per_class = within_class_similarities(emb)?;
    let n = per_class.len() as f64;
    let (between_same, between_cross) = between_class_discrepancy(emb)?;
    let within_same = per_class.iter().map(|p| p.1).sum::<f64>() / n;
    let within_cross = per_class.iter().map(|p| p.2).sum::<f64>() / n;
    Ok(RetrievalMetrics {
        map_at_all: map_at_all(&ranked)?,
        k,
        prec_at_k: prec_at_k(&ranked, k)?,
        map_at_200: map_at_n(&ranked, 200)?,
        prec_at_200: prec_at_k(&ranked, 200)?,
        modality_gap: within_same - within_cross,
        between_class_same_modality: between_same,
        between_class_cross_modality: between_cross,
        within_class_same_modality: within_same,
        within_class_cross_modality: within_cross,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn list(rel: &[u8]) -> RankedList {
        RankedList {
            query: 0,
            order: (0..rel.len()).collect(),
            distances: vec![0.0; rel.len()],
            relevant: rel.iter().map(|&r| r == 1).collect(),
        }
    }

    fn batch(rows: Array2<f64>, labels: Vec<usize>, mods: Vec<Modality>) -> EmbeddingBatch {
        EmbeddingBatch::new(rows, labels, mods).unwrap()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(map_at_all(&[list(&[1, 1, 0, 0])]).unwrap(), 1.0);
        assert!((map_at_all(&[list(&[1, 0, 1, 0])]).unwrap() - 0.833333333333).abs() < 1e-9);
        assert!((map_at_all(&[list(&[0, 0, 1, 1])]).unwrap() - 0.416666666667).abs() < 1e-9);
        assert!(matches!(map_at_all(&[list(&[0, 0])]), Err(Error::Metric(m)) if m.contains("query 0")));
    }

    #[test]
    fn truncated_ap_divides_by_min() {
        // top 2 of [0,1,1]: hit at rank 2 → (1/2) / min(2, 2)
        assert!((map_at_n(&[list(&[0, 1, 1])], 2).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(map_at_n(&[list(&[1, 1, 1])], 2).unwrap(), 1.0);
    }

    #[test]
    fn precision_examples() {
        assert_eq!(prec_at_k(&[list(&[1, 0, 1, 0])], 2).unwrap(), 0.5);
        assert_eq!(prec_at_k(&[list(&[1, 1, 1])], 7).unwrap(), 1.0);
        assert_eq!(prec_at_k(&[list(&[1, 0, 1, 0])], 10).unwrap(), 0.5);
        assert!(prec_at_k(&[], 1).is_err());
    }

    #[test]
    fn retrieve_orders_by_distance_then_index() {
        let q = batch(array![[1.0, 0.0]], vec![0], vec![Modality::Sketch]);
        let g = batch(
            array![[-1.0, 0.0], [0.0, 1.0], [1.0, 0.0]],
            vec![0, 1, 0],
            vec![Modality::Photo; 3],
        );
        let r = retrieve(&q, &g).unwrap();
        assert_eq!(r[0].order, vec![2, 1, 0]);
        assert_eq!(r[0].relevant, vec![true, false, true]);

        let same = batch(array![[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]], vec![0, 1, 2], vec![Modality::Photo; 3]);
        assert_eq!(retrieve(&q, &same).unwrap()[0].order, vec![0, 1, 2]);

        let empty = batch(Array2::zeros((0, 2)), vec![], vec![]);
        assert!(retrieve(&q, &empty).is_err());
    }

    #[test]
    fn gap_examples() {
        let s = Modality::Sketch;
        let p = Modality::Photo;
        let e = batch(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], vec![0; 4], vec![s, s, p, p]);
        assert!((modality_gap(&e).unwrap() - 1.0).abs() < 1e-12);

        let e = batch(array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]], vec![0; 4], vec![s, s, p, p]);
        // same-modality pairs: 0 and 0; cross pairs: 1, 0, 0, 1
        assert!((modality_gap(&e).unwrap() + 0.5).abs() < 1e-12);

        let e = batch(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![0; 3], vec![s, s, p]);
        assert!(matches!(modality_gap(&e), Err(Error::Metric(m)) if m.contains("class 0")));
    }

    #[test]
    fn discrepancy_examples() {
        let s = Modality::Sketch;
        let p = Modality::Photo;
        let rows = Array2::from_shape_fn((8, 2), |(i, j)| f64::from(u8::from((i / 4) == j)));
        let e = batch(rows, vec![0, 0, 0, 0, 1, 1, 1, 1], vec![s, s, p, p, s, s, p, p]);
        let (a, b) = between_class_discrepancy(&e).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);

        let e = batch(Array2::from_elem((4, 2), 0.5f64.sqrt()), vec![0, 0, 1, 1], vec![s, s, s, s]);
        assert!(between_class_discrepancy(&e).is_err());
        let e = batch(Array2::from_elem((8, 2), 0.5f64.sqrt()), vec![0, 0, 0, 0, 1, 1, 1, 1], vec![s, s, p, p, s, s, p, p]);
        let (a, b) = between_class_discrepancy(&e).unwrap();
        assert!(a.abs() < 1e-12 && b.abs() < 1e-12);

        let e = batch(array![[1.0, 0.0], [1.0, 0.0]], vec![0, 0], vec![s, p]);
        assert!(between_class_discrepancy(&e).is_err());
    }

    /// AP straight from the definition: average of precision at each relevant rank.
    fn oracle_ap(rel: &[bool]) -> f64 {
        let ranks: Vec<usize> = (0..rel.len()).filter(|&i| rel[i]).collect();
        ranks
            .iter()
            .map(|&r| rel[..=r].iter().filter(|&&x| x).count() as f64 / (r + 1) as f64)
            .sum::<f64>()
            / ranks.len() as f64
    }

    proptest! {
        #[test]
        fn ap_matches_definition(rel in proptest::collection::vec(any::<bool>(), 1..20)) {
            prop_assume!(rel.iter().any(|&r| r));
            let l = RankedList { query: 0, order: (0..rel.len()).collect(), distances: vec![0.0; rel.len()], relevant: rel.clone() };
            prop_assert_eq!(map_at_all(&[l]).unwrap(), oracle_ap(&rel));
        }

        #[test]
        fn rotation_leaves_ranking_metrics_unchanged(seed in 0u64..50, angle in 0.0f64..6.28) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 12;
            let mut rows: Array2<f64> = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
            for mut r in rows.rows_mut() {
                let norm = f64::sqrt(r.dot(&r)).max(1e-6);
                r /= norm;
            }
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let mods: Vec<Modality> = (0..n).map(|i| if i < n / 2 { Modality::Sketch } else { Modality::Photo }).collect();
            let rot = array![[angle.cos(), -angle.sin()], [angle.sin(), angle.cos()]];
            let a = batch(rows.clone(), labels.clone(), mods.clone());
            let b = batch(rows.dot(&rot.t()), labels, mods);
            let ra = retrieve(&a.select_modality(Modality::Sketch), &a.select_modality(Modality::Photo)).unwrap();
            let rb = retrieve(&b.select_modality(Modality::Sketch), &b.select_modality(Modality::Photo)).unwrap();
            prop_assert!((map_at_all(&ra).unwrap() - map_at_all(&rb).unwrap()).abs() < 1e-9);
            prop_assert!((prec_at_k(&ra, 3).unwrap() - prec_at_k(&rb, 3).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_json_has_flat_keys() {
        let s = Modality::Sketch;
        let p = Modality::Photo;
        let rows: Array2<f64> = array![[1.0, 0.0], [1.0, 0.0], [0.9, 0.1], [0.9, 0.1], [0.0, 1.0], [0.0, 1.0], [0.1, 0.9], [0.1, 0.9]];
        let mut rows = rows;
        for mut r in rows.rows_mut() {
            let n = f64::sqrt(r.dot(&r));
            r /= n;
        }
        let e = batch(rows, vec![0, 0, 0, 0, 1, 1, 1, 1], vec![s, s, p, p, s, s, p, p]);
        let m = evaluate(&e, 100, Direction::SketchToPhoto).unwrap();
        assert_eq!(m.map_at_all, 1.0);
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        for (key, _) in m.values() {
            assert!(v[key].is_number(), "{key}");
        }
        assert!(m.modality_gap > 0.0);
    }
}
