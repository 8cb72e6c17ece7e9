//! Modality-aware batch-hard triplet mining.
//!
//! For every anchor in the batch the hardest positive (farthest same-class
//! sample) and hardest negative (closest other-class sample) are picked, each
//! restricted to the modality the triplet kind requires. Both modalities act as
//! anchors, which gives the two symmetric terms of each loss.

use std::fmt;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::embedding::DistanceMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TripletKind {
    /// Positive and negative both come from the other modality.
    Cross,
    /// Anchor, positive and negative share one modality.
    Within,
    /// Positive from the other modality, negative from the anchor's.
    Hybrid,
}

impl TripletKind {
    pub const ALL: [TripletKind; 3] = [TripletKind::Cross, TripletKind::Within, TripletKind::Hybrid];

    /// Required (positive, negative) modalities for an anchor of modality `anchor`.
    pub fn roles(self, anchor: Modality) -> (Modality, Modality) {
        match self {
            TripletKind::Cross => (anchor.other(), anchor.other()),
            TripletKind::Within => (anchor, anchor),
            TripletKind::Hybrid => (anchor.other(), anchor),
        }
    }

    /// Whether a modality pattern belongs to this kind.
    pub fn matches(self, anchor: Modality, positive: Modality, negative: Modality) -> bool {
        self.roles(anchor) == (positive, negative)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TripletKind::Cross => "cross",
            TripletKind::Within => "within",
            TripletKind::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for TripletKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub kind: TripletKind,
}

impl Triplet {
    /// Checks the label and modality patterns against a batch.
    pub fn is_valid(&self, labels: &[usize], modalities: &[Modality]) -> bool {
        let (a, p, n) = (self.anchor, self.positive, self.negative);
        a != p
            && labels[a] == labels[p]
            && labels[a] != labels[n]
            && self.kind.matches(modalities[a], modalities[p], modalities[n])
    }
}

fn check_batch(rows: usize, cols: usize, labels: &[usize], modalities: &[Modality]) -> Result<()> {
    if rows != cols {
        return Err(Error::invalid(format!("distance matrix must be square, got {rows}x{cols}")));
    }
    if labels.len() != rows || modalities.len() != rows {
        return Err(Error::invalid(format!(
            "batch of {rows} rows has {} labels and {} modalities",
            labels.len(),
            modalities.len()
        )));
    }
    Ok(())
}

/// Mines one triplet of `kind` per anchor from a precomputed distance matrix.
///
/// Ties go to the lowest batch index.
pub fn batch_hard_mine(
    dist: &DistanceMatrix,
    labels: &[usize],
    modalities: &[Modality],
    kind: TripletKind,
) -> Result<Vec<Triplet>> {
    let n = dist.row_count();
    check_batch(n, dist.col_count(), labels, modalities)?;
    (0..n)
        .map(|a| mine_anchor(dist, labels, modalities, kind, a))
        .collect()
}

/// Hardest positive and negative of `kind` for a single anchor.
pub fn mine_anchor(
    dist: &DistanceMatrix,
    labels: &[usize],
    modalities: &[Modality],
    kind: TripletKind,
    anchor: usize,
) -> Result<Triplet> {
    let n = dist.row_count();
    check_batch(n, dist.col_count(), labels, modalities)?;
    if anchor >= n {
        return Err(Error::invalid(format!("anchor {anchor} outside batch of {n}")));
    }
    let a = anchor;
    let (pos_mod, neg_mod) = kind.roles(modalities[a]);
    let mut pos: Option<(usize, f64)> = None;
    let mut neg: Option<(usize, f64)> = None;
    for j in 0..n {
        let dj = dist.get(a, j);
        if labels[j] == labels[a] {
            if j != a && modalities[j] == pos_mod && pos.is_none_or(|(_, best)| dj > best) {
                pos = Some((j, dj));
            }
        } else if modalities[j] == neg_mod && neg.is_none_or(|(_, best)| dj < best) {
            neg = Some((j, dj));
        }
    }
    let (positive, _) = pos.ok_or(Error::Mining {
        anchor: a,
        role: "positive",
        kind,
    })?;
    let (negative, _) = neg.ok_or(Error::Mining {
        anchor: a,
        role: "negative",
        kind,
    })?;
    Ok(Triplet {
        anchor: a,
        positive,
        negative,
        kind,
    })
}

/// Exhaustive reference miner over all (anchor, positive, negative) triples.
///
/// Distances are recomputed directly from the embeddings. Among the valid
/// triples of an anchor it keeps the one with the largest anchor-positive
/// distance, then the smallest anchor-negative distance, then the lowest
/// positive and negative indices.
pub fn brute_force_mine(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    modalities: &[Modality],
    kind: TripletKind,
) -> Result<Vec<Triplet>> {
    let n = embeddings.nrows();
    check_batch(n, n, labels, modalities)?;
    let dist = |i: usize, j: usize| -> f64 {
        if i == j {
            return 0.0;
        }
        let diff = &embeddings.row(i) - &embeddings.row(j);
        diff.dot(&diff).sqrt()
    };

    let mut out = Vec::with_capacity(n);
    for a in 0..n {
        let mut best: Option<(Triplet, f64, f64)> = None;
        let mut any_pos = false;
        let mut any_neg = false;
        for p in 0..n {
            for q in 0..n {
                let t = Triplet {
                    anchor: a,
                    positive: p,
                    negative: q,
                    kind,
                };
                let (pos_mod, neg_mod) = kind.roles(modalities[a]);
                let pos_ok = p != a && labels[p] == labels[a] && modalities[p] == pos_mod;
                let neg_ok = labels[q] != labels[a] && modalities[q] == neg_mod;
                any_pos |= pos_ok;
                any_neg |= neg_ok;
                if !(pos_ok && neg_ok) {
                    continue;
                }
                let (dap, dan) = (dist(a, p), dist(a, q));
                // Strict comparisons keep the first (lowest-index) winner.
                let better = match &best {
                    None => true,
                    Some((_, bap, ban)) => dap > *bap || (dap == *bap && dan < *ban),
                };
                if better {
                    best = Some((t, dap, dan));
                }
            }
        }
        match best {
            Some((t, _, _)) => out.push(t),
            None => {
                return Err(Error::Mining {
                    anchor: a,
                    role: if any_pos && !any_neg { "negative" } else { "positive" },
                    kind,
                })
            }
        }
    }
    Ok(out)
}
