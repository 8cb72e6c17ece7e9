//! Primitives over L2-normalized embedding rows.
//!
//! Everything here is a pure function of its inputs. Rows are stored as
//! `Array2<f64>` with one embedding per row.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::data::Modality;
use crate::{Error, Result};

/// Norm floor used when normalizing (near-)zero vectors.
pub const NORM_EPS: f64 = 1e-12;

/// Unit-norm embedding rows aligned with their class labels and modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub rows: Array2<f64>,
    pub labels: Vec<usize>,
    pub modalities: Vec<Modality>,
}

impl EmbeddingBatch {
    pub fn new(rows: Array2<f64>, labels: Vec<usize>, modalities: Vec<Modality>) -> Result<Self> {
        if rows.nrows() != labels.len() || rows.nrows() != modalities.len() {
            return Err(Error::invalid(format!(
                "embedding batch has {} rows but {} labels and {} modalities",
                rows.nrows(),
                labels.len(),
                modalities.len()
            )));
        }
        Ok(Self {
            rows,
            labels,
            modalities,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    /// Largest deviation of any row norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        self.rows
            .rows()
            .into_iter()
            .map(|r| (r.dot(&r).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Sub-batch of the rows whose modality is `modality`, in original order.
    pub fn select_modality(&self, modality: Modality) -> EmbeddingBatch {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.modalities[i] == modality)
            .collect();
        EmbeddingBatch {
            rows: self.rows.select(Axis(0), &idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            modalities: vec![modality; idx.len()],
        }
    }
}

/// Euclidean distances between the rows of two matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Array2<f64>);

impl DistanceMatrix {
    pub fn row_count(&self) -> usize {
        self.0.nrows()
    }

    pub fn col_count(&self) -> usize {
        self.0.ncols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Scales `v` to unit length, dividing by `max(‖v‖, eps)`.
pub fn l2_normalize(v: ArrayView1<'_, f64>, eps: f64) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    v.mapv(|x| x / norm.max(eps))
}

/// Row-wise [`l2_normalize`].
pub fn normalize_rows(m: ArrayView2<'_, f64>, eps: f64) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt().max(eps);
        row.mapv_inplace(|x| x / norm);
    }
    out
}

fn check_cols(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.ncols() != b.ncols() {
        return Err(Error::invalid(format!(
            "embedding dimension mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(())
}

/// Dot products between the rows of `a` and `b`; cosine similarities for unit rows.
pub fn cosine_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_cols(a, b)?;
    Ok(a.dot(&b.t()))
}

/// Euclidean distances between unit rows, computed as `sqrt(max(0, 2 - 2 cos))`.
pub fn pairwise_distance(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<DistanceMatrix> {
    let mut d = cosine_matrix(a, b)?;
    d.mapv_inplace(|c| (2.0 - 2.0 * c).max(0.0).sqrt());
    Ok(DistanceMatrix(d))
}

/// Distances among the rows of one batch: exactly symmetric with a zero diagonal.
pub fn self_distance(a: ArrayView2<'_, f64>) -> DistanceMatrix {
    let DistanceMatrix(mut d) = pairwise_distance(a, a).expect("same matrix");
    let n = d.nrows();
    for i in 0..n {
        d[[i, i]] = 0.0;
        for j in (i + 1)..n {
            d[[j, i]] = d[[i, j]];
        }
    }
    DistanceMatrix(d)
}

/// Result of a central-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Entries compared against the analytic gradient.
    pub checked: usize,
    /// Entries skipped because the loss has a kink within `step` of them.
    pub excluded: usize,
}

/// Relative-error floor for entries whose analytic gradient is (near) zero.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// Compares `analytic` with central differences of `loss` around `params`.
///
/// Each entry is differenced at `step` and `step / 2`. Away from kinks both
/// estimates agree to O(step²) and the one-sided slopes agree to O(step);
/// when either pair disagrees the entry sits within `step`
/// of a hinge boundary or an argmax switch and is excluded from the maximum.
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &Array2<f64>,
    analytic: &Array2<f64>,
    step: f64,
) -> Result<GradCheck>
where
    F: FnMut(&Array2<f64>) -> Result<f64>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    if params.shape() != analytic.shape() {
        return Err(Error::invalid(format!(
            "gradient shape {:?} does not match parameter shape {:?}",
            analytic.shape(),
            params.shape()
        )));
    }
    let center = loss(params)?;
    if !center.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {center}")));
    }
    let mut work = params.clone();
    // Returns (central, forward, backward) difference quotients.
    let mut diffs = |i: usize, j: usize, h: f64| -> Result<(f64, f64, f64)> {
        let orig = work[[i, j]];
        work[[i, j]] = orig + h;
        let plus = loss(&work)?;
        work[[i, j]] = orig - h;
        let minus = loss(&work)?;
        work[[i, j]] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "loss evaluated to a non-finite value at entry ({i}, {j})"
            )));
        }
        Ok((
            (plus - minus) / (2.0 * h),
            (plus - center) / h,
            (center - minus) / h,
        ))
    };

    let mut report = GradCheck {
        max_relative_error: 0.0,
        checked: 0,
        excluded: 0,
    };
    for ((i, j), &a) in analytic.indexed_iter() {
        let (coarse, forward, backward) = diffs(i, j, step)?;
        let (fine, _, _) = diffs(i, j, 0.5 * step)?;
        let scale = coarse.abs().max(a.abs());
        let kinked = (coarse - fine).abs() > 1e-9 + 1e-5 * scale
            || (forward - backward).abs() > 1e-6 + 1e-2 * scale;
        if kinked {
            report.excluded += 1;
            continue;
        }
        let rel = (coarse - a).abs() / a.abs().max(GRAD_CHECK_FLOOR);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
