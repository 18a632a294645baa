//! Pullback metric `G = UᵀU` on residual space.
//!
//! Inner products under `G` measure residual differences by the logit
//! differences they induce: `⟨x, y⟩_G = (Ux)·(Uy)`. The dense `d x d` form is
//! built once per model (cost `V·d²`) and can be cached in a `ci-gmat/1`
//! container.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trace_io::{self, ContainerKind, MetricTensorFile, UnembeddingMatrix};

/// Rows of `U` widened to f64 per pass of the Gram accumulation.
const ROW_CHUNK: usize = 512;
/// Output columns of `G` owned by one worker.
const COL_BLOCK: usize = 64;
/// Pivots below `RANK_TOL * max(diag G)` count as null directions.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricMode {
    Identity,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMetric {
    hidden_size: usize,
    /// Row-major symmetric `d x d`; `None` in identity mode.
    g: Option<Vec<f64>>,
}

impl SemanticMetric {
    pub fn identity(hidden_size: usize) -> Self {
        SemanticMetric {
            hidden_size,
            g: None,
        }
    }

    /// Wraps an explicit `d x d` matrix, symmetrizing it.
    pub fn from_dense(hidden_size: usize, values: Vec<f64>) -> Result<Self> {
        if hidden_size == 0 {
            return Err(Error::InvalidArgument("metric dimension is zero".into()));
        }
        if values.len() != hidden_size * hidden_size {
            return Err(Error::ShapeMismatch(format!(
                "metric has {} entries, expected {hidden_size}x{hidden_size}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("metric has non-finite entries".into()));
        }
        let mut g = values;
        symmetrize(&mut g, hidden_size);
        if let Some(i) = (0..hidden_size).find(|&i| g[i * hidden_size + i] < 0.0) {
            return Err(Error::Validation(format!(
                "metric diagonal entry {i} is negative ({})",
                g[i * hidden_size + i]
            )));
        }
        Ok(SemanticMetric {
            hidden_size,
            g: Some(g),
        })
    }

    /// Dense `G = UᵀU` with f64 accumulation.
    ///
    /// Emits a warning when `G` is numerically rank deficient; zero norms
    /// for nonzero vectors are then possible but not an error.
    pub fn build_pullback_metric(u: &UnembeddingMatrix) -> Result<Self> {
        let d = u.hidden_size;
        if d == 0 {
            return Err(Error::InvalidArgument(
                "unembedding hidden size is zero".into(),
            ));
        }
        u.validate()?;
        if u.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "unembedding has non-finite entries".into(),
            ));
        }
        let g = gram(&u.values, u.vocab_size, d);
        let metric = Self::from_dense(d, g)?;
        let rank = metric.numerical_rank();
        if rank < d {
            log::warn!("pullback metric is rank deficient: numerical rank {rank} < d={d}");
        }
        Ok(metric)
    }

    pub fn mode(&self) -> MetricMode {
        if self.g.is_some() {
            MetricMode::Dense
        } else {
            MetricMode::Identity
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn dense(&self) -> Option<&[f64]> {
        self.g.as_deref()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.hidden_size {
            return Err(Error::DimensionMismatch {
                what: "vector length vs metric dimension",
                left: len,
                right: self.hidden_size,
            });
        }
        Ok(())
    }

    /// `Gx` (or `x` in identity mode).
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match &self.g {
            None => x.to_vec(),
            Some(g) => g
                .chunks_exact(self.hidden_size)
                .map(|row| dot(row, x))
                .collect(),
        }
    }

    /// `xᵀGy`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        self.check_dim(y.len())?;
        Ok(self.inner_unchecked(x, y))
    }

    pub(crate) fn inner_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.g {
            None => dot(x, y),
            // upper triangle with paired cross terms: bitwise symmetric in (x, y)
            Some(g) => {
                let d = self.hidden_size;
                (0..d)
                    .map(|i| {
                        let row = &g[i * d..(i + 1) * d];
                        let cross: f64 = (i + 1..d)
                            .map(|j| row[j] * (x[i] * y[j] + x[j] * y[i]))
                            .sum();
                        row[i] * (x[i] * y[i]) + cross
                    })
                    .sum()
            }
        }
    }

    /// `sqrt(max(xᵀGx, 0))`.
    pub fn norm(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.norm_unchecked(x))
    }

    pub(crate) fn norm_unchecked(&self, x: &[f64]) -> f64 {
        self.inner_unchecked(x, x).max(0.0).sqrt()
    }

    /// Numerical rank from a diagonally pivoted Cholesky factorization that
    /// stops once the largest remaining pivot falls below a relative floor.
    pub fn numerical_rank(&self) -> usize {
        let d = self.hidden_size;
        let Some(g) = &self.g else { return d };
        let mut a = g.clone();
        let max_diag = (0..d).map(|i| a[i * d + i]).fold(0.0f64, f64::max);
        if max_diag <= 0.0 {
            return 0;
        }
        let floor = RANK_TOL * max_diag;
        let mut perm: Vec<usize> = (0..d).collect();
        for k in 0..d {
            // pick the largest remaining diagonal
            let (p, pivot) = (k..d).map(|j| (j, a[perm[j] * d + perm[j]])).fold(
                (k, f64::NEG_INFINITY),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
            if pivot <= floor {
                return k;
            }
            perm.swap(k, p);
            let pk = perm[k];
            let l_kk = pivot.sqrt();
            let col: Vec<f64> = perm[k + 1..]
                .iter()
                .map(|&pj| a[pj * d + pk] / l_kk)
                .collect();
            for (j, &pj) in perm[k + 1..].iter().enumerate() {
                for (i, &pi) in perm[k + 1..].iter().enumerate() {
                    a[pi * d + pj] -= col[i] * col[j];
                }
            }
        }
        d
    }

    pub fn to_tensor_file(&self, model_id: &str) -> MetricTensorFile {
        let d = self.hidden_size;
        let values = match &self.g {
            Some(g) => g.clone(),
            None => {
                let mut eye = vec![0.0; d * d];
                (0..d).for_each(|i| eye[i * d + i] = 1.0);
                eye
            }
        };
        MetricTensorFile {
            model_id: model_id.to_string(),
            hidden_size: d,
            values,
        }
    }

    pub fn from_tensor_file(file: MetricTensorFile) -> Result<Self> {
        Self::from_dense(file.hidden_size, file.values)
    }
}

/// Loads a metric from a `ci-umat/1` (built on the fly) or a cached
/// `ci-gmat/1` container.
pub fn load_metric(dir: &Path) -> Result<SemanticMetric> {
    match trace_io::container_kind(dir)? {
        ContainerKind::Unembedding => {
            SemanticMetric::build_pullback_metric(&trace_io::read_unembedding(dir)?)
        }
        ContainerKind::MetricTensor => {
            SemanticMetric::from_tensor_file(trace_io::read_metric_tensor(dir)?)
        }
        ContainerKind::Trace => Err(Error::Validation(format!(
            "{} holds a trace, not an unembedding or metric",
            dir.display()
        ))),
    }
}

/// Largest relative disagreement between `xᵀGy` and the factored product
/// `(Ux)·(Uy)` over the sample pairs.
pub fn verify_metric_equivalence(
    u: &UnembeddingMatrix,
    metric: &SemanticMetric,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    if u.hidden_size != metric.hidden_size() {
        return Err(Error::DimensionMismatch {
            what: "unembedding d vs metric d",
            left: u.hidden_size,
            right: metric.hidden_size(),
        });
    }
    let project = |x: &[f64]| -> Vec<f64> {
        (0..u.vocab_size)
            .map(|r| {
                u.row(r)
                    .iter()
                    .zip(x)
                    .map(|(&a, &b)| f64::from(a) * b)
                    .sum()
            })
            .collect()
    };
    let mut worst = 0.0f64;
    for (x, y) in samples {
        let via_g = metric.inner(x, y)?;
        let direct = dot(&project(x), &project(y));
        let err = (via_g - direct).abs();
        let rel = if err == 0.0 {
            0.0
        } else {
            err / direct.abs().max(f64::MIN_POSITIVE)
        };
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn symmetrize(g: &mut [f64], d: usize) {
    for i in 0..d {
        for j in i + 1..d {
            let m = 0.5 * (g[i * d + j] + g[j * d + i]);
            g[i * d + j] = m;
            g[j * d + i] = m;
        }
    }
}

/// `UᵀU` for row-major `U` (`rows x d`), accumulated in f64.
///
/// Workers own disjoint column blocks of the result, so the summation order
/// (and therefore the output) does not depend on thread scheduling.
fn gram(u: &[f32], rows: usize, d: usize) -> Vec<f64> {
    let blocks: Vec<(usize, usize)> = (0..d)
        .step_by(COL_BLOCK)
        .map(|c0| (c0, (c0 + COL_BLOCK).min(d)))
        .collect();
    let columns: Vec<Array2<f64>> = blocks
        .par_iter()
        .map(|&(c0, c1)| {
            let mut acc = Array2::<f64>::zeros((d, c1 - c0));
            for r0 in (0..rows).step_by(ROW_CHUNK) {
                let r1 = (r0 + ROW_CHUNK).min(rows);
                let chunk: Vec<f64> = u[r0 * d..r1 * d].iter().map(|&v| f64::from(v)).collect();
                let chunk = ArrayView2::from_shape((r1 - r0, d), &chunk).expect("chunk shape");
                ndarray::linalg::general_mat_mul(
                    1.0,
                    &chunk.t(),
                    &chunk.slice(s![.., c0..c1]),
                    1.0,
                    &mut acc,
                );
            }
            acc
        })
        .collect();
    let mut g = vec![0.0; d * d];
    for (&(c0, c1), block) in blocks.iter().zip(&columns) {
        for i in 0..d {
            for j in c0..c1 {
                g[i * d + j] = block[[i, j - c0]];
            }
        }
    }
    g
}
