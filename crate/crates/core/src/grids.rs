//! Token x layer grids and concern-shift minus control deltas.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{self, Trajectory};
use crate::metric::SemanticMetric;
use crate::trace_io::{MetricGrid, TraceSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMetric {
    Curvature,
    Salience,
}

impl GridMetric {
    pub fn name(self) -> &'static str {
        match self {
            GridMetric::Curvature => "curvature",
            GridMetric::Salience => "salience",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParamMode {
    /// `s_t = t`
    #[default]
    LayerIndex,
    /// cumulative metric arc length
    ArcLength,
}

fn token_trajectory(trace: &TraceSet, token: usize) -> Result<Trajectory> {
    Trajectory::with_layer_index(trace.token_points(token))
}

fn check_metric(trace: &TraceSet, metric: &SemanticMetric) -> Result<()> {
    if trace.hidden_size != metric.hidden_size() {
        return Err(Error::DimensionMismatch {
            what: "trace hidden size vs metric dimension",
            left: trace.hidden_size,
            right: metric.hidden_size(),
        });
    }
    Ok(())
}

/// One row per token, `L+1` columns.
///
/// Curvature fills interior columns `1 … L−1`; salience fills columns
/// `0 … L−1` (column `t` is the step `t → t+1`). Everything else is masked.
pub fn build_grid(
    trace: &TraceSet,
    metric_kind: GridMetric,
    metric: &SemanticMetric,
    param_mode: ParamMode,
    eps_v: f64,
) -> Result<MetricGrid> {
    trace.validate()?;
    check_metric(trace, metric)?;
    let layers = trace.num_layers;
    let rows: Vec<Vec<Option<f64>>> = (0..trace.num_tokens())
        .into_par_iter()
        .map(|t| {
            let traj = token_trajectory(trace, t)?;
            let mut row = vec![None; layers];
            match metric_kind {
                GridMetric::Curvature => {
                    let traj = match param_mode {
                        ParamMode::LayerIndex => traj,
                        ParamMode::ArcLength => {
                            let s = geometry::arc_length_params(&traj, metric)?;
                            traj.with_params(s)?
                        }
                    };
                    let series = geometry::curvature_series(&traj, metric, eps_v)?;
                    for (layer, k) in series.valid() {
                        row[layer] = Some(k);
                    }
                }
                GridMetric::Salience => {
                    for (layer, s) in geometry::salience_series(&traj, metric)?
                        .into_iter()
                        .enumerate()
                    {
                        row[layer] = Some(s);
                    }
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(grid_from_rows(
        metric_kind.name(),
        trace.tokens.clone(),
        layers,
        rows,
    ))
}

/// Angle between consecutive steps at interior columns `1 … L−1`.
pub fn layer_delta_grid(trace: &TraceSet) -> Result<MetricGrid> {
    trace.validate()?;
    let rows = (0..trace.num_tokens())
        .map(|t| {
            let angles = geometry::layer_delta_angles(&token_trajectory(trace, t)?)?;
            let mut row = vec![None; trace.num_layers];
            row[1..=angles.len()].copy_from_slice(&angles);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(grid_from_rows(
        "layer_delta",
        trace.tokens.clone(),
        trace.num_layers,
        rows,
    ))
}

/// Per-layer cosine between aligned cs and control tokens; rows follow the
/// cs trace, unmatched rows are masked.
pub fn cosine_grid(
    cs: &TraceSet,
    ctrl: &TraceSet,
    alignment: &Alignment,
    metric: &SemanticMetric,
) -> Result<MetricGrid> {
    paired_grid(
        "cosine",
        cs,
        ctrl,
        alignment,
        metric,
        geometry::cosine_series,
    )
}

/// Per-layer displacement norm between aligned cs and control tokens.
pub fn deviation_grid(
    cs: &TraceSet,
    ctrl: &TraceSet,
    alignment: &Alignment,
    metric: &SemanticMetric,
) -> Result<MetricGrid> {
    paired_grid(
        "euclidean_deviation",
        cs,
        ctrl,
        alignment,
        metric,
        |a, b, m| {
            Ok(geometry::euclidean_deviation_series(a, b, m)?
                .into_iter()
                .map(Some)
                .collect())
        },
    )
}

fn paired_grid(
    name: &str,
    cs: &TraceSet,
    ctrl: &TraceSet,
    alignment: &Alignment,
    metric: &SemanticMetric,
    series: impl Fn(&[Vec<f64>], &[Vec<f64>], &SemanticMetric) -> Result<Vec<Option<f64>>>,
) -> Result<MetricGrid> {
    check_layers(cs.num_layers, ctrl.num_layers)?;
    check_metric(cs, metric)?;
    check_metric(ctrl, metric)?;
    alignment.check_bounds(cs.num_tokens(), ctrl.num_tokens())?;
    let mut grid = MetricGrid::empty(name, cs.tokens.clone(), cs.num_layers);
    for &(i, j) in &alignment.pairs {
        for (l, v) in series(&cs.token_points(i), &ctrl.token_points(j), metric)?
            .into_iter()
            .enumerate()
        {
            if let Some(v) = v {
                grid.set(i, l, v);
            }
        }
    }
    Ok(grid)
}

fn grid_from_rows(
    name: &str,
    labels: Vec<String>,
    layers: usize,
    rows: Vec<Vec<Option<f64>>>,
) -> MetricGrid {
    let mut grid = MetricGrid::empty(name, labels, layers);
    for (t, row) in rows.into_iter().enumerate() {
        for (l, v) in row.into_iter().enumerate() {
            if let Some(v) = v {
                grid.set(t, l, v);
            }
        }
    }
    grid
}

/// Order-preserving partial matching between cs and control token positions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    /// `(cs index, ctrl index)`, strictly increasing in both coordinates.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_cs: Vec<usize>,
    pub unmatched_ctrl: Vec<usize>,
}

impl Alignment {
    fn check_bounds(&self, n_cs: usize, n_ctrl: usize) -> Result<()> {
        let monotone = self
            .pairs
            .windows(2)
            .all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1);
        let in_range = self.pairs.iter().all(|&(i, j)| i < n_cs && j < n_ctrl);
        if !monotone || !in_range {
            return Err(Error::Validation(
                "alignment is not an order-preserving matching of the grids".into(),
            ));
        }
        Ok(())
    }

    pub fn unmatched_count(&self) -> usize {
        self.unmatched_cs.len() + self.unmatched_ctrl.len()
    }
}

/// Anchors the longest common prefix and suffix, then pairs leftover interior
/// positions from the left up to the shorter interior; the rest is unmatched.
pub fn align_tokens(cs_tokens: &[String], ctrl_tokens: &[String]) -> Alignment {
    let (n, m) = (cs_tokens.len(), ctrl_tokens.len());
    let prefix = cs_tokens
        .iter()
        .zip(ctrl_tokens)
        .take_while(|(a, b)| a == b)
        .count();
    let suffix = cs_tokens[prefix..]
        .iter()
        .rev()
        .zip(ctrl_tokens[prefix..].iter().rev())
        .take_while(|(a, b)| a == b)
        .count();
    let (cs_mid, ctrl_mid) = (n - prefix - suffix, m - prefix - suffix);
    let shared_mid = cs_mid.min(ctrl_mid);

    let mut pairs: Vec<(usize, usize)> = (0..prefix + shared_mid).map(|k| (k, k)).collect();
    pairs.extend((0..suffix).map(|k| (n - suffix + k, m - suffix + k)));
    Alignment {
        pairs,
        unmatched_cs: (prefix + shared_mid..n - suffix).collect(),
        unmatched_ctrl: (prefix + shared_mid..m - suffix).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub cs_grid: MetricGrid,
    pub ctrl_grid: MetricGrid,
    pub alignment: Alignment,
}

impl AlignedPair {
    /// Aligns two grids by their token labels.
    pub fn new(cs_grid: MetricGrid, ctrl_grid: MetricGrid) -> Result<Self> {
        let alignment = align_tokens(&cs_grid.token_labels, &ctrl_grid.token_labels);
        Self::with_alignment(cs_grid, ctrl_grid, alignment)
    }

    pub fn with_alignment(
        cs_grid: MetricGrid,
        ctrl_grid: MetricGrid,
        alignment: Alignment,
    ) -> Result<Self> {
        check_layers(cs_grid.num_layers, ctrl_grid.num_layers)?;
        alignment.check_bounds(cs_grid.num_tokens(), ctrl_grid.num_tokens())?;
        Ok(AlignedPair {
            cs_grid,
            ctrl_grid,
            alignment,
        })
    }
}

fn check_layers(cs: usize, ctrl: usize) -> Result<()> {
    if cs != ctrl {
        return Err(Error::DimensionMismatch {
            what: "layer counts of cs vs control",
            left: cs,
            right: ctrl,
        });
    }
    Ok(())
}

/// `cs − ctrl` on cells valid in both, laid out on the cs token axis.
pub fn delta_grid(pair: &AlignedPair) -> Result<MetricGrid> {
    let AlignedPair {
        cs_grid,
        ctrl_grid,
        alignment,
    } = pair;
    check_layers(cs_grid.num_layers, ctrl_grid.num_layers)?;
    alignment.check_bounds(cs_grid.num_tokens(), ctrl_grid.num_tokens())?;
    let mut delta = MetricGrid::empty(
        format!("delta_{}", cs_grid.metric_name),
        cs_grid.token_labels.clone(),
        cs_grid.num_layers,
    );
    for &(i, j) in &alignment.pairs {
        for l in 0..cs_grid.num_layers {
            if let (Some(a), Some(b)) = (cs_grid.get(i, l), ctrl_grid.get(j, l)) {
                delta.set(i, l, a - b);
            }
        }
    }
    Ok(delta)
}
