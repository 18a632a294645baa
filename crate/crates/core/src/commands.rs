//! End-to-end commands behind the `curved` binary.
//!
//! Each command reads containers, computes grids and reports, and writes
//! every output under one output directory. Commands are deterministic: the
//! same inputs and options give byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DEFAULT_EPS_V;
use crate::grids::{self, AlignedPair, Alignment, GridMetric, ParamMode};
use crate::heatmap::{self, ColorMode, HeatmapSpec};
use crate::metric::{self, SemanticMetric};
use crate::stats::{self, CurvatureSummary, PairRecord, Polarity, ScalingReport};
use crate::trace_io::{self, ContainerKind, MetricGrid, TraceSet, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSelection {
    Curvature,
    Salience,
    #[default]
    Both,
}

impl MetricSelection {
    pub fn metrics(self) -> Vec<GridMetric> {
        match self {
            MetricSelection::Curvature => vec![GridMetric::Curvature],
            MetricSelection::Salience => vec![GridMetric::Salience],
            MetricSelection::Both => vec![GridMetric::Curvature, GridMetric::Salience],
        }
    }
}

/// Geometry used for curvature and salience.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpace {
    /// Pullback metric of the unembedding.
    #[default]
    Semantic,
    /// Plain coordinates; no unembedding needed.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub metrics: MetricSelection,
    pub param_mode: ParamMode,
    pub space: MetricSpace,
    pub eps_v: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            metrics: MetricSelection::Both,
            param_mode: ParamMode::LayerIndex,
            space: MetricSpace::Semantic,
            eps_v: DEFAULT_EPS_V,
        }
    }
}

fn param_label(mode: ParamMode) -> &'static str {
    match mode {
        ParamMode::LayerIndex => "layer",
        ParamMode::ArcLength => "arclen",
    }
}

/// Metric for traces of hidden size `d`.
pub fn resolve_metric(
    umat_dir: Option<&Path>,
    space: MetricSpace,
    d: usize,
) -> Result<SemanticMetric> {
    let metric = match (space, umat_dir) {
        (MetricSpace::Euclidean, _) => SemanticMetric::identity(d),
        (MetricSpace::Semantic, Some(dir)) => metric::load_metric(dir)?,
        (MetricSpace::Semantic, None) => {
            return Err(Error::InvalidArgument(
                "semantic metric space needs an unembedding (or cached metric) directory".into(),
            ))
        }
    };
    if metric.hidden_size() != d {
        return Err(Error::DimensionMismatch {
            what: "trace hidden size vs unembedding hidden size",
            left: d,
            right: metric.hidden_size(),
        });
    }
    Ok(metric)
}

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_grid(grid: &MetricGrid, out: &Path, stem: &str) -> Result<()> {
    grid.write_csv(&out.join(format!("{stem}.csv")))?;
    grid.write_json(&out.join(format!("{stem}.json")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    trace_io::write_json_file(path, value)
}

fn write_csv_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeSummary {
    pub model_id: String,
    pub prompt_set_id: String,
    pub variant: Variant,
    pub num_tokens: usize,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub metric_space: MetricSpace,
    pub param_mode: &'static str,
    pub curvature: Option<CurvatureSummary>,
    /// Mean over tokens of total arc length.
    pub mean_total_salience: Option<f64>,
}

/// Curvature / salience grids plus a curvature summary for one trace.
pub fn cmd_analyze(
    trace_dir: &Path,
    umat_dir: Option<&Path>,
    opts: &AnalysisOptions,
    out: &Path,
) -> Result<AnalyzeSummary> {
    let trace = trace_io::read_trace(trace_dir)?;
    let metric = resolve_metric(umat_dir, opts.space, trace.hidden_size)?;
    ensure_out(out)?;
    let mut summary = AnalyzeSummary {
        model_id: trace.model_id.clone(),
        prompt_set_id: trace.prompt_set_id.clone(),
        variant: trace.variant,
        num_tokens: trace.num_tokens(),
        num_layers: trace.num_layers,
        hidden_size: trace.hidden_size,
        metric_space: opts.space,
        param_mode: param_label(opts.param_mode),
        curvature: None,
        mean_total_salience: None,
    };
    for kind in opts.metrics.metrics() {
        let grid = grids::build_grid(&trace, kind, &metric, opts.param_mode, opts.eps_v)?;
        write_grid(&grid, out, kind.name())?;
        let spec = HeatmapSpec::new(
            format!("{} {} {}", trace.prompt_set_id, trace.variant, kind.name()),
            ColorMode::Sequential,
        );
        heatmap::render_heatmap(&grid, &spec, &out.join(format!("{}.svg", kind.name())))?;
        match kind {
            GridMetric::Curvature => {
                summary.curvature = Some(stats::summarize_curvature(std::slice::from_ref(&grid))?);
            }
            GridMetric::Salience => {
                summary.mean_total_salience =
                    Some(grid.valid_values().sum::<f64>() / grid.num_tokens() as f64);
            }
        }
    }
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentSummary {
    pub matched: usize,
    pub unmatched_cs: Vec<usize>,
    pub unmatched_ctrl: Vec<usize>,
    pub unmatched_count: usize,
}

impl From<&Alignment> for AlignmentSummary {
    fn from(a: &Alignment) -> Self {
        AlignmentSummary {
            matched: a.pairs.len(),
            unmatched_cs: a.unmatched_cs.clone(),
            unmatched_ctrl: a.unmatched_ctrl.clone(),
            unmatched_count: a.unmatched_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaSummary {
    pub model_id: String,
    pub prompt_set_id: String,
    pub cs_variant: Variant,
    pub ctrl_variant: Variant,
    pub metric_space: MetricSpace,
    pub param_mode: &'static str,
    pub alignment: AlignmentSummary,
    /// Mean |cs − ctrl| per metric; `null` when no cell is valid in both.
    pub mean_abs_delta: BTreeMap<String, Option<f64>>,
}

/// Aligned delta grids and triptych heatmaps for one cs / control pair.
pub fn cmd_delta(
    cs_dir: &Path,
    ctrl_dir: &Path,
    umat_dir: Option<&Path>,
    opts: &AnalysisOptions,
    out: &Path,
) -> Result<DeltaSummary> {
    let cs = trace_io::read_trace(cs_dir)?;
    let ctrl = trace_io::read_trace(ctrl_dir)?;
    check_pair(&cs, &ctrl)?;
    let metric = resolve_metric(umat_dir, opts.space, cs.hidden_size)?;
    ensure_out(out)?;
    let alignment = grids::align_tokens(&cs.tokens, &ctrl.tokens);
    let mut mean_abs = BTreeMap::new();
    for kind in opts.metrics.metrics() {
        let cs_grid = grids::build_grid(&cs, kind, &metric, opts.param_mode, opts.eps_v)?;
        let ctrl_grid = grids::build_grid(&ctrl, kind, &metric, opts.param_mode, opts.eps_v)?;
        let pair = AlignedPair::with_alignment(cs_grid, ctrl_grid, alignment.clone())?;
        let delta = grids::delta_grid(&pair)?;
        write_grid(&delta, out, &format!("{}_delta", kind.name()))?;
        let spec = HeatmapSpec::new(
            format!(
                "{} {} vs {} {}",
                cs.prompt_set_id,
                cs.variant,
                ctrl.variant,
                kind.name()
            ),
            ColorMode::Sequential,
        );
        heatmap::render_triptych(
            &pair.ctrl_grid,
            &pair.cs_grid,
            &delta,
            &spec,
            &out.join(format!("{}_triptych.svg", kind.name())),
        )?;
        mean_abs.insert(kind.name().to_string(), stats::mean_abs_delta(&delta).ok());
    }
    let summary = DeltaSummary {
        model_id: cs.model_id.clone(),
        prompt_set_id: cs.prompt_set_id.clone(),
        cs_variant: cs.variant,
        ctrl_variant: ctrl.variant,
        metric_space: opts.space,
        param_mode: param_label(opts.param_mode),
        alignment: AlignmentSummary::from(&alignment),
        mean_abs_delta: mean_abs,
    };
    write_json(&out.join("delta_summary.json"), &summary)?;
    Ok(summary)
}

fn check_pair(cs: &TraceSet, ctrl: &TraceSet) -> Result<()> {
    if cs.num_layers != ctrl.num_layers {
        return Err(Error::DimensionMismatch {
            what: "layer rows of cs vs control trace",
            left: cs.num_layers,
            right: ctrl.num_layers,
        });
    }
    if cs.hidden_size != ctrl.hidden_size {
        return Err(Error::DimensionMismatch {
            what: "hidden size of cs vs control trace",
            left: cs.hidden_size,
            right: ctrl.hidden_size,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Emotional,
    Moral,
    Perspective,
    Logical,
    Identity,
    Environmental,
    Nonsense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSetEntry {
    pub prompt_set_id: String,
    pub domain: Domain,
    /// Variant label to trace directory, relative to the manifest file.
    pub variants: BTreeMap<Variant, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    #[serde(default)]
    pub model_id: Option<String>,
    pub prompt_sets: Vec<PromptSetEntry>,
}

impl SuiteManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: SuiteManifest =
            serde_json::from_str(&text).map_err(|source| Error::Manifest {
                path: path.to_path_buf(),
                source,
            })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt_sets.is_empty() {
            return Err(Error::Validation(
                "suite manifest lists no prompt sets".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for set in &self.prompt_sets {
            if !set.variants.contains_key(&Variant::NeutralCtrl) {
                return Err(Error::Validation(format!(
                    "prompt set {:?} has no neutral_ctrl trace",
                    set.prompt_set_id
                )));
            }
            if !seen.insert(&set.prompt_set_id) {
                return Err(Error::Validation(format!(
                    "duplicate prompt set id {:?}",
                    set.prompt_set_id
                )));
            }
        }
        Ok(())
    }
}

/// One row of the per-variant curvature table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantCurvatureRow {
    pub model_id: String,
    pub variant: Variant,
    pub mean_kappa: Option<f64>,
    pub max_kappa: Option<f64>,
    pub layer_of_max: Option<f64>,
    pub prompt_sets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub model_id: String,
    pub cosine_vs_euclidean: Option<f64>,
    pub curvature_vs_direction: Option<f64>,
    pub salience_vs_curvature: Option<f64>,
    pub prompt_count: usize,
    /// Why the correlations are absent, if they are.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecordRow {
    pub prompt_set_id: String,
    pub variant: Variant,
    #[serde(flatten)]
    pub record: PairRecord,
}

/// Moderate and strong mean |delta| of one prompt set, for sorted per-prompt plots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptDelta {
    pub prompt_set_id: String,
    pub domain: Domain,
    pub metric: String,
    pub polarity: Polarity,
    pub mean_delta_mod: f64,
    pub mean_delta_str: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub model_id: String,
    pub metric_space: MetricSpace,
    pub param_mode: &'static str,
    pub curvature_by_variant: Vec<VariantCurvatureRow>,
    pub correlations: CorrelationRow,
    pub scaling: Vec<ScalingReport>,
    pub prompt_deltas: Vec<PromptDelta>,
    pub pair_records: Vec<PairRecordRow>,
    pub unmatched_tokens: BTreeMap<String, usize>,
}

/// Everything the suite needs from one prompt set.
struct SetResult {
    curvature: BTreeMap<Variant, MetricGrid>,
    /// `(variant, metric name) -> mean |delta|` against the control.
    deltas: BTreeMap<(Variant, &'static str), Option<f64>>,
    records: Vec<(Variant, PairRecord)>,
    unmatched: usize,
}

fn grid_mean(grid: &MetricGrid) -> Result<f64> {
    let n = grid.valid_count();
    if n == 0 {
        return Err(Error::Degenerate(format!(
            "grid {:?} has no valid cells",
            grid.metric_name
        )));
    }
    Ok(grid.valid_values().sum::<f64>() / n as f64)
}

fn process_set(
    base: &Path,
    entry: &PromptSetEntry,
    metric: &SemanticMetric,
    euclid: &SemanticMetric,
    opts: &AnalysisOptions,
) -> Result<SetResult> {
    let mut traces = BTreeMap::new();
    for (variant, rel) in &entry.variants {
        let trace = trace_io::read_trace(&base.join(rel))?;
        if trace.variant != *variant {
            return Err(Error::Validation(format!(
                "{} is labelled {} in the manifest but {} in its container",
                rel.display(),
                variant,
                trace.variant
            )));
        }
        if trace.hidden_size != metric.hidden_size() {
            return Err(Error::DimensionMismatch {
                what: "trace hidden size vs unembedding hidden size",
                left: trace.hidden_size,
                right: metric.hidden_size(),
            });
        }
        traces.insert(*variant, trace);
    }
    let ctrl = &traces[&Variant::NeutralCtrl];
    let build =
        |t: &TraceSet, kind| grids::build_grid(t, kind, metric, opts.param_mode, opts.eps_v);
    let ctrl_curv = build(ctrl, GridMetric::Curvature)?;
    let ctrl_sal = build(ctrl, GridMetric::Salience)?;

    let mut result = SetResult {
        curvature: BTreeMap::new(),
        deltas: BTreeMap::new(),
        records: Vec::new(),
        unmatched: 0,
    };
    for (variant, trace) in &traces {
        check_pair(trace, ctrl)?;
        let curv = build(trace, GridMetric::Curvature)?;
        let sal = build(trace, GridMetric::Salience)?;
        let alignment = grids::align_tokens(&trace.tokens, &ctrl.tokens);
        result.unmatched += alignment.unmatched_count();

        let record = PairRecord {
            cosine_mean: grid_mean(&grids::cosine_grid(trace, ctrl, &alignment, euclid)?)?,
            euclid_mean: grid_mean(&grids::deviation_grid(trace, ctrl, &alignment, euclid)?)?,
            kappa_mean: grid_mean(&curv)?,
            layer_delta_mean: grid_mean(&grids::layer_delta_grid(trace)?)?,
            salience_mean: grid_mean(&sal)?,
        };
        result.records.push((*variant, record));

        if !variant.is_control() {
            for (name, cs_grid, ctrl_grid) in [
                ("curvature", &curv, &ctrl_curv),
                ("salience", &sal, &ctrl_sal),
            ] {
                let pair = AlignedPair::with_alignment(
                    cs_grid.clone(),
                    ctrl_grid.clone(),
                    alignment.clone(),
                )?;
                let delta = grids::delta_grid(&pair)?;
                result
                    .deltas
                    .insert((*variant, name), stats::mean_abs_delta(&delta).ok());
            }
        }
        result.curvature.insert(*variant, curv);
    }
    Ok(result)
}

/// Suite-level tables: per-variant curvature, inter-metric correlation,
/// moderate vs strong scaling tests and per-prompt deltas.
pub fn cmd_suite(
    manifest_path: &Path,
    umat_dir: Option<&Path>,
    opts: &AnalysisOptions,
    out: &Path,
) -> Result<SuiteReport> {
    let manifest = SuiteManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    // hidden size from the first control, to size an identity metric if needed
    let first = &manifest.prompt_sets[0].variants[&Variant::NeutralCtrl];
    let probe = trace_io::read_trace(&base.join(first))?;
    let model_id = manifest
        .model_id
        .clone()
        .unwrap_or_else(|| probe.model_id.clone());
    let metric = resolve_metric(umat_dir, opts.space, probe.hidden_size)?;
    let euclid = SemanticMetric::identity(probe.hidden_size);

    let results: Vec<SetResult> = manifest
        .prompt_sets
        .par_iter()
        .map(|entry| process_set(base, entry, &metric, &euclid, opts))
        .collect::<Result<_>>()?;
    ensure_out(out)?;

    let curvature_by_variant: Vec<VariantCurvatureRow> = Variant::ALL
        .iter()
        .map(|v| {
            let grids: Vec<MetricGrid> = results
                .iter()
                .filter_map(|r| r.curvature.get(v).cloned())
                .collect();
            let summary = stats::summarize_curvature(&grids).ok();
            VariantCurvatureRow {
                model_id: model_id.clone(),
                variant: *v,
                mean_kappa: summary.map(|s| s.mean_kappa),
                max_kappa: summary.map(|s| s.max_kappa),
                layer_of_max: summary.map(|s| s.layer_of_max),
                prompt_sets: grids.len(),
            }
        })
        .collect();

    let pair_records: Vec<PairRecordRow> = manifest
        .prompt_sets
        .iter()
        .zip(&results)
        .flat_map(|(entry, r)| {
            r.records.iter().map(|(variant, record)| PairRecordRow {
                prompt_set_id: entry.prompt_set_id.clone(),
                variant: *variant,
                record: *record,
            })
        })
        .collect();
    let records: Vec<PairRecord> = pair_records.iter().map(|r| r.record).collect();
    let correlations = match stats::correlation_report(&records) {
        Ok(t) => CorrelationRow {
            model_id: model_id.clone(),
            cosine_vs_euclidean: Some(t.cosine_vs_euclidean),
            curvature_vs_direction: Some(t.curvature_vs_direction),
            salience_vs_curvature: Some(t.salience_vs_curvature),
            prompt_count: t.prompt_count,
            note: None,
        },
        Err(e @ (Error::Degenerate(_) | Error::InvalidArgument(_))) => CorrelationRow {
            model_id: model_id.clone(),
            cosine_vs_euclidean: None,
            curvature_vs_direction: None,
            salience_vs_curvature: None,
            prompt_count: records.len(),
            note: Some(e.to_string()),
        },
        Err(e) => return Err(e),
    };

    let mut scaling = Vec::new();
    let mut prompt_deltas = Vec::new();
    for name in ["curvature", "salience"] {
        for (polarity, moderate, strong) in [
            (Polarity::Positive, Variant::PosModCs, Variant::PosStrCs),
            (Polarity::Negative, Variant::NegModCs, Variant::NegStrCs),
        ] {
            let mut rows: Vec<PromptDelta> = manifest
                .prompt_sets
                .iter()
                .zip(&results)
                .filter_map(|(entry, r)| {
                    let m = r.deltas.get(&(moderate, name)).copied().flatten()?;
                    let s = r.deltas.get(&(strong, name)).copied().flatten()?;
                    Some(PromptDelta {
                        prompt_set_id: entry.prompt_set_id.clone(),
                        domain: entry.domain,
                        metric: name.to_string(),
                        polarity,
                        mean_delta_mod: m,
                        mean_delta_str: s,
                        total: m + s,
                    })
                })
                .collect();
            if rows.is_empty() {
                continue;
            }
            let mods: Vec<f64> = rows.iter().map(|r| r.mean_delta_mod).collect();
            let strs: Vec<f64> = rows.iter().map(|r| r.mean_delta_str).collect();
            scaling.push(stats::scaling_report(
                &model_id, name, polarity, &mods, &strs,
            )?);
            rows.sort_by(|a, b| {
                b.total
                    .total_cmp(&a.total)
                    .then_with(|| a.prompt_set_id.cmp(&b.prompt_set_id))
            });
            prompt_deltas.extend(rows);
        }
    }

    let unmatched_tokens = manifest
        .prompt_sets
        .iter()
        .zip(&results)
        .map(|(e, r)| (e.prompt_set_id.clone(), r.unmatched))
        .collect();

    let report = SuiteReport {
        model_id,
        metric_space: opts.space,
        param_mode: param_label(opts.param_mode),
        curvature_by_variant,
        correlations,
        scaling,
        prompt_deltas,
        pair_records,
        unmatched_tokens,
    };
    write_suite_outputs(&report, out)?;
    Ok(report)
}

fn write_suite_outputs(report: &SuiteReport, out: &Path) -> Result<()> {
    write_json(&out.join("suite_report.json"), report)?;

    write_json(
        &out.join("curvature_by_variant.json"),
        &report.curvature_by_variant,
    )?;
    let rows: Vec<Vec<String>> = report
        .curvature_by_variant
        .iter()
        .map(|r| {
            vec![
                r.model_id.clone(),
                r.variant.to_string(),
                opt(r.mean_kappa),
                opt(r.max_kappa),
                opt(r.layer_of_max),
                r.prompt_sets.to_string(),
            ]
        })
        .collect();
    write_csv_rows(
        &out.join("curvature_by_variant.csv"),
        &[
            "model",
            "variant",
            "mean_kappa",
            "max_kappa",
            "layer_of_max",
            "prompt_sets",
        ],
        &rows,
    )?;

    write_json(&out.join("correlations.json"), &report.correlations)?;
    let c = &report.correlations;
    write_csv_rows(
        &out.join("correlations.csv"),
        &[
            "model",
            "cosine_vs_euclidean_r",
            "curvature_vs_direction_r",
            "salience_vs_curvature_r",
            "prompt_count",
        ],
        &[vec![
            c.model_id.clone(),
            opt(c.cosine_vs_euclidean),
            opt(c.curvature_vs_direction),
            opt(c.salience_vs_curvature),
            c.prompt_count.to_string(),
        ]],
    )?;

    write_json(&out.join("scaling.json"), &report.scaling)?;
    let rows: Vec<Vec<String>> = report
        .scaling
        .iter()
        .map(|s| {
            vec![
                s.model_id.clone(),
                s.metric_name.clone(),
                polarity_label(s.polarity).to_string(),
                s.mean_delta_mod.to_string(),
                s.mean_delta_str.to_string(),
                opt(s.ratio_str_over_mod),
                opt(s.t),
                opt(s.p_one_sided),
                s.n.to_string(),
                status_label(s.status).to_string(),
            ]
        })
        .collect();
    write_csv_rows(
        &out.join("scaling.csv"),
        &[
            "model",
            "metric",
            "polarity",
            "mean_delta_mod",
            "mean_delta_str",
            "ratio_str_over_mod",
            "t",
            "p_str_gt_mod",
            "n",
            "status",
        ],
        &rows,
    )?;

    write_json(&out.join("prompt_deltas.json"), &report.prompt_deltas)?;
    let rows: Vec<Vec<String>> = report
        .prompt_deltas
        .iter()
        .map(|d| {
            vec![
                d.prompt_set_id.clone(),
                serde_json::to_value(d.domain)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                d.metric.clone(),
                polarity_label(d.polarity).to_string(),
                d.mean_delta_mod.to_string(),
                d.mean_delta_str.to_string(),
                d.total.to_string(),
            ]
        })
        .collect();
    write_csv_rows(
        &out.join("prompt_deltas.csv"),
        &[
            "prompt_set_id",
            "domain",
            "metric",
            "polarity",
            "mean_delta_mod",
            "mean_delta_str",
            "total",
        ],
        &rows,
    )
}

fn polarity_label(p: Polarity) -> &'static str {
    match p {
        Polarity::Positive => "positive",
        Polarity::Negative => "negative",
    }
}

fn status_label(s: stats::TestStatus) -> &'static str {
    match s {
        stats::TestStatus::Ok => "ok",
        stats::TestStatus::ZeroVariance => "zero_variance",
        stats::TestStatus::InsufficientData => "insufficient_data",
    }
}

/// Builds `G = UᵀU` once and caches it as a `ci-gmat/1` container.
pub fn cmd_build_metric(umat_dir: &Path, out: &Path) -> Result<()> {
    let u = trace_io::read_unembedding(umat_dir)?;
    let metric = SemanticMetric::build_pullback_metric(&u)?;
    trace_io::write_metric_tensor(&metric.to_tensor_file(&u.model_id), out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub path: PathBuf,
    pub kind: Option<&'static str>,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &'static str, result: std::result::Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check {
            name,
            passed: true,
            detail,
        },
        Err(detail) => Check {
            name,
            passed: false,
            detail,
        },
    }
}

/// Runs every container invariant and reports each as a named check.
///
/// Errors only when the manifest cannot be read at all; invariant failures
/// are reported as failed checks.
pub fn cmd_validate(dir: &Path) -> Result<ValidationReport> {
    let manifest_path = dir.join(trace_io::MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut checks = Vec::new();
    let raw: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => {
            checks.push(check("manifest_json", Ok("parsed".into())));
            v
        }
        Err(e) => {
            checks.push(check("manifest_json", Err(e.to_string())));
            return Ok(ValidationReport {
                path: dir.to_path_buf(),
                kind: None,
                checks,
            });
        }
    };
    let kind = trace_io::container_kind(dir);
    checks.push(check(
        "format",
        kind.as_ref()
            .map(|_| raw["format"].as_str().unwrap_or_default().to_string())
            .map_err(|e| e.to_string()),
    ));
    let kind = match kind {
        Ok(k) => k,
        Err(_) => {
            return Ok(ValidationReport {
                path: dir.to_path_buf(),
                kind: None,
                checks,
            })
        }
    };
    let label = match kind {
        ContainerKind::Trace => "ci-trace/1",
        ContainerKind::Unembedding => "ci-umat/1",
        ContainerKind::MetricTensor => "ci-gmat/1",
    };
    match kind {
        ContainerKind::Trace => validate_trace(dir, &raw, &mut checks),
        ContainerKind::Unembedding => validate_umat(dir, &raw, &mut checks),
        ContainerKind::MetricTensor => validate_gmat(dir, &mut checks),
    }
    Ok(ValidationReport {
        path: dir.to_path_buf(),
        kind: Some(label),
        checks,
    })
}

fn validate_trace(dir: &Path, raw: &serde_json::Value, checks: &mut Vec<Check>) {
    let dtype = raw["dtype"].as_str().unwrap_or_default();
    checks.push(check(
        "dtype",
        if dtype == trace_io::DTYPE_F32 {
            Ok(dtype.into())
        } else {
            Err(format!("{dtype:?} is not f32le"))
        },
    ));
    let variant = raw["variant"].as_str().unwrap_or_default();
    checks.push(check(
        "variant_label",
        variant
            .parse::<Variant>()
            .map(|v| v.to_string())
            .map_err(|e| e.to_string()),
    ));
    let shape: Option<Vec<usize>> = raw["shape"]
        .as_array()
        .and_then(|a| a.iter().map(|v| v.as_u64().map(|x| x as usize)).collect());
    let shape = match shape {
        Some(s) if s.len() == 3 => s,
        _ => {
            checks.push(check("shape", Err("shape must be [T, L+1, d]".into())));
            return;
        }
    };
    let (t, l1, d) = (shape[0], shape[1], shape[2]);
    checks.push(check(
        "shape",
        if t >= 1 && l1 >= trace_io::MIN_LAYER_ROWS && d >= 1 {
            Ok(format!("[{t}, {l1}, {d}]"))
        } else {
            Err(format!("[{t}, {l1}, {d}] needs T >= 1, L+1 >= 3, d >= 1"))
        },
    ));
    let tokens = raw["tokens"].as_array().map(|a| a.len());
    checks.push(check(
        "token_count",
        match tokens {
            Some(n) if n == t => Ok(format!("{n} tokens")),
            Some(n) => Err(format!("{n} tokens listed, shape says {t}")),
            None => Err("tokens missing".into()),
        },
    ));
    let tensor = raw["tensor"].as_str().unwrap_or(trace_io::TRACE_TENSOR);
    tensor_checks(dir, tensor, t * l1 * d, 4, checks);
    if checks.iter().all(|c| c.passed) {
        checks.push(check(
            "read_back",
            trace_io::read_trace(dir)
                .map(|_| "ok".into())
                .map_err(|e| e.to_string()),
        ));
    }
}

fn validate_umat(dir: &Path, raw: &serde_json::Value, checks: &mut Vec<Check>) {
    let dtype = raw["dtype"].as_str().unwrap_or_default();
    checks.push(check(
        "dtype",
        if dtype == trace_io::DTYPE_F32 {
            Ok(dtype.into())
        } else {
            Err(format!("{dtype:?} is not f32le"))
        },
    ));
    let shape: Option<Vec<usize>> = raw["shape"]
        .as_array()
        .and_then(|a| a.iter().map(|v| v.as_u64().map(|x| x as usize)).collect());
    let (v, d) = match shape.as_deref() {
        Some(&[v, d]) if v >= 1 && d >= 1 => (v, d),
        _ => {
            checks.push(check(
                "shape",
                Err("shape must be [V, d] with V, d >= 1".into()),
            ));
            return;
        }
    };
    checks.push(check("shape", Ok(format!("[{v}, {d}]"))));
    checks.push(check(
        "vocab_at_least_hidden",
        if v >= d {
            Ok(format!("V={v} >= d={d}"))
        } else {
            Err(format!("V={v} < d={d}: metric will be rank deficient"))
        },
    ));
    let tensor = raw["tensor"].as_str().unwrap_or(trace_io::UMAT_TENSOR);
    tensor_checks(dir, tensor, v * d, 4, checks);
}

fn validate_gmat(dir: &Path, checks: &mut Vec<Check>) {
    let result = trace_io::read_metric_tensor(dir)
        .and_then(SemanticMetric::from_tensor_file)
        .map(|m| {
            format!(
                "{0}x{0}, numerical rank {1}",
                m.hidden_size(),
                m.numerical_rank()
            )
        });
    checks.push(check("metric_tensor", result.map_err(|e| e.to_string())));
}

fn tensor_checks(dir: &Path, tensor: &str, count: usize, width: usize, checks: &mut Vec<Check>) {
    let path = dir.join(tensor);
    let len = fs::metadata(&path).map(|m| m.len() as usize);
    checks.push(check(
        "tensor_byte_count",
        match len {
            Ok(n) if n == count * width => Ok(format!("{n} bytes")),
            Ok(n) => Err(format!(
                "{n} bytes on disk, declared shape needs {}",
                count * width
            )),
            Err(e) => Err(format!("{}: {e}", path.display())),
        },
    ));
    if !checks.last().is_some_and(|c| c.passed) {
        return;
    }
    let finite = trace_io::read_f32le(&path, count)
        .map_err(|e| e.to_string())
        .and_then(|vals| match vals.iter().position(|v| !v.is_finite()) {
            None => Ok("all finite".to_string()),
            Some(i) => Err(format!("element {i} is {}", vals[i])),
        });
    checks.push(check("finite_values", finite));
}
