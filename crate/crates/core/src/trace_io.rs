//! On-disk containers for residual traces, unembedding matrices, cached
//! metric tensors and metric grids.
//!
//! Every container is a directory holding a `manifest.json` and one raw
//! little-endian tensor file. Tensor files are row-major; a trace is laid out
//! token-major, then layer, then hidden dimension.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub const TRACE_FORMAT: &str = "ci-trace/1";
pub const UMAT_FORMAT: &str = "ci-umat/1";
pub const GMAT_FORMAT: &str = "ci-gmat/1";

pub const DTYPE_F32: &str = "f32le";
pub const DTYPE_F64: &str = "f64le";

pub const TRACE_TENSOR: &str = "residual.bin";
pub const UMAT_TENSOR: &str = "u.bin";
pub const GMAT_TENSOR: &str = "g.bin";

/// Minimum number of layer rows: curvature needs three points.
pub const MIN_LAYER_ROWS: usize = 3;

/// Prompt variant label. A control plus four concern-shifted variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NeutralCtrl,
    PosModCs,
    PosStrCs,
    NegModCs,
    NegStrCs,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::NeutralCtrl,
        Variant::PosModCs,
        Variant::PosStrCs,
        Variant::NegModCs,
        Variant::NegStrCs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::NeutralCtrl => "neutral_ctrl",
            Variant::PosModCs => "pos_mod_cs",
            Variant::PosStrCs => "pos_str_cs",
            Variant::NegModCs => "neg_mod_cs",
            Variant::NegStrCs => "neg_str_cs",
        }
    }

    pub fn is_control(self) -> bool {
        self == Variant::NeutralCtrl
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown variant label {s:?}")))
    }
}

/// A prompt variant's residual stream: `T` tokens x `L+1` layer rows x `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub model_id: String,
    pub prompt_set_id: String,
    pub variant: Variant,
    pub tokens: Vec<String>,
    /// Flattened `[T, L+1, d]` tensor; row 0 of each token is the embedding entry.
    pub activations: Vec<f32>,
    pub num_layers: usize,
    pub hidden_size: usize,
    /// Opaque capture metadata (e.g. whether rows are pre- or post-final-norm).
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl TraceSet {
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Validation("trace has no tokens".into()));
        }
        if self.num_layers < MIN_LAYER_ROWS {
            return Err(Error::Validation(format!(
                "trace has {} layer rows, need at least {MIN_LAYER_ROWS}",
                self.num_layers
            )));
        }
        if self.hidden_size == 0 {
            return Err(Error::Validation("hidden size is zero".into()));
        }
        let expected = self.tokens.len() * self.num_layers * self.hidden_size;
        if self.activations.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "activation tensor has {} elements, shape [{}, {}, {}] needs {expected}",
                self.activations.len(),
                self.tokens.len(),
                self.num_layers,
                self.hidden_size
            )));
        }
        Ok(())
    }

    /// Residual vector of one token at one layer row.
    pub fn vector(&self, token: usize, layer: usize) -> &[f32] {
        let d = self.hidden_size;
        let start = (token * self.num_layers + layer) * d;
        &self.activations[start..start + d]
    }

    /// All layer rows of one token, widened to f64.
    pub fn token_points(&self, token: usize) -> Vec<Vec<f64>> {
        (0..self.num_layers)
            .map(|l| {
                self.vector(token, l)
                    .iter()
                    .map(|&x| f64::from(x))
                    .collect()
            })
            .collect()
    }
}

/// Vocabulary projection `U`, `V x d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UnembeddingMatrix {
    pub model_id: String,
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub values: Vec<f32>,
}

impl UnembeddingMatrix {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.vocab_size == 0 {
            return Err(Error::Validation(format!(
                "unembedding shape [{}, {}] has a zero dimension",
                self.vocab_size, self.hidden_size
            )));
        }
        let expected = self.vocab_size * self.hidden_size;
        if self.values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "unembedding tensor has {} elements, shape [{}, {}] needs {expected}",
                self.values.len(),
                self.vocab_size,
                self.hidden_size
            )));
        }
        if self.vocab_size < self.hidden_size {
            log::warn!(
                "unembedding has fewer rows than columns (V={} < d={}); pullback metric will be rank deficient",
                self.vocab_size,
                self.hidden_size
            );
        }
        Ok(())
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let d = self.hidden_size;
        &self.values[r * d..(r + 1) * d]
    }
}

/// A token x layer matrix of one scalar metric with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGrid {
    pub metric_name: String,
    pub token_labels: Vec<String>,
    pub num_layers: usize,
    /// Row-major `tokens x num_layers`.
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl MetricGrid {
    /// Fully masked grid.
    pub fn empty(
        metric_name: impl Into<String>,
        token_labels: Vec<String>,
        num_layers: usize,
    ) -> Self {
        let n = token_labels.len() * num_layers;
        MetricGrid {
            metric_name: metric_name.into(),
            token_labels,
            num_layers,
            values: vec![0.0; n],
            mask: vec![false; n],
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.token_labels.len()
    }

    pub fn get(&self, token: usize, layer: usize) -> Option<f64> {
        let idx = token * self.num_layers + layer;
        self.mask[idx].then(|| self.values[idx])
    }

    pub fn set(&mut self, token: usize, layer: usize, value: f64) {
        let idx = token * self.num_layers + layer;
        self.values[idx] = value;
        self.mask[idx] = true;
    }

    pub fn clear(&mut self, token: usize, layer: usize) {
        let idx = token * self.num_layers + layer;
        self.values[idx] = 0.0;
        self.mask[idx] = false;
    }

    pub fn row(&self, token: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        (0..self.num_layers).map(move |l| self.get(token, l))
    }

    /// Values of every valid cell in row-major order.
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.mask)
            .filter_map(|(&v, &ok)| ok.then_some(v))
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.token_labels.len() * self.num_layers;
        if self.values.len() != n || self.mask.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "grid {:?} holds {} values / {} mask bits, expected {n}",
                self.metric_name,
                self.values.len(),
                self.mask.len()
            )));
        }
        Ok(())
    }

    /// CSV: one row per token, one column per layer, blank for masked cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["token".to_string()];
        header.extend((0..self.num_layers).map(|l| format!("layer_{l}")));
        w.write_record(&header)?;
        for (t, label) in self.token_labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(
                self.row(t)
                    .map(|c| c.map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn to_json(&self) -> GridJson {
        GridJson {
            metric_name: self.metric_name.clone(),
            token_labels: self.token_labels.clone(),
            num_layers: self.num_layers,
            values: (0..self.num_tokens())
                .map(|t| self.row(t).collect())
                .collect(),
        }
    }

    pub fn from_json(json: GridJson) -> Result<Self> {
        if json.values.len() != json.token_labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "grid json has {} rows for {} token labels",
                json.values.len(),
                json.token_labels.len()
            )));
        }
        let mut grid = MetricGrid::empty(json.metric_name, json.token_labels, json.num_layers);
        for (t, row) in json.values.iter().enumerate() {
            if row.len() != json.num_layers {
                return Err(Error::ShapeMismatch(format!(
                    "grid json row {t} has {} cells, expected {}",
                    row.len(),
                    json.num_layers
                )));
            }
            for (l, cell) in row.iter().enumerate() {
                if let Some(v) = cell {
                    grid.set(t, l, *v);
                }
            }
        }
        Ok(grid)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json_file(path, &self.to_json())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let json: GridJson = serde_json::from_str(&text).map_err(|source| Error::Manifest {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(json)
    }
}

/// JSON form of a [`MetricGrid`]; masked cells are `null`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridJson {
    pub metric_name: String,
    pub token_labels: Vec<String>,
    pub num_layers: usize,
    pub values: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceManifest {
    pub format: String,
    pub model_id: String,
    pub prompt_set_id: String,
    pub variant: String,
    pub tokens: Vec<String>,
    pub shape: [usize; 3],
    pub dtype: String,
    pub tensor: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixManifest {
    pub format: String,
    pub model_id: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub tensor: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// Just enough of a manifest to dispatch on its `format`.
#[derive(Debug, Clone, Deserialize)]
struct FormatProbe {
    format: String,
}

/// Kind of container stored in a directory, judged from its manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Trace,
    Unembedding,
    MetricTensor,
}

pub fn container_kind(dir: &Path) -> Result<ContainerKind> {
    let probe: FormatProbe = read_manifest(dir)?;
    match probe.format.as_str() {
        TRACE_FORMAT => Ok(ContainerKind::Trace),
        UMAT_FORMAT => Ok(ContainerKind::Unembedding),
        GMAT_FORMAT => Ok(ContainerKind::MetricTensor),
        other => Err(Error::UnsupportedVersion {
            found: other.to_string(),
            expected: "ci-trace/1, ci-umat/1 or ci-gmat/1",
        }),
    }
}

pub(crate) fn read_manifest<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<T> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Manifest { path, source })
}

pub(crate) fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Manifest {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn check_format(found: &str, expected: &'static str) -> Result<()> {
    if found != expected {
        return Err(Error::UnsupportedVersion {
            found: found.to_string(),
            expected,
        });
    }
    Ok(())
}

fn check_dtype(found: &str, expected: &'static str) -> Result<()> {
    if found != expected {
        return Err(Error::UnsupportedDtype {
            found: found.to_string(),
            expected,
        });
    }
    Ok(())
}

/// Tensor file names are plain file names inside the container.
fn tensor_path(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = Path::new(name);
    if name.is_empty() || p.components().count() != 1 || p.is_absolute() {
        return Err(Error::Validation(format!(
            "tensor file name {name:?} must be a bare file name"
        )));
    }
    Ok(dir.join(p))
}

fn read_exact_bytes(path: &Path, expected_len: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected_len {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} bytes, declared shape needs {expected_len}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

pub(crate) fn read_f32le(path: &Path, count: usize) -> Result<Vec<f32>> {
    let bytes = read_exact_bytes(path, count * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn read_f64le(path: &Path, count: usize) -> Result<Vec<f64>> {
    let bytes = read_exact_bytes(path, count * 8)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn write_f32le(path: &Path, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_f64le(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_trace(trace: &TraceSet, dir: &Path) -> Result<()> {
    trace.validate()?;
    ensure_dir(dir)?;
    let manifest = TraceManifest {
        format: TRACE_FORMAT.to_string(),
        model_id: trace.model_id.clone(),
        prompt_set_id: trace.prompt_set_id.clone(),
        variant: trace.variant.as_str().to_string(),
        tokens: trace.tokens.clone(),
        shape: [trace.tokens.len(), trace.num_layers, trace.hidden_size],
        dtype: DTYPE_F32.to_string(),
        tensor: TRACE_TENSOR.to_string(),
        metadata: trace.metadata.clone(),
    };
    write_f32le(&dir.join(TRACE_TENSOR), &trace.activations)?;
    write_json_file(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_trace(dir: &Path) -> Result<TraceSet> {
    let m: TraceManifest = read_manifest(dir)?;
    check_format(&m.format, TRACE_FORMAT)?;
    check_dtype(&m.dtype, DTYPE_F32)?;
    let variant: Variant = m.variant.parse()?;
    let [t, l1, d] = m.shape;
    if m.tokens.len() != t {
        return Err(Error::ShapeMismatch(format!(
            "manifest lists {} tokens but shape declares T={t}",
            m.tokens.len()
        )));
    }
    let count = t
        .checked_mul(l1)
        .and_then(|n| n.checked_mul(d))
        .ok_or_else(|| Error::ShapeMismatch(format!("shape {:?} overflows", m.shape)))?;
    let activations = read_f32le(&tensor_path(dir, &m.tensor)?, count)?;
    let trace = TraceSet {
        model_id: m.model_id,
        prompt_set_id: m.prompt_set_id,
        variant,
        tokens: m.tokens,
        activations,
        num_layers: l1,
        hidden_size: d,
        metadata: m.metadata,
    };
    trace.validate()?;
    Ok(trace)
}

pub fn write_unembedding(u: &UnembeddingMatrix, dir: &Path) -> Result<()> {
    u.validate()?;
    ensure_dir(dir)?;
    let manifest = MatrixManifest {
        format: UMAT_FORMAT.to_string(),
        model_id: u.model_id.clone(),
        shape: [u.vocab_size, u.hidden_size],
        dtype: DTYPE_F32.to_string(),
        tensor: UMAT_TENSOR.to_string(),
        metadata: BTreeMap::new(),
    };
    write_f32le(&dir.join(UMAT_TENSOR), &u.values)?;
    write_json_file(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_unembedding(dir: &Path) -> Result<UnembeddingMatrix> {
    let m: MatrixManifest = read_manifest(dir)?;
    check_format(&m.format, UMAT_FORMAT)?;
    check_dtype(&m.dtype, DTYPE_F32)?;
    let [v, d] = m.shape;
    let count = v
        .checked_mul(d)
        .ok_or_else(|| Error::ShapeMismatch(format!("shape {:?} overflows", m.shape)))?;
    let values = read_f32le(&tensor_path(dir, &m.tensor)?, count)?;
    let u = UnembeddingMatrix {
        model_id: m.model_id,
        vocab_size: v,
        hidden_size: d,
        values,
    };
    u.validate()?;
    Ok(u)
}

/// Raw cached `d x d` metric tensor as stored in a `ci-gmat/1` container.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTensorFile {
    pub model_id: String,
    pub hidden_size: usize,
    pub values: Vec<f64>,
}

pub fn write_metric_tensor(g: &MetricTensorFile, dir: &Path) -> Result<()> {
    let d = g.hidden_size;
    if g.values.len() != d * d {
        return Err(Error::ShapeMismatch(format!(
            "metric tensor has {} elements, expected {d}x{d}",
            g.values.len()
        )));
    }
    ensure_dir(dir)?;
    let manifest = MatrixManifest {
        format: GMAT_FORMAT.to_string(),
        model_id: g.model_id.clone(),
        shape: [d, d],
        dtype: DTYPE_F64.to_string(),
        tensor: GMAT_TENSOR.to_string(),
        metadata: BTreeMap::new(),
    };
    write_f64le(&dir.join(GMAT_TENSOR), &g.values)?;
    write_json_file(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_metric_tensor(dir: &Path) -> Result<MetricTensorFile> {
    let m: MatrixManifest = read_manifest(dir)?;
    check_format(&m.format, GMAT_FORMAT)?;
    check_dtype(&m.dtype, DTYPE_F64)?;
    let [r, c] = m.shape;
    if r != c || r == 0 {
        return Err(Error::ShapeMismatch(format!(
            "metric tensor shape {:?} is not square",
            m.shape
        )));
    }
    let values = read_f64le(&tensor_path(dir, &m.tensor)?, r * c)?;
    Ok(MetricTensorFile {
        model_id: m.model_id,
        hidden_size: r,
        values,
    })
}
