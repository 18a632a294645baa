#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use curved_core::trace_io::{self, TraceSet, UnembeddingMatrix, Variant};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn trace(
    prompt_set_id: &str,
    variant: Variant,
    tokens: &[&str],
    paths: &[Vec<Vec<f64>>],
) -> TraceSet {
    assert_eq!(tokens.len(), paths.len());
    let rows = paths[0].len();
    let d = paths[0][0].len();
    let activations = paths
        .iter()
        .flatten()
        .flatten()
        .map(|&x| x as f32)
        .collect();
    TraceSet {
        model_id: "synthetic".into(),
        prompt_set_id: prompt_set_id.into(),
        variant,
        tokens: tokens.iter().map(|s| s.to_string()).collect(),
        activations,
        num_layers: rows,
        hidden_size: d,
        metadata: BTreeMap::new(),
    }
}

pub fn write(trace: &TraceSet, dir: &Path) -> PathBuf {
    trace_io::write_trace(trace, dir).unwrap();
    dir.to_path_buf()
}

/// `U = I_d`, so the pullback metric is exactly the identity.
pub fn identity_umat(d: usize, dir: &Path) -> PathBuf {
    let mut values = vec![0f32; d * d];
    for i in 0..d {
        values[i * d + i] = 1.0;
    }
    let u = UnembeddingMatrix {
        model_id: "synthetic".into(),
        vocab_size: d,
        hidden_size: d,
        values,
    };
    trace_io::write_unembedding(&u, dir).unwrap();
    dir.to_path_buf()
}

/// `n` samples of a radius-`r` circle in the first two axes of ℝ^d.
pub fn circle(r: f64, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let mut p = vec![0.0; d];
            p[0] = r * th.cos();
            p[1] = r * th.sin();
            p
        })
        .collect()
}

/// `n` equally spaced points along axis 0 starting at the origin.
pub fn axis_line(n: usize, step: f64, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut p = vec![0.0; d];
            p[0] = i as f64 * step;
            p
        })
        .collect()
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| gaussian(rng)).collect()
}

/// Integer step directions of length 10, cycled to make a turning path.
const TURNS: [[f64; 4]; 4] = [
    [6.0, 8.0, 0.0, 0.0],
    [0.0, 6.0, 8.0, 0.0],
    [0.0, 0.0, 6.0, 8.0],
    [8.0, 0.0, 0.0, 6.0],
];

/// Path whose steps are `scale * TURNS[(start + i) % 4]`; every step has
/// length `10 * scale` exactly.
pub fn turning_path(rows: usize, scale: f64, start: usize) -> Vec<Vec<f64>> {
    let mut p = vec![0.0; 4];
    let mut out = vec![p.clone()];
    for i in 0..rows - 1 {
        let dir = TURNS[(start + i) % 4];
        for (x, s) in p.iter_mut().zip(dir) {
            *x += scale * s;
        }
        out.push(p.clone());
    }
    out
}

/// Writes an `n_sets` suite whose strong variants have exactly twice the
/// moderate deltas, for curvature and salience alike.
///
/// Per set `k`, with `m = 2(k+20)`:
/// - control: straight line along axis 0 with step `15m` (κ = 0, salience 15m)
/// - moderate: turning path with step length `10m`
/// - strong: moderate scaled by 1/2 (κ doubles, salience 5m)
///
/// Every coordinate is an integer, so f32 storage is exact, and
/// power-of-two scaling keeps every derived quantity exactly proportional.
pub fn ratio_two_suite(root: &Path, n_sets: usize) -> PathBuf {
    let scales: Vec<f64> = (0..n_sets).map(|k| 2.0 * (k + 20) as f64).collect();
    suite_with_scales(root, &scales)
}

/// As [`ratio_two_suite`] with an explicit (even) `m` per set.
pub fn suite_with_scales(root: &Path, scales: &[f64]) -> PathBuf {
    let rows = 8;
    let tokens = ["<bos>", "the", "sky"];
    let mut sets = Vec::new();
    for (k, &m) in scales.iter().enumerate() {
        let id = format!("set{k:02}");
        let ctrl: Vec<_> = (0..tokens.len())
            .map(|_| axis_line(rows, 15.0 * m, 4))
            .collect();
        let moderate: Vec<_> = (0..tokens.len())
            .map(|t| turning_path(rows, m, k + t))
            .collect();
        let strong: Vec<_> = moderate
            .iter()
            .map(|path| {
                path.iter()
                    .map(|p| p.iter().map(|x| x * 0.5).collect())
                    .collect()
            })
            .collect();
        let mut variants = BTreeMap::new();
        for (variant, paths) in [
            (Variant::NeutralCtrl, &ctrl),
            (Variant::PosModCs, &moderate),
            (Variant::PosStrCs, &strong),
            (Variant::NegModCs, &moderate),
            (Variant::NegStrCs, &strong),
        ] {
            let rel = format!("{id}/{variant}");
            write(&trace(&id, variant, &tokens, paths), &root.join(&rel));
            variants.insert(variant.as_str().to_string(), rel);
        }
        let domains = [
            "emotional",
            "moral",
            "perspective",
            "logical",
            "identity",
            "environmental",
            "nonsense",
        ];
        sets.push(serde_json::json!({
            "prompt_set_id": id,
            "domain": domains[k % domains.len()],
            "variants": variants,
        }));
    }
    let manifest = root.join("suite.json");
    let doc = serde_json::json!({ "model_id": "synthetic", "prompt_sets": sets });
    std::fs::write(&manifest, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    manifest
}

/// Every regular file under `dir`, relative path to bytes.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}
