//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary
//! (`harness = false`) so the lines always appear in `cargo test` output.

mod common;

use std::time::Instant;

use curved_core::commands::{self, AnalysisOptions};
use curved_core::geometry::{self, Bend, Trajectory, DEFAULT_BEND_TOL, DEFAULT_EPS_V};
use curved_core::heatmap::{self, ColorMode, HeatmapSpec, DIV_CENTER};
use curved_core::metric::{self, SemanticMetric};
use curved_core::stats::{self, Polarity, TestStatus};
use curved_core::trace_io::{MetricGrid, UnembeddingMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{gaussian, gaussian_vec};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn kappa(points: Vec<Vec<f64>>, params: Option<Vec<f64>>) -> Vec<Option<f64>> {
    let traj = match params {
        Some(p) => Trajectory::new(points, p),
        None => Trajectory::with_layer_index(points),
    }
    .unwrap();
    let d = traj.dim();
    let s = geometry::curvature_series(&traj, &SemanticMetric::identity(d), DEFAULT_EPS_V).unwrap();
    s.kappa
        .iter()
        .zip(&s.mask)
        .map(|(&k, &ok)| ok.then_some(k))
        .collect()
}

fn circle_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for r in [0.5, 2.0, 10.0] {
        let ks = kappa(common::circle(r, 64, 8), None);
        if ks.iter().any(Option::is_none) {
            return Err(format!("masked cell on r={r} circle"));
        }
        for k in ks.into_iter().flatten() {
            worst = worst.max((k * r - 1.0).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if worst < 0.01 && elapsed < 1.0 {
        Ok(format!("max |κr − 1| = {worst:.2e}, {elapsed:.3}s"))
    } else {
        Err(format!(
            "max |κr − 1| = {worst:.2e} (need < 1e-2), {elapsed:.3}s (need < 1s)"
        ))
    }
}

fn straight_line_zero() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = 2048;
    let origin = gaussian_vec(&mut rng, d);
    let dir = gaussian_vec(&mut rng, d);
    let points: Vec<Vec<f64>> = (0..10)
        .map(|i| {
            origin
                .iter()
                .zip(&dir)
                .map(|(o, u)| o + 0.7 * i as f64 * u)
                .collect()
        })
        .collect();
    let traj = Trajectory::with_layer_index(points.clone()).unwrap();
    let max_k = kappa(points, None)
        .into_iter()
        .flatten()
        .fold(0.0, f64::max);
    let max_angle = geometry::layer_delta_angles(&traj)
        .unwrap()
        .into_iter()
        .map(|a| a.expect("nonzero steps"))
        .fold(0.0, f64::max);
    let elapsed = start.elapsed().as_secs_f64();
    if max_k < 1e-9 && max_angle < 1e-9 && elapsed < 1.0 {
        Ok(format!(
            "max κ = {max_k:.2e}, max layer-Δ = {max_angle:.2e}, {elapsed:.3}s"
        ))
    } else {
        Err(format!(
            "max κ = {max_k:.2e}, max layer-Δ = {max_angle:.2e}, {elapsed:.3}s"
        ))
    }
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    // Gram–Schmidt (twice, for orthogonality to rounding) on Gaussian columns
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v = gaussian_vec(rng, d);
        for _ in 0..2 {
            for b in &q {
                let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

fn invariance_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut worst_affine, mut worst_rot): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let n = rng.gen_range(4..16);
        let d = rng.gen_range(2..12);
        let points: Vec<Vec<f64>> = (0..n).map(|_| gaussian_vec(&mut rng, d)).collect();
        let mut params = vec![0.0];
        for _ in 1..n {
            let last = *params.last().unwrap();
            params.push(last + rng.gen_range(0.2..2.0));
        }
        let base = kappa(points.clone(), Some(params.clone()));

        let affine: Vec<f64> = params.iter().map(|s| 3.7 * s - 2.0).collect();
        let k_aff = kappa(points.clone(), Some(affine));

        let q = random_orthogonal(&mut rng, d);
        let rotated: Vec<Vec<f64>> = points
            .iter()
            .map(|p| {
                q.iter()
                    .map(|row| row.iter().zip(p).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect();
        let k_rot = kappa(rotated, Some(params));

        for (i, k0) in base.iter().enumerate() {
            let Some(k0) = k0 else { continue };
            let rel = |k: Option<f64>| {
                (k.unwrap_or(f64::INFINITY) - k0).abs() / k0.abs().max(f64::MIN_POSITIVE)
            };
            worst_affine = worst_affine.max(rel(k_aff[i]));
            worst_rot = worst_rot.max(rel(k_rot[i]));
        }
    }
    let line = format!("affine max rel = {worst_affine:.2e}, rotation max rel = {worst_rot:.2e}");
    if worst_affine < 1e-9 && worst_rot < 1e-9 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn metric_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (v, d) = (512, 64);
    let u = UnembeddingMatrix {
        model_id: "random".into(),
        vocab_size: v,
        hidden_size: d,
        values: (0..v * d).map(|_| gaussian(&mut rng) as f32).collect(),
    };
    let g = SemanticMetric::build_pullback_metric(&u).map_err(|e| e.to_string())?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..1000)
        .map(|_| (gaussian_vec(&mut rng, d), gaussian_vec(&mut rng, d)))
        .collect();
    let worst = metric::verify_metric_equivalence(&u, &g, &pairs).map_err(|e| e.to_string())?;
    if worst < 1e-10 {
        Ok(format!("max rel = {worst:.2e}"))
    } else {
        Err(format!("max rel = {worst:.2e}"))
    }
}

/// Random straight control line, per-step perturbations that are zero,
/// parallel to the line, or generic. Bent steps must produce κ > 0 at an
/// adjacent vertex; vertices between two on-line steps keep the line's κ = 0.
fn bend_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let (mut bends, mut colinear) = (0usize, 0usize);
    let mut worst_colinear: f64 = 0.0;
    for trial in 0..200 {
        let d = rng.gen_range(2..10);
        let steps = rng.gen_range(3..12);
        let origin = gaussian_vec(&mut rng, d);
        let dir = gaussian_vec(&mut rng, d);
        let ctrl_steps: Vec<Vec<f64>> = (0..steps)
            .map(|_| {
                let c = rng.gen_range(0.3..2.0);
                dir.iter().map(|x| c * x).collect()
            })
            .collect();
        let mut kinds = Vec::new();
        let shifted_steps: Vec<Vec<f64>> = ctrl_steps
            .iter()
            .map(|v| {
                let dv: Vec<f64> = match rng.gen_range(0..3) {
                    0 => vec![0.0; d],
                    1 => {
                        let b = rng.gen_range(-0.5..1.5);
                        v.iter().map(|x| b * x).collect()
                    }
                    _ => {
                        let scale = 10f64.powf(rng.gen_range(-3.0..0.5));
                        gaussian_vec(&mut rng, d)
                            .into_iter()
                            .map(|x| scale * x)
                            .collect()
                    }
                };
                let bend = geometry::bend_criterion(v, &dv, DEFAULT_BEND_TOL).unwrap();
                let strong = bend == Bend::Bend && geometry::rejection_norm(v, &dv) > 1e-6;
                kinds.push((bend, strong));
                v.iter().zip(&dv).map(|(a, b)| a + b).collect()
            })
            .collect();
        let mut points = vec![origin];
        for s in &shifted_steps {
            let last = points.last().unwrap();
            points.push(last.iter().zip(s).map(|(a, b)| a + b).collect());
        }
        // vertex i sits between steps i-1 and i; kappa[i-1] is vertex i
        let ks = kappa(points, None);
        for (l, &(_, strong)) in kinds.iter().enumerate() {
            if !strong {
                continue;
            }
            bends += 1;
            let vertex = l.max(1);
            match ks[vertex - 1] {
                Some(k) if k > 0.0 => {}
                other => {
                    return Err(format!(
                        "trial {trial}: bend at step {l} but κ at vertex {vertex} = {other:?}"
                    ))
                }
            }
        }
        for vertex in 1..steps {
            if kinds[vertex - 1].0 == Bend::ColinearNoBend
                && kinds[vertex].0 == Bend::ColinearNoBend
            {
                colinear += 1;
                let k = ks[vertex - 1].unwrap_or(0.0);
                worst_colinear = worst_colinear.max(k);
            }
        }
    }
    let line = format!(
        "{bends} bends all κ > 0; {colinear} colinear vertices, max |κ − 0| = {worst_colinear:.2e}"
    );
    if worst_colinear < 1e-9 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn statistics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let mut worst_r: f64 = 0.0;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|a| 0.4 * a + rng.gen_range(-1.0..1.0))
            .collect();
        let r = stats::pearson(&x, &y).map_err(|e| e.to_string())?;
        worst_r = worst_r.max((r - brute_pearson(&x, &y)).abs());
    }
    let test =
        stats::paired_t_one_sided(&[1.0, 2.0, 3.0], &[2.0, 3.0, 5.0]).map_err(|e| e.to_string())?;
    // upper tails P(T_df >= t), scipy.stats.t.sf
    let table: [(f64, [f64; 4]); 3] = [
        (
            2.0,
            [
                0.33333333333333337,
                0.21132486540518713,
                0.09175170953613696,
                0.028595479208968315,
            ],
        ),
        (
            9.0,
            [
                0.3145356499130132,
                0.17171819806895677,
                0.03827641188535047,
                0.0015552141551929267,
            ],
        ),
        (
            19.0,
            [
                0.3114082456432209,
                0.16493840046056252,
                0.030001018193049168,
                0.0003830961686143227,
            ],
        ),
    ];
    let mut worst_cdf: f64 = 0.0;
    for (df, tails) in table {
        for (t, sf) in [0.5, 1.0, 2.0, 4.0].into_iter().zip(tails) {
            let cdf = 1.0 - stats::student_t_sf(t, df);
            worst_cdf = worst_cdf.max((cdf - (1.0 - sf)).abs());
        }
    }
    let line = format!(
        "pearson max diff = {worst_r:.2e}; worked example t = {}, p = {:.4}; t-CDF max diff = {worst_cdf:.2e}",
        test.t, test.p
    );
    if worst_r < 1e-12
        && (test.t - 4.0).abs() < 1e-12
        && (test.p - 0.0286).abs() < 1e-3
        && worst_cdf < 1e-4
    {
        Ok(line)
    } else {
        Err(line)
    }
}

fn pipeline_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = common::ratio_two_suite(root.path(), 20);
    let umat = common::identity_umat(4, &root.path().join("umat"));
    let opts = AnalysisOptions::default();
    let (a, b) = (root.path().join("run_a"), root.path().join("run_b"));
    let report =
        commands::cmd_suite(&manifest, Some(&umat), &opts, &a).map_err(|e| e.to_string())?;
    commands::cmd_suite(&manifest, Some(&umat), &opts, &b).map_err(|e| e.to_string())?;
    let (snap_a, snap_b) = (common::snapshot(&a), common::snapshot(&b));
    if snap_a.is_empty() || snap_a != snap_b {
        return Err("outputs differ between runs".into());
    }
    let mut parts = Vec::new();
    for name in ["curvature", "salience"] {
        for polarity in [Polarity::Positive, Polarity::Negative] {
            let row = report
                .scaling
                .iter()
                .find(|s| s.metric_name == name && s.polarity == polarity)
                .ok_or(format!("no {name} {polarity:?} row"))?;
            let ratio = row.ratio_str_over_mod.unwrap_or(f64::NAN);
            let p = row.p_one_sided.unwrap_or(f64::NAN);
            if !((ratio - 2.0).abs() <= 1e-9
                && p < 1e-4
                && row.status == TestStatus::Ok
                && row.n == 20)
            {
                return Err(format!(
                    "{name} {polarity:?}: ratio = {ratio}, p = {p:e}, status {:?}",
                    row.status
                ));
            }
            parts.push(format!("{name}/{polarity:?} ratio={ratio} p={p:.1e}"));
        }
    }
    Ok(format!(
        "{}; {} files byte-identical",
        parts.join(", "),
        snap_a.len()
    ))
}

fn heatmap_determinism() -> Outcome {
    let tokens: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let mut base = MetricGrid::empty("curvature", tokens.clone(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for t in 0..3 {
        for l in 1..4 {
            base.set(t, l, rng.gen_range(0.0..2.0));
        }
    }
    let mut delta = MetricGrid::empty("delta_curvature", tokens, 5);
    for t in 0..3 {
        for l in 1..4 {
            delta.set(t, l, 0.0);
        }
    }
    let spec = HeatmapSpec::new("determinism", ColorMode::Sequential);
    let one =
        heatmap::render_triptych_svg(&base, &base, &delta, &spec).map_err(|e| e.to_string())?;
    let two =
        heatmap::render_triptych_svg(&base, &base, &delta, &spec).map_err(|e| e.to_string())?;
    if one != two {
        return Err("two renders differ".into());
    }
    let fills = heatmap::cell_fills(&one);
    let delta_fills = &fills[fills.len() - 15..];
    let center = format!(
        "#{:02x}{:02x}{:02x}",
        DIV_CENTER[0], DIV_CENTER[1], DIV_CENTER[2]
    );
    let mut checked = 0;
    for t in 0..3 {
        for l in 0..5 {
            if delta.get(t, l).is_some() {
                checked += 1;
                if delta_fills[t * 5 + l] != center {
                    return Err(format!(
                        "zero delta cell ({t},{l}) filled {}",
                        delta_fills[t * 5 + l]
                    ));
                }
            }
        }
    }
    Ok(format!(
        "byte-identical; {checked} zero-delta cells all {center}"
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("circle oracle", circle_oracle),
        ("straight-line zero", straight_line_zero),
        ("invariance suite", invariance_suite),
        ("metric equivalence", metric_equivalence),
        ("bend consistency", bend_consistency),
        ("statistics oracle", statistics_oracle),
        ("pipeline determinism", pipeline_determinism),
        ("heatmap determinism", heatmap_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
