//! Summary statistics, inter-metric correlation and the one-sided paired
//! t-test used to ask whether strong concern shifts move the residual
//! stream more than moderate ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace_io::MetricGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSummary {
    pub mean_kappa: f64,
    pub max_kappa: f64,
    /// Mean over token rows of each row's argmax layer (ties to the lowest layer).
    pub layer_of_max: f64,
}

/// Mean and max over every valid cell of every grid, plus the average
/// per-token argmax layer. Rows without valid cells are skipped.
pub fn summarize_curvature(grids: &[MetricGrid]) -> Result<CurvatureSummary> {
    let (mut sum, mut count, mut max) = (0.0, 0usize, f64::NEG_INFINITY);
    let (mut argmax_sum, mut rows) = (0.0, 0usize);
    for grid in grids {
        for t in 0..grid.num_tokens() {
            let mut best: Option<(usize, f64)> = None;
            for (l, cell) in grid.row(t).enumerate() {
                let Some(k) = cell else { continue };
                sum += k;
                count += 1;
                max = max.max(k);
                if best.is_none_or(|(_, b)| k > b) {
                    best = Some((l, k));
                }
            }
            if let Some((l, _)) = best {
                argmax_sum += l as f64;
                rows += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Degenerate(
            "no valid curvature cells to summarize".into(),
        ));
    }
    Ok(CurvatureSummary {
        mean_kappa: sum / count as f64,
        max_kappa: max,
        layer_of_max: argmax_sum / rows as f64,
    })
}

/// Mean of `|cell|` over the valid cells of a delta grid.
pub fn mean_abs_delta(delta: &MetricGrid) -> Result<f64> {
    let n = delta.valid_count();
    if n == 0 {
        return Err(Error::Degenerate(format!(
            "delta grid {:?} has no valid cells",
            delta.metric_name
        )));
    }
    Ok(delta.valid_values().map(f64::abs).sum::<f64>() / n as f64)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "pearson sample lengths",
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs n >= 3, got {}",
            x.len()
        )));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson input has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    /// Upper-tail probability `P(T_{n−1} ≥ t)`.
    pub p: f64,
    pub df: f64,
    pub mean_diff: f64,
}

/// One-sided paired t-test of `strong > moderate`.
///
/// `d = strong − moderate`, `t = mean(d) / (sd(d)/√n)` with the `n − 1`
/// sample deviation, `p` the upper tail of Student's t with `n − 1` degrees
/// of freedom.
pub fn paired_t_one_sided(moderate: &[f64], strong: &[f64]) -> Result<PairedTTest> {
    if moderate.len() != strong.len() {
        return Err(Error::DimensionMismatch {
            what: "paired sample lengths",
            left: moderate.len(),
            right: strong.len(),
        });
    }
    let n = moderate.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs n >= 2, got {n}"
        )));
    }
    let diffs: Vec<f64> = strong.iter().zip(moderate).map(|(s, m)| s - m).collect();
    let md = mean(&diffs);
    let var = diffs.iter().map(|d| (d - md) * (d - md)).sum::<f64>() / (n - 1) as f64;
    // differences constant up to round-off count as zero variance
    let scale = diffs.iter().fold(0.0f64, |a, d| a.max(d.abs()));
    if var.sqrt() <= 1e-12 * scale || var == 0.0 {
        return Err(Error::Degenerate(
            "paired differences have zero variance".into(),
        ));
    }
    let t = md / (var.sqrt() / (n as f64).sqrt());
    let df = (n - 1) as f64;
    Ok(PairedTTest {
        t,
        p: student_t_sf(t, df),
        df,
        mean_diff: md,
    })
}

/// Upper tail `P(T ≥ t)` of Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x);
    if t > 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// `I_x(a, b)` by Lentz's continued fraction, switching to the symmetric
/// form `1 − I_{1−x}(b, a)` where the fraction converges slowly.
/// Absolute error is below 1e-12 for the moderate `a, b` used here.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 500;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        for aa in [
            m * (b - m) * x / ((qam + m2) * (a + m2)),
            -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2)),
        ] {
            d = 1.0 + aa * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + aa / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
        }
        if (d * c - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Scalar summaries of one prompt-variant pair, each the mean over the
/// valid cells of the corresponding grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub cosine_mean: f64,
    pub euclid_mean: f64,
    pub kappa_mean: f64,
    pub layer_delta_mean: f64,
    pub salience_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub cosine_vs_euclidean: f64,
    pub curvature_vs_direction: f64,
    pub salience_vs_curvature: f64,
    pub prompt_count: usize,
}

pub fn correlation_report(records: &[PairRecord]) -> Result<CorrelationTable> {
    let col = |f: fn(&PairRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let (cos, euc) = (col(|r| r.cosine_mean), col(|r| r.euclid_mean));
    let (kappa, angle, sal) = (
        col(|r| r.kappa_mean),
        col(|r| r.layer_delta_mean),
        col(|r| r.salience_mean),
    );
    Ok(CorrelationTable {
        cosine_vs_euclidean: pearson(&cos, &euc)?,
        curvature_vs_direction: pearson(&kappa, &angle)?,
        salience_vs_curvature: pearson(&sal, &kappa)?,
        prompt_count: records.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Ok,
    /// Paired differences have zero variance; no t statistic exists.
    ZeroVariance,
    /// Fewer than two prompt sets.
    InsufficientData,
}

/// Moderate vs strong delta magnitudes for one (metric, polarity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub model_id: String,
    pub metric_name: String,
    pub polarity: Polarity,
    pub mean_delta_mod: f64,
    pub mean_delta_str: f64,
    /// `mean_delta_str / mean_delta_mod`, absent when the denominator is zero.
    pub ratio_str_over_mod: Option<f64>,
    pub t: Option<f64>,
    pub p_one_sided: Option<f64>,
    pub n: usize,
    pub status: TestStatus,
}

pub fn scaling_report(
    model_id: &str,
    metric_name: &str,
    polarity: Polarity,
    moderate: &[f64],
    strong: &[f64],
) -> Result<ScalingReport> {
    if moderate.is_empty() {
        return Err(Error::InvalidArgument(
            "scaling report needs at least one prompt set".into(),
        ));
    }
    let (mm, ms) = (mean(moderate), mean(strong));
    let (t, p, status) = match paired_t_one_sided(moderate, strong) {
        _ if moderate.len() < 2 => (None, None, TestStatus::InsufficientData),
        Ok(test) => (Some(test.t), Some(test.p), TestStatus::Ok),
        Err(Error::Degenerate(_)) => (None, None, TestStatus::ZeroVariance),
        Err(e) => return Err(e),
    };
    Ok(ScalingReport {
        model_id: model_id.to_string(),
        metric_name: metric_name.to_string(),
        polarity,
        mean_delta_mod: mm,
        mean_delta_str: ms,
        ratio_str_over_mod: (mm > 0.0).then(|| ms / mm),
        t,
        p_one_sided: p,
        n: moderate.len(),
        status,
    })
}
