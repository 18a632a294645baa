//! Geometry of a single residual trajectory.
//!
//! A trajectory is the sequence of residual vectors `x_0 … x_L` one token
//! passes through, paired with a strictly increasing parameter `s_0 … s_L`.
//! Curvature and salience are measured under a [`SemanticMetric`]; the
//! legacy cosine / deviation / layer-angle metrics use whatever metric the
//! caller passes (identity by default in the pipeline).

use crate::error::{Error, Result};
use crate::metric::{dot, SemanticMetric};

/// Default zero-velocity guard, relative to the mean speed of the path.
pub const DEFAULT_EPS_V: f64 = 1e-8;
/// Default relative tolerance of [`bend_criterion`].
pub const DEFAULT_BEND_TOL: f64 = 1e-6;
/// Norms below this are treated as zero by the legacy metrics.
pub const LEGACY_NORM_FLOOR: f64 = 1e-12;
/// Spacing given to repeated points in arc-length mode, relative to the longest step.
pub const ARC_LENGTH_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<Vec<f64>>,
    params: Vec<f64>,
}

impl Trajectory {
    pub fn new(points: Vec<Vec<f64>>, params: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} parameters",
                points.len(),
                params.len()
            )));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument(
                "trajectory points are empty vectors".into(),
            ));
        }
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch {
                what: "trajectory point lengths",
                left: d,
                right: p.len(),
            });
        }
        if points
            .iter()
            .flatten()
            .chain(&params)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "trajectory has non-finite entries".into(),
            ));
        }
        if params.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "trajectory parameters must be strictly increasing".into(),
            ));
        }
        Ok(Trajectory { points, params })
    }

    /// Unit layer-index parameterization `s_t = t`.
    pub fn with_layer_index(points: Vec<Vec<f64>>) -> Result<Self> {
        let params = (0..points.len()).map(|t| t as f64).collect();
        Self::new(points, params)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// `L`, the index of the last point.
    pub fn last_index(&self) -> usize {
        self.points.len() - 1
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        Self::new(self.points.clone(), params)
    }

    fn step(&self, t: usize) -> Vec<f64> {
        sub(&self.points[t + 1], &self.points[t])
    }
}

/// Velocity and acceleration at one interior point.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativePair {
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    pub index: usize,
}

/// Non-uniform three-point finite differences at interior index `i`:
///
/// `v = (x₊ − x₋)/(Δs₁ + Δs₂)`,
/// `a = 2(Δs₁(x₊ − x) − Δs₂(x − x₋)) / (Δs₁Δs₂(Δs₁ + Δs₂))`.
pub fn derivatives_at(traj: &Trajectory, i: usize) -> Result<DerivativePair> {
    if i == 0 || i >= traj.last_index() {
        return Err(Error::InvalidArgument(format!(
            "index {i} is not interior (valid range 1..={})",
            traj.last_index().saturating_sub(1)
        )));
    }
    let s = &traj.params;
    let (ds1, ds2) = (s[i] - s[i - 1], s[i + 1] - s[i]);
    if !(ds1 > 0.0 && ds2 > 0.0) {
        return Err(Error::InvalidArgument("non-increasing parameters".into()));
    }
    let (prev, cur, next) = (&traj.points[i - 1], &traj.points[i], &traj.points[i + 1]);
    let span = ds1 + ds2;
    let denom = ds1 * ds2 * span;
    let v = prev.iter().zip(next).map(|(p, n)| (n - p) / span).collect();
    let a = prev
        .iter()
        .zip(cur)
        .zip(next)
        .map(|((p, c), n)| 2.0 * (ds1 * (n - c) - ds2 * (c - p)) / denom)
        .collect();
    Ok(DerivativePair { v, a, index: i })
}

/// Curvature at interior indices `1 … L−1`; `kappa[j]` belongs to index `j + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureSeries {
    pub kappa: Vec<f64>,
    /// `false` where the velocity was too small to divide by.
    pub mask: Vec<bool>,
    pub params_used: Vec<f64>,
}

impl CurvatureSeries {
    /// `(layer index, κ)` for every valid cell.
    pub fn valid(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.kappa
            .iter()
            .zip(&self.mask)
            .enumerate()
            .filter_map(|(j, (&k, &ok))| ok.then_some((j + 1, k)))
    }
}

/// `κ = sqrt(‖a‖²‖v‖² − ⟨a,v⟩²) / ‖v‖³` under the metric, evaluated as
/// `‖a⊥‖ / ‖v‖²` with `a⊥` the rejection of `a` off `v`. Cells whose velocity norm is below `eps_v` times the
/// mean speed (total metric length over parameter span) are masked.
pub fn curvature_series(
    traj: &Trajectory,
    metric: &SemanticMetric,
    eps_v: f64,
) -> Result<CurvatureSeries> {
    if traj.points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "curvature needs at least 3 points, got {}",
            traj.points.len()
        )));
    }
    check_metric_dim(traj, metric)?;
    let span = traj.params[traj.last_index()] - traj.params[0];
    let mean_speed = path_length(traj, metric) / span;
    let floor = eps_v * mean_speed;

    let interior = traj.last_index() - 1;
    let mut kappa = Vec::with_capacity(interior);
    let mut mask = Vec::with_capacity(interior);
    for i in 1..traj.last_index() {
        let DerivativePair { v, a, .. } = derivatives_at(traj, i)?;
        let gv = metric.apply_unchecked(&v);
        let ga = metric.apply_unchecked(&a);
        let vv = dot(&v, &gv).max(0.0);
        let aa = dot(&a, &ga).max(0.0);
        let av = dot(&a, &gv);
        let speed = vv.sqrt();
        if speed == 0.0 || speed < floor {
            kappa.push(0.0);
            mask.push(false);
            continue;
        }
        // ‖a‖²‖v‖² − ⟨a,v⟩² = ‖v‖²‖a⊥‖²; the rejection form avoids the
        // cancellation that leaves ~1e-8 noise when a ∥ v
        let c = av / vv;
        let a_perp: Vec<f64> = a.iter().zip(&v).map(|(x, y)| x - c * y).collect();
        let ga_perp: Vec<f64> = ga.iter().zip(&gv).map(|(x, y)| x - c * y).collect();
        let perp = dot(&a_perp, &ga_perp).max(0.0).min(aa);
        kappa.push(perp.sqrt() / vv);
        mask.push(true);
    }
    Ok(CurvatureSeries {
        kappa,
        mask,
        params_used: traj.params.clone(),
    })
}

/// Step norms `S(t) = ‖x_{t+1} − x_t‖`, one per step (`L` values).
pub fn salience_series(traj: &Trajectory, metric: &SemanticMetric) -> Result<Vec<f64>> {
    check_metric_dim(traj, metric)?;
    Ok((0..traj.last_index())
        .map(|t| metric.norm_unchecked(&traj.step(t)))
        .collect())
}

/// Cumulative metric arc length of the polyline.
pub fn total_salience(traj: &Trajectory, metric: &SemanticMetric) -> Result<f64> {
    Ok(salience_series(traj, metric)?.iter().sum())
}

/// Cumulative metric arc length at every point, starting at 0.
///
/// Zero-length steps are widened to `ARC_LENGTH_EPS · (longest step)` so the
/// result stays strictly increasing.
pub fn arc_length_params(traj: &Trajectory, metric: &SemanticMetric) -> Result<Vec<f64>> {
    let steps = salience_series(traj, metric)?;
    let longest = steps.iter().copied().fold(0.0, f64::max);
    let eps = if longest > 0.0 {
        ARC_LENGTH_EPS * longest
    } else {
        ARC_LENGTH_EPS
    };
    let mut params = Vec::with_capacity(steps.len() + 1);
    let mut s = 0.0;
    params.push(s);
    for step in steps {
        let next = s + step.max(eps);
        // a step below the ulp of s would not advance it
        s = if next > s { next } else { next_up(s) };
        params.push(s);
    }
    Ok(params)
}

/// Cosine of the angle between matching layer rows of two trajectories.
/// `None` where either vector's norm is below [`LEGACY_NORM_FLOOR`].
pub fn cosine_series(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    metric: &SemanticMetric,
) -> Result<Vec<Option<f64>>> {
    check_pair(a, b, metric)?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| {
            let (nx, ny) = (metric.norm_unchecked(x), metric.norm_unchecked(y));
            if nx < LEGACY_NORM_FLOOR || ny < LEGACY_NORM_FLOOR {
                None
            } else {
                Some((metric.inner_unchecked(x, y) / (nx * ny)).clamp(-1.0, 1.0))
            }
        })
        .collect())
}

/// Per-layer displacement norm `‖a_ℓ − b_ℓ‖`.
pub fn euclidean_deviation_series(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    metric: &SemanticMetric,
) -> Result<Vec<f64>> {
    check_pair(a, b, metric)?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| metric.norm_unchecked(&sub(x, y)))
        .collect())
}

/// Angle (radians) between consecutive steps, one per interior point
/// (`L − 1` values). `None` where either step is shorter than
/// [`LEGACY_NORM_FLOOR`].
pub fn layer_delta_angles(traj: &Trajectory) -> Result<Vec<Option<f64>>> {
    if traj.points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "layer angles need at least 3 points, got {}",
            traj.points.len()
        )));
    }
    let steps: Vec<Vec<f64>> = (0..traj.last_index()).map(|t| traj.step(t)).collect();
    Ok(steps
        .windows(2)
        .map(|w| {
            let (n0, n1) = (dot(&w[0], &w[0]).sqrt(), dot(&w[1], &w[1]).sqrt());
            if n0 < LEGACY_NORM_FLOOR || n1 < LEGACY_NORM_FLOOR {
                None
            } else {
                // 2·atan2(|û−ŵ|, |û+ŵ|): same angle as acos(cos), but exact near 0 and π
                let (mut diff, mut sum) = (0.0, 0.0);
                for (a, b) in w[0].iter().zip(&w[1]) {
                    let (u, v) = (a / n0, b / n1);
                    diff += (u - v) * (u - v);
                    sum += (u + v) * (u + v);
                }
                Some(2.0 * diff.sqrt().atan2(sum.sqrt()))
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bend {
    ColinearNoBend,
    Bend,
}

/// Whether a step perturbation `dv` leaves the control step direction.
///
/// Colinear iff the component of `dv` orthogonal to `v_ctrl` has norm
/// `≤ tol·‖dv‖`; `dv = 0` is colinear.
pub fn bend_criterion(v_ctrl: &[f64], dv: &[f64], tol: f64) -> Result<Bend> {
    if v_ctrl.len() != dv.len() {
        return Err(Error::DimensionMismatch {
            what: "control step vs perturbation",
            left: v_ctrl.len(),
            right: dv.len(),
        });
    }
    let vv = dot(v_ctrl, v_ctrl);
    if vv == 0.0 {
        return Err(Error::InvalidArgument("control step is zero".into()));
    }
    let dv_norm = dot(dv, dv).sqrt();
    if dv_norm == 0.0 {
        return Ok(Bend::ColinearNoBend);
    }
    Ok(if rejection_norm(v_ctrl, dv) <= tol * dv_norm {
        Bend::ColinearNoBend
    } else {
        Bend::Bend
    })
}

/// Norm of `dv` minus its projection on `v`.
pub fn rejection_norm(v: &[f64], dv: &[f64]) -> f64 {
    let coef = dot(dv, v) / dot(v, v);
    dv.iter()
        .zip(v)
        .map(|(d, x)| {
            let r = d - coef * x;
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

fn path_length(traj: &Trajectory, metric: &SemanticMetric) -> f64 {
    (0..traj.last_index())
        .map(|t| metric.norm_unchecked(&traj.step(t)))
        .sum()
}

fn check_metric_dim(traj: &Trajectory, metric: &SemanticMetric) -> Result<()> {
    if traj.dim() != metric.hidden_size() {
        return Err(Error::DimensionMismatch {
            what: "trajectory d vs metric d",
            left: traj.dim(),
            right: metric.hidden_size(),
        });
    }
    Ok(())
}

fn check_pair(a: &[Vec<f64>], b: &[Vec<f64>], metric: &SemanticMetric) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "layer counts",
            left: a.len(),
            right: b.len(),
        });
    }
    let d = metric.hidden_size();
    if let Some(bad) = a.iter().chain(b).find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch {
            what: "vector length vs metric dimension",
            left: bad.len(),
            right: d,
        });
    }
    Ok(())
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::from_bits(1)
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn traj(points: &[&[f64]]) -> Trajectory {
        Trajectory::with_layer_index(points.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    fn circle(r: f64, n: usize, dim: usize) -> Trajectory {
        let h = 2.0 * PI / n as f64;
        let pts = (0..n)
            .map(|k| {
                let mut p = vec![0.0; dim];
                p[0] = r * (k as f64 * h).cos();
                p[1] = r * (k as f64 * h).sin();
                p
            })
            .collect();
        Trajectory::with_layer_index(pts).unwrap()
    }

    #[test]
    fn trajectory_validation() {
        assert!(Trajectory::new(vec![vec![0.0]], vec![0.0]).is_err());
        assert!(Trajectory::new(vec![vec![0.0], vec![1.0]], vec![0.0, 0.0]).is_err());
        assert!(Trajectory::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0.0, 1.0]).is_err());
        assert!(Trajectory::new(vec![vec![0.0], vec![f64::NAN]], vec![0.0, 1.0]).is_err());
        assert!(Trajectory::new(vec![vec![0.0], vec![1.0]], vec![0.0]).is_err());
    }

    #[test]
    fn derivatives_examples() {
        let line = traj(&[&[0., 0.], &[1., 0.], &[2., 0.]]);
        let dp = derivatives_at(&line, 1).unwrap();
        assert_eq!(dp.v, vec![1.0, 0.0]);
        assert_eq!(dp.a, vec![0.0, 0.0]);

        let corner = traj(&[&[0., 0.], &[1., 0.], &[1., 1.]]);
        let dp = derivatives_at(&corner, 1).unwrap();
        assert_eq!(dp.v, vec![0.5, 0.5]);
        assert_eq!(dp.a, vec![-1.0, 1.0]);

        // Δs₁ = 1, Δs₂ = 2: v = 4/3, a = 2(1·3 − 2·1)/(1·2·3) = 1/3
        let uneven = Trajectory::new(vec![vec![0.], vec![1.], vec![4.]], vec![0., 1., 3.]).unwrap();
        let dp = derivatives_at(&uneven, 1).unwrap();
        assert!((dp.v[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((dp.a[0] - 1.0 / 3.0).abs() < 1e-15);

        assert!(derivatives_at(&line, 0).is_err());
        assert!(derivatives_at(&line, 2).is_err());
    }

    #[test]
    fn acceleration_matches_quadratic_exactly() {
        // three-point rule is exact for x(s) = c s² on any spacing: a = 2c
        let s = [0.3, 1.1, 3.0];
        let pts = s.iter().map(|&t| vec![2.5 * t * t, -t]).collect();
        let dp = derivatives_at(&Trajectory::new(pts, s.to_vec()).unwrap(), 1).unwrap();
        assert!((dp.a[0] - 5.0).abs() < 1e-12);
        assert!(dp.a[1].abs() < 1e-12);
    }

    #[test]
    fn curvature_examples() {
        let eye = SemanticMetric::identity(2);
        let corner = traj(&[&[0., 0.], &[1., 0.], &[1., 1.]]);
        let k = curvature_series(&corner, &eye, DEFAULT_EPS_V).unwrap();
        assert_eq!(k.mask, vec![true]);
        assert!((k.kappa[0] - 2.0 * 2f64.sqrt()).abs() < 1e-12);

        let pts: Vec<Vec<f64>> = (0..10)
            .map(|t| vec![t as f64 * 0.5 - 1.0, t as f64 * 1.5])
            .collect();
        let line = Trajectory::with_layer_index(pts).unwrap();
        let k = curvature_series(&line, &eye, DEFAULT_EPS_V).unwrap();
        assert_eq!(k.kappa.len(), 8);
        assert!(k.kappa.iter().all(|&x| x < 1e-9));

        let c = circle(2.0, 64, 8);
        let k = curvature_series(&c, &SemanticMetric::identity(8), DEFAULT_EPS_V).unwrap();
        assert!(k.mask.iter().all(|&m| m));
        assert!(k.kappa.iter().all(|&x| (x - 0.5).abs() / 0.5 < 0.01));

        let short = traj(&[&[0., 0.], &[1., 0.]]);
        assert!(curvature_series(&short, &eye, DEFAULT_EPS_V).is_err());
        assert!(matches!(
            curvature_series(&corner, &SemanticMetric::identity(3), DEFAULT_EPS_V),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_velocity_is_masked_not_infinite() {
        let eye = SemanticMetric::identity(1);
        // out-and-back: central velocity at index 1 is exactly zero
        let k =
            curvature_series(&traj(&[&[0.], &[1.], &[0.], &[3.]]), &eye, DEFAULT_EPS_V).unwrap();
        assert!(!k.mask[0]);
        let constant = traj(&[&[2.], &[2.], &[2.]]);
        let k = curvature_series(&constant, &eye, DEFAULT_EPS_V).unwrap();
        assert_eq!(k.mask, vec![false]);
    }

    #[test]
    fn circle_converges_at_second_order() {
        let eye = SemanticMetric::identity(2);
        let err = |n| {
            curvature_series(&circle(1.0, n, 2), &eye, DEFAULT_EPS_V)
                .unwrap()
                .kappa
                .iter()
                .map(|k| (k - 1.0).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!(ratio >= 3.5, "ratio {ratio}");
    }

    #[test]
    fn salience_examples() {
        let eye = SemanticMetric::identity(2);
        let pts: Vec<Vec<f64>> = (0..5).map(|t| vec![t as f64, 0.0]).collect();
        let line = Trajectory::with_layer_index(pts).unwrap();
        assert_eq!(salience_series(&line, &eye).unwrap(), vec![1.0; 4]);
        assert_eq!(total_salience(&line, &eye).unwrap(), 4.0);

        let still = traj(&[&[1., 1.], &[1., 1.], &[1., 1.]]);
        assert_eq!(salience_series(&still, &eye).unwrap(), vec![0.0, 0.0]);
        assert_eq!(total_salience(&still, &eye).unwrap(), 0.0);

        let diag = SemanticMetric::from_dense(2, vec![4., 0., 0., 1.]).unwrap();
        let turn = traj(&[&[0., 0.], &[1., 0.], &[1., 1.]]);
        assert_eq!(salience_series(&turn, &diag).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn total_salience_is_additive() {
        let eye = SemanticMetric::identity(2);
        let pts: Vec<Vec<f64>> = (0..7)
            .map(|t| vec![(t as f64).sin(), (t * t) as f64 * 0.1])
            .collect();
        let whole =
            total_salience(&Trajectory::with_layer_index(pts.clone()).unwrap(), &eye).unwrap();
        let head = total_salience(
            &Trajectory::with_layer_index(pts[..4].to_vec()).unwrap(),
            &eye,
        )
        .unwrap();
        let tail = total_salience(
            &Trajectory::with_layer_index(pts[3..].to_vec()).unwrap(),
            &eye,
        )
        .unwrap();
        assert!((whole - head - tail).abs() < 1e-12);
    }

    #[test]
    fn arc_length_examples() {
        let eye = SemanticMetric::identity(1);
        let unit = traj(&[&[0.], &[1.], &[2.], &[3.]]);
        assert_eq!(
            arc_length_params(&unit, &eye).unwrap(),
            vec![0., 1., 2., 3.]
        );
        let twos = traj(&[&[0.], &[2.], &[4.]]);
        assert_eq!(arc_length_params(&twos, &eye).unwrap(), vec![0., 2., 4.]);

        let repeat = traj(&[&[0.], &[1.], &[1.], &[3.]]);
        let s = arc_length_params(&repeat, &eye).unwrap();
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        assert!((s[2] - s[1] - 2.0 * ARC_LENGTH_EPS).abs() < 1e-15);

        let still = traj(&[&[5.], &[5.], &[5.]]);
        let s = arc_length_params(&still, &eye).unwrap();
        assert!(s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn legacy_metric_examples() {
        let eye = SemanticMetric::identity(2);
        let a = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        let close = |got: Vec<Option<f64>>, want: f64| {
            assert!(
                got.iter().all(|c| (c.unwrap() - want).abs() < 1e-15),
                "{got:?}"
            );
        };
        close(cosine_series(&a, &a, &eye).unwrap(), 1.0);
        let neg: Vec<Vec<f64>> = a.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        close(cosine_series(&a, &neg, &eye).unwrap(), -1.0);
        let orth = vec![vec![-2.0, 1.0], vec![0.5, 3.0]];
        assert_eq!(
            cosine_series(&a, &orth, &eye).unwrap(),
            vec![Some(0.0), Some(0.0)]
        );
        let zero = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(cosine_series(&a, &zero, &eye).unwrap()[0], None);

        assert_eq!(
            euclidean_deviation_series(&a, &a, &eye).unwrap(),
            vec![0.0, 0.0]
        );
        let b = vec![vec![-2.0, -2.0], vec![-3.0, 0.5]];
        assert_eq!(
            euclidean_deviation_series(&a, &b, &eye).unwrap(),
            vec![5.0, 0.0]
        );
        let scale = |m: &[Vec<f64>], s: f64| -> Vec<Vec<f64>> {
            m.iter()
                .map(|v| v.iter().map(|x| s * x).collect())
                .collect()
        };
        let dev = euclidean_deviation_series(&scale(&a, -3.0), &scale(&b, -3.0), &eye).unwrap();
        assert!((dev[0] - 15.0).abs() < 1e-12);

        assert!(cosine_series(&a, &a[..1], &eye).is_err());
        assert!(euclidean_deviation_series(&a, &a, &SemanticMetric::identity(3)).is_err());
    }

    #[test]
    fn layer_delta_examples() {
        let turn = traj(&[&[0., 0.], &[1., 0.], &[1., 1.]]);
        assert!((layer_delta_angles(&turn).unwrap()[0].unwrap() - FRAC_PI_2).abs() < 1e-15);
        let straight = traj(&[&[0., 0.], &[1., 1.], &[3., 3.]]);
        assert!(layer_delta_angles(&straight).unwrap()[0].unwrap() < 1e-7);
        let back = traj(&[&[0., 0.], &[1., 0.], &[0., 0.]]);
        assert!((layer_delta_angles(&back).unwrap()[0].unwrap() - PI).abs() < 1e-15);
        let stall = traj(&[&[0., 0.], &[0., 0.], &[1., 0.]]);
        assert_eq!(layer_delta_angles(&stall).unwrap(), vec![None]);
        assert!(layer_delta_angles(&traj(&[&[0.], &[1.]])).is_err());
    }

    #[test]
    fn bend_examples() {
        let v = [1.0, 2.0, -1.0];
        assert_eq!(
            bend_criterion(&v, &[2.0, 4.0, -2.0], DEFAULT_BEND_TOL).unwrap(),
            Bend::ColinearNoBend
        );
        assert_eq!(
            bend_criterion(&v, &[2.0, -1.0, 0.0], DEFAULT_BEND_TOL).unwrap(),
            Bend::Bend
        );
        assert_eq!(
            bend_criterion(&v, &[0.0; 3], DEFAULT_BEND_TOL).unwrap(),
            Bend::ColinearNoBend
        );
        assert!(bend_criterion(&[0.0; 3], &v, DEFAULT_BEND_TOL).is_err());
        assert!(bend_criterion(&v, &[1.0], DEFAULT_BEND_TOL).is_err());
    }

    #[test]
    fn salience_and_curvature_decouple() {
        let eye = SemanticMetric::identity(2);
        // long straight line: large S, zero κ
        let long: Vec<Vec<f64>> = (0..8).map(|t| vec![100.0 * t as f64, 0.0]).collect();
        let long = Trajectory::with_layer_index(long).unwrap();
        assert!(total_salience(&long, &eye).unwrap() > 100.0);
        assert!(curvature_series(&long, &eye, DEFAULT_EPS_V)
            .unwrap()
            .kappa
            .iter()
            .all(|&k| k == 0.0));
        // tight polygon: small S, large κ
        let tight = circle(1e-3, 8, 2);
        assert!(total_salience(&tight, &eye).unwrap() < 0.01);
        assert!(curvature_series(&tight, &eye, DEFAULT_EPS_V)
            .unwrap()
            .kappa
            .iter()
            .all(|&k| k > 100.0));
    }
}
