//! Numerical experiments on the asymptotics of quantization errors.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{QuantError, Result};
use crate::geometry::{ModelManifold, NormalChart, Point};
use crate::measures::{AtomMeasure, DensityKind, MeasureSpec, PresetOptions, RadialCircles};
use crate::parallel::{derive_seed, stream_rng};
use crate::quantizer::{estimate_vnr, EstimateConfig};

/// `Q_r([0,1]) = 1 / ((r+1) 2^r)`.
pub fn q_constant_1d(r: f64) -> f64 {
    1.0 / ((r + 1.0) * 2f64.powf(r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub n: usize,
    pub v: f64,
    /// `N^{r/d} V`.
    pub scaled: f64,
    pub mc_error: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub measure: String,
    pub manifold: ModelManifold,
    pub r: f64,
    pub d: usize,
    pub rows: Vec<ScalingRow>,
    /// `(int h^{d/(d+r)} dvol)^{(d+r)/d}` for densities.
    pub integral_term: Option<f64>,
    /// `Q_r` times the integral term, when `Q_r` is known.
    pub limit: Option<f64>,
    /// Last row's `N^{r/d} V` over `limit`.
    pub last_ratio: Option<f64>,
    /// Sizes skipped as infeasible, with the reason.
    pub skipped: Vec<(usize, String)>,
}

impl ScalingReport {
    pub fn row(&self, n: usize) -> Option<&ScalingRow> {
        self.rows.iter().find(|row| row.n == n)
    }
}

/// `(int h^{d/(d+r)} dvol)^{(d+r)/d}` of a density.
pub fn integral_term(mu: &MeasureSpec, r: f64) -> Option<f64> {
    let MeasureSpec::Density(dm) = mu else { return None };
    let d = dm.manifold().dim() as f64;
    Some(dm.power_integral(d / (d + r)).powf((d + r) / d))
}

/// Multistart estimates of `V_{N,r}` for every `N`, scaled by `N^{r/d}`.
/// `q_constant` supplies `Q_r([0,1]^d)` when known; for `d = 1` the closed
/// form is used.
pub fn scaling_law_run(
    mu: &MeasureSpec,
    name: &str,
    r: f64,
    n_list: &[usize],
    cfg: &EstimateConfig,
    seed: u64,
    q_constant: Option<f64>,
) -> Result<ScalingReport> {
    let m = mu.manifold();
    let d = m.dim();
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &n in &ns {
        match estimate_vnr(mu, n, r, cfg, derive_seed(seed, n as u64)) {
            Ok(q) => {
                let f = (n as f64).powf(r / d as f64);
                rows.push(ScalingRow {
                    n,
                    v: q.distortion,
                    scaled: f * q.distortion,
                    mc_error: f * q.mc_error,
                    converged: q.converged,
                });
            }
            Err(QuantError::Infeasible(why)) => skipped.push((n, why)),
            Err(e) => return Err(e),
        }
    }
    let integral = integral_term(mu, r);
    let q = if d == 1 { Some(q_constant_1d(r)) } else { q_constant };
    let limit = q.zip(integral).map(|(q, i)| q * i);
    let last_ratio = limit.zip(rows.last()).map(|(l, row)| row.scaled / l);
    Ok(ScalingReport {
        measure: name.to_string(),
        manifold: m,
        r,
        d,
        rows,
        integral_term: integral,
        limit,
        last_ratio,
        skipped,
    })
}

/// Ratio of the scaled errors of two reports at `N`.
pub fn plateau_ratio(a: &ScalingReport, b: &ScalingReport, n: usize) -> Option<f64> {
    Some(a.row(n)?.scaled / b.row(n)?.scaled)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QConstantReport {
    pub d: usize,
    pub r: f64,
    /// Smallest `N^{r/d} V` over the table.
    pub estimate: f64,
    pub mc_error: f64,
    pub rows: Vec<ScalingRow>,
}

/// Estimate of `Q_r([0,1]^d)` as the minimum of `N^{r/d} V_{N,r}` of the
/// uniform cube over `n_list`.
pub fn q_constant_estimate(d: usize, r: f64, n_list: &[usize], cfg: &EstimateConfig, seed: u64) -> Result<QConstantReport> {
    if !(1..=2).contains(&d) {
        return Err(QuantError::UnsupportedDimension(d));
    }
    let mu = MeasureSpec::preset("uniform-cube", &PresetOptions { dim: d, ..Default::default() })?;
    let rep = scaling_law_run(&mu, "uniform-cube", r, n_list, cfg, seed, None)?;
    let best = rep
        .rows
        .iter()
        .min_by(|a, b| a.scaled.total_cmp(&b.scaled))
        .ok_or_else(|| QuantError::Infeasible("no feasible N".into()))?;
    Ok(QConstantReport {
        d,
        r,
        estimate: best.scaled,
        mc_error: best.mc_error,
        rows: rep.rows.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    /// Binned L1 distance between the codebook's empirical measure and the
    /// normalized `h^{d/(d+r)}`.
    pub l1: f64,
    /// For `d = 1`: largest gap between sorted codepoints and the target
    /// quantiles at `(i + 1/2) / N`.
    pub quantile_gap: Option<f64>,
}

/// Distance between optimal codebooks and the limit point density
/// `h^{d/(d+r)} / int h^{d/(d+r)}` for product densities on the unit cube
/// (`d` = 1 or 2). Bins: 32 for `d = 1`, 16 x 16 for `d = 2` unless given.
pub fn empirical_convergence_run(
    mu: &MeasureSpec,
    r: f64,
    n_list: &[usize],
    bins: Option<usize>,
    cfg: &EstimateConfig,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    let MeasureSpec::Density(dm) = mu else {
        return Err(QuantError::UnsupportedMeasure("empirical convergence needs a density".into()));
    };
    let DensityKind::PowerBox { exponents } = dm.kind() else {
        return Err(QuantError::UnsupportedMeasure("empirical convergence needs a product density on the unit cube".into()));
    };
    let d = exponents.len();
    if !(1..=2).contains(&d) {
        return Err(QuantError::UnsupportedDimension(d));
    }
    let q = d as f64 / (d as f64 + r);
    let b = bins.unwrap_or(if d == 1 { 32 } else { 16 });
    // target marginal CDF per axis: x^{a q + 1}
    let powers: Vec<f64> = exponents.iter().map(|a| a * q + 1.0).collect();
    let mut rows = Vec::new();
    for &n in n_list {
        let res = estimate_vnr(mu, n, r, cfg, derive_seed(seed, n as u64))?;
        let pts: Vec<&[f64]> = res.codebook.points().iter().map(|p| p.coords()).collect();
        let nb = b.pow(d as u32);
        let mut counts = vec![0.0; nb];
        for p in &pts {
            let mut idx = 0;
            for (k, c) in p.iter().enumerate() {
                let i = ((c * b as f64).floor() as isize).clamp(0, b as isize - 1) as usize;
                idx += i * b.pow(k as u32);
            }
            counts[idx] += 1.0 / n as f64;
        }
        let mut l1 = 0.0;
        for (idx, c) in counts.iter().enumerate() {
            let mut prob = 1.0;
            for (k, pw) in powers.iter().enumerate() {
                let i = (idx / b.pow(k as u32)) % b;
                let (lo, hi) = (i as f64 / b as f64, (i + 1) as f64 / b as f64);
                prob *= hi.powf(*pw) - lo.powf(*pw);
            }
            l1 += (c - prob).abs();
        }
        let quantile_gap = (d == 1).then(|| {
            let mut xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
            xs.sort_by(f64::total_cmp);
            xs.iter()
                .enumerate()
                .map(|(i, x)| (x - ((i as f64 + 0.5) / n as f64).powf(1.0 / powers[0])).abs())
                .fold(0.0, f64::max)
        });
        rows.push(ConvergenceRow { n, l1, quantile_gap });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichRow {
    pub delta: f64,
    /// `sup |d(x, a)^2 / <A(x - a), x - a> - 1|` over sampled pairs.
    pub sup_ratio_dev: f64,
    /// `sup_ratio_dev / delta`.
    pub c_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub rows: Vec<SandwichRow>,
    /// Every halving of `delta` shrinks the sup by at least 0.7.
    pub shrinks_linearly: bool,
    /// `C_hat` grows by at most 25% whenever `delta` halves. A deviation
    /// that fails to shrink would double it.
    pub c_hat_bounded: bool,
}

/// Chart points at which cubes are centred: the chart centre and three
/// off-centre points, where the frozen metric `A` is not the identity.
pub const SANDWICH_CENTERS: [[f64; 2]; 4] = [[0.0, 0.0], [0.5, 0.3], [-0.8, 0.6], [1.0, -0.4]];

/// Compares squared geodesic distances with the frozen chart metric
/// `<A(x - a), x - a>`, `A = g(z)`, for `x` in the cube of side `delta` about
/// `z` and `a` in the cube of side `3 delta` about `z`. Coincident pairs are
/// skipped.
pub fn metric_sandwich_run(m: &ModelManifold, delta_list: &[f64], samples: usize, seed: u64) -> Result<SandwichReport> {
    if m.dim() != 2 {
        return Err(QuantError::UnsupportedDimension(m.dim()));
    }
    let inj = m.injectivity_radius();
    if delta_list.iter().any(|d| !(*d > 0.0) || *d >= inj / 10.0) {
        return Err(QuantError::InvalidParameter("need 0 < delta < injectivity radius / 10".into()));
    }
    let chart = NormalChart::new(*m, &m.origin())?;
    let mut rows = Vec::new();
    for (t, &delta) in delta_list.iter().enumerate() {
        let mut rng = stream_rng(seed, t as u64);
        let mut sup = 0.0f64;
        for z in SANDWICH_CENTERS {
            let a_mat = chart.metric_matrix(&z)?;
            for _ in 0..samples {
                let x: Vec<f64> = z.iter().map(|c| c + delta * (rng.random::<f64>() - 0.5)).collect();
                let a: Vec<f64> = z.iter().map(|c| c + 3.0 * delta * (rng.random::<f64>() - 0.5)).collect();
                let v = [x[0] - a[0], x[1] - a[1]];
                let quad: f64 = (0..2).map(|i| (0..2).map(|j| a_mat[i][j] * v[i] * v[j]).sum::<f64>()).sum();
                if quad == 0.0 {
                    continue;
                }
                let px = chart.to_manifold(&x)?;
                let pa = chart.to_manifold(&a)?;
                let d = m.dist_unchecked(px.coords(), pa.coords());
                sup = sup.max((d * d / quad - 1.0).abs());
            }
        }
        rows.push(SandwichRow {
            delta,
            sup_ratio_dev: sup,
            c_hat: sup / delta,
        });
    }
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| b.delta.total_cmp(&a.delta));
    let shrinks_linearly = sorted.windows(2).all(|w| w[1].sup_ratio_dev <= 0.7 * w[0].sup_ratio_dev);
    let c_hat_bounded = sorted.windows(2).all(|w| w[1].c_hat <= 1.25 * w[0].c_hat);
    Ok(SandwichReport {
        rows,
        shrinks_linearly,
        c_hat_bounded,
    })
}

/// `(e^R / (2R) - M)_+ R`, the shape of the lower bound on `V_{M,r}` of the
/// arclength measure on a circle of radius `R`.
pub fn circle_bound(radius: f64, m: f64, _r: f64) -> Result<f64> {
    if !(radius >= 1.0) {
        return Err(QuantError::InvalidParameter(format!("radius must be >= 1, got {radius}")));
    }
    if !(m >= 0.0) {
        return Err(QuantError::InvalidParameter(format!("M must be >= 0, got {m}")));
    }
    Ok((radius.exp() / (2.0 * radius) - m).max(0.0) * radius)
}

/// `L = floor(e^R / (2R))` arcs of length about `2R` cover the circle.
pub fn circle_arc_count(radius: f64) -> usize {
    (radius.exp() / (2.0 * radius)).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircleBoundRow {
    pub radius: f64,
    pub m: usize,
    /// Estimated `V_{M,r}` of the arclength measure on the circle.
    pub v_hat: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircleShapeReport {
    pub rows: Vec<CircleBoundRow>,
    /// Largest `c` with `v_hat >= c bound` on every row.
    pub fitted_c: f64,
    pub passed: bool,
}

/// Arclength measure on the circle of radius `R` about the origin of the
/// hyperbolic plane, as an equally spaced ring of atoms.
pub fn circle_measure(radius: f64) -> Result<MeasureSpec> {
    let h = ModelManifold::hyperbolic(2);
    let n = ((100.0 * radius.sinh()).ceil() as usize).clamp(16, crate::measures::RING_CAP);
    let w = 2.0 * PI * radius.sinh() / n as f64;
    let (ch, sh) = (radius.cosh(), radius.sinh());
    let atoms = (0..n)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / n as f64;
            (Point::new(vec![ch, sh * t.cos(), sh * t.sin()]), w)
        })
        .collect();
    Ok(MeasureSpec::Atoms(AtomMeasure::new(h, atoms)?))
}

/// Fits one constant `c > 0` with `V_{M,r}(circle_R) >= c (e^R/(2R) - M)_+ R`
/// over the grid of radii and sizes.
pub fn circle_shape_check(radii: &[f64], sizes: &[usize], r: f64, cfg: &EstimateConfig, seed: u64) -> Result<CircleShapeReport> {
    let mut rows = Vec::new();
    for &radius in radii {
        let mu = circle_measure(radius)?;
        for &m in sizes {
            let q = estimate_vnr(&mu, m, r, cfg, derive_seed(seed, (radius * 1000.0) as u64 ^ (m as u64) << 32))?;
            rows.push(CircleBoundRow {
                radius,
                m,
                v_hat: q.distortion,
                bound: circle_bound(radius, m as f64, r)?,
            });
        }
    }
    let fitted_c = rows
        .iter()
        .filter(|row| row.bound > 0.0)
        .map(|row| row.v_hat / row.bound)
        .fold(f64::INFINITY, f64::min);
    let passed = fitted_c.is_finite() && fitted_c > 0.0;
    Ok(CircleShapeReport { rows, fitted_c, passed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleRow {
    pub n: usize,
    pub v: f64,
    /// `N^r V_{N^2,r}`.
    pub scaled: f64,
    pub mc_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleReport {
    pub epsilon: f64,
    pub r: f64,
    pub k_max: usize,
    pub rows: Vec<CounterexampleRow>,
    /// Least-squares slope of `log(N^r V)` against `log N`.
    pub growth_exponent: f64,
    pub strictly_increasing: bool,
    pub growth_ratio: f64,
    /// Error bars of the first and last rows do not overlap.
    pub separated: bool,
    pub passed: bool,
}

/// `N^r V_{N^2,r}` for the weighted circles in the hyperbolic plane.
/// Requires `0 < epsilon < r/4` and `k_max >= 10`. Passes when the sequence
/// increases strictly, grows by a factor of at least 4, and the first and
/// last error bars are disjoint.
pub fn counterexample_run(
    epsilon: f64,
    r: f64,
    k_max: usize,
    n_list: &[usize],
    cfg: &EstimateConfig,
    seed: u64,
) -> Result<CounterexampleReport> {
    if !(epsilon > 0.0 && epsilon < r / 4.0) {
        return Err(QuantError::InvalidParameter(format!("need 0 < epsilon < r/4, got epsilon = {epsilon}, r = {r}")));
    }
    if k_max < 10 {
        return Err(QuantError::InvalidParameter(format!("need k_max >= 10, got {k_max}")));
    }
    let mu = MeasureSpec::RadialCircles(RadialCircles::new(epsilon, k_max)?);
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut rows = Vec::new();
    for &n in &ns {
        let q = estimate_vnr(&mu, n * n, r, cfg, derive_seed(seed, n as u64))?;
        let f = (n as f64).powf(r);
        rows.push(CounterexampleRow {
            n,
            v: q.distortion,
            scaled: f * q.distortion,
            mc_error: f * q.mc_error,
        });
    }
    let strictly_increasing = rows.windows(2).all(|w| w[1].scaled > w[0].scaled);
    let (first, last) = (rows.first(), rows.last());
    let growth_ratio = match (first, last) {
        (Some(a), Some(b)) if a.scaled > 0.0 => b.scaled / a.scaled,
        _ => f64::NAN,
    };
    let separated = match (first, last) {
        (Some(a), Some(b)) => b.scaled - b.mc_error > a.scaled + a.mc_error,
        _ => false,
    };
    let growth_exponent = log_slope(&rows.iter().map(|row| (row.n as f64, row.scaled)).collect::<Vec<_>>());
    Ok(CounterexampleReport {
        epsilon,
        r,
        k_max,
        passed: strictly_increasing && growth_ratio >= 4.0 && separated,
        rows,
        growth_exponent,
        strictly_increasing,
        growth_ratio,
        separated,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(_, y)| *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
