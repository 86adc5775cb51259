//! Polar codebooks: a one-dimensional optimal quantizer of the distance to
//! a base point, crossed with a covering set of directions.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{QuantError, Result};
use crate::geometry::{ManifoldKind, Point};
use crate::measures::{MeasureSpec, MomentReport};
use crate::parallel::{derive_seed, map_chunks, stream_rng, CHUNK};
use crate::quant1d::{lloyd_1d, running_max_stabilizes, Law1D, Lloyd1dConfig};
use crate::quantizer::{distortion, Codebook};

/// Minimum number of random test directions for a measured covering
/// constant.
pub const MIN_TEST_DIRECTIONS: usize = 100_000;
/// Slack of the pointwise distance estimate.
pub const ESTIMATE_SLACK: f64 = 1e-8;

/// Angle between two unit vectors, accurate at every separation.
pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let (mut dm, mut dp) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dm += (x - y) * (x - y);
        dp += (x + y) * (x + y);
    }
    2.0 * dm.sqrt().atan2(dp.sqrt())
}

/// `N^{d-1}` unit directions of `R^d` with covering radius at most
/// `covering_constant / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    pub directions: Vec<Vec<f64>>,
    pub covering_constant: f64,
    /// Largest angular distance to the nearest direction (measured on test
    /// directions for `d = 3`, exact for `d = 2`).
    pub covering_radius: f64,
}

/// Equally spaced angles for `d = 2`; a Fibonacci lattice of `N^2` points
/// for `d = 3`, whose covering radius is measured on random test
/// directions.
pub fn angular_grid(d: usize, n: usize, seed: u64) -> Result<AngularGrid> {
    if n == 0 {
        return Err(QuantError::InvalidParameter("N must be >= 1".into()));
    }
    match d {
        2 => {
            let directions = (0..n)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / n as f64;
                    vec![t.cos(), t.sin()]
                })
                .collect();
            Ok(AngularGrid {
                directions,
                covering_constant: PI,
                covering_radius: PI / n as f64,
            })
        }
        3 => {
            let count = n * n;
            let golden = PI * (3.0 - 5f64.sqrt());
            let directions: Vec<Vec<f64>> = (0..count)
                .map(|k| {
                    let z = 1.0 - (2 * k + 1) as f64 / count as f64;
                    let rho = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * k as f64;
                    vec![rho * phi.cos(), rho * phi.sin(), z]
                })
                .collect();
            let tests = MIN_TEST_DIRECTIONS.max(10 * count);
            let parts = map_chunks(tests, CHUNK, |j, range| {
                let mut rng = stream_rng(seed, j as u64);
                let mut worst = 0.0f64;
                for _ in range {
                    let g: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let nrm = crate::geometry::dot(&g, &g).sqrt();
                    let t: Vec<f64> = g.iter().map(|c| c / nrm).collect();
                    let near = directions.iter().map(|dir| angle(&t, dir)).fold(f64::INFINITY, f64::min);
                    worst = worst.max(near);
                }
                worst
            });
            let covering_radius = parts.into_iter().fold(0.0, f64::max);
            Ok(AngularGrid {
                directions,
                covering_constant: covering_radius * n as f64,
                covering_radius,
            })
        }
        other => Err(QuantError::UnsupportedDimension(other)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarCodebook {
    pub base: Point,
    /// Nondecreasing radii; repeated when the radial law has fewer atoms
    /// than requested points.
    pub radii: Vec<f64>,
    /// Directions in frame coordinates at the base point.
    pub directions: Vec<Vec<f64>>,
    /// Points `exp_{x0}(rho_i theta_k)`, radius-major.
    pub codebook: Codebook,
    pub covering_constant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarOptions {
    /// Sample size of the radial law for densities.
    pub radial_n: usize,
    /// Sample size of distortion evaluation for densities.
    pub eval_n: usize,
}

impl Default for PolarOptions {
    fn default() -> Self {
        PolarOptions {
            radial_n: 200_000,
            eval_n: 1_000_000,
        }
    }
}

/// Builds the `N^d`-point polar codebook of `mu` about `x0`.
pub fn build_polar_codebook(mu: &MeasureSpec, x0: &Point, n: usize, r: f64, opts: &PolarOptions, seed: u64) -> Result<PolarCodebook> {
    let m = mu.manifold();
    m.check_point(x0)?;
    let grid = angular_grid(m.dim(), n, derive_seed(seed, 11))?;
    let law = mu.pushforward_radial(x0, opts.radial_n, derive_seed(seed, 12))?;
    let max_rho = law.locations().last().copied().unwrap_or(0.0);
    if m.kind() == ManifoldKind::Sphere && max_rho >= PI * m.scale() {
        return Err(QuantError::Domain("measure reaches the cut locus of the base point".into()));
    }
    let distinct = law.len();
    let law = Law1D::Discrete(law);
    let mut radii = lloyd_1d(&law, n.min(distinct), r, &Lloyd1dConfig::default())?.points;
    while radii.len() < n {
        radii.push(*radii.last().unwrap());
    }
    if m.kind() == ManifoldKind::Sphere {
        radii.iter_mut().for_each(|rho| *rho = rho.min(PI * m.scale()));
    }
    let frame = m.tangent_frame(x0.coords());
    let mut points = Vec::with_capacity(radii.len() * grid.directions.len());
    for &rho in &radii {
        for dir in &grid.directions {
            points.push(Point::new(m.polar_point(x0.coords(), &frame, rho, dir)));
        }
    }
    Ok(PolarCodebook {
        base: x0.clone(),
        radii,
        directions: grid.directions,
        codebook: Codebook::new(m, points)?,
        covering_constant: grid.covering_constant,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarBoundRow {
    pub n: usize,
    /// `F_{N^d,r}` of the polar codebook.
    pub distortion: f64,
    /// `N^r F_{N^d,r}`.
    pub scaled: f64,
    pub mc_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarBoundReport {
    pub rows: Vec<PolarBoundRow>,
    pub moments: MomentReport,
    /// `1 + I1 + I2`.
    pub moment_sum: f64,
    pub stable: bool,
}

/// Distortion of the polar codebooks for each `N`, scaled by `N^r`, next to
/// the moment sum `1 + I1 + I2`. The run is stable when the maximum over the
/// second half of the sequence is at most 1.05 times the maximum over the
/// first half.
pub fn upper_bound_report(
    mu: &MeasureSpec,
    x0: &Point,
    r: f64,
    delta: f64,
    n_list: &[usize],
    opts: &PolarOptions,
    seed: u64,
) -> Result<PolarBoundReport> {
    let moments = mu.moment_report(x0, r, delta, opts.eval_n, derive_seed(seed, 13))?;
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in &ns {
        let pc = build_polar_codebook(mu, x0, n, r, opts, seed)?;
        let (v, err) = distortion(mu, &pc.codebook, r, opts.eval_n, derive_seed(seed, 14))?;
        let f = (n as f64).powf(r);
        rows.push(PolarBoundRow {
            n,
            distortion: v,
            scaled: f * v,
            mc_error: f * err,
        });
    }
    let seq: Vec<f64> = rows.iter().map(|row| row.scaled).collect();
    Ok(PolarBoundReport {
        stable: running_max_stabilizes(&seq, 1.05),
        moment_sum: moments.moment_sum(),
        moments,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateCheck {
    pub pairs: usize,
    pub violations: usize,
    /// Largest `d(x, x_ik) - (A(rho) angle + |rho - rho_i|)`.
    pub max_excess: f64,
}

/// Checks `d(x, x_ik) <= A(rho) angle(theta, theta_k) + |rho - rho_i|` for
/// `samples` draws `x = exp_{x0}(rho theta)` of `mu` against every point
/// of the codebook.
pub fn distance_estimate_check(mu: &MeasureSpec, pc: &PolarCodebook, samples: usize, seed: u64) -> Result<EstimateCheck> {
    let m = mu.manifold();
    let base = pc.base.coords().to_vec();
    let frame = m.tangent_frame(&base);
    let pts = mu.sample_flat(samples, seed)?;
    let amb = m.ambient_dim();
    let codes: Vec<(f64, &Vec<f64>, &[f64])> = {
        let per = pc.directions.len();
        pc.codebook
            .points()
            .iter()
            .enumerate()
            .map(|(idx, p)| (pc.radii[idx / per], &pc.directions[idx % per], p.coords()))
            .collect()
    };
    let parts = map_chunks(samples, CHUNK, |_, range| {
        let mut out = (0usize, 0usize, f64::NEG_INFINITY);
        for i in range {
            let x = &pts[i * amb..(i + 1) * amb];
            let Ok((rho, dir)) = m.polar_coords(&base, &frame, x) else {
                continue;
            };
            let a = m.a_factor_unchecked(rho);
            for (rho_i, theta_k, y) in &codes {
                let ang = if rho == 0.0 { 0.0 } else { angle(&dir, theta_k) };
                let excess = m.dist_unchecked(x, y) - (a * ang + (rho - rho_i).abs());
                out.0 += 1;
                if excess > ESTIMATE_SLACK {
                    out.1 += 1;
                }
                out.2 = out.2.max(excess);
            }
        }
        out
    });
    let mut total = EstimateCheck {
        pairs: 0,
        violations: 0,
        max_excess: f64::NEG_INFINITY,
    };
    for (p, v, e) in parts {
        total.pairs += p;
        total.violations += v;
        total.max_excess = total.max_excess.max(e);
    }
    Ok(total)
}
