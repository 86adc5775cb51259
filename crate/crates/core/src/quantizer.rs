//! Codebooks on a model manifold: nearest-point assignment, optimal
//! weights, distortion, and Lloyd iteration with geodesic centroids.
//!
//! Assignment compares monotone surrogates of the geodesic distance
//! (squared differences, squared chords, `sinh^2(d/2s)`) with a strict `<`,
//! so ties go to the lowest index. Lloyd runs keep Hamerly-style distance
//! bounds so most samples skip the full scan once codepoints settle.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;

use crate::error::{QuantError, Result};
use crate::geometry::{ManifoldKind, ModelManifold, Point, TangentCoords};
use crate::measures::{AtomMeasure, MeasureSpec};
use crate::parallel::{derive_seed, map_chunks, stream_rng, CompensatedSum, WeightedMoments, CHUNK};
use crate::quant1d::{lloyd_1d, DiscreteLaw, Lloyd1dConfig};

/// Tolerance on `|sum weights - total mass|`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// An ordered set of codepoints with optional cell masses.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    manifold: ModelManifold,
    points: Vec<Point>,
    weights: Option<Vec<f64>>,
}

impl Codebook {
    pub fn new(manifold: ModelManifold, points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(QuantError::InvalidParameter("codebook needs at least one point".into()));
        }
        for p in &points {
            manifold.check_point(p)?;
        }
        Ok(Codebook {
            manifold,
            points,
            weights: None,
        })
    }

    /// Codebook from flat coordinates, `ambient_dim` values per point.
    pub fn from_flat(manifold: ModelManifold, flat: &[f64]) -> Result<Self> {
        let a = manifold.ambient_dim();
        Self::new(manifold, flat.chunks_exact(a).map(|c| Point::new(c.to_vec())).collect())
    }

    pub fn with_weights(mut self, weights: Vec<f64>, total_mass: f64) -> Result<Self> {
        if weights.len() != self.points.len() {
            return Err(QuantError::DimensionMismatch {
                expected: self.points.len(),
                got: weights.len(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (sum - total_mass).abs() > WEIGHT_SUM_TOL * total_mass.max(1.0) {
            return Err(QuantError::InvalidParameter(format!(
                "weights must be nonnegative and sum to {total_mass}, got {sum}"
            )));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn manifold(&self) -> &ModelManifold {
        &self.manifold
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.coords().iter().copied()).collect()
    }
}

/// Points in the form used by the distance surrogates. Hyperbolic rows hold
/// `(radius, sinh radius, unit spatial direction)`.
#[derive(Debug, Clone)]
struct Prepared {
    kind: ManifoldKind,
    scale: f64,
    stride: usize,
    data: Vec<f64>,
}

impl Prepared {
    fn new(m: &ModelManifold, flat: &[f64]) -> Self {
        let amb = m.ambient_dim();
        match m.kind() {
            ManifoldKind::Hyperbolic => {
                let d = m.dim();
                let stride = d + 2;
                let mut data = Vec::with_capacity(flat.len() / amb * stride);
                for x in flat.chunks_exact(amb) {
                    let nrm = crate::geometry::dot(&x[1..], &x[1..]).sqrt();
                    let sh = nrm / m.scale();
                    data.push(sh.asinh());
                    data.push(sh);
                    if nrm > 0.0 {
                        data.extend(x[1..].iter().map(|c| c / nrm));
                    } else {
                        data.extend(std::iter::repeat_n(0.0, d));
                    }
                }
                Prepared {
                    kind: m.kind(),
                    scale: m.scale(),
                    stride,
                    data,
                }
            }
            _ => Prepared {
                kind: m.kind(),
                scale: m.scale(),
                stride: amb,
                data: flat.to_vec(),
            },
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.stride..(i + 1) * self.stride]
    }

    fn len(&self) -> usize {
        self.data.len() / self.stride
    }

    /// Monotone surrogate of the distance between two prepared rows.
    #[inline]
    fn key(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            ManifoldKind::Hyperbolic => {
                let h = (0.5 * (a[0] - b[0])).sinh();
                let ang: f64 = a[2..].iter().zip(&b[2..]).map(|(x, y)| (x - y) * (x - y)).sum();
                h * h + 0.25 * a[1] * b[1] * ang
            }
            _ => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        }
    }

    #[inline]
    fn key_to_dist(&self, k: f64) -> f64 {
        let s = self.scale;
        match self.kind {
            ManifoldKind::Euclidean => k.sqrt(),
            ManifoldKind::Sphere => 2.0 * s * k.sqrt().atan2((4.0 * s * s - k).max(0.0).sqrt()),
            ManifoldKind::Hyperbolic => 2.0 * s * k.sqrt().asinh(),
        }
    }

    /// Nearest row of `self` to `x`: index, distance and distance to the
    /// runner-up (infinite for a single row).
    #[inline]
    fn nearest_two(&self, x: &[f64]) -> (usize, f64, f64) {
        let mut best = (0, f64::INFINITY);
        let mut second = f64::INFINITY;
        for j in 0..self.len() {
            let k = self.key(x, self.row(j));
            if k < best.1 {
                second = best.1;
                best = (j, k);
            } else if k < second {
                second = k;
            }
        }
        (best.0, self.key_to_dist(best.1), self.key_to_dist(second))
    }
}

/// A weighted point cloud: atoms of a measure or a Monte-Carlo sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Cloud {
    manifold: ModelManifold,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl Cloud {
    pub fn new(manifold: ModelManifold, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let amb = manifold.ambient_dim();
        if coords.len() != weights.len() * amb || weights.is_empty() {
            return Err(QuantError::DimensionMismatch {
                expected: weights.len() * amb,
                got: coords.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(QuantError::InvalidParameter("cloud weights must be finite and >= 0".into()));
        }
        Ok(Cloud {
            manifold,
            coords,
            weights,
        })
    }

    /// The atoms of an atomic measure.
    pub fn from_atoms(a: &AtomMeasure) -> Self {
        Cloud {
            manifold: *a.manifold(),
            coords: a.coords().to_vec(),
            weights: a.masses().to_vec(),
        }
    }

    /// `n` draws from `mu`, each carrying mass `total_mass / n`.
    pub fn from_sample(mu: &MeasureSpec, n: usize, seed: u64) -> Result<Self> {
        let coords = mu.sample_flat(n, seed)?;
        let w = mu.total_mass() / n as f64;
        Ok(Cloud {
            manifold: mu.manifold(),
            coords,
            weights: vec![w; n],
        })
    }

    /// Exact atoms where the measure is atomic (circles become rings),
    /// otherwise a sample of size `n`.
    pub fn for_evaluation(mu: &MeasureSpec, n: usize, seed: u64) -> Result<(Self, bool)> {
        Ok(match mu {
            MeasureSpec::Atoms(a) => (Self::from_atoms(a), true),
            MeasureSpec::RadialCircles(c) => {
                let (coords, weights) = c.ring_atoms();
                (Self::new(c.manifold(), coords, weights)?, true)
            }
            MeasureSpec::Density(_) => (Self::from_sample(mu, n, seed)?, false),
        })
    }

    pub fn manifold(&self) -> &ModelManifold {
        &self.manifold
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn row(&self, i: usize) -> &[f64] {
        let a = self.manifold.ambient_dim();
        &self.coords[i * a..(i + 1) * a]
    }

    /// Number of distinct points (exact coordinate equality).
    pub fn distinct(&self) -> usize {
        let a = self.manifold.ambient_dim();
        let mut rows: Vec<&[f64]> = self.coords.chunks_exact(a).collect();
        rows.sort_by(|x, y| x.iter().zip(y.iter()).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        rows.dedup();
        rows.len()
    }
}

fn check_r(r: f64) -> Result<()> {
    if !(r >= 1.0 && r.is_finite()) {
        return Err(QuantError::InvalidParameter(format!("order r must be >= 1, got {r}")));
    }
    Ok(())
}

fn check_manifold(a: &ModelManifold, b: &ModelManifold) -> Result<()> {
    if a != b {
        return Err(QuantError::InvalidParameter(format!(
            "manifold mismatch: {}({}) vs {}({})",
            a.kind().name(),
            a.dim(),
            b.kind().name(),
            b.dim()
        )));
    }
    Ok(())
}

/// Index of the codepoint nearest to `x`; ties go to the lowest index.
pub fn assign(cb: &Codebook, x: &Point) -> Result<usize> {
    cb.manifold.check_point(x)?;
    let codes = Prepared::new(&cb.manifold, &cb.flat());
    let q = Prepared::new(&cb.manifold, x.coords());
    Ok(codes.nearest_two(q.row(0)).0)
}

/// Per-cell masses and the weighted distortion of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudEvaluation {
    pub cell_mass: Vec<f64>,
    pub moments: WeightedMoments,
}

/// Distortion of `codes` (flat) on a cloud with per-cell masses.
pub fn evaluate_cloud(cloud: &Cloud, codes: &[f64], r: f64) -> CloudEvaluation {
    let m = cloud.manifold;
    let prep_codes = Prepared::new(&m, codes);
    let n_codes = prep_codes.len();
    let amb = m.ambient_dim();
    let parts = map_chunks(cloud.len(), CHUNK, |_, range| {
        let mut mass = vec![CompensatedSum::new(); n_codes];
        let mut mom = WeightedMoments::default();
        let rows = Prepared::new(&m, &cloud.coords[range.start * amb..range.end * amb]);
        for (k, i) in range.enumerate() {
            let (j, d, _) = prep_codes.nearest_two(rows.row(k));
            let w = cloud.weights[i];
            mass[j].add(w);
            mom.push(w, d.powf(r));
        }
        (mass, mom)
    });
    let mut cell = vec![CompensatedSum::new(); n_codes];
    let mut moments = WeightedMoments::default();
    for (mass, mom) in parts {
        for (c, p) in cell.iter_mut().zip(&mass) {
            c.merge(p);
        }
        moments.merge(&mom);
    }
    CloudEvaluation {
        cell_mass: cell.iter().map(|c| c.value()).collect(),
        moments,
    }
}

/// Voronoi cell masses `mu(C_i)`: exact for atomic measures and circles,
/// Monte-Carlo with `n` draws for densities.
pub fn optimal_weights(mu: &MeasureSpec, cb: &Codebook, n: usize, seed: u64) -> Result<Vec<f64>> {
    check_manifold(&mu.manifold(), &cb.manifold)?;
    let (cloud, _) = Cloud::for_evaluation(mu, n, seed)?;
    Ok(evaluate_cloud(&cloud, &cb.flat(), 2.0).cell_mass)
}

/// `F_{N,r}` of a codebook with its standard error (zero when exact).
pub fn distortion(mu: &MeasureSpec, cb: &Codebook, r: f64, n: usize, seed: u64) -> Result<(f64, f64)> {
    check_r(r)?;
    check_manifold(&mu.manifold(), &cb.manifold)?;
    let (cloud, exact) = Cloud::for_evaluation(mu, n, seed)?;
    let ev = evaluate_cloud(&cloud, &cb.flat(), r);
    let err = if exact { 0.0 } else { ev.moments.standard_error() };
    Ok((ev.moments.total(), err))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LloydConfig {
    /// Stop when the relative distortion decrease falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative move (against the cell's spread) that ends a centroid solve.
    pub frechet_tol: f64,
    pub frechet_max_iter: usize,
}

impl Default for LloydConfig {
    fn default() -> Self {
        LloydConfig {
            tol: 1e-6,
            max_iter: 300,
            frechet_tol: 1e-10,
            frechet_max_iter: 50,
        }
    }
}

/// Per-cell partial sums of one centroid pass, in tangent coordinates at
/// the cell's evaluation point.
#[derive(Clone)]
struct CellSums {
    obj: CompensatedSum,
    /// `sum w d^{r-2}`. The Hessian terms only shape the step, so they are
    /// summed without compensation.
    gw: f64,
    /// `sum w d^{r-2} log_c x`.
    glog: Vec<CompensatedSum>,
    /// `sum w d^{r-2} kappa(d)`.
    hdiag: f64,
    /// `sum w d^{r-2} (r - 1 - kappa(d)) u u^T`, row-major.
    hrank: Vec<f64>,
}

/// Perpendicular Hessian factor of `d^2 / 2`: `t coth t`, `t cot t` or 1
/// with `t = d / s`.
fn jacobi_kappa(m: &ModelManifold, d: f64) -> f64 {
    let t = d / m.scale();
    match m.kind() {
        ManifoldKind::Euclidean => 1.0,
        ManifoldKind::Hyperbolic if t < 1e-4 => 1.0 + t * t / 3.0,
        ManifoldKind::Hyperbolic => t / t.tanh(),
        ManifoldKind::Sphere if t < 1e-4 => 1.0 - t * t / 3.0,
        ManifoldKind::Sphere => t / t.tan(),
    }
}

/// Solves `h x = g` by Cholesky; `None` unless `h` is positive definite.
fn cholesky_solve(h: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let n = g.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = h[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 1e-14 * h[i * n + i].abs()) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (g[i] - s) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * y[k]).sum();
        y[i] = (y[i] - s) / l[i * n + i];
    }
    y.iter().all(|v| v.is_finite()).then_some(y)
}

/// Moves every active codepoint towards the `r`-Frechet mean of its cell.
///
/// All cells iterate in lockstep with one pass over the cloud per step.
/// The step at `c` is a Riemannian Newton step on `sum w d(c, x)^r`, with
/// the Hessian in closed form from the Jacobi fields of the model space.
/// Where that Hessian is not positive definite the Weiszfeld direction
/// `sum w d^{r-2} log_c x / sum w d^{r-2}` is used instead. A step is only
/// accepted when the cell objective does not increase; otherwise it is
/// halved. Samples on the cut locus of `c` count in the objective but not
/// in the step. Returns the cell masses and which cells reached the
/// tolerance.
fn frechet_update(
    cloud: &Cloud,
    rows: &Prepared,
    assignment: &[usize],
    centers: &mut [f64],
    active: &[bool],
    r: f64,
    cfg: &LloydConfig,
) -> (Vec<f64>, Vec<bool>) {
    let m = cloud.manifold;
    let amb = m.ambient_dim();
    let dim = m.dim();
    let n_codes = centers.len() / amb;
    let mut mass = vec![0.0; n_codes];
    for (a, w) in assignment.iter().zip(&cloud.weights) {
        mass[*a] += w;
    }
    let mut settled: Vec<bool> = (0..n_codes).map(|a| !active[a] || mass[a] <= 0.0).collect();
    let mut done = settled.clone();
    let mut fc = vec![f64::NAN; n_codes];
    let mut step = vec![0.0; n_codes * amb];
    let mut eta = vec![1.0f64; n_codes];
    // evaluation point of every cell: the centre or a proposal
    let mut eval = centers.to_vec();
    let mut proposing = vec![false; n_codes];
    let empty = CellSums {
        obj: CompensatedSum::new(),
        gw: 0.0,
        glog: vec![CompensatedSum::new(); dim],
        hdiag: 0.0,
        hrank: vec![0.0; dim * dim],
    };

    for _ in 0..cfg.frechet_max_iter {
        if done.iter().all(|d| *d) {
            break;
        }
        let charts: Vec<Option<TangentCoords>> = (0..n_codes)
            .map(|a| (!done[a]).then(|| TangentCoords::new(&m, &eval[a * amb..(a + 1) * amb])))
            .collect();
        let prep = Prepared::new(&m, &eval);
        let parts = map_chunks(cloud.len(), CHUNK, |_, range| {
            let mut sums = vec![empty.clone(); n_codes];
            let mut v = vec![0.0; amb];
            let mut y = vec![0.0; dim];
            for i in range {
                let a = assignment[i];
                let Some(chart) = &charts[a] else { continue };
                let x = cloud.row(i);
                let c = &eval[a * amb..(a + 1) * amb];
                let w = cloud.weights[i];
                let d = prep.key_to_dist(prep.key(rows.row(i), prep.row(a)));
                let s = &mut sums[a];
                s.obj.add(if r == 2.0 { w * d * d } else { w * d.powf(r) });
                if d == 0.0 || m.log_at_distance(c, x, d, &mut v).is_err() {
                    continue;
                }
                chart.coords(&v, &mut y);
                let g = if r == 2.0 { w } else { w * d.powf(r - 2.0) };
                let kappa = jacobi_kappa(&m, d);
                s.gw += g;
                s.hdiag += g * kappa;
                for (acc, yi) in s.glog.iter_mut().zip(&y) {
                    acc.add(g * yi);
                }
                let f = g * (r - 1.0 - kappa) / (d * d);
                for k in 0..dim {
                    for l in 0..dim {
                        s.hrank[k * dim + l] += f * y[k] * y[l];
                    }
                }
            }
            sums
        });
        let mut total: Vec<CellSums> = parts[0].clone();
        for p in &parts[1..] {
            for (t, s) in total.iter_mut().zip(p) {
                t.obj.merge(&s.obj);
                t.gw += s.gw;
                t.hdiag += s.hdiag;
                for (a, b) in t.glog.iter_mut().zip(&s.glog) {
                    a.merge(b);
                }
                for (a, b) in t.hrank.iter_mut().zip(&s.hrank) {
                    *a += b;
                }
            }
        }

        for a in 0..n_codes {
            if done[a] {
                continue;
            }
            let obj = total[a].obj.value();
            let ca = a * amb..(a + 1) * amb;
            if proposing[a] {
                if obj <= fc[a] {
                    centers[ca.clone()].copy_from_slice(&eval[ca.clone()]);
                    eta[a] = (2.0 * eta[a]).min(1.0);
                } else {
                    eta[a] *= 0.5;
                    if eta[a] < 1e-6 {
                        done[a] = true;
                        eval[ca.clone()].copy_from_slice(&centers[ca.clone()]);
                        continue;
                    }
                    let mut out = vec![0.0; amb];
                    let v: Vec<f64> = step[ca.clone()].iter().map(|s| s * eta[a]).collect();
                    m.exp_unchecked(&centers[ca.clone()], &v, &mut out);
                    eval[ca.clone()].copy_from_slice(&out);
                    continue;
                }
            }
            fc[a] = obj;
            let gw = total[a].gw;
            if gw <= 0.0 {
                done[a] = true;
                settled[a] = true;
                continue;
            }
            let grad: Vec<f64> = total[a].glog.iter().map(|s| s.value()).collect();
            // Hessian of sum w d^r / r: sum w d^{r-2} ((r-1) u u^T + kappa (I - u u^T))
            let mut hess = total[a].hrank.clone();
            let hd = total[a].hdiag;
            for k in 0..dim {
                hess[k * dim + k] += hd;
            }
            let y = cholesky_solve(&hess, &grad).unwrap_or_else(|| grad.iter().map(|g| g / gw).collect());
            let mv = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let spread = (obj / mass[a]).powf(1.0 / r);
            if mv <= cfg.frechet_tol * spread || spread == 0.0 {
                done[a] = true;
                settled[a] = true;
                continue;
            }
            let chart = charts[a].as_ref().expect("chart of an open cell");
            step[ca.clone()].copy_from_slice(&chart.vector(&y));
            let mut out = vec![0.0; amb];
            let v: Vec<f64> = step[ca.clone()].iter().map(|s| s * eta[a]).collect();
            m.exp_unchecked(&centers[ca.clone()], &v, &mut out);
            eval[ca.clone()].copy_from_slice(&out);
            proposing[a] = true;
        }
    }
    (mass, settled)
}

/// Per-sample Voronoi state.
#[derive(Debug, Clone)]
struct Assignment {
    idx: Vec<usize>,
    /// Exact distance to the assigned codepoint.
    dist: Vec<f64>,
    /// Lower bound on the distance to every other codepoint.
    lower: Vec<f64>,
}

fn full_assignment(cloud: &Cloud, rows: &Prepared, codes: &[f64]) -> Assignment {
    let prep = Prepared::new(&cloud.manifold, codes);
    let parts = map_chunks(cloud.len(), CHUNK, |_, range| {
        range.map(|i| prep.nearest_two(rows.row(i))).collect::<Vec<_>>()
    });
    let mut a = Assignment {
        idx: Vec::with_capacity(cloud.len()),
        dist: Vec::with_capacity(cloud.len()),
        lower: Vec::with_capacity(cloud.len()),
    };
    for (j, d, l) in parts.into_iter().flatten() {
        a.idx.push(j);
        a.dist.push(d);
        a.lower.push(l);
    }
    a
}

fn weighted_distortion(cloud: &Cloud, dist: &[f64], r: f64) -> f64 {
    let parts = map_chunks(cloud.len(), CHUNK, |_, range| {
        let mut s = CompensatedSum::new();
        for i in range {
            s.add(cloud.weights[i] * dist[i].powf(r));
        }
        s
    });
    let mut total = CompensatedSum::new();
    for p in &parts {
        total.merge(p);
    }
    total.value()
}

/// Moves empty codepoints onto the samples with the largest contributions
/// `w d^r`; ties go to the lowest sample index.
fn repair_empty(cloud: &Cloud, state: &Assignment, mass: &[f64], centers: &mut [f64], r: f64) {
    let amb = cloud.manifold.ambient_dim();
    let empty: Vec<usize> = (0..mass.len()).filter(|&a| mass[a] <= 0.0).collect();
    if empty.is_empty() {
        return;
    }
    let mut order: Vec<usize> = (0..cloud.len()).filter(|&i| state.dist[i] > 0.0).collect();
    let contrib = |i: usize| cloud.weights[i] * state.dist[i].powf(r);
    order.sort_by(|&i, &j| contrib(j).total_cmp(&contrib(i)).then(i.cmp(&j)));
    let mut taken: Vec<&[f64]> = Vec::new();
    let mut it = order.into_iter();
    for a in empty {
        for i in it.by_ref() {
            let x = cloud.row(i);
            if taken.iter().all(|t| *t != x) {
                centers[a * amb..(a + 1) * amb].copy_from_slice(x);
                taken.push(x);
                break;
            }
        }
    }
}

/// One Lloyd step on a cloud: assign, move every codepoint to its cell's
/// Frechet mean, re-seed empty cells.
pub fn lloyd_step(cloud: &Cloud, cb: &Codebook, r: f64) -> Result<Codebook> {
    check_r(r)?;
    check_manifold(&cloud.manifold, &cb.manifold)?;
    let rows = Prepared::new(&cloud.manifold, &cloud.coords);
    let mut centers = cb.flat();
    let state = full_assignment(cloud, &rows, &centers);
    let active = vec![true; cb.len()];
    let (mass, _) = frechet_update(cloud, &rows, &state.idx, &mut centers, &active, r, &LloydConfig::default());
    repair_empty(cloud, &state, &mass, &mut centers, r);
    Codebook::from_flat(cloud.manifold, &centers)
}

/// Outcome of a Lloyd run on a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    pub codebook: Codebook,
    /// Cloud distortion of the final codebook.
    pub distortion: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cloud distortion after every iteration, starting with the initial
    /// codebook.
    pub history: Vec<f64>,
}

/// Lloyd iteration from `init` until the relative decrease of the cloud
/// distortion drops below `cfg.tol`.
pub fn lloyd(cloud: &Cloud, init: &Codebook, r: f64, cfg: &LloydConfig) -> Result<LloydRun> {
    check_r(r)?;
    check_manifold(&cloud.manifold, &init.manifold)?;
    let m = cloud.manifold;
    let amb = m.ambient_dim();
    let rows = Prepared::new(&m, &cloud.coords);
    let mut centers = init.flat();
    let n_codes = init.len();
    let mut state = full_assignment(cloud, &rows, &centers);
    let mut value = weighted_distortion(cloud, &state.dist, r);
    let mut history = vec![value];
    let mut converged = false;
    let mut iterations = 0;

    // cells whose membership changed since their last Frechet solve
    let mut active = vec![true; n_codes];
    while iterations < cfg.max_iter {
        iterations += 1;
        let old = centers.clone();
        let (mass, settled) = frechet_update(cloud, &rows, &state.idx, &mut centers, &active, r, cfg);
        repair_empty(cloud, &state, &mass, &mut centers, r);
        let old_idx = state.idx.clone();

        let moves: Vec<f64> = (0..n_codes)
            .map(|a| m.dist_unchecked(&old[a * amb..(a + 1) * amb], &centers[a * amb..(a + 1) * amb]))
            .collect();
        let (mut max1, mut arg1, mut max2) = (0.0, usize::MAX, 0.0);
        for (a, &mv) in moves.iter().enumerate() {
            if mv > max1 {
                max2 = max1;
                max1 = mv;
                arg1 = a;
            } else if mv > max2 {
                max2 = mv;
            }
        }
        let prep = Prepared::new(&m, &centers);
        let mut half_sep = vec![f64::INFINITY; n_codes];
        for a in 0..n_codes {
            for b in a + 1..n_codes {
                let d = 0.5 * prep.key_to_dist(prep.key(prep.row(a), prep.row(b)));
                half_sep[a] = half_sep[a].min(d);
                half_sep[b] = half_sep[b].min(d);
            }
        }

        let Assignment { idx, dist, lower } = &mut state;
        idx.par_chunks_mut(CHUNK)
            .zip(dist.par_chunks_mut(CHUNK))
            .zip(lower.par_chunks_mut(CHUNK))
            .enumerate()
            .for_each(|(j, ((idx, dist), lower))| {
                let start = j * CHUNK;
                for k in 0..idx.len() {
                    let x = rows.row(start + k);
                    let a = idx[k];
                    let d = prep.key_to_dist(prep.key(x, prep.row(a)));
                    let l = lower[k] - if a == arg1 { max2 } else { max1 };
                    let bound = half_sep[a].max(l);
                    if d < bound * (1.0 - 1e-12) {
                        dist[k] = d;
                        lower[k] = l;
                    } else {
                        let (b, db, l2) = prep.nearest_two(x);
                        idx[k] = b;
                        dist[k] = db;
                        lower[k] = l2;
                    }
                }
            });

        active = settled.iter().map(|s| !s).collect();
        for (a, b) in old_idx.iter().zip(&state.idx) {
            if a != b {
                active[*a] = true;
                active[*b] = true;
            }
        }
        for (a, mv) in moves.iter().enumerate() {
            if *mv > 0.0 && mass[a] <= 0.0 {
                active[a] = true;
            }
        }
        let new_value = weighted_distortion(cloud, &state.dist, r);
        debug_assert!(
            new_value <= value * (1.0 + 1e-9) + 1e-300,
            "Lloyd distortion increased: {value} -> {new_value}"
        );
        let change = value - new_value;
        value = new_value;
        history.push(value);
        if change <= cfg.tol * value {
            converged = true;
            break;
        }
    }
    Ok(LloydRun {
        codebook: Codebook::from_flat(m, &centers)?,
        distortion: value,
        iterations,
        converged,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateConfig {
    pub restarts: usize,
    /// Sample size of the optimization cloud for non-atomic measures.
    pub opt_n: usize,
    /// Sample size of the evaluation cloud for densities.
    pub eval_n: usize,
    pub lloyd: LloydConfig,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            restarts: 16,
            opt_n: 65_536,
            eval_n: 1_000_000,
            lloyd: LloydConfig::default(),
        }
    }
}

/// Best multistart estimate of `V_{N,r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantResult {
    /// Best codebook, with its Voronoi masses.
    pub codebook: Codebook,
    /// Distortion on the evaluation cloud.
    pub distortion: f64,
    pub mc_error: f64,
    /// Distortion on the optimization cloud.
    pub train_distortion: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
}

/// Estimates `V_{N,r}(mu)` as the best of `cfg.restarts` Lloyd runs, each
/// started from `N` i.i.d. draws of the optimization cloud, and evaluates
/// the winner on a fresh cloud (exact for atoms and circles).
///
/// Densities on the real line are handed to the one-dimensional solver:
/// exactly when the law has closed-form cells, on a sample otherwise.
pub fn estimate_vnr(mu: &MeasureSpec, n_codes: usize, r: f64, cfg: &EstimateConfig, seed: u64) -> Result<QuantResult> {
    check_r(r)?;
    if n_codes == 0 || cfg.restarts == 0 {
        return Err(QuantError::InvalidParameter("need N >= 1 and restarts >= 1".into()));
    }
    let m = mu.manifold();
    let eval_seed = derive_seed(seed, 2);
    if let MeasureSpec::Density(_) = mu {
        if m.kind() == ManifoldKind::Euclidean && m.dim() == 1 {
            return estimate_line(mu, n_codes, r, cfg, seed);
        }
    }
    let cloud = match mu {
        MeasureSpec::Atoms(a) => Cloud::from_atoms(a),
        _ => Cloud::from_sample(mu, cfg.opt_n, derive_seed(seed, 1))?,
    };
    let distinct = cloud.distinct();
    if distinct < n_codes {
        return Err(QuantError::Infeasible(format!(
            "{n_codes} codepoints requested but the optimization cloud has {distinct} distinct points"
        )));
    }
    let picker = WeightedIndex::new(&cloud.weights).map_err(|e| QuantError::InvalidParameter(e.to_string()))?;
    let runs: Vec<Result<LloydRun>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(derive_seed(seed, 3), t as u64);
            let mut init = Vec::with_capacity(n_codes * m.ambient_dim());
            for _ in 0..n_codes {
                init.extend_from_slice(cloud.row(picker.sample(&mut rng)));
            }
            lloyd(&cloud, &Codebook::from_flat(m, &init)?, r, &cfg.lloyd)
        })
        .collect();
    let runs: Vec<LloydRun> = runs.into_iter().collect::<Result<_>>()?;
    let any_converged = runs.iter().any(|run| run.converged);
    let best = runs
        .into_iter()
        .filter(|run| run.converged || !any_converged)
        .reduce(|a, b| if b.distortion < a.distortion { b } else { a })
        .expect("at least one restart");

    let (eval_cloud, exact) = match mu {
        MeasureSpec::Atoms(_) => (cloud, true),
        _ => Cloud::for_evaluation(mu, cfg.eval_n, eval_seed)?,
    };
    let ev = evaluate_cloud(&eval_cloud, &best.codebook.flat(), r);
    let weights = normalized(ev.cell_mass, mu.total_mass());
    Ok(QuantResult {
        codebook: best.codebook.with_weights(weights, mu.total_mass())?,
        distortion: ev.moments.total(),
        mc_error: if exact { 0.0 } else { ev.moments.standard_error() },
        train_distortion: best.distortion,
        iterations: best.iterations,
        converged: best.converged,
        seed,
    })
}

/// Rescales cell masses to sum exactly to `total` (absorbs rounding).
fn normalized(mass: Vec<f64>, total: f64) -> Vec<f64> {
    let s: f64 = mass.iter().sum();
    if s > 0.0 {
        mass.into_iter().map(|w| w * total / s).collect()
    } else {
        mass
    }
}

fn estimate_line(mu: &MeasureSpec, n_codes: usize, r: f64, cfg: &EstimateConfig, seed: u64) -> Result<QuantResult> {
    let m = mu.manifold();
    let total = mu.total_mass();
    let lcfg = Lloyd1dConfig::default();
    if let Some(law) = mu.line_law() {
        let q = lloyd_1d(&law, n_codes, r, &lcfg)?;
        let pts: Vec<Point> = q.points.iter().map(|&t| Point::new(vec![t])).collect();
        let weights: Vec<f64> = cells_of(&q.points).map(|(lo, hi)| total * law.cell_mass(lo, hi)).collect();
        return Ok(QuantResult {
            codebook: Codebook::new(m, pts)?.with_weights(normalized(weights, total), total)?,
            distortion: total * q.value,
            mc_error: 0.0,
            train_distortion: total * q.value,
            iterations: q.iterations,
            converged: q.converged,
            seed,
        });
    }
    let sample = mu.sample_flat(cfg.opt_n, derive_seed(seed, 1))?;
    let law = crate::quant1d::Law1D::Discrete(DiscreteLaw::from_sample(&sample, total)?);
    let q = lloyd_1d(&law, n_codes, r, &lcfg)?;
    let cb = Codebook::from_flat(m, &q.points)?;
    let (eval_cloud, _) = Cloud::for_evaluation(mu, cfg.eval_n, derive_seed(seed, 2))?;
    let ev = evaluate_cloud(&eval_cloud, &q.points, r);
    Ok(QuantResult {
        codebook: cb.with_weights(normalized(ev.cell_mass, total), total)?,
        distortion: ev.moments.total(),
        mc_error: ev.moments.standard_error(),
        train_distortion: q.value,
        iterations: q.iterations,
        converged: q.converged,
        seed,
    })
}

fn cells_of(points: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
    let n = points.len();
    (0..n).map(move |i| {
        let lo = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (points[i - 1] + points[i]) };
        let hi = if i + 1 == n { f64::INFINITY } else { 0.5 * (points[i] + points[i + 1]) };
        (lo, hi)
    })
}

/// Splits `N` points across pieces with masses `alpha` and volumes `vol`:
/// `t_j` is proportional to `(alpha_j vol_j^{r/d})^{d/(d+r)}` and
/// `N_j = floor(t_j N)`.
pub fn allocate_sizes(pieces: &[(f64, f64)], n: usize, r: f64, d: usize) -> Result<Vec<usize>> {
    if pieces.is_empty() {
        return Err(QuantError::InvalidParameter("no pieces to allocate".into()));
    }
    if pieces.iter().any(|(a, v)| !(*a > 0.0 && *v > 0.0)) || d == 0 || !(r > 0.0) {
        return Err(QuantError::InvalidParameter("masses, volumes, r and d must be positive".into()));
    }
    let d = d as f64;
    let raw: Vec<f64> = pieces
        .iter()
        .map(|(a, v)| (a * v.powf(r / d)).powf(d / (d + r)))
        .collect();
    let sum: f64 = raw.iter().sum();
    // the slack absorbs rounding in exact ratios such as 1/3 * 9
    Ok(raw.iter().map(|t| (t / sum * n as f64 + 1e-9).floor() as usize).collect())
}
