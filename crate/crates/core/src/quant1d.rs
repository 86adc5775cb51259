//! Optimal quantization on the real line.
//!
//! A one-dimensional law is either continuous with closed-form cell
//! integrals (uniform, exponential) or a finite weighted set of atoms (an
//! exact pushforward or a Monte-Carlo discretization). Cells of a sorted
//! codebook are split at midpoints of consecutive points; a point exactly at
//! a midpoint belongs to the lower cell.

use std::f64::consts::PI;

use crate::error::{QuantError, Result};
use crate::parallel::CompensatedSum;

/// Default relative distortion-change tolerance.
pub const LLOYD_1D_TOL: f64 = 1e-12;
/// Default iteration cap.
pub const LLOYD_1D_MAX_ITER: usize = 10_000;

/// Finite measure on the real line given by weighted atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    t: Vec<f64>,
    w: Vec<f64>,
    // compensated prefix sums of w, w t, w t^2 as (hi, lo) pairs
    pw: Vec<(f64, f64)>,
    pwt: Vec<(f64, f64)>,
    pwt2: Vec<(f64, f64)>,
}

fn prefix(values: impl Iterator<Item = f64>) -> Vec<(f64, f64)> {
    let mut acc = CompensatedSum::new();
    let mut out = vec![(0.0, 0.0)];
    for v in values {
        acc.add(v);
        let hi = acc.value();
        let lo = {
            // residual between the exact running sum and its rounded value
            let mut tmp = acc;
            tmp.add(-hi);
            tmp.value()
        };
        out.push((hi, lo));
    }
    out
}

#[inline]
fn range(p: &[(f64, f64)], i: usize, j: usize) -> f64 {
    (p[j].0 - p[i].0) + (p[j].1 - p[i].1)
}

impl DiscreteLaw {
    /// Builds a law from `(location, mass)` pairs. Equal locations are
    /// merged and zero masses dropped.
    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut a: Vec<(f64, f64)> = atoms.into_iter().collect();
        if a.iter().any(|(t, w)| !t.is_finite() || !w.is_finite() || *w < 0.0) {
            return Err(QuantError::InvalidParameter(
                "atoms need finite locations and nonnegative finite masses".into(),
            ));
        }
        a.retain(|(_, w)| *w > 0.0);
        if a.is_empty() {
            return Err(QuantError::InvalidParameter("law has no mass".into()));
        }
        a.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut t: Vec<f64> = Vec::with_capacity(a.len());
        let mut w: Vec<f64> = Vec::with_capacity(a.len());
        for (ti, wi) in a {
            if t.last() == Some(&ti) {
                *w.last_mut().unwrap() += wi;
            } else {
                t.push(ti);
                w.push(wi);
            }
        }
        let pw = prefix(w.iter().copied());
        let pwt = prefix(t.iter().zip(&w).map(|(t, w)| w * t));
        let pwt2 = prefix(t.iter().zip(&w).map(|(t, w)| w * t * t));
        Ok(DiscreteLaw { t, w, pw, pwt, pwt2 })
    }

    /// Equal-mass empirical law of a sample.
    pub fn from_sample(sample: &[f64], total_mass: f64) -> Result<Self> {
        if sample.is_empty() {
            return Err(QuantError::InvalidParameter("empty sample".into()));
        }
        let w = total_mass / sample.len() as f64;
        Self::new(sample.iter().map(|&t| (t, w)))
    }

    pub fn locations(&self) -> &[f64] {
        &self.t
    }

    pub fn masses(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Index range of atoms in the half-open cell `(lo, hi]`.
    fn cell(&self, lo: f64, hi: f64) -> (usize, usize) {
        let i0 = if lo == f64::NEG_INFINITY { 0 } else { self.t.partition_point(|&x| x <= lo) };
        let i1 = if hi == f64::INFINITY { self.t.len() } else { self.t.partition_point(|&x| x <= hi) };
        (i0, i1.max(i0))
    }

    fn cost_range(&self, i0: usize, i1: usize, c: f64, r: f64) -> f64 {
        if i0 >= i1 {
            return 0.0;
        }
        if r == 2.0 {
            let wsum = range(&self.pw, i0, i1);
            let s1 = range(&self.pwt, i0, i1);
            let s2 = range(&self.pwt2, i0, i1);
            let mean = s1 / wsum;
            let within = (s2 - s1 * mean).max(0.0);
            within + wsum * (c - mean) * (c - mean)
        } else if r == 1.0 {
            let k = i0 + self.t[i0..i1].partition_point(|&x| x <= c);
            let wl = range(&self.pw, i0, k);
            let sl = range(&self.pwt, i0, k);
            let wr = range(&self.pw, k, i1);
            let sr = range(&self.pwt, k, i1);
            (c * wl - sl + sr - c * wr).max(0.0)
        } else {
            let mut acc = CompensatedSum::new();
            for (t, w) in self.t[i0..i1].iter().zip(&self.w[i0..i1]) {
                acc.add(w * (t - c).abs().powf(r));
            }
            acc.value()
        }
    }

    fn centroid_range(&self, i0: usize, i1: usize, r: f64) -> f64 {
        if r == 2.0 {
            range(&self.pwt, i0, i1) / range(&self.pw, i0, i1)
        } else if r == 1.0 {
            let half = 0.5 * range(&self.pw, i0, i1);
            let base = self.pw[i0].0 + self.pw[i0].1;
            // first atom whose cumulative mass reaches half
            let k = i0 + self.pw[i0 + 1..=i1].partition_point(|p| (p.0 + p.1) - base < half);
            let k = k.min(i1 - 1);
            let cum = range(&self.pw, i0, k + 1);
            if (cum - half).abs() <= 1e-14 * half && k + 1 < i1 {
                0.5 * (self.t[k] + self.t[k + 1])
            } else {
                self.t[k]
            }
        } else {
            let lo = self.t[i0];
            let hi = self.t[i1 - 1];
            golden_section(lo, hi, |c| self.cost_range(i0, i1, c, r))
        }
    }
}

/// A one-dimensional law.
#[derive(Debug, Clone, PartialEq)]
pub enum Law1D {
    /// Uniform probability law on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Exponential probability law with the given rate on `[0, inf)`.
    Exponential { rate: f64 },
    Discrete(DiscreteLaw),
}

impl Law1D {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(QuantError::InvalidParameter(format!("bad interval [{lo}, {hi}]")));
        }
        Ok(Law1D::Uniform { lo, hi })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(QuantError::InvalidParameter(format!("bad rate {rate}")));
        }
        Ok(Law1D::Exponential { rate })
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            Law1D::Discrete(d) => range(&d.pw, 0, d.len()),
            _ => 1.0,
        }
    }

    /// Number of distinct support points, `None` for continuous laws.
    pub fn support_size(&self) -> Option<usize> {
        match self {
            Law1D::Discrete(d) => Some(d.len()),
            _ => None,
        }
    }

    /// `int |t|^p dnu`.
    pub fn abs_moment(&self, p: f64) -> f64 {
        match self {
            Law1D::Uniform { lo, hi } => {
                let f = |t: f64| t.signum() * t.abs().powf(p + 1.0) / (p + 1.0);
                (f(*hi) - f(*lo)) / (hi - lo)
            }
            Law1D::Exponential { rate } => libm::tgamma(p + 1.0) / rate.powf(p),
            Law1D::Discrete(d) => {
                let mut acc = CompensatedSum::new();
                for (t, w) in d.t.iter().zip(&d.w) {
                    acc.add(w * t.abs().powf(p));
                }
                acc.value()
            }
        }
    }

    /// Inverse CDF of a continuous law.
    pub fn quantile(&self, u: f64) -> Option<f64> {
        match self {
            Law1D::Uniform { lo, hi } => Some(lo + u * (hi - lo)),
            Law1D::Exponential { rate } => Some(-(-u).ln_1p() / rate),
            Law1D::Discrete(_) => None,
        }
    }

    /// Mass of the cell `(lo, hi]`.
    /// Density at `t` of a continuous law; `None` for atoms.
    pub fn density(&self, t: f64) -> Option<f64> {
        match self {
            Law1D::Uniform { lo, hi } => Some(if t >= *lo && t <= *hi { 1.0 / (hi - lo) } else { 0.0 }),
            Law1D::Exponential { rate } => Some(if t >= 0.0 { rate * (-rate * t).exp() } else { 0.0 }),
            Law1D::Discrete(_) => None,
        }
    }

    pub fn cell_mass(&self, lo: f64, hi: f64) -> f64 {
        match self {
            Law1D::Uniform { lo: a, hi: b } => {
                let (l, h) = (lo.max(*a), hi.min(*b));
                if h > l { (h - l) / (b - a) } else { 0.0 }
            }
            Law1D::Exponential { rate } => {
                let (l, h) = (lo.max(0.0), hi);
                if h > l { (-rate * l).exp() - (-rate * h).exp() } else { 0.0 }
            }
            Law1D::Discrete(d) => {
                let (i0, i1) = d.cell(lo, hi);
                range(&d.pw, i0, i1)
            }
        }
    }

    /// `int_{(lo, hi]} |t - c|^r dnu(t)`.
    pub fn cell_cost(&self, lo: f64, hi: f64, c: f64, r: f64) -> f64 {
        match self {
            Law1D::Uniform { lo: a, hi: b } => {
                let (l, h) = (lo.max(*a), hi.min(*b));
                if h <= l {
                    return 0.0;
                }
                let p = r + 1.0;
                let raw = if c <= l {
                    (h - c).powf(p) - (l - c).powf(p)
                } else if c >= h {
                    (c - l).powf(p) - (c - h).powf(p)
                } else {
                    (c - l).powf(p) + (h - c).powf(p)
                };
                raw / (p * (b - a))
            }
            Law1D::Exponential { rate } => {
                let l = lo.max(0.0);
                if hi <= l {
                    return 0.0;
                }
                if r == 2.0 {
                    let (mass, mean, var) = exp_cell_stats(*rate, l, hi);
                    mass * (var + (mean - c) * (mean - c))
                } else {
                    exp_cell_cost_quadrature(*rate, l, hi, c, r)
                }
            }
            Law1D::Discrete(d) => {
                let (i0, i1) = d.cell(lo, hi);
                d.cost_range(i0, i1, c, r)
            }
        }
    }

    /// Minimizer of `c -> cell_cost(lo, hi, c, r)`; `None` for an empty cell.
    pub fn cell_centroid(&self, lo: f64, hi: f64, r: f64) -> Option<f64> {
        match self {
            Law1D::Uniform { lo: a, hi: b } => {
                let (l, h) = (lo.max(*a), hi.min(*b));
                (h > l).then(|| {
                    if r == 1.0 || r == 2.0 {
                        0.5 * (l + h)
                    } else {
                        golden_section(l, h, |c| self.cell_cost(lo, hi, c, r))
                    }
                })
            }
            Law1D::Exponential { rate } => {
                let l = lo.max(0.0);
                if hi <= l {
                    return None;
                }
                Some(if r == 2.0 {
                    exp_cell_stats(*rate, l, hi).1
                } else if r == 1.0 {
                    let el = (-rate * l).exp();
                    let eh = if hi.is_finite() { (-rate * hi).exp() } else { 0.0 };
                    -(0.5 * (el + eh)).ln() / rate
                } else {
                    let h = if hi.is_finite() { hi } else { l + 60.0 / rate };
                    golden_section(l, h, |c| self.cell_cost(lo, hi, c, r))
                })
            }
            Law1D::Discrete(d) => {
                let (i0, i1) = d.cell(lo, hi);
                (i1 > i0).then(|| d.centroid_range(i0, i1, r))
            }
        }
    }

    /// Distortion `int min_i |t - p_i|^r dnu` of sorted points.
    pub fn distortion(&self, points: &[f64], r: f64) -> f64 {
        let mut acc = CompensatedSum::new();
        for (i, (lo, hi)) in cells(points).enumerate() {
            acc.add(self.cell_cost(lo, hi, points[i], r));
        }
        acc.value()
    }

    /// Initial codebook: quantiles of the density `f^{1/(1+r)}` for
    /// continuous laws, equal-mass quantiles for atoms.
    fn initial_points(&self, n: usize, r: f64) -> Vec<f64> {
        let u = |i: usize| (i as f64 + 0.5) / n as f64;
        match self {
            Law1D::Uniform { lo, hi } => (0..n).map(|i| lo + u(i) * (hi - lo)).collect(),
            Law1D::Exponential { rate } => {
                let companded = rate / (1.0 + r);
                (0..n).map(|i| -(-u(i)).ln_1p() / companded).collect()
            }
            Law1D::Discrete(d) => {
                if d.len() == n {
                    return d.t.clone();
                }
                let total = range(&d.pw, 0, d.len());
                let mut pts: Vec<f64> = (0..n)
                    .map(|i| {
                        let target = u(i) * total;
                        let k = d.pw[1..].partition_point(|p| p.0 + p.1 < target);
                        d.t[k.min(d.len() - 1)]
                    })
                    .collect();
                pts.dedup();
                pts
            }
        }
    }
}

/// Cells `(b_{i-1}, b_i]` of sorted points.
fn cells(points: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
    let n = points.len();
    (0..n).map(move |i| {
        let lo = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (points[i - 1] + points[i]) };
        let hi = if i + 1 == n { f64::INFINITY } else { 0.5 * (points[i] + points[i + 1]) };
        (lo, hi)
    })
}

/// Mass, mean and variance of the exponential law restricted to `[l, h]`.
fn exp_cell_stats(rate: f64, l: f64, h: f64) -> (f64, f64, f64) {
    let a = rate * l;
    let delta = if h.is_finite() { rate * (h - l) } else { f64::INFINITY };
    let mass = (-a).exp() * if delta.is_finite() { -(-delta).exp_m1() } else { 1.0 };
    // mean and variance of a standard exponential truncated to [0, delta]
    let (m, v) = if !delta.is_finite() {
        (1.0, 1.0)
    } else if delta < 1e-2 {
        let x = 0.5 * delta;
        let x2 = x * x;
        (
            delta / 2.0 - delta * delta / 12.0 + delta.powi(4) / 720.0,
            x2 / 3.0 - x2 * x2 / 15.0 + 2.0 * x2 * x2 * x2 / 189.0,
        )
    } else {
        let x = 0.5 * delta;
        let q = x / x.sinh();
        (1.0 - delta / delta.exp_m1(), 1.0 - q * q)
    };
    (mass, (a + m) / rate, v / (rate * rate))
}

fn exp_cell_cost_quadrature(rate: f64, l: f64, h: f64, c: f64, r: f64) -> f64 {
    let h = if h.is_finite() { h } else { l + 60.0 / rate };
    let f = |t: f64| (t - c).abs().powf(r) * rate * (-rate * t).exp();
    let mut pieces = vec![(l, h)];
    if c > l && c < h {
        pieces = vec![(l, c), (c, h)];
    }
    pieces.into_iter().map(|(a, b)| gauss_legendre(a, b, 16, &f)).sum()
}

/// Composite 20-point Gauss-Legendre quadrature over `panels` panels.
fn gauss_legendre(a: f64, b: f64, panels: usize, f: &impl Fn(f64) -> f64) -> f64 {
    let (x, w) = legendre_nodes(20);
    let width = (b - a) / panels as f64;
    let mut acc = CompensatedSum::new();
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let mid = lo + 0.5 * width;
        for (xi, wi) in x.iter().zip(&w) {
            acc.add(0.5 * width * wi * f(mid + 0.5 * width * xi));
        }
    }
    acc.value()
}

fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`, to a
/// bracket of `1e-12` of the interval width.
pub fn golden_section(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    if !(hi > lo) {
        return lo;
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let tol = 1e-12 * (hi - lo);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    [(f(lo), lo), (f(hi), hi), (f(mid), mid)]
        .into_iter()
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, x)| x)
        .unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lloyd1dConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Lloyd1dConfig {
    fn default() -> Self {
        Lloyd1dConfig {
            tol: LLOYD_1D_TOL,
            max_iter: LLOYD_1D_MAX_ITER,
        }
    }
}

/// Result of a one-dimensional Lloyd run.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer1D {
    /// Strictly increasing codebook.
    pub points: Vec<f64>,
    /// Distortion of `points`.
    pub value: f64,
    pub r: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Distortion after every iteration, starting with the initial codebook.
    pub history: Vec<f64>,
}

fn check_r(r: f64) -> Result<()> {
    if !(r >= 1.0 && r.is_finite()) {
        return Err(QuantError::InvalidParameter(format!("order r must be >= 1, got {r}")));
    }
    Ok(())
}

/// Atom with the largest contribution `w |t - p|^r` that is not already a
/// codepoint.
fn worst_atom(d: &DiscreteLaw, points: &[f64], r: f64) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&t, &w) in d.t.iter().zip(&d.w) {
        let k = points.partition_point(|&p| p < t);
        let mut dist = f64::INFINITY;
        if k < points.len() {
            dist = dist.min(points[k] - t);
        }
        if k > 0 {
            dist = dist.min(t - points[k - 1]);
        }
        if dist == 0.0 {
            continue;
        }
        let c = w * dist.powf(r);
        if best.is_none_or(|(bc, _)| c > bc) {
            best = Some((c, t));
        }
    }
    best.map(|(_, t)| t)
}

fn insert_sorted(points: &mut Vec<f64>, t: f64) {
    let k = points.partition_point(|&p| p < t);
    points.insert(k, t);
}

/// Lloyd iteration for the `N`-point quantizer of order `r`.
///
/// Each step moves every point to the `r`-centroid of its cell (mean for
/// `r = 2`, median for `r = 1`, golden-section search otherwise). A point
/// is only moved when that does not raise its cell cost. For `r = 2` on a
/// continuous law a Newton step is tried as well and kept when it does
/// better, so the distortion never increases. Empty cells of atomic laws are re-seeded at the atom
/// with the largest contribution.
pub fn lloyd_1d(nu: &Law1D, n: usize, r: f64, cfg: &Lloyd1dConfig) -> Result<Quantizer1D> {
    check_r(r)?;
    if n == 0 {
        return Err(QuantError::InvalidParameter("N must be >= 1".into()));
    }
    if let Some(m) = nu.support_size() {
        if n > m {
            return Err(QuantError::Infeasible(format!(
                "{n} points requested but the law has only {m} distinct atoms"
            )));
        }
    }
    let mut points = nu.initial_points(n, r);
    if let Law1D::Discrete(d) = nu {
        while points.len() < n {
            let t = worst_atom(d, &points, r).expect("feasible law has an uncovered atom");
            insert_sorted(&mut points, t);
        }
    }
    lloyd_1d_from(nu, &points, r, cfg)
}

/// Lloyd iteration as in [`lloyd_1d`], started from the given strictly
/// increasing points.
pub fn lloyd_1d_from(nu: &Law1D, init: &[f64], r: f64, cfg: &Lloyd1dConfig) -> Result<Quantizer1D> {
    check_r(r)?;
    if init.is_empty() || init.iter().any(|x| !x.is_finite()) || init.windows(2).any(|w| w[0] >= w[1]) {
        return Err(QuantError::InvalidParameter("initial points must be finite and strictly increasing".into()));
    }
    let n = init.len();
    if let Some(m) = nu.support_size() {
        if n > m {
            return Err(QuantError::Infeasible(format!(
                "{n} points requested but the law has only {m} distinct atoms"
            )));
        }
    }
    let mut points = init.to_vec();
    let mut value = nu.distortion(&points, r);
    let mut history = vec![value];
    let mut converged = value == 0.0;
    let mut iterations = 0;
    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let bounds: Vec<(f64, f64)> = cells(&points).collect();
        let mut next = Vec::with_capacity(n);
        let mut empty = 0;
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            match nu.cell_centroid(lo, hi, r) {
                Some(c) => {
                    let keep = nu.cell_cost(lo, hi, c, r) > nu.cell_cost(lo, hi, points[i], r);
                    next.push(if keep { points[i] } else { c });
                }
                None => empty += 1,
            }
        }
        if let Law1D::Discrete(d) = nu {
            for _ in 0..empty {
                let t = worst_atom(d, &next, r).expect("feasible law has an uncovered atom");
                insert_sorted(&mut next, t);
            }
        }
        next.sort_by(f64::total_cmp);
        next.dedup();
        if next.len() < n {
            // continuous law with a collapsed cell; keep the previous codebook
            break;
        }
        let mut new_value = nu.distortion(&next, r);
        if r == 2.0 {
            if let Some(cand) = newton_step(nu, &points, &bounds) {
                let v = nu.distortion(&cand, r);
                if v < new_value {
                    next = cand;
                    new_value = v;
                }
            }
        }
        debug_assert!(new_value <= value * (1.0 + 1e-9) + 1e-300);
        if new_value > value {
            converged = true;
            break;
        }
        let change = value - new_value;
        points = next;
        value = new_value;
        history.push(value);
        if change <= cfg.tol * value || value == 0.0 {
            converged = true;
        }
    }
    Ok(Quantizer1D {
        points,
        value,
        r,
        converged,
        iterations,
        history,
    })
}

/// Newton step on the quadratic distortion of a continuous law. The
/// Hessian is tridiagonal: moving a point shifts only its two cell
/// boundaries. Returns `None` when the step breaks the ordering.
fn newton_step(nu: &Law1D, points: &[f64], bounds: &[(f64, f64)]) -> Option<Vec<f64>> {
    nu.density(0.0)?;
    let n = points.len();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    let mut rhs = vec![0.0; n];
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        let mass = nu.cell_mass(lo, hi);
        let c = nu.cell_centroid(lo, hi, 2.0)?;
        rhs[i] = -2.0 * mass * (points[i] - c);
        diag[i] = 2.0 * mass;
    }
    for i in 0..n.saturating_sub(1) {
        let b = bounds[i].1;
        let k = nu.density(b)? * 0.5 * (points[i + 1] - points[i]);
        diag[i] -= k;
        diag[i + 1] -= k;
        off[i] = -k;
    }
    // Thomas algorithm
    for i in 1..n {
        if diag[i - 1] <= 0.0 {
            return None;
        }
        let m = off[i - 1] / diag[i - 1];
        diag[i] -= m * off[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    if diag[n - 1] <= 0.0 {
        return None;
    }
    let mut step = vec![0.0; n];
    step[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        step[i] = (rhs[i] - off[i] * step[i + 1]) / diag[i];
    }
    let cand: Vec<f64> = points.iter().zip(&step).map(|(p, s)| p + s).collect();
    (cand.iter().all(|x| x.is_finite()) && cand.windows(2).all(|w| w[0] < w[1])).then_some(cand)
}

/// `V_{N,r}` of the uniform law on `[0, 1]`: `1 / ((r+1) 2^r N^r)`.
pub fn uniform_closed_form(n: usize, r: f64) -> f64 {
    1.0 / ((r + 1.0) * 2f64.powf(r) * (n as f64).powf(r))
}

/// Stabilization test on a sequence: the maximum over the second half is at
/// most `factor` times the maximum over the first half. The first half
/// holds the first `ceil(len/2)` entries.
pub fn running_max_stabilizes(values: &[f64], factor: f64) -> bool {
    if values.len() < 2 {
        return true;
    }
    let split = values.len().div_ceil(2);
    let first = values[..split].iter().copied().fold(0.0, f64::max);
    let second = values[split..].iter().copied().fold(0.0, f64::max);
    second <= factor * first
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentBoundRow {
    pub n: usize,
    /// `N^r V_{N,r}(nu)`.
    pub scaled: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentBoundReport {
    pub r: f64,
    pub delta: f64,
    pub rows: Vec<MomentBoundRow>,
    /// `1 + int |t|^{r+delta} dnu`.
    pub moment_term: f64,
    /// Largest observed `N^r V_{N,r}`.
    pub empirical_sup: f64,
    pub stable: bool,
}

/// Tabulates `N^r V_{N,r}(nu)` against the moment `1 + int |t|^{r+delta}`.
/// When `N` reaches the number of atoms the quantization error is zero.
pub fn moment_bound_check(
    nu: &Law1D,
    r: f64,
    delta: f64,
    n_list: &[usize],
    cfg: &Lloyd1dConfig,
) -> Result<MomentBoundReport> {
    check_r(r)?;
    if !(delta > 0.0) {
        return Err(QuantError::InvalidParameter("delta must be > 0".into()));
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in &ns {
        let (value, converged) = match nu.support_size() {
            Some(m) if n >= m => (0.0, true),
            _ => {
                let q = lloyd_1d(nu, n, r, cfg)?;
                (q.value, q.converged)
            }
        };
        rows.push(MomentBoundRow {
            n,
            scaled: (n as f64).powf(r) * value,
            converged,
        });
    }
    let seq: Vec<f64> = rows.iter().map(|row| row.scaled).collect();
    Ok(MomentBoundReport {
        r,
        delta,
        moment_term: 1.0 + nu.abs_moment(r + delta),
        empirical_sup: seq.iter().copied().fold(0.0, f64::max),
        stable: running_max_stabilizes(&seq, 1.05),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Law1D {
        Law1D::uniform(0.0, 1.0).unwrap()
    }

    #[test]
    fn uniform_single_point() {
        let q = lloyd_1d(&unit(), 1, 2.0, &Lloyd1dConfig::default()).unwrap();
        assert_eq!(q.points, vec![0.5]);
        assert!((q.value - 1.0 / 12.0).abs() < 1e-16);
    }

    /// Grid-search oracle over codebooks `{a, b}` on a 1/2000 grid.
    #[test]
    fn uniform_two_points_matches_grid_search() {
        let law = unit();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let g = 400;
        for i in 0..g {
            for j in i + 1..g {
                let (a, b) = (i as f64 / g as f64, j as f64 / g as f64);
                let v = law.distortion(&[a, b], 2.0);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        assert_eq!((best.1, best.2), (0.25, 0.75));
        assert!((best.0 - 1.0 / 48.0).abs() < 1e-15);
        let q = lloyd_1d(&law, 2, 2.0, &Lloyd1dConfig::default()).unwrap();
        assert_eq!(q.points, vec![0.25, 0.75]);
        assert!((q.value - 1.0 / 48.0).abs() < 1e-16);
    }

    #[test]
    fn single_atom() {
        let law = Law1D::Discrete(DiscreteLaw::new([(3.0, 1.0)]).unwrap());
        let q = lloyd_1d(&law, 1, 2.0, &Lloyd1dConfig::default()).unwrap();
        assert_eq!(q.points, vec![3.0]);
        assert_eq!(q.value, 0.0);
        assert!(matches!(
            lloyd_1d(&law, 2, 2.0, &Lloyd1dConfig::default()),
            Err(QuantError::Infeasible(_))
        ));
    }

    #[test]
    fn closed_form_values() {
        assert!((uniform_closed_form(1, 2.0) - 1.0 / 12.0).abs() < 1e-17);
        assert!((uniform_closed_form(4, 2.0) - 1.0 / 192.0).abs() < 1e-17);
        assert!((uniform_closed_form(1, 1.0) - 0.25).abs() < 1e-17);
        // median of the uniform law
        let q = lloyd_1d(&unit(), 1, 1.0, &Lloyd1dConfig::default()).unwrap();
        assert!((q.value - 0.25).abs() < 1e-16);
    }

    #[test]
    fn lloyd_matches_closed_form_for_small_n() {
        for r in [1.0, 2.0, 3.0] {
            for n in 1..=32 {
                let q = lloyd_1d(&unit(), n, r, &Lloyd1dConfig::default()).unwrap();
                let want = uniform_closed_form(n, r);
                assert!(((q.value - want) / want).abs() < 1e-9, "r={r} n={n}");
            }
        }
    }

    #[test]
    fn exponential_cell_stats_match_quadrature() {
        for (l, h) in [(0.0, 0.001), (0.3, 0.9), (2.0, 7.5), (4.0, f64::INFINITY)] {
            let (m, mean, var) = exp_cell_stats(1.3, l, h);
            let hh = if h.is_finite() { h } else { l + 60.0 };
            let f0 = gauss_legendre(l, hh, 16, &|t: f64| 1.3 * (-1.3 * t).exp());
            let f1 = gauss_legendre(l, hh, 16, &|t: f64| t * 1.3 * (-1.3 * t).exp());
            let f2 = gauss_legendre(l, hh, 16, &|t: f64| (t - mean).powi(2) * 1.3 * (-1.3 * t).exp());
            assert!(((m - f0) / f0).abs() < 1e-12);
            assert!(((mean - f1 / f0) / mean).abs() < 1e-12);
            assert!(((var - f2 / f0) / var).abs() < 1e-9, "{l} {h}: {var} vs {}", f2 / f0);
        }
    }

    #[test]
    fn discrete_cost_formulas_match_direct_sums() {
        let d = DiscreteLaw::new([(0.1, 0.2), (0.5, 0.1), (1.7, 0.4), (2.0, 0.3), (3.5, 0.05)]).unwrap();
        for r in [1.0, 2.0, 2.5] {
            for c in [-1.0, 0.3, 1.7, 2.2, 9.0] {
                let direct: f64 = d.t.iter().zip(&d.w).map(|(t, w)| w * (t - c).abs().powf(r)).sum();
                assert!((d.cost_range(0, d.len(), c, r) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weighted_median_tie_takes_midpoint() {
        let d = Law1D::Discrete(DiscreteLaw::new([(0.0, 0.5), (1.0, 0.5)]).unwrap());
        assert_eq!(d.cell_centroid(f64::NEG_INFINITY, f64::INFINITY, 1.0), Some(0.5));
    }

    #[test]
    fn atoms_equal_to_n_are_interpolated() {
        let d = Law1D::Discrete(DiscreteLaw::new((1..=6).map(|k| (k as f64, (-(k as f64)).exp()))).unwrap());
        let q = lloyd_1d(&d, 6, 2.0, &Lloyd1dConfig::default()).unwrap();
        assert_eq!(q.points, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(q.value, 0.0);
    }

    #[test]
    fn distortion_history_is_monotone() {
        let sample: Vec<f64> = (0..5000).map(|i| ((i as f64 * 0.618034) % 1.0).powi(3) * 4.0).collect();
        let law = Law1D::Discrete(DiscreteLaw::from_sample(&sample, 1.0).unwrap());
        for r in [1.0, 2.0, 3.0] {
            let q = lloyd_1d(&law, 7, r, &Lloyd1dConfig { tol: 1e-12, max_iter: 200 }).unwrap();
            for w in q.history.windows(2) {
                assert!(w[1] <= w[0]);
            }
            assert!(q.points.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn moment_bound_examples() {
        let rep = moment_bound_check(&unit(), 2.0, 1.0, &[1, 2, 4, 8], &Lloyd1dConfig::default()).unwrap();
        for row in &rep.rows {
            assert!((row.scaled - 1.0 / 12.0).abs() < 1e-12);
        }
        assert!(rep.stable);
        assert!((rep.moment_term - 1.25).abs() < 1e-15);

        let atom = Law1D::Discrete(DiscreteLaw::new([(2.0, 1.0)]).unwrap());
        let rep = moment_bound_check(&atom, 2.0, 1.0, &[1, 4, 16], &Lloyd1dConfig::default()).unwrap();
        assert!(rep.rows.iter().all(|r| r.scaled == 0.0));
        assert!(rep.stable);
    }

    #[test]
    fn stabilization_rule() {
        assert!(running_max_stabilizes(&[1.0, 2.0, 2.05, 2.1], 1.05));
        assert!(!running_max_stabilizes(&[1.0, 2.0, 2.2, 2.3], 1.05));
        assert!(running_max_stabilizes(&[0.0, 0.0, 0.0], 1.05));
    }
}
