//! Measures to be quantized: densities with exact samplers, finite atomic
//! measures, and the family of weighted concentric circles in the
//! hyperbolic plane.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{QuantError, Result};
use crate::geometry::{ManifoldKind, ModelManifold, Point};
use crate::parallel::{map_chunks, stream_rng, WeightedMoments, CHUNK};
use crate::quant1d::{DiscreteLaw, Law1D};

/// Atoms per unit of `sinh k` when a circle of radius `k` is replaced by
/// an equally spaced ring.
pub const RING_DENSITY: f64 = 100.0;
/// Upper limit on the atoms of one ring.
pub const RING_CAP: usize = 200_000;

/// Grid size of tabulated radial laws.
const RADIAL_GRID: usize = 1 << 14;

/// Surface area of the unit sphere `S^{n}` in `R^{n+1}`.
pub fn unit_sphere_area(n: usize) -> f64 {
    let k = (n + 1) as f64;
    2.0 * PI.powf(k / 2.0) / libm::tgamma(k / 2.0)
}

/// Volume of the unit ball of `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let k = d as f64;
    PI.powf(k / 2.0) / libm::tgamma(k / 2.0 + 1.0)
}

/// Density families with an exact sampler.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityKind {
    /// Product density `prod_k (a_k + 1) x_k^{a_k}` on `[0,1]^d`. All zero
    /// exponents give the uniform cube; `(1, 1)` is `4xy` on the square.
    PowerBox { exponents: Vec<f64> },
    /// A continuous law on the real line.
    Line(Law1D),
    /// Normalized volume of the whole sphere.
    UniformSphere,
    /// Uniform law on the Euclidean ball of the given radius about 0.
    UniformBall { radius: f64 },
    /// Density proportional to `exp(-rho^2)` with respect to volume, where
    /// `rho` is the distance to the canonical origin.
    GaussianRadial,
}

/// Inverse-CDF table of a radial law on `[0, rho_max]`.
#[derive(Debug, Clone, PartialEq)]
struct RadialTable {
    rho: Vec<f64>,
    cdf: Vec<f64>,
    /// `int exp(-rho^2) A(rho)^{d-1} drho` over the table range.
    norm: f64,
}

impl RadialTable {
    fn new(m: &ModelManifold, profile: impl Fn(f64) -> f64) -> Self {
        let rho_max = match m.kind() {
            ManifoldKind::Sphere => PI * m.scale(),
            _ => 8.0,
        };
        let g = |r: f64| profile(r) * m.a_factor_unchecked(r).powi(m.dim() as i32 - 1);
        let h = rho_max / RADIAL_GRID as f64;
        let rho: Vec<f64> = (0..=RADIAL_GRID).map(|i| i as f64 * h).collect();
        let mut cdf = vec![0.0; rho.len()];
        for i in 1..rho.len() {
            // Simpson on each grid interval
            let (a, b) = (rho[i - 1], rho[i]);
            cdf[i] = cdf[i - 1] + h / 6.0 * (g(a) + 4.0 * g(0.5 * (a + b)) + g(b));
        }
        let norm = *cdf.last().unwrap();
        cdf.iter_mut().for_each(|c| *c /= norm);
        RadialTable { rho, cdf, norm }
    }

    fn quantile(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.rho[k - 1] + t * (self.rho[k] - self.rho[k - 1])
    }
}

/// An absolutely continuous measure `h dvol`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMeasure {
    manifold: ModelManifold,
    kind: DensityKind,
    total_mass: f64,
    radial: Option<RadialTable>,
}

impl DensityMeasure {
    pub fn new(manifold: ModelManifold, kind: DensityKind, total_mass: f64) -> Result<Self> {
        if !(total_mass > 0.0 && total_mass.is_finite()) {
            return Err(QuantError::InvalidParameter("total mass must be positive".into()));
        }
        let euclid = manifold.kind() == ManifoldKind::Euclidean;
        let ok = match &kind {
            DensityKind::PowerBox { exponents } => {
                euclid && exponents.len() == manifold.dim() && exponents.iter().all(|a| *a >= 0.0)
            }
            DensityKind::Line(law) => euclid && manifold.dim() == 1 && law.support_size().is_none(),
            DensityKind::UniformSphere => manifold.kind() == ManifoldKind::Sphere,
            DensityKind::UniformBall { radius } => euclid && *radius > 0.0,
            DensityKind::GaussianRadial => true,
        };
        if !ok {
            return Err(QuantError::UnsupportedMeasure(format!(
                "{kind:?} on {}({})",
                manifold.kind().name(),
                manifold.dim()
            )));
        }
        let radial = matches!(kind, DensityKind::GaussianRadial).then(|| RadialTable::new(&manifold, |r| (-r * r).exp()));
        Ok(DensityMeasure {
            manifold,
            kind,
            total_mass,
            radial,
        })
    }

    pub fn manifold(&self) -> &ModelManifold {
        &self.manifold
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    fn volume(&self) -> Option<f64> {
        let m = &self.manifold;
        match &self.kind {
            DensityKind::UniformSphere => Some(unit_sphere_area(m.dim()) * m.scale().powi(m.dim() as i32)),
            DensityKind::UniformBall { radius } => Some(unit_ball_volume(m.dim()) * radius.powi(m.dim() as i32)),
            _ => None,
        }
    }

    /// Density `h` at `x` (including the total mass).
    pub fn density_at(&self, x: &[f64]) -> f64 {
        let base = match &self.kind {
            DensityKind::PowerBox { exponents } => {
                if x.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    0.0
                } else {
                    x.iter().zip(exponents).map(|(c, a)| (a + 1.0) * c.powf(*a)).product()
                }
            }
            DensityKind::Line(Law1D::Uniform { lo, hi }) => {
                if (*lo..=*hi).contains(&x[0]) { 1.0 / (hi - lo) } else { 0.0 }
            }
            DensityKind::Line(Law1D::Exponential { rate }) => {
                if x[0] >= 0.0 { rate * (-rate * x[0]).exp() } else { 0.0 }
            }
            DensityKind::Line(Law1D::Discrete(_)) => unreachable!("rejected at construction"),
            DensityKind::UniformSphere => 1.0 / self.volume().unwrap(),
            DensityKind::UniformBall { radius } => {
                if crate::geometry::dot(x, x).sqrt() <= *radius { 1.0 / self.volume().unwrap() } else { 0.0 }
            }
            DensityKind::GaussianRadial => {
                let o = self.manifold.origin();
                let rho = self.manifold.dist_unchecked(o.coords(), x);
                let t = self.radial.as_ref().unwrap();
                (-rho * rho).exp() / (t.norm * unit_sphere_area(self.manifold.dim() - 1))
            }
        };
        self.total_mass * base
    }

    /// `int h^q dvol`.
    pub fn power_integral(&self, q: f64) -> f64 {
        let scale = self.total_mass.powf(q);
        let base = match &self.kind {
            DensityKind::PowerBox { exponents } => {
                exponents.iter().map(|a| (a + 1.0).powf(q) / (a * q + 1.0)).product()
            }
            DensityKind::Line(Law1D::Uniform { lo, hi }) => (hi - lo).powf(1.0 - q),
            DensityKind::Line(Law1D::Exponential { rate }) => rate.powf(q - 1.0) / q,
            DensityKind::Line(Law1D::Discrete(_)) => unreachable!("rejected at construction"),
            DensityKind::UniformSphere | DensityKind::UniformBall { .. } => self.volume().unwrap().powf(1.0 - q),
            DensityKind::GaussianRadial => {
                let t = self.radial.as_ref().unwrap();
                let omega = unit_sphere_area(self.manifold.dim() - 1);
                let powered = RadialTable::new(&self.manifold, |r| (-q * r * r).exp());
                omega * powered.norm / (omega * t.norm).powf(q)
            }
        };
        scale * base
    }

    fn sample_into<R: Rng>(&self, rng: &mut R, count: usize, out: &mut Vec<f64>) {
        let m = &self.manifold;
        let d = m.dim();
        match &self.kind {
            DensityKind::PowerBox { exponents } => {
                for _ in 0..count {
                    for a in exponents {
                        let u: f64 = rng.random();
                        out.push(u.powf(1.0 / (a + 1.0)));
                    }
                }
            }
            DensityKind::Line(law) => {
                for _ in 0..count {
                    out.push(law.quantile(rng.random()).unwrap());
                }
            }
            DensityKind::UniformSphere => {
                for _ in 0..count {
                    let g = normal_direction(rng, d + 1);
                    out.extend(g.iter().map(|c| c * m.scale()));
                }
            }
            DensityKind::UniformBall { radius } => {
                for _ in 0..count {
                    let g = normal_direction(rng, d);
                    let u: f64 = rng.random();
                    let rho = radius * u.powf(1.0 / d as f64);
                    out.extend(g.iter().map(|c| c * rho));
                }
            }
            DensityKind::GaussianRadial => {
                let t = self.radial.as_ref().unwrap();
                let o = m.origin();
                let frame = m.tangent_frame(o.coords());
                for _ in 0..count {
                    let rho = t.quantile(rng.random());
                    let dir = normal_direction(rng, d);
                    out.extend(m.polar_point(o.coords(), &frame, rho, &dir));
                }
            }
        }
    }
}

/// Uniform unit vector of `R^n`.
fn normal_direction<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let nrm = crate::geometry::dot(&g, &g).sqrt();
        if nrm > 1e-300 {
            return g.into_iter().map(|c| c / nrm).collect();
        }
    }
}

/// A finite weighted set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomMeasure {
    manifold: ModelManifold,
    coords: Vec<f64>,
    masses: Vec<f64>,
}

impl AtomMeasure {
    pub fn new(manifold: ModelManifold, atoms: Vec<(Point, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(QuantError::InvalidParameter("no atoms".into()));
        }
        let mut coords = Vec::with_capacity(atoms.len() * manifold.ambient_dim());
        let mut masses = Vec::with_capacity(atoms.len());
        for (p, w) in atoms {
            manifold.check_point(&p)?;
            if !(w > 0.0 && w.is_finite()) {
                return Err(QuantError::InvalidParameter(format!("atom mass {w} is not positive")));
            }
            coords.extend_from_slice(p.coords());
            masses.push(w);
        }
        Ok(AtomMeasure { manifold, coords, masses })
    }

    /// Equal masses `1/n` on the given points.
    pub fn uniform(manifold: ModelManifold, points: Vec<Point>) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        Self::new(manifold, points.into_iter().map(|p| (p, w)).collect())
    }

    pub fn manifold(&self) -> &ModelManifold {
        &self.manifold
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Flat coordinates, `ambient_dim` values per atom.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn point(&self, i: usize) -> Point {
        let a = self.manifold.ambient_dim();
        Point::new(self.coords[i * a..(i + 1) * a].to_vec())
    }
}

/// `sum_{k=1}^{k_max} exp(-(1+eps) k)` times arclength on the geodesic
/// circle of radius `k` about the origin of the hyperbolic plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialCircles {
    pub epsilon: f64,
    pub k_max: usize,
}

impl RadialCircles {
    pub fn new(epsilon: f64, k_max: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) || k_max == 0 {
            return Err(QuantError::InvalidParameter("need epsilon > 0 and k_max >= 1".into()));
        }
        Ok(RadialCircles { epsilon, k_max })
    }

    pub fn manifold(&self) -> ModelManifold {
        ModelManifold::hyperbolic(2)
    }

    /// Mass of circle `k`: `exp(-(1+eps) k) 2 pi sinh k`.
    pub fn circle_mass(&self, k: usize) -> f64 {
        let k = k as f64;
        PI * ((-self.epsilon * k).exp() - (-(2.0 + self.epsilon) * k).exp())
    }

    pub fn circle_masses(&self) -> Vec<f64> {
        (1..=self.k_max).map(|k| self.circle_mass(k)).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.circle_masses().iter().sum()
    }

    /// Bound `exp(-eps k_max) / eps` on the neglected tail of the series,
    /// up to the factor `pi`.
    pub fn tail_bound(&self) -> f64 {
        (-self.epsilon * self.k_max as f64).exp() / self.epsilon
    }

    /// Number of ring atoms used for circle `k`.
    pub fn ring_size(k: usize) -> usize {
        ((RING_DENSITY * (k as f64).sinh()).ceil() as usize).clamp(1, RING_CAP)
    }

    /// Every circle replaced by an equally spaced ring of equal-mass atoms;
    /// returns flat coordinates and masses.
    pub fn ring_atoms(&self) -> (Vec<f64>, Vec<f64>) {
        let mut coords = Vec::new();
        let mut masses = Vec::new();
        for k in 1..=self.k_max {
            let n = Self::ring_size(k);
            let w = self.circle_mass(k) / n as f64;
            let (ch, sh) = ((k as f64).cosh(), (k as f64).sinh());
            for j in 0..n {
                let th = 2.0 * PI * j as f64 / n as f64;
                coords.extend_from_slice(&[ch, sh * th.cos(), sh * th.sin()]);
                masses.push(w);
            }
        }
        (coords, masses)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureSpec {
    Density(DensityMeasure),
    Atoms(AtomMeasure),
    RadialCircles(RadialCircles),
}

/// Parameters of the named presets.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetOptions {
    pub dim: usize,
    pub scale: f64,
    pub epsilon: f64,
    pub k_max: usize,
    pub rate: f64,
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions {
            dim: 2,
            scale: 1.0,
            epsilon: 0.3,
            k_max: 25,
            rate: 1.0,
        }
    }
}

/// Names accepted by [`MeasureSpec::preset`].
pub const PRESETS: &[&str] = &[
    "uniform-square",
    "triangular-square",
    "uniform-cube",
    "uniform-interval",
    "linear-interval",
    "exponential",
    "uniform-disk",
    "uniform-sphere",
    "gaussian-hyperbolic",
    "gaussian-euclidean",
    "counterexample",
];

impl MeasureSpec {
    pub fn density(manifold: ModelManifold, kind: DensityKind) -> Result<Self> {
        Ok(MeasureSpec::Density(DensityMeasure::new(manifold, kind, 1.0)?))
    }

    /// Named measure presets.
    pub fn preset(name: &str, opts: &PresetOptions) -> Result<Self> {
        let power = |e: Vec<f64>| {
            let d = e.len();
            Self::density(ModelManifold::euclidean(d), DensityKind::PowerBox { exponents: e })
        };
        match name {
            "uniform-square" => power(vec![0.0, 0.0]),
            "triangular-square" => power(vec![1.0, 1.0]),
            "uniform-cube" => power(vec![0.0; opts.dim]),
            "uniform-interval" => power(vec![0.0]),
            "linear-interval" => power(vec![1.0]),
            "exponential" => Self::density(
                ModelManifold::euclidean(1),
                DensityKind::Line(Law1D::exponential(opts.rate)?),
            ),
            "uniform-disk" => Self::density(ModelManifold::euclidean(2), DensityKind::UniformBall { radius: 1.0 }),
            "uniform-sphere" => Self::density(
                ModelManifold::new(ManifoldKind::Sphere, opts.dim, opts.scale)?,
                DensityKind::UniformSphere,
            ),
            "gaussian-hyperbolic" => Self::density(
                ModelManifold::new(ManifoldKind::Hyperbolic, opts.dim, opts.scale)?,
                DensityKind::GaussianRadial,
            ),
            "gaussian-euclidean" => Self::density(ModelManifold::euclidean(opts.dim), DensityKind::GaussianRadial),
            "counterexample" => Ok(MeasureSpec::RadialCircles(RadialCircles::new(opts.epsilon, opts.k_max)?)),
            other => Err(QuantError::UnsupportedMeasure(format!(
                "unknown preset {other:?}; known: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn manifold(&self) -> ModelManifold {
        match self {
            MeasureSpec::Density(m) => m.manifold,
            MeasureSpec::Atoms(a) => a.manifold,
            MeasureSpec::RadialCircles(c) => c.manifold(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            MeasureSpec::Density(m) => m.total_mass,
            MeasureSpec::Atoms(a) => a.masses.iter().sum(),
            MeasureSpec::RadialCircles(c) => c.total_mass(),
        }
    }

    /// Exact one-dimensional law of a density on the real line, when one
    /// exists.
    pub fn line_law(&self) -> Option<Law1D> {
        match self {
            MeasureSpec::Density(m) => match &m.kind {
                DensityKind::Line(law) => Some(law.clone()),
                DensityKind::PowerBox { exponents } if exponents == &[0.0] => Law1D::uniform(0.0, 1.0).ok(),
                _ => None,
            },
            _ => None,
        }
    }

    /// `n` i.i.d. draws from the normalized measure as flat coordinates.
    /// Chunk `j` of [`CHUNK`] draws uses RNG stream `j` of `seed`.
    pub fn sample_flat(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(QuantError::InvalidParameter("sample size must be >= 1".into()));
        }
        let amb = self.manifold().ambient_dim();
        let cum = match self {
            MeasureSpec::Atoms(a) => cumulative(&a.masses),
            MeasureSpec::RadialCircles(c) => cumulative(&c.circle_masses()),
            MeasureSpec::Density(_) => Vec::new(),
        };
        let parts = map_chunks(n, CHUNK, |j, range| {
            let mut rng = stream_rng(seed, j as u64);
            let mut out = Vec::with_capacity(range.len() * amb);
            match self {
                MeasureSpec::Density(m) => m.sample_into(&mut rng, range.len(), &mut out),
                MeasureSpec::Atoms(a) => {
                    for _ in range {
                        let i = pick(&cum, rng.random());
                        out.extend_from_slice(&a.coords[i * amb..(i + 1) * amb]);
                    }
                }
                MeasureSpec::RadialCircles(_) => {
                    for _ in range {
                        let k = (pick(&cum, rng.random()) + 1) as f64;
                        let th = 2.0 * PI * rng.random::<f64>();
                        out.extend_from_slice(&[k.cosh(), k.sinh() * th.cos(), k.sinh() * th.sin()]);
                    }
                }
            }
            out
        });
        Ok(parts.concat())
    }

    /// `n` i.i.d. draws from the normalized measure.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Point>> {
        let amb = self.manifold().ambient_dim();
        Ok(self
            .sample_flat(n, seed)?
            .chunks_exact(amb)
            .map(|c| Point::new(c.to_vec()))
            .collect())
    }

    /// Law of `d(x, x0)` under the measure, as weighted atoms carrying the
    /// full mass. Exact for atomic measures and for circles about the
    /// origin; a Monte-Carlo sample of size `n` otherwise.
    pub fn pushforward_radial(&self, x0: &Point, n: usize, seed: u64) -> Result<DiscreteLaw> {
        let m = self.manifold();
        m.check_point(x0)?;
        match self {
            MeasureSpec::Atoms(a) => {
                let amb = m.ambient_dim();
                DiscreteLaw::new(
                    a.masses
                        .iter()
                        .enumerate()
                        .map(|(i, &w)| (m.dist_unchecked(x0.coords(), &a.coords[i * amb..(i + 1) * amb]), w)),
                )
            }
            MeasureSpec::RadialCircles(c) => {
                if m.dist_unchecked(x0.coords(), m.origin().coords()) == 0.0 {
                    DiscreteLaw::new((1..=c.k_max).map(|k| (k as f64, c.circle_mass(k))))
                } else {
                    let (coords, masses) = c.ring_atoms();
                    DiscreteLaw::new(
                        coords
                            .chunks_exact(3)
                            .zip(masses)
                            .map(|(p, w)| (m.dist_unchecked(x0.coords(), p), w)),
                    )
                }
            }
            MeasureSpec::Density(d) => {
                let pts = self.sample_flat(n, seed)?;
                let amb = m.ambient_dim();
                let dists: Vec<f64> = pts.chunks_exact(amb).map(|p| m.dist_unchecked(x0.coords(), p)).collect();
                DiscreteLaw::from_sample(&dists, d.total_mass)
            }
        }
    }

    /// Moment integrals `int d(x,x0)^{r+delta}` and `int A(d(x,x0))^r`,
    /// exact for atomic measures and circles, Monte-Carlo for densities.
    pub fn moment_report(&self, x0: &Point, r: f64, delta: f64, n: usize, seed: u64) -> Result<MomentReport> {
        if !(r >= 1.0) || !(delta > 0.0) {
            return Err(QuantError::InvalidParameter("need r >= 1 and delta > 0".into()));
        }
        let m = self.manifold();
        let law = self.pushforward_radial(x0, n, seed)?;
        let exact = !matches!(self, MeasureSpec::Density(_));
        let mut i1 = WeightedMoments::default();
        let mut i2 = WeightedMoments::default();
        for (&t, &w) in law.locations().iter().zip(law.masses()) {
            i1.push(w, t.powf(r + delta));
            i2.push(w, m.a_factor_unchecked(t).powf(r));
        }
        let err = |x: &WeightedMoments| if exact { 0.0 } else { x.standard_error() };
        Ok(MomentReport {
            x0: x0.clone(),
            r,
            delta,
            i1: i1.total(),
            i2: i2.total(),
            i1_error: err(&i1),
            i2_error: err(&i2),
        })
    }
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    w.iter()
        .map(|x| {
            acc += x;
            acc / total
        })
        .collect()
}

fn pick(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub x0: Point,
    pub r: f64,
    pub delta: f64,
    /// `int d(x, x0)^{r+delta} dmu`.
    pub i1: f64,
    /// `int A(d(x, x0))^r dmu`.
    pub i2: f64,
    pub i1_error: f64,
    pub i2_error: f64,
}

impl MomentReport {
    /// `1 + I1 + I2`.
    pub fn moment_sum(&self) -> f64 {
        1.0 + self.i1 + self.i2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_atom_samples() {
        let m = ModelManifold::euclidean(2);
        let x = Point::new(vec![0.3, -1.0]);
        let mu = MeasureSpec::Atoms(AtomMeasure::new(m, vec![(x.clone(), 1.0)]).unwrap());
        assert_eq!(mu.sample(5, 1).unwrap(), vec![x; 5]);
    }

    #[test]
    fn uniform_square_mean() {
        let mu = MeasureSpec::preset("uniform-square", &PresetOptions::default()).unwrap();
        let n = 100_000;
        let s = mu.sample_flat(n, 3).unwrap();
        let sigma = (1.0f64 / 12.0 / n as f64).sqrt();
        for k in 0..2 {
            let mean = s.iter().skip(k).step_by(2).sum::<f64>() / n as f64;
            assert!((mean - 0.5).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn circle_index_frequencies() {
        let c = RadialCircles::new(0.5, 10).unwrap();
        let mu = MeasureSpec::RadialCircles(c);
        let n = 100_000;
        let s = mu.sample_flat(n, 11).unwrap();
        let mut counts = [0usize; 10];
        for p in s.chunks_exact(3) {
            let k = p[0].acosh().round() as usize;
            counts[k - 1] += 1;
        }
        let total: f64 = (1..=10).map(|k| (-1.5 * k as f64).exp() * 2.0 * PI * (k as f64).sinh()).sum();
        for k in 1..=10 {
            let p = (-1.5 * k as f64).exp() * 2.0 * PI * (k as f64).sinh() / total;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((counts[k - 1] as f64 / n as f64 - p).abs() < 3.0 * sigma, "k={k}");
        }
    }

    #[test]
    fn samples_are_deterministic() {
        let mu = MeasureSpec::preset("gaussian-hyperbolic", &PresetOptions::default()).unwrap();
        assert_eq!(mu.sample_flat(10_000, 5).unwrap(), mu.sample_flat(10_000, 5).unwrap());
        let m = mu.manifold();
        for p in mu.sample(2000, 5).unwrap() {
            m.check_point(&p).unwrap();
        }
    }

    #[test]
    fn pushforward_of_atoms_and_circles() {
        let m = ModelManifold::euclidean(2);
        let x0 = Point::new(vec![0.0, 0.0]);
        let mu = MeasureSpec::Atoms(AtomMeasure::new(m, vec![(x0.clone(), 1.0)]).unwrap());
        let law = mu.pushforward_radial(&x0, 1, 0).unwrap();
        assert_eq!((law.locations(), law.masses()), (&[0.0][..], &[1.0][..]));

        let y = Point::new(vec![2.0, 0.0]);
        let mu = MeasureSpec::Atoms(AtomMeasure::new(m, vec![(y, 1.0)]).unwrap());
        assert_eq!(mu.pushforward_radial(&x0, 1, 0).unwrap().locations(), &[2.0]);

        let c = MeasureSpec::RadialCircles(RadialCircles::new(0.3, 3).unwrap());
        let h = ModelManifold::hyperbolic(2);
        let law = c.pushforward_radial(&h.origin(), 1, 0).unwrap();
        assert_eq!(law.locations(), &[1.0, 2.0, 3.0]);
        for (k, w) in law.masses().iter().enumerate() {
            let k = (k + 1) as f64;
            let want = (-1.3 * k).exp() * 2.0 * PI * k.sinh();
            assert!((w - want).abs() < 1e-14 * want);
        }
        assert!((law.masses().iter().sum::<f64>() - c.total_mass()).abs() < 1e-15);
    }

    #[test]
    fn moment_examples() {
        let m = ModelManifold::euclidean(2);
        let x0 = Point::new(vec![0.0, 0.0]);
        let atom = MeasureSpec::Atoms(AtomMeasure::new(m, vec![(x0.clone(), 1.0)]).unwrap());
        let rep = atom.moment_report(&x0, 2.0, 1.0, 1, 0).unwrap();
        assert_eq!((rep.i1, rep.i2), (0.0, 0.0));

        // uniform disk: int rho^3 2 rho drho = 2/5
        let disk = MeasureSpec::preset("uniform-disk", &PresetOptions::default()).unwrap();
        let rep = disk.moment_report(&x0, 2.0, 1.0, 200_000, 9).unwrap();
        assert!((rep.i1 - 0.4).abs() < 4.0 * rep.i1_error, "{} +- {}", rep.i1, rep.i1_error);

        // circles: I2 = sum exp(-1.5k) 2 pi sinh(k) sinh(k)
        let c = MeasureSpec::RadialCircles(RadialCircles::new(0.5, 30).unwrap());
        let h = ModelManifold::hyperbolic(2);
        let rep = c.moment_report(&h.origin(), 1.0, 1.0, 1, 0).unwrap();
        let want: f64 = (1..=30).map(|k| (-1.5 * k as f64).exp() * 2.0 * PI * (k as f64).sinh().powi(2)).sum();
        assert!((rep.i2 - want).abs() < 1e-12 * want);
        assert_eq!(rep.i2_error, 0.0);
    }

    #[test]
    fn circle_moments_converge() {
        let c = RadialCircles::new(0.3, 400).unwrap();
        for p in [1.0, 3.0, 6.0] {
            let terms: Vec<f64> = (1..=400).map(|k| c.circle_mass(k) * (k as f64).powf(p)).collect();
            let head: f64 = terms[..300].iter().sum();
            let tail: f64 = terms[300..].iter().sum();
            assert!(tail < 1e-20 * head.max(1.0), "p={p}");
        }
    }

    #[test]
    fn power_integrals() {
        let o = PresetOptions::default();
        let tri = MeasureSpec::preset("triangular-square", &o).unwrap();
        let MeasureSpec::Density(t) = tri else { unreachable!() };
        assert!((t.power_integral(0.5).powi(2) - (8.0f64 / 9.0).powi(2)).abs() < 1e-14);
        let sph = MeasureSpec::preset("uniform-sphere", &o).unwrap();
        let MeasureSpec::Density(s) = sph else { unreachable!() };
        assert!((s.power_integral(0.5).powi(2) - 4.0 * PI).abs() < 1e-12);
        // gaussian on the plane: normalized e^{-rho^2}/pi, int h^{1/2} = 2 sqrt(pi)
        let g = MeasureSpec::preset("gaussian-euclidean", &o).unwrap();
        let MeasureSpec::Density(g) = g else { unreachable!() };
        assert!((g.power_integral(0.5) - 2.0 * PI.sqrt()).abs() < 1e-8);
        assert!((g.density_at(&[0.0, 0.0]) - 1.0 / PI).abs() < 1e-10);
    }

    #[test]
    fn gaussian_hyperbolic_radial_law() {
        let mu = MeasureSpec::preset("gaussian-hyperbolic", &PresetOptions::default()).unwrap();
        let o = mu.manifold().origin();
        let rep = mu.moment_report(&o, 2.0, 1.0, 200_000, 1).unwrap();
        // E[sinh(rho)^2] under density e^{-rho^2} sinh(rho) drho
        let f = |g: &dyn Fn(f64) -> f64| (0..80_000).map(|i| (i as f64 + 0.5) * 1e-4).map(|r| g(r) * (-r * r).exp() * r.sinh()).sum::<f64>();
        let want = f(&|r: f64| r.sinh().powi(2)) / f(&|_| 1.0);
        assert!((rep.i2 - want).abs() < 4.0 * rep.i2_error, "{} vs {want}", rep.i2);
    }
}
