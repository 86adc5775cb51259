//! Closed-form Riemannian kernels for the three constant-curvature model
//! spaces.
//!
//! Points are stored in their natural embedding:
//!
//! * Euclidean `R^d`: plain coordinates, length `d`.
//! * Sphere of radius `s`: vectors of `R^{d+1}` with Euclidean norm `s`.
//! * Hyperbolic space of curvature `-1/s^2`: upper sheet of the hyperboloid
//!   `<x, x>_M = -s^2` in Minkowski space `R^{1,d}`, where
//!   `<x, y>_M = -x_0 y_0 + sum_i x_i y_i`.
//!
//! Every kernel is a pure function of its inputs. The `*_unchecked` variants
//! operate on raw coordinate slices and skip validation; they are the hot
//! path used by the quantizer.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{QuantError, Result};

/// Tolerance on the embedding constraint of a point.
pub const EMBEDDING_TOL: f64 = 1e-10;
/// Tolerance of the exp/log roundtrip.
pub const ROUNDTRIP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ManifoldKind {
    Euclidean,
    Sphere,
    Hyperbolic,
}

impl ManifoldKind {
    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Euclidean => "euclidean",
            ManifoldKind::Sphere => "sphere",
            ManifoldKind::Hyperbolic => "hyperbolic",
        }
    }
}

impl std::str::FromStr for ManifoldKind {
    type Err = QuantError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "flat" | "r" => Ok(ManifoldKind::Euclidean),
            "sphere" | "spherical" | "s" => Ok(ManifoldKind::Sphere),
            "hyperbolic" | "hyperboloid" | "h" => Ok(ManifoldKind::Hyperbolic),
            other => Err(QuantError::InvalidParameter(format!(
                "unknown manifold kind `{other}`"
            ))),
        }
    }
}

/// A constant-curvature model space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelManifold {
    kind: ManifoldKind,
    dim: usize,
    scale: f64,
}

/// A point of a model manifold, stored in embedding coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    /// Wraps raw coordinates without validation. Use
    /// [`ModelManifold::point`] to validate.
    pub fn new(coords: Vec<f64>) -> Self {
        Point { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

impl From<Vec<f64>> for Point {
    fn from(coords: Vec<f64>) -> Self {
        Point { coords }
    }
}

/// A tangent vector, stored in the embedding space of its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: Point,
    pub components: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: Point, components: Vec<f64>) -> Self {
        TangentVector { base, components }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn minkowski(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + dot(&a[1..], &b[1..])
}

#[inline]
fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl ModelManifold {
    pub fn new(kind: ManifoldKind, dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(QuantError::InvalidParameter("dimension must be >= 1".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(QuantError::InvalidParameter(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        Ok(ModelManifold { kind, dim, scale })
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(ManifoldKind::Euclidean, dim, 1.0).expect("dimension must be >= 1")
    }

    pub fn sphere(dim: usize) -> Self {
        Self::new(ManifoldKind::Sphere, dim, 1.0).expect("dimension must be >= 1")
    }

    pub fn hyperbolic(dim: usize) -> Self {
        Self::new(ManifoldKind::Hyperbolic, dim, 1.0).expect("dimension must be >= 1")
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Length of the coordinate vector of a point.
    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Euclidean => self.dim,
            ManifoldKind::Sphere | ManifoldKind::Hyperbolic => self.dim + 1,
        }
    }

    pub fn injectivity_radius(&self) -> f64 {
        match self.kind {
            ManifoldKind::Sphere => std::f64::consts::PI * self.scale,
            _ => f64::INFINITY,
        }
    }

    /// Canonical base point: the origin of `R^d`, the pole `s e_0` of the
    /// sphere, or the vertex `s e_0` of the hyperboloid.
    pub fn origin(&self) -> Point {
        let mut c = vec![0.0; self.ambient_dim()];
        if self.kind != ManifoldKind::Euclidean {
            c[0] = self.scale;
        }
        Point::new(c)
    }

    /// Validates coordinates and wraps them as a point.
    pub fn point(&self, coords: Vec<f64>) -> Result<Point> {
        let p = Point::new(coords);
        self.check_point(&p)?;
        Ok(p)
    }

    pub fn check_point(&self, p: &Point) -> Result<()> {
        self.check_coords(p.coords())
    }

    pub fn check_coords(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.ambient_dim() {
            return Err(QuantError::DimensionMismatch {
                expected: self.ambient_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(QuantError::InvalidPoint("non-finite coordinate".into()));
        }
        let s = self.scale;
        match self.kind {
            ManifoldKind::Euclidean => Ok(()),
            ManifoldKind::Sphere => {
                let dev = (norm2(x) - s).abs();
                if dev > EMBEDDING_TOL * s.max(1.0) {
                    Err(QuantError::InvalidPoint(format!(
                        "off the sphere by {dev:e}"
                    )))
                } else {
                    Ok(())
                }
            }
            ManifoldKind::Hyperbolic => {
                if x[0] <= 0.0 {
                    return Err(QuantError::InvalidPoint("lower sheet of hyperboloid".into()));
                }
                // Relative to the coordinate magnitude: far from the vertex the
                // Minkowski norm cannot be evaluated more accurately than that.
                let dev = (minkowski(x, x) + s * s).abs();
                if dev > EMBEDDING_TOL * (s * s + dot(x, x)) {
                    Err(QuantError::InvalidPoint(format!(
                        "off the hyperboloid by {dev:e}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn check_tangent(&self, v: &TangentVector) -> Result<()> {
        self.check_point(&v.base)?;
        let b = v.base.coords();
        let w = &v.components;
        if w.len() != self.ambient_dim() {
            return Err(QuantError::DimensionMismatch {
                expected: self.ambient_dim(),
                got: w.len(),
            });
        }
        if w.iter().any(|c| !c.is_finite()) {
            return Err(QuantError::InvalidTangent("non-finite component".into()));
        }
        let (ip, mag) = match self.kind {
            ManifoldKind::Euclidean => return Ok(()),
            ManifoldKind::Sphere => (dot(b, w), norm2(b) * norm2(w)),
            ManifoldKind::Hyperbolic => (minkowski(b, w), norm2(b) * norm2(w)),
        };
        if ip.abs() > EMBEDDING_TOL * mag.max(1.0) {
            return Err(QuantError::InvalidTangent(format!(
                "not orthogonal to its base point (inner product {ip:e})"
            )));
        }
        Ok(())
    }

    /// Riemannian inner product of two tangent vectors at a common base.
    #[inline]
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.kind {
            ManifoldKind::Hyperbolic => minkowski(u, v),
            _ => dot(u, v),
        }
    }

    #[inline]
    pub fn tangent_norm(&self, v: &[f64]) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    /// Norm of a tangent vector at `base`. On the hyperboloid the Minkowski
    /// square cancels badly far from the vertex, so the spatial part is split
    /// into its components along and across the base direction `u`:
    /// `|v|^2 = |v_perp|^2 + (v . u)^2 s^2 / x_0^2`.
    #[inline]
    pub fn tangent_norm_at(&self, base: &[f64], v: &[f64]) -> f64 {
        if self.kind != ManifoldKind::Hyperbolic {
            return norm2(v);
        }
        let sp = &base[1..];
        let nb = norm2(sp);
        if nb == 0.0 {
            return norm2(&v[1..]);
        }
        let p = dot(sp, &v[1..]) / nb;
        let perp: f64 = sp.iter().zip(&v[1..]).map(|(b, w)| (w - p * b / nb).powi(2)).sum();
        let along = p * self.scale / base[0];
        (perp + along * along).sqrt()
    }

    /// Geodesic distance with input validation.
    pub fn dist(&self, x: &Point, y: &Point) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.dist_unchecked(x.coords(), y.coords()))
    }

    /// Geodesic distance on raw coordinates.
    ///
    /// The sphere uses `2 atan2(|x-y|, |x+y|)`, accurate at every separation.
    /// On the hyperboloid the distance is recovered from the polar split
    /// `x = (s cosh a, s sinh a * u)`:
    /// `sinh^2(d/2s) = sinh^2((a-b)/2) + sinh a sinh b |u-v|^2 / 4`,
    /// which has no cancellation even far from the vertex.
    #[inline]
    pub fn dist_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let s = self.scale;
        match self.kind {
            ManifoldKind::Euclidean => sq_diff(x, y).sqrt(),
            ManifoldKind::Sphere => {
                let mut dm = 0.0;
                let mut dp = 0.0;
                for (a, b) in x.iter().zip(y) {
                    dm += (a - b) * (a - b);
                    dp += (a + b) * (a + b);
                }
                2.0 * s * dm.sqrt().atan2(dp.sqrt())
            }
            ManifoldKind::Hyperbolic => {
                let nx = norm2(&x[1..]);
                let ny = norm2(&y[1..]);
                let (sx, sy) = (nx / s, ny / s);
                let h = (0.5 * (sx.asinh() - sy.asinh())).sinh();
                let ang = if nx == 0.0 || ny == 0.0 {
                    0.0
                } else {
                    x[1..].iter().zip(&y[1..]).map(|(a, b)| (a / nx - b / ny).powi(2)).sum()
                };
                2.0 * s * (h * h + 0.25 * sx * sy * ang).sqrt().asinh()
            }
        }
    }

    /// Exponential map with input validation.
    pub fn exp_map(&self, v: &TangentVector) -> Result<Point> {
        self.check_tangent(v)?;
        let mut out = vec![0.0; self.ambient_dim()];
        self.exp_unchecked(v.base.coords(), &v.components, &mut out);
        Ok(Point::new(out))
    }

    /// Exponential map on raw coordinates; the result is re-projected onto
    /// the embedding constraint.
    pub fn exp_unchecked(&self, base: &[f64], v: &[f64], out: &mut [f64]) {
        let s = self.scale;
        match self.kind {
            ManifoldKind::Euclidean => {
                for ((o, b), w) in out.iter_mut().zip(base).zip(v) {
                    *o = b + w;
                }
            }
            ManifoldKind::Sphere => {
                let n = norm2(v);
                if n == 0.0 {
                    out.copy_from_slice(base);
                    return;
                }
                let t = n / s;
                let (sn, cs) = t.sin_cos();
                for ((o, b), w) in out.iter_mut().zip(base).zip(v) {
                    *o = cs * b + s * sn / n * w;
                }
                let r = norm2(out);
                for o in out.iter_mut() {
                    *o *= s / r;
                }
            }
            ManifoldKind::Hyperbolic => {
                let n = self.tangent_norm_at(base, v);
                if n == 0.0 {
                    out.copy_from_slice(base);
                    return;
                }
                let t = n / s;
                let (ch, sh) = (t.cosh(), t.sinh());
                for ((o, b), w) in out.iter_mut().zip(base).zip(v) {
                    *o = ch * b + s * sh / n * w;
                }
                let spatial = dot(&out[1..], &out[1..]);
                out[0] = (s * s + spatial).sqrt();
            }
        }
    }

    /// Logarithm map with input validation.
    pub fn log_map(&self, base: &Point, y: &Point) -> Result<TangentVector> {
        self.check_point(base)?;
        self.check_point(y)?;
        let mut out = vec![0.0; self.ambient_dim()];
        self.log_unchecked(base.coords(), y.coords(), &mut out)?;
        Ok(TangentVector::new(base.clone(), out))
    }

    /// Logarithm map on raw coordinates. Fails only at the antipode of the
    /// base point on the sphere.
    pub fn log_unchecked(&self, base: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        let d = match self.kind {
            ManifoldKind::Euclidean => 0.0,
            _ => self.dist_unchecked(base, y),
        };
        self.log_at_distance(base, y, d, out)
    }

    /// [`ModelManifold::log_unchecked`] for a caller that already knows
    /// `d = dist(base, y)` (ignored in flat space).
    #[inline]
    pub fn log_at_distance(&self, base: &[f64], y: &[f64], d: f64, out: &mut [f64]) -> Result<()> {
        let s = self.scale;
        match self.kind {
            ManifoldKind::Euclidean => {
                for ((o, b), w) in out.iter_mut().zip(base).zip(y) {
                    *o = w - b;
                }
                Ok(())
            }
            ManifoldKind::Sphere => {
                let c = dot(base, y) / (s * s);
                for ((o, b), w) in out.iter_mut().zip(base).zip(y) {
                    *o = w - c * b;
                }
                let nu = norm2(out);
                if nu <= 1e-15 * s {
                    if c < 0.0 {
                        return Err(QuantError::CutLocus);
                    }
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return Ok(());
                }
                for o in out.iter_mut() {
                    *o *= d / nu;
                }
                Ok(())
            }
            ManifoldKind::Hyperbolic => {
                if d == 0.0 {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return Ok(());
                }
                // y = cosh(t) base + s sinh(t) u with t = d/s and the stable d;
                // no Minkowski product is formed
                let t = d / s;
                let em1 = t.exp_m1();
                let e = 1.0 + em1;
                let ch = 0.5 * (e + 1.0 / e);
                let f = if t < 1e-8 { 1.0 } else { 2.0 * t * e / (em1 * (em1 + 2.0)) };
                for ((o, b), w) in out.iter_mut().zip(base).zip(y) {
                    *o = f * (w - ch * b);
                }
                Ok(())
            }
        }
    }

    /// Stretch factor of the exponential map on the tangent sphere of
    /// radius `rho`: `rho` (flat), `s sinh(rho/s)` (hyperbolic),
    /// `s |sin(rho/s)|` (sphere).
    pub fn a_factor(&self, rho: f64) -> Result<f64> {
        if !(rho >= 0.0) {
            return Err(QuantError::Domain(format!("radius must be >= 0, got {rho}")));
        }
        Ok(self.a_factor_unchecked(rho))
    }

    #[inline]
    pub fn a_factor_unchecked(&self, rho: f64) -> f64 {
        let s = self.scale;
        match self.kind {
            ManifoldKind::Euclidean => rho,
            ManifoldKind::Hyperbolic => s * (rho / s).sinh(),
            ManifoldKind::Sphere => s * (rho / s).sin().abs(),
        }
    }

    /// Orthonormal basis of the tangent space at `base`, as embedding
    /// vectors. At the canonical origin this is `e_1, ..., e_d` (shifted by
    /// one for the embedded models).
    pub fn tangent_frame(&self, base: &[f64]) -> Vec<Vec<f64>> {
        let n = self.ambient_dim();
        let s2 = self.scale * self.scale;
        let candidates: Vec<Vec<f64>> = match self.kind {
            ManifoldKind::Euclidean => {
                return (0..n)
                    .map(|i| {
                        let mut e = vec![0.0; n];
                        e[i] = 1.0;
                        e
                    })
                    .collect()
            }
            ManifoldKind::Sphere => {
                let mut c: Vec<(f64, Vec<f64>)> = (0..n)
                    .map(|i| {
                        let mut e = vec![0.0; n];
                        e[i] = 1.0;
                        let t = base[i] / s2;
                        for (ej, bj) in e.iter_mut().zip(base) {
                            *ej -= t * bj;
                        }
                        (norm2(&e), e)
                    })
                    .collect();
                // drop the axis most aligned with the base point
                let worst = c
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                c.remove(worst);
                c.into_iter().map(|(_, e)| e).collect()
            }
            ManifoldKind::Hyperbolic => (1..n)
                .map(|i| {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    let t = minkowski(base, &e) / s2;
                    for (ej, bj) in e.iter_mut().zip(base) {
                        *ej += t * bj;
                    }
                    e
                })
                .collect(),
        };
        let mut frame: Vec<Vec<f64>> = Vec::with_capacity(self.dim);
        for mut e in candidates {
            for f in &frame {
                let p = self.inner(&e, f);
                for (ei, fi) in e.iter_mut().zip(f) {
                    *ei -= p * fi;
                }
            }
            let nrm = self.tangent_norm(&e);
            e.iter_mut().for_each(|x| *x /= nrm);
            frame.push(e);
        }
        frame
    }

    /// Point at geodesic distance `rho` from `base` in the direction with
    /// frame coordinates `dir` (a unit vector of `R^d`).
    pub fn polar_point(&self, base: &[f64], frame: &[Vec<f64>], rho: f64, dir: &[f64]) -> Vec<f64> {
        let v = frame_combination(frame, dir, rho);
        let mut out = vec![0.0; self.ambient_dim()];
        self.exp_unchecked(base, &v, &mut out);
        out
    }

    /// Geodesic polar coordinates `(rho, direction)` of `x` around `base`;
    /// the direction is returned in frame coordinates. Zero radius yields a
    /// zero direction.
    pub fn polar_coords(&self, base: &[f64], frame: &[Vec<f64>], x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut v = vec![0.0; self.ambient_dim()];
        self.log_unchecked(base, x, &mut v)?;
        let mut dir: Vec<f64> = frame.iter().map(|f| self.inner(&v, f)).collect();
        let rho = norm2(&dir);
        if rho > 0.0 {
            dir.iter_mut().for_each(|c| *c /= rho);
        }
        Ok((self.dist_unchecked(base, x), dir))
    }

    /// Random point at geodesic distance drawn from a Gaussian-radius law of
    /// width `spread` around the origin.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R, spread: f64) -> Point {
        let o = self.origin();
        let frame = self.tangent_frame(o.coords());
        let cf: Vec<f64> = (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal) * spread).collect();
        let v = frame_combination(&frame, &cf, 1.0);
        let mut out = vec![0.0; self.ambient_dim()];
        self.exp_unchecked(o.coords(), &v, &mut out);
        Point::new(out)
    }

    /// Random tangent vector at `base` with Gaussian frame coordinates.
    pub fn random_tangent<R: Rng + ?Sized>(&self, rng: &mut R, base: &Point, spread: f64) -> TangentVector {
        let frame = self.tangent_frame(base.coords());
        let cf: Vec<f64> = (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal) * spread).collect();
        TangentVector::new(base.clone(), frame_combination(&frame, &cf, 1.0))
    }
}

/// `scale * sum_k c_k frame_k`.
pub fn frame_combination(frame: &[Vec<f64>], c: &[f64], scale: f64) -> Vec<f64> {
    let n = frame.first().map_or(0, |f| f.len());
    let mut v = vec![0.0; n];
    for (f, ck) in frame.iter().zip(c) {
        for (vi, fi) in v.iter_mut().zip(f) {
            *vi += scale * ck * fi;
        }
    }
    v
}

/// Orthonormal coordinates on the tangent space at a point. On the
/// hyperboloid they are read off the spatial part, which avoids the
/// cancellation of Minkowski products far from the origin.
#[derive(Debug, Clone)]
pub struct TangentCoords {
    kind: ManifoldKind,
    base: Vec<f64>,
    basis: Vec<Vec<f64>>,
    /// Hyperbolic case: `x0 / s`, the stretch of the spatial part along the
    /// first basis vector.
    stretch: f64,
}

impl TangentCoords {
    pub fn new(m: &ModelManifold, base: &[f64]) -> Self {
        let d = m.dim();
        let identity = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    e
                })
                .collect()
        };
        let (basis, stretch) = match m.kind() {
            ManifoldKind::Euclidean => (identity(d), 1.0),
            ManifoldKind::Sphere => (m.tangent_frame(base), 1.0),
            ManifoldKind::Hyperbolic => {
                let sp = &base[1..];
                let n = norm2(sp);
                if n == 0.0 {
                    (identity(d), 1.0)
                } else {
                    // Householder reflection taking e_1 to +-u
                    let u: Vec<f64> = sp.iter().map(|x| x / n).collect();
                    let sign = if u[0] >= 0.0 { 1.0 } else { -1.0 };
                    let mut w = u.clone();
                    w[0] += sign;
                    let ww = dot(&w, &w);
                    let basis = (0..d)
                        .map(|k| {
                            let mut e = vec![0.0; d];
                            e[k] = 1.0;
                            let f = 2.0 * w[k] / ww;
                            e.iter_mut().zip(&w).for_each(|(ei, wi)| *ei -= f * wi);
                            e
                        })
                        .collect();
                    (basis, base[0] / m.scale())
                }
            }
        };
        TangentCoords {
            kind: m.kind(),
            base: base.to_vec(),
            basis,
            stretch,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Coordinates of the tangent vector `v` at the base point.
    pub fn coords(&self, v: &[f64], out: &mut [f64]) {
        match self.kind {
            ManifoldKind::Euclidean => out.copy_from_slice(v),
            ManifoldKind::Sphere => {
                for (o, b) in out.iter_mut().zip(&self.basis) {
                    *o = dot(v, b);
                }
            }
            ManifoldKind::Hyperbolic => {
                for (o, b) in out.iter_mut().zip(&self.basis) {
                    *o = dot(&v[1..], b);
                }
                out[0] /= self.stretch;
            }
        }
    }

    /// Tangent vector with coordinates `c`.
    pub fn vector(&self, c: &[f64]) -> Vec<f64> {
        match self.kind {
            ManifoldKind::Euclidean => c.to_vec(),
            ManifoldKind::Sphere => frame_combination(&self.basis, c, 1.0),
            ManifoldKind::Hyperbolic => {
                let mut sc = c.to_vec();
                sc[0] *= self.stretch;
                let sp = frame_combination(&self.basis, &sc, 1.0);
                let mut v = Vec::with_capacity(sp.len() + 1);
                v.push(dot(&sp, &self.base[1..]) / self.base[0]);
                v.extend(sp);
                v
            }
        }
    }
}

/// Normal-coordinate chart `x -> exp_p(sum_k x_k e_k)` centred at `p`.
#[derive(Debug, Clone)]
pub struct NormalChart {
    manifold: ModelManifold,
    center: Vec<f64>,
    frame: Vec<Vec<f64>>,
}

impl NormalChart {
    pub fn new(manifold: ModelManifold, center: &Point) -> Result<Self> {
        manifold.check_point(center)?;
        let frame = manifold.tangent_frame(center.coords());
        Ok(NormalChart {
            manifold,
            center: center.coords().to_vec(),
            frame,
        })
    }

    pub fn manifold(&self) -> &ModelManifold {
        &self.manifold
    }

    fn check_domain(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.manifold.dim() {
            return Err(QuantError::DimensionMismatch {
                expected: self.manifold.dim(),
                got: x.len(),
            });
        }
        let rho = norm2(x);
        if !(rho < self.manifold.injectivity_radius()) {
            return Err(QuantError::Domain(format!(
                "chart coordinate of norm {rho} is outside the normal chart"
            )));
        }
        Ok(rho)
    }

    /// `phi^{-1}(x)`.
    pub fn to_manifold(&self, x: &[f64]) -> Result<Point> {
        self.check_domain(x)?;
        let v = frame_combination(&self.frame, x, 1.0);
        let mut out = vec![0.0; self.manifold.ambient_dim()];
        self.manifold.exp_unchecked(&self.center, &v, &mut out);
        Ok(Point::new(out))
    }

    /// `phi(y)`.
    pub fn to_chart(&self, y: &Point) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.manifold.ambient_dim()];
        self.manifold.log_unchecked(&self.center, y.coords(), &mut v)?;
        Ok(self.frame.iter().map(|f| self.manifold.inner(&v, f)).collect())
    }

    /// Ratio `(A(rho)/rho)^2` governing the angular part of the metric.
    fn angular_factor(&self, rho: f64) -> f64 {
        if rho < 1e-8 {
            // second-order expansion; curvature sign k: 1 + k rho^2 / 3
            let s = self.manifold.scale();
            let k = match self.manifold.kind() {
                ManifoldKind::Euclidean => 0.0,
                ManifoldKind::Sphere => -1.0 / (s * s),
                ManifoldKind::Hyperbolic => 1.0 / (s * s),
            };
            1.0 + k * rho * rho / 3.0
        } else {
            let a = self.manifold.a_factor_unchecked(rho) / rho;
            a * a
        }
    }

    /// Metric matrix `g_{kl}(x)` of the chart.
    pub fn metric_matrix(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let rho = self.check_domain(x)?;
        let d = x.len();
        let f = self.angular_factor(rho);
        let mut g = vec![vec![0.0; d]; d];
        for k in 0..d {
            for l in 0..d {
                let radial = if rho > 0.0 { x[k] * x[l] / (rho * rho) } else { 0.0 };
                g[k][l] = (1.0 - f) * radial + if k == l { f } else { 0.0 };
            }
        }
        Ok(g)
    }

    /// Quadratic form `sum g_{kl}(x) v^k v^l`.
    pub fn metric(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let rho = self.check_domain(x)?;
        if v.len() != x.len() {
            return Err(QuantError::DimensionMismatch {
                expected: x.len(),
                got: v.len(),
            });
        }
        let f = self.angular_factor(rho);
        let vv = dot(v, v);
        let radial = if rho > 0.0 {
            let p = dot(x, v) / rho;
            p * p
        } else {
            0.0
        };
        Ok(f * vv + (1.0 - f) * radial)
    }
}

/// `sum g_{kl}(x) v^k v^l` in the normal chart centred at `center`.
pub fn chart_metric(m: &ModelManifold, center: &Point, x: &[f64], v: &[f64]) -> Result<f64> {
    NormalChart::new(*m, center)?.metric(x, v)
}
