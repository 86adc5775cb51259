//! Property checkers shared by the acceptance and property test targets.
//! Each returns `Err(description)` on the first violated property.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riemquant::geometry::{ManifoldKind, ModelManifold, Point};
use riemquant::measures::{AtomMeasure, DensityKind, MeasureSpec};
use riemquant::quantizer::{evaluate_cloud, lloyd, Cloud, Codebook, LloydConfig};
use riemquant::transport::identity_check;

pub type Check = std::result::Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_manifold(rng: &mut impl Rng, max_dim: usize) -> ModelManifold {
    let dim = rng.random_range(1..=max_dim);
    let scale = rng.random_range(0.5..2.0);
    let kind = [ManifoldKind::Euclidean, ManifoldKind::Sphere, ManifoldKind::Hyperbolic][rng.random_range(0..3)];
    ModelManifold::new(kind, dim, scale).unwrap()
}

fn spread(m: &ModelManifold) -> f64 {
    match m.kind() {
        ManifoldKind::Sphere => 0.8 * m.scale(),
        _ => 1.5 * m.scale(),
    }
}

pub fn metric_axioms(seed: u64) -> Check {
    let mut rng = rng(seed);
    let m = random_manifold(&mut rng, 4);
    let s = spread(&m);
    let (x, y, z) = (m.random_point(&mut rng, s), m.random_point(&mut rng, s), m.random_point(&mut rng, s));
    let dxy = m.dist(&x, &y).map_err(|e| e.to_string())?;
    let dyx = m.dist(&y, &x).map_err(|e| e.to_string())?;
    let dxz = m.dist(&x, &z).map_err(|e| e.to_string())?;
    let dzy = m.dist(&z, &y).map_err(|e| e.to_string())?;
    let dxx = m.dist(&x, &x).map_err(|e| e.to_string())?;
    let tol = 1e-10 * (1.0 + dxy + dxz + dzy);
    if dxy < 0.0 || dxx > 1e-7 * m.scale() {
        return Err(format!("{m:?}: positivity d(x,y)={dxy}, d(x,x)={dxx}"));
    }
    if (dxy - dyx).abs() > tol {
        return Err(format!("{m:?}: symmetry {dxy} vs {dyx}"));
    }
    if dxy > dxz + dzy + tol {
        return Err(format!("{m:?}: triangle {dxy} > {dxz} + {dzy}"));
    }
    if m.kind() == ManifoldKind::Sphere && dxy > std::f64::consts::PI * m.scale() + tol {
        return Err(format!("{m:?}: distance {dxy} exceeds the diameter"));
    }
    Ok(())
}

pub fn exp_log_roundtrip(seed: u64) -> Check {
    let mut rng = rng(seed);
    let m = random_manifold(&mut rng, 4);
    let x = m.random_point(&mut rng, spread(&m));
    let mut v = m.random_tangent(&mut rng, &x, m.scale());
    let n = m.tangent_norm(&v.components);
    let cap = 0.9 * m.injectivity_radius().min(4.0 * m.scale());
    if n > cap {
        v.components.iter_mut().for_each(|c| *c *= cap / n);
    }
    let y = m.exp_map(&v).map_err(|e| e.to_string())?;
    let w = m.log_map(&x, &y).map_err(|e| e.to_string())?;
    let err: f64 = v.components.iter().zip(&w.components).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let nv = m.tangent_norm(&v.components);
    if err > 1e-8 * (1.0 + nv) {
        return Err(format!("{m:?}: log(exp v) off by {err} for |v| = {nv}"));
    }
    let back = m.exp_map(&w).map_err(|e| e.to_string())?;
    let d = m.dist(&back, &y).map_err(|e| e.to_string())?;
    if d > 1e-8 * (1.0 + nv) {
        return Err(format!("{m:?}: exp(log y) off by {d}"));
    }
    Ok(())
}

fn random_cloud(rng: &mut impl Rng, m: &ModelManifold, n: usize) -> Cloud {
    let s = spread(m);
    let mut coords = Vec::new();
    let mut w = Vec::new();
    for _ in 0..n {
        coords.extend_from_slice(m.random_point(rng, s).coords());
        w.push(rng.random_range(0.1..1.0));
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Cloud::new(*m, coords, w).unwrap()
}

fn random_codebook(rng: &mut impl Rng, m: &ModelManifold, n: usize) -> Codebook {
    let s = spread(m);
    Codebook::new(*m, (0..n).map(|_| m.random_point(rng, s)).collect()).unwrap()
}

pub fn lloyd_monotone(seed: u64) -> Check {
    let mut rng = rng(seed);
    let m = random_manifold(&mut rng, 3);
    let r = [1.0, 2.0, 3.0, 1.5][rng.random_range(0..4)];
    let cloud = random_cloud(&mut rng, &m, 60);
    let k = rng.random_range(2..6);
    let init = random_codebook(&mut rng, &m, k);
    let cfg = LloydConfig {
        max_iter: 20,
        ..Default::default()
    };
    let run = lloyd(&cloud, &init, r, &cfg).map_err(|e| e.to_string())?;
    for w in run.history.windows(2) {
        if w[1] > w[0] * (1.0 + 1e-12) + 1e-15 {
            return Err(format!("{m:?}, r={r}: distortion rose {} -> {}", w[0], w[1]));
        }
    }
    Ok(())
}

pub fn weight_optimality(seed: u64) -> Check {
    let mut rng = rng(seed);
    let m = random_manifold(&mut rng, 3);
    let r = if rng.random_bool(0.5) { 1.0 } else { 2.0 };
    let s = spread(&m);
    let atoms = (0..rng.random_range(1..=50))
        .map(|_| (m.random_point(&mut rng, s), rng.random_range(0.05..1.0)))
        .collect();
    let mu = AtomMeasure::new(m, atoms).map_err(|e| e.to_string())?;
    let support: Vec<Point> = (0..rng.random_range(1..=8)).map(|_| m.random_point(&mut rng, s)).collect();
    let chk = identity_check(&mu, &support, r).map_err(|e| e.to_string())?;
    if chk.gap > 1e-9 {
        return Err(format!("{m:?}, r={r}: identity gap {} (lhs {}, rhs {})", chk.gap, chk.lhs, chk.rhs));
    }
    if chk.min_perturbation_change < -1e-12 {
        return Err(format!("{m:?}, r={r}: perturbed weights beat the Voronoi masses by {}", -chk.min_perturbation_change));
    }
    Ok(())
}

pub fn euclidean_scaling(seed: u64) -> Check {
    let mut rng = rng(seed);
    let d = rng.random_range(1..=3);
    let m = ModelManifold::euclidean(d);
    let r = [1.0, 2.0, 3.0, 1.5][rng.random_range(0..4)];
    let lambda = rng.random_range(0.1..10.0);
    let cloud = random_cloud(&mut rng, &m, 50);
    let k = rng.random_range(1..6);
    let cb = random_codebook(&mut rng, &m, k);
    let scaled_cloud = Cloud::new(m, cloud.coords().iter().map(|c| lambda * c).collect(), cloud.weights().to_vec()).unwrap();
    let scaled_codes: Vec<f64> = cb.flat().iter().map(|c| lambda * c).collect();
    let a = evaluate_cloud(&cloud, &cb.flat(), r).moments.total();
    let b = evaluate_cloud(&scaled_cloud, &scaled_codes, r).moments.total();
    let want = lambda.powf(r) * a;
    if (b - want).abs() > 1e-10 * want.abs().max(1e-300) {
        return Err(format!("d={d}, r={r}, lambda={lambda}: {b} vs {want}"));
    }
    if r != 2.0 {
        return Ok(());
    }
    // with closed-form centroids, a Lloyd run commutes with the dilation
    let cfg = LloydConfig {
        max_iter: 5,
        ..Default::default()
    };
    let ra = lloyd(&cloud, &cb, r, &cfg).map_err(|e| e.to_string())?;
    let scaled_cb = Codebook::from_flat(m, &scaled_codes).unwrap();
    let rb = lloyd(&scaled_cloud, &scaled_cb, r, &cfg).map_err(|e| e.to_string())?;
    let want = lambda.powf(r) * ra.distortion;
    if (rb.distortion - want).abs() > 1e-6 * want.abs().max(1e-300) {
        return Err(format!("d={d}, r={r}, lambda={lambda}: Lloyd {} vs {want}", rb.distortion));
    }
    Ok(())
}

fn determinism_payload(seed: u64) -> Vec<u64> {
    let mut rng = rng(seed);
    let m = random_manifold(&mut rng, 3);
    let mu = MeasureSpec::density(
        m,
        match m.kind() {
            ManifoldKind::Sphere => DensityKind::UniformSphere,
            _ => DensityKind::GaussianRadial,
        },
    )
    .unwrap();
    let n = 2 * riemquant::parallel::CHUNK + rng.random_range(1..500);
    let sample = mu.sample_flat(n, seed).unwrap();
    let cloud = Cloud::new(m, sample.clone(), vec![1.0 / n as f64; n]).unwrap();
    let cb = random_codebook(&mut rng, &m, 7);
    let ev = evaluate_cloud(&cloud, &cb.flat(), 2.0);
    let mut out: Vec<u64> = sample.iter().map(|x| x.to_bits()).collect();
    out.push(ev.moments.total().to_bits());
    out.extend(ev.cell_mass.iter().map(|x| x.to_bits()));
    out
}

pub fn thread_determinism(seed: u64, pools: &[rayon::ThreadPool]) -> Check {
    let outs: Vec<Vec<u64>> = pools.iter().map(|p| p.install(|| determinism_payload(seed))).collect();
    if outs.windows(2).all(|w| w[0] == w[1]) {
        Ok(())
    } else {
        Err(format!("seed {seed}: results differ across thread counts"))
    }
}

pub fn pools() -> Vec<rayon::ThreadPool> {
    [1, 4]
        .iter()
        .map(|&t| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap())
        .collect()
}
