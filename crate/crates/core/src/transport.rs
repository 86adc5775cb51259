//! Exact optimal transport between finite atomic measures.
//!
//! A dense transportation simplex: northwest-corner start, potentials on
//! the basis tree, Dantzig pricing with a fallback to Bland's
//! smallest-index rule after a run of degenerate pivots.

use crate::error::{QuantError, Result};
use crate::geometry::Point;
use crate::measures::AtomMeasure;
use crate::quantizer::{evaluate_cloud, Cloud};

/// Largest number of atoms on either side.
pub const MAX_ATOMS: usize = 1000;
/// Allowed difference of the two total masses.
pub const MASS_TOL: f64 = 1e-9;
/// Degenerate pivots in a row before switching to Bland's rule.
const DEGENERATE_RUN: usize = 50;

/// A coupling between two discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    /// `plan[a][b]` is the mass moved from source atom `a` to target atom `b`.
    pub plan: Vec<Vec<f64>>,
    pub cost: f64,
}

impl TransportPlan {
    /// Largest violation of the marginal constraints.
    pub fn marginal_error(&self) -> f64 {
        let rows = self
            .plan
            .iter()
            .zip(&self.source)
            .map(|(row, s)| (row.iter().sum::<f64>() - s).abs());
        let cols = (0..self.target.len()).map(|b| (self.plan.iter().map(|row| row[b]).sum::<f64>() - self.target[b]).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

/// Minimum-cost transport of `supply` onto `demand` for the dense cost
/// matrix `cost` (`supply.len()` rows). Total masses must agree within
/// [`MASS_TOL`].
pub fn solve_transport(cost: &[Vec<f64>], supply: &[f64], demand: &[f64]) -> Result<TransportPlan> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(QuantError::InvalidParameter("empty marginal".into()));
    }
    if m > MAX_ATOMS || n > MAX_ATOMS {
        return Err(QuantError::TooLarge(format!("{m} x {n} exceeds {MAX_ATOMS} atoms per side")));
    }
    if cost.len() != m || cost.iter().any(|row| row.len() != n) {
        return Err(QuantError::DimensionMismatch {
            expected: m * n,
            got: cost.iter().map(|r| r.len()).sum(),
        });
    }
    if supply.iter().chain(demand).any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(QuantError::InvalidParameter("masses must be finite and >= 0".into()));
    }
    let (ms, md): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (ms - md).abs() > MASS_TOL * ms.max(md).max(1.0) {
        return Err(QuantError::MassMismatch {
            source_mass: ms,
            target_mass: md,
        });
    }

    let mut flow = vec![vec![0.0; n]; m];
    let mut basic = vec![vec![false; n]; m];
    // northwest corner; keeps exactly m + n - 1 basic cells
    {
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]).max(0.0);
            flow[i][j] = x;
            basic[i][j] = true;
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if (s[i] <= d[j] && i < m - 1) || j == n - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let scale = cost.iter().flatten().fold(0.0f64, |a, c| a.max(c.abs())).max(1e-300);
    let tol = 1e-12 * scale;
    let mut degenerate = 0usize;
    let max_pivots = 50 * (m + n) * (m + n) + 1000;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    for _ in 0..max_pivots {
        potentials(cost, &basic, &mut u, &mut v);
        let bland = degenerate >= DEGENERATE_RUN;
        let mut entering: Option<(usize, usize)> = None;
        let mut best = -tol;
        'scan: for i in 0..m {
            for j in 0..n {
                if basic[i][j] {
                    continue;
                }
                let rc = cost[i][j] - u[i] - v[j];
                if rc < best {
                    entering = Some((i, j));
                    if bland {
                        break 'scan;
                    }
                    best = rc;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let total = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| flow[i][j] * cost[i][j]).sum();
            return Ok(TransportPlan {
                source: supply.to_vec(),
                target: demand.to_vec(),
                plan: flow,
                cost: total,
            });
        };
        let path = tree_path(&basic, ei, ej);
        // path runs row ei -> ... -> column ej; its last edge loses mass,
        // then signs alternate back to the first edge
        let k = path.len();
        let mut theta = f64::INFINITY;
        let mut leave = (usize::MAX, usize::MAX);
        for (t, &(i, j)) in path.iter().enumerate() {
            if (k - 1 - t) % 2 == 0 {
                let f = flow[i][j];
                if f < theta || (f == theta && (i, j) < leave) {
                    theta = f;
                    leave = (i, j);
                }
            }
        }
        for (t, &(i, j)) in path.iter().enumerate() {
            if (k - 1 - t) % 2 == 0 {
                flow[i][j] -= theta;
            } else {
                flow[i][j] += theta;
            }
        }
        flow[ei][ej] += theta;
        flow[leave.0][leave.1] = 0.0;
        basic[leave.0][leave.1] = false;
        basic[ei][ej] = true;
        if theta > 0.0 {
            degenerate = 0;
        } else {
            degenerate += 1;
        }
    }
    Err(QuantError::Infeasible("transport simplex did not terminate".into()))
}

/// Dual potentials with `u_0 = 0` and `u_i + v_j = c_ij` on the basis.
fn potentials(cost: &[Vec<f64>], basic: &[Vec<bool>], u: &mut [f64], v: &mut [f64]) {
    let (m, n) = (u.len(), v.len());
    let mut seen_r = vec![false; m];
    let mut seen_c = vec![false; n];
    u[0] = 0.0;
    seen_r[0] = true;
    // nodes 0..m are rows, m..m+n columns
    let mut stack = vec![0usize];
    while let Some(node) = stack.pop() {
        if node < m {
            let i = node;
            for j in 0..n {
                if basic[i][j] && !seen_c[j] {
                    v[j] = cost[i][j] - u[i];
                    seen_c[j] = true;
                    stack.push(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if basic[i][j] && !seen_r[i] {
                    u[i] = cost[i][j] - v[j];
                    seen_r[i] = true;
                    stack.push(i);
                }
            }
        }
    }
}

/// Basic cells on the tree path from row `i0` to column `j0`, in order.
fn tree_path(basic: &[Vec<bool>], i0: usize, j0: usize) -> Vec<(usize, usize)> {
    let (m, n) = (basic.len(), basic[0].len());
    let mut parent = vec![usize::MAX; m + n];
    parent[i0] = i0;
    let mut queue = std::collections::VecDeque::from([i0]);
    while let Some(node) = queue.pop_front() {
        if node == m + j0 {
            break;
        }
        if node < m {
            for j in 0..n {
                if basic[node][j] && parent[m + j] == usize::MAX {
                    parent[m + j] = node;
                    queue.push_back(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if basic[i][j] && parent[i] == usize::MAX {
                    parent[i] = node;
                    queue.push_back(i);
                }
            }
        }
    }
    let mut path = Vec::new();
    let mut node = m + j0;
    while node != i0 {
        let p = parent[node];
        let cell = if node >= m { (p, node - m) } else { (node, p - m) };
        path.push(cell);
        node = p;
    }
    path.reverse();
    path
}

fn cost_matrix(nu1: &AtomMeasure, targets: &[&[f64]], r: f64) -> Vec<Vec<f64>> {
    let m = nu1.manifold();
    (0..nu1.len())
        .map(|a| {
            let x = nu1.point(a);
            targets.iter().map(|y| m.dist_unchecked(x.coords(), y).powf(r)).collect()
        })
        .collect()
}

/// `W_r(nu1, nu2)` and an optimal plan for the cost `d(a, b)^r`.
pub fn wasserstein_discrete(nu1: &AtomMeasure, nu2: &AtomMeasure, r: f64) -> Result<(f64, TransportPlan)> {
    if !(r >= 1.0) {
        return Err(QuantError::InvalidParameter(format!("order r must be >= 1, got {r}")));
    }
    if nu1.manifold() != nu2.manifold() {
        return Err(QuantError::InvalidParameter("measures live on different manifolds".into()));
    }
    let amb = nu2.manifold().ambient_dim();
    let targets: Vec<&[f64]> = nu2.coords().chunks_exact(amb).collect();
    let plan = solve_transport(&cost_matrix(nu1, &targets, r), nu1.masses(), nu2.masses())?;
    Ok((plan.cost.max(0.0).powf(1.0 / r), plan))
}

/// Both sides of the identity `min_m W_r^r(sum m_i delta_{x_i}, mu) =
/// F_{N,r}(x_1..x_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    /// Transport cost onto the support with Voronoi masses.
    pub lhs: f64,
    /// Exact distortion of the support.
    pub rhs: f64,
    pub gap: f64,
    pub weights: Vec<f64>,
    /// Smallest change of the transport cost when mass `min(1e-3, w_i)` is
    /// moved from one support point to another (negative values would
    /// contradict optimality of the Voronoi masses).
    pub min_perturbation_change: f64,
}

/// Step used when perturbing the Voronoi masses.
pub const PERTURBATION: f64 = 1e-3;

pub fn identity_check(mu: &AtomMeasure, support: &[Point], r: f64) -> Result<IdentityCheck> {
    if support.is_empty() {
        return Err(QuantError::InvalidParameter("empty support".into()));
    }
    let m = *mu.manifold();
    for p in support {
        m.check_point(p)?;
    }
    let flat: Vec<f64> = support.iter().flat_map(|p| p.coords().iter().copied()).collect();
    let ev = evaluate_cloud(&Cloud::from_atoms(mu), &flat, r);
    let rhs = ev.moments.total();
    let mut weights = ev.cell_mass;
    // absorb rounding so both marginals carry the same total
    let total: f64 = mu.masses().iter().sum();
    let diff = total - weights.iter().sum::<f64>();
    if let Some(k) = (0..weights.len()).max_by(|&a, &b| weights[a].total_cmp(&weights[b])) {
        weights[k] += diff;
    }
    let targets: Vec<&[f64]> = support.iter().map(|p| p.coords()).collect();
    let cost = cost_matrix(mu, &targets, r);
    let lhs = solve_transport(&cost, mu.masses(), &weights)?.cost;

    let mut min_change = f64::INFINITY;
    for i in 0..weights.len() {
        if weights[i] <= 0.0 {
            continue;
        }
        let eps = PERTURBATION.min(weights[i]);
        for j in 0..weights.len() {
            if i == j {
                continue;
            }
            let mut w = weights.clone();
            w[i] -= eps;
            w[j] += eps;
            let c = solve_transport(&cost, mu.masses(), &w)?.cost;
            min_change = min_change.min(c - lhs);
        }
    }
    Ok(IdentityCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        weights,
        min_perturbation_change: if min_change.is_finite() { min_change } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ModelManifold;

    fn line(atoms: &[(f64, f64)]) -> AtomMeasure {
        AtomMeasure::new(
            ModelManifold::euclidean(1),
            atoms.iter().map(|&(x, w)| (Point::new(vec![x]), w)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn wasserstein_examples() {
        let a = line(&[(0.0, 0.5), (1.0, 0.5)]);
        assert_eq!(wasserstein_discrete(&a, &a, 2.0).unwrap().0, 0.0);
        let (w, _) = wasserstein_discrete(&line(&[(0.0, 1.0)]), &line(&[(2.5, 1.0)]), 1.0).unwrap();
        assert_eq!(w, 2.5);
        let three = line(&[(0.0, 1.0 / 3.0), (1.0, 1.0 / 3.0), (2.0, 1.0 / 3.0)]);
        let (w, plan) = wasserstein_discrete(&three, &line(&[(0.5, 1.0)]), 1.0).unwrap();
        assert!((w - 2.5 / 3.0).abs() < 1e-15);
        assert!(plan.marginal_error() < 1e-15);
    }

    #[test]
    fn mass_mismatch_and_size() {
        let a = line(&[(0.0, 1.0)]);
        let b = line(&[(0.0, 2.0)]);
        assert!(matches!(wasserstein_discrete(&a, &b, 1.0), Err(QuantError::MassMismatch { .. })));
        let big = vec![1.0; MAX_ATOMS + 1];
        let cost = vec![vec![0.0; 1]; MAX_ATOMS + 1];
        assert!(matches!(solve_transport(&cost, &big, &[big.len() as f64]), Err(QuantError::TooLarge(_))));
    }

    /// Exhaustive oracle: on sorted atoms of the line with convex cost the
    /// monotone (north-west) coupling is optimal.
    #[test]
    fn matches_monotone_coupling_on_the_line() {
        let src: [(f64, f64); 4] = [(0.1, 0.2), (0.4, 0.3), (0.9, 0.1), (1.5, 0.4)];
        let dst: [(f64, f64); 4] = [(0.0, 0.25), (0.7, 0.25), (1.2, 0.25), (2.0, 0.25)];
        let cost: Vec<Vec<f64>> = src.iter().map(|a| dst.iter().map(|b| (a.0 - b.0).powi(2)).collect()).collect();
        // monotone coupling by quantile matching
        let mut want = 0.0;
        let (mut i, mut j) = (0, 0);
        let (mut s, mut d): (f64, f64) = (src[0].1, dst[0].1);
        while i < src.len() && j < dst.len() {
            let x = s.min(d);
            want += x * cost[i][j];
            s -= x;
            d -= x;
            if s <= 1e-15 {
                i += 1;
                s = src.get(i).map_or(0.0, |a| a.1);
            }
            if d <= 1e-15 {
                j += 1;
                d = dst.get(j).map_or(0.0, |a| a.1);
            }
        }
        // reversed order forces the simplex to pivot
        let rev: Vec<Vec<f64>> = cost.iter().rev().cloned().collect();
        let supply: Vec<f64> = src.iter().rev().map(|a| a.1).collect();
        let plan = solve_transport(&rev, &supply, &dst.map(|a| a.1)).unwrap();
        assert!((plan.cost - want).abs() < 1e-14, "{} vs {want}", plan.cost);
        assert!(plan.marginal_error() < 1e-15);
    }

    #[test]
    fn identity_examples() {
        let a = line(&[(0.0, 0.5), (1.0, 0.5)]);
        let chk = identity_check(&a, &[Point::new(vec![0.0]), Point::new(vec![1.0])], 2.0).unwrap();
        assert_eq!((chk.lhs, chk.rhs), (0.0, 0.0));
        let three = line(&[(0.0, 1.0 / 3.0), (1.0, 1.0 / 3.0), (2.0, 1.0 / 3.0)]);
        let chk = identity_check(&three, &[Point::new(vec![0.5])], 1.0).unwrap();
        assert!((chk.lhs - 2.5 / 3.0).abs() < 1e-15 && (chk.rhs - 2.5 / 3.0).abs() < 1e-15);
    }
}
