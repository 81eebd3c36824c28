//! Exact discrete Wasserstein distances and ensemble error functions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DVector;

use crate::enkf::{check_len, Ensemble, ForwardModel};
use crate::error::{Error, Result};

/// Largest number of cost-matrix entries accepted.
pub const MAX_COUPLING_ENTRIES: usize = 1_000_000;

/// Weighted point set in ℝ^M.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub points: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        check_len("measure weights", points.len(), weights.len())?;
        if points.is_empty() {
            return Err(Error::invalid("measure needs at least one support point"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("measure weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("measure weights sum to {total}, not 1")));
        }
        let m = points[0].len();
        for p in &points {
            check_len("support point", m, p.len())?;
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Vec<DVector<f64>>) -> Result<Self> {
        let k = points.len();
        Self::new(points, vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| x == w)
    }
}

/// ‖a − b‖_s for s ∈ [1, ∞].
pub fn s_norm(a: &DVector<f64>, b: &DVector<f64>, s: f64) -> f64 {
    if s.is_infinite() {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    } else if s == 2.0 {
        (a - b).norm()
    } else if s == 1.0 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
    } else {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs().powf(s))
            .sum::<f64>()
            .powf(1.0 / s)
    }
}

fn check_exponents(p: f64, s: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) || !(s >= 1.0) {
        return Err(Error::invalid(format!(
            "Wasserstein exponents need p ∈ [1, ∞) and s ∈ [1, ∞], got p = {p}, s = {s}"
        )));
    }
    Ok(())
}

/// W_{p,s}(μ, ν) as the exact optimum of the transport linear program.
pub fn wasserstein_discrete(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64, s: f64) -> Result<f64> {
    check_exponents(p, s)?;
    check_len("support dimension", mu.points[0].len(), nu.points[0].len())?;
    let (k1, k2) = (mu.len(), nu.len());
    if k1.saturating_mul(k2) > MAX_COUPLING_ENTRIES {
        return Err(Error::invalid(format!(
            "coupling of {k1}×{k2} entries exceeds the limit of {MAX_COUPLING_ENTRIES}"
        )));
    }
    let wsum = |m: &DiscreteMeasure| m.weights.iter().sum::<f64>();
    if (wsum(mu) - wsum(nu)).abs() > 1e-12 {
        return Err(Error::invalid("measures carry different total mass"));
    }
    let cost: Vec<Vec<f64>> = mu
        .points
        .iter()
        .map(|a| nu.points.iter().map(|b| s_norm(a, b, s).powf(p)).collect())
        .collect();
    let total = if k1 == k2 && mu.is_uniform() && nu.is_uniform() {
        assignment_cost(&cost) / k1 as f64
    } else {
        transport_cost(&cost, &mu.weights, &nu.weights)?
    };
    Ok(total.max(0.0).powf(1.0 / p))
}

/// Minimum-cost perfect matching (shortest augmenting paths with potentials).
pub fn assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // match_col[j] = row assigned to column j (1-based, 0 = free).
    let mut match_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        match_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = match_col[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if match_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if match_col[j] > 0 {
            row_to_col[match_col[j] - 1] = j - 1;
        }
    }
    row_to_col
}

fn assignment_cost(cost: &[Vec<f64>]) -> f64 {
    assignment(cost)
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum()
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min Σ π_ij c_ij over couplings with marginals (a, b), by successive
/// shortest paths on the bipartite residual network.
fn transport_cost(cost: &[Vec<f64>], a: &[f64], b: &[f64]) -> Result<f64> {
    let (k1, k2) = (a.len(), b.len());
    // Nodes: sources 0..k1, sinks k1..k1+k2.
    let nv = k1 + k2;
    let mut flow = vec![vec![0.0; k2]; k1];
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut pot = vec![0.0; nv];
    let tol = 1e-15;
    let mut remaining: f64 = supply.iter().sum();
    let mut guard = 0usize;
    while remaining > 1e-13 {
        guard += 1;
        if guard > 20 * (nv + 10) * (nv + 10) {
            return Err(Error::Numeric("transport solver failed to converge".into()));
        }
        let mut dist = vec![f64::INFINITY; nv];
        let mut prev = vec![usize::MAX; nv];
        let mut done = vec![false; nv];
        let mut heap = BinaryHeap::new();
        for i in 0..k1 {
            if supply[i] > tol {
                dist[i] = 0.0;
                heap.push(HeapItem(0.0, i));
            }
        }
        while let Some(HeapItem(d, x)) = heap.pop() {
            if done[x] || d > dist[x] {
                continue;
            }
            done[x] = true;
            if x < k1 {
                for (j, c) in cost[x].iter().enumerate() {
                    let y = k1 + j;
                    let rc = c + pot[x] - pot[y];
                    let nd = d + rc.max(0.0);
                    if nd < dist[y] {
                        dist[y] = nd;
                        prev[y] = x;
                        heap.push(HeapItem(nd, y));
                    }
                }
            } else {
                let j = x - k1;
                for i in 0..k1 {
                    if flow[i][j] > tol {
                        let rc = -cost[i][j] + pot[x] - pot[i];
                        let nd = d + rc.max(0.0);
                        if nd < dist[i] {
                            dist[i] = nd;
                            prev[i] = x;
                            heap.push(HeapItem(nd, i));
                        }
                    }
                }
            }
        }
        let target = (0..k2)
            .filter(|&j| demand[j] > tol && dist[k1 + j].is_finite())
            .min_by(|&p, &q| dist[k1 + p].total_cmp(&dist[k1 + q]));
        let Some(jt) = target else {
            return Err(Error::Numeric("transport network has no augmenting path".into()));
        };
        let dmax = dist[k1 + jt];
        for v in 0..nv {
            pot[v] += dist[v].min(dmax);
        }
        // Bottleneck along the path back to a source.
        let mut amount = demand[jt];
        let mut x = k1 + jt;
        while prev[x] != usize::MAX {
            let px = prev[x];
            if px >= k1 {
                // Reverse arc sink px → source x.
                amount = amount.min(flow[x][px - k1]);
            }
            x = px;
        }
        amount = amount.min(supply[x]);
        let source = x;
        let mut x = k1 + jt;
        while prev[x] != usize::MAX {
            let px = prev[x];
            if px < k1 {
                flow[px][x - k1] += amount;
            } else {
                flow[x][px - k1] -= amount;
            }
            x = px;
        }
        supply[source] -= amount;
        demand[jt] -= amount;
        remaining -= amount;
    }
    Ok(flow
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().enumerate().map(|(j, f)| f * cost[i][j]).sum::<f64>())
        .sum())
}

/// ((1/J) Σ_j ‖a_j − b_j‖_s^p)^{1/p}: the cost of the identity coupling.
pub fn wasserstein_upper_bound(a: &Ensemble, b: &Ensemble, p: f64, s: f64) -> Result<f64> {
    check_exponents(p, s)?;
    check_len("ensemble size", a.size(), b.size())?;
    check_len("particle dimension", a.dim(), b.dim())?;
    let sum: f64 = a
        .particles
        .iter()
        .zip(&b.particles)
        .map(|(x, y)| s_norm(x, y, s).powf(p))
        .sum();
    Ok((sum / a.size() as f64).powf(1.0 / p))
}

fn mean_output_distance(u: &Ensemble, g1: &dyn ForwardModel, g2: &dyn ForwardModel) -> Result<f64> {
    check_len("forward output", g1.output_dim(), g2.output_dim())?;
    let a = crate::enkf::evaluate_ensemble(g1, &u.particles, u.iteration)?;
    let b = crate::enkf::evaluate_ensemble(g2, &u.particles, u.iteration)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).norm()).sum::<f64>() / u.size() as f64)
}

/// (1/J) Σ_j ‖G^ε(u_j) − G⁰(u_j)‖₂.
pub fn homogenization_error(u: &Ensemble, g_eps: &dyn ForwardModel, g_zero: &dyn ForwardModel) -> Result<f64> {
    mean_output_distance(u, g_eps, g_zero)
}

/// (1/J) Σ_j ‖G_h(u_j) − G_ref(u_j)‖₂.
pub fn discretization_error(u: &Ensemble, g_h: &dyn ForwardModel, g_ref: &dyn ForwardModel) -> Result<f64> {
    mean_output_distance(u, g_h, g_ref)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enkf::LinearForward;
    use crate::rng::{SeedStream, StreamTag};
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_points(rng: &mut impl Rng, k: usize, m: usize) -> Vec<DVector<f64>> {
        (0..k).map(|_| DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0))).collect()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..n {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn trivial_cases() {
        let mut rng = SeedStream::new(1, StreamTag::Study).rng(&[]);
        let pts = random_points(&mut rng, 4, 3);
        let mu = DiscreteMeasure::uniform(pts.clone()).unwrap();
        assert!(wasserstein_discrete(&mu, &mu, 1.0, 2.0).unwrap() < 1e-14);
        let a = DiscreteMeasure::uniform(vec![pts[0].clone()]).unwrap();
        let b = DiscreteMeasure::uniform(vec![pts[1].clone()]).unwrap();
        for p in [1.0, 2.0, 3.5] {
            for s in [1.0, 2.0, f64::INFINITY] {
                let w = wasserstein_discrete(&a, &b, p, s).unwrap();
                assert!((w - s_norm(&pts[0], &pts[1], s)).abs() < 1e-14);
            }
        }
        assert!(DiscreteMeasure::new(pts.clone(), vec![0.5; 4]).is_err());
    }

    #[test]
    fn matches_permutation_oracle() {
        let mut rng = SeedStream::new(2, StreamTag::Study).rng(&[]);
        for j in 1..=6 {
            let perms = permutations(j);
            for _ in 0..20 {
                let a = random_points(&mut rng, j, 3);
                let b = random_points(&mut rng, j, 3);
                for (p, s) in [(1.0, 2.0), (2.0, 2.0), (1.0, f64::INFINITY)] {
                    let oracle = perms
                        .iter()
                        .map(|q| (0..j).map(|i| s_norm(&a[i], &b[q[i]], s).powf(p)).sum::<f64>())
                        .fold(f64::INFINITY, f64::min);
                    let oracle = (oracle / j as f64).powf(1.0 / p);
                    let mu = DiscreteMeasure::uniform(a.clone()).unwrap();
                    let nu = DiscreteMeasure::uniform(b.clone()).unwrap();
                    let w = wasserstein_discrete(&mu, &nu, p, s).unwrap();
                    assert!((w - oracle).abs() <= 1e-12 * oracle.max(1.0));
                }
            }
        }
    }

    #[test]
    fn general_weights_agree_with_split_uniform_atoms() {
        // Splitting an atom of weight 2/J into two copies of weight 1/J
        // leaves the measure (and so the distance) unchanged.
        let mut rng = SeedStream::new(3, StreamTag::Study).rng(&[]);
        for _ in 0..20 {
            let a = random_points(&mut rng, 3, 2);
            let b = random_points(&mut rng, 4, 2);
            let mu = DiscreteMeasure::new(a.clone(), vec![0.5, 0.25, 0.25]).unwrap();
            let nu = DiscreteMeasure::uniform(b.clone()).unwrap();
            let split = DiscreteMeasure::uniform(vec![a[0].clone(), a[0].clone(), a[1].clone(), a[2].clone()]).unwrap();
            let w1 = wasserstein_discrete(&mu, &nu, 2.0, 2.0).unwrap();
            let w2 = wasserstein_discrete(&split, &nu, 2.0, 2.0).unwrap();
            assert!((w1 - w2).abs() < 1e-12, "{w1} {w2}");
        }
    }

    #[test]
    fn unequal_sizes_use_the_general_solver() {
        let a = DiscreteMeasure::uniform(vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)]).unwrap();
        let b = DiscreteMeasure::uniform(vec![
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 1.0),
        ])
        .unwrap();
        // Optimal plan moves mass 1/6 from each end to the middle point.
        let w = wasserstein_discrete(&a, &b, 1.0, 2.0).unwrap();
        assert!((w - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn upper_bound_identities() {
        let mut rng = SeedStream::new(4, StreamTag::Study).rng(&[]);
        let a = Ensemble::new(random_points(&mut rng, 6, 3)).unwrap();
        let b = Ensemble::new(random_points(&mut rng, 6, 3)).unwrap();
        assert_eq!(wasserstein_upper_bound(&a, &a, 2.0, 2.0).unwrap(), 0.0);
        let en = crate::enkf::ensemble_norm(&a, &b).unwrap();
        assert!((wasserstein_upper_bound(&a, &b, 1.0, 2.0).unwrap() - en).abs() < 1e-14);
        let small = Ensemble::new(a.particles[..3].to_vec()).unwrap();
        assert!(wasserstein_upper_bound(&a, &small, 1.0, 2.0).is_err());
    }

    #[test]
    fn crossing_pair_is_strictly_improved() {
        let a = Ensemble::new(vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)]).unwrap();
        let b = Ensemble::new(vec![DVector::from_element(1, 1.0), DVector::from_element(1, 0.0)]).unwrap();
        let bound = wasserstein_upper_bound(&a, &b, 1.0, 2.0).unwrap();
        let w = wasserstein_discrete(
            &crate::enkf::empirical_measure(&a),
            &crate::enkf::empirical_measure(&b),
            1.0,
            2.0,
        )
        .unwrap();
        assert_eq!(bound, 1.0);
        assert!(w < 1e-15);
    }

    #[test]
    fn error_functions() {
        let mut rng = SeedStream::new(5, StreamTag::Study).rng(&[]);
        let u = Ensemble::new(random_points(&mut rng, 5, 2)).unwrap();
        let g = LinearForward::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 2.0, -1.0, 1.0]));
        assert_eq!(homogenization_error(&u, &g, &g).unwrap(), 0.0);
        let mut shifted = g.clone();
        shifted.offset = DVector::from_row_slice(&[0.3, -0.4, 1.2]);
        let e = homogenization_error(&u, &g, &shifted).unwrap();
        assert!((e - shifted.offset.norm()).abs() < 1e-14);
        let one = Ensemble::new(vec![u.particles[0].clone()]).unwrap();
        let d = discretization_error(&one, &g, &shifted).unwrap();
        assert!((d - (g.evaluate(&u.particles[0]).unwrap() - shifted.evaluate(&u.particles[0]).unwrap()).norm()).abs() < 1e-14);
    }

    fn arb_measure(k: usize) -> impl Strategy<Value = DiscreteMeasure> {
        (
            proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 2), k),
            proptest::collection::vec(0.1f64..1.0, k),
        )
            .prop_map(|(pts, w)| {
                let total: f64 = w.iter().sum();
                let mut w: Vec<f64> = w.iter().map(|x| x / total).collect();
                let last: f64 = w[..w.len() - 1].iter().sum();
                *w.last_mut().unwrap() = 1.0 - last;
                DiscreteMeasure::new(pts.into_iter().map(DVector::from_vec).collect(), w).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn metric_axioms(a in arb_measure(3), b in arb_measure(4), c in arb_measure(2)) {
            for (p, s) in [(1.0, 2.0), (2.0, 2.0), (1.0, f64::INFINITY)] {
                let ab = wasserstein_discrete(&a, &b, p, s).unwrap();
                let ba = wasserstein_discrete(&b, &a, p, s).unwrap();
                let ac = wasserstein_discrete(&a, &c, p, s).unwrap();
                let cb = wasserstein_discrete(&c, &b, p, s).unwrap();
                prop_assert!((ab - ba).abs() < 1e-9);
                prop_assert!(ab <= ac + cb + 1e-9);
                prop_assert!(wasserstein_discrete(&a, &a, p, s).unwrap() < 1e-9);
            }
        }

        #[test]
        fn identity_coupling_bounds_the_optimum(
            a in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 5),
            b in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 5),
        ) {
            let ea = Ensemble::new(a.into_iter().map(DVector::from_vec).collect()).unwrap();
            let eb = Ensemble::new(b.into_iter().map(DVector::from_vec).collect()).unwrap();
            for (p, s) in [(1.0, 2.0), (2.0, 2.0), (1.0, f64::INFINITY)] {
                let w = wasserstein_discrete(
                    &crate::enkf::empirical_measure(&ea),
                    &crate::enkf::empirical_measure(&eb),
                    p,
                    s,
                ).unwrap();
                prop_assert!(w <= wasserstein_upper_bound(&ea, &eb, p, s).unwrap() + 1e-9);
            }
        }
    }
}
