//! Boundary-flux observations in weak (residual) form.

use crate::error::{Error, Result};
use crate::fem::FemSolution;
use crate::mesh::{Side, TriMesh};

/// Hat function on `[start, end]` of one side, peaking at 1 at the midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxWeight {
    pub side: Side,
    pub start: f64,
    pub end: f64,
}

impl FluxWeight {
    pub fn new(side: Side, start: f64, end: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || start >= end {
            return Err(Error::invalid(format!(
                "flux weight support [{start}, {end}] must be a proper subinterval of [0, 1]"
            )));
        }
        Ok(Self { side, start, end })
    }

    /// Hat value at along-side coordinate `s`.
    pub fn value(&self, s: f64) -> f64 {
        let mid = 0.5 * (self.start + self.end);
        let half = 0.5 * (self.end - self.start);
        (1.0 - (s - mid).abs() / half).max(0.0)
    }

    /// ∫ φ ds.
    pub fn integral(&self) -> f64 {
        0.5 * (self.end - self.start)
    }

    fn overlaps(&self, other: &FluxWeight) -> bool {
        self.side == other.side && self.start < other.end && other.start < self.end
    }
}

/// What to do when a support endpoint falls between mesh nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignmentPolicy {
    /// Reject with a misalignment error.
    Strict,
    /// Use the nodal interpolant of the hat.
    #[default]
    Interpolate,
}

fn is_aligned(v: f64, n: usize) -> bool {
    let s = v * n as f64;
    (s - s.round()).abs() < 1e-9
}

/// Checks supports for disjointness and, under the strict policy, alignment.
pub fn validate_weights(mesh: &TriMesh, weights: &[FluxWeight], policy: AlignmentPolicy) -> Result<()> {
    for (i, a) in weights.iter().enumerate() {
        if let Some(b) = weights[i + 1..].iter().find(|b| a.overlaps(b)) {
            return Err(Error::invalid(format!(
                "flux weight supports overlap on {} side: [{}, {}] and [{}, {}]",
                a.side, a.start, a.end, b.start, b.end
            )));
        }
        if policy == AlignmentPolicy::Strict {
            for v in [a.start, a.end] {
                if !is_aligned(v, mesh.subdivisions()) {
                    return Err(Error::Misalignment { side: a.side, value: v });
                }
            }
        }
    }
    Ok(())
}

/// Weak normal flux ∫ A∇p·∇Φ − ∫ fΦ for each weight, with Φ the discrete
/// extension taking the hat's nodal values on the boundary and zero inside.
pub fn flux_observation(
    sol: &FemSolution,
    weights: &[FluxWeight],
    policy: AlignmentPolicy,
) -> Result<Vec<f64>> {
    let mesh = &sol.mesh;
    validate_weights(mesh, weights, policy)?;
    Ok(weights
        .iter()
        .map(|w| {
            mesh.side_nodes(w.side)
                .into_iter()
                .map(|(node, s)| w.value(s) * sol.boundary_residual[node])
                .sum()
        })
        .collect())
}

/// Boundary-node weight matrix: row i holds Φ_i's nodal values. Lets many
/// solutions be observed by a sparse dot product.
#[derive(Debug, Clone)]
pub struct FluxOperator {
    rows: Vec<Vec<(usize, f64)>>,
}

impl FluxOperator {
    pub fn new(mesh: &TriMesh, weights: &[FluxWeight], policy: AlignmentPolicy) -> Result<Self> {
        validate_weights(mesh, weights, policy)?;
        let rows = weights
            .iter()
            .map(|w| {
                mesh.side_nodes(w.side)
                    .into_iter()
                    .map(|(node, s)| (node, w.value(s)))
                    .filter(|(_, v)| *v != 0.0)
                    .collect()
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn apply(&self, sol: &FemSolution) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(node, v)| v * sol.boundary_residual[node]).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::FemSpace;
    use crate::quadrature::QuadRule;
    use crate::tensor::Sym2;

    fn right_hat() -> FluxWeight {
        FluxWeight::new(Side::Right, 0.4, 0.6).unwrap()
    }

    #[test]
    fn unit_gradient_flux_equals_hat_integral() {
        let space = FemSpace::structured(20).unwrap();
        for (a, expected) in [(Sym2::IDENTITY, 0.1), (Sym2::diag(2.0, 1.0), 0.2)] {
            let k = space.assemble(&a, QuadRule::ThreePoint).unwrap();
            let sol = space.solve_dirichlet(&k, None, &|x| x[0]).unwrap();
            let obs = flux_observation(&sol, &[right_hat()], AlignmentPolicy::Strict).unwrap();
            assert!((obs[0] - expected).abs() < 1e-10, "{}", obs[0]);
        }
    }

    #[test]
    fn constant_solution_has_zero_flux() {
        let space = FemSpace::structured(10).unwrap();
        let k = space.assemble(&Sym2::new(2.0, 0.3, 1.0), QuadRule::ThreePoint).unwrap();
        let sol = space.solve_dirichlet(&k, None, &|_| 3.5).unwrap();
        let ws: Vec<FluxWeight> = Side::ALL
            .iter()
            .map(|&s| FluxWeight::new(s, 0.1, 0.3).unwrap())
            .collect();
        for v in flux_observation(&sol, &ws, AlignmentPolicy::Strict).unwrap() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn misaligned_support_is_rejected_under_strict_policy() {
        let space = FemSpace::structured(16).unwrap();
        let k = space.assemble(&Sym2::IDENTITY, QuadRule::ThreePoint).unwrap();
        let sol = space.solve_dirichlet(&k, None, &|x| x[0]).unwrap();
        let r = flux_observation(&sol, &[right_hat()], AlignmentPolicy::Strict);
        assert!(matches!(r, Err(Error::Misalignment { side: Side::Right, .. })));
        let v = flux_observation(&sol, &[right_hat()], AlignmentPolicy::Interpolate).unwrap();
        // Trapezoidal sum of the nodal hat interpolant.
        let h = 1.0 / 16.0;
        let expected: f64 = (0..=16).map(|k| h * right_hat().value(k as f64 * h)).sum();
        assert!((v[0] - expected).abs() < 1e-10);
    }

    #[test]
    fn overlapping_supports_are_rejected() {
        let mesh = crate::mesh::build_structured_mesh(10).unwrap();
        let ws = [
            FluxWeight::new(Side::Top, 0.1, 0.3).unwrap(),
            FluxWeight::new(Side::Top, 0.2, 0.4).unwrap(),
        ];
        assert!(validate_weights(&mesh, &ws, AlignmentPolicy::Interpolate).is_err());
    }

    #[test]
    fn operator_matches_direct_evaluation() {
        let space = FemSpace::structured(10).unwrap();
        let k = space.assemble(&Sym2::diag(1.0, 3.0), QuadRule::ThreePoint).unwrap();
        let sol = space
            .solve_dirichlet(&k, None, &|x| (3.0 * x[0]).sin() * (1.0 + x[1]))
            .unwrap();
        let ws: Vec<FluxWeight> = Side::ALL
            .iter()
            .map(|&s| FluxWeight::new(s, 0.4, 0.6).unwrap())
            .collect();
        let op = FluxOperator::new(space.mesh(), &ws, AlignmentPolicy::Strict).unwrap();
        let a = op.apply(&sol);
        let b = flux_observation(&sol, &ws, AlignmentPolicy::Strict).unwrap();
        assert_eq!(a, b);
    }
}
