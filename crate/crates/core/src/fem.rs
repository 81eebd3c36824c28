//! P1 finite elements with Dirichlet conditions by elimination.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{CsrPattern, SparseMatrix, SpdFactor, SpdSolver};
use crate::mesh::{build_structured_mesh, TriMesh};
use crate::quadrature::QuadRule;
use crate::tensor::{Sym2, TensorField};

/// A mesh together with its stiffness sparsity pattern and a solver for the
/// interior block. Building one is the expensive, reusable part of a solve.
#[derive(Debug)]
pub struct FemSpace {
    mesh: Arc<TriMesh>,
    pattern: Arc<CsrPattern>,
    /// Storage slots of the 3×3 element matrix entries, row-major.
    slots: Vec<[usize; 9]>,
    free_map: Vec<Option<usize>>,
    free_nodes: Vec<usize>,
    gather: Vec<usize>,
    solver: SpdSolver,
}

impl FemSpace {
    pub fn new(mesh: Arc<TriMesh>) -> Self {
        let pattern = Arc::new(CsrPattern::from_elements(mesh.num_nodes(), mesh.triangles()));
        let slots = mesh
            .triangles()
            .iter()
            .map(|tri| {
                let mut s = [0; 9];
                for a in 0..3 {
                    for b in 0..3 {
                        s[3 * a + b] = pattern.find(tri[a], tri[b]).expect("element entry in pattern");
                    }
                }
                s
            })
            .collect();
        let keep: Vec<bool> = mesh.boundary_mask().iter().map(|b| !b).collect();
        let (reduced, gather, free_map) = pattern.restrict(&keep);
        let free_nodes = (0..mesh.num_nodes()).filter(|&i| keep[i]).collect();
        Self {
            mesh,
            pattern,
            slots,
            free_map,
            free_nodes,
            gather,
            solver: SpdSolver::new(Arc::new(reduced)),
        }
    }

    pub fn structured(n: usize) -> Result<Self> {
        Ok(Self::new(Arc::new(build_structured_mesh(n)?)))
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    /// Assembles ∫ A∇φ_j·∇φ_i with `tensor(t, q, x)` giving the tensor at
    /// quadrature point `q` (point `x`) of triangle `t`.
    pub fn assemble_with<F>(&self, rule: QuadRule, mut tensor: F) -> Result<SparseMatrix>
    where
        F: FnMut(usize, usize, [f64; 2]) -> Sym2,
    {
        let mut k = SparseMatrix::zeros(self.pattern.clone());
        let vals = k.values_mut();
        for (t, slots) in self.slots.iter().enumerate() {
            let mut mean = Sym2::default();
            for (q, (bary, w)) in rule.points().iter().enumerate() {
                let x = self.mesh.point(t, *bary);
                let a = tensor(t, q, x);
                a.check_elliptic(x)?;
                mean = mean.add(&a.scale(*w));
            }
            let area = self.mesh.area(t);
            let g = self.mesh.grad_basis(t);
            for a in 0..3 {
                let ag = mean.mul_vec(g[a]);
                for b in a..3 {
                    let v = area * (ag[0] * g[b][0] + ag[1] * g[b][1]);
                    vals[slots[3 * a + b]] += v;
                    if a != b {
                        vals[slots[3 * b + a]] += v;
                    }
                }
            }
        }
        Ok(k)
    }

    pub fn assemble(&self, tensor: &dyn TensorField, rule: QuadRule) -> Result<SparseMatrix> {
        self.assemble_with(rule, |_, _, x| tensor.eval(x))
    }

    /// Load vector ∫ f φ_i.
    pub fn assemble_load<F>(&self, rule: QuadRule, f: F) -> Vec<f64>
    where
        F: Fn([f64; 2]) -> f64,
    {
        let mut load = vec![0.0; self.mesh.num_nodes()];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let area = self.mesh.area(t);
            for (bary, w) in rule.points() {
                let fx = f(self.mesh.point(t, *bary)) * w * area;
                for a in 0..3 {
                    load[tri[a]] += fx * bary[a];
                }
            }
        }
        load
    }

    /// Factorizes the interior block of `k`.
    pub fn factor(&self, k: &SparseMatrix) -> Result<SpdFactor> {
        let vals: Vec<f64> = self.gather.iter().map(|&s| k.values()[s]).collect();
        self.solver.factor(&vals)
    }

    /// Solves `k p = load` with `p = g` at boundary nodes, once per pair of
    /// (load, boundary function). A `None` load means f = 0.
    pub fn solve_dirichlet_many(
        &self,
        k: &SparseMatrix,
        load: Option<&[f64]>,
        boundary: &[&dyn Fn([f64; 2]) -> f64],
    ) -> Result<Vec<FemSolution>> {
        let factor = self.factor(k)?;
        let nodes = self.mesh.num_nodes();
        let nfree = self.free_nodes.len();
        let mut values = Vec::with_capacity(boundary.len());
        let mut rhs = vec![0.0; nfree * boundary.len()];
        for (c, g) in boundary.iter().enumerate() {
            let mut p = vec![0.0; nodes];
            for &b in self.mesh.boundary_nodes() {
                p[b] = g(self.mesh.nodes()[b]);
            }
            let col = &mut rhs[c * nfree..(c + 1) * nfree];
            let cols = self.pattern.col_idx();
            for (r, &i) in self.free_nodes.iter().enumerate() {
                let mut v = load.map_or(0.0, |f| f[i]);
                for s in self.pattern.row(i) {
                    let j = cols[s];
                    if self.free_map[j].is_none() {
                        v -= k.values()[s] * p[j];
                    }
                }
                col[r] = v;
            }
            values.push(p);
        }
        factor.solve_many(&mut rhs, boundary.len())?;
        let mut out = Vec::with_capacity(boundary.len());
        for (c, mut p) in values.into_iter().enumerate() {
            let col = &rhs[c * nfree..(c + 1) * nfree];
            for (r, &i) in self.free_nodes.iter().enumerate() {
                p[i] = col[r];
            }
            let mut residual = vec![0.0; nodes];
            for &b in self.mesh.boundary_nodes() {
                residual[b] = k.row_dot(b, &p) - load.map_or(0.0, |f| f[b]);
            }
            out.push(FemSolution {
                mesh: self.mesh.clone(),
                values: p,
                boundary_residual: residual,
            });
        }
        Ok(out)
    }

    pub fn solve_dirichlet(
        &self,
        k: &SparseMatrix,
        load: Option<&[f64]>,
        g: &dyn Fn([f64; 2]) -> f64,
    ) -> Result<FemSolution> {
        Ok(self.solve_dirichlet_many(k, load, &[g])?.remove(0))
    }

    /// Relative residual of the interior equations of a computed solution.
    pub fn interior_residual(&self, k: &SparseMatrix, load: Option<&[f64]>, p: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for &i in &self.free_nodes {
            let f = load.map_or(0.0, |l| l[i]);
            let kp = k.row_dot(i, p);
            num += (kp - f).powi(2);
            let scale: f64 = self
                .pattern
                .row(i)
                .map(|s| (k.values()[s] * p[self.pattern.col_idx()[s]]).abs())
                .sum::<f64>()
                + f.abs();
            den += scale * scale;
        }
        if den == 0.0 {
            0.0
        } else {
            (num / den).sqrt()
        }
    }
}

/// Convenience wrapper building a fresh space.
pub fn assemble_stiffness(
    mesh: Arc<TriMesh>,
    tensor: &dyn TensorField,
    quad_order: u32,
) -> Result<SparseMatrix> {
    FemSpace::new(mesh).assemble(tensor, QuadRule::from_order(quad_order)?)
}

/// Nodal P1 field on a mesh, as produced by a Dirichlet solve.
#[derive(Debug, Clone)]
pub struct FemSolution {
    pub mesh: Arc<TriMesh>,
    pub values: Vec<f64>,
    /// (K p − F) at boundary nodes, zero elsewhere: the discrete normal flux
    /// tested against each boundary basis function.
    pub boundary_residual: Vec<f64>,
}

impl FemSolution {
    /// Field without flux information (e.g. an interpolant).
    pub fn from_values(mesh: Arc<TriMesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_nodes() {
            return Err(Error::DimensionMismatch {
                what: "nodal values",
                expected: mesh.num_nodes(),
                found: values.len(),
            });
        }
        let boundary_residual = vec![0.0; values.len()];
        Ok(Self {
            mesh,
            values,
            boundary_residual,
        })
    }

    pub fn interpolant(mesh: Arc<TriMesh>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = mesh.nodes().iter().map(|&x| f(x)).collect();
        let boundary_residual = vec![0.0; mesh.num_nodes()];
        Self {
            mesh,
            values,
            boundary_residual,
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.mesh.interpolate(&self.values, x)
    }

    /// ∫ A∇p·∇p-style L² norm of the (piecewise constant) gradient.
    pub fn grad_l2_distance(&self, other: &FemSolution) -> Result<f64> {
        same_mesh(self, other)?;
        let mut s = 0.0;
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let g = self.mesh.grad_basis(t);
            let mut d = [0.0; 2];
            for a in 0..3 {
                let dv = self.values[tri[a]] - other.values[tri[a]];
                d[0] += dv * g[a][0];
                d[1] += dv * g[a][1];
            }
            s += self.mesh.area(t) * (d[0] * d[0] + d[1] * d[1]);
        }
        Ok(s.sqrt())
    }

    /// Writes `x,y,value` rows in node order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_field_csv(w, &self.mesh, &self.values)
    }
}

fn same_mesh(a: &FemSolution, b: &FemSolution) -> Result<()> {
    if a.mesh.subdivisions() != b.mesh.subdivisions() {
        return Err(Error::DimensionMismatch {
            what: "mesh subdivisions",
            expected: a.mesh.subdivisions(),
            found: b.mesh.subdivisions(),
        });
    }
    Ok(())
}

pub fn write_field_csv<W: Write>(w: W, mesh: &TriMesh, values: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "y", "value"])?;
    for (x, v) in mesh.nodes().iter().zip(values) {
        out.write_record(&[x[0].to_string(), x[1].to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// L² distance between a discrete field and a function, using the six-point
/// rule on the field's mesh.
pub fn l2_error(sol: &FemSolution, reference: impl Fn([f64; 2]) -> f64) -> f64 {
    let mesh = &sol.mesh;
    let mut s = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.area(t);
        for (bary, w) in QuadRule::SixPoint.points() {
            let ph = bary[0] * sol.values[tri[0]] + bary[1] * sol.values[tri[1]] + bary[2] * sol.values[tri[2]];
            let d = ph - reference(mesh.point(t, *bary));
            s += w * area * d * d;
        }
    }
    s.sqrt()
}

/// L² distance between two discrete fields, integrated on the finer mesh.
pub fn l2_distance(a: &FemSolution, b: &FemSolution) -> f64 {
    let (fine, coarse) = if b.mesh.subdivisions() > a.mesh.subdivisions() {
        (b, a)
    } else {
        (a, b)
    };
    l2_error(fine, |x| coarse.eval(x))
}
