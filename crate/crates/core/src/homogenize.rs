//! Periodic cell problems and tabulated effective tensors.

use std::io::{Read, Write};
use std::sync::{Arc, RwLock};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{CsrPattern, SparseMatrix, SpdSolver};
use crate::mesh::{build_structured_mesh, TriMesh};
use crate::quadrature::QuadRule;
use crate::tensor::Sym2;

/// Default cell subdivision.
pub const DEFAULT_CELL_N: usize = 128;
/// Default number of tabulation points.
pub const DEFAULT_GRID_POINTS: usize = 41;

/// Structured triangulation of the unit cell with opposite edges identified.
/// Unknown `(i mod n, j mod n)` is shared by all geometric copies of a node.
#[derive(Debug)]
pub struct CellMesh {
    geometry: TriMesh,
    dof: Vec<usize>,
    pattern: Arc<CsrPattern>,
    solver: SpdSolver,
    reduced_gather: Vec<usize>,
}

impl CellMesh {
    pub fn new(n_cell: usize) -> Result<Self> {
        if n_cell < 2 {
            return Err(Error::invalid("cell mesh needs at least 2 subdivisions"));
        }
        let geometry = build_structured_mesh(n_cell)?;
        let dof: Vec<usize> = (0..=n_cell)
            .flat_map(|j| (0..=n_cell).map(move |i| (j % n_cell) * n_cell + i % n_cell))
            .collect();
        let elements: Vec<[usize; 3]> = geometry
            .triangles()
            .iter()
            .map(|t| t.map(|k| dof[k]))
            .collect();
        let pattern = Arc::new(CsrPattern::from_elements(n_cell * n_cell, &elements));
        let mut keep = vec![true; n_cell * n_cell];
        keep[0] = false;
        let (reduced, reduced_gather, _) = pattern.restrict(&keep);
        Ok(Self {
            geometry,
            dof,
            pattern,
            solver: SpdSolver::new(Arc::new(reduced)),
            reduced_gather,
        })
    }

    pub fn subdivisions(&self) -> usize {
        self.geometry.subdivisions()
    }

    pub fn num_dofs(&self) -> usize {
        self.pattern.dim()
    }

    pub fn geometry(&self) -> &TriMesh {
        &self.geometry
    }

    /// Periodic unknown of geometric node `k`.
    pub fn dof(&self, k: usize) -> usize {
        self.dof[k]
    }

    /// Quadrature-averaged tensor per triangle.
    fn element_tensors<F>(&self, a_cell: &F) -> Result<Vec<Sym2>>
    where
        F: Fn([f64; 2]) -> Sym2 + ?Sized,
    {
        (0..self.geometry.num_triangles())
            .map(|t| {
                let mut mean = Sym2::default();
                for (bary, w) in QuadRule::ThreePoint.points() {
                    let y = self.geometry.point(t, *bary);
                    let a = a_cell(y);
                    a.check_elliptic(y)?;
                    mean = mean.add(&a.scale(*w));
                }
                Ok(mean)
            })
            .collect()
    }

    fn solve_correctors(&self, tensors: &[Sym2], directions: &[usize]) -> Result<Vec<Vec<f64>>> {
        let n = self.num_dofs();
        let mut k = SparseMatrix::zeros(self.pattern.clone());
        let mut rhs = vec![vec![0.0; n]; directions.len()];
        for (t, tri) in self.geometry.triangles().iter().enumerate() {
            let area = self.geometry.area(t);
            let g = self.geometry.grad_basis(t);
            let d = tri.map(|v| self.dof[v]);
            let a = tensors[t];
            for p in 0..3 {
                let ag = a.mul_vec(g[p]);
                for q in 0..3 {
                    let slot = self.pattern.find(d[p], d[q]).expect("cell entry");
                    k.values_mut()[slot] += area * (ag[0] * g[q][0] + ag[1] * g[q][1]);
                }
                for (r, &dir) in rhs.iter_mut().zip(directions) {
                    r[d[p]] -= area * ag[dir];
                }
            }
        }
        let vals: Vec<f64> = self.reduced_gather.iter().map(|&s| k.values()[s]).collect();
        let factor = self.solver.factor(&vals).map_err(|e| match e {
            Error::Factorization(m) => Error::CellIdentification(m),
            other => other,
        })?;
        let mut packed = Vec::with_capacity((n - 1) * directions.len());
        for r in &rhs {
            packed.extend_from_slice(&r[1..]);
        }
        factor.solve_many(&mut packed, directions.len())?;
        Ok(packed
            .chunks(n - 1)
            .map(|c| {
                let mut chi = Vec::with_capacity(n);
                chi.push(0.0);
                chi.extend_from_slice(c);
                let mean = chi.iter().sum::<f64>() / n as f64;
                chi.iter_mut().for_each(|v| *v -= mean);
                chi
            })
            .collect())
    }
}

/// Corrector χ_j (0-based direction `j`) as periodic nodal values, mean zero.
pub fn solve_cell_problem<F>(a_cell: &F, cell: &CellMesh, direction: usize) -> Result<Vec<f64>>
where
    F: Fn([f64; 2]) -> Sym2 + ?Sized,
{
    if direction > 1 {
        return Err(Error::invalid("cell problem direction must be 0 or 1"));
    }
    let tensors = cell.element_tensors(a_cell)?;
    Ok(cell.solve_correctors(&tensors, &[direction])?.remove(0))
}

/// A⁰_ik = ∫_Y A(e_k + ∇χ_k)·e_i.
pub fn effective_tensor<F>(a_cell: &F, cell: &CellMesh) -> Result<Sym2>
where
    F: Fn([f64; 2]) -> Sym2 + ?Sized,
{
    let tensors = cell.element_tensors(a_cell)?;
    let chi = cell.solve_correctors(&tensors, &[0, 1])?;
    let geo = &cell.geometry;
    let mut a0 = [[0.0; 2]; 2];
    for (t, tri) in geo.triangles().iter().enumerate() {
        let area = geo.area(t);
        let g = geo.grad_basis(t);
        for k in 0..2 {
            let mut grad = [0.0; 2];
            grad[k] = 1.0;
            for p in 0..3 {
                let c = chi[k][cell.dof[tri[p]]];
                grad[0] += c * g[p][0];
                grad[1] += c * g[p][1];
            }
            let flux = tensors[t].mul_vec(grad);
            a0[0][k] += area * flux[0];
            a0[1][k] += area * flux[1];
        }
    }
    let asym = (a0[0][1] - a0[1][0]).abs();
    let scale = a0[0][0].abs().max(a0[1][1].abs());
    if asym > 1e-8 * scale {
        return Err(Error::Numeric(format!(
            "effective tensor asymmetry {asym:.3e} exceeds tolerance"
        )));
    }
    Ok(Sym2::new(a0[0][0], 0.5 * (a0[0][1] + a0[1][0]), a0[1][1]))
}

/// Effective tensor tabulated on the lattice t_k = origin + k·step,
/// linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizedMap {
    origin: f64,
    step: f64,
    first: i64,
    values: Vec<Sym2>,
}

impl HomogenizedMap {
    /// Tabulates `a(t, y)` at `points` equispaced values of t in `[lo, hi]`.
    pub fn build<F>(a: F, lo: f64, hi: f64, points: usize, cell: &CellMesh) -> Result<Self>
    where
        F: Fn(f64, [f64; 2]) -> Sym2 + Sync,
    {
        if points == 0 || !(lo <= hi) || (points > 1 && lo == hi) {
            return Err(Error::invalid(format!(
                "cannot tabulate {points} points over [{lo}, {hi}]"
            )));
        }
        let step = if points == 1 { 0.0 } else { (hi - lo) / (points - 1) as f64 };
        let values = (0..points)
            .into_par_iter()
            .map(|k| effective_tensor(&|y: [f64; 2]| a(lo + k as f64 * step, y), cell))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            origin: lo,
            step,
            first: 0,
            values,
        })
    }

    /// Table from explicit values; the grid must be uniformly spaced.
    pub fn from_table(grid: Vec<f64>, values: Vec<Sym2>) -> Result<Self> {
        if grid.is_empty() || grid.len() != values.len() {
            return Err(Error::invalid("homogenized table must be non-empty with one tensor per grid point"));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("homogenized table grid must be strictly increasing"));
        }
        let n = grid.len();
        let step = if n == 1 { 0.0 } else { (grid[n - 1] - grid[0]) / (n - 1) as f64 };
        let uniform = grid
            .iter()
            .enumerate()
            .all(|(k, t)| (t - (grid[0] + k as f64 * step)).abs() <= 1e-9 * (1.0 + step));
        if !uniform {
            return Err(Error::invalid("homogenized table grid must be uniformly spaced"));
        }
        Ok(Self {
            origin: grid[0],
            step,
            first: 0,
            values,
        })
    }

    fn t_at(&self, k: i64) -> f64 {
        self.origin + k as f64 * self.step
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.t_at(self.first + i as i64)).collect()
    }

    pub fn values(&self) -> &[Sym2] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.t_at(self.first), self.t_at(self.first + self.values.len() as i64 - 1))
    }

    pub fn eval(&self, t: f64) -> Result<Sym2> {
        if self.values.len() == 1 {
            return Ok(self.values[0]);
        }
        let (lo, hi) = self.range();
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfRange { value: t, lo, hi });
        }
        let x = (t - self.origin) / self.step;
        let node = x.round() as i64;
        if self.t_at(node) == t {
            if let Some(v) = self.values.get((node - self.first) as usize) {
                return Ok(*v);
            }
        }
        let last = self.first + self.values.len() as i64 - 2;
        let k = (x.floor() as i64).clamp(self.first, last);
        let i = (k - self.first) as usize;
        let s = ((t - self.t_at(k)) / self.step).clamp(0.0, 1.0);
        if s == 0.0 {
            return Ok(self.values[i]);
        }
        if s == 1.0 {
            return Ok(self.values[i + 1]);
        }
        Ok(self.values[i].scale(1.0 - s).add(&self.values[i + 1].scale(s)))
    }

    /// Grows the table along its lattice until it covers `t`, computing the
    /// new entries with `compute`.
    fn extend_to(&mut self, t: f64, compute: impl Fn(f64) -> Result<Sym2>) -> Result<()> {
        if !t.is_finite() || self.values.len() < 2 {
            return Err(Error::invalid(format!("cannot extend the homogenized table to {t}")));
        }
        let k = ((t - self.origin) / self.step).floor() as i64;
        let last = self.first + self.values.len() as i64 - 1;
        if k < self.first {
            let lo = k - EXTENSION_MARGIN;
            let mut fresh = (lo..self.first).map(|j| compute(self.t_at(j))).collect::<Result<Vec<_>>>()?;
            fresh.append(&mut self.values);
            self.values = fresh;
            self.first = lo;
        }
        if k + 1 > last {
            let hi = k + 1 + EXTENSION_MARGIN;
            for j in last + 1..=hi {
                self.values.push(compute(self.t_at(j))?);
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "a11", "a12", "a22"])?;
        for (t, a) in self.grid().iter().zip(&self.values) {
            out.write_record(&[
                format!("{t:e}"),
                format!("{:e}", a.a11),
                format!("{:e}", a.a12),
                format!("{:e}", a.a22),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "a11", "a12", "a22"] {
            return Err(Error::invalid("homogenized table header must be t,a11,a12,a22"));
        }
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad number `{}`: {e}", &rec[i])))
            };
            grid.push(f(0)?);
            values.push(Sym2::new(f(1)?, f(2)?, f(3)?));
        }
        Self::from_table(grid, values)
    }
}

/// Lattice points added beyond a missed query.
const EXTENSION_MARGIN: i64 = 2;

/// What to do when a query leaves the tabulated range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RangePolicy {
    /// Report `OutOfRange`.
    Strict,
    /// Solve further cell problems on the table's lattice.
    #[default]
    Extend,
}

type CellTensor = dyn Fn(f64, [f64; 2]) -> Sym2 + Send + Sync;

/// Shared effective-tensor lookup used by the surrogate forward model.
pub struct EffectiveMap {
    table: RwLock<HomogenizedMap>,
    source: Option<(Arc<CellTensor>, CellMesh)>,
}

impl std::fmt::Debug for EffectiveMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EffectiveMap")
            .field("range", &self.range())
            .field("extendable", &self.source.is_some())
            .finish()
    }
}

impl EffectiveMap {
    /// Lookups outside the table fail.
    pub fn fixed(table: HomogenizedMap) -> Self {
        Self {
            table: RwLock::new(table),
            source: None,
        }
    }

    /// Lookups outside the table extend it with cell solves of `tensor`.
    pub fn extendable(
        table: HomogenizedMap,
        tensor: impl Fn(f64, [f64; 2]) -> Sym2 + Send + Sync + 'static,
        cell: CellMesh,
    ) -> Self {
        Self {
            table: RwLock::new(table),
            source: Some((Arc::new(tensor), cell)),
        }
    }

    pub fn policy(&self) -> RangePolicy {
        if self.source.is_some() {
            RangePolicy::Extend
        } else {
            RangePolicy::Strict
        }
    }

    pub fn eval(&self, t: f64) -> Result<Sym2> {
        let first = self.table.read().expect("table lock").eval(t);
        match (first, &self.source) {
            (Err(Error::OutOfRange { .. }), Some((a, cell))) if t.is_finite() => {
                let mut table = self.table.write().expect("table lock");
                if table.eval(t).is_err() {
                    // Serial on purpose: callers may hold rayon workers.
                    let before = table.range();
                    table.extend_to(t, |s| effective_tensor(&|y: [f64; 2]| a(s, y), cell))?;
                    log::debug!("extended homogenized table from {before:?} to {:?}", table.range());
                }
                table.eval(t)
            }
            (r, _) => r,
        }
    }

    pub fn range(&self) -> (f64, f64) {
        self.table.read().expect("table lock").range()
    }

    /// Copy of the current table.
    pub fn table(&self) -> HomogenizedMap {
        self.table.read().expect("table lock").clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn l2_cell(cell: &CellMesh, a: &[f64], b: &[f64]) -> f64 {
        // Periodic nodes carry equal mass h².
        let h2 = (1.0 / cell.subdivisions() as f64).powi(2);
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2) * h2).sum::<f64>().sqrt()
    }

    #[test]
    fn constant_tensor_has_zero_correctors() {
        let cell = CellMesh::new(8).unwrap();
        let a = |_: [f64; 2]| Sym2::new(2.0, 0.5, 1.0);
        for j in 0..2 {
            let chi = solve_cell_problem(&a, &cell, j).unwrap();
            assert!(chi.iter().all(|v| v.abs() < 1e-12));
        }
        let e = effective_tensor(&a, &cell).unwrap();
        assert!((e.a11 - 2.0).abs() < 1e-12 && (e.a12 - 0.5).abs() < 1e-12 && (e.a22 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separable_tensor_has_trivial_second_corrector() {
        let cell = CellMesh::new(16).unwrap();
        let a = |y: [f64; 2]| Sym2::diag(2.0 + (2.0 * PI * y[0]).cos().powi(2), 1.0);
        let chi = solve_cell_problem(&a, &cell, 1).unwrap();
        assert!(chi.iter().all(|v| v.abs() < 1e-12));
        let chi = solve_cell_problem(&a, &cell, 0).unwrap();
        assert!(chi.iter().sum::<f64>().abs() < 1e-10);
        assert!(chi.iter().any(|v| v.abs() > 1e-4));
    }

    #[test]
    fn corrector_self_convergence_is_second_order() {
        let a = |y: [f64; 2]| Sym2::diag(2.0 + (2.0 * PI * y[0]).cos().powi(2), 1.0);
        let fine = CellMesh::new(256).unwrap();
        let chi_ref = solve_cell_problem(&a, &fine, 0).unwrap();
        let errs: Vec<f64> = [16usize, 32]
            .iter()
            .map(|&n| {
                let cell = CellMesh::new(n).unwrap();
                let chi = solve_cell_problem(&a, &cell, 0).unwrap();
                let stride = 256 / n;
                let sampled: Vec<f64> = (0..n * n)
                    .map(|d| chi_ref[(d / n) * stride * 256 + (d % n) * stride])
                    .collect();
                l2_cell(&cell, &chi, &sampled)
            })
            .collect();
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 1.7, "rate {rate} from {errs:?}");
    }

    #[test]
    fn map_interpolates_linearly_and_rejects_extrapolation() {
        let m = HomogenizedMap::from_table(
            vec![0.0, 1.0],
            vec![Sym2::new(1.0, 0.0, 2.0), Sym2::new(3.0, 0.2, 4.0)],
        )
        .unwrap();
        let mid = m.eval(0.5).unwrap();
        assert!((mid.a11 - 2.0).abs() < 1e-15 && (mid.a12 - 0.1).abs() < 1e-15 && (mid.a22 - 3.0).abs() < 1e-15);
        assert_eq!(m.eval(1.0).unwrap(), Sym2::new(3.0, 0.2, 4.0));
        assert!(matches!(m.eval(1.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(m.eval(f64::NAN), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn single_point_map_is_constant() {
        let cell = CellMesh::new(4).unwrap();
        let m = HomogenizedMap::build(|_, _| Sym2::diag(1.5, 2.5), 0.0, 0.0, 1, &cell).unwrap();
        assert_eq!(m.eval(17.0).unwrap(), m.values()[0]);
    }

    #[test]
    fn csv_round_trip() {
        let cell = CellMesh::new(8).unwrap();
        let m = HomogenizedMap::build(
            |t, y| Sym2::diag(t.exp() * (1.5 + (2.0 * PI * y[0]).sin()), 1.0 + t * t),
            -1.0,
            1.0,
            5,
            &cell,
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = HomogenizedMap::read_csv(buf.as_slice()).unwrap();
        assert_eq!(m.values(), back.values());
        for (a, b) in m.grid().iter().zip(back.grid()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn non_uniform_tables_are_rejected() {
        let r = HomogenizedMap::from_table(vec![0.0, 1.0, 3.0], vec![Sym2::IDENTITY; 3]);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    fn layered(t: f64, y: [f64; 2]) -> Sym2 {
        Sym2::diag(t.exp() * (2.0 + (2.0 * PI * y[0]).cos()), 1.0 + t * t)
    }

    #[test]
    fn extendable_map_matches_a_table_built_wide() {
        let cell = CellMesh::new(8).unwrap();
        let narrow = HomogenizedMap::build(layered, 0.0, 1.0, 5, &cell).unwrap();
        let wide = HomogenizedMap::build(layered, -1.0, 2.0, 13, &cell).unwrap();
        let strict = EffectiveMap::fixed(narrow.clone());
        assert!(matches!(strict.eval(1.6), Err(Error::OutOfRange { .. })));
        let ext = EffectiveMap::extendable(narrow, layered, cell);
        for t in [1.6, -0.7, 0.3, 1.95] {
            let a = ext.eval(t).unwrap();
            let b = wide.eval(t).unwrap();
            assert!(a.sub(&b).norm() < 1e-12, "t = {t}");
        }
        let (lo, hi) = ext.range();
        assert!(lo <= -0.7 && hi >= 1.95);
        assert!(matches!(ext.eval(f64::NAN), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn extension_order_does_not_change_values() {
        let cell = CellMesh::new(6).unwrap();
        let base = HomogenizedMap::build(layered, 0.0, 1.0, 5, &cell).unwrap();
        let a = EffectiveMap::extendable(base.clone(), layered, cell);
        let b = EffectiveMap::extendable(base, layered, CellMesh::new(6).unwrap());
        let qs = [2.3, -1.1, 1.7, -0.4];
        for t in qs {
            a.eval(t).unwrap();
        }
        for t in qs.iter().rev() {
            b.eval(*t).unwrap();
        }
        for t in [-1.05, -0.2, 0.55, 1.33, 2.2] {
            assert_eq!(a.eval(t).unwrap(), b.eval(t).unwrap());
        }
    }
}
