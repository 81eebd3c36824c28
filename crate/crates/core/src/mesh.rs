//! Structured triangulations of the unit square.

use crate::error::{Error, Result};

/// Side of the unit square a boundary edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    /// Coordinate of a point measured along this side: x₁ for bottom/top,
    /// x₂ for left/right.
    pub fn along(self, x: [f64; 2]) -> f64 {
        match self {
            Side::Bottom | Side::Top => x[0],
            Side::Left | Side::Right => x[1],
        }
    }

    /// Outward unit normal.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
            Side::Left => [-1.0, 0.0],
        }
    }

    /// Point on this side at along-coordinate `s`.
    pub fn point(self, s: f64) -> [f64; 2] {
        match self {
            Side::Bottom => [s, 0.0],
            Side::Right => [1.0, s],
            Side::Top => [s, 1.0],
            Side::Left => [0.0, s],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub side: Side,
    /// Along-side coordinate range covered by the edge.
    pub range: (f64, f64),
}

/// Uniform triangulation with `n` subdivisions per direction.
///
/// Node `(i, j)` has index `j·(n+1) + i`. Square `(i, j)` is split along its
/// rising diagonal into triangles `2·(j·n+i)` (below) and `2·(j·n+i)+1`
/// (above), both counter-clockwise.
#[derive(Debug, Clone)]
pub struct TriMesh {
    n: usize,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_nodes: Vec<usize>,
    is_boundary: Vec<bool>,
    boundary_edges: Vec<BoundaryEdge>,
}

pub fn build_structured_mesh(n: usize) -> Result<TriMesh> {
    if n == 0 {
        return Err(Error::invalid("mesh subdivision count must be at least 1"));
    }
    let h = 1.0 / n as f64;
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 * h, j as f64 * h]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let mut is_boundary = vec![false; nodes.len()];
    let mut boundary_nodes = Vec::with_capacity(4 * n);
    for j in 0..=n {
        for i in 0..=n {
            if i == 0 || j == 0 || i == n || j == n {
                is_boundary[idx(i, j)] = true;
                boundary_nodes.push(idx(i, j));
            }
        }
    }
    let mut boundary_edges = Vec::with_capacity(4 * n);
    for k in 0..n {
        let range = (k as f64 * h, (k + 1) as f64 * h);
        boundary_edges.push(BoundaryEdge {
            nodes: [idx(k, 0), idx(k + 1, 0)],
            side: Side::Bottom,
            range,
        });
        boundary_edges.push(BoundaryEdge {
            nodes: [idx(n, k), idx(n, k + 1)],
            side: Side::Right,
            range,
        });
        boundary_edges.push(BoundaryEdge {
            nodes: [idx(k, n), idx(k + 1, n)],
            side: Side::Top,
            range,
        });
        boundary_edges.push(BoundaryEdge {
            nodes: [idx(0, k), idx(0, k + 1)],
            side: Side::Left,
            range,
        });
    }
    Ok(TriMesh {
        n,
        nodes,
        triangles,
        boundary_nodes,
        is_boundary,
        boundary_edges,
    })
}

impl TriMesh {
    pub fn subdivisions(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.is_boundary[node]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.is_boundary
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    /// Signed area (positive for counter-clockwise vertices).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|k| self.nodes[k]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn area(&self, t: usize) -> f64 {
        self.signed_area(t).abs()
    }

    /// Gradients of the three barycentric basis functions on triangle `t`.
    pub fn grad_basis(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t].map(|k| self.nodes[k]);
        let two_area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let inv = 1.0 / two_area;
        [
            [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
            [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
            [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
        ]
    }

    /// Physical point with barycentric coordinates `bary` in triangle `t`.
    pub fn point(&self, t: usize, bary: [f64; 3]) -> [f64; 2] {
        let v = self.triangles[t].map(|k| self.nodes[k]);
        [
            bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0],
            bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1],
        ]
    }

    /// Triangle containing `x` (clamped to the unit square) and the
    /// barycentric coordinates of `x` in it.
    pub fn locate(&self, x: [f64; 2]) -> (usize, [f64; 3]) {
        let n = self.n;
        let nf = n as f64;
        let cell = |v: f64| -> (usize, f64) {
            let s = v.clamp(0.0, 1.0) * nf;
            let i = (s.floor() as usize).min(n - 1);
            (i, s - i as f64)
        };
        let (i, s) = cell(x[0]);
        let (j, t) = cell(x[1]);
        let base = 2 * (j * n + i);
        if s >= t {
            (base, [1.0 - s, s - t, t])
        } else {
            (base + 1, [1.0 - t, s, t - s])
        }
    }

    /// Piecewise-linear interpolation of nodal values at `x`.
    pub fn interpolate(&self, values: &[f64], x: [f64; 2]) -> f64 {
        let (t, b) = self.locate(x);
        let tri = self.triangles[t];
        b[0] * values[tri[0]] + b[1] * values[tri[1]] + b[2] * values[tri[2]]
    }

    /// Boundary nodes on `side`, with their along-side coordinate, ordered
    /// by that coordinate. Corners belong to both adjacent sides.
    pub fn side_nodes(&self, side: Side) -> Vec<(usize, f64)> {
        let n = self.n;
        (0..=n)
            .map(|k| {
                let node = match side {
                    Side::Bottom => self.node_index(k, 0),
                    Side::Right => self.node_index(n, k),
                    Side::Top => self.node_index(k, n),
                    Side::Left => self.node_index(0, k),
                };
                (node, k as f64 / n as f64)
            })
            .collect()
    }
}
