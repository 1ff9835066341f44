//! Base partitions of `Ω`, the graded extension axis and the cylinder mesh.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Identifies a uniform base partition; fields and meshes are matched on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MeshTag {
    pub dim: usize,
    pub cells_per_side: usize,
    length_bits: u64,
}

#[derive(Debug, Clone)]
pub struct Cell {
    /// Vertex indices in tensor order: `a + 2b` for local offsets `(a, b)`.
    pub nodes: Vec<usize>,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub measure: f64,
}

impl Cell {
    pub fn midpoint(&self, dim: usize) -> Vec<f64> {
        (0..dim).map(|d| 0.5 * (self.lo[d] + self.hi[d])).collect()
    }

    pub fn width(&self, d: usize) -> f64 {
        self.hi[d] - self.lo[d]
    }
}

/// Uniform partition of `(0, L)^n` into intervals or squares.
#[derive(Debug, Clone)]
pub struct BaseMesh {
    dim: usize,
    length: f64,
    cells_per_side: usize,
    coords: Vec<[f64; 2]>,
    cells: Vec<Cell>,
    boundary: Vec<bool>,
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

impl BaseMesh {
    pub fn tag(&self) -> MeshTag {
        MeshTag {
            dim: self.dim,
            cells_per_side: self.cells_per_side,
            length_bits: self.length.to_bits(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    /// `h_{T_Ω}`, the cell side length.
    pub fn h(&self) -> f64 {
        self.length / self.cells_per_side as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i][..self.dim]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn measure(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Largest side ratio over all cells.
    pub fn max_aspect_ratio(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| {
                if self.dim == 1 {
                    1.0
                } else {
                    let (a, b) = (c.width(0), c.width(1));
                    a.max(b) / a.min(b)
                }
            })
            .fold(1.0, f64::max)
    }

    /// Bilinear (or linear) shape function values at a point of `cell`.
    pub fn shape_values(&self, cell: &Cell, x: &[f64]) -> Vec<f64> {
        let t0 = (x[0] - cell.lo[0]) / cell.width(0);
        let fx = [1.0 - t0, t0];
        if self.dim == 1 {
            fx.to_vec()
        } else {
            let t1 = (x[1] - cell.lo[1]) / cell.width(1);
            let fy = [1.0 - t1, t1];
            vec![fx[0] * fy[0], fx[1] * fy[0], fx[0] * fy[1], fx[1] * fy[1]]
        }
    }

    /// Tensor 3-point Gauss points of `cell` with weights that sum to `|K|`.
    pub fn quadrature(&self, cell: &Cell) -> Vec<([f64; 2], f64)> {
        let ny = if self.dim == 1 { 1 } else { 3 };
        let scale = cell.measure / (1usize << self.dim) as f64;
        let mut pts = Vec::with_capacity(3 * ny);
        for &(gx, wx) in &GAUSS3 {
            let mut x = [cell.lo[0] + 0.5 * (gx + 1.0) * cell.width(0), 0.0];
            if self.dim == 1 {
                pts.push((x, wx * scale));
                continue;
            }
            for &(gy, wy) in &GAUSS3 {
                x[1] = cell.lo[1] + 0.5 * (gy + 1.0) * cell.width(1);
                pts.push((x, wx * wy * scale));
            }
        }
        pts
    }

    /// `Σ_K ∫_K f` with a tensor 3-point Gauss rule; `f` receives the cell,
    /// the point, and the cell's shape function values at that point.
    pub fn integrate_cellwise<F>(&self, mut f: F) -> f64
    where
        F: FnMut(&Cell, &[f64], &[f64]) -> f64,
    {
        let mut total = 0.0;
        for cell in &self.cells {
            for (x, w) in self.quadrature(cell) {
                let xs = &x[..self.dim];
                let shape = self.shape_values(cell, xs);
                total += w * f(cell, xs, &shape);
            }
        }
        total
    }
}

/// Uniform partition of `(0, L)^n` with `cells_per_side` cells per direction.
pub fn build_base(dim: usize, length: f64, cells_per_side: usize) -> Result<BaseMesh> {
    if dim != 1 && dim != 2 {
        return Err(Error::UnsupportedDimension(dim));
    }
    if cells_per_side == 0 {
        return Err(Error::InvalidParameter("cells_per_side must be at least 1".into()));
    }
    if !(length > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "domain length {length} must be positive"
        )));
    }
    let n = cells_per_side;
    let h = length / n as f64;
    let axis: Vec<f64> = (0..=n).map(|i| if i == n { length } else { i as f64 * h }).collect();

    let (coords, boundary, cells) = if dim == 1 {
        let coords: Vec<[f64; 2]> = axis.iter().map(|&x| [x, 0.0]).collect();
        let boundary = (0..=n).map(|i| i == 0 || i == n).collect();
        let cells = (0..n)
            .map(|i| Cell {
                nodes: vec![i, i + 1],
                lo: [axis[i], 0.0],
                hi: [axis[i + 1], 0.0],
                measure: axis[i + 1] - axis[i],
            })
            .collect();
        (coords, boundary, cells)
    } else {
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut coords = Vec::with_capacity((n + 1) * (n + 1));
        let mut boundary = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                coords.push([axis[i], axis[j]]);
                boundary.push(i == 0 || i == n || j == 0 || j == n);
            }
        }
        let mut cells = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                cells.push(Cell {
                    nodes: vec![idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1)],
                    lo: [axis[i], axis[j]],
                    hi: [axis[i + 1], axis[j + 1]],
                    measure: (axis[i + 1] - axis[i]) * (axis[j + 1] - axis[j]),
                });
            }
        }
        (coords, boundary, cells)
    };

    Ok(BaseMesh {
        dim,
        length,
        cells_per_side,
        coords,
        cells,
        boundary,
    })
}

/// Partition of `[0, Y]` with nodes `y_k = (k/M)^γ Y`, `γ = 3/(2s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedAxis {
    m: usize,
    height: f64,
    gamma: f64,
    nodes: Vec<f64>,
}

impl GradedAxis {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn interval(&self, k: usize) -> (f64, f64) {
        (self.nodes[k], self.nodes[k + 1])
    }

    /// Largest ratio of neighbouring interval lengths.
    pub fn max_adjacent_ratio(&self) -> f64 {
        self.nodes
            .windows(3)
            .map(|w| {
                let (h0, h1) = (w[1] - w[0], w[2] - w[1]);
                (h1 / h0).max(h0 / h1)
            })
            .fold(1.0, f64::max)
    }
}

pub fn graded_axis(m: usize, height: f64, s: f64) -> Result<GradedAxis> {
    if m == 0 {
        return Err(Error::InvalidParameter("the graded axis needs M ≥ 1 intervals".into()));
    }
    if !(height > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation height {height} must be positive"
        )));
    }
    crate::problem::alpha_of_s(s)?;
    let gamma = 3.0 / (2.0 * s);
    let nodes = (0..=m)
        .map(|k| match k {
            0 => 0.0,
            k if k == m => height,
            k => (k as f64 / m as f64).powf(gamma) * height,
        })
        .collect();
    Ok(GradedAxis {
        m,
        height,
        gamma,
        nodes,
    })
}

/// Truncation height `Y = max(1, (4/√λ₁) log N)` for `N` cylinder cells.
pub fn truncation_height(total_cells: f64, lambda_1: f64) -> f64 {
    (4.0 / lambda_1.sqrt() * total_cells.ln()).max(1.0)
}

/// `M = round(#T_Ω^{1/n})`.
pub fn balanced_m(base_cells: usize, dim: usize) -> usize {
    ((base_cells as f64).powf(1.0 / dim as f64).round() as usize).max(1)
}

/// Tensor product of a base mesh and a graded axis with its DOF numbering.
///
/// Node `(i, k)` (base node `i`, axis node `k`) has global index `k·n_base + i`.
/// Dirichlet nodes are those on the lateral boundary and on the top `y = Y`.
#[derive(Debug, Clone)]
pub struct ExtendedMesh {
    base: BaseMesh,
    axis: GradedAxis,
    dof_of_node: Vec<Option<usize>>,
    node_of_dof: Vec<usize>,
    dirichlet: Vec<bool>,
    trace_dofs: Vec<usize>,
}

impl ExtendedMesh {
    pub fn base(&self) -> &BaseMesh {
        &self.base
    }

    pub fn axis(&self) -> &GradedAxis {
        &self.axis
    }

    pub fn num_nodes(&self) -> usize {
        self.dirichlet.len()
    }

    pub fn num_free(&self) -> usize {
        self.node_of_dof.len()
    }

    pub fn num_cells(&self) -> usize {
        self.base.num_cells() * self.axis.m()
    }

    pub fn node_index(&self, base_node: usize, k: usize) -> usize {
        k * self.base.num_nodes() + base_node
    }

    pub fn dof(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn node_of_dof(&self, dof: usize) -> usize {
        self.node_of_dof[dof]
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    /// Free DOF indices of the interior base nodes on `y = 0`, in base node order.
    pub fn trace_dofs(&self) -> &[usize] {
        &self.trace_dofs
    }

    /// Nodal vector on all nodes from a vector over free DOFs.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_nodes()];
        for (d, &node) in self.node_of_dof.iter().enumerate() {
            full[node] = free[d];
        }
        full
    }

    /// Restriction of a nodal vector to the free DOFs.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.node_of_dof.iter().map(|&n| full[n]).collect()
    }

    pub fn summary(&self) -> MeshSummary {
        MeshSummary {
            dim: self.base.dim(),
            base_cells: self.base.num_cells(),
            base_nodes: self.base.num_nodes(),
            h: self.base.h(),
            m: self.axis.m(),
            height: self.axis.height(),
            total_cells: self.num_cells(),
            total_nodes: self.num_nodes(),
            free_dofs: self.num_free(),
        }
    }
}

pub fn tensor_mesh(base: &BaseMesh, axis: &GradedAxis) -> ExtendedMesh {
    let nb = base.num_nodes();
    let m = axis.m();
    let mut dirichlet = Vec::with_capacity(nb * (m + 1));
    for k in 0..=m {
        for i in 0..nb {
            dirichlet.push(base.is_boundary(i) || k == m);
        }
    }
    let mut dof_of_node = vec![None; dirichlet.len()];
    let mut node_of_dof = Vec::new();
    for (node, &masked) in dirichlet.iter().enumerate() {
        if !masked {
            dof_of_node[node] = Some(node_of_dof.len());
            node_of_dof.push(node);
        }
    }
    let trace_dofs = (0..nb).filter_map(|i| dof_of_node[i]).collect();
    ExtendedMesh {
        base: base.clone(),
        axis: axis.clone(),
        dof_of_node,
        node_of_dof,
        dirichlet,
        trace_dofs,
    }
}

/// Size summary of a cylinder mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSummary {
    pub dim: usize,
    pub base_cells: usize,
    pub base_nodes: usize,
    pub h: f64,
    pub m: usize,
    pub height: f64,
    pub total_cells: usize,
    pub total_nodes: usize,
    pub free_dofs: usize,
}

impl MeshSummary {
    pub const CSV_HEADER: &'static str = "dim,base_cells,base_nodes,h,M,Y,total_cells,total_nodes,free_dofs";

    pub fn csv_row(&self) -> String {
        let mut out = String::new();
        let _ = write!(
            out,
            "{},{},{},{:.12e},{},{:.12e},{},{},{}",
            self.dim,
            self.base_cells,
            self.base_nodes,
            self.h,
            self.m,
            self.height,
            self.total_cells,
            self.total_nodes,
            self.free_dofs
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_examples() {
        let b = build_base(1, 1.0, 4).unwrap();
        let xs: Vec<f64> = b.coords().iter().map(|c| c[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(b.num_cells(), 4);

        let b = build_base(1, 2.0, 2).unwrap();
        assert!(b.cells().iter().all(|c| (c.measure - 1.0).abs() < 1e-15));

        let b = build_base(2, 1.0, 3).unwrap();
        assert_eq!(b.num_cells(), 9);
        assert!(b.cells().iter().all(|c| (c.measure - 1.0 / 9.0).abs() < 1e-15));
        assert!(b.max_aspect_ratio() <= 4.0);
        let total: f64 = b.cells().iter().map(|c| c.measure).sum();
        assert!((total - 1.0).abs() < 1e-12);

        assert!(matches!(build_base(3, 1.0, 2), Err(Error::UnsupportedDimension(3))));
        assert!(build_base(1, 1.0, 0).is_err());
    }

    #[test]
    fn graded_axis_examples() {
        let a = graded_axis(2, 1.0, 0.5).unwrap();
        assert_eq!(a.nodes(), &[0.0, 0.125, 1.0]);
        let a = graded_axis(1, 3.7, 0.2).unwrap();
        assert_eq!(a.nodes(), &[0.0, 3.7]);
        let a = graded_axis(4, 1.0, 0.75).unwrap();
        let want = [0.0, 1.0 / 16.0, 0.25, 9.0 / 16.0, 1.0];
        for (x, w) in a.nodes().iter().zip(want) {
            assert!((x - w).abs() < 1e-15);
        }
        assert!(graded_axis(0, 1.0, 0.5).is_err());
    }

    #[test]
    fn graded_axis_reproduces_power_law() {
        for &s in &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9] {
            for &m in &[1usize, 2, 7, 64, 1000, 10_000] {
                let a = graded_axis(m, 2.5, s).unwrap();
                let gamma = 3.0 / (2.0 * s);
                for (k, &y) in a.nodes().iter().enumerate() {
                    let want = (k as f64 / m as f64).powf(gamma) * 2.5;
                    assert!((y - want).abs() <= 1e-14 * want.max(f64::MIN_POSITIVE));
                }
                assert!(a.nodes().windows(2).all(|w| w[0] < w[1]));
                if m >= 2 {
                    assert!(a.max_adjacent_ratio() <= 2f64.powf(gamma) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn truncation_examples() {
        let e4 = 4f64.exp();
        assert!((truncation_height(e4, 16.0) - 4.0).abs() < 1e-14);
        assert_eq!(truncation_height(2.0, 1e12), 1.0);
        let y = truncation_height(1f64.exp(), std::f64::consts::PI.powi(2));
        assert!((y - 4.0 / std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn balanced_m_examples() {
        assert_eq!(balanced_m(16, 1), 16);
        assert_eq!(balanced_m(64, 2), 8);
        assert_eq!(balanced_m(10, 2), 3);
    }

    #[test]
    fn tensor_mesh_counts() {
        let base = build_base(1, 1.0, 4).unwrap();
        let mesh = tensor_mesh(&base, &graded_axis(3, 1.0, 0.5).unwrap());
        assert_eq!(mesh.num_nodes(), 20);
        assert_eq!(mesh.num_cells(), 12);
        assert_eq!(mesh.trace_dofs().len(), 3);

        let base = build_base(1, 1.0, 2).unwrap();
        let mesh = tensor_mesh(&base, &graded_axis(1, 1.0, 0.5).unwrap());
        assert_eq!(mesh.num_free(), 1);
        assert_eq!(mesh.dirichlet_mask().iter().filter(|&&d| d).count(), 5);

        let base = build_base(2, 1.0, 3).unwrap();
        let mesh = tensor_mesh(&base, &graded_axis(2, 1.0, 0.5).unwrap());
        assert_eq!(mesh.num_nodes(), 48);
        assert_eq!(mesh.num_cells(), 18);
        assert_eq!(mesh.num_cells(), mesh.axis().m() * base.num_cells());
    }

    #[test]
    fn dirichlet_mask_and_dof_bijection() {
        for dim in [1, 2] {
            let base = build_base(dim, 1.5, 5).unwrap();
            let axis = graded_axis(4, 2.0, 0.3).unwrap();
            let mesh = tensor_mesh(&base, &axis);
            let nb = base.num_nodes();
            for node in 0..mesh.num_nodes() {
                let (i, k) = (node % nb, node / nb);
                let y = axis.nodes()[k];
                let expect = base.is_boundary(i) || y == axis.height();
                assert_eq!(mesh.dirichlet_mask()[node], expect);
            }
            let mut seen = vec![false; mesh.num_free()];
            for node in 0..mesh.num_nodes() {
                if let Some(d) = mesh.dof(node) {
                    assert!(!seen[d]);
                    seen[d] = true;
                    assert_eq!(mesh.node_of_dof(d), node);
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn summary_csv() {
        let base = build_base(1, 1.0, 8).unwrap();
        let mesh = tensor_mesh(&base, &graded_axis(8, 2.0, 0.5).unwrap());
        let row = mesh.summary().csv_row();
        assert_eq!(row.split(',').count(), MeshSummary::CSV_HEADER.split(',').count());
        assert!(row.starts_with("1,8,9,"));
    }
}
