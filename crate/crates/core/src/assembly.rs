//! Weighted stiffness assembly on the cylinder and transfers between the
//! cylinder, its trace plane and piecewise constant controls.
//!
//! Elements are `K × I` with bilinear (`Q1`) shape functions. The form
//!
//! ```text
//! a_Y(w, φ) = (1/d_s) ∫_{Ω×(0,Y)} y^α (A ∇w·∇φ + c w φ)
//! ```
//!
//! separates into base factors (exact polynomial integrals over `K`) and
//! `y`-factors against the weight, which are closed-form combinations of the
//! moments `∫_I y^{α+j} dy`, `j = 0, 1, 2`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::mesh::{BaseMesh, Cell, ExtendedMesh, MeshTag};
use crate::problem::{ControlField, DerivedConstants, ProblemConfig};

/// `∫_{y0}^{y1} y^{α+j} dy` for `j = 0, 1, 2`.
pub fn weight_moments(y0: f64, y1: f64, alpha: f64) -> Result<[f64; 3]> {
    if !(alpha > -1.0) {
        return Err(Error::InvalidParameter(format!(
            "weight exponent {alpha} must exceed -1"
        )));
    }
    if !(0.0 <= y0 && y0 < y1) {
        return Err(Error::InvalidParameter(format!("invalid interval ({y0}, {y1})")));
    }
    Ok(moments_unchecked(y0, y1, alpha))
}

fn moments_unchecked(y0: f64, y1: f64, alpha: f64) -> [f64; 3] {
    let mut m = [0.0; 3];
    for (j, mj) in m.iter_mut().enumerate() {
        let p = alpha + j as f64 + 1.0;
        let diff = if y0 == 0.0 {
            y1.powf(p)
        } else {
            // y1^p − y0^p without cancellation for thin intervals
            y0.powf(p) * (p * ((y1 - y0) / y0).ln_1p()).exp_m1()
        };
        *mj = diff / p;
    }
    m
}

/// Weighted 1D mass and stiffness blocks of the two hat functions of
/// `(y0, y1)`, integrated over the sub-range `(ya, yb)`.
fn y_blocks(y0: f64, y1: f64, ya: f64, yb: f64, alpha: f64) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
    let [m0, m1, m2] = moments_unchecked(ya, yb, alpha);
    let h2 = (y1 - y0) * (y1 - y0);
    let mass00 = (y1 * y1 * m0 - 2.0 * y1 * m1 + m2) / h2;
    let mass01 = (-m2 + (y0 + y1) * m1 - y0 * y1 * m0) / h2;
    let mass11 = (m2 - 2.0 * y0 * m1 + y0 * y0 * m0) / h2;
    let k = m0 / h2;
    ([[mass00, mass01], [mass01, mass11]], [[k, -k], [-k, k]])
}

/// Unweighted base-cell stiffness and mass for the cell's vertex ordering.
fn base_blocks(cell: &Cell, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let line = |h: f64| -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
        (
            [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]],
            [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]],
        )
    };
    let (kx, mx) = line(cell.width(0));
    if dim == 1 {
        let k = vec![kx[0][0], kx[0][1], kx[1][0], kx[1][1]];
        let m = vec![mx[0][0], mx[0][1], mx[1][0], mx[1][1]];
        return (k, m);
    }
    let (ky, my) = line(cell.width(1));
    let mut k = vec![0.0; 16];
    let mut m = vec![0.0; 16];
    for a in 0..4 {
        for b in 0..4 {
            let (ax, ay, bx, by) = (a % 2, a / 2, b % 2, b / 2);
            k[a * 4 + b] = kx[ax][bx] * my[ay][by] + mx[ax][bx] * ky[ay][by];
            m[a * 4 + b] = mx[ax][bx] * my[ay][by];
        }
    }
    (k, m)
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseMatrix {
    /// Square matrix from `(row, col, value)` triplets; duplicates are summed
    /// in input order.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>, symmetric: bool) -> Self {
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i}, {j}) outside {n}x{n}");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            n,
            row_ptr,
            col_idx,
            values,
            symmetric,
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut trip = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        let mut m = SparseMatrix::from_triplets(n, trip, false);
        m.symmetric = m.symmetry_defect() <= 1e-13 * m.max_abs();
        m
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect(), true)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij − a_ji|` over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(self.matvec(y)).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// One `row col value` line per stored entry, 0-based, 17 significant digits.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(out, "{i} {j} {v:.16e}")?;
            }
        }
        Ok(())
    }
}

/// Per-cell `(a(x'), c(x'))` sampled at the cell midpoint.
fn cell_coefficients(cfg: &ProblemConfig, base: &BaseMesh, cell: &Cell) -> (f64, f64) {
    let mid = cell.midpoint(base.dim());
    let a = cfg.diffusion.as_ref().map_or(1.0, |f| f(&mid));
    let c = cfg.reaction.as_ref().map_or(cfg.c_coeff, |f| f(&mid));
    (a, c)
}

fn assemble_with<F>(mesh: &ExtendedMesh, cfg: &ProblemConfig, n: usize, index: F) -> Result<SparseMatrix>
where
    F: Fn(usize) -> Option<usize>,
{
    let base = mesh.base();
    let consts = DerivedConstants::new(cfg, base.dim())?;
    let scale = 1.0 / consts.d_s;
    let axis = mesh.axis();
    let nbl = 1usize << base.dim();
    let mut trip = Vec::with_capacity(mesh.num_cells() * 4 * nbl * nbl);
    let mut dofs = vec![None; 2 * nbl];
    for cell in base.cells() {
        let (kb, mb) = base_blocks(cell, base.dim());
        let (a_coef, c_coef) = cell_coefficients(cfg, base, cell);
        for k in 0..axis.m() {
            let (y0, y1) = axis.interval(k);
            let (my, ky) = y_blocks(y0, y1, y0, y1, consts.alpha);
            for b in 0..2 {
                for la in 0..nbl {
                    dofs[b * nbl + la] = index(mesh.node_index(cell.nodes[la], k + b));
                }
            }
            for b in 0..2 {
                for la in 0..nbl {
                    let Some(row) = dofs[b * nbl + la] else { continue };
                    for d in 0..2 {
                        for lc in 0..nbl {
                            let Some(col) = dofs[d * nbl + lc] else { continue };
                            let kbv = kb[la * nbl + lc];
                            let mbv = mb[la * nbl + lc];
                            let v = a_coef * kbv * my[b][d] + mbv * ky[b][d] + c_coef * mbv * my[b][d];
                            trip.push((row, col, scale * v));
                        }
                    }
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(n, trip, true))
}

/// Matrix of `a_Y` on the free DOFs (Dirichlet rows and columns eliminated).
pub fn assemble_stiffness(mesh: &ExtendedMesh, cfg: &ProblemConfig) -> Result<SparseMatrix> {
    assemble_with(mesh, cfg, mesh.num_free(), |node| mesh.dof(node))
}

/// Matrix of `a_Y` on all nodes, without boundary elimination.
pub fn assemble_full(mesh: &ExtendedMesh, cfg: &ProblemConfig) -> Result<SparseMatrix> {
    assemble_with(mesh, cfg, mesh.num_nodes(), Some)
}

/// `∫_{Ω×(ya,yb)} y^α |∇V|²` for a nodal field on all cylinder nodes.
pub fn weighted_energy_in_band(mesh: &ExtendedMesh, values: &[f64], alpha: f64, ya: f64, yb: f64) -> f64 {
    let base = mesh.base();
    let axis = mesh.axis();
    let nbl = 1usize << base.dim();
    let mut total = 0.0;
    let mut loc = vec![0.0; 2 * nbl];
    for cell in base.cells() {
        let (kb, mb) = base_blocks(cell, base.dim());
        for k in 0..axis.m() {
            let (y0, y1) = axis.interval(k);
            let (lo, hi) = (y0.max(ya), y1.min(yb));
            if lo >= hi {
                continue;
            }
            let (my, ky) = y_blocks(y0, y1, lo, hi, alpha);
            for b in 0..2 {
                for la in 0..nbl {
                    loc[b * nbl + la] = values[mesh.node_index(cell.nodes[la], k + b)];
                }
            }
            for b in 0..2 {
                for la in 0..nbl {
                    for d in 0..2 {
                        for lc in 0..nbl {
                            let e = kb[la * nbl + lc] * my[b][d] + mb[la * nbl + lc] * ky[b][d];
                            total += loc[b * nbl + la] * e * loc[d * nbl + lc];
                        }
                    }
                }
            }
        }
    }
    total
}

/// Nodal bilinear field on the cylinder; Dirichlet nodes carry 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderField {
    pub base: MeshTag,
    pub m: usize,
    pub values: Vec<f64>,
}

impl CylinderField {
    pub fn zeros(mesh: &ExtendedMesh) -> Self {
        CylinderField {
            base: mesh.base().tag(),
            m: mesh.axis().m(),
            values: vec![0.0; mesh.num_nodes()],
        }
    }

    /// Field from values on the free DOFs.
    pub fn from_free(mesh: &ExtendedMesh, free: &[f64]) -> Self {
        CylinderField {
            base: mesh.base().tag(),
            m: mesh.axis().m(),
            values: mesh.expand(free),
        }
    }

    pub fn check_mesh(&self, mesh: &ExtendedMesh) -> Result<()> {
        if self.base != mesh.base().tag() || self.m != mesh.axis().m() || self.values.len() != mesh.num_nodes() {
            return Err(Error::MeshMismatch("cylinder field does not live on this mesh".into()));
        }
        Ok(())
    }
}

/// Nodal P1 (Q1 for n = 2) field on the base mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceField {
    pub mesh: MeshTag,
    pub values: Vec<f64>,
}

impl TraceField {
    pub fn zeros(base: &BaseMesh) -> Self {
        TraceField {
            mesh: base.tag(),
            values: vec![0.0; base.num_nodes()],
        }
    }

    /// Field with the given nodal values; boundary values are not forced to 0.
    pub fn from_values(base: &BaseMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != base.num_nodes() {
            return Err(Error::MeshMismatch(format!(
                "{} nodal values for {} nodes",
                values.len(),
                base.num_nodes()
            )));
        }
        Ok(TraceField {
            mesh: base.tag(),
            values,
        })
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(base: &BaseMesh, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..base.num_nodes()).map(|i| f(base.node(i))).collect();
        TraceField {
            mesh: base.tag(),
            values,
        }
    }

    pub fn check_mesh(&self, base: &BaseMesh) -> Result<()> {
        if self.mesh != base.tag() || self.values.len() != base.num_nodes() {
            return Err(Error::MeshMismatch(format!(
                "trace field on {:?} used with mesh {:?}",
                self.mesh,
                base.tag()
            )));
        }
        Ok(())
    }

    pub fn l2_norm(&self, base: &BaseMesh) -> Result<f64> {
        Ok(l2_inner_omega(self, self, base)?.max(0.0).sqrt())
    }
}

/// Load vector `(z, tr φ_i)_{L²(Ω)}` over the free DOFs.
pub fn assemble_trace_load(mesh: &ExtendedMesh, z: &ControlField) -> Result<Vec<f64>> {
    let base = mesh.base();
    z.check_mesh(base)?;
    let share = 1.0 / (1usize << base.dim()) as f64;
    let mut rhs = vec![0.0; mesh.num_free()];
    for (cell, &zk) in base.cells().iter().zip(&z.values) {
        for &node in &cell.nodes {
            if let Some(d) = mesh.dof(node) {
                rhs[d] += zk * cell.measure * share;
            }
        }
    }
    Ok(rhs)
}

/// Load vector `(g, tr φ_i)_{L²(Ω)}` over the free DOFs for a nodal field `g`.
pub fn assemble_trace_load_nodal(mesh: &ExtendedMesh, g: &TraceField) -> Result<Vec<f64>> {
    let base = mesh.base();
    let mg = omega_mass_apply(base, g)?;
    let mut rhs = vec![0.0; mesh.num_free()];
    for (i, v) in mg.into_iter().enumerate() {
        if let Some(d) = mesh.dof(i) {
            rhs[d] = v;
        }
    }
    Ok(rhs)
}

/// Load vector `(f, tr φ_i)_{L²(Ω)}` over the free DOFs for a function `f`,
/// by the 3-point Gauss rule per cell and direction.
pub fn assemble_trace_load_fn(mesh: &ExtendedMesh, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let base = mesh.base();
    let mut nodal = vec![0.0; base.num_nodes()];
    for cell in base.cells() {
        for (x, w) in base.quadrature(cell) {
            let xs = &x[..base.dim()];
            let fx = f(xs) * w;
            for (&n, phi) in cell.nodes.iter().zip(base.shape_values(cell, xs)) {
                nodal[n] += fx * phi;
            }
        }
    }
    let mut rhs = vec![0.0; mesh.num_free()];
    for (i, v) in nodal.into_iter().enumerate() {
        if let Some(d) = mesh.dof(i) {
            rhs[d] = v;
        }
    }
    rhs
}

/// Restriction of a cylinder field to `y = 0`.
pub fn trace_of(v: &CylinderField, mesh: &ExtendedMesh) -> Result<TraceField> {
    v.check_mesh(mesh)?;
    let nb = mesh.base().num_nodes();
    Ok(TraceField {
        mesh: v.base,
        values: v.values[..nb].to_vec(),
    })
}

/// Exact cell averages `(1/|K|) ∫_K f` of a nodal field.
pub fn cell_averages(f: &TraceField, base: &BaseMesh) -> Result<ControlField> {
    f.check_mesh(base)?;
    let values = base
        .cells()
        .iter()
        .map(|c| c.nodes.iter().map(|&n| f.values[n]).sum::<f64>() / c.nodes.len() as f64)
        .collect();
    Ok(ControlField {
        mesh: base.tag(),
        values,
    })
}

/// Ω mass matrix applied to a nodal field, over all base nodes.
pub fn omega_mass_apply(base: &BaseMesh, f: &TraceField) -> Result<Vec<f64>> {
    f.check_mesh(base)?;
    let mut out = vec![0.0; base.num_nodes()];
    let nbl = 1usize << base.dim();
    for cell in base.cells() {
        let (_, mb) = base_blocks(cell, base.dim());
        for a in 0..nbl {
            out[cell.nodes[a]] += (0..nbl).map(|b| mb[a * nbl + b] * f.values[cell.nodes[b]]).sum::<f64>();
        }
    }
    Ok(out)
}

/// Exact `(f, g)_{L²(Ω)}` for nodal fields.
pub fn l2_inner_omega(f: &TraceField, g: &TraceField, base: &BaseMesh) -> Result<f64> {
    g.check_mesh(base)?;
    Ok(omega_mass_apply(base, f)?
        .iter()
        .zip(&g.values)
        .map(|(a, b)| a * b)
        .sum())
}

/// `(f, Z)_{L²(Ω)}` for a nodal `f` and a piecewise constant `Z`.
pub fn l2_inner_p0(f: &TraceField, z: &ControlField, base: &BaseMesh) -> Result<f64> {
    let avg = cell_averages(f, base)?;
    avg.inner(z, base)
}
