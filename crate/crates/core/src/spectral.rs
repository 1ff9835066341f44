//! Sine-series realization of `L = −d²/dx² + c` on `(0, L)` with Dirichlet
//! conditions: eigenpairs, fractional solves, `H^s` norms, and an
//! extension-free solver for the control problem.

use std::f64::consts::PI;

use crate::assembly::TraceField;
use crate::error::{Error, Result};
use crate::mesh::BaseMesh;
use crate::optimizer::{self, Evaluation, HistoryEntry, OptimizerSettings, ReducedProblem};
use crate::problem::{ControlField, DesiredState, ProblemConfig};

pub const DEFAULT_ORDER: usize = 512;

/// Coefficients `w_k = ∫ w φ_k`, `k = 1..=K`, with `φ_k = √(2/L) sin(kπx/L)`.
///
/// The reaction shift `c` is carried so that `λ_k = (kπ/L)² + c` is known.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralExpansion {
    length: f64,
    reaction: f64,
    coeffs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenpair {
    pub lambda: f64,
    /// `kπ/L`.
    pub frequency: f64,
}

pub fn eigenpairs(length: f64, reaction: f64, order: usize) -> Vec<Eigenpair> {
    (1..=order)
        .map(|k| {
            let frequency = k as f64 * PI / length;
            Eigenpair {
                lambda: frequency * frequency + reaction,
                frequency,
            }
        })
        .collect()
}

/// `φ_k(x)`.
pub fn eigenfunction(length: f64, k: usize, x: f64) -> f64 {
    (2.0 / length).sqrt() * (k as f64 * PI * x / length).sin()
}

impl SpectralExpansion {
    pub fn new(length: f64, reaction: f64, coeffs: Vec<f64>) -> Self {
        SpectralExpansion {
            length,
            reaction,
            coeffs,
        }
    }

    pub fn zeros(length: f64, reaction: f64, order: usize) -> Self {
        SpectralExpansion::new(length, reaction, vec![0.0; order])
    }

    /// The single mode `φ_k`.
    pub fn mode(length: f64, reaction: f64, k: usize, order: usize) -> Self {
        let mut coeffs = vec![0.0; order.max(k)];
        coeffs[k - 1] = 1.0;
        SpectralExpansion::new(length, reaction, coeffs)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn reaction(&self) -> f64 {
        self.reaction
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// `λ_k` for 1-based `k`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let f = k as f64 * PI / self.length;
        f * f + self.reaction
    }

    fn lambdas(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.coeffs.len()).map(|k| self.eigenvalue(k))
    }

    /// Copy truncated or zero-padded to `order` terms.
    pub fn with_order(&self, order: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(order, 0.0);
        SpectralExpansion { coeffs, ..*self }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let scale = (2.0 / self.length).sqrt();
        let theta = PI * x / self.length;
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| c * ((i + 1) as f64 * theta).sin())
            .sum::<f64>()
            * scale
    }

    /// `(w, v)_{L²}` by Parseval.
    pub fn inner(&self, other: &SpectralExpansion) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn sub(&self, other: &SpectralExpansion) -> Result<SpectralExpansion> {
        self.check_compatible(other)?;
        let order = self.order().max(other.order());
        let (a, b) = (self.with_order(order), other.with_order(order));
        let coeffs = a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x - y).collect();
        Ok(SpectralExpansion { coeffs, ..*self })
    }

    fn check_compatible(&self, other: &SpectralExpansion) -> Result<()> {
        if self.length != other.length || self.reaction != other.reaction {
            return Err(Error::InvalidParameter("expansions over different operators".into()));
        }
        Ok(())
    }

    /// `Σ λ_k^t w_k φ_k`.
    pub fn apply_power(&self, t: f64) -> SpectralExpansion {
        let coeffs = self
            .coeffs
            .iter()
            .zip(self.lambdas())
            .map(|(w, l)| w * l.powf(t))
            .collect();
        SpectralExpansion { coeffs, ..*self }
    }

    /// Whether `|w_K|² λ_K^s ≤ tol ‖w‖²`.
    pub fn tail_ok(&self, s: f64, tol: f64) -> bool {
        let Some(&last) = self.coeffs.last() else { return true };
        let norm2: f64 = self.coeffs.iter().map(|c| c * c).sum();
        last * last * self.eigenvalue(self.order()).powf(s) <= tol * norm2
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub(crate) fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        rule.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    rule
}

/// Coefficients of a function by composite 8-point Gauss–Legendre on
/// `max(2K, 16)` panels (at least 16K points).
pub fn expand_fn(f: impl Fn(f64) -> f64, length: f64, reaction: f64, order: usize) -> SpectralExpansion {
    let rule = gauss_legendre(8);
    let panels = (2 * order).max(16);
    let width = length / panels as f64;
    let mut coeffs = vec![0.0; order];
    let scale = (2.0 / length).sqrt();
    for p in 0..panels {
        let x0 = p as f64 * width;
        for &(t, w) in &rule {
            let x = x0 + 0.5 * (t + 1.0) * width;
            let fw = f(x) * w * 0.5 * width * scale;
            let theta = PI * x / length;
            for (k, c) in coeffs.iter_mut().enumerate() {
                *c += fw * ((k + 1) as f64 * theta).sin();
            }
        }
    }
    SpectralExpansion::new(length, reaction, coeffs)
}

/// Exact coefficients of a piecewise linear nodal field on a 1D mesh.
pub fn expand_trace(f: &TraceField, base: &BaseMesh, reaction: f64, order: usize) -> Result<SpectralExpansion> {
    f.check_mesh(base)?;
    require_1d(base)?;
    let length = base.length();
    let scale = (2.0 / length).sqrt();
    let mut coeffs = vec![0.0; order];
    for cell in base.cells() {
        let (xl, xr) = (cell.lo[0], cell.hi[0]);
        let (fl, fr) = (f.values[cell.nodes[0]], f.values[cell.nodes[1]]);
        if fl == 0.0 && fr == 0.0 {
            continue;
        }
        let slope = (fr - fl) / (xr - xl);
        for (k, c) in coeffs.iter_mut().enumerate() {
            let w = (k + 1) as f64 * PI / length;
            // ∫ g sin(wx) = [−g cos(wx)/w] + g' [sin(wx)]/w²
            let boundary = -(fr * (w * xr).cos() - fl * (w * xl).cos()) / w;
            let interior = slope * ((w * xr).sin() - (w * xl).sin()) / (w * w);
            *c += scale * (boundary + interior);
        }
    }
    Ok(SpectralExpansion::new(length, reaction, coeffs))
}

fn require_1d(base: &BaseMesh) -> Result<()> {
    if base.dim() != 1 {
        return Err(Error::UnsupportedDimension(base.dim()));
    }
    Ok(())
}

/// Closed-form `∫_K φ_k` for every cell and mode; maps piecewise constants
/// to coefficients and coefficients to cell averages.
#[derive(Debug, Clone)]
pub struct P0Transfer {
    length: f64,
    reaction: f64,
    order: usize,
    measures: Vec<f64>,
    /// Row-major `order × cells`.
    integrals: Vec<f64>,
}

impl P0Transfer {
    pub fn new(base: &BaseMesh, reaction: f64, order: usize) -> Result<Self> {
        require_1d(base)?;
        let length = base.length();
        let scale = (2.0 / length).sqrt();
        let cells = base.num_cells();
        let mut integrals = vec![0.0; order * cells];
        for k in 0..order {
            let w = (k + 1) as f64 * PI / length;
            for (j, cell) in base.cells().iter().enumerate() {
                integrals[k * cells + j] = scale * ((w * cell.lo[0]).cos() - (w * cell.hi[0]).cos()) / w;
            }
        }
        Ok(P0Transfer {
            length,
            reaction,
            order,
            measures: base.cells().iter().map(|c| c.measure).collect(),
            integrals,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn to_spectral(&self, values: &[f64]) -> SpectralExpansion {
        let cells = self.measures.len();
        let coeffs = (0..self.order)
            .map(|k| {
                let row = &self.integrals[k * cells..(k + 1) * cells];
                row.iter().zip(values).map(|(a, b)| a * b).sum()
            })
            .collect();
        SpectralExpansion::new(self.length, self.reaction, coeffs)
    }

    pub fn cell_averages(&self, w: &SpectralExpansion) -> Vec<f64> {
        let cells = self.measures.len();
        let mut out = vec![0.0; cells];
        for (k, &c) in w.coefficients().iter().enumerate().take(self.order) {
            if c == 0.0 {
                continue;
            }
            let row = &self.integrals[k * cells..(k + 1) * cells];
            out.iter_mut().zip(row).for_each(|(o, r)| *o += c * r);
        }
        out.iter_mut().zip(&self.measures).for_each(|(o, m)| *o /= m);
        out
    }
}

/// Coefficients of a piecewise constant control.
pub fn expand_p0(z: &ControlField, base: &BaseMesh, reaction: f64, order: usize) -> Result<SpectralExpansion> {
    z.check_mesh(base)?;
    Ok(P0Transfer::new(base, reaction, order)?.to_spectral(&z.values))
}

/// `u = L^{-s} z`, i.e. `u_k = λ_k^{-s} z_k`.
pub fn fractional_solve_spectral(z: &SpectralExpansion, s: f64) -> SpectralExpansion {
    z.apply_power(-s)
}

/// `(Σ λ_k^s w_k²)^{1/2}`; negative `s` gives the dual norm.
pub fn hs_norm(w: &SpectralExpansion, s: f64) -> f64 {
    w.coefficients()
        .iter()
        .zip(w.lambdas())
        .map(|(c, l)| l.powf(s) * c * c)
        .sum::<f64>()
        .sqrt()
}

/// Control problem with the exact fractional solution operator restricted
/// to piecewise constant controls.
pub struct SpectralProblem<'a> {
    base: &'a BaseMesh,
    s: f64,
    transfer: P0Transfer,
    target: SpectralExpansion,
}

impl<'a> SpectralProblem<'a> {
    pub fn new(cfg: &ProblemConfig, base: &'a BaseMesh, order: usize) -> Result<Self> {
        cfg.validate()?;
        require_1d(base)?;
        let DesiredState::Spectral(ud) = &cfg.desired_state else {
            return Err(Error::InvalidParameter(
                "the spectral solver needs the desired state as a sine expansion".into(),
            ));
        };
        let target =
            SpectralExpansion::new(cfg.domain_length, cfg.c_coeff, ud.coefficients().to_vec()).with_order(order);
        Ok(SpectralProblem {
            base,
            s: cfg.s,
            transfer: P0Transfer::new(base, cfg.c_coeff, order)?,
            target,
        })
    }

    pub fn state(&self, z: &ControlField) -> SpectralExpansion {
        fractional_solve_spectral(&self.transfer.to_spectral(&z.values), self.s)
    }

    pub fn adjoint(&self, state: &SpectralExpansion) -> Result<SpectralExpansion> {
        Ok(fractional_solve_spectral(&state.sub(&self.target)?, self.s))
    }
}

impl ReducedProblem for SpectralProblem<'_> {
    fn base(&self) -> &BaseMesh {
        self.base
    }

    fn evaluate(&mut self, z: &ControlField) -> Result<Evaluation> {
        let u = self.state(z);
        let r = u.sub(&self.target)?;
        let p = fractional_solve_spectral(&r, self.s);
        Ok(Evaluation {
            adjoint_avg: ControlField::from_values(self.base, self.transfer.cell_averages(&p))?,
            tracking: 0.5 * r.inner(&r),
            state_iterations: 0,
            adjoint_iterations: 0,
        })
    }

    fn normal_map(&mut self, z: &ControlField) -> Result<ControlField> {
        let u = self.state(z);
        let p = fractional_solve_spectral(&u, self.s);
        ControlField::from_values(self.base, self.transfer.cell_averages(&p))
    }
}

/// Discrete optimal triple of the extension-free solver.
#[derive(Debug, Clone)]
pub struct SpectralControlSolution {
    pub control: ControlField,
    pub state: SpectralExpansion,
    pub adjoint: SpectralExpansion,
    /// Cell averages of the adjoint.
    pub adjoint_avg: ControlField,
    pub kkt_residual: f64,
    pub history: Vec<HistoryEntry>,
}

/// Optimal piecewise constant control with the exact fractional state
/// operator; same proximal iteration as [`optimizer::optimize`].
pub fn spectral_control_solve(
    cfg: &ProblemConfig,
    base: &BaseMesh,
    order: usize,
    tol: f64,
) -> Result<SpectralControlSolution> {
    let mut problem = SpectralProblem::new(cfg, base, order)?;
    let settings = OptimizerSettings {
        kkt_tol: tol,
        ..Default::default()
    };
    let run = optimizer::proximal_gradient(&mut problem, cfg, &settings)?;
    let state = problem.state(&run.control);
    let adjoint = problem.adjoint(&state)?;
    Ok(SpectralControlSolution {
        control: run.control,
        state,
        adjoint,
        adjoint_avg: run.adjoint_avg,
        kkt_residual: run.kkt_residual,
        history: run.history,
    })
}
