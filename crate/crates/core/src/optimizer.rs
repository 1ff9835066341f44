//! Fully discrete optimal control: state and adjoint solves on the cylinder,
//! the cellwise projection formulas, and the proximal gradient loop.
//!
//! With `Π` the cell-average projection and `P̄_K = Π tr P|_K`, the discrete
//! optimum is the fixed point
//!
//! ```text
//! Z_K = Proj_[a,b]( soft_threshold(−P̄_K/σ, ν/σ) ),
//! ```
//!
//! and `Λ_K = Proj_[-1,1](−P̄_K/ν)` is the matching subgradient. The loop
//! takes proximal gradient steps `Z ← Proj_[a,b] soft(Z − τ(P̄ + σZ), τν)`,
//! which for `τ = 1/σ` is exactly the fixed-point map above.

use std::fmt::Write as _;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{
    assemble_stiffness, assemble_trace_load, assemble_trace_load_nodal, cell_averages, l2_inner_omega, trace_of,
    CylinderField, SparseMatrix, TraceField,
};
use crate::error::{Error, Result};
use crate::linsolve::{cg_solve_strict, SolveReport};
use crate::mesh::{BaseMesh, ExtendedMesh};
use crate::problem::{clip, control_cost, soft_threshold, ControlField, DesiredState, ProblemConfig};

/// Step length rule of the proximal loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// `τ = 1/(σ + L̂)`, `L̂` from power iteration on the normal map.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub step: StepRule,
    pub kkt_tol: f64,
    pub max_outer: usize,
    /// Relaxation `θ ∈ (0, 1]` of the update `Z + θ(prox − Z)`.
    pub damping: f64,
    /// Relative residual for the inner CG solves.
    pub cg_tol: f64,
    pub power_iterations: usize,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            step: StepRule::Auto,
            kkt_tol: 1e-8,
            max_outer: 500,
            damping: 1.0,
            cg_tol: 1e-12,
            power_iterations: 10,
            seed: 0x5eed,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kkt_tol = {} must be positive",
                self.kkt_tol
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "damping {} not in (0, 1]",
                self.damping
            )));
        }
        if let StepRule::Fixed(t) = self.step {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(format!("step {t} must be positive")));
            }
        }
        Ok(())
    }
}

/// One outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub cost: f64,
    pub kkt_residual: f64,
    pub cg_iters_state: usize,
    pub cg_iters_adjoint: usize,
}

pub const HISTORY_CSV_HEADER: &str = "iter,J,kkt_residual,cg_iters_state,cg_iters_adjoint";

pub fn history_csv(history: &[HistoryEntry]) -> String {
    let mut out = String::from(HISTORY_CSV_HEADER);
    out.push('\n');
    for h in history {
        let _ = writeln!(
            out,
            "{},{:.15e},{:.15e},{},{}",
            h.iteration, h.cost, h.kkt_residual, h.cg_iters_state, h.cg_iters_adjoint
        );
    }
    out
}

/// Tracking value and averaged adjoint at a control.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// `Π tr P`.
    pub adjoint_avg: ControlField,
    /// `½‖tr V − u_d‖²`.
    pub tracking: f64,
    pub state_iterations: usize,
    pub adjoint_iterations: usize,
}

/// Reduced control problem `min_Z f(Z) + σ/2‖Z‖² + ν‖Z‖₁` on P0 controls,
/// seen through its adjoint.
pub trait ReducedProblem {
    fn base(&self) -> &BaseMesh;

    fn evaluate(&mut self, z: &ControlField) -> Result<Evaluation>;

    /// Linear part `Z ↦ Π tr S*(tr S Z)` of the averaged adjoint.
    fn normal_map(&mut self, z: &ControlField) -> Result<ControlField>;
}

/// Cellwise `Proj_[a,b](soft_threshold(Z − τ(P̄ + σZ), τν))`.
pub fn prox_step(z: &ControlField, pbar: &ControlField, tau: f64, cfg: &ProblemConfig) -> ControlField {
    let values = z
        .values
        .iter()
        .zip(&pbar.values)
        .map(|(&zk, &pk)| {
            clip(
                cfg.a_lo,
                cfg.b_hi,
                soft_threshold(zk - tau * (pk + cfg.sigma * zk), tau * cfg.nu),
            )
        })
        .collect();
    ControlField { mesh: z.mesh, values }
}

/// Image of the projection formula, `Proj_[a,b](soft_threshold(−P̄/σ, ν/σ))`.
pub fn projection_formula(pbar: &ControlField, cfg: &ProblemConfig) -> ControlField {
    let values = pbar
        .values
        .iter()
        .map(|&p| crate::problem::optimal_control_pointwise(p, cfg))
        .collect();
    ControlField {
        mesh: pbar.mesh,
        values,
    }
}

/// `‖Z − Proj_[a,b](soft_threshold(−P̄/σ, ν/σ))‖_{L²(Ω)}`.
pub fn kkt_residual(z: &ControlField, pbar: &ControlField, cfg: &ProblemConfig, base: &BaseMesh) -> Result<f64> {
    z.check_mesh(base)?;
    pbar.check_mesh(base)?;
    let target = projection_formula(pbar, cfg);
    Ok(base
        .cells()
        .iter()
        .zip(z.values.iter().zip(&target.values))
        .map(|(c, (a, b))| c.measure * (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Subgradient `Λ`: `sign(Z_K)` where the control is active, otherwise
/// `Proj_[-1,1](−P̄_K/ν)`.
pub fn subgradient_field(z: &ControlField, pbar: &ControlField, cfg: &ProblemConfig) -> ControlField {
    let values = z
        .values
        .iter()
        .zip(&pbar.values)
        .map(|(&zk, &pk)| {
            if zk > 0.0 {
                1.0
            } else if zk < 0.0 {
                -1.0
            } else {
                crate::problem::subgradient_pointwise(zk, pk, cfg.nu)
            }
        })
        .collect();
    ControlField { mesh: z.mesh, values }
}

/// Power iteration estimate of `‖Π tr S* tr S‖` in `L²(Ω)`.
pub fn estimate_lipschitz<P: ReducedProblem + ?Sized>(problem: &mut P, iterations: usize, seed: u64) -> Result<f64> {
    let base = problem.base().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = ControlField::from_values(&base, (0..base.num_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let mut norm = v.l2_norm(&base)?;
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        v.values.iter_mut().for_each(|x| *x /= norm);
        let w = problem.normal_map(&v)?;
        norm = w.l2_norm(&base)?;
        estimate = norm;
        if norm == 0.0 {
            break;
        }
        v = w;
    }
    Ok(estimate)
}

/// Result of [`proximal_gradient`].
#[derive(Debug, Clone)]
pub struct ProxRun {
    pub control: ControlField,
    pub adjoint_avg: ControlField,
    pub kkt_residual: f64,
    pub history: Vec<HistoryEntry>,
    /// Step used, `None` if the initial control was already optimal.
    pub tau: Option<f64>,
}

/// Proximal gradient iteration from `Z = 0` until the KKT residual drops
/// below `settings.kkt_tol`.
pub fn proximal_gradient<P: ReducedProblem + ?Sized>(
    problem: &mut P,
    cfg: &ProblemConfig,
    settings: &OptimizerSettings,
) -> Result<ProxRun> {
    cfg.validate()?;
    settings.validate()?;
    let base = problem.base().clone();
    let mut z = ControlField::zeros(&base);
    let mut tau = None;
    let mut history = Vec::new();
    let mut last_kkt = f64::INFINITY;
    for iteration in 1..=settings.max_outer {
        let ev = problem.evaluate(&z)?;
        let kkt = kkt_residual(&z, &ev.adjoint_avg, cfg, &base)?;
        let cost = ev.tracking + control_cost(&z, cfg, &base)?;
        history.push(HistoryEntry {
            iteration,
            cost,
            kkt_residual: kkt,
            cg_iters_state: ev.state_iterations,
            cg_iters_adjoint: ev.adjoint_iterations,
        });
        debug!("iter {iteration}: J = {cost:.12e}, kkt = {kkt:.3e}");
        last_kkt = kkt;
        if kkt <= settings.kkt_tol {
            return Ok(ProxRun {
                control: z,
                adjoint_avg: ev.adjoint_avg,
                kkt_residual: kkt,
                history,
                tau,
            });
        }
        let step = match (tau, settings.step) {
            (Some(t), _) => t,
            (None, StepRule::Fixed(t)) => t,
            (None, StepRule::Auto) => {
                let lip = estimate_lipschitz(problem, settings.power_iterations, settings.seed)?;
                debug!("estimated Lipschitz constant {lip:.6e}");
                1.0 / (cfg.sigma + lip)
            }
        };
        tau = Some(step);
        let prox = prox_step(&z, &ev.adjoint_avg, step, cfg);
        if settings.damping == 1.0 {
            z = prox;
        } else {
            for (zk, pk) in z.values.iter_mut().zip(&prox.values) {
                *zk += settings.damping * (pk - *zk);
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: settings.max_outer,
        residual: last_kkt,
        history: history.iter().map(|h| (h.cost, h.kkt_residual)).collect(),
    })
}

/// Nodal interpolant of `u_d` on the base mesh.
pub fn desired_state_nodal(cfg: &ProblemConfig, base: &BaseMesh) -> Result<TraceField> {
    if base.dim() != 1 && matches!(cfg.desired_state, DesiredState::Spectral(_)) {
        return Err(Error::InvalidParameter(
            "spectral desired state is only available for n = 1".into(),
        ));
    }
    Ok(TraceField::interpolate(base, |x| cfg.desired_state.eval(x)))
}

/// Cached stiffness matrix and desired state for repeated solves on one mesh.
#[derive(Debug, Clone)]
pub struct FemSolver {
    mesh: ExtendedMesh,
    matrix: SparseMatrix,
    target: TraceField,
    cg_tol: f64,
}

impl FemSolver {
    pub fn new(mesh: &ExtendedMesh, cfg: &ProblemConfig, cg_tol: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(FemSolver {
            mesh: mesh.clone(),
            matrix: assemble_stiffness(mesh, cfg)?,
            target: desired_state_nodal(cfg, mesh.base())?,
            cg_tol,
        })
    }

    pub fn mesh(&self) -> &ExtendedMesh {
        &self.mesh
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn target(&self) -> &TraceField {
        &self.target
    }

    /// `a_Y(V, W) = (Z, tr W)` for all `W`.
    pub fn state(&self, z: &ControlField, guess: Option<&[f64]>) -> Result<(CylinderField, SolveReport)> {
        let rhs = assemble_trace_load(&self.mesh, z)?;
        let (x, rep) =
            cg_solve_strict(&self.matrix, &rhs, guess, self.cg_tol).map_err(|e| e.with_context("state solve"))?;
        Ok((CylinderField::from_free(&self.mesh, &x), rep))
    }

    /// `a_Y(W, P) = (tr V − u_d, tr W)` for all `W`; `with_target = false`
    /// drops `u_d`.
    pub fn adjoint(
        &self,
        v: &CylinderField,
        with_target: bool,
        guess: Option<&[f64]>,
    ) -> Result<(CylinderField, SolveReport)> {
        let mut data = trace_of(v, &self.mesh)?;
        if with_target {
            data.values
                .iter_mut()
                .zip(&self.target.values)
                .for_each(|(d, t)| *d -= t);
        }
        let rhs = assemble_trace_load_nodal(&self.mesh, &data)?;
        let (x, rep) =
            cg_solve_strict(&self.matrix, &rhs, guess, self.cg_tol).map_err(|e| e.with_context("adjoint solve"))?;
        Ok((CylinderField::from_free(&self.mesh, &x), rep))
    }

    /// `½‖tr V − I u_d‖²_{L²(Ω)}`.
    pub fn tracking(&self, v: &CylinderField) -> Result<f64> {
        let mut d = trace_of(v, &self.mesh)?;
        d.values.iter_mut().zip(&self.target.values).for_each(|(x, t)| *x -= t);
        Ok(0.5 * l2_inner_omega(&d, &d, self.mesh.base())?)
    }
}

/// State `V(Z)` on the cylinder.
pub fn solve_state_fem(z: &ControlField, mesh: &ExtendedMesh, cfg: &ProblemConfig) -> Result<CylinderField> {
    let solver = FemSolver::new(mesh, cfg, OptimizerSettings::default().cg_tol)?;
    Ok(solver.state(z, None)?.0)
}

/// Adjoint `P(V)` on the cylinder, with `u_d` interpolated at the nodes.
pub fn solve_adjoint_fem(v: &CylinderField, mesh: &ExtendedMesh, cfg: &ProblemConfig) -> Result<CylinderField> {
    let solver = FemSolver::new(mesh, cfg, OptimizerSettings::default().cg_tol)?;
    Ok(solver.adjoint(v, true, None)?.0)
}

/// The discrete problem on a cylinder mesh, with warm-started solves.
pub struct FemProblem {
    solver: FemSolver,
    state: Option<CylinderField>,
    adjoint: Option<CylinderField>,
    normal_state: Option<Vec<f64>>,
    normal_adjoint: Option<Vec<f64>>,
}

impl FemProblem {
    pub fn new(mesh: &ExtendedMesh, cfg: &ProblemConfig, settings: &OptimizerSettings) -> Result<Self> {
        Ok(FemProblem {
            solver: FemSolver::new(mesh, cfg, settings.cg_tol)?,
            state: None,
            adjoint: None,
            normal_state: None,
            normal_adjoint: None,
        })
    }

    pub fn solver(&self) -> &FemSolver {
        &self.solver
    }

    /// State and adjoint of the most recent [`ReducedProblem::evaluate`] call.
    pub fn last_fields(&self) -> Option<(&CylinderField, &CylinderField)> {
        Some((self.state.as_ref()?, self.adjoint.as_ref()?))
    }
}

impl ReducedProblem for FemProblem {
    fn base(&self) -> &BaseMesh {
        self.solver.mesh().base()
    }

    fn evaluate(&mut self, z: &ControlField) -> Result<Evaluation> {
        let mesh = self.solver.mesh();
        let guess_v = self.state.as_ref().map(|v| mesh.restrict(&v.values));
        let (v, rep_v) = self.solver.state(z, guess_v.as_deref())?;
        let guess_p = self.adjoint.as_ref().map(|p| mesh.restrict(&p.values));
        let (p, rep_p) = self.solver.adjoint(&v, true, guess_p.as_deref())?;
        let adjoint_avg = cell_averages(&trace_of(&p, mesh)?, mesh.base())?;
        let tracking = self.solver.tracking(&v)?;
        self.state = Some(v);
        self.adjoint = Some(p);
        Ok(Evaluation {
            adjoint_avg,
            tracking,
            state_iterations: rep_v.iterations,
            adjoint_iterations: rep_p.iterations,
        })
    }

    fn normal_map(&mut self, z: &ControlField) -> Result<ControlField> {
        let mesh = self.solver.mesh().clone();
        let (v, _) = self.solver.state(z, self.normal_state.as_deref())?;
        let (p, _) = self.solver.adjoint(&v, false, self.normal_adjoint.as_deref())?;
        self.normal_state = Some(mesh.restrict(&v.values));
        self.normal_adjoint = Some(mesh.restrict(&p.values));
        cell_averages(&trace_of(&p, &mesh)?, mesh.base())
    }
}

/// Discrete optimal state, control, adjoint and subgradient.
#[derive(Debug, Clone)]
pub struct OptimalTriple {
    pub control: ControlField,
    pub state: CylinderField,
    pub adjoint: CylinderField,
    pub subgradient: ControlField,
    /// `Π tr P`.
    pub adjoint_avg: ControlField,
    pub kkt_residual: f64,
    pub history: Vec<HistoryEntry>,
    pub tau: Option<f64>,
}

impl OptimalTriple {
    pub fn final_cost(&self) -> f64 {
        self.history.last().map_or(0.0, |h| h.cost)
    }
}

pub fn optimize(cfg: &ProblemConfig, mesh: &ExtendedMesh, settings: &OptimizerSettings) -> Result<OptimalTriple> {
    let mut problem = FemProblem::new(mesh, cfg, settings)?;
    let run = proximal_gradient(&mut problem, cfg, settings)?;
    let (state, adjoint) = problem
        .last_fields()
        .map(|(v, p)| (v.clone(), p.clone()))
        .expect("at least one evaluation");
    Ok(OptimalTriple {
        subgradient: subgradient_field(&run.control, &run.adjoint_avg, cfg),
        control: run.control,
        state,
        adjoint,
        adjoint_avg: run.adjoint_avg,
        kkt_residual: run.kkt_residual,
        history: run.history,
        tau: run.tau,
    })
}

/// Per-cell sparsity flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityFlag {
    /// `Z_K = 0`.
    pub zero_control: bool,
    /// `|P̄_K| ≤ ν`.
    pub dead_zone: bool,
    /// The two flags agree, or `|P̄_K|` is within the tolerance band of `ν`.
    pub consistent: bool,
}

/// Checks `Z_K = 0 ⇔ |P̄_K| ≤ ν` cell by cell.
///
/// A KKT residual below `kkt_tol` only pins `|P̄_K|` to within
/// `σ·kkt_tol/√|K|` of the threshold, which is the band used here.
pub fn sparsity_report(
    triple: &OptimalTriple,
    cfg: &ProblemConfig,
    base: &BaseMesh,
    kkt_tol: f64,
) -> Result<Vec<SparsityFlag>> {
    triple.control.check_mesh(base)?;
    Ok(base
        .cells()
        .iter()
        .zip(triple.control.values.iter().zip(&triple.adjoint_avg.values))
        .map(|(cell, (&z, &p))| {
            let zero_control = z == 0.0;
            let dead_zone = p.abs() <= cfg.nu;
            let band = cfg.sigma * kkt_tol / cell.measure.sqrt();
            SparsityFlag {
                zero_control,
                dead_zone,
                consistent: zero_control == dead_zone || (p.abs() - cfg.nu).abs() <= band,
            }
        })
        .collect())
}
