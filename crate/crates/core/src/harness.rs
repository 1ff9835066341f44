//! Refinement and decay studies, rate fits, config parsing and table output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;

use crate::assembly::{assemble_stiffness, assemble_trace_load_fn, trace_of, weighted_energy_in_band, CylinderField};
use crate::error::{Error, Result};
use crate::linsolve::cg_solve_strict;
use crate::mesh::{balanced_m, build_base, graded_axis, tensor_mesh, truncation_height, BaseMesh, ExtendedMesh};
use crate::optimizer::{self, HistoryEntry, OptimalTriple, OptimizerSettings};
use crate::problem::{ControlField, DerivedConstants, DesiredState, ProblemConfig};
use crate::spectral::{self, expand_trace, fractional_solve_spectral, hs_norm, SpectralExpansion};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    StateRate,
    ControlRate,
    Decay,
    KktCheck,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::StateRate => "state_rate",
            StudyKind::ControlRate => "control_rate",
            StudyKind::Decay => "decay",
            StudyKind::KktCheck => "kkt_check",
        }
    }
}

impl FromStr for StudyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "state_rate" => Ok(StudyKind::StateRate),
            "control_rate" => Ok(StudyKind::ControlRate),
            "decay" => Ok(StudyKind::Decay),
            "kkt_check" => Ok(StudyKind::KktCheck),
            other => Err(format!(
                "unknown study '{other}' (expected state_rate, control_rate, decay or kkt_check)"
            )),
        }
    }
}

/// A study read from a config file.
#[derive(Debug, Clone)]
pub struct StudySpec {
    pub kind: StudyKind,
    /// Base cell counts per side, strictly increasing.
    pub levels: Vec<usize>,
    pub cfg: ProblemConfig,
    /// Cut heights for the decay study.
    pub ys: Vec<f64>,
    pub kkt_tol: f64,
    pub output: PathBuf,
    /// Sine coefficients of the fixed forcing of state and decay studies.
    pub forcing: Vec<f64>,
    /// Truncation order of spectral reference solutions.
    pub spectral_order: usize,
    /// Base cells and `M` of the fixed mesh of the decay study.
    pub decay_mesh: (usize, usize),
}

pub const DEFAULT_LEVELS: [usize; 4] = [8, 16, 32, 64];
pub const DEFAULT_YS: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            kind: StudyKind::StateRate,
            levels: DEFAULT_LEVELS.to_vec(),
            cfg: ProblemConfig {
                desired_state: DesiredState::Spectral(SpectralExpansion::new(1.0, 0.0, vec![1.0])),
                ..Default::default()
            },
            ys: DEFAULT_YS.to_vec(),
            kkt_tol: 1e-8,
            output: PathBuf::from("."),
            forcing: vec![1.0],
            spectral_order: spectral::DEFAULT_ORDER,
            decay_mesh: (32, 192),
        }
    }
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.levels.is_empty() {
            return Err(Error::Validation("at least one level is required".into()));
        }
        if self.levels.contains(&0) || self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "levels {:?} must be positive and strictly increasing",
                self.levels
            )));
        }
        if matches!(self.kind, StudyKind::StateRate | StudyKind::ControlRate) && self.levels.len() < 3 {
            return Err(Error::Validation("rate studies need at least 3 levels".into()));
        }
        if self.kind == StudyKind::Decay
            && (self.ys.len() < 2 || self.ys.windows(2).any(|w| w[0] >= w[1]) || self.ys[0] < 1.0)
        {
            return Err(Error::Validation(format!(
                "Ys {:?} must be strictly increasing, at least two, each ≥ 1",
                self.ys
            )));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::Validation(format!(
                "kkt_tol = {} must be positive",
                self.kkt_tol
            )));
        }
        Ok(())
    }

    fn settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            kkt_tol: self.kkt_tol,
            ..Default::default()
        }
    }
}

fn parse_list<T: FromStr>(value: &str, line: usize, key: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>().map_err(|_| Error::Parse {
                line,
                message: format!("bad entry '{s}' in {key}"),
            })
        })
        .collect()
}

fn parse_real(value: &str, line: usize, key: &str) -> Result<f64> {
    value.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("{key}: '{value}' is not a number"),
    })
}

/// Parses `key=value` lines; `#` starts a comment.
///
/// Keys: `s sigma nu a b L c ud study levels Ys kkt_tol output`. Defaults:
/// `s=0.5 sigma=1 nu=0.1 a=-1 b=1 L=1 c=0 ud=1.0 study=state_rate
/// levels=8,16,32,64 Ys=1,1.5,2,2.5,3 kkt_tol=1e-8 output=.`
pub fn parse_config_str(text: &str) -> Result<StudySpec> {
    let mut spec = StudySpec::default();
    let mut ud: Vec<f64> = vec![1.0];
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Parse {
                line,
                message: format!("expected key=value, got '{content}'"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let cfg = &mut spec.cfg;
        match key {
            "s" => cfg.s = parse_real(value, line, key)?,
            "sigma" => cfg.sigma = parse_real(value, line, key)?,
            "nu" => cfg.nu = parse_real(value, line, key)?,
            "a" => cfg.a_lo = parse_real(value, line, key)?,
            "b" => cfg.b_hi = parse_real(value, line, key)?,
            "L" => cfg.domain_length = parse_real(value, line, key)?,
            "c" => cfg.c_coeff = parse_real(value, line, key)?,
            "ud" => ud = parse_list(value, line, key)?,
            "study" => spec.kind = value.parse().map_err(|message| Error::Parse { line, message })?,
            "levels" => spec.levels = parse_list(value, line, key)?,
            "Ys" => spec.ys = parse_list(value, line, key)?,
            "kkt_tol" => spec.kkt_tol = parse_real(value, line, key)?,
            "output" => spec.output = PathBuf::from(value),
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key '{other}'"),
                })
            }
        }
    }
    spec.cfg.desired_state =
        DesiredState::Spectral(SpectralExpansion::new(spec.cfg.domain_length, spec.cfg.c_coeff, ud));
    spec.validate()?;
    Ok(spec)
}

pub fn parse_config(path: &Path) -> Result<StudySpec> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

/// Least-squares slope of `log(error)` against `log(N)` over at least 3 points.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InvalidData(format!(
            "need at least 3 points for a rate, got {}",
            points.len()
        )));
    }
    fit_slope(points, true)
}

fn fit_slope(points: &[(f64, f64)], log_x: bool) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 points for a fit, got {}",
            points.len()
        )));
    }
    if let Some(bad) = points
        .iter()
        .find(|(n, e)| !(*e > 0.0 && e.is_finite()) || (log_x && !(*n > 0.0)))
    {
        return Err(Error::InvalidData(format!("cannot fit nonpositive data point {bad:?}")));
    }
    let xs: Vec<f64> = points.iter().map(|p| if log_x { p.0.ln() } else { p.0 }).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidData("abscissae are all equal".into()));
    }
    Ok(sxy / sxx)
}

/// One refinement level.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub base_cells: usize,
    pub m: usize,
    pub total_cells: usize,
    pub h: f64,
    pub height: f64,
    pub error: f64,
    /// Rate against the previous row, in powers of `total_cells`.
    pub local_rate: Option<f64>,
    /// Companion error (state error in `H^s` for control studies).
    pub secondary: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// Global least-squares slope, when all errors are positive.
    pub slope: Option<f64>,
    pub secondary_label: Option<&'static str>,
}

impl RateTable {
    fn from_rows(mut rows: Vec<RateRow>, secondary_label: Option<&'static str>) -> Self {
        for i in 1..rows.len() {
            let (a, b) = (&rows[i - 1], &rows[i]);
            rows[i].local_rate = if a.error > 0.0 && b.error > 0.0 {
                Some((b.error / a.error).ln() / (b.total_cells as f64 / a.total_cells as f64).ln())
            } else {
                None
            };
        }
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.total_cells as f64, r.error)).collect();
        let slope = fit_rate(&pts).ok();
        RateTable {
            rows,
            slope,
            secondary_label,
        }
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }
}

/// Cylinder mesh of a level: `M = #T_Ω^{1/n}` and `Y` from the cell count.
pub fn level_mesh(cfg: &ProblemConfig, cells_per_side: usize) -> Result<ExtendedMesh> {
    let base = build_base(1, cfg.domain_length, cells_per_side)?;
    let m = balanced_m(base.num_cells(), 1);
    let consts = DerivedConstants::new(cfg, 1)?;
    let height = truncation_height((m * base.num_cells()) as f64, consts.lambda_1);
    Ok(tensor_mesh(&base, &graded_axis(m, height, cfg.s)?))
}

fn row_for(mesh: &ExtendedMesh, error: f64, secondary: Option<f64>) -> RateRow {
    RateRow {
        base_cells: mesh.base().num_cells(),
        m: mesh.axis().m(),
        total_cells: mesh.num_cells(),
        h: mesh.base().h(),
        height: mesh.axis().height(),
        error,
        local_rate: None,
        secondary,
    }
}

fn forcing_expansion(spec: &StudySpec) -> SpectralExpansion {
    SpectralExpansion::new(spec.cfg.domain_length, spec.cfg.c_coeff, spec.forcing.clone())
}

/// Modes used when measuring errors of piecewise linear traces.
fn error_order(spec: &StudySpec, cells: usize) -> usize {
    spec.spectral_order.max(32 * cells)
}

/// `V` solving `a_Y(V, W) = (f, tr W)` for a smooth forcing.
pub fn solve_state_forcing(
    mesh: &ExtendedMesh,
    cfg: &ProblemConfig,
    forcing: &SpectralExpansion,
    cg_tol: f64,
) -> Result<CylinderField> {
    let matrix = assemble_stiffness(mesh, cfg)?;
    let rhs = assemble_trace_load_fn(mesh, |x| forcing.eval(x[0]));
    let (x, _) = cg_solve_strict(&matrix, &rhs, None, cg_tol)?;
    Ok(CylinderField::from_free(mesh, &x))
}

/// `‖u − tr V‖_{H^s}` against `u = L^{-s} f` for each level.
pub fn run_state_rate_study(spec: &StudySpec) -> Result<RateTable> {
    spec.validate()?;
    let forcing = forcing_expansion(spec);
    let rows = spec
        .levels
        .par_iter()
        .map(|&cells| -> Result<RateRow> {
            let ctx = || format!("state study, level {cells}");
            let mesh = level_mesh(&spec.cfg, cells).map_err(|e| e.with_context(ctx()))?;
            let order = error_order(spec, cells);
            let (error, energy) = if forcing.coefficients().iter().all(|&c| c == 0.0) {
                (0.0, 0.0)
            } else {
                let v = solve_state_forcing(&mesh, &spec.cfg, &forcing, 1e-12).map_err(|e| e.with_context(ctx()))?;
                let tr = trace_of(&v, &mesh)?;
                let exact = fractional_solve_spectral(&forcing.with_order(order), spec.cfg.s);
                let approx = expand_trace(&tr, mesh.base(), spec.cfg.c_coeff, order)?;
                // Galerkin orthogonality: ‖U − V‖²_a = (f, tr U) − (f, tr V).
                let energy = (forcing.inner(&exact) - forcing.with_order(order).inner(&approx))
                    .max(0.0)
                    .sqrt();
                (hs_norm(&approx.sub(&exact)?, spec.cfg.s), energy)
            };
            info!("state level {cells}: error {error:.6e}, energy error {energy:.6e}");
            Ok(row_for(&mesh, error, Some(energy)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateTable::from_rows(rows, Some("energy_error")))
}

/// `Π_{coarse}` of a piecewise constant field on a finer 1D mesh (exact overlap).
pub fn restrict_p0(fine: &ControlField, fine_base: &BaseMesh, coarse: &BaseMesh) -> Result<ControlField> {
    fine.check_mesh(fine_base)?;
    if fine_base.dim() != 1 || coarse.dim() != 1 || fine_base.length() != coarse.length() {
        return Err(Error::MeshMismatch(
            "P0 restriction needs two 1D meshes of the same domain".into(),
        ));
    }
    let values = coarse
        .cells()
        .iter()
        .map(|c| {
            let (lo, hi) = (c.lo[0], c.hi[0]);
            fine_base
                .cells()
                .iter()
                .zip(&fine.values)
                .map(|(f, v)| (hi.min(f.hi[0]) - lo.max(f.lo[0])).max(0.0) * v)
                .sum::<f64>()
                / c.measure
        })
        .collect();
    ControlField::from_values(coarse, values)
}

/// Result of one optimize run on a level.
#[derive(Debug, Clone)]
pub struct LevelRun {
    pub mesh: ExtendedMesh,
    pub triple: OptimalTriple,
}

fn optimize_levels(spec: &StudySpec, settings: &OptimizerSettings) -> Result<Vec<LevelRun>> {
    spec.levels
        .par_iter()
        .map(|&cells| {
            let mesh = level_mesh(&spec.cfg, cells)?;
            let triple = optimizer::optimize(&spec.cfg, &mesh, settings)
                .map_err(|e| e.with_context(format!("optimize, level {cells}")))?;
            info!(
                "optimize level {cells}: {} iterations, kkt {:.3e}",
                triple.history.len(),
                triple.kkt_residual
            );
            Ok(LevelRun { mesh, triple })
        })
        .collect()
}

/// Control error against a spectral reference on the finest control mesh,
/// plus the `H^s` state error.
pub fn run_control_rate_study(spec: &StudySpec) -> Result<(RateTable, Vec<LevelRun>)> {
    spec.validate()?;
    let finest = *spec.levels.last().unwrap();
    let ref_base = build_base(1, spec.cfg.domain_length, finest)?;
    let reference = spectral::spectral_control_solve(&spec.cfg, &ref_base, spec.spectral_order, 1e-10)
        .map_err(|e| e.with_context("spectral reference"))?;
    let runs = optimize_levels(spec, &spec.settings())?;
    let mut rows = Vec::with_capacity(runs.len());
    for run in &runs {
        let base = run.mesh.base();
        let cells = base.num_cells();
        let reference_z = restrict_p0(&reference.control, &ref_base, base)?;
        let diff: Vec<f64> = reference_z
            .values
            .iter()
            .zip(&run.triple.control.values)
            .map(|(a, b)| a - b)
            .collect();
        let error = ControlField::from_values(base, diff)?.l2_norm(base)?;
        let order = error_order(spec, cells);
        let tr = trace_of(&run.triple.state, &run.mesh)?;
        let approx = expand_trace(&tr, base, spec.cfg.c_coeff, order)?;
        let state_error = hs_norm(&approx.sub(&reference.state.with_order(order))?, spec.cfg.s);
        rows.push(row_for(&run.mesh, error, Some(state_error)));
    }
    Ok((RateTable::from_rows(rows, Some("state_error_Hs")), runs))
}

/// `‖Z̄_FEM − Z̄_spectral‖_{L²(Ω)}` on matched control meshes.
pub fn run_solver_agreement_study(spec: &StudySpec) -> Result<(RateTable, Vec<LevelRun>)> {
    spec.validate()?;
    let runs = optimize_levels(spec, &spec.settings())?;
    let rows = runs
        .par_iter()
        .map(|run| -> Result<RateRow> {
            let base = run.mesh.base();
            let spec_sol = spectral::spectral_control_solve(&spec.cfg, base, spec.spectral_order, spec.kkt_tol)?;
            let diff: Vec<f64> = spec_sol
                .control
                .values
                .iter()
                .zip(&run.triple.control.values)
                .map(|(a, b)| a - b)
                .collect();
            let error = ControlField::from_values(base, diff)?.l2_norm(base)?;
            Ok(row_for(&run.mesh, error, Some(spec_sol.kkt_residual)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((RateTable::from_rows(rows, Some("spectral_kkt")), runs))
}

/// Final KKT residual per level; the secondary column is the smallest value
/// of the discrete variational inequality over 100 random feasible controls.
pub fn run_kkt_check(spec: &StudySpec) -> Result<(RateTable, Vec<LevelRun>)> {
    spec.validate()?;
    let runs = optimize_levels(spec, &spec.settings())?;
    let mut rows = Vec::new();
    for run in &runs {
        let vi = variational_inequality_min(&run.triple, &spec.cfg, run.mesh.base(), 100, 7)?;
        rows.push(row_for(&run.mesh, run.triple.kkt_residual, Some(vi)));
    }
    let mut table = RateTable::from_rows(rows, Some("vi_min"));
    table.slope = None;
    Ok((table, runs))
}

/// `min_Z (P̄ + σZ̄ + νΛ̄, Z − Z̄)` over `samples` random admissible `Z`.
pub fn variational_inequality_min(
    triple: &OptimalTriple,
    cfg: &ProblemConfig,
    base: &BaseMesh,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let grad: Vec<f64> = triple
        .adjoint_avg
        .values
        .iter()
        .zip(triple.control.values.iter().zip(&triple.subgradient.values))
        .map(|(p, (z, l))| p + cfg.sigma * z + cfg.nu * l)
        .collect();
    let grad = ControlField::from_values(base, grad)?;
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let dir: Vec<f64> = triple
            .control
            .values
            .iter()
            .map(|z| rng.gen_range(cfg.a_lo..=cfg.b_hi) - z)
            .collect();
        worst = worst.min(grad.inner(&ControlField::from_values(base, dir)?, base)?);
    }
    Ok(worst)
}

/// Tail energies `E(Y) = ‖∇V‖_{L²(y^α, Ω×(Y, Y_ref))}` of one state solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayTable {
    pub rows: Vec<(f64, f64)>,
    /// Fitted slope of `log E` against `Y`.
    pub slope: f64,
    /// `−√λ₁/2`.
    pub theory_rate: f64,
    pub reference_height: f64,
}

impl DecayTable {
    /// Whether the fitted slope is at most `(1 − 0.2)·(−√λ₁/2)`.
    pub fn meets_bound(&self) -> bool {
        self.slope <= self.theory_rate * 0.8
    }
}

pub fn run_decay_study(
    cfg: &ProblemConfig,
    ys: &[f64],
    forcing: &SpectralExpansion,
    base_cells: usize,
    m: usize,
) -> Result<DecayTable> {
    cfg.validate()?;
    if ys.len() < 2 || ys.windows(2).any(|w| w[0] >= w[1]) || ys[0] < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "cut heights {ys:?} must increase from at least 1"
        )));
    }
    let consts = DerivedConstants::new(cfg, 1)?;
    let reference_height = ys.last().unwrap() + 4.0;
    let base = build_base(1, cfg.domain_length, base_cells)?;
    let mesh = tensor_mesh(&base, &graded_axis(m, reference_height, cfg.s)?);
    let v = solve_state_forcing(&mesh, cfg, forcing, 1e-13)?;
    let rows: Vec<(f64, f64)> = ys
        .iter()
        .map(|&y| {
            (
                y,
                weighted_energy_in_band(&mesh, &v.values, consts.alpha, y, reference_height)
                    .max(0.0)
                    .sqrt(),
            )
        })
        .collect();
    let slope = fit_slope(&rows, false)?;
    Ok(DecayTable {
        rows,
        slope,
        theory_rate: -0.5 * consts.lambda_1.sqrt(),
        reference_height,
    })
}

/// Output format of [`emit_table`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Markdown => "md",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(usize),
    Real(f64),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => format!("{v:.15e}"),
            Cell::Empty => String::new(),
        }
    }
}

/// Anything printable by [`emit_table`].
pub trait Tabular {
    fn headers(&self) -> Vec<&str>;
    fn cells(&self) -> Vec<Vec<Cell>>;
    /// Trailing `(label, value)` row.
    fn summary(&self) -> Option<(&'static str, f64)>;
}

impl Tabular for RateTable {
    fn headers(&self) -> Vec<&str> {
        let mut h = vec!["base_cells", "M", "total_cells", "h", "Y", "error", "local_rate"];
        if let Some(label) = self.secondary_label {
            h.push(label);
        }
        h
    }

    fn cells(&self) -> Vec<Vec<Cell>> {
        self.rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    Cell::Int(r.base_cells),
                    Cell::Int(r.m),
                    Cell::Int(r.total_cells),
                    Cell::Real(r.h),
                    Cell::Real(r.height),
                    Cell::Real(r.error),
                    r.local_rate.map_or(Cell::Empty, Cell::Real),
                ];
                if self.secondary_label.is_some() {
                    row.push(r.secondary.map_or(Cell::Empty, Cell::Real));
                }
                row
            })
            .collect()
    }

    fn summary(&self) -> Option<(&'static str, f64)> {
        self.slope.map(|s| ("slope", s))
    }
}

impl Tabular for DecayTable {
    fn headers(&self) -> Vec<&str> {
        vec!["Y", "tail_energy"]
    }

    fn cells(&self) -> Vec<Vec<Cell>> {
        self.rows
            .iter()
            .map(|&(y, e)| vec![Cell::Real(y), Cell::Real(e)])
            .collect()
    }

    fn summary(&self) -> Option<(&'static str, f64)> {
        Some(("slope", self.slope))
    }
}

/// Renders a table; the summary row puts its label in the first column and
/// its value in the last.
pub fn render_table<T: Tabular + ?Sized>(table: &T, format: TableFormat) -> String {
    let headers: Vec<String> = table.headers().iter().map(|s| s.to_string()).collect();
    let width = headers.len();
    let mut rows: Vec<Vec<String>> = table
        .cells()
        .iter()
        .map(|r| r.iter().map(Cell::render).collect())
        .collect();
    if let Some((label, value)) = table.summary() {
        let mut row = vec![String::new(); width];
        row[0] = label.to_string();
        row[width - 1] = Cell::Real(value).render();
        rows.push(row);
    }
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str(&headers.join(","));
            out.push('\n');
            for r in &rows {
                out.push_str(&r.join(","));
                out.push('\n');
            }
        }
        TableFormat::Markdown => {
            let widths: Vec<usize> = (0..width)
                .map(|c| {
                    rows.iter()
                        .map(|r| r[c].len())
                        .chain([headers[c].len(), 3])
                        .max()
                        .unwrap()
                })
                .collect();
            let line = |cells: &[String]| {
                let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
                format!("| {} |\n", padded.join(" | "))
            };
            out.push_str(&line(&headers));
            let rule: Vec<String> = widths.iter().map(|w| format!("{}:", "-".repeat(w - 1))).collect();
            out.push_str(&format!("| {} |\n", rule.join(" | ")));
            for r in &rows {
                out.push_str(&line(r));
            }
        }
    }
    out
}

pub fn emit_table<T: Tabular + ?Sized>(table: &T, path: &Path, format: TableFormat) -> Result<()> {
    fs::write(path, render_table(table, format)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Files written by [`run_study`].
#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub table_path: PathBuf,
    pub history_path: PathBuf,
    pub summary: String,
}

/// Runs a parsed study and writes `<study>_table.{csv,md}` and
/// `<study>_history.csv` into `out_dir`.
pub fn run_study(spec: &StudySpec, out_dir: &Path, format: TableFormat) -> Result<StudyOutput> {
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let name = spec.kind.name();
    let table_path = out_dir.join(format!("{name}_table.{}", format.extension()));
    let history_path = out_dir.join(format!("{name}_history.csv"));
    let finest_history =
        |runs: &[LevelRun]| -> Vec<HistoryEntry> { runs.last().map(|r| r.triple.history.clone()).unwrap_or_default() };
    let (summary, history) = match spec.kind {
        StudyKind::StateRate => {
            let t = run_state_rate_study(spec)?;
            emit_table(&t, &table_path, format)?;
            (summary_line(name, t.slope), Vec::new())
        }
        StudyKind::ControlRate => {
            let (t, runs) = run_control_rate_study(spec)?;
            emit_table(&t, &table_path, format)?;
            (summary_line(name, t.slope), finest_history(&runs))
        }
        StudyKind::KktCheck => {
            let (t, runs) = run_kkt_check(spec)?;
            emit_table(&t, &table_path, format)?;
            let worst = t.rows.iter().map(|r| r.error).fold(0.0, f64::max);
            (
                format!("{name}: largest final KKT residual {worst:.3e}"),
                finest_history(&runs),
            )
        }
        StudyKind::Decay => {
            let (cells, m) = spec.decay_mesh;
            let t = run_decay_study(&spec.cfg, &spec.ys, &forcing_expansion(spec), cells, m)?;
            emit_table(&t, &table_path, format)?;
            (
                format!("{name}: fitted slope {:.6} (bound {:.6})", t.slope, 0.8 * t.theory_rate),
                Vec::new(),
            )
        }
    };
    fs::write(&history_path, optimizer::history_csv(&history)).map_err(|source| Error::Io {
        path: history_path.clone(),
        source,
    })?;
    Ok(StudyOutput {
        table_path,
        history_path,
        summary,
    })
}

fn summary_line(name: &str, slope: Option<f64>) -> String {
    let mut s = String::new();
    match slope {
        Some(v) => {
            let _ = write!(s, "{name}: fitted slope {v:.6}");
        }
        None => {
            let _ = write!(s, "{name}: no slope (zero errors)");
        }
    }
    s
}
