//! Problem data and the pointwise maps of the sparse control problem.
//!
//! The cost is `J(u, z) = ½‖u − u_d‖² + (σ/2)‖z‖² + ν‖z‖_{L¹}` subject to
//! `L^s u = z` and `a ≤ z ≤ b` with `a < 0 < b`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::assembly::TraceField;
use crate::error::{Error, Result};
use crate::mesh::{BaseMesh, MeshTag};
use crate::spectral::SpectralExpansion;

/// Scalar function of the base coordinate `x'` (length 1 or 2).
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Desired state `u_d`.
#[derive(Clone)]
pub enum DesiredState {
    /// Sine-series coefficients in the Dirichlet eigenbasis of `(0, L)`.
    Spectral(SpectralExpansion),
    /// Point samples.
    Callable(ScalarFn),
}

impl DesiredState {
    pub fn zero(domain_length: f64) -> Self {
        DesiredState::Spectral(SpectralExpansion::new(domain_length, 0.0, vec![0.0]))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            DesiredState::Spectral(e) => e.eval(x[0]),
            DesiredState::Callable(f) => f(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DesiredState::Spectral(e) => e.coefficients().iter().all(|&c| c == 0.0),
            DesiredState::Callable(_) => false,
        }
    }
}

impl fmt::Debug for DesiredState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesiredState::Spectral(e) => f.debug_tuple("Spectral").field(e).finish(),
            DesiredState::Callable(_) => f.write_str("Callable(..)"),
        }
    }
}

/// Scalars of the control problem.
#[derive(Clone)]
pub struct ProblemConfig {
    /// Fractional order `s ∈ (0, 1)`.
    pub s: f64,
    /// Weight of the L² control cost.
    pub sigma: f64,
    /// Weight of the L¹ control cost.
    pub nu: f64,
    /// Lower control bound, negative.
    pub a_lo: f64,
    /// Upper control bound, positive.
    pub b_hi: f64,
    /// Length `L` of `Ω = (0, L)^n`.
    pub domain_length: f64,
    /// Constant reaction coefficient `c ≥ 0`.
    pub c_coeff: f64,
    pub desired_state: DesiredState,
    /// Optional scalar diffusion `A(x') = a(x') I`, sampled at base cell midpoints.
    pub diffusion: Option<ScalarFn>,
    /// Optional variable reaction `c(x')`, replaces `c_coeff` in assembly when set.
    pub reaction: Option<ScalarFn>,
}

impl fmt::Debug for ProblemConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemConfig")
            .field("s", &self.s)
            .field("sigma", &self.sigma)
            .field("nu", &self.nu)
            .field("a_lo", &self.a_lo)
            .field("b_hi", &self.b_hi)
            .field("domain_length", &self.domain_length)
            .field("c_coeff", &self.c_coeff)
            .field("desired_state", &self.desired_state)
            .field("diffusion", &self.diffusion.as_ref().map(|_| ".."))
            .field("reaction", &self.reaction.as_ref().map(|_| ".."))
            .finish()
    }
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            s: 0.5,
            sigma: 1.0,
            nu: 0.1,
            a_lo: -1.0,
            b_hi: 1.0,
            domain_length: 1.0,
            c_coeff: 0.0,
            desired_state: DesiredState::zero(1.0),
            diffusion: None,
            reaction: None,
        }
    }
}

impl ProblemConfig {
    /// Config on `(0, 1)` with `u_d = Σ_k coeffs[k] φ_{k+1}`.
    pub fn with_spectral_target(s: f64, sigma: f64, nu: f64, coeffs: Vec<f64>) -> Self {
        ProblemConfig {
            s,
            sigma,
            nu,
            desired_state: DesiredState::Spectral(SpectralExpansion::new(1.0, 0.0, coeffs)),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if !(self.s > 0.0 && self.s < 1.0) {
            return fail(format!("s = {} must lie in (0, 1)", self.s));
        }
        if !(self.sigma > 0.0) {
            return fail(format!("sigma = {} must be positive", self.sigma));
        }
        if !(self.nu > 0.0) {
            return fail(format!("nu = {} must be positive", self.nu));
        }
        if !(self.a_lo < 0.0 && 0.0 < self.b_hi) {
            return fail(format!(
                "control bounds must satisfy a < 0 < b (got a = {}, b = {})",
                self.a_lo, self.b_hi
            ));
        }
        if !(self.domain_length > 0.0) {
            return fail(format!("domain length {} must be positive", self.domain_length));
        }
        if !(self.c_coeff >= 0.0) {
            return fail(format!("reaction coefficient {} must be nonnegative", self.c_coeff));
        }
        if let DesiredState::Spectral(e) = &self.desired_state {
            if (e.length() - self.domain_length).abs() > 1e-14 * self.domain_length {
                return fail(format!(
                    "desired state expansion lives on (0, {}) but the domain is (0, {})",
                    e.length(),
                    self.domain_length
                ));
            }
        }
        Ok(())
    }

    pub fn derived(&self) -> Result<DerivedConstants> {
        DerivedConstants::new(self, 1)
    }
}

/// Constants that follow from `s`, `L`, `c` and the dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    pub alpha: f64,
    pub d_s: f64,
    pub gamma_grade: f64,
    pub lambda_1: f64,
}

impl DerivedConstants {
    pub fn new(cfg: &ProblemConfig, dim: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::UnsupportedDimension(dim));
        }
        let alpha = alpha_of_s(cfg.s)?;
        let base = (PI / cfg.domain_length).powi(2);
        Ok(DerivedConstants {
            alpha,
            d_s: ds_of_s(cfg.s)?,
            gamma_grade: 3.0 / (1.0 - alpha),
            lambda_1: dim as f64 * base + cfg.c_coeff,
        })
    }
}

fn check_order(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "fractional order s = {s} not in (0, 1)"
        )))
    }
}

/// Weight exponent `α = 1 − 2s`.
pub fn alpha_of_s(s: f64) -> Result<f64> {
    check_order(s)?;
    Ok(1.0 - 2.0 * s)
}

/// Normalization `d_s = 2^{1−2s} Γ(1−s) / Γ(s)` of the conormal derivative.
pub fn ds_of_s(s: f64) -> Result<f64> {
    check_order(s)?;
    Ok((1.0 - 2.0 * s).exp2() * gamma(1.0 - s) / gamma(s))
}

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Γ(x) by the Lanczos approximation (g = 7, 9 terms), with reflection below 1/2.
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        PI / ((PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS_COEFFS[0];
        for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
    }
}

/// `min{hi, max{lo, w}}`.
pub fn proj_interval(lo: f64, hi: f64, w: f64) -> Result<f64> {
    if lo > hi {
        return Err(Error::InvalidParameter(format!("empty interval [{lo}, {hi}]")));
    }
    Ok(clip(lo, hi, w))
}

/// Unchecked clamp; callers guarantee `lo ≤ hi`.
#[inline]
pub(crate) fn clip(lo: f64, hi: f64, w: f64) -> f64 {
    hi.min(lo.max(w))
}

/// Proximal map of `κ|·|`: `sign(w) max(|w| − κ, 0)`.
#[inline]
pub fn soft_threshold(w: f64, kappa: f64) -> f64 {
    let m = w.abs() - kappa;
    if m > 0.0 {
        m.copysign(w)
    } else {
        0.0
    }
}

/// Canonical element of `∂|·|(z)`: `Proj_{[−1,1]}(−p/ν)`.
///
/// At an optimal pair this equals `sign(z)` wherever `z ≠ 0`, so `z` does not
/// enter the formula.
#[inline]
pub fn subgradient_pointwise(_z: f64, p: f64, nu: f64) -> f64 {
    clip(-1.0, 1.0, -p / nu)
}

/// Optimal pointwise control for adjoint value `p`:
/// `Proj_{[a,b]}(soft_threshold(−p/σ, ν/σ))`.
#[inline]
pub fn optimal_control_pointwise(p: f64, cfg: &ProblemConfig) -> f64 {
    clip(cfg.a_lo, cfg.b_hi, soft_threshold(-p / cfg.sigma, cfg.nu / cfg.sigma))
}

/// Piecewise constant control on a base mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub mesh: MeshTag,
    pub values: Vec<f64>,
}

impl ControlField {
    pub fn zeros(base: &BaseMesh) -> Self {
        ControlField {
            mesh: base.tag(),
            values: vec![0.0; base.num_cells()],
        }
    }

    pub fn constant(base: &BaseMesh, value: f64) -> Self {
        ControlField {
            mesh: base.tag(),
            values: vec![value; base.num_cells()],
        }
    }

    pub fn from_values(base: &BaseMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != base.num_cells() {
            return Err(Error::MeshMismatch(format!(
                "{} control values for {} cells",
                values.len(),
                base.num_cells()
            )));
        }
        Ok(ControlField {
            mesh: base.tag(),
            values,
        })
    }

    pub fn check_mesh(&self, base: &BaseMesh) -> Result<()> {
        if self.mesh != base.tag() || self.values.len() != base.num_cells() {
            return Err(Error::MeshMismatch(format!(
                "control on {:?} used with mesh {:?}",
                self.mesh,
                base.tag()
            )));
        }
        Ok(())
    }

    /// `(Z₁, Z₂)_{L²(Ω)}` for two controls on `base`.
    pub fn inner(&self, other: &ControlField, base: &BaseMesh) -> Result<f64> {
        self.check_mesh(base)?;
        other.check_mesh(base)?;
        Ok(base
            .cells()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(c, (a, b))| c.measure * a * b)
            .sum())
    }

    pub fn l2_norm(&self, base: &BaseMesh) -> Result<f64> {
        Ok(self.inner(self, base)?.sqrt())
    }

    pub fn l1_norm(&self, base: &BaseMesh) -> Result<f64> {
        self.check_mesh(base)?;
        Ok(base
            .cells()
            .iter()
            .zip(&self.values)
            .map(|(c, v)| c.measure * v.abs())
            .sum())
    }

    /// Measure of the support `{Z ≠ 0}`.
    pub fn support_measure(&self, base: &BaseMesh) -> Result<f64> {
        self.check_mesh(base)?;
        Ok(base
            .cells()
            .iter()
            .zip(&self.values)
            .filter(|(_, v)| **v != 0.0)
            .fold(0.0, |acc, (c, _)| acc + c.measure))
    }

    pub fn is_admissible(&self, cfg: &ProblemConfig) -> bool {
        self.values.iter().all(|&v| cfg.a_lo <= v && v <= cfg.b_hi)
    }
}

/// Control part `(σ/2)‖z‖² + ν‖z‖_{L¹}` of the cost.
pub(crate) fn control_cost(z: &ControlField, cfg: &ProblemConfig, base: &BaseMesh) -> Result<f64> {
    let l2 = z.inner(z, base)?;
    Ok(0.5 * cfg.sigma * l2 + cfg.nu * z.l1_norm(base)?)
}

/// Cost functional `J(u, z)`.
///
/// The tracking term is integrated with a 3-point Gauss rule per cell and
/// direction, exact for the P1 part and of order 6 for `u_d`.
pub fn cost_j(u: &TraceField, z: &ControlField, cfg: &ProblemConfig, base: &BaseMesh) -> Result<f64> {
    u.check_mesh(base)?;
    z.check_mesh(base)?;
    if base.dim() == 2 {
        if let DesiredState::Spectral(_) = cfg.desired_state {
            return Err(Error::InvalidParameter(
                "spectral desired state is only available for n = 1".into(),
            ));
        }
    }
    let tracking = base.integrate_cellwise(|cell, x, shape| {
        let uh: f64 = cell.nodes.iter().zip(shape).map(|(&n, &w)| u.values[n] * w).sum();
        let d = uh - cfg.desired_state.eval(x);
        d * d
    });
    Ok(0.5 * tracking + control_cost(z, cfg, base)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_base;

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_of_s(0.5).unwrap(), 0.0);
        assert_eq!(alpha_of_s(0.25).unwrap(), 0.5);
        assert_eq!(alpha_of_s(0.75).unwrap(), -0.5);
        assert!(matches!(alpha_of_s(1.0), Err(Error::InvalidParameter(_))));
        assert!(alpha_of_s(0.0).is_err());
        assert!(ds_of_s(-0.1).is_err());
    }

    #[test]
    fn ds_at_half_is_one() {
        assert!((ds_of_s(0.5).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn projection_and_threshold_examples() {
        assert_eq!(proj_interval(-1.0, 1.0, 0.3).unwrap(), 0.3);
        assert_eq!(proj_interval(-1.0, 1.0, 5.0).unwrap(), 1.0);
        assert_eq!(proj_interval(-2.0, 3.0, -7.0).unwrap(), -2.0);
        assert!(proj_interval(1.0, -1.0, 0.0).is_err());

        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(0.0, 0.0), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
    }

    #[test]
    fn subgradient_examples() {
        assert!((subgradient_pointwise(0.0, 0.4, 1.0) + 0.4).abs() < 1e-15);
        assert_eq!(subgradient_pointwise(3.0, -3.0, 1.0), 1.0);
        assert_eq!(subgradient_pointwise(-3.0, 2.0, 1.0), -1.0);
    }

    #[test]
    fn validation_rejects_standing_assumptions() {
        let mut cfg = ProblemConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.a_lo = 0.5;
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
        cfg.a_lo = -1.0;
        cfg.s = 1.5;
        assert!(cfg.validate().is_err());
        cfg.s = 0.5;
        cfg.nu = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn derived_constants() {
        let cfg = ProblemConfig {
            s: 0.75,
            c_coeff: 1.0,
            ..Default::default()
        };
        let d = cfg.derived().unwrap();
        assert_eq!(d.alpha, -0.5);
        assert!((d.gamma_grade - 2.0).abs() < 1e-15);
        assert!((d.lambda_1 - (PI * PI + 1.0)).abs() < 1e-13);
        assert!(DerivedConstants::new(&cfg, 3).is_err());
    }

    fn target_one() -> DesiredState {
        DesiredState::Callable(Arc::new(|_x: &[f64]| 1.0))
    }

    #[test]
    fn cost_examples() {
        let base = build_base(1, 1.0, 4).unwrap();
        // u − u_d ≡ 1 with u ≡ 0 and u_d ≡ −1 would also do; use u_d ≡ 1, u ≡ 1.
        let ones = TraceField::from_values(&base, vec![1.0; base.num_nodes()]).unwrap();
        let zeros = TraceField::from_values(&base, vec![0.0; base.num_nodes()]).unwrap();
        let cfg = ProblemConfig {
            sigma: 2.0,
            nu: 3.0,
            desired_state: target_one(),
            ..Default::default()
        };
        let j0 = cost_j(&ones, &ControlField::zeros(&base), &cfg, &base).unwrap();
        assert!(j0.abs() < 1e-15);
        let j1 = cost_j(&ones, &ControlField::constant(&base, 1.0), &cfg, &base).unwrap();
        assert!((j1 - 4.0).abs() < 1e-14);

        let cfg = ProblemConfig {
            sigma: 1.0,
            nu: 1.0,
            desired_state: target_one(),
            ..Default::default()
        };
        // u − u_d ≡ −1: ½ + ½·¼ + ½ = 1.125
        let j2 = cost_j(&zeros, &ControlField::constant(&base, -0.5), &cfg, &base).unwrap();
        assert!((j2 - 1.125).abs() < 1e-14);
    }

    #[test]
    fn cost_rejects_foreign_mesh() {
        let b4 = build_base(1, 1.0, 4).unwrap();
        let b5 = build_base(1, 1.0, 5).unwrap();
        let u = TraceField::from_values(&b4, vec![0.0; 5]).unwrap();
        let z = ControlField::zeros(&b5);
        let err = cost_j(&u, &z, &ProblemConfig::default(), &b4).unwrap_err();
        assert!(matches!(err, Error::MeshMismatch(_)));
    }
}
