//! Problem data: Hamiltonian, coupling, terminal cost and initial density,
//! with the derivatives and inverses used by the elliptic formulation.

mod coupling;
mod hamiltonian;
mod trig;
mod validate;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use coupling::{CouplingFamily, CouplingSpec, PowerTerm, TerminalSpec, INVERSE_MAX_ITERS, INVERSE_TOL};
pub use hamiltonian::HamiltonianSpec;
pub use trig::{TrigPoly, TrigTerm};
pub use validate::{validate_assumptions, AssumptionCheck, ValidationReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("w = {w} is outside the range of the coupling (must exceed {lower})")]
    Domain { w: f64, lower: f64 },
    #[error("inverse solve for target {target} failed after {iterations} iterations")]
    NonConvergence { target: f64, iterations: usize },
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ModelError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    fn shift_domain(self, shift: f64) -> Self {
        match self {
            Self::Domain { w, lower } => Self::Domain {
                w: w + shift,
                lower: lower + shift,
            },
            other => other,
        }
    }
}

/// Positive initial density, stored as a trigonometric polynomial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDensitySpec {
    pub density: TrigPoly,
}

impl InitialDensitySpec {
    pub fn uniform() -> Self {
        Self {
            density: TrigPoly::constant(1.0),
        }
    }

    /// Rescales the density to unit mass.
    pub fn normalized(density: TrigPoly) -> Self {
        let mass = density.mean();
        Self {
            density: density.scaled(1.0 / mass),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.density.value(x)
    }

    pub fn validate(&self, dim: usize) -> Result<(), ModelError> {
        if !self.density.check_dimension(dim) {
            return Err(ModelError::invalid(
                "initial.density",
                "wave vector length does not match the dimension",
            ));
        }
        let (lo, _) = self.density.extrema(dim);
        if !(lo > 0.0) {
            return Err(ModelError::invalid(
                "initial.density",
                format!("density must be positive (minimum {lo})"),
            ));
        }
        let mass = self.density.mean();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(ModelError::invalid(
                "initial.density",
                format!("density must have unit mass (found {mass})"),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ellipticity {
    /// `f(., 0) = -infinity`.
    Strict,
    /// `f(., 0)` finite.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub dimension: usize,
    pub horizon: f64,
    pub hamiltonian: HamiltonianSpec,
    pub coupling: CouplingSpec,
    pub terminal: TerminalSpec,
    pub initial: InitialDensitySpec,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(1..=2).contains(&self.dimension) {
            return Err(ModelError::invalid("dimension", "must be 1 or 2"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(ModelError::invalid("horizon", "must be positive"));
        }
        let d = self.dimension;
        self.hamiltonian.validate(d)?;
        self.coupling.validate(d)?;
        self.terminal.validate(d)?;
        self.initial.validate(d)?;
        if self.ellipticity() == Ellipticity::Degenerate && self.terminal.log_coef != 0.0 {
            return Err(ModelError::invalid(
                "terminal.log_coef",
                "must be zero for a degenerate coupling (g(., 0) has to be finite)",
            ));
        }
        Ok(())
    }

    pub fn ellipticity(&self) -> Ellipticity {
        if self.coupling.is_strict() {
            Ellipticity::Strict
        } else {
            Ellipticity::Degenerate
        }
    }

    /// True when `H`, `f` and `g` do not depend on `x` (only `m0` may).
    pub fn is_x_independent(&self) -> bool {
        self.hamiltonian.potential.is_constant()
            && self.coupling.offset.is_constant()
            && self.terminal.offset.is_constant()
    }

    /// The same problem with coupling `f + eps log m`.
    pub fn with_regularization(&self, eps: f64) -> Self {
        let mut out = self.clone();
        out.coupling = self.coupling.regularized(eps);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiValues {
    /// `m = f^{-1}(x, w)`.
    pub density: f64,
    /// `f_m` at that density.
    pub f_m: f64,
    pub chi: f64,
    pub chi_w: f64,
    /// `h = sqrt(chi)`.
    pub h: f64,
    pub h_w: f64,
}

pub fn invert_coupling(spec: &ProblemSpec, x: &[f64], w: f64) -> Result<f64, ModelError> {
    spec.coupling.inverse(x, w)
}

/// `chi(x, w) = m f_m(x, m)` at `m = f^{-1}(x, w)`, with `chi_w`, `h`, `h_w`.
pub fn eval_chi(spec: &ProblemSpec, x: &[f64], w: f64) -> Result<ChiValues, ModelError> {
    let m = invert_coupling(spec, x, w)?;
    Ok(chi_at_density(&spec.coupling, m))
}

pub(crate) fn chi_at_density(coupling: &CouplingSpec, m: f64) -> ChiValues {
    let chi = coupling.chi_at_density(m);
    let chi_w = coupling.chi_w_at_density(m);
    let h = chi.sqrt();
    let h_w = if h > 0.0 { chi_w / (2.0 * h) } else { 0.0 };
    ChiValues {
        density: m,
        f_m: coupling.f0_m(m),
        chi,
        chi_w,
        h,
        h_w,
    }
}

/// Lower and upper envelopes of `f` and `g` over the torus.
#[derive(Clone, Debug)]
pub struct Envelopes {
    coupling: CouplingSpec,
    terminal: TerminalSpec,
    pub f_offset_range: (f64, f64),
    pub g_offset_range: (f64, f64),
}

impl Envelopes {
    /// `min_x f(x, m)`.
    pub fn f0_env(&self, m: f64) -> f64 {
        self.coupling.f0(m) + self.f_offset_range.0
    }

    /// `max_x f(x, m)`.
    pub fn f1_env(&self, m: f64) -> f64 {
        self.coupling.f0(m) + self.f_offset_range.1
    }

    pub fn g0_env(&self, m: f64) -> f64 {
        self.terminal.g0(m) + self.g_offset_range.0
    }

    pub fn g1_env(&self, m: f64) -> f64 {
        self.terminal.g0(m) + self.g_offset_range.1
    }
}

pub fn envelopes(spec: &ProblemSpec) -> Envelopes {
    Envelopes {
        coupling: spec.coupling.clone(),
        terminal: spec.terminal.clone(),
        f_offset_range: spec.coupling.offset.extrema(spec.dimension),
        g_offset_range: spec.terminal.offset.extrema(spec.dimension),
    }
}

/// Every pointwise model quantity at a state `(x, p, s)`.
#[derive(Clone, Debug)]
pub struct DerivativeBundle {
    pub h: f64,
    pub dp_h: DVector<f64>,
    pub dpp_h: DMatrix<f64>,
    pub dx_h: DVector<f64>,
    pub dxp_h: DMatrix<f64>,
    /// `w = -s + H(x, p)`.
    pub w: f64,
    pub chi: ChiValues,
    pub dx_f: DVector<f64>,
}

pub fn eval_derivative_bundle(
    spec: &ProblemSpec,
    x: &[f64],
    p: &[f64],
    s: f64,
) -> Result<DerivativeBundle, ModelError> {
    let ham = &spec.hamiltonian;
    let h = ham.value(x, p);
    let w = -s + h;
    let chi = eval_chi(spec, x, w)?;
    Ok(DerivativeBundle {
        h,
        dp_h: ham.grad_p(p),
        dpp_h: ham.hess_pp(),
        dx_h: ham.grad_x(x),
        dxp_h: ham.hess_xp(),
        w,
        chi,
        dx_f: DVector::from_vec(spec.coupling.grad_x(x)),
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn spec_1d(coupling: CouplingSpec, terminal: TerminalSpec, potential: TrigPoly, m0: TrigPoly) -> ProblemSpec {
        ProblemSpec {
            dimension: 1,
            horizon: 1.0,
            hamiltonian: HamiltonianSpec::isotropic(1, potential),
            coupling,
            terminal,
            initial: InitialDensitySpec { density: m0 },
        }
    }

    pub fn log_spec() -> ProblemSpec {
        spec_1d(
            CouplingSpec::log(1.0),
            TerminalSpec::linear(),
            TrigPoly::zero(),
            TrigPoly::constant(1.0),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn chi_closed_forms() {
        let mut spec = log_spec();
        let c = eval_chi(&spec, &[0.2], 0.7).unwrap();
        assert_relative_eq!(c.chi, 1.0, epsilon = 1e-15);
        assert_eq!(c.chi_w, 0.0);
        spec.coupling = CouplingSpec::linear(1.0);
        assert_relative_eq!(eval_chi(&spec, &[0.2], 2.5).unwrap().chi, 2.5);
        spec.coupling = CouplingSpec::power(1.0, 2.0);
        assert_relative_eq!(eval_chi(&spec, &[0.2], 4.0).unwrap().chi, 8.0, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_domain_error() {
        let mut spec = log_spec();
        spec.coupling = CouplingSpec::linear(1.0);
        assert!(matches!(eval_chi(&spec, &[0.0], -0.1), Err(ModelError::Domain { .. })));
    }

    #[test]
    fn envelopes_of_offsets() {
        let mut spec = log_spec();
        spec.coupling = CouplingSpec::linear(1.0).with_offset(TrigPoly::cosine(0.0, 0.3, vec![1]));
        spec.terminal = TerminalSpec::linear().with_offset(TrigPoly::sine(0.0, 0.1, vec![1]));
        let env = envelopes(&spec);
        assert_relative_eq!(env.f1_env(2.0), 2.3, epsilon = 1e-13);
        assert_relative_eq!(env.f0_env(2.0), 1.7, epsilon = 1e-13);
        assert_relative_eq!(env.g0_env(2.0), 1.9, epsilon = 1e-13);
    }

    #[test]
    fn bundle_for_canonical_data() {
        let spec = log_spec();
        let b = eval_derivative_bundle(&spec, &[0.3], &[0.0], 0.0).unwrap();
        assert_relative_eq!(b.chi.chi, 1.0);
        assert_relative_eq!(b.chi.h, 1.0);
        assert_eq!(b.chi.h_w, 0.0);
        let b = eval_derivative_bundle(&spec, &[0.3], &[3.0], 1.0).unwrap();
        assert_eq!(b.dp_h[0], 3.0);
        assert_eq!(b.dpp_h[(0, 0)], 1.0);
    }

    #[test]
    fn potential_gradient_sign() {
        let spec = spec_1d(
            CouplingSpec::log(1.0),
            TerminalSpec::linear(),
            TrigPoly::cosine(0.0, 1.0, vec![1]),
            TrigPoly::constant(1.0),
        );
        let b = eval_derivative_bundle(&spec, &[0.25], &[0.0], 0.0).unwrap();
        let v = |x: f64| (2.0 * std::f64::consts::PI * x).cos();
        let h = 1e-6;
        let fd = -(v(0.25 + h) - v(0.25 - h)) / (2.0 * h);
        assert!((b.dx_h[0] - fd).abs() < 1e-8);
        assert_relative_eq!(b.dx_h[0], 2.0 * std::f64::consts::PI, epsilon = 1e-12);
    }

    #[test]
    fn spec_validation() {
        let mut spec = log_spec();
        assert!(spec.validate().is_ok());
        spec.initial.density = TrigPoly::cosine(1.0, 1.5, vec![1]);
        assert!(spec.validate().is_err());
        let mut spec = log_spec();
        spec.coupling = CouplingSpec::linear(1.0);
        spec.terminal = TerminalSpec::power_log(1.0, 1.0, 0.5);
        assert!(spec.validate().is_err());
        let mut spec = log_spec();
        spec.dimension = 3;
        assert!(spec.validate().is_err());
    }
}
