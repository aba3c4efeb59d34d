use serde::{Deserialize, Serialize};

use super::trig::TrigPoly;
use super::ModelError;

/// Relative tolerance for inverting the coupling and the terminal cost.
pub const INVERSE_TOL: f64 = 1e-13;
pub const INVERSE_MAX_ITERS: usize = 200;
const BRACKET_LO: f64 = 1e-12;
const BRACKET_HI: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingFamily {
    /// `a m^k + b log m`, `a, k, b > 0`.
    PowerLog,
    /// `a m^k`.
    Power,
    /// `a m`.
    Linear,
    /// `b log m`.
    Log,
}

/// Local coupling `f(x,m) = a m^k + b log m + F(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub family: CouplingFamily,
    #[serde(default)]
    pub a: f64,
    #[serde(default = "one")]
    pub exponent: f64,
    #[serde(default)]
    pub log_coef: f64,
    #[serde(default)]
    pub offset: TrigPoly,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerTerm {
    pub coef: f64,
    pub exponent: f64,
}

/// Terminal cost `g(x,m) = sum_i c_i m^k_i + e log m + G(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSpec {
    #[serde(default)]
    pub terms: Vec<PowerTerm>,
    #[serde(default)]
    pub log_coef: f64,
    #[serde(default)]
    pub offset: TrigPoly,
}

/// `sum_i c_i m^k_i + e log m` with positive coefficients; strictly increasing
/// and convex as a function of `log m`.
#[derive(Clone, Copy, Debug)]
struct IncreasingSum<'a> {
    terms: &'a [PowerTerm],
    log_coef: f64,
}

impl IncreasingSum<'_> {
    fn value(&self, m: f64) -> f64 {
        let mut v = self.terms.iter().map(|t| t.coef * m.powf(t.exponent)).sum::<f64>();
        if self.log_coef != 0.0 {
            v += self.log_coef * m.ln();
        }
        v
    }

    fn deriv(&self, m: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * t.exponent * m.powf(t.exponent - 1.0))
            .sum::<f64>()
            + self.log_coef / m
    }

    fn second_deriv(&self, m: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * t.exponent * (t.exponent - 1.0) * m.powf(t.exponent - 2.0))
            .sum::<f64>()
            - self.log_coef / (m * m)
    }

    /// `(phi(r), phi'(r))` for `phi(r) = value(e^r)`.
    fn in_log(&self, r: f64) -> (f64, f64) {
        let mut v = self.log_coef * r;
        let mut dv = self.log_coef;
        for t in self.terms {
            let e = t.coef * (t.exponent * r).exp();
            v += e;
            dv += t.exponent * e;
        }
        (v, dv)
    }

    /// Limit of `value(m)` as `m -> 0+`.
    fn lower_limit(&self) -> f64 {
        if self.log_coef > 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }

    /// Safeguarded Newton/bisection in `r = log m`.
    fn invert(&self, target: f64) -> Result<f64, ModelError> {
        if !target.is_finite() {
            return Err(ModelError::Domain {
                w: target,
                lower: self.lower_limit(),
            });
        }
        if target <= self.lower_limit() {
            return Err(ModelError::Domain {
                w: target,
                lower: self.lower_limit(),
            });
        }
        let tol = INVERSE_TOL * (1.0 + target.abs());
        let mut lo = BRACKET_LO.ln();
        let mut hi = BRACKET_HI.ln();
        let mut widen = 10f64.ln();
        let mut expansions = 0;
        while self.in_log(lo).0 > target {
            lo -= widen;
            widen *= 2.0;
            expansions += 1;
            if expansions > INVERSE_MAX_ITERS || !lo.is_finite() {
                return Err(ModelError::NonConvergence {
                    target,
                    iterations: expansions,
                });
            }
        }
        widen = 10f64.ln();
        while self.in_log(hi).0 < target {
            hi += widen;
            widen *= 2.0;
            expansions += 1;
            if expansions > INVERSE_MAX_ITERS || !hi.is_finite() {
                return Err(ModelError::NonConvergence {
                    target,
                    iterations: expansions,
                });
            }
        }
        // Starting points to the right of the root make Newton monotone.
        let mut r = hi;
        if self.log_coef > 0.0 {
            r = r.min(target / self.log_coef);
        }
        for t in self.terms {
            if target > 0.0 {
                let ra = (target / t.coef).ln() / t.exponent;
                if ra >= 0.0 {
                    r = r.min(ra);
                }
            }
        }
        if !(r > lo && r <= hi) {
            r = 0.5 * (lo + hi);
        }
        for _ in 0..INVERSE_MAX_ITERS {
            let (v, dv) = self.in_log(r);
            let res = v - target;
            if res.abs() <= tol {
                return Ok(r.exp());
            }
            if res > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            let newton = r - res / dv;
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if next == r || hi - lo <= 4.0 * f64::EPSILON * (1.0 + r.abs()) {
                // Bracket collapsed to neighbouring floats.
                return Ok(r.exp());
            }
            r = next;
        }
        Err(ModelError::NonConvergence {
            target,
            iterations: INVERSE_MAX_ITERS,
        })
    }
}

impl CouplingSpec {
    pub fn log(b: f64) -> Self {
        Self {
            family: CouplingFamily::Log,
            a: 0.0,
            exponent: 1.0,
            log_coef: b,
            offset: TrigPoly::zero(),
        }
    }

    pub fn linear(a: f64) -> Self {
        Self {
            family: CouplingFamily::Linear,
            a,
            exponent: 1.0,
            log_coef: 0.0,
            offset: TrigPoly::zero(),
        }
    }

    pub fn power(a: f64, exponent: f64) -> Self {
        Self {
            family: CouplingFamily::Power,
            a,
            exponent,
            log_coef: 0.0,
            offset: TrigPoly::zero(),
        }
    }

    pub fn power_log(a: f64, exponent: f64, b: f64) -> Self {
        Self {
            family: CouplingFamily::PowerLog,
            a,
            exponent,
            log_coef: b,
            offset: TrigPoly::zero(),
        }
    }

    pub fn with_offset(mut self, offset: TrigPoly) -> Self {
        self.offset = offset;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<(), ModelError> {
        let bad = |reason: &str| Err(ModelError::invalid("coupling", reason));
        if !(self.exponent > 0.0) || !self.exponent.is_finite() {
            return bad("exponent must be positive");
        }
        if self.a < 0.0 || self.log_coef < 0.0 {
            return bad("coefficients must be non-negative");
        }
        match self.family {
            CouplingFamily::PowerLog if !(self.a > 0.0 && self.log_coef > 0.0) => {
                return bad("power-log family needs a > 0 and log_coef > 0")
            }
            CouplingFamily::Power if !(self.a > 0.0 && self.log_coef == 0.0) => {
                return bad("power family needs a > 0 and log_coef = 0")
            }
            CouplingFamily::Linear
                if !(self.a > 0.0 && self.log_coef == 0.0 && self.exponent == 1.0) =>
            {
                return bad("linear family needs a > 0, exponent = 1 and log_coef = 0")
            }
            CouplingFamily::Log if !(self.a == 0.0 && self.log_coef > 0.0) => {
                return bad("log family needs a = 0 and log_coef > 0")
            }
            _ => {}
        }
        if !self.offset.check_dimension(dim) {
            return Err(ModelError::invalid(
                "coupling.offset",
                "wave vector length does not match the dimension",
            ));
        }
        Ok(())
    }

    fn power_terms(&self) -> Vec<PowerTerm> {
        if self.a > 0.0 {
            vec![PowerTerm {
                coef: self.a,
                exponent: self.exponent,
            }]
        } else {
            Vec::new()
        }
    }

    /// Strict ellipticity holds exactly when `f(., 0) = -infinity`.
    pub fn is_strict(&self) -> bool {
        self.log_coef > 0.0
    }

    /// The coupling `f + eps log m`.
    pub fn regularized(&self, eps: f64) -> Self {
        if eps == 0.0 {
            return self.clone();
        }
        let mut out = self.clone();
        out.log_coef += eps;
        out.family = if out.a > 0.0 {
            CouplingFamily::PowerLog
        } else {
            CouplingFamily::Log
        };
        out
    }

    pub fn f0(&self, m: f64) -> f64 {
        let mut v = 0.0;
        if self.a > 0.0 {
            v += self.a * m.powf(self.exponent);
        }
        if self.log_coef > 0.0 {
            v += self.log_coef * m.ln();
        }
        v
    }

    pub fn f0_m(&self, m: f64) -> f64 {
        let mut v = 0.0;
        if self.a > 0.0 {
            v += self.a * self.exponent * m.powf(self.exponent - 1.0);
        }
        if self.log_coef > 0.0 {
            v += self.log_coef / m;
        }
        v
    }

    pub fn f0_mm(&self, m: f64) -> f64 {
        let terms = self.power_terms();
        IncreasingSum {
            terms: &terms,
            log_coef: self.log_coef,
        }
        .second_deriv(m)
    }

    pub fn value(&self, x: &[f64], m: f64) -> f64 {
        self.f0(m) + self.offset.value(x)
    }

    pub fn grad_x(&self, x: &[f64]) -> Vec<f64> {
        self.offset.gradient(x)
    }

    /// `f(x, 0)`, `-infinity` under strict ellipticity.
    pub fn lower_limit(&self, x: &[f64]) -> f64 {
        if self.is_strict() {
            f64::NEG_INFINITY
        } else {
            self.offset.value(x)
        }
    }

    /// `chi = m f_m` at a given density.
    pub fn chi_at_density(&self, m: f64) -> f64 {
        let mut c = self.log_coef;
        if self.a > 0.0 {
            c += self.a * self.exponent * m.powf(self.exponent);
        }
        c
    }

    /// `d chi / dw` at a given density, `w = f(x, m)`.
    pub fn chi_w_at_density(&self, m: f64) -> f64 {
        if self.a > 0.0 {
            let p = self.a * self.exponent * m.powf(self.exponent);
            self.exponent * p / (p + self.log_coef)
        } else {
            0.0
        }
    }

    /// `f^{-1}(x, w)`.
    pub fn inverse(&self, x: &[f64], w: f64) -> Result<f64, ModelError> {
        let y = w - self.offset.value(x);
        if !y.is_finite() {
            return Err(ModelError::Domain {
                w,
                lower: self.lower_limit(x),
            });
        }
        match self.family {
            CouplingFamily::Log => Ok((y / self.log_coef).exp()),
            CouplingFamily::Linear | CouplingFamily::Power => {
                if y <= 0.0 {
                    return Err(ModelError::Domain {
                        w,
                        lower: self.lower_limit(x),
                    });
                }
                if self.exponent == 1.0 {
                    Ok(y / self.a)
                } else {
                    Ok((y / self.a).powf(1.0 / self.exponent))
                }
            }
            CouplingFamily::PowerLog => {
                let terms = self.power_terms();
                IncreasingSum {
                    terms: &terms,
                    log_coef: self.log_coef,
                }
                .invert(y)
                .map_err(|e| e.shift_domain(w - y))
            }
        }
    }
}

impl TerminalSpec {
    pub fn linear() -> Self {
        Self {
            terms: vec![PowerTerm {
                coef: 1.0,
                exponent: 1.0,
            }],
            log_coef: 0.0,
            offset: TrigPoly::zero(),
        }
    }

    pub fn power_log(c: f64, kappa: f64, e: f64) -> Self {
        Self {
            terms: vec![PowerTerm {
                coef: c,
                exponent: kappa,
            }],
            log_coef: e,
            offset: TrigPoly::zero(),
        }
    }

    pub fn with_offset(mut self, offset: TrigPoly) -> Self {
        self.offset = offset;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<(), ModelError> {
        if self.terms.is_empty() && self.log_coef <= 0.0 {
            return Err(ModelError::invalid("terminal", "g must be strictly increasing"));
        }
        if self
            .terms
            .iter()
            .any(|t| !(t.coef > 0.0) || !(t.exponent > 0.0))
        {
            return Err(ModelError::invalid(
                "terminal.terms",
                "coefficients and exponents must be positive",
            ));
        }
        if self.log_coef < 0.0 {
            return Err(ModelError::invalid("terminal.log_coef", "must be non-negative"));
        }
        if !self.offset.check_dimension(dim) {
            return Err(ModelError::invalid(
                "terminal.offset",
                "wave vector length does not match the dimension",
            ));
        }
        Ok(())
    }

    fn sum(&self) -> IncreasingSum<'_> {
        IncreasingSum {
            terms: &self.terms,
            log_coef: self.log_coef,
        }
    }

    pub fn g0(&self, m: f64) -> f64 {
        self.sum().value(m)
    }

    pub fn g0_m(&self, m: f64) -> f64 {
        self.sum().deriv(m)
    }

    pub fn value(&self, x: &[f64], m: f64) -> f64 {
        self.g0(m) + self.offset.value(x)
    }

    pub fn grad_x(&self, x: &[f64]) -> Vec<f64> {
        self.offset.gradient(x)
    }

    /// `g(x, 0)`.
    pub fn lower_limit(&self, x: &[f64]) -> f64 {
        self.sum().lower_limit() + self.offset.value(x)
    }

    /// `g^{-1}(x, y)`.
    pub fn inverse(&self, x: &[f64], y: f64) -> Result<f64, ModelError> {
        let shift = self.offset.value(x);
        self.sum()
            .invert(y - shift)
            .map_err(|e| e.shift_domain(shift))
    }

    /// Inverse of `g0` alone (no spatial offset).
    pub fn inverse0(&self, y: f64) -> Result<f64, ModelError> {
        self.sum().invert(y)
    }

    /// `theta g + (1 - theta) m`.
    pub fn blend_with_identity(&self, theta: f64) -> Self {
        let mut terms: Vec<PowerTerm> = self
            .terms
            .iter()
            .map(|t| PowerTerm {
                coef: theta * t.coef,
                exponent: t.exponent,
            })
            .collect();
        let rest = 1.0 - theta;
        if rest != 0.0 {
            match terms.iter_mut().find(|t| t.exponent == 1.0) {
                Some(t) => t.coef += rest,
                None => terms.push(PowerTerm {
                    coef: rest,
                    exponent: 1.0,
                }),
            }
        }
        terms.retain(|t| t.coef != 0.0);
        Self {
            terms,
            log_coef: theta * self.log_coef,
            offset: self.offset.scaled(theta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_inverses() {
        assert_eq!(CouplingSpec::log(1.0).inverse(&[0.3], 0.0).unwrap(), 1.0);
        assert_eq!(CouplingSpec::linear(1.0).inverse(&[0.3], 2.5).unwrap(), 2.5);
        assert_relative_eq!(
            CouplingSpec::power(1.0, 2.0).inverse(&[0.0], 4.0).unwrap(),
            2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn power_log_inverse_by_root_find() {
        let f = CouplingSpec::power_log(1.0, 1.0, 1.0);
        assert_relative_eq!(f.inverse(&[0.0], 1.0).unwrap(), 1.0, epsilon = 1e-13);
        let f2 = CouplingSpec::power_log(1.0, 2.0, 1.0);
        let m = f2.inverse(&[0.0], 4.5).unwrap();
        assert!((f2.f0(m) - 4.5).abs() <= 1e-12);
        // deep in the log-dominated regime
        let m = f2.inverse(&[0.0], -200.0).unwrap();
        assert!(m > 0.0 && (f2.f0(m) + 200.0).abs() <= 1e-13 * 201.0);
        let m = f2.inverse(&[0.0], 1e6).unwrap();
        assert!((f2.f0(m) - 1e6).abs() <= 1e-13 * (1.0 + 1e6));
    }

    #[test]
    fn degenerate_inverse_domain_error() {
        let f = CouplingSpec::linear(1.0).with_offset(TrigPoly::constant(0.5));
        assert!(matches!(
            f.inverse(&[0.0], 0.5),
            Err(ModelError::Domain { lower, .. }) if lower == 0.5
        ));
        assert!(matches!(
            CouplingSpec::power(2.0, 3.0).inverse(&[0.0], -1.0),
            Err(ModelError::Domain { .. })
        ));
    }

    #[test]
    fn regularization_is_strict() {
        let f = CouplingSpec::linear(1.0).regularized(0.25);
        assert!(f.is_strict());
        assert_eq!(f.family, CouplingFamily::PowerLog);
        assert_relative_eq!(f.chi_at_density(2.0), 2.25);
    }

    #[test]
    fn chi_w_closed_form_matches_difference_quotient() {
        for f in [
            CouplingSpec::power_log(0.7, 1.5, 0.3),
            CouplingSpec::power(2.0, 2.0),
            CouplingSpec::log(1.0),
        ] {
            let x = [0.0];
            for w in [0.5, 1.0, 3.0] {
                let chi = |w: f64| f.chi_at_density(f.inverse(&x, w).unwrap());
                let h = 1e-5;
                let fd = (chi(w + h) - chi(w - h)) / (2.0 * h);
                let an = f.chi_w_at_density(f.inverse(&x, w).unwrap());
                assert!((fd - an).abs() <= 1e-7 * (1.0 + an.abs()), "{f:?} {w}");
            }
        }
    }

    #[test]
    fn terminal_blend_endpoints() {
        let g = TerminalSpec::power_log(2.0, 0.5, 0.1).with_offset(TrigPoly::cosine(0.0, 0.1, vec![1]));
        let g0 = g.blend_with_identity(0.0);
        assert_eq!(g0.terms, vec![PowerTerm { coef: 1.0, exponent: 1.0 }]);
        assert_eq!(g0.log_coef, 0.0);
        assert!(g0.offset.is_constant());
        let g1 = g.blend_with_identity(1.0);
        assert_eq!(g1.terms, g.terms);
        assert_eq!(g1.log_coef, g.log_coef);
    }

    #[test]
    fn terminal_inverse_round_trip() {
        let g = TerminalSpec::power_log(2.0, 0.5, 0.1);
        let m = g.inverse(&[0.0], 3.0).unwrap();
        assert!((g.g0(m) - 3.0).abs() < 1e-12);
    }
}
