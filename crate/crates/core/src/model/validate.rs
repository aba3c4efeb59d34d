//! Sampled checks of the structural assumptions on the data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Ellipticity, ProblemSpec};

const P_RANGE: f64 = 10.0;
const W_RANGE: f64 = 10.0;
const LOG_M_RANGE: f64 = 6.0;

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionCheck {
    pub id: &'static str,
    pub passed: bool,
    /// Smallest slack observed; negative when the check fails.
    pub worst_margin: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

fn check(id: &'static str, margin: f64, detail: impl Into<String>) -> AssumptionCheck {
    AssumptionCheck {
        id,
        passed: margin >= 0.0,
        worst_margin: margin,
        detail: detail.into(),
    }
}

fn identically(id: &'static str, detail: &str) -> AssumptionCheck {
    AssumptionCheck {
        id,
        passed: true,
        worst_margin: 0.0,
        detail: detail.to_string(),
    }
}

/// Samples `(x, p, m, w)` and reports the worst margin of each assumption.
/// Sampling is deterministic for a given `seed`.
pub fn validate_assumptions(spec: &ProblemSpec, sample_count: usize, seed: u64) -> ValidationReport {
    let d = spec.dimension;
    let c0 = spec.hamiltonian.c0;
    let tau = spec.hamiltonian.tau;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sample_count.max(1);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    let ms: Vec<f64> = (0..n)
        .map(|_| (rng.random_range(-LOG_M_RANGE..LOG_M_RANGE) * std::f64::consts::LN_10).exp())
        .collect();
    let ws: Vec<f64> = (0..n).map(|_| rng.random_range(-W_RANGE..W_RANGE)).collect();
    let ps: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-P_RANGE..P_RANGE)).collect())
        .collect();

    let mut checks = Vec::new();

    // H1: spectrum of D_pp H inside [1/C0, C0].
    let eig = spec.hamiltonian.matrix().symmetric_eigenvalues();
    let lmin = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let lmax = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    checks.push(check(
        "H1",
        (lmin - 1.0 / c0).min(c0 - lmax),
        format!("eigenvalues in [{lmin:.6e}, {lmax:.6e}], C0 = {c0}"),
    ));

    // H2: D_pH.p - 2H + C0 >= 0.
    let mut worst = f64::INFINITY;
    for (x, p) in xs.iter().zip(&ps) {
        let dp = spec.hamiltonian.grad_p(p);
        let lhs: f64 = dp.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
        worst = worst.min(lhs - 2.0 * spec.hamiltonian.value(x, p) + c0);
    }
    let (vmin, _) = spec.hamiltonian.potential.extrema(d);
    worst = worst.min(2.0 * vmin + c0);
    checks.push(check("H2", worst, format!("2 min V + C0 = {:.6e}", 2.0 * vmin + c0)));

    checks.push(identically("H3", "third p-derivatives vanish for quadratic H"));
    checks.push(identically("HX", "quadratic part of H is independent of x"));

    // F: f_m > 0.
    let worst = ms
        .iter()
        .map(|&m| spec.coupling.f0_m(m))
        .fold(f64::INFINITY, f64::min);
    checks.push(check("F", worst, "min sampled f_m"));

    // F1: liminf m f_m > 0 as m -> infinity, analytic per family.
    let f1 = if spec.coupling.a > 0.0 {
        f64::INFINITY
    } else {
        spec.coupling.log_coef
    };
    let f1_margin = if f1 > 0.0 { f1.min(1.0) } else { -1.0 };
    checks.push(check("F1", f1_margin, format!("liminf m f_m = {f1}")));

    // F2: |chi_w| <= C0 at admissible sampled w.
    let mut worst = f64::INFINITY;
    for (x, &w) in xs.iter().zip(&ws) {
        if let Ok(m) = spec.coupling.inverse(x, w) {
            worst = worst.min(c0 - spec.coupling.chi_w_at_density(m).abs());
        }
    }
    checks.push(check("F2", worst, "C0 - max sampled |chi_w|"));

    checks.push(identically("FX1", "D_x f does not depend on m"));

    // FX2: |D_x f|, |D_xx f| <= C0 (1 + |f|^{tau/2} + |m f_m|^{(1+tau)/2}).
    let mut worst = f64::INFINITY;
    for (x, &m) in xs.iter().zip(&ms) {
        let g = spec.coupling.offset.gradient(x);
        let h = spec.coupling.offset.hessian(x);
        let gn = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        let hn = h.iter().map(|a| a * a).sum::<f64>().sqrt();
        let f = spec.coupling.value(x, m);
        let chi = spec.coupling.chi_at_density(m);
        let rhs = c0 * (1.0 + f.abs().powf(tau / 2.0) + chi.abs().powf((1.0 + tau) / 2.0));
        worst = worst.min(rhs - gn.max(hn));
    }
    checks.push(check("FX2", worst, "min sampled slack"));

    // G: g_m > 0.
    let worst = ms
        .iter()
        .map(|&m| spec.terminal.g0_m(m))
        .fold(f64::INFINITY, f64::min);
    checks.push(check("G", worst, "min sampled g_m"));

    // GX proxy: g0 is unbounded above; the infimum is attained at m = 0 for
    // every x only if g0(0) = -infinity or the offset is constant.
    let (gmin, gmax) = spec.terminal.offset.extrema(d);
    let gx = if spec.terminal.log_coef > 0.0 {
        0.0
    } else {
        -(gmax - gmin)
    };
    checks.push(check("GX", gx, format!("terminal offset range [{gmin:.6e}, {gmax:.6e}]")));

    // E: under DE, g(., 0) must be finite.
    let e = match spec.ellipticity() {
        Ellipticity::Strict => check("E", 0.0, "strictly elliptic"),
        Ellipticity::Degenerate => check(
            "E",
            if spec.terminal.log_coef == 0.0 { 0.0 } else { -spec.terminal.log_coef },
            "degenerate elliptic; g(., 0) must be finite",
        ),
    };
    checks.push(e);

    // M1: positivity and unit mass of m0.
    let (m0min, _) = spec.initial.density.extrema(d);
    let mass_err = (spec.initial.density.mean() - 1.0).abs();
    checks.push(check(
        "M1",
        m0min.min(1e-12 - mass_err),
        format!("min m0 = {m0min:.6e}, |mass - 1| = {mass_err:.3e}"),
    ));

    ValidationReport {
        samples: n,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::*;
    use super::*;

    #[test]
    fn canonical_case_passes() {
        let r = validate_assumptions(&log_spec(), 2000, 7);
        assert!(r.all_passed(), "{r:?}");
    }

    #[test]
    fn large_eigenvalue_fails_h1() {
        let mut spec = log_spec();
        spec.hamiltonian.quadratic = vec![vec![10.0 * spec.hamiltonian.c0]];
        let r = validate_assumptions(&spec, 100, 1);
        let h1 = r.get("H1").unwrap();
        assert!(!h1.passed);
        assert!(h1.worst_margin < 0.0);
    }

    #[test]
    fn chi_w_bound_with_difference_quotients() {
        let mut spec = log_spec();
        spec.coupling = CouplingSpec::power_log(1.0, 1.0, 1.0);
        spec.hamiltonian.c0 = 4.0;
        let r = validate_assumptions(&spec, 2000, 3);
        assert!(r.get("F2").unwrap().passed);
        let x = [0.0];
        let chi = |w: f64| spec.coupling.chi_at_density(spec.coupling.inverse(&x, w).unwrap());
        for i in 0..=40 {
            let w = -10.0 + 0.5 * i as f64;
            let fd = (chi(w + 1e-5) - chi(w - 1e-5)) / 2e-5;
            assert!(fd.abs() <= 4.0);
        }
    }

    #[test]
    fn degenerate_with_log_terminal_fails_e() {
        let mut spec = log_spec();
        spec.coupling = CouplingSpec::linear(1.0);
        spec.terminal = TerminalSpec::power_log(1.0, 1.0, 0.5);
        let r = validate_assumptions(&spec, 10, 1);
        assert!(!r.get("E").unwrap().passed);
    }
}
