//! Built-in property suite behind `mfg-elliptic selftest`.
//!
//! Every check is seeded, so the printed summary is identical run to run.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::elliptic::{assemble_a, assemble_b, trace_inequality_sides};
use crate::grid::{GridSpec, SpaceTimeField};
use crate::model::{
    eval_chi, CouplingSpec, HamiltonianSpec, InitialDensitySpec, ProblemSpec, TerminalSpec, TrigPoly, TrigTerm,
};
use crate::oracle::{coupled_solve, dense_elliptic_residual};
use crate::solver::{
    assemble_residual_and_jacobian, build_theta_problem, continuation_solve, newton_solve, residual, NewtonSettings,
    SolverSettings,
};

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestSummary {
    pub rows: Vec<CheckRow>,
}

impl SelftestSummary {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        let mut s = format!("{:<w$}  status  detail\n", "check");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<w$}  {:<6}  {}\n",
                r.name,
                if r.passed { "pass" } else { "FAIL" },
                r.detail
            ));
        }
        s
    }
}

fn row(name: &str, passed: bool, detail: String) -> CheckRow {
    CheckRow {
        name: name.into(),
        passed,
        detail,
    }
}

/// Strictly elliptic benchmark: `H = p^2/2 - 0.1 cos 2 pi x`, `f = m + log m`,
/// `g = m`, `m0 = 1 + 0.3 cos 2 pi x`, `T = 1`.
pub fn se_benchmark() -> ProblemSpec {
    ProblemSpec {
        dimension: 1,
        horizon: 1.0,
        hamiltonian: HamiltonianSpec::isotropic(1, TrigPoly::cosine(0.0, 0.1, vec![1])),
        coupling: CouplingSpec::power_log(1.0, 1.0, 1.0),
        terminal: TerminalSpec::linear(),
        initial: InitialDensitySpec {
            density: TrigPoly::cosine(1.0, 0.3, vec![1]),
        },
    }
}

/// Degenerate benchmark: `H = p^2/2`, `f = m`, `g = m`, `m0 = 1 + 0.3 cos 2 pi x`.
pub fn de_benchmark() -> ProblemSpec {
    ProblemSpec {
        dimension: 1,
        horizon: 1.0,
        hamiltonian: HamiltonianSpec::isotropic(1, TrigPoly::zero()),
        coupling: CouplingSpec::linear(1.0),
        terminal: TerminalSpec::linear(),
        initial: InitialDensitySpec {
            density: TrigPoly::cosine(1.0, 0.3, vec![1]),
        },
    }
}

/// Problems used for pointwise sampling, in `d = 1` and `d = 2`.
pub fn sample_specs() -> Vec<ProblemSpec> {
    let mut aniso = HamiltonianSpec::isotropic(
        2,
        TrigPoly {
            constant: 0.0,
            terms: vec![
                TrigTerm {
                    wave: vec![1, 0],
                    cos: 0.2,
                    sin: 0.0,
                },
                TrigTerm {
                    wave: vec![1, 1],
                    cos: 0.0,
                    sin: 0.1,
                },
            ],
        },
    );
    aniso.quadratic = vec![vec![1.5, 0.3], vec![0.3, 0.8]];
    vec![
        se_benchmark(),
        de_benchmark(),
        ProblemSpec {
            coupling: CouplingSpec::power(2.0, 2.0).with_offset(TrigPoly::sine(0.0, 0.3, vec![1])),
            ..se_benchmark()
        },
        ProblemSpec {
            dimension: 2,
            horizon: 1.0,
            hamiltonian: aniso,
            coupling: CouplingSpec::power_log(0.5, 1.5, 0.7).with_offset(TrigPoly::cosine(0.0, 0.2, vec![0, 1])),
            terminal: TerminalSpec::power_log(1.0, 2.0, 0.5),
            initial: InitialDensitySpec::uniform(),
        },
    ]
}

/// A random admissible pointwise state `(x, p, s)` and the density it encodes.
pub fn random_state(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let d = spec.dimension;
    let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let p: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let m = 10f64.powf(rng.random_range(-1.5..1.0));
    let w = spec.coupling.value(&x, m);
    let s = spec.hamiltonian.value(&x, &p) - w;
    (x, p, s, m)
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-5.0..5.0);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

pub fn check_inverse_roundtrip(samples: usize) -> CheckRow {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let couplings = [
        CouplingSpec::log(1.0),
        CouplingSpec::linear(2.0),
        CouplingSpec::power(1.0, 2.0),
        CouplingSpec::power_log(1.0, 2.0, 1.0),
        CouplingSpec::power_log(0.5, 0.5, 2.0).with_offset(TrigPoly::cosine(0.0, 0.2, vec![1])),
    ];
    let terminals = [TerminalSpec::linear(), TerminalSpec::power_log(1.0, 2.0, 0.3)];
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..samples {
        let x = [rng.random::<f64>()];
        let m = 10f64.powf(rng.random_range(-3.0..3.0));
        for c in &couplings {
            let w = c.value(&x, m);
            match c.inverse(&x, w) {
                Ok(back) => worst = worst.max((c.value(&x, back) - w).abs() / (1.0 + w.abs())),
                Err(_) => failures += 1,
            }
        }
        for g in &terminals {
            let y = g.value(&x, m);
            match g.inverse(&x, y) {
                Ok(back) => worst = worst.max((g.value(&x, back) - y).abs() / (1.0 + y.abs())),
                Err(_) => failures += 1,
            }
        }
    }
    row(
        "inverse round-trip",
        failures == 0 && worst <= 1e-12,
        format!("{samples} samples, worst relative residual {worst:.3e}, failures {failures}"),
    )
}

pub fn check_det_identity(samples: usize) -> CheckRow {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let specs = sample_specs();
    let mut worst = 0.0f64;
    for k in 0..samples {
        let spec = &specs[k % specs.len()];
        let (x, p, s, _) = random_state(spec, &mut rng);
        let a = assemble_a(spec, &x, &p, s).expect("admissible state");
        let w = spec.hamiltonian.value(&x, &p) - s;
        let chi = eval_chi(spec, &x, w).expect("admissible state").chi;
        let want = chi.powi(spec.dimension as i32) * spec.hamiltonian.matrix().determinant();
        worst = worst.max((a.determinant() - want).abs() / want.abs());
    }
    row(
        "det(A) = chi^d det D_pp H",
        worst <= 1e-12,
        format!("{samples} states, worst relative error {worst:.3e}"),
    )
}

pub fn check_trace_inequality(samples: usize) -> CheckRow {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let specs = sample_specs();
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for k in 0..samples {
        let spec = &specs[k % specs.len()];
        let (x, p, s, _) = random_state(spec, &mut rng);
        let h = random_symmetric(spec.dimension + 1, &mut rng);
        let (lhs, rhs) = trace_inequality_sides(spec, &x, &p, s, &h).expect("admissible state");
        let scale = 1.0f64.max(lhs.abs()).max(rhs.abs());
        let margin = (lhs - rhs) / scale;
        worst = worst.min(margin);
        if margin < -1e-10 {
            violations += 1;
        }
    }
    row(
        "trace inequality",
        violations == 0,
        format!("{samples} samples, violations {violations}, smallest relative margin {worst:.3e}"),
    )
}

/// Smooth test field `1 + c (T - t)` plus random low modes.
pub fn random_smooth_field(grid: GridSpec, rng: &mut ChaCha8Rng, amplitude: f64) -> SpaceTimeField {
    let c = rng.random_range(0.5..1.5);
    let coef: Vec<f64> = (0..4).map(|_| rng.random_range(-amplitude..amplitude)).collect();
    let t_end = grid.horizon;
    SpaceTimeField::from_fn(grid, |x, t| {
        let ph = 2.0 * PI * x.iter().sum::<f64>();
        1.0 + c * (t_end - t)
            + coef[0] * ph.sin()
            + coef[1] * ph.cos() * t
            + coef[2] * (2.0 * ph).sin() * (t_end - t) * t
            + coef[3] * (PI * t).cos()
    })
}

/// Largest column-wise relative deviation between the analytic Jacobian and
/// central differences of the residual.
pub fn jacobian_fd_error(spec: &ProblemSpec, eps: f64, u: &SpaceTimeField) -> f64 {
    let (_, jac) = assemble_residual_and_jacobian(spec, eps, u).expect("admissible field");
    let n = u.values.len();
    let mut worst = 0.0f64;
    for k in 0..n {
        let h = 1e-6 * (1.0 + u.values[k].abs());
        let mut up = u.clone();
        let mut um = u.clone();
        up.values[k] += h;
        um.values[k] -= h;
        let fp = residual(spec, eps, &up).expect("admissible field");
        let fm = residual(spec, eps, &um).expect("admissible field");
        let mut diff = 0.0f64;
        let mut size = 0.0f64;
        for r in 0..n {
            let fd = (fp[r] - fm[r]) / (2.0 * h);
            diff = diff.max((fd - jac.get(r, k)).abs());
            size = size.max(fd.abs());
        }
        worst = worst.max(diff / size.max(1.0));
    }
    worst
}

pub fn check_jacobian(states: usize) -> CheckRow {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let grid = GridSpec::new(1, 16, 8, 1.0).expect("valid grid");
    let specs = [se_benchmark(), de_benchmark()];
    let mut worst = 0.0f64;
    for k in 0..states {
        let spec = &specs[k % specs.len()];
        let eps = if k % specs.len() == 1 { 0.25 } else { 0.0 };
        let u = random_smooth_field(grid, &mut rng, 0.05);
        worst = worst.max(jacobian_fd_error(spec, eps, &u));
    }
    row(
        "Jacobian vs finite differences",
        worst <= 1e-6,
        format!("{states} states on 16x8, worst column relative error {worst:.3e}"),
    )
}

pub fn check_trivial_solution() -> CheckRow {
    let grid = GridSpec::new(1, 32, 16, 1.0).expect("valid grid");
    let spec = build_theta_problem(&se_benchmark(), 0.0).expect("theta in range");
    let start = SpaceTimeField::from_fn(grid, |x, _| 1.0 + 0.1 * (2.0 * PI * x[0]).sin());
    let out = newton_solve(&spec, 0.0, &start, &NewtonSettings::default());
    let err = out.u.values.iter().fold(0.0f64, |a, v| a.max((v - 1.0).abs()));
    row(
        "theta = 0 exact solution",
        out.converged() && err <= 1e-10,
        format!("{} Newton iterations, sup |u - 1| = {err:.3e}", out.iterations),
    )
}

/// Compares `eval` with the oracle's dense evaluation of the interior
/// operator on random smooth fields.
pub fn check_residual_agreement<F>(eval: F) -> CheckRow
where
    F: Fn(&ProblemSpec, &SpaceTimeField) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let grid = GridSpec::new(1, 16, 8, 1.0).expect("valid grid");
    let specs = [se_benchmark(), sample_specs()[2].clone()];
    let mut worst = 0.0f64;
    for k in 0..6 {
        let spec = &specs[k % specs.len()];
        let u = random_smooth_field(grid, &mut rng, 0.1);
        let dense = dense_elliptic_residual(spec, 0.0, &u).expect("admissible field");
        let rows = eval(spec, &u);
        for node in 0..grid.node_count() {
            let (_, j) = grid.split(node);
            if j == 0 || j == grid.nt {
                continue;
            }
            worst = worst.max((dense[node] - rows[node]).abs() / (1.0 + dense[node].abs()));
        }
    }
    row(
        "residual vs oracle dense evaluation",
        worst <= 1e-12,
        format!("6 fields on 16x8, worst relative difference {worst:.3e}"),
    )
}

/// Solves the strictly elliptic benchmark with both solvers on 8x4 and 16x8:
/// the sup difference must shrink and stay below 0.15 on the finer grid.
pub fn check_oracle_agreement() -> CheckRow {
    let spec = se_benchmark();
    let mut diffs = Vec::new();
    for (nx, nt) in [(8, 4), (16, 8)] {
        let grid = GridSpec::new(1, nx, nt, 1.0).expect("valid grid");
        let ell = continuation_solve(&spec, &grid, &SolverSettings::default(), None);
        let ora = coupled_solve(&spec, 0.0, &grid, None, &NewtonSettings::default());
        match (ell.converged(), ora) {
            (true, Ok(o)) => diffs.push(ell.u.max_abs_diff(&o.u)),
            (false, _) => return row("oracle cross-check", false, format!("elliptic solve failed on {nx}x{nt}")),
            (_, Err(e)) => return row("oracle cross-check", false, format!("oracle failed on {nx}x{nt}: {e}")),
        }
    }
    let order = (diffs[0] / diffs[1]).log2();
    row(
        "oracle cross-check",
        diffs[1] < diffs[0] && diffs[1] <= 0.15,
        format!("sup |u_ell - u_oracle|: 8x4 {:.3e}, 16x8 {:.3e} (order {order:.2})", diffs[0], diffs[1]),
    )
}

/// Runs every check; `quick` trims the sample counts.
pub fn run_selftest(quick: bool) -> SelftestSummary {
    let n = if quick { 1000 } else { 10_000 };
    let rows = vec![
        check_inverse_roundtrip(n / 5),
        check_det_identity(n),
        check_trace_inequality(n),
        check_jacobian(if quick { 4 } else { 20 }),
        check_trivial_solution(),
        check_residual_agreement(|spec, u| residual(spec, 0.0, u).expect("admissible field")),
        check_oracle_agreement(),
    ];
    SelftestSummary { rows }
}

/// The residual with the sign of `b` flipped, for mutation checks.
pub fn residual_with_flipped_b(spec: &ProblemSpec, u: &SpaceTimeField) -> Vec<f64> {
    let mut rows = residual(spec, 0.0, u).expect("admissible field");
    let grid = u.grid;
    for (node, r) in rows.iter_mut().enumerate() {
        let (i, j) = grid.split(node);
        if j == 0 || j == grid.nt {
            continue;
        }
        let (p, s) = u.gradient(i, j);
        *r -= 2.0 * assemble_b(spec, &grid.x(i), &p, s).expect("admissible field");
    }
    rows
}
