//! Damped Newton on the discrete elliptic system, wrapped in homotopy
//! (theta) and vanishing-viscosity (epsilon) continuation.
//!
//! Rows of `F(U)`: the elliptic residual at every interior time level and the
//! oblique boundary operator at `t = 0` and `t = T`. The ordering follows
//! [`GridSpec::index`].

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::recover_density;
use crate::elliptic::{assemble_boundary, coefficients, Side};
use crate::grid::{GridSpec, Region, SpaceTimeField};
use crate::linalg::{solve_refined, CsrMatrix, LinalgError};
use crate::model::{Ellipticity, InitialDensitySpec, ModelError, ProblemSpec, TrigPoly};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("node {node}: {source}")]
    Domain { node: usize, source: ModelError },
    #[error("linear solve failed: {0}")]
    Linear(#[from] LinalgError),
    #[error("theta = {0} is outside [0, 1]")]
    Theta(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSettings {
    pub abs_tol: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub min_step: f64,
    pub linear_rel_tol: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            max_iters: 50,
            armijo_c: 1e-4,
            min_step: 1e-10,
            linear_rel_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSettings {
    pub theta_steps: usize,
    pub theta_min_step: f64,
    pub theta_max_step: f64,
    pub epsilon0: f64,
    pub epsilon_ratio: f64,
    pub epsilon_floor: f64,
    pub cauchy_tol: f64,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            theta_steps: 10,
            theta_min_step: 1e-4,
            theta_max_step: 0.2,
            epsilon0: 1.0,
            epsilon_ratio: 0.5,
            epsilon_floor: 1e-6,
            cauchy_tol: 1e-4,
        }
    }
}

impl ContinuationSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.theta_steps == 0 {
            return Err("theta_steps must be positive".into());
        }
        if !(self.theta_min_step > 0.0 && self.theta_min_step <= self.theta_max_step) {
            return Err("need 0 < theta_min_step <= theta_max_step".into());
        }
        if !(self.epsilon_ratio > 0.0 && self.epsilon_ratio < 1.0) {
            return Err("epsilon_ratio must lie in (0, 1)".into());
        }
        if !(self.epsilon_floor > 0.0) || !(self.epsilon0 >= self.epsilon_floor) {
            return Err("need 0 < epsilon_floor <= epsilon0".into());
        }
        if !(self.cauchy_tol > 0.0) {
            return Err("cauchy_tol must be positive".into());
        }
        Ok(())
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [self.abs_tol, self.armijo_c, self.min_step, self.linear_rel_tol];
        if positive.iter().any(|v| !(*v > 0.0)) || self.max_iters == 0 {
            return Err("Newton tolerances and iteration cap must be positive".into());
        }
        if self.armijo_c >= 0.5 {
            return Err("armijo_c must be below 0.5".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    #[serde(default)]
    pub newton: NewtonSettings,
    #[serde(default)]
    pub continuation: ContinuationSettings,
}

/// The homotopy family: `H^theta = theta H + (1 - theta)(|p|^2/2 + f(x, 1))`,
/// `g^theta = theta g + (1 - theta) m`, `m0^theta = theta m0 + (1 - theta)`,
/// with `f` unchanged. At `theta = 0` the solution is `(u, m) = (1, 1)`.
pub fn build_theta_problem(spec: &ProblemSpec, theta: f64) -> Result<ProblemSpec, SolverError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(SolverError::Theta(theta));
    }
    if theta == 1.0 {
        return Ok(spec.clone());
    }
    let rest = 1.0 - theta;
    let mut out = spec.clone();
    let ham = &mut out.hamiltonian;
    let d = spec.dimension;
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { 1.0 } else { 0.0 };
            ham.quadratic[i][j] = theta * spec.hamiltonian.quadratic[i][j] + rest * id;
        }
    }
    // the constant f(x, 1) joins the potential with a minus sign
    ham.potential = spec
        .hamiltonian
        .potential
        .combine(theta, &spec.coupling.offset, -rest)
        .add_constant(-rest * spec.coupling.f0(1.0));
    out.terminal = spec.terminal.blend_with_identity(theta);
    out.initial = InitialDensitySpec {
        density: spec.initial.density.scaled(theta).add_constant(rest),
    };
    Ok(out)
}

fn polys_match(a: &TrigPoly, b: &TrigPoly) -> bool {
    let diff = a.combine(1.0, b, -1.0);
    diff.constant.abs() <= 1e-14 && diff.terms.iter().all(|t| t.cos.abs() <= 1e-14 && t.sin.abs() <= 1e-14)
}

/// True when the problem already coincides with its `theta = 0` member.
pub fn is_theta_trivial(spec: &ProblemSpec) -> bool {
    let zero = match build_theta_problem(spec, 0.0) {
        Ok(z) => z,
        Err(_) => return false,
    };
    zero.hamiltonian.quadratic == spec.hamiltonian.quadratic
        && polys_match(&zero.hamiltonian.potential, &spec.hamiltonian.potential)
        && zero.terminal.terms.len() == spec.terminal.terms.len()
        && zero
            .terminal
            .terms
            .iter()
            .zip(&spec.terminal.terms)
            .all(|(a, b)| a.exponent == b.exponent && (a.coef - b.coef).abs() <= 1e-14)
        && zero.terminal.log_coef == spec.terminal.log_coef
        && polys_match(&zero.terminal.offset, &spec.terminal.offset)
        && polys_match(&zero.initial.density, &spec.initial.density)
}

struct NodeRow {
    value: f64,
    entries: Vec<(usize, f64)>,
}

fn node_row(spec: &ProblemSpec, grid: &GridSpec, u: &[f64], node: usize, with_jacobian: bool) -> Result<NodeRow, ModelError> {
    let (i, j) = grid.split(node);
    let x = grid.x(i);
    let d = grid.dim;
    let grad = grid.gradient_stencils(i, j);
    let p: Vec<f64> = grad[..d].iter().map(|s| s.apply(u)).collect();
    let s = grad[d].apply(u);
    let mut entries = Vec::new();
    if j == 0 || j == grid.nt {
        let side = if j == 0 { Side::Initial } else { Side::Terminal };
        let bb = assemble_boundary(spec, &x, side, u[node], &p, s)?;
        if with_jacobian {
            for (c, st) in grad.iter().enumerate() {
                let w = bb.db_dq[c];
                if w != 0.0 {
                    entries.extend(st.coefficients().map(|(k, v)| (k, w * v)));
                }
            }
            if bb.db_dz != 0.0 {
                entries.push((node, bb.db_dz));
            }
        }
        return Ok(NodeRow { value: bb.value, entries });
    }
    let hess_st = grid.hessian_stencils(i, j);
    let n = d + 1;
    let mut hess = nalgebra::DMatrix::zeros(n, n);
    for ((a, b), st) in &hess_st {
        let v = st.apply(u);
        hess[(*a, *b)] = v;
        hess[(*b, *a)] = v;
    }
    let cb = coefficients(spec, &x, &p, s)?;
    let value = -cb.a.component_mul(&hess).sum() + cb.b;
    if with_jacobian {
        for (c, st) in grad.iter().enumerate() {
            let w = -cb.da_dq[c].component_mul(&hess).sum() + cb.db_dq[c];
            if w != 0.0 {
                entries.extend(st.coefficients().map(|(k, v)| (k, w * v)));
            }
        }
        for ((a, b), st) in &hess_st {
            let mult = if a == b { 1.0 } else { 2.0 };
            let w = -mult * cb.a[(*a, *b)];
            if w != 0.0 {
                entries.extend(st.coefficients().map(|(k, v)| (k, w * v)));
            }
        }
    }
    Ok(NodeRow { value, entries })
}

fn effective(spec: &ProblemSpec, eps: f64) -> ProblemSpec {
    if eps > 0.0 {
        spec.with_regularization(eps)
    } else {
        spec.clone()
    }
}

fn first_failure<T>(rows: Vec<Result<T, ModelError>>) -> Result<Vec<T>, SolverError> {
    let mut out = Vec::with_capacity(rows.len());
    for (node, r) in rows.into_iter().enumerate() {
        out.push(r.map_err(|source| SolverError::Domain { node, source })?);
    }
    Ok(out)
}

/// `F(U)` for the problem with coupling `f + eps log m`.
pub fn residual(spec: &ProblemSpec, eps: f64, u: &SpaceTimeField) -> Result<Vec<f64>, SolverError> {
    let eff = effective(spec, eps);
    let grid = u.grid;
    let rows: Vec<_> = (0..grid.node_count())
        .into_par_iter()
        .map(|node| node_row(&eff, &grid, &u.values, node, false).map(|r| r.value))
        .collect();
    first_failure(rows)
}

/// `F(U)` and its exact Jacobian.
pub fn assemble_residual_and_jacobian(
    spec: &ProblemSpec,
    eps: f64,
    u: &SpaceTimeField,
) -> Result<(Vec<f64>, CsrMatrix), SolverError> {
    let eff = effective(spec, eps);
    let grid = u.grid;
    let rows: Vec<_> = (0..grid.node_count())
        .into_par_iter()
        .map(|node| node_row(&eff, &grid, &u.values, node, true))
        .collect();
    let rows = first_failure(rows)?;
    let f = rows.iter().map(|r| r.value).collect();
    let j = CsrMatrix::from_rows(rows.into_iter().map(|r| r.entries).collect());
    Ok((f, j))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NewtonStatus {
    Converged,
    Stalled { reason: String },
    DomainFailure { node: usize, message: String },
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub u: SpaceTimeField,
    pub iterations: usize,
    /// `||F||_2` at the start and after every accepted step; nonincreasing.
    pub residual_l2: Vec<f64>,
    /// `||F||_inf` at the same iterates.
    pub residual_sup: Vec<f64>,
    pub status: NewtonStatus,
}

impl NewtonOutcome {
    pub fn converged(&self) -> bool {
        self.status == NewtonStatus::Converged
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_sup.last().unwrap_or(&f64::NAN)
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton with Armijo backtracking on `|F|^2 / 2`. Steps that leave
/// the domain of the coupling inverse are rejected like non-decreasing ones.
pub fn newton_solve(spec: &ProblemSpec, eps: f64, u0: &SpaceTimeField, settings: &NewtonSettings) -> NewtonOutcome {
    let mut u = u0.clone();
    let mut l2_hist = Vec::new();
    let mut sup_hist = Vec::new();
    let stalled = |u: SpaceTimeField, it, l2h, suph, reason: String| NewtonOutcome {
        u,
        iterations: it,
        residual_l2: l2h,
        residual_sup: suph,
        status: NewtonStatus::Stalled { reason },
    };
    let mut f = match residual(spec, eps, &u) {
        Ok(f) => f,
        Err(SolverError::Domain { node, source }) => {
            return NewtonOutcome {
                u,
                iterations: 0,
                residual_l2: vec![],
                residual_sup: vec![],
                status: NewtonStatus::DomainFailure {
                    node,
                    message: source.to_string(),
                },
            }
        }
        Err(e) => return stalled(u, 0, vec![], vec![], e.to_string()),
    };
    l2_hist.push(l2(&f));
    sup_hist.push(sup(&f));
    for it in 0..settings.max_iters {
        if sup(&f) <= settings.abs_tol {
            return NewtonOutcome {
                u,
                iterations: it,
                residual_l2: l2_hist,
                residual_sup: sup_hist,
                status: NewtonStatus::Converged,
            };
        }
        let (_, jac) = match assemble_residual_and_jacobian(spec, eps, &u) {
            Ok(r) => r,
            Err(e) => return stalled(u, it, l2_hist, sup_hist, e.to_string()),
        };
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let step = match solve_refined(&jac, &rhs, settings.linear_rel_tol, 4) {
            Ok(s) => {
                if s.relative_residual > settings.linear_rel_tol {
                    debug!("linear solve reached relative residual {:e}", s.relative_residual);
                }
                s.x
            }
            Err(e) => return stalled(u, it, l2_hist, sup_hist, e.to_string()),
        };
        let merit0 = 0.5 * l2(&f).powi(2);
        let mut lambda = 1.0;
        let accepted = loop {
            if lambda < settings.min_step {
                break None;
            }
            let trial = SpaceTimeField::new(
                u.grid,
                u.values.iter().zip(&step).map(|(a, b)| a + lambda * b).collect(),
            );
            match residual(spec, eps, &trial) {
                Ok(ft) => {
                    let merit = 0.5 * l2(&ft).powi(2);
                    if merit <= (1.0 - 2.0 * settings.armijo_c * lambda) * merit0 {
                        break Some((trial, ft));
                    }
                }
                Err(SolverError::Domain { node, .. }) => {
                    debug!("step {lambda} leaves the coupling domain at node {node}");
                }
                Err(e) => return stalled(u, it, l2_hist, sup_hist, e.to_string()),
            }
            lambda *= 0.5;
        };
        match accepted {
            Some((trial, ft)) => {
                u = trial;
                f = ft;
                l2_hist.push(l2(&f));
                sup_hist.push(sup(&f));
            }
            None => {
                return stalled(
                    u,
                    it + 1,
                    l2_hist,
                    sup_hist,
                    format!("line search step fell below {:e}", settings.min_step),
                )
            }
        }
    }
    if sup(&f) <= settings.abs_tol {
        return NewtonOutcome {
            u,
            iterations: settings.max_iters,
            residual_l2: l2_hist,
            residual_sup: sup_hist,
            status: NewtonStatus::Converged,
        };
    }
    stalled(
        u,
        settings.max_iters,
        l2_hist,
        sup_hist,
        format!("no convergence in {} iterations", settings.max_iters),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    Stalled,
    DomainFailure,
}

#[derive(Clone, Debug, Serialize)]
pub struct PathEntry {
    pub theta: f64,
    pub epsilon: f64,
    pub newton_iters: usize,
    pub final_residual: f64,
    pub accepted: bool,
    pub residual_history: Vec<f64>,
}

/// Converged solution at one viscosity level (theta = 1).
#[derive(Clone, Debug)]
pub struct EpsilonStage {
    pub epsilon: f64,
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
    /// `||m^eps - m^eps_prev||_{L2(Q_T)}`; none for the first stage.
    pub cauchy_increment: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub path: Vec<PathEntry>,
    pub u: SpaceTimeField,
    /// Density recovered from the final `u`; absent if recovery failed.
    pub m: Option<SpaceTimeField>,
    /// Viscosity of the final iterate (0 under strict ellipticity).
    pub epsilon: f64,
    /// Theta of the final iterate.
    pub theta: f64,
    pub stages: Vec<EpsilonStage>,
    pub warnings: Vec<String>,
    pub message: Option<String>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// `||a - b||_{L2(Q_T)}`.
pub fn l2_distance(a: &SpaceTimeField, b: &SpaceTimeField) -> f64 {
    let sq: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).collect();
    a.grid.integrate(&sq, Region::Cylinder).sqrt()
}

struct Continuation<'a> {
    spec: &'a ProblemSpec,
    settings: &'a SolverSettings,
    path: Vec<PathEntry>,
}

impl Continuation<'_> {
    fn solve(&mut self, theta: f64, eps: f64, start: &SpaceTimeField) -> Result<NewtonOutcome, SolverError> {
        let problem = build_theta_problem(self.spec, theta)?;
        let out = newton_solve(&problem, eps, start, &self.settings.newton);
        self.path.push(PathEntry {
            theta,
            epsilon: eps,
            newton_iters: out.iterations,
            final_residual: out.final_residual(),
            accepted: out.converged(),
            residual_history: out.residual_sup.clone(),
        });
        debug!(
            "theta {theta:.6} eps {eps:.3e}: {} iterations, residual {:.3e}, {:?}",
            out.iterations,
            out.final_residual(),
            out.status
        );
        Ok(out)
    }
}

/// Full continuation: theta from 0 to 1 with adaptive steps, then (for
/// degenerate couplings) the decreasing viscosity sequence.
///
/// `initial` replaces the constant start `U = 1` of the theta = 0 solve.
pub fn continuation_solve(
    spec: &ProblemSpec,
    grid: &GridSpec,
    settings: &SolverSettings,
    initial: Option<&SpaceTimeField>,
) -> SolveReport {
    let cs = &settings.continuation;
    let degenerate = spec.ellipticity() == Ellipticity::Degenerate;
    let theta_eps = if degenerate { cs.epsilon0 } else { 0.0 };
    let mut run = Continuation {
        spec,
        settings,
        path: Vec::new(),
    };
    let start = initial.cloned().unwrap_or_else(|| SpaceTimeField::constant(*grid, 1.0));
    let mut warnings = Vec::new();
    let finish = |run: Continuation, status, u: SpaceTimeField, theta, eps, stages, warnings, message: Option<String>| {
        let m = recover_density(&build_theta_problem(spec, theta).unwrap_or_else(|_| spec.clone()), eps, &u).ok();
        SolveReport {
            status,
            path: run.path,
            u,
            m,
            epsilon: eps,
            theta,
            stages,
            warnings,
            message,
        }
    };

    let trivial = is_theta_trivial(spec);
    let first_theta = if trivial { 1.0 } else { 0.0 };
    let out = match run.solve(first_theta, theta_eps, &start) {
        Ok(o) => o,
        Err(e) => {
            return finish(run, SolveStatus::DomainFailure, start, first_theta, theta_eps, vec![], warnings, Some(e.to_string()))
        }
    };
    if !out.converged() {
        let status = match out.status {
            NewtonStatus::DomainFailure { .. } => SolveStatus::DomainFailure,
            _ => SolveStatus::Stalled,
        };
        let msg = format!("theta = {first_theta} solve failed: {:?}", out.status);
        return finish(run, status, out.u, first_theta, theta_eps, vec![], warnings, Some(msg));
    }
    let mut u = out.u;
    let mut theta = first_theta;
    let mut h = 1.0 / cs.theta_steps as f64;
    h = h.min(cs.theta_max_step);
    while theta < 1.0 {
        let next = (theta + h).min(1.0);
        let out = match run.solve(next, theta_eps, &u) {
            Ok(o) => o,
            Err(e) => return finish(run, SolveStatus::Stalled, u, theta, theta_eps, vec![], warnings, Some(e.to_string())),
        };
        if out.converged() {
            theta = next;
            if out.iterations <= 3 {
                h = (2.0 * h).min(cs.theta_max_step);
            }
            u = out.u;
        } else {
            h *= 0.5;
            if h < cs.theta_min_step {
                let msg = format!("theta step fell below {:e} at theta = {theta}", cs.theta_min_step);
                return finish(run, SolveStatus::Stalled, u, theta, theta_eps, vec![], warnings, Some(msg));
            }
        }
    }
    info!("theta continuation finished in {} solves", run.path.len());

    if !degenerate {
        return finish(run, SolveStatus::Converged, u, 1.0, 0.0, vec![], warnings, None);
    }

    // Viscosity sequence at theta = 1.
    let m_first = match recover_density(spec, cs.epsilon0, &u) {
        Ok(m) => m,
        Err(e) => return finish(run, SolveStatus::DomainFailure, u, 1.0, cs.epsilon0, vec![], warnings, Some(e.to_string())),
    };
    let mut stages = vec![EpsilonStage {
        epsilon: cs.epsilon0,
        u: u.clone(),
        m: m_first,
        cauchy_increment: None,
    }];
    let mut eps = cs.epsilon0;
    loop {
        let target = eps * cs.epsilon_ratio;
        if target < cs.epsilon_floor {
            warnings.push(format!(
                "Cauchy criterion not reached: epsilon floor {:e} hit with last increment {:e}",
                cs.epsilon_floor,
                stages.last().and_then(|s| s.cauchy_increment).unwrap_or(f64::NAN)
            ));
            warn!("{}", warnings.last().unwrap());
            break;
        }
        // On failure, retry with geometrically smaller decrements.
        let mut trial_eps = target;
        let mut solved = None;
        for _ in 0..6 {
            match run.solve(1.0, trial_eps, &u) {
                Ok(o) if o.converged() => {
                    solved = Some(o);
                    break;
                }
                Ok(_) => trial_eps = (eps * trial_eps).sqrt(),
                Err(e) => {
                    return finish(run, SolveStatus::Stalled, u, 1.0, eps, stages, warnings, Some(e.to_string()))
                }
            }
        }
        let Some(out) = solved else {
            let msg = format!("viscosity continuation stalled below epsilon = {eps:e}");
            return finish(run, SolveStatus::Stalled, u, 1.0, eps, stages, warnings, Some(msg));
        };
        eps = trial_eps;
        u = out.u;
        let m = match recover_density(spec, eps, &u) {
            Ok(m) => m,
            Err(e) => return finish(run, SolveStatus::DomainFailure, u, 1.0, eps, stages, warnings, Some(e.to_string())),
        };
        let inc = l2_distance(&m, &stages.last().unwrap().m);
        stages.push(EpsilonStage {
            epsilon: eps,
            u: u.clone(),
            m,
            cauchy_increment: Some(inc),
        });
        info!("epsilon {eps:.3e}: Cauchy increment {inc:.3e}");
        if inc <= cs.cauchy_tol {
            break;
        }
    }
    finish(run, SolveStatus::Converged, u, 1.0, eps, stages, warnings, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CouplingSpec, HamiltonianSpec, TerminalSpec};
    use std::f64::consts::PI;

    fn benchmark() -> ProblemSpec {
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

    #[test]
    fn theta_endpoints() {
        let spec = benchmark();
        assert_eq!(build_theta_problem(&spec, 1.0).unwrap(), spec);
        let z = build_theta_problem(&spec, 0.0).unwrap();
        assert_eq!(z.hamiltonian.quadratic, vec![vec![1.0]]);
        assert!(z.initial.density.is_constant());
        assert_eq!(z.initial.density.mean(), 1.0);
        // H^0(x, 0) = f(x, 1)
        let x = [0.37];
        assert!((z.hamiltonian.value(&x, &[0.0]) - spec.coupling.value(&x, 1.0)).abs() < 1e-15);
        assert!(build_theta_problem(&spec, 1.5).is_err());
    }

    #[test]
    fn trivial_solution_is_exact() {
        let spec = build_theta_problem(&benchmark(), 0.0).unwrap();
        let grid = GridSpec::new(1, 16, 8, 1.0).unwrap();
        let f = residual(&spec, 0.0, &SpaceTimeField::constant(grid, 1.0)).unwrap();
        assert!(sup(&f) <= 1e-14);
        assert!(is_theta_trivial(&spec));
        assert!(!is_theta_trivial(&benchmark()));
    }

    #[test]
    fn locality_of_rows() {
        let spec = benchmark();
        let grid = GridSpec::new(1, 16, 8, 1.0).unwrap();
        let u = SpaceTimeField::from_fn(grid, |x, t| 1.0 + 0.1 * (2.0 * PI * x[0]).cos() * (1.0 - t));
        let f0 = residual(&spec, 0.0, &u).unwrap();
        let mut v = u.clone();
        let node = grid.index(5, 4);
        v.values[node] += 1e-3;
        let f1 = residual(&spec, 0.0, &v).unwrap();
        let (_, jac) = assemble_residual_and_jacobian(&spec, 0.0, &u).unwrap();
        for r in 0..grid.node_count() {
            let touches = jac.row(r).any(|(c, _)| c == node);
            if !touches {
                assert_eq!(f0[r], f1[r], "row {r}");
            }
        }
    }

    #[test]
    fn jacobian_matches_differences() {
        let spec = benchmark();
        let grid = GridSpec::new(1, 8, 4, 1.0).unwrap();
        let u = SpaceTimeField::from_fn(grid, |x, t| {
            1.0 + (1.0 - t) * (0.6 + 0.1 * (2.0 * PI * x[0]).sin()) + 0.05 * (2.0 * PI * x[0]).cos() * t * t
        });
        let (_, jac) = assemble_residual_and_jacobian(&spec, 0.0, &u).unwrap();
        for col in 0..grid.node_count() {
            let h = 1e-6 * (1.0 + u.values[col].abs());
            let mut up = u.clone();
            let mut um = u.clone();
            up.values[col] += h;
            um.values[col] -= h;
            let fp = residual(&spec, 0.0, &up).unwrap();
            let fm = residual(&spec, 0.0, &um).unwrap();
            let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let an: Vec<f64> = (0..grid.node_count()).map(|r| jac.get(r, col)).collect();
            let diff = fd.iter().zip(&an).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(diff <= 1e-6 * (1.0 + l2(&an)), "column {col}: {diff}");
        }
    }

    #[test]
    fn newton_recovers_trivial_solution() {
        let spec = build_theta_problem(&benchmark(), 0.0).unwrap();
        let grid = GridSpec::new(1, 16, 8, 1.0).unwrap();
        let u0 = SpaceTimeField::from_fn(grid, |x, _| 1.0 + 0.1 * (2.0 * PI * x[0]).sin());
        let out = newton_solve(&spec, 0.0, &u0, &NewtonSettings::default());
        assert!(out.converged(), "{:?}", out.status);
        assert!(out.u.values.iter().all(|v| (v - 1.0).abs() <= 1e-10));
        assert!(out.residual_l2.windows(2).all(|w| w[1] <= w[0]));
        let again = newton_solve(&spec, 0.0, &out.u, &NewtonSettings::default());
        assert_eq!(again.iterations, 0);
    }

    #[test]
    fn trivial_spec_takes_one_step() {
        let spec = build_theta_problem(&benchmark(), 0.0).unwrap();
        let grid = GridSpec::new(1, 8, 4, 1.0).unwrap();
        let rep = continuation_solve(&spec, &grid, &SolverSettings::default(), None);
        assert!(rep.converged());
        assert_eq!(rep.path.len(), 1);
    }
}
