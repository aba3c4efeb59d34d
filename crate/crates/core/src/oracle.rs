//! Independent reference solver for the original forward-backward system in
//! `(u, m)` on small one-dimensional grids.
//!
//! Unknowns are `u` and `m` at every node (u first, then m, each in grid
//! order). Rows:
//! - `-u_t + H(x, u_x) - f_eps(x, m) = 0` at every node, with the grid's
//!   centered / one-sided stencils;
//! - `m_t - (m H_p(x, u_x))_x = 0` at interior time levels, centered in time,
//!   with the conservative face flux `(m_i + m_{i+1})/2 * H_p((u_{i+1} - u_i)/dx)`;
//! - `m(., 0) = m0` and `u(., T) = g(., m(., T))`.
//!
//! The Jacobian is a dense matrix of central differences. This is slow by
//! design and shares nothing with the elliptic formulation.

use log::debug;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::grid::{GridSpec, SpaceTimeField};
use crate::model::{ModelError, ProblemSpec};
use crate::solver::{build_theta_problem, NewtonSettings};

pub const MAX_NX: usize = 32;
pub const MAX_NT: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle supports d = 1 grids with Nx <= {MAX_NX} and Nt <= {MAX_NT}; got d = {dim}, Nx = {nx}, Nt = {nt}")]
    GridTooLarge { dim: usize, nx: usize, nt: usize },
    #[error("density is not positive at node {0}")]
    NonPositiveDensity(usize),
    #[error("oracle Newton stalled: {0}")]
    Stalled(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledState {
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
}

impl CoupledState {
    pub fn constant(grid: GridSpec, u: f64, m: f64) -> Self {
        Self {
            u: SpaceTimeField::constant(grid, u),
            m: SpaceTimeField::constant(grid, m),
        }
    }

    fn pack(&self) -> Vec<f64> {
        self.u.values.iter().chain(&self.m.values).copied().collect()
    }

    fn unpack(grid: GridSpec, v: &[f64]) -> Self {
        let n = grid.node_count();
        Self {
            u: SpaceTimeField::new(grid, v[..n].to_vec()),
            m: SpaceTimeField::new(grid, v[n..].to_vec()),
        }
    }
}

fn check_grid(grid: &GridSpec) -> Result<(), OracleError> {
    if grid.dim != 1 || grid.nx > MAX_NX || grid.nt > MAX_NT {
        return Err(OracleError::GridTooLarge {
            dim: grid.dim,
            nx: grid.nx,
            nt: grid.nt,
        });
    }
    Ok(())
}

/// Residual of the coupled system with coupling `f + eps log m`.
pub fn coupled_residual(spec: &ProblemSpec, eps: f64, state: &CoupledState) -> Result<Vec<f64>, OracleError> {
    let grid = state.u.grid;
    let n = grid.node_count();
    if let Some(k) = state.m.values.iter().position(|&v| !(v > 0.0)) {
        return Err(OracleError::NonPositiveDensity(k));
    }
    let coupling = spec.coupling.regularized(eps);
    let ham = &spec.hamiltonian;
    let u = &state.u;
    let m = &state.m;
    let nx = grid.nx;
    let dx = grid.dx();
    let dt = grid.dt();
    let mut out = Vec::with_capacity(2 * n);
    for node in 0..n {
        let (i, j) = grid.split(node);
        let x = grid.x(i);
        let (p, s) = u.gradient(i, j);
        out.push(-s + ham.value(&x, &p) - coupling.value(&x, m.values[node]));
    }
    for i in 0..nx {
        let x = grid.x(i);
        out.push(m.at(i, 0) - spec.initial.value(&x));
    }
    for j in 1..grid.nt {
        for i in 0..nx {
            let ip = (i + 1) % nx;
            let im = (i + nx - 1) % nx;
            let face = |a: usize, b: usize| {
                let q = (u.at(b, j) - u.at(a, j)) / dx;
                0.5 * (m.at(a, j) + m.at(b, j)) * ham.grad_p(&[q])[0]
            };
            let mt = (m.at(i, j + 1) - m.at(i, j - 1)) / (2.0 * dt);
            out.push(mt - (face(i, ip) - face(im, i)) / dx);
        }
    }
    for i in 0..nx {
        let x = grid.x(i);
        out.push(u.at(i, grid.nt) - spec.terminal.value(&x, m.at(i, grid.nt)));
    }
    Ok(out)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn merit(v: &[f64]) -> f64 {
    0.5 * v.iter().map(|a| a * a).sum::<f64>()
}

/// Damped Newton with a dense central-difference Jacobian
/// (step `1e-7 (1 + |U_k|)`).
pub fn coupled_newton(
    spec: &ProblemSpec,
    eps: f64,
    initial: &CoupledState,
    settings: &NewtonSettings,
) -> Result<(CoupledState, usize), OracleError> {
    let grid = initial.u.grid;
    check_grid(&grid)?;
    let mut z = initial.pack();
    let eval = |z: &[f64]| coupled_residual(spec, eps, &CoupledState::unpack(grid, z));
    let mut f = eval(&z)?;
    let dim = z.len();
    for it in 0..settings.max_iters {
        if sup(&f) <= settings.abs_tol {
            return Ok((CoupledState::unpack(grid, &z), it));
        }
        let mut jac = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let h = 1e-7 * (1.0 + z[k].abs());
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let fp = eval(&zp)?;
            let fm = eval(&zm)?;
            for r in 0..dim {
                jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        let rhs = DVector::from_iterator(dim, f.iter().map(|v| -v));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| OracleError::Stalled("singular finite-difference Jacobian".into()))?;
        let phi0 = merit(&f);
        let mut lambda = 1.0;
        loop {
            if lambda < settings.min_step {
                return Err(OracleError::Stalled(format!(
                    "line search failed at iteration {it}, residual {:e}",
                    sup(&f)
                )));
            }
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + lambda * b).collect();
            if let Ok(ft) = eval(&trial) {
                if merit(&ft) <= (1.0 - 2.0 * settings.armijo_c * lambda) * phi0 {
                    z = trial;
                    f = ft;
                    break;
                }
            }
            lambda *= 0.5;
        }
        debug!("oracle iteration {it}: residual {:e}", sup(&f));
    }
    if sup(&f) <= settings.abs_tol {
        return Ok((CoupledState::unpack(grid, &z), settings.max_iters));
    }
    Err(OracleError::Stalled(format!(
        "no convergence in {} iterations (residual {:e})",
        settings.max_iters,
        sup(&f)
    )))
}

/// Solves the coupled system by homotopy in `theta` from the trivial problem,
/// starting from `(u, m) = (1, 1)` unless an initial state is given.
pub fn coupled_solve(
    spec: &ProblemSpec,
    eps: f64,
    grid: &GridSpec,
    initial: Option<&CoupledState>,
    settings: &NewtonSettings,
) -> Result<CoupledState, OracleError> {
    check_grid(grid)?;
    let mut state = initial.cloned().unwrap_or_else(|| CoupledState::constant(*grid, 1.0, 1.0));
    let zero = build_theta_problem(spec, 0.0).expect("theta in range");
    state = coupled_newton(&zero, eps, &state, settings)?.0;
    let mut theta: f64 = 0.0;
    let mut h: f64 = 0.1;
    while theta < 1.0 {
        let next = (theta + h).min(1.0);
        let problem = build_theta_problem(spec, next).expect("theta in range");
        match coupled_newton(&problem, eps, &state, settings) {
            Ok((s, iters)) => {
                state = s;
                theta = next;
                if iters <= 3 {
                    h = (2.0 * h).min(0.25);
                }
            }
            Err(e) => {
                h *= 0.5;
                if h < 1e-3 {
                    return Err(e);
                }
            }
        }
    }
    Ok(state)
}

/// The reduced interior operator `-tr(A D^2u) + b` at every interior node of a
/// d = 1 grid, written out entry by entry with `A = [[(Mp)^2 + chi M, -Mp],
/// [-Mp, 1]]` and `b = (V' + F') Mp`. Boundary levels are left as zero.
pub fn dense_elliptic_residual(spec: &ProblemSpec, eps: f64, u: &SpaceTimeField) -> Result<Vec<f64>, ModelError> {
    let grid = u.grid;
    assert_eq!(grid.dim, 1, "dense elliptic residual is one-dimensional");
    let coupling = spec.coupling.regularized(eps);
    let big_m = spec.hamiltonian.quadratic[0][0];
    let (dx, dt) = (grid.dx(), grid.dt());
    let nx = grid.nx;
    let mut out = vec![0.0; grid.node_count()];
    for j in 1..grid.nt {
        for i in 0..nx {
            let (ip, im) = ((i + 1) % nx, (i + nx - 1) % nx);
            let x = grid.x(i);
            let c = u.at(i, j);
            let p = (u.at(ip, j) - u.at(im, j)) / (2.0 * dx);
            let s = (u.at(i, j + 1) - u.at(i, j - 1)) / (2.0 * dt);
            let uxx = (u.at(ip, j) - 2.0 * c + u.at(im, j)) / (dx * dx);
            let utt = (u.at(i, j + 1) - 2.0 * c + u.at(i, j - 1)) / (dt * dt);
            let uxt = (u.at(ip, j + 1) - u.at(ip, j - 1) - u.at(im, j + 1) + u.at(im, j - 1)) / (4.0 * dx * dt);
            let mp = big_m * p;
            let w = -s + 0.5 * p * mp - spec.hamiltonian.potential.value(&x);
            let m = coupling.inverse(&x, w)?;
            let chi = m * coupling.f0_m(m);
            let b = (spec.hamiltonian.potential.gradient(&x)[0] + coupling.grad_x(&x)[0]) * mp;
            out[grid.index(i, j)] = -((mp * mp + chi * big_m) * uxx - 2.0 * mp * uxt + utt) + b;
        }
    }
    Ok(out)
}
