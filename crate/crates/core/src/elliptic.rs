//! Pointwise coefficients of the quasilinear elliptic equation
//! `-tr(A(x, Du) D^2 u) + b(x, Du) = 0` in space-time and of its nonlinear
//! oblique boundary conditions.
//!
//! A state is `(x, p, s)` with `p = D_x u` and `s = u_t`; the gradient
//! variable is `q = (p, s)` in `R^{d+1}`, time last.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{eval_derivative_bundle, ChiValues, DerivativeBundle, ModelError, ProblemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// `t = 0`.
    Initial,
    /// `t = T`.
    Terminal,
}

impl Side {
    /// Outward unit normal of the cylinder.
    pub fn outward_normal(self, dim: usize) -> DVector<f64> {
        let mut nu = DVector::zeros(dim + 1);
        nu[dim] = match self {
            Side::Initial => -1.0,
            Side::Terminal => 1.0,
        };
        nu
    }
}

#[derive(Clone, Debug)]
pub struct CoefficientBundle {
    pub a: DMatrix<f64>,
    pub b: f64,
    /// `dA/dq_k`, `k = 0..=d`.
    pub da_dq: Vec<DMatrix<f64>>,
    pub db_dq: DVector<f64>,
    pub model: DerivativeBundle,
}

impl CoefficientBundle {
    pub fn chi(&self) -> &ChiValues {
        &self.model.chi
    }
}

#[derive(Clone, Debug)]
pub struct BoundaryBundle {
    pub side: Side,
    pub value: f64,
    pub db_dz: f64,
    pub db_dq: DVector<f64>,
}

/// `(D_p H, -1)`.
fn direction(bundle: &DerivativeBundle) -> DVector<f64> {
    let d = bundle.dp_h.len();
    let mut v = DVector::zeros(d + 1);
    v.rows_mut(0, d).copy_from(&bundle.dp_h);
    v[d] = -1.0;
    v
}

/// `blockdiag(D_pp H, 0)`.
fn padded_hessian(bundle: &DerivativeBundle) -> DMatrix<f64> {
    let d = bundle.dp_h.len();
    let mut m = DMatrix::zeros(d + 1, d + 1);
    m.view_mut((0, 0), (d, d)).copy_from(&bundle.dpp_h);
    m
}

fn a_from_bundle(bundle: &DerivativeBundle) -> DMatrix<f64> {
    let v = direction(bundle);
    let mut a = &v * v.transpose() + padded_hessian(bundle) * bundle.chi.chi;
    // Exact symmetry regardless of rounding in the products.
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    a
}

fn b_from_bundle(bundle: &DerivativeBundle) -> f64 {
    -bundle.dx_h.dot(&bundle.dp_h) + bundle.dx_f.dot(&bundle.dp_h) - bundle.chi.chi * bundle.dxp_h.trace()
}

/// `A = (D_pH, -1) (x) (D_pH, -1) + chi(x, w) blockdiag(D_pp H, 0)`.
pub fn assemble_a(spec: &ProblemSpec, x: &[f64], p: &[f64], s: f64) -> Result<DMatrix<f64>, ModelError> {
    Ok(a_from_bundle(&eval_derivative_bundle(spec, x, p, s)?))
}

/// `b = -D_xH . D_pH + D_xf . D_pH - chi tr(D_xp H)`.
pub fn assemble_b(spec: &ProblemSpec, x: &[f64], p: &[f64], s: f64) -> Result<f64, ModelError> {
    Ok(b_from_bundle(&eval_derivative_bundle(spec, x, p, s)?))
}

fn q_derivatives_from_bundle(bundle: &DerivativeBundle) -> (Vec<DMatrix<f64>>, DVector<f64>) {
    let d = bundle.dp_h.len();
    let v = direction(bundle);
    let block = padded_hessian(bundle);
    let chi_w = bundle.chi.chi_w;
    let tr_xp = bundle.dxp_h.trace();
    let mut da = Vec::with_capacity(d + 1);
    let mut db = DVector::zeros(d + 1);
    for k in 0..d {
        let mut dv = DVector::zeros(d + 1);
        dv.rows_mut(0, d).copy_from(&bundle.dpp_h.column(k));
        let dw = bundle.dp_h[k];
        let mut m = &dv * v.transpose() + &v * dv.transpose() + &block * (chi_w * dw);
        symmetrize(&mut m);
        da.push(m);
        // D_xH and D_xf do not depend on p for separable data; D_pH does.
        let col = bundle.dpp_h.column(k);
        db[k] = -bundle.dx_h.dot(&col) + bundle.dx_f.dot(&col) - chi_w * dw * tr_xp;
    }
    da.push(&block * (-chi_w));
    db[d] = chi_w * tr_xp;
    (da, db)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Analytic `dA/dq_k` and `db/dq_k`.
pub fn q_derivatives(
    spec: &ProblemSpec,
    x: &[f64],
    p: &[f64],
    s: f64,
) -> Result<(Vec<DMatrix<f64>>, DVector<f64>), ModelError> {
    Ok(q_derivatives_from_bundle(&eval_derivative_bundle(spec, x, p, s)?))
}

/// `A`, `b` and their `q`-derivatives from a single model evaluation.
pub fn coefficients(spec: &ProblemSpec, x: &[f64], p: &[f64], s: f64) -> Result<CoefficientBundle, ModelError> {
    let model = eval_derivative_bundle(spec, x, p, s)?;
    let a = a_from_bundle(&model);
    let b = b_from_bundle(&model);
    let (da_dq, db_dq) = q_derivatives_from_bundle(&model);
    Ok(CoefficientBundle {
        a,
        b,
        da_dq,
        db_dq,
        model,
    })
}

/// Boundary operator: at `t = 0`, `B = -s + H(x,p) - f(x, m0(x))`; at `t = T`,
/// `B = -g(x, f^{-1}(x, -s + H(x,p))) + z`.
pub fn assemble_boundary(
    spec: &ProblemSpec,
    x: &[f64],
    side: Side,
    z: f64,
    p: &[f64],
    s: f64,
) -> Result<BoundaryBundle, ModelError> {
    let ham = &spec.hamiltonian;
    let d = p.len();
    let h = ham.value(x, p);
    let dp_h = ham.grad_p(p);
    let mut db_dq = DVector::zeros(d + 1);
    match side {
        Side::Initial => {
            let m0 = spec.initial.value(x);
            db_dq.rows_mut(0, d).copy_from(&dp_h);
            db_dq[d] = -1.0;
            Ok(BoundaryBundle {
                side,
                value: -s + h - spec.coupling.value(x, m0),
                db_dz: 0.0,
                db_dq,
            })
        }
        Side::Terminal => {
            let w = -s + h;
            let m = spec.coupling.inverse(x, w)?;
            let ratio = spec.terminal.g0_m(m) / spec.coupling.f0_m(m);
            db_dq.rows_mut(0, d).copy_from(&(dp_h * (-ratio)));
            db_dq[d] = ratio;
            Ok(BoundaryBundle {
                side,
                value: -spec.terminal.value(x, m) + z,
                db_dz: 1.0,
                db_dq,
            })
        }
    }
}

/// `-tr(A(x, Du) D^2 u) + b(x, Du)` for stencil values `p`, `s` and Hessian.
pub fn residual_at_node(
    spec: &ProblemSpec,
    x: &[f64],
    p: &[f64],
    s: f64,
    hessian: &DMatrix<f64>,
) -> Result<f64, ModelError> {
    let model = eval_derivative_bundle(spec, x, p, s)?;
    let a = a_from_bundle(&model);
    Ok(-a.component_mul(hessian).sum() + b_from_bundle(&model))
}

/// Both sides of the trace lower bound
/// `tr(blockdiag(D_pp H, 0) D2u A D2u) >= 3/(4 C0) |-D_x u_t + D_pH D2_xx u|^2
///   + 1/(4 C0) tr(I~ D2u A D2u) + 3 chi/(4 C0^2) |D2_xx u|^2`,
/// where `I~` is the identity with the time entry removed.
pub fn trace_inequality_sides(
    spec: &ProblemSpec,
    x: &[f64],
    p: &[f64],
    s: f64,
    hessian: &DMatrix<f64>,
) -> Result<(f64, f64), ModelError> {
    let model = eval_derivative_bundle(spec, x, p, s)?;
    let d = p.len();
    let c0 = spec.hamiltonian.c0;
    let a = a_from_bundle(&model);
    let block = padded_hessian(&model);
    let hah = hessian * &a * hessian;
    let lhs = (&block * &hah).trace();
    let mut i_tilde = DMatrix::identity(d + 1, d + 1);
    i_tilde[(d, d)] = 0.0;
    let tr_tilde = (&i_tilde * &hah).trace();
    let hxx = hessian.view((0, 0), (d, d));
    let mixed = hessian.view((0, d), (d, 1));
    let vec_term = hxx * &model.dp_h - mixed;
    let rhs = 3.0 / (4.0 * c0) * vec_term.norm_squared()
        + tr_tilde / (4.0 * c0)
        + 3.0 * model.chi.chi / (4.0 * c0 * c0) * hxx.norm_squared();
    Ok((lhs, rhs))
}
