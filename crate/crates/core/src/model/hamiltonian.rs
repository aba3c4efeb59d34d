use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::trig::TrigPoly;
use super::ModelError;

/// Separable quadratic Hamiltonian `H(x,p) = p.M p / 2 - V(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    /// Symmetric positive-definite `d x d` matrix, row-major rows.
    pub quadratic: Vec<Vec<f64>>,
    #[serde(default)]
    pub potential: TrigPoly,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default)]
    pub tau: f64,
}

fn default_c0() -> f64 {
    10.0
}

impl HamiltonianSpec {
    /// `|p|^2 / 2 - V(x)` in dimension `dim`.
    pub fn isotropic(dim: usize, potential: TrigPoly) -> Self {
        let quadratic = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            quadratic,
            potential,
            c0: default_c0(),
            tau: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.quadratic.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.quadratic[i][j])
    }

    pub fn validate(&self, dim: usize) -> Result<(), ModelError> {
        if self.quadratic.len() != dim || self.quadratic.iter().any(|r| r.len() != dim) {
            return Err(ModelError::invalid(
                "hamiltonian.quadratic",
                format!("expected a {dim}x{dim} matrix"),
            ));
        }
        for i in 0..dim {
            for j in 0..dim {
                if self.quadratic[i][j] != self.quadratic[j][i] {
                    return Err(ModelError::invalid("hamiltonian.quadratic", "matrix is not symmetric"));
                }
            }
        }
        let eig = self.matrix().symmetric_eigenvalues();
        if eig.iter().any(|&l| l <= 0.0) {
            return Err(ModelError::invalid(
                "hamiltonian.quadratic",
                "matrix is not positive definite",
            ));
        }
        if !(self.c0 > 0.0) {
            return Err(ModelError::invalid("hamiltonian.c0", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(ModelError::invalid("hamiltonian.tau", "must lie in [0, 1)"));
        }
        if !self.potential.check_dimension(dim) {
            return Err(ModelError::invalid(
                "hamiltonian.potential",
                "wave vector length does not match the dimension",
            ));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64], p: &[f64]) -> f64 {
        let d = p.len();
        let mut quad = 0.0;
        for i in 0..d {
            for j in 0..d {
                quad += p[i] * self.quadratic[i][j] * p[j];
            }
        }
        0.5 * quad - self.potential.value(x)
    }

    /// `D_p H = M p`.
    pub fn grad_p(&self, p: &[f64]) -> DVector<f64> {
        let d = p.len();
        DVector::from_fn(d, |i, _| (0..d).map(|j| self.quadratic[i][j] * p[j]).sum())
    }

    /// `D_pp H = M`, constant for this family.
    pub fn hess_pp(&self) -> DMatrix<f64> {
        self.matrix()
    }

    /// `D_x H = -grad V`.
    pub fn grad_x(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), self.potential.gradient(x).into_iter().map(|g| -g))
    }

    /// `D_xp H`, identically zero for separable Hamiltonians.
    pub fn hess_xp(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::zeros(d, d)
    }
}
