//! Real trigonometric polynomials on the unit torus.
//!
//! A polynomial is `c + sum_k (a_k cos(2 pi k.x) + b_k sin(2 pi k.x))` with
//! integer wave vectors `k`. They carry the spatial data of every problem
//! (potential, coupling and terminal offsets, initial density), so all
//! derivatives are analytic and integrals over the torus are exact.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

const TAU: f64 = 2.0 * PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    /// Integer wave vector, one entry per spatial dimension.
    pub wave: Vec<i32>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPoly {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl TrigTerm {
    fn phase(&self, x: &[f64]) -> f64 {
        TAU * self
            .wave
            .iter()
            .zip(x)
            .map(|(&k, &xi)| k as f64 * xi)
            .sum::<f64>()
    }
}

impl TrigPoly {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `constant + amplitude * cos(2 pi k.x)`.
    pub fn cosine(constant: f64, amplitude: f64, wave: Vec<i32>) -> Self {
        Self {
            constant,
            terms: vec![TrigTerm {
                wave,
                cos: amplitude,
                sin: 0.0,
            }],
        }
    }

    /// `constant + amplitude * sin(2 pi k.x)`.
    pub fn sine(constant: f64, amplitude: f64, wave: Vec<i32>) -> Self {
        Self {
            constant,
            terms: vec![TrigTerm {
                wave,
                cos: 0.0,
                sin: amplitude,
            }],
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, t| {
            let (s, c) = t.phase(x).sin_cos();
            acc + t.cos * c + t.sin * s
        })
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for t in &self.terms {
            let (s, c) = t.phase(x).sin_cos();
            let factor = -t.cos * s + t.sin * c;
            for (gi, &k) in g.iter_mut().zip(&t.wave) {
                *gi += TAU * k as f64 * factor;
            }
        }
        g
    }

    /// Row-major `d x d` Hessian.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut h = vec![0.0; d * d];
        for t in &self.terms {
            let (s, c) = t.phase(x).sin_cos();
            let factor = -(t.cos * c + t.sin * s);
            for i in 0..d {
                for j in 0..d {
                    h[i * d + j] += TAU * TAU * (t.wave[i] * t.wave[j]) as f64 * factor;
                }
            }
        }
        h
    }

    /// Exact integral over the unit torus.
    pub fn mean(&self) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .filter(|t| t.wave.iter().all(|&k| k == 0))
                .map(|t| t.cos)
                .sum::<f64>()
    }

    /// True when every oscillating term has zero amplitude.
    pub fn is_constant(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.wave.iter().all(|&k| k == 0) || (t.cos == 0.0 && t.sin == 0.0))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            constant: self.constant * factor,
            terms: self
                .terms
                .iter()
                .map(|t| TrigTerm {
                    wave: t.wave.clone(),
                    cos: t.cos * factor,
                    sin: t.sin * factor,
                })
                .collect(),
        }
    }

    /// `alpha * self + beta * other`, merging equal wave vectors and dropping
    /// vanishing terms.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        let mut out = Self::constant(alpha * self.constant + beta * other.constant);
        for (t, w) in self
            .terms
            .iter()
            .map(|t| (t, alpha))
            .chain(other.terms.iter().map(|t| (t, beta)))
        {
            match out.terms.iter_mut().find(|o| o.wave == t.wave) {
                Some(o) => {
                    o.cos += w * t.cos;
                    o.sin += w * t.sin;
                }
                None => out.terms.push(TrigTerm {
                    wave: t.wave.clone(),
                    cos: w * t.cos,
                    sin: w * t.sin,
                }),
            }
        }
        out.terms.retain(|t| t.cos != 0.0 || t.sin != 0.0);
        out
    }

    pub fn add_constant(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.constant += c;
        out
    }

    /// Every wave vector must have length `dim`.
    pub fn check_dimension(&self, dim: usize) -> bool {
        self.terms.iter().all(|t| t.wave.len() == dim)
    }

    /// Largest |k|_inf over the terms; zero for constants.
    pub fn max_frequency(&self) -> i32 {
        self.terms
            .iter()
            .flat_map(|t| t.wave.iter().map(|k| k.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Minimum and maximum over the torus: dense lattice sampling followed by
    /// damped Newton refinement from the best samples.
    pub fn extrema(&self, dim: usize) -> (f64, f64) {
        if self.is_constant() {
            let v = self.mean();
            return (v, v);
        }
        let per_dim = match dim {
            1 => 512,
            _ => 96,
        }
        .max(16 * self.max_frequency() as usize);
        let total = per_dim.pow(dim as u32);
        let mut best_min = (f64::INFINITY, vec![0.0; dim]);
        let mut best_max = (f64::NEG_INFINITY, vec![0.0; dim]);
        let mut x = vec![0.0; dim];
        for idx in 0..total {
            let mut rem = idx;
            for xi in x.iter_mut() {
                *xi = (rem % per_dim) as f64 / per_dim as f64;
                rem /= per_dim;
            }
            let v = self.value(&x);
            if v < best_min.0 {
                best_min = (v, x.clone());
            }
            if v > best_max.0 {
                best_max = (v, x.clone());
            }
        }
        let lo = self.refine(best_min.1, best_min.0, -1.0);
        let hi = self.refine(best_max.1, best_max.0, 1.0);
        (lo, hi)
    }

    // Newton ascent (sign = 1) or descent (sign = -1); only improving steps are kept.
    fn refine(&self, mut x: Vec<f64>, mut best: f64, sign: f64) -> f64 {
        let d = x.len();
        for _ in 0..30 {
            let g = self.gradient(&x);
            let h = self.hessian(&x);
            let hm = nalgebra::DMatrix::from_row_slice(d, d, &h);
            let gv = nalgebra::DVector::from_vec(g.clone());
            let step = match (-hm).lu().solve(&gv) {
                Some(s) => s,
                None => break,
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let mut v = self.value(&trial);
            if sign * (v - best) <= 0.0 {
                // Newton went the wrong way; fall back to a small gradient step.
                let gn = g.iter().map(|a| a * a).sum::<f64>().sqrt();
                if gn == 0.0 {
                    break;
                }
                trial = x
                    .iter()
                    .zip(&g)
                    .map(|(a, b)| a + sign * 1e-3 * b / gn)
                    .collect();
                v = self.value(&trial);
                if sign * (v - best) <= 0.0 {
                    break;
                }
            }
            x = trial;
            best = v;
        }
        best
    }
}
