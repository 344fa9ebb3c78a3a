//! Minimization of the empirical exponential objective
//!
//! ```text
//! Ψ̃(c) = (1/N) Σ_i exp(−γ Σ_{j,r} c_{jr} f_r(Z^i) g^i_j + E_i)
//! ```
//!
//! over the basis coefficients `c`, where `g^i_j` is the gain per unit of
//! coefficient on asset `j` along path `i` and `E_i` is the carried exponent.
//! `log Ψ̃` is a log-sum-exp of affine functions, hence convex; it is what the
//! Newton iteration works on.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Paths per reduction leaf. Partial sums are combined in leaf order, so the
/// result does not depend on the number of threads.
const CHUNK: usize = 2048;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;
/// Relative size of a change in `log Ψ̃` that rounding can hide.
const RESOLUTION: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveData<'a> {
    features: &'a [f64],
    increments: &'a [f64],
    carry: &'a [f64],
    n: usize,
    width: usize,
    assets: usize,
    gamma: f64,
}

impl<'a> ObjectiveData<'a> {
    /// `features` is `[N][R]`, `increments` is `[N][d]` (gain per unit of
    /// coefficient), `carry` is `[N]`.
    pub fn new(
        features: &'a [f64],
        width: usize,
        increments: &'a [f64],
        assets: usize,
        carry: &'a [f64],
        gamma: f64,
    ) -> Result<Self> {
        let n = carry.len();
        if n == 0 || width == 0 || assets == 0 {
            return Err(Error::EmptySample(1));
        }
        if features.len() != n * width {
            return Err(Error::DimensionMismatch {
                expected: n * width,
                got: features.len(),
            });
        }
        if increments.len() != n * assets {
            return Err(Error::DimensionMismatch {
                expected: n * assets,
                got: increments.len(),
            });
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "risk aversion must be positive, got {gamma}"
            )));
        }
        if features.iter().chain(increments).chain(carry).any(|x| !x.is_finite()) {
            return Err(Error::DegenerateData("non-finite objective data".into()));
        }
        Ok(Self {
            features,
            increments,
            carry,
            n,
            width,
            assets,
            gamma,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.n
    }

    /// Number of coefficients, `d · R`.
    pub fn dim(&self) -> usize {
        self.width * self.assets
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `Σ_{j,r} c_{jr} f_r(Z^i) g^i_j`, the gain along path `i`.
    pub fn gain(&self, i: usize, coeffs: &[f64]) -> f64 {
        let f = &self.features[i * self.width..(i + 1) * self.width];
        let g = &self.increments[i * self.assets..(i + 1) * self.assets];
        g.iter()
            .zip(coeffs.chunks_exact(self.width))
            .map(|(gj, cj)| gj * cj.iter().zip(f).map(|(c, f)| c * f).sum::<f64>())
            .sum()
    }

    fn design_row(&self, i: usize, out: &mut [f64]) {
        let f = &self.features[i * self.width..(i + 1) * self.width];
        let g = &self.increments[i * self.assets..(i + 1) * self.assets];
        for (j, gj) in g.iter().enumerate() {
            for (r, fr) in f.iter().enumerate() {
                out[j * self.width + r] = gj * fr;
            }
        }
    }

    fn exponents(&self, coeffs: &[f64]) -> Vec<f64> {
        (0..self.n)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|i| -self.gamma * self.gain(i, coeffs) + self.carry[i])
            .collect()
    }

    fn check_coeffs(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: coeffs.len(),
            });
        }
        Ok(())
    }
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `Ψ̃` in linear scale together with `log Ψ̃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub log_value: f64,
}

pub fn log_objective(data: &ObjectiveData<'_>, coeffs: &[f64]) -> Result<f64> {
    data.check_coeffs(coeffs)?;
    let e = data.exponents(coeffs);
    let shift = max_of(&e);
    if !shift.is_finite() {
        return Err(Error::Overflow(shift));
    }
    let sum: f64 = e
        .par_chunks(CHUNK)
        .map(|c| c.iter().map(|x| (x - shift).exp()).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(shift + (sum / data.n as f64).ln())
}

pub fn objective(data: &ObjectiveData<'_>, coeffs: &[f64]) -> Result<ObjectiveValue> {
    let log_value = log_objective(data, coeffs)?;
    let value = log_value.exp();
    if !value.is_finite() {
        return Err(Error::Overflow(log_value));
    }
    Ok(ObjectiveValue { value, log_value })
}

/// Value, gradient and Hessian of `log Ψ̃`.
#[derive(Debug, Clone)]
pub struct LogDerivatives {
    pub log_value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

pub fn log_derivatives(data: &ObjectiveData<'_>, coeffs: &[f64]) -> Result<LogDerivatives> {
    data.check_coeffs(coeffs)?;
    let p = data.dim();
    let e = data.exponents(coeffs);
    let shift = max_of(&e);
    if !shift.is_finite() {
        return Err(Error::Overflow(shift));
    }
    // Per leaf: Σw, Σw·a, Σw·a·aᵀ (upper triangle) with w = exp(e − shift).
    let leaves: Vec<(f64, Vec<f64>, Vec<f64>)> = e
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(leaf, chunk)| {
            let mut s0 = 0.0;
            let mut s1 = vec![0.0; p];
            let mut s2 = vec![0.0; p * p];
            let mut a = vec![0.0; p];
            for (off, ei) in chunk.iter().enumerate() {
                let w = (ei - shift).exp();
                data.design_row(leaf * CHUNK + off, &mut a);
                s0 += w;
                for u in 0..p {
                    let wa = w * a[u];
                    s1[u] += wa;
                    for v in u..p {
                        s2[u * p + v] += wa * a[v];
                    }
                }
            }
            (s0, s1, s2)
        })
        .collect();
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = vec![0.0; p * p];
    for (l0, l1, l2) in leaves {
        s0 += l0;
        s1.iter_mut().zip(&l1).for_each(|(x, y)| *x += y);
        s2.iter_mut().zip(&l2).for_each(|(x, y)| *x += y);
    }
    let g = data.gamma;
    let mean: Vec<f64> = s1.iter().map(|x| x / s0).collect();
    let gradient = DVector::from_iterator(p, mean.iter().map(|m| -g * m));
    let mut hessian = DMatrix::zeros(p, p);
    for u in 0..p {
        for v in u..p {
            let h = g * g * (s2[u * p + v] / s0 - mean[u] * mean[v]);
            hessian[(u, v)] = h;
            hessian[(v, u)] = h;
        }
    }
    Ok(LogDerivatives {
        log_value: shift + (s0 / data.n as f64).ln(),
        gradient,
        hessian,
    })
}

/// Gradient and Hessian of `Ψ̃` itself (linear scale).
pub fn gradient_hessian(data: &ObjectiveData<'_>, coeffs: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = log_derivatives(data, coeffs)?;
    let psi = d.log_value.exp();
    if !psi.is_finite() {
        return Err(Error::Overflow(d.log_value));
    }
    let grad = &d.gradient * psi;
    let hess = (&d.hessian + &d.gradient * d.gradient.transpose()) * psi;
    Ok((grad, hess))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Bound on `‖∇ log Ψ̃‖`, i.e. the gradient relative to `Ψ̃`.
    pub tol_g: f64,
    pub tol_x: f64,
    pub max_iter: usize,
    /// Coefficient norm beyond which a descent ray is declared unbounded.
    pub coeff_cap: f64,
    /// Ridge multiplier: `ε = ridge · trace(H) / dim`.
    pub ridge: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_g: 1e-8,
            tol_x: 1e-10,
            max_iter: 100,
            coeff_cap: 1e3,
            ridge: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimStatus {
    Converged,
    MaxIter,
    Unbounded,
    /// Converged after a ridge term was needed to factor the Hessian.
    Regularized,
}

impl OptimStatus {
    pub fn is_success(self) -> bool {
        matches!(self, OptimStatus::Converged | OptimStatus::Regularized)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptimStatus::Converged => "converged",
            OptimStatus::MaxIter => "max_iter",
            OptimStatus::Unbounded => "unbounded",
            OptimStatus::Regularized => "regularized",
        }
    }
}

impl std::str::FromStr for OptimStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "converged" => Ok(OptimStatus::Converged),
            "max_iter" => Ok(OptimStatus::MaxIter),
            "unbounded" => Ok(OptimStatus::Unbounded),
            "regularized" => Ok(OptimStatus::Regularized),
            _ => Err(Error::Parse(format!("unknown optimizer status `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    /// `[d][R]`, row-major by asset.
    pub coefficients: Vec<f64>,
    pub objective_value: f64,
    pub log_objective: f64,
    /// `‖∇ log Ψ̃‖₂` at the returned point.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub status: OptimStatus,
}

/// Solves `H p = −g`, adding `ε·I` when `H` cannot be factored.
fn newton_direction(hessian: &DMatrix<f64>, gradient: &DVector<f64>, ridge: f64) -> Option<(DVector<f64>, bool)> {
    if let Some(ch) = hessian.clone().cholesky() {
        let p = ch.solve(&(-gradient));
        if p.iter().all(|x| x.is_finite()) {
            return Some((p, false));
        }
    }
    let dim = hessian.nrows();
    let trace = hessian.trace();
    let mut eps = if trace > 0.0 { ridge * trace / dim as f64 } else { ridge };
    if eps <= 0.0 {
        eps = f64::MIN_POSITIVE;
    }
    for _ in 0..40 {
        let shifted = hessian + DMatrix::identity(dim, dim) * eps;
        if let Some(ch) = shifted.cholesky() {
            let p = ch.solve(&(-gradient));
            if p.iter().all(|x| x.is_finite()) {
                return Some((p, true));
            }
        }
        eps *= 10.0;
    }
    None
}

/// Damped Newton with Armijo backtracking on `log Ψ̃`, started from `init`
/// (zeros when `None`).
pub fn minimize(data: &ObjectiveData<'_>, opts: &SolverOptions, init: Option<&[f64]>) -> Result<OptimResult> {
    let p = data.dim();
    let mut c = match init {
        Some(c0) => {
            data.check_coeffs(c0)?;
            c0.to_vec()
        }
        None => vec![0.0; p],
    };
    let mut regularized = false;
    let mut current = log_derivatives(data, &c)?;
    let finish = |c: Vec<f64>, d: &LogDerivatives, iterations, status| OptimResult {
        coefficients: c,
        objective_value: d.log_value.exp(),
        log_objective: d.log_value,
        gradient_norm: d.gradient.norm(),
        iterations,
        status,
    };
    let converged = |reg: bool| {
        if reg {
            OptimStatus::Regularized
        } else {
            OptimStatus::Converged
        }
    };

    for iter in 0..opts.max_iter {
        if current.gradient.norm() <= opts.tol_g {
            return Ok(finish(c, &current, iter, converged(regularized)));
        }
        let (dir, ridged) = newton_direction(&current.hessian, &current.gradient, opts.ridge)
            .ok_or_else(|| Error::DegenerateData("Hessian could not be regularized".into()))?;
        regularized |= ridged;
        let slope = current.gradient.dot(&dir);
        if !(slope < 0.0) {
            // Rounding has erased the descent; nothing more to gain here.
            let status = if current.gradient.norm() <= opts.tol_g {
                converged(regularized)
            } else {
                OptimStatus::MaxIter
            };
            return Ok(finish(c, &current, iter, status));
        }
        let mut t = 1.0;
        let mut trial;
        if -slope <= RESOLUTION * (1.0 + current.log_value.abs()) {
            // The predicted decrease is below what log Ψ̃ can resolve, so
            // Armijo would reject every step. Take the full step and let the
            // gradient test decide.
            trial = c.iter().zip(dir.iter()).map(|(a, b)| a + b).collect::<Vec<_>>();
            let next = log_derivatives(data, &trial)?;
            if next.gradient.norm() >= current.gradient.norm() {
                let status = if current.gradient.norm() <= opts.tol_g {
                    converged(regularized)
                } else {
                    OptimStatus::MaxIter
                };
                return Ok(finish(c, &current, iter, status));
            }
            c = trial;
            current = next;
            continue;
        }
        loop {
            trial = c.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect::<Vec<_>>();
            match log_objective(data, &trial) {
                Ok(v) if v <= current.log_value + ARMIJO * t * slope => break,
                Ok(_) | Err(Error::Overflow(_)) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
            if t < MIN_STEP {
                let status = if current.gradient.norm() <= opts.tol_g {
                    converged(regularized)
                } else {
                    OptimStatus::MaxIter
                };
                return Ok(finish(c, &current, iter, status));
            }
        }
        let step_norm = t * dir.norm();
        c = trial;
        current = log_derivatives(data, &c)?;
        let cnorm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if cnorm > opts.coeff_cap {
            return Ok(finish(c, &current, iter + 1, OptimStatus::Unbounded));
        }
        if step_norm <= opts.tol_x * (1.0 + cnorm) {
            let status = if current.gradient.norm() <= opts.tol_g {
                converged(regularized)
            } else {
                OptimStatus::MaxIter
            };
            return Ok(finish(c, &current, iter + 1, status));
        }
    }
    let status = if current.gradient.norm() <= opts.tol_g {
        converged(regularized)
    } else {
        OptimStatus::MaxIter
    };
    Ok(finish(c, &current, opts.max_iter, status))
}
