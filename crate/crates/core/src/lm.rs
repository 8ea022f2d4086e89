//! Levenberg-Marquardt minimization of a sum of squared residuals.
//!
//! The residual function returns already-weighted residuals
//! `r_i = (model_i - data_i) / sigma_i`. The Jacobian is taken by forward
//! differences with a step of `1e-6 max(|x|, 1)`. The covariance of the
//! estimates is `(J^T J)^-1` scaled by the reduced chi-square.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Cosine between the residual vector and any Jacobian column.
    pub gradient_tolerance: f64,
    /// Relative decrease of the objective on an accepted step.
    pub objective_tolerance: f64,
    /// Relative parameter change on an accepted step.
    pub step_tolerance: f64,
    /// Objective value treated as an exact fit.
    pub objective_floor: f64,
    /// Forward-difference step, relative to `max(|x|, 1)`.
    pub fd_relative_step: f64,
    pub initial_lambda: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            objective_tolerance: 1e-12,
            step_tolerance: 1e-10,
            objective_floor: 1e-26,
            fd_relative_step: 1e-6,
            initial_lambda: 1e-3,
            lower: None,
            upper: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Objective,
    Step,
    ExactFit,
    /// Damping grew without finding a decrease.
    NoDecrease,
    MaxIterations,
}

impl Termination {
    pub fn converged(self) -> bool {
        !matches!(self, Termination::MaxIterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Row-major, `params.len()` squared entries.
    pub covariance: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    pub chi_square: f64,
    pub reduced_chi_square: f64,
    pub degrees_of_freedom: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub condition_number: f64,
    pub converged: bool,
    pub termination: Termination,
    /// Objective after the start and after each accepted step.
    pub objective_history: Vec<f64>,
}

/// Raw outcome of [`minimize`].
#[derive(Debug, Clone)]
pub struct Minimum {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Forward-difference Jacobian at `params`.
    pub jacobian: DMatrix<f64>,
    pub chi_square: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub termination: Termination,
    pub objective_history: Vec<f64>,
}

impl Minimum {
    pub fn into_result(self, covariance: Vec<Vec<f64>>, condition_number: f64) -> FitResult {
        let n = self.params.len();
        let dof = self.residuals.len() - n;
        FitResult {
            std_errors: (0..n).map(|i| covariance[i][i].max(0.0).sqrt()).collect(),
            params: self.params,
            covariance,
            chi_square: self.chi_square,
            reduced_chi_square: self.chi_square / dof as f64,
            degrees_of_freedom: dof,
            iterations: self.iterations,
            evaluations: self.evaluations,
            gradient_norm: self.gradient_norm,
            condition_number,
            converged: self.termination.converged(),
            termination: self.termination,
            objective_history: self.objective_history,
        }
    }
}

impl FitResult {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let n = self.params.len();
        DMatrix::from_fn(n, n, |i, j| self.covariance[i][j])
    }
}

fn project(x: &mut [f64], opts: &LmOptions) {
    if let Some(lo) = &opts.lower {
        for (v, l) in x.iter_mut().zip(lo) {
            *v = v.max(*l);
        }
    }
    if let Some(hi) = &opts.upper {
        for (v, h) in x.iter_mut().zip(hi) {
            *v = v.min(*h);
        }
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

struct Counter<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> Result<Vec<f64>>> Counter<F> {
    fn eval(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.evaluations += 1;
        let r = (self.f)(x)?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("residual function returned a non-finite value"));
        }
        Ok(r)
    }
}

fn jacobian<F>(f: &mut Counter<F>, x: &[f64], r0: &[f64], opts: &LmOptions) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let m = r0.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let mut h = opts.fd_relative_step * x[j].abs().max(1.0);
        if opts.upper.as_ref().is_some_and(|u| x[j] + h > u[j]) {
            h = -h;
        }
        xp[j] = x[j] + h;
        let step = xp[j] - x[j];
        let rp = f.eval(&xp)?;
        for i in 0..m {
            jac[(i, j)] = (rp[i] - r0[i]) / step;
        }
        xp[j] = x[j];
    }
    Ok(jac)
}

/// Runs the damped Gauss-Newton iteration without forming a covariance.
pub fn minimize<F>(residual_fn: F, initial: &[f64], opts: &LmOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = initial.len();
    if n == 0 {
        return Err(Error::domain("no parameters to fit"));
    }
    let mut f = Counter { f: residual_fn, evaluations: 0 };
    let mut x = initial.to_vec();
    project(&mut x, opts);
    let mut r = f.eval(&x)?;
    let m = r.len();
    if m <= n {
        return Err(Error::InsufficientData(format!("{m} residuals for {n} parameters")));
    }
    let mut cost = sum_sq(&r);
    let mut history = vec![cost];
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    let mut jac = jacobian(&mut f, &x, &r, opts)?;

    while iterations < opts.max_iterations {
        if cost <= opts.objective_floor {
            termination = Termination::ExactFit;
            break;
        }
        iterations += 1;
        let rv = DVector::from_column_slice(&r);
        let grad = jac.transpose() * &rv;
        let rnorm = rv.norm();
        let cosine = (0..n)
            .map(|j| {
                let cn = jac.column(j).norm();
                if cn == 0.0 {
                    0.0
                } else {
                    grad[j].abs() / (cn * rnorm)
                }
            })
            .fold(0.0, f64::max);
        if cosine <= opts.gradient_tolerance {
            termination = Termination::Gradient;
            break;
        }

        let jtj = jac.transpose() * &jac;
        let diag: Vec<f64> = (0..n).map(|j| jtj[(j, j)].max(1e-30)).collect();
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += lambda * diag[j];
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&grad));
            let mut x_new: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            project(&mut x_new, opts);
            let trial = f.eval(&x_new);
            let (r_new, cost_new) = match trial {
                Ok(rn) => {
                    let c = sum_sq(&rn);
                    (rn, c)
                }
                Err(_) => (Vec::new(), f64::INFINITY),
            };
            if cost_new < cost {
                let rel_drop = (cost - cost_new) / cost;
                let step_norm = x.iter().zip(&x_new).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                x = x_new;
                r = r_new;
                cost = cost_new;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                jac = jacobian(&mut f, &x, &r, opts)?;
                if rel_drop <= opts.objective_tolerance {
                    termination = Termination::Objective;
                } else if step_norm <= opts.step_tolerance * (x_norm + opts.step_tolerance) {
                    termination = Termination::Step;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            termination = Termination::NoDecrease;
            break;
        }
        if termination != Termination::MaxIterations {
            break;
        }
    }

    let gradient_norm = (jac.transpose() * DVector::from_column_slice(&r)).norm();
    Ok(Minimum {
        params: x,
        residuals: r,
        jacobian: jac,
        chi_square: cost,
        iterations,
        evaluations: f.evaluations,
        gradient_norm,
        termination,
        objective_history: history,
    })
}

/// Minimizes `sum r_i(x)^2` starting from `initial` and attaches the
/// covariance of the estimates.
///
/// Returns a result flagged `converged = false` after `max_iterations`,
/// and [`Error::RankDeficient`] when `J^T J` is singular at the solution.
pub fn levenberg_marquardt<F>(residual_fn: F, initial: &[f64], opts: &LmOptions) -> Result<FitResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let min = minimize(residual_fn, initial, opts)?;
    let (covariance, condition_number) = covariance(&min.jacobian, min.chi_square)?;
    Ok(min.into_result(covariance, condition_number))
}

/// Covariance `(J^T J)^-1 chi2 / dof` and the condition number of `J^T J`
/// after scaling every column of `J` to unit norm.
pub fn covariance(jac: &DMatrix<f64>, chi_square: f64) -> Result<(Vec<Vec<f64>>, f64)> {
    let (m, n) = jac.shape();
    if m <= n {
        return Err(Error::InsufficientData(format!("{m} residuals for {n} parameters")));
    }
    let norms: Vec<f64> = (0..n).map(|j| jac.column(j).norm()).collect();
    if norms.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::RankDeficient { condition_number: f64::INFINITY });
    }
    let scaled = DMatrix::from_fn(m, n, |i, j| jac[(i, j)] / norms[j]);
    let svd = scaled.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition_number = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
    if !(condition_number < 1e14) {
        return Err(Error::RankDeficient { condition_number });
    }
    let jtj = scaled.transpose() * &scaled;
    let Some(inv) = jtj.try_inverse() else {
        return Err(Error::RankDeficient { condition_number });
    };
    let s2 = chi_square / (m - n) as f64;
    let cov = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (inv[(i, j)] + inv[(j, i)]) * s2 / (norms[i] * norms[j])).collect())
        .collect();
    Ok((cov, condition_number))
}
