//! Rate-constant extraction from measured loss curves.
//!
//! Two models are supported:
//!
//! - [`ModelKind::LevelResolved`]: every dataset is a total-density curve
//!   `n0 + n1 + n2` of the level-resolved loss equations with known initial
//!   level fractions. `beta2` and `beta3` are shared between datasets.
//! - [`ModelKind::SingleBeta`]: `dn/dt = -beta1 n^2`.
//!
//! Rates and initial densities are optimized as logarithms so they stay
//! positive; estimates and covariances are reported in linear space. Each
//! dataset carries its own free initial density.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::gasmodel::VibrationalDistribution;
use crate::kinetics::{analytic_two_body, integrate_loss, LevelDensities, RateConstants, RateMatrix};
use crate::lm::{self, LmOptions, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// s
    pub t: f64,
    /// m^-2
    pub n: f64,
    /// m^-2; `None` means unweighted.
    pub sigma: Option<f64>,
}

/// A sampled density curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub label: String,
    samples: Vec<Sample>,
}

impl TimeSeries {
    pub fn new(label: impl Into<String>, samples: Vec<Sample>) -> Result<Self> {
        for w in samples.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::domain(format!("sample times not strictly increasing at t = {}", w[1].t)));
            }
        }
        for s in &samples {
            ensure_non_negative("t", s.t)?;
            ensure_non_negative("n", s.n)?;
            if let Some(sig) = s.sigma {
                ensure_positive("sigma", sig)?;
            }
        }
        Ok(TimeSeries { label: label.into(), samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.n).collect()
    }

    /// Rescales densities and uncertainties by `c`.
    pub fn scaled(&self, c: f64) -> TimeSeries {
        TimeSeries {
            label: self.label.clone(),
            samples: self
                .samples
                .iter()
                .map(|s| Sample { t: s.t, n: s.n * c, sigma: s.sigma.map(|v| v * c) })
                .collect(),
        }
    }

    fn weights(&self) -> Vec<f64> {
        let fallback = self.samples.iter().map(|s| s.n).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        self.samples.iter().map(|s| 1.0 / s.sigma.unwrap_or(fallback)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LevelResolved,
    SingleBeta,
}

/// One curve with the initial level fractions it was prepared with.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub series: TimeSeries,
    /// Ignored for [`ModelKind::SingleBeta`].
    pub distribution: VibrationalDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    pub datasets: Vec<Dataset>,
    pub model: ModelKind,
}

/// Estimates in linear space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: ModelKind,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub chi_square: f64,
    pub reduced_chi_square: f64,
    pub degrees_of_freedom: usize,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub condition_number: f64,
    pub converged: bool,
    pub termination: Termination,
    pub objective_history: Vec<f64>,
}

impl RateFit {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.estimates[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.std_errors[i])
    }
}

const FIT_REL_TOL: f64 = 1e-10;

impl FitProblem {
    fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::InsufficientData("no datasets".into()));
        }
        let rates = match self.model {
            ModelKind::LevelResolved => 2,
            ModelKind::SingleBeta => 1,
        };
        if self.model == ModelKind::SingleBeta && self.datasets.len() != 1 {
            return Err(Error::domain("single-beta model takes exactly one dataset"));
        }
        for d in &self.datasets {
            if d.series.len() < 3 || d.series.len() <= rates + 1 {
                return Err(Error::InsufficientData(format!(
                    "dataset '{}' has {} points",
                    d.series.label,
                    d.series.len()
                )));
            }
            if d.series.values().iter().all(|&n| n == 0.0) {
                return Err(Error::InsufficientData(format!("dataset '{}' is all zero", d.series.label)));
            }
        }
        Ok(())
    }

    fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = match self.model {
            ModelKind::LevelResolved => vec!["beta2".into(), "beta3".into()],
            ModelKind::SingleBeta => vec!["beta1".into()],
        };
        for d in &self.datasets {
            names.push(format!("n0[{}]", d.series.label));
        }
        names
    }

    /// Initial density reference per dataset: the first sample.
    fn density_refs(&self) -> Vec<f64> {
        self.datasets
            .iter()
            .map(|d| {
                let first = d.series.samples()[0].n;
                if first > 0.0 {
                    first
                } else {
                    d.series.values().into_iter().fold(0.0, f64::max)
                }
            })
            .collect()
    }

    fn model_curve(&self, d: &Dataset, rates: &[f64], n_start: f64) -> Result<Vec<f64>> {
        let times = d.series.times();
        match self.model {
            ModelKind::SingleBeta => Ok(times.iter().map(|&t| analytic_two_body(n_start, rates[0], t)).collect()),
            ModelKind::LevelResolved => {
                let levels = d.distribution.levels();
                let matrix = RateMatrix::from_channels(levels, rates[0], rates[1]);
                let n0 = LevelDensities::from_distribution(n_start, &d.distribution)?;
                let traj = integrate_loss(&n0, &matrix, &times, FIT_REL_TOL, 1e-12 * n_start)?;
                Ok(traj.totals())
            }
        }
    }

    /// Fits the problem starting from rates `init` (all positive), given in
    /// the model's order: `[beta2, beta3]` or `[beta1]`.
    pub fn solve(&self, init: &[f64], options: &LmOptions) -> Result<RateFit> {
        self.validate()?;
        let n_rates = self.names().len() - self.datasets.len();
        if init.len() != n_rates {
            return Err(Error::domain(format!("expected {n_rates} initial rates, got {}", init.len())));
        }
        for &b in init {
            ensure_positive("initial rate", b)?;
        }
        let refs = self.density_refs();
        let scales: Vec<f64> = init.iter().copied().chain(refs.iter().copied()).collect();
        let weights: Vec<Vec<f64>> = self.datasets.iter().map(|d| d.series.weights()).collect();

        let residuals_lin = |lin: &[f64]| -> Result<Vec<f64>> {
            let rates = &lin[..n_rates];
            let parts: Vec<Vec<f64>> = self
                .datasets
                .par_iter()
                .enumerate()
                .map(|(k, d)| -> Result<Vec<f64>> {
                    let model = self.model_curve(d, rates, lin[n_rates + k])?;
                    Ok(model.iter().zip(d.series.samples()).zip(&weights[k]).map(|((m, s), w)| (m - s.n) * w).collect())
                })
                .collect::<Result<_>>()?;
            Ok(parts.concat())
        };
        let to_linear = |p: &[f64]| -> Vec<f64> { p.iter().zip(&scales).map(|(u, s)| s * u.exp()).collect() };

        let start = vec![0.0; scales.len()];
        let min = lm::minimize(|p: &[f64]| residuals_lin(&to_linear(p)), &start, options)?;
        let estimates = to_linear(&min.params);

        // Linear-space Jacobian with steps tied to the starting scale, so a
        // rate driven towards zero keeps a usable column.
        let mut jac_lin = DMatrix::zeros(min.residuals.len(), estimates.len());
        let mut xp = estimates.clone();
        for j in 0..estimates.len() {
            let h = options.fd_relative_step * estimates[j].abs().max(scales[j]);
            xp[j] = estimates[j] + h;
            let rp = residuals_lin(&xp)?;
            for (i, (a, b)) in rp.iter().zip(&min.residuals).enumerate() {
                jac_lin[(i, j)] = (a - b) / h;
            }
            xp[j] = estimates[j];
        }
        let (covariance, condition_number) = lm::covariance(&jac_lin, min.chi_square)?;
        let std_errors = (0..estimates.len()).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
        let dof = min.residuals.len() - estimates.len();
        Ok(RateFit {
            model: self.model,
            names: self.names(),
            estimates,
            std_errors,
            covariance,
            chi_square: min.chi_square,
            reduced_chi_square: min.chi_square / dof as f64,
            degrees_of_freedom: dof,
            iterations: min.iterations,
            gradient_norm: min.gradient_norm,
            condition_number,
            converged: min.termination.converged(),
            termination: min.termination,
            objective_history: min.objective_history,
        })
    }
}

/// Simultaneous fit of a thermal and a heated loss curve for
/// `(beta2, beta3)` with fixed initial level fractions.
pub fn fit_dual_curves(
    ts_thermal: &TimeSeries,
    ts_heated: &TimeSeries,
    dist_thermal: &VibrationalDistribution,
    dist_heated: &VibrationalDistribution,
    init: &RateConstants,
) -> Result<RateFit> {
    for ts in [ts_thermal, ts_heated] {
        if ts.len() < 3 {
            return Err(Error::InsufficientData(format!("'{}' has {} points, need at least 3", ts.label, ts.len())));
        }
    }
    let problem = FitProblem {
        datasets: vec![
            Dataset { series: ts_thermal.clone(), distribution: dist_thermal.clone() },
            Dataset { series: ts_heated.clone(), distribution: dist_heated.clone() },
        ],
        model: ModelKind::LevelResolved,
    };
    problem.solve(&[init.beta2, init.beta3], &LmOptions::default())
}

/// Fits `n(t) = n0 / (1 + beta1 n0 t)` with `n0` and `beta1` free.
pub fn fit_single_beta(ts: &TimeSeries) -> Result<RateFit> {
    if ts.len() < 3 {
        return Err(Error::InsufficientData(format!("'{}' has {} points, need at least 3", ts.label, ts.len())));
    }
    let s = ts.samples();
    let (first, last) = (s[0], s[s.len() - 1]);
    let span = last.t - first.t;
    let guess = if first.n > 0.0 && last.n > 0.0 && last.n < first.n {
        (1.0 / last.n - 1.0 / first.n) / span
    } else {
        let n = first.n.max(last.n).max(f64::MIN_POSITIVE);
        1e-3 / (n * span)
    };
    let problem = FitProblem {
        datasets: vec![Dataset { series: ts.clone(), distribution: VibrationalDistribution::ground(1) }],
        model: ModelKind::SingleBeta,
    };
    problem.solve(&[guess], &LmOptions::default())
}

/// Samples the level-resolved model at `times` and applies multiplicative
/// Gaussian noise, `n = n_model (1 + noise_fraction z)`, with
/// `sigma = noise_fraction n_model`. Zero noise gives unweighted samples.
pub fn synthesize_dataset(
    label: &str,
    rates: &RateMatrix,
    dist: &VibrationalDistribution,
    n_tot0: f64,
    times: &[f64],
    noise_fraction: f64,
    seed: u64,
) -> Result<TimeSeries> {
    ensure_non_negative("noise_fraction", noise_fraction)?;
    let n0 = LevelDensities::from_distribution(n_tot0, dist)?;
    let traj = integrate_loss(&n0, rates, times, 1e-12, 1e-14 * n_tot0.max(f64::MIN_POSITIVE))?;
    apply_noise(label, times, &traj.totals(), noise_fraction, seed)
}

/// Closed-form single-rate counterpart of [`synthesize_dataset`].
pub fn synthesize_two_body(
    label: &str,
    n0: f64,
    beta: f64,
    times: &[f64],
    noise_fraction: f64,
    seed: u64,
) -> Result<TimeSeries> {
    ensure_non_negative("noise_fraction", noise_fraction)?;
    let model: Vec<f64> = times.iter().map(|&t| analytic_two_body(n0, beta, t)).collect();
    apply_noise(label, times, &model, noise_fraction, seed)
}

fn apply_noise(label: &str, times: &[f64], model: &[f64], noise_fraction: f64, seed: u64) -> Result<TimeSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let samples = times
        .iter()
        .zip(model)
        .map(|(&t, &m)| {
            if noise_fraction == 0.0 {
                Sample { t, n: m, sigma: None }
            } else {
                let z: f64 = normal.sample(&mut rng);
                Sample { t, n: (m * (1.0 + noise_fraction * z)).max(0.0), sigma: Some(noise_fraction * m) }
            }
        })
        .collect();
    TimeSeries::new(label, samples)
}
