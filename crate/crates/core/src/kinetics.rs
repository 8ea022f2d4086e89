//! Two-body loss kinetics of molecules spread over lattice levels.
//!
//! Level densities obey
//!
//! ```text
//! dn_v/dt = -beta_vv n_v^2 - sum_{w != v} beta_vw n_v n_w
//! ```
//!
//! where the intralevel coefficient carries no extra factor of two. With
//! `beta_vv = beta3` and `beta_vw = beta2` this is the three-level model
//! used for the lattice loss curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::gasmodel::{LayerStack, VibrationalDistribution};
use crate::ode::{self, OdeOptions, OdeStats};

/// Default absolute tolerance for density integrations, 1e-3 cm^-2.
pub const DEFAULT_ABS_TOL: f64 = 1e-3 * 1e4;
pub const DEFAULT_REL_TOL: f64 = 1e-8;

/// Loss coefficients of the three collision channels, m^2/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    /// `|1>`, distinct internal states.
    pub beta1: f64,
    /// `|2>`, same internal state, different levels.
    pub beta2: f64,
    /// `|3>`, same internal state, same level.
    pub beta3: f64,
}

impl RateConstants {
    pub fn new(beta1: f64, beta2: f64, beta3: f64) -> Result<Self> {
        ensure_non_negative("beta1", beta1)?;
        ensure_non_negative("beta2", beta2)?;
        ensure_non_negative("beta3", beta3)?;
        Ok(RateConstants { beta1, beta2, beta3 })
    }

    pub fn level_matrix(&self, levels: usize) -> RateMatrix {
        RateMatrix::from_channels(levels, self.beta2, self.beta3)
    }
}

/// Symmetric matrix of level-pair loss coefficients `beta_{v1,v2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateMatrix {
    levels: usize,
    data: Vec<f64>,
}

impl RateMatrix {
    /// Builds from row-major entries, checking symmetry and signs.
    pub fn new(levels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != levels * levels || levels == 0 {
            return Err(Error::domain(format!("rate matrix needs {levels}x{levels} entries, got {}", data.len())));
        }
        for i in 0..levels {
            for j in 0..levels {
                let b = data[i * levels + j];
                ensure_non_negative(&format!("beta[{i},{j}]"), b)?;
                if b != data[j * levels + i] {
                    return Err(Error::domain(format!("rate matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(RateMatrix { levels, data })
    }

    /// `beta3` on the diagonal, `beta2` elsewhere.
    pub fn from_channels(levels: usize, beta2: f64, beta3: f64) -> Self {
        let data = (0..levels * levels).map(|k| if k / levels == k % levels { beta3 } else { beta2 }).collect();
        RateMatrix { levels, data }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn get(&self, v: usize, w: usize) -> f64 {
        self.data[v * self.levels + w]
    }

    pub fn scaled(&self, c: f64) -> Self {
        RateMatrix { levels: self.levels, data: self.data.iter().map(|b| b * c).collect() }
    }

    fn derivative(&self, n: &[f64], dn: &mut [f64]) {
        let k = self.levels;
        for v in 0..k {
            let row = &self.data[v * k..(v + 1) * k];
            let partner: f64 = row.iter().zip(n).map(|(b, m)| b * m).sum();
            dn[v] = -n[v] * partner;
        }
    }
}

/// Densities per level (m^-2) at time `time` (s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDensities {
    pub densities: Vec<f64>,
    pub time: f64,
}

impl LevelDensities {
    pub fn new(densities: Vec<f64>, time: f64) -> Result<Self> {
        for (v, &n) in densities.iter().enumerate() {
            ensure_non_negative(&format!("n_{v}"), n)?;
        }
        Ok(LevelDensities { densities, time })
    }

    /// Splits a total density over levels according to `dist`.
    pub fn from_distribution(total: f64, dist: &VibrationalDistribution) -> Result<Self> {
        ensure_non_negative("total density", total)?;
        LevelDensities::new(dist.fractions().iter().map(|f| f * total).collect(), 0.0)
    }

    pub fn total(&self) -> f64 {
        self.densities.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<LevelDensities>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub steps: usize,
    pub rejected_steps: usize,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.samples.iter().map(LevelDensities::total).collect()
    }
}

fn check_levels(n: &LevelDensities, rates: &RateMatrix) -> Result<()> {
    if n.densities.len() != rates.levels() {
        return Err(Error::domain(format!(
            "{} level densities but a {}-level rate matrix",
            n.densities.len(),
            rates.levels()
        )));
    }
    Ok(())
}

/// Time derivatives of the level densities, m^-2 s^-1.
pub fn loss_rhs(n: &LevelDensities, rates: &RateMatrix) -> Result<Vec<f64>> {
    check_levels(n, rates)?;
    for (v, &d) in n.densities.iter().enumerate() {
        ensure_non_negative(&format!("n_{v}"), d)?;
    }
    let mut dn = vec![0.0; n.densities.len()];
    rates.derivative(&n.densities, &mut dn);
    Ok(dn)
}

/// Integrates the loss equations from `n0` and samples at `times`, which
/// must be strictly increasing and not before `n0.time`.
pub fn integrate_loss(
    n0: &LevelDensities,
    rates: &RateMatrix,
    times: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Trajectory> {
    check_levels(n0, rates)?;
    ensure_positive("rel_tol", rel_tol)?;
    ensure_positive("abs_tol", abs_tol)?;
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("sample times must be strictly increasing"));
    }
    let opts = OdeOptions::with_tolerances(rel_tol, abs_tol);
    let sol = ode::integrate(|_, n, dn| rates.derivative(n, dn), n0.time, &n0.densities, times, &opts)?;
    let OdeStats { accepted, rejected, .. } = sol.stats;
    Ok(Trajectory {
        samples: sol
            .times
            .into_iter()
            .zip(sol.states)
            .map(|(time, densities)| LevelDensities { densities, time })
            .collect(),
        rel_tol,
        abs_tol,
        steps: accepted,
        rejected_steps: rejected,
    })
}

/// Closed-form solution of `dn/dt = -beta n^2`.
pub fn analytic_two_body(n0: f64, beta: f64, t: f64) -> f64 {
    n0 / (1.0 + beta * n0 * t)
}

/// Initial loss coefficient of a level mixture,
/// `beta3 sum f^2 + beta2 sum_{v != w} f_v f_w`.
pub fn effective_initial_rate(dist: &VibrationalDistribution, beta2: f64, beta3: f64) -> f64 {
    let same = dist.same_level_probability();
    beta3 * same + beta2 * (1.0 - same)
}

/// `beta_3D = sqrt(pi) a_ho beta_2D`.
pub fn convert_beta_2d_to_3d(beta2d: f64, a_ho: f64) -> Result<f64> {
    ensure_non_negative("beta2d", beta2d)?;
    ensure_positive("a_ho", a_ho)?;
    Ok(std::f64::consts::PI.sqrt() * a_ho * beta2d)
}

pub fn convert_beta_3d_to_2d(beta3d: f64, a_ho: f64) -> Result<f64> {
    ensure_non_negative("beta3d", beta3d)?;
    ensure_positive("a_ho", a_ho)?;
    Ok(beta3d / (std::f64::consts::PI.sqrt() * a_ho))
}

/// Output of [`simulate_layer_resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerResolved {
    pub times: Vec<f64>,
    pub layer_index: Vec<i32>,
    /// `numbers[layer][sample]`, molecules per layer.
    pub numbers: Vec<Vec<f64>>,
    /// `(sum N_j)^2 / sum N_j^2` at each sample.
    pub alpha: Vec<f64>,
    /// Trapezoid average of `alpha` over the sampled window.
    pub time_averaged_alpha: f64,
}

impl LayerResolved {
    pub fn total_numbers(&self) -> Vec<f64> {
        (0..self.times.len()).map(|k| self.numbers.iter().map(|n| n[k]).sum()).collect()
    }
}

/// Integrates each layer independently. A layer holding `N_j` molecules
/// starts at level densities `N_j f(v) / (4 pi sigma_r^2)`, i.e. each layer
/// is treated with an effective layer number of one.
pub fn simulate_layer_resolved(
    stack: &LayerStack,
    dist: &VibrationalDistribution,
    rates: &RateMatrix,
    sigma_r: f64,
    times: &[f64],
) -> Result<LayerResolved> {
    ensure_positive("sigma_r", sigma_r)?;
    if times.len() < 2 {
        return Err(Error::domain("layer simulation needs at least two sample times"));
    }
    if dist.levels() != rates.levels() {
        return Err(Error::domain("distribution and rate matrix disagree on the number of levels"));
    }
    let area = 4.0 * std::f64::consts::PI * sigma_r * sigma_r;
    let t0 = times[0];
    let numbers: Vec<Vec<f64>> = stack
        .layers
        .par_iter()
        .map(|&(_, count)| -> Result<Vec<f64>> {
            let mut n0 = LevelDensities::from_distribution(count / area, dist)?;
            n0.time = t0;
            if count == 0.0 {
                return Ok(vec![0.0; times.len()]);
            }
            let tol = DEFAULT_ABS_TOL.min(1e-12 * n0.total());
            let traj = integrate_loss(&n0, rates, times, DEFAULT_REL_TOL, tol)?;
            Ok(traj.totals().into_iter().map(|n| n * area).collect())
        })
        .collect::<Result<_>>()?;

    let alpha: Vec<f64> = (0..times.len())
        .map(|k| {
            let sum: f64 = numbers.iter().map(|n| n[k]).sum();
            let sum_sq: f64 = numbers.iter().map(|n| n[k] * n[k]).sum();
            if sum_sq > 0.0 {
                sum * sum / sum_sq
            } else {
                f64::NAN
            }
        })
        .collect();
    let time_averaged_alpha = trapezoid_mean(times, &alpha);
    Ok(LayerResolved {
        times: times.to_vec(),
        layer_index: stack.layers.iter().map(|&(j, _)| j).collect(),
        numbers,
        alpha,
        time_averaged_alpha,
    })
}

fn trapezoid_mean(x: &[f64], y: &[f64]) -> f64 {
    let area: f64 = x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum();
    area / (x[x.len() - 1] - x[0])
}

/// `1 / (beta n)`, the time for a single-rate gas to halve its density.
pub fn characteristic_time(beta: f64, density: f64) -> Result<f64> {
    ensure_positive("beta", beta)?;
    ensure_positive("density", density)?;
    Ok(1.0 / (beta * density))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gasmodel::{boltzmann_occupancy, gaussian_layer_stack_default};
    use crate::units;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn three(n: [f64; 3]) -> LevelDensities {
        LevelDensities::new(n.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn rhs_examples() {
        let r = RateMatrix::from_channels(3, 2.0, 1.0);
        let d = loss_rhs(&three([4.0, 0.0, 0.0]), &r).unwrap();
        assert_eq!(d, vec![-16.0, 0.0, 0.0]);
        assert_eq!(loss_rhs(&three([1.0, 1.0, 1.0]), &r).unwrap(), vec![-5.0; 3]);

        let r = RateMatrix::from_channels(3, units::cm2_per_s(8e-9), units::cm2_per_s(2e-9));
        let n = three([3e7, 2e7, 1e7].map(units::per_cm2));
        let d = loss_rhs(&n, &r).unwrap();
        assert_relative_eq!(units::to_per_cm2(d[0]), -9.0e6, max_relative = 1e-12);
        assert!(loss_rhs(&LevelDensities { densities: vec![-1.0, 0.0, 0.0], time: 0.0 }, &r).is_err());
    }

    #[test]
    fn rate_matrix_validation() {
        assert!(RateMatrix::new(2, vec![1.0, 2.0, 3.0, 1.0]).is_err());
        assert!(RateMatrix::new(2, vec![1.0, -2.0, -2.0, 1.0]).is_err());
        assert!(RateMatrix::new(2, vec![1.0, 2.0, 2.0, 1.0]).is_ok());
    }

    #[test]
    fn single_level_matches_closed_form() {
        let (n0, beta) = (2.5, 0.4);
        let tau = 1.0 / (beta * n0);
        let times: Vec<f64> = (1..=50).map(|i| i as f64 * 0.2 * tau).collect();
        let rates = RateMatrix::new(1, vec![beta]).unwrap();
        let traj = integrate_loss(&LevelDensities::new(vec![n0], 0.0).unwrap(), &rates, &times, 1e-10, 1e-14).unwrap();
        for s in &traj.samples {
            let exact = analytic_two_body(n0, beta, s.time);
            assert!(((s.densities[0] - exact) / exact).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_rates_constant() {
        let rates = RateMatrix::from_channels(3, 0.0, 0.0);
        let traj = integrate_loss(&three([1.0, 2.0, 3.0]), &rates, &[1.0, 2.0, 100.0], 1e-8, 1e-12).unwrap();
        for s in traj.samples {
            assert_eq!(s.densities, vec![1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn equal_rates_reduce_to_one_level() {
        // beta2 = beta3 = beta: total density obeys dn/dt = -beta n^2
        let beta = 0.7;
        let rates = RateMatrix::from_channels(2, beta, beta);
        let times: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let traj =
            integrate_loss(&LevelDensities::new(vec![0.5, 0.5], 0.0).unwrap(), &rates, &times, 1e-10, 1e-14).unwrap();
        for s in &traj.samples {
            let exact = analytic_two_body(1.0, beta, s.time);
            assert!((s.total() - exact).abs() / exact < 1e-6);
        }
    }

    #[test]
    fn integrate_rejects_bad_times() {
        let rates = RateMatrix::from_channels(3, 1.0, 1.0);
        assert!(integrate_loss(&three([1.0; 3]), &rates, &[1.0, 1.0], 1e-8, 1e-8).is_err());
        assert!(integrate_loss(&three([1.0; 3]), &rates, &[1.0], 0.0, 1e-8).is_err());
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(analytic_two_body(3.0, 2.0, 0.0), 3.0);
        assert_eq!(analytic_two_body(1.0, 1.0, 1.0), 0.5);
        for n0 in [1e3, 1e7, 5e11] {
            for beta in [1e-12, 1e-9, 3e-7] {
                let half = 1.0 / (beta * n0);
                assert_relative_eq!(analytic_two_body(n0, beta, half), n0 / 2.0, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn initial_rate_examples() {
        let (b2, b3) = (8.0, 1.0);
        assert_eq!(effective_initial_rate(&VibrationalDistribution::ground(3), b2, b3), b3);
        let half = VibrationalDistribution::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert_relative_eq!(effective_initial_rate(&half, b2, b3), 0.5 * b3 + 0.5 * b2);
        let thermal = boltzmann_occupancy(800e-9, 23e3, 2).unwrap();
        let s: f64 = thermal.fractions().iter().map(|f| f * f).sum();
        assert!((s - 0.599).abs() < 1e-3);
        assert_relative_eq!(effective_initial_rate(&thermal, b2, b3), s * b3 + (1.0 - s) * b2, max_relative = 1e-14);
    }

    #[test]
    fn initial_rate_matches_integrator_slope() {
        let dist = boltzmann_occupancy(800e-9, 23e3, 2).unwrap();
        let (b2, b3) = (5.0, 1.0);
        let n0 = LevelDensities::from_distribution(2.0, &dist).unwrap();
        let tau = 1.0 / (b3 * 2.0);
        let t = 1e-6 * tau;
        let traj = integrate_loss(&n0, &RateMatrix::from_channels(3, b2, b3), &[t], 1e-12, 1e-16).unwrap();
        let slope = (2.0 - traj.samples[0].total()) / t / 4.0;
        let expected = effective_initial_rate(&dist, b2, b3);
        assert!((slope - expected).abs() / expected < 1e-4, "{slope} vs {expected}");
    }

    #[test]
    fn conversion() {
        let a = 58.8e-9;
        let r = convert_beta_2d_to_3d(1.0, a).unwrap();
        assert!((r * 100.0 - 1.042e-5).abs() < 0.001e-5);
        assert_eq!(convert_beta_2d_to_3d(0.0, a).unwrap(), 0.0);
        assert_relative_eq!(convert_beta_2d_to_3d(3.0, 2.0 * a).unwrap(), 6.0 * r, max_relative = 1e-15);
        assert_relative_eq!(convert_beta_3d_to_2d(r, a).unwrap(), 1.0, max_relative = 1e-15);
        assert!(convert_beta_2d_to_3d(1.0, 0.0).is_err());
    }

    #[test]
    fn uniform_stack_keeps_alpha() {
        let stack = LayerStack::uniform(9, 9000.0).unwrap();
        let dist = boltzmann_occupancy(800e-9, 23e3, 2).unwrap();
        let rates = RateMatrix::from_channels(3, 1e-9, 1e-10);
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let out = simulate_layer_resolved(&stack, &dist, &rates, 30e-6, &times).unwrap();
        for a in &out.alpha {
            assert_relative_eq!(*a, 9.0, max_relative = 1e-12);
        }
        let zero = simulate_layer_resolved(
            &gaussian_layer_stack_default(1000.0, 3.0).unwrap(),
            &dist,
            &RateMatrix::from_channels(3, 0.0, 0.0),
            30e-6,
            &times,
        )
        .unwrap();
        for a in &zero.alpha {
            assert_eq!(*a, zero.alpha[0]);
        }
    }

    #[test]
    fn raising_beta2_can_raise_late_total() {
        // minority levels are consumed early, leaving the slower beta3 loss
        let n0 = three([0.9, 0.0, 0.2]);
        let times = [30.0];
        let slow = integrate_loss(&n0, &RateMatrix::from_channels(3, 1.0, 0.5), &times, 1e-10, 1e-14).unwrap();
        let fast = integrate_loss(&n0, &RateMatrix::from_channels(3, 5.0, 0.5), &times, 1e-10, 1e-14).unwrap();
        assert!(fast.samples[0].total() > slow.samples[0].total());
    }

    fn level_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..2.0, 3)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn positivity_and_monotone_decay(n in level_vec(), b2 in 0.0f64..3.0, b3 in 0.0f64..3.0) {
            let rates = RateMatrix::from_channels(3, b2, b3);
            let times: Vec<f64> = (1..=30).map(|i| i as f64 * 0.5).collect();
            let traj = integrate_loss(&three([n[0], n[1], n[2]]), &rates, &times, 1e-9, 1e-13).unwrap();
            let mut prev = n.clone();
            for s in &traj.samples {
                for (now, before) in s.densities.iter().zip(&prev) {
                    prop_assert!(*now >= 0.0);
                    prop_assert!(*now <= before * (1.0 + 1e-12));
                }
                prev = s.densities.clone();
            }
        }

        #[test]
        fn uniform_rate_scaling_never_raises_total(n in level_vec(), b2 in 0.01f64..3.0, b3 in 0.01f64..3.0, c in 1.0f64..5.0) {
            let times: Vec<f64> = (1..=20).map(|i| i as f64).collect();
            let n0 = three([n[0], n[1], n[2]]);
            let base = RateMatrix::from_channels(3, b2, b3);
            let a = integrate_loss(&n0, &base, &times, 1e-10, 1e-14).unwrap().totals();
            let b = integrate_loss(&n0, &base.scaled(c), &times, 1e-10, 1e-14).unwrap().totals();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(*y <= *x + 1e-9);
            }
        }

        #[test]
        fn raising_beta3_never_raises_total(n in level_vec(), b2 in 0.0f64..3.0, b3 in 0.0f64..3.0, db in 0.0f64..3.0) {
            let times: Vec<f64> = (1..=20).map(|i| i as f64).collect();
            let n0 = three([n[0], n[1], n[2]]);
            let a = integrate_loss(&n0, &RateMatrix::from_channels(3, b2, b3), &times, 1e-10, 1e-14).unwrap().totals();
            let b = integrate_loss(&n0, &RateMatrix::from_channels(3, b2, b3 + db), &times, 1e-10, 1e-14).unwrap().totals();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(*y <= *x + 1e-9);
            }
        }

        #[test]
        fn initial_loss_rate_monotone_in_every_entry(n in level_vec(), v in 0usize..3, w in 0usize..3, db in 0.0f64..2.0) {
            let base = RateMatrix::from_channels(3, 0.7, 0.3);
            let mut data: Vec<f64> = (0..9).map(|k| base.get(k / 3, k % 3)).collect();
            data[v * 3 + w] += db;
            if v != w {
                data[w * 3 + v] += db;
            }
            let raised = RateMatrix::new(3, data).unwrap();
            let d = three([n[0], n[1], n[2]]);
            let a: f64 = loss_rhs(&d, &base).unwrap().iter().sum();
            let b: f64 = loss_rhs(&d, &raised).unwrap().iter().sum();
            prop_assert!(b <= a);
        }

        #[test]
        fn initial_rate_between_channel_rates(w in proptest::collection::vec(0.0f64..1.0, 3), b3 in 0.0f64..1.0, extra in 0.0f64..5.0) {
            prop_assume!(w.iter().sum::<f64>() > 1e-6);
            let dist = VibrationalDistribution::new(w).unwrap();
            let b2 = b3 + extra;
            let bi = effective_initial_rate(&dist, b2, b3);
            prop_assert!(bi >= b3 - 1e-12 && bi <= b2 + 1e-12);
        }
    }
}
