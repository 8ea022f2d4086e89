//! Explicit embedded Runge-Kutta 5(4) integrator (Dormand-Prince) with
//! adaptive step size, sampled at caller-supplied output times.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// First trial step; estimated from the right-hand side when `None`.
    pub initial_step: Option<f64>,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rel_tol: 1e-8, abs_tol: 1e-10, initial_step: None, max_step: f64::INFINITY, max_steps: 1_000_000 }
    }
}

impl OdeOptions {
    pub fn with_tolerances(rel_tol: f64, abs_tol: f64) -> Self {
        OdeOptions { rel_tol, abs_tol, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: OdeStats,
}

// Dormand-Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// error estimate: 5th order minus embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        Stages { k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n], y_new: vec![0.0; n], err: vec![0.0; n] }
    }
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], opts: &OdeOptions) -> f64 {
    let n = y.len().max(1) as f64;
    let sum: f64 = y
        .iter()
        .zip(y_new)
        .zip(err)
        .map(|((&a, &b), &e)| {
            let scale = opts.abs_tol + opts.rel_tol * a.abs().max(b.abs());
            (e / scale).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Integrates `dy/dt = rhs(t, y)` from `(t0, y0)` and returns the state at
/// each of `t_out`, which must be non-decreasing and not before `t0`.
pub fn integrate<F>(mut rhs: F, t0: f64, y0: &[f64], t_out: &[f64], opts: &OdeOptions) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(opts.rel_tol > 0.0 && opts.abs_tol > 0.0) {
        return Err(Error::domain("tolerances must be positive"));
    }
    if t_out.windows(2).any(|w| w[1] < w[0]) || t_out.first().is_some_and(|&t| t < t0) {
        return Err(Error::domain("output times must be non-decreasing and not before the start time"));
    }

    let n = y0.len();
    let mut st = Stages::new(n);
    let mut stats = OdeStats::default();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut states = Vec::with_capacity(t_out.len());

    rhs(t, &y, &mut st.k[0]);
    stats.evaluations += 1;

    let t_end = t_out.last().copied().unwrap_or(t0);
    let span = (t_end - t0).abs();
    let mut h = match opts.initial_step {
        Some(h) => h,
        None => initial_step(&mut rhs, t, &y, &st.k[0].clone(), span, opts, &mut stats),
    }
    .min(opts.max_step);

    for &target in t_out {
        while t < target {
            if stats.accepted + stats.rejected >= opts.max_steps {
                return Err(Error::Integration(format!(
                    "exceeded {} steps before t = {target:e} (reached t = {t:e})",
                    opts.max_steps
                )));
            }
            let remaining = target - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            if step <= f64::EPSILON * 16.0 * t.abs().max(f64::MIN_POSITIVE) && !last {
                return Err(Error::StepUnderflow { t, step, steps: stats.accepted });
            }

            dopri_step(&mut rhs, t, &y, step, &mut st);
            stats.evaluations += 6;
            let err = error_norm(&y, &st.y_new, &st.err, opts);

            if err <= 1.0 && st.y_new.iter().all(|v| v.is_finite()) {
                stats.accepted += 1;
                t = if last { target } else { t + step };
                std::mem::swap(&mut y, &mut st.y_new);
                // first-same-as-last
                let (head, tail) = st.k.split_at_mut(6);
                head[0].copy_from_slice(&tail[0]);
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || factor < 1.0 {
                    h = (step * factor).min(opts.max_step);
                }
            } else {
                stats.rejected += 1;
                let factor = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
                h = step * factor;
                if h <= f64::EPSILON * 16.0 * t.abs().max(f64::MIN_POSITIVE) {
                    return Err(Error::StepUnderflow { t, step: h, steps: stats.accepted });
                }
            }
        }
        states.push(y.clone());
    }

    Ok(OdeSolution { times: t_out.to_vec(), states, stats })
}

fn dopri_step<F>(rhs: &mut F, t: f64, y: &[f64], h: f64, st: &mut Stages)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let Stages { k, tmp, y_new, err } = st;

    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k[0][i];
    }
    rhs(t + C2 * h, tmp, &mut k[1]);
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
    }
    rhs(t + C3 * h, tmp, &mut k[2]);
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
    }
    rhs(t + C4 * h, tmp, &mut k[3]);
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
    }
    rhs(t + C5 * h, tmp, &mut k[4]);
    for i in 0..n {
        tmp[i] = y[i] + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
    }
    rhs(t + h, tmp, &mut k[5]);
    for i in 0..n {
        y_new[i] = y[i] + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
    }
    rhs(t + h, y_new, &mut k[6]);
    for i in 0..n {
        err[i] = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
    }
}

fn initial_step<F>(
    rhs: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    span: f64,
    opts: &OdeOptions,
    stats: &mut OdeStats,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if span == 0.0 {
        return 0.0;
    }
    let scale: Vec<f64> = y.iter().map(|v| opts.abs_tol + opts.rel_tol * v.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; y.len()];
    rhs(t + h0, &y1, &mut f1);
    stats.evaluations += 1;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6 * span) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1).min(span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_decay() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.5).collect();
        let sol = integrate(|_, y, dy| dy[0] = -y[0], 0.0, &[1.0], &times, &OdeOptions::with_tolerances(1e-10, 1e-14))
            .unwrap();
        for (t, y) in sol.times.iter().zip(&sol.states) {
            assert_relative_eq!(y[0], (-t).exp(), max_relative = 1e-8);
        }
    }

    #[test]
    fn harmonic_oscillator_conserves_energy() {
        let sol = integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            &[1.0, 0.0],
            &[10.0 * std::f64::consts::PI],
            &OdeOptions::with_tolerances(1e-11, 1e-13),
        )
        .unwrap();
        let y = &sol.states[0];
        assert!((y[0] - 1.0).abs() < 1e-8 && y[1].abs() < 1e-8, "{y:?}");
    }

    #[test]
    fn output_at_start_time_is_initial_state() {
        let sol = integrate(|_, _, dy| dy[0] = 1.0, 2.0, &[3.0], &[2.0, 3.0], &OdeOptions::default()).unwrap();
        assert_eq!(sol.states[0], vec![3.0]);
        assert_relative_eq!(sol.states[1][0], 4.0, max_relative = 1e-12);
    }

    #[test]
    fn finite_time_blowup_reports_underflow() {
        // y' = y^2, y(0) = 1 blows up at t = 1
        let err = integrate(|_, y, dy| dy[0] = y[0] * y[0], 0.0, &[1.0], &[2.0], &OdeOptions::default()).unwrap_err();
        assert!(matches!(err, Error::StepUnderflow { .. } | Error::Integration(_)), "{err}");
    }

    #[test]
    fn rejects_decreasing_times() {
        assert!(integrate(|_, _, dy| dy[0] = 0.0, 0.0, &[0.0], &[1.0, 0.5], &OdeOptions::default()).is_err());
    }
}
