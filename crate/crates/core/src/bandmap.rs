//! Band-mapping analysis: zone step profiles blurred by the imaging
//! resolution, transverse averaging of optical-depth images, and population
//! extraction.
//!
//! Momenta are in units of the lattice momentum `hbar k`. Level `v` maps onto
//! the `v`-th Brillouin zone: `[-1, 1]` for `v = 0`, `±[1, 2]` for `v = 1`
//! and `±[2, 3]` for `v = 2`.

use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::lm::{self, LmOptions, Termination};

pub const ZONES: usize = 3;

/// Row-major optical-depth image. Rows run along the transverse axis and
/// columns along the band-mapped momentum axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdImage {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    /// m per pixel
    pub pixel_size: f64,
    /// hbar k per pixel along the momentum axis
    pub calibration: f64,
}

impl OdImage {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, pixel_size: f64, calibration: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::domain("image has no pixels"));
        }
        if data.len() != rows * cols {
            return Err(Error::domain(format!("{} values for a {rows}x{cols} image", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite OD at row {}, column {}", i / cols, i % cols)));
        }
        ensure_positive("pixel_size", pixel_size)?;
        ensure_positive("calibration", calibration)?;
        Ok(OdImage { rows, cols, data, pixel_size, calibration })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Momentum of every column, zero at the middle column.
    pub fn momentum_axis(&self) -> Vec<f64> {
        let mid = (self.cols as f64 - 1.0) / 2.0;
        (0..self.cols).map(|c| (c as f64 - mid) * self.calibration).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumTrace {
    /// hbar k
    momentum: Vec<f64>,
    od: Vec<f64>,
}

impl MomentumTrace {
    pub fn new(momentum: Vec<f64>, od: Vec<f64>) -> Result<Self> {
        if momentum.len() != od.len() {
            return Err(Error::domain("momentum and OD columns differ in length"));
        }
        if momentum.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("momentum axis must be strictly increasing"));
        }
        if od.iter().chain(&momentum).any(|v| !v.is_finite()) {
            return Err(Error::domain("trace contains non-finite values"));
        }
        Ok(MomentumTrace { momentum, od })
    }

    pub fn momentum(&self) -> &[f64] {
        &self.momentum
    }

    pub fn od(&self) -> &[f64] {
        &self.od
    }

    pub fn len(&self) -> usize {
        self.od.len()
    }

    pub fn is_empty(&self) -> bool {
        self.od.is_empty()
    }

    /// Trapezoidal area under the trace.
    pub fn area(&self) -> f64 {
        trapezoid(&self.momentum, &self.od)
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// Transverse location and rms width of the cloud, in rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransverseProfile {
    pub center: f64,
    pub rms_width: f64,
    /// false when the Gaussian fit failed and moments were used instead
    pub fitted: bool,
}

/// Gaussian fit of the row sums, falling back to the first two moments.
pub fn transverse_profile(image: &OdImage) -> TransverseProfile {
    let marginal: Vec<f64> = (0..image.rows()).map(|r| image.row(r).iter().sum()).collect();
    let xs: Vec<f64> = (0..image.rows()).map(|r| r as f64).collect();
    let base = marginal.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = marginal.iter().map(|m| m - base).collect();
    let total: f64 = weights.iter().sum();
    let (c0, w0) = if total > 0.0 {
        let c = xs.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() / total;
        let v = xs.iter().zip(&weights).map(|(x, w)| (x - c).powi(2) * w).sum::<f64>() / total;
        (c, v.sqrt().max(0.5))
    } else {
        ((image.rows() as f64 - 1.0) / 2.0, image.rows() as f64 / 4.0)
    };
    let moments = TransverseProfile { center: c0, rms_width: w0, fitted: false };
    if image.rows() < 5 || total <= 0.0 {
        return moments;
    }
    let peak = weights.iter().copied().fold(0.0, f64::max);
    let scale = peak.max(f64::MIN_POSITIVE);
    let residuals = |p: &[f64]| -> Result<Vec<f64>> {
        let w = p[1].exp();
        Ok(xs
            .iter()
            .zip(&marginal)
            .map(|(x, m)| (p[2] * (-0.5 * ((x - p[0]) / w).powi(2)).exp() + p[3] - m) / scale)
            .collect())
    };
    match lm::minimize(residuals, &[c0, w0.ln(), peak, base], &LmOptions::default()) {
        Ok(min)
            if min.termination.converged()
                && min.params[2] > 0.0
                && (0.0..=(image.rows() - 1) as f64).contains(&min.params[0]) =>
        {
            TransverseProfile { center: min.params[0], rms_width: min.params[1].exp(), fitted: true }
        }
        _ => moments,
    }
}

/// Mean of the image rows within `rms_width` rows of the fitted transverse
/// center.
pub fn transverse_average(image: &OdImage, rms_width: f64) -> Result<MomentumTrace> {
    ensure_positive("rms_width", rms_width)?;
    let profile = transverse_profile(image);
    let lo = profile.center - rms_width;
    let hi = profile.center + rms_width;
    if lo < -0.5 || hi > image.rows() as f64 - 0.5 {
        return Err(Error::Bounds(format!(
            "averaging window [{lo:.2}, {hi:.2}] rows exceeds the image (0..{})",
            image.rows()
        )));
    }
    let rows: Vec<usize> = (0..image.rows()).filter(|&r| (r as f64 - profile.center).abs() <= rms_width).collect();
    if rows.is_empty() {
        return Err(Error::Bounds("averaging window contains no rows".into()));
    }
    let mut mean = vec![0.0; image.cols()];
    for &r in &rows {
        for (m, v) in mean.iter_mut().zip(image.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows.len() as f64;
    }
    MomentumTrace::new(image.momentum_axis(), mean)
}

/// Shape parameters of [`model_trace`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceModel {
    pub fractions: [f64; ZONES],
    /// Gaussian rms resolution, hbar k
    pub sigma: f64,
    /// Area above the offset
    pub amplitude: f64,
    pub offset: f64,
    /// hbar k
    pub center: f64,
}

impl TraceModel {
    pub fn new(fractions: [f64; ZONES], sigma: f64) -> Self {
        TraceModel { fractions, sigma, amplitude: 1.0, offset: 0.0, center: 0.0 }
    }

    pub fn evaluate(&self, p: f64) -> f64 {
        let x = p - self.center;
        let f = &self.fractions;
        let zones = [(f[0], -1.0, 1.0), (f[1], -2.0, -1.0), (f[1], 1.0, 2.0), (f[2], -3.0, -2.0), (f[2], 2.0, 3.0)];
        let body: f64 = zones.iter().map(|&(fv, a, b)| 0.5 * fv * blurred_step(x, a, b, self.sigma)).sum();
        self.amplitude * body + self.offset
    }
}

/// Unit top-hat on `[a, b]` convolved with a unit-area Gaussian.
fn blurred_step(x: f64, a: f64, b: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        let edge = |e: f64| match x.partial_cmp(&e) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        };
        return edge(a) - edge(b);
    }
    let s = SQRT_2 * sigma;
    0.5 * (erf((x - a) / s) - erf((x - b) / s))
}

/// Evaluates the zone model on `grid` (hbar k).
pub fn model_trace(model: &TraceModel, grid: &[f64]) -> Result<MomentumTrace> {
    ensure_non_negative("sigma", model.sigma)?;
    let sum: f64 = model.fractions.iter().sum();
    if model.fractions.iter().any(|&f| f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("fractions {:?} are not normalized", model.fractions)));
    }
    MomentumTrace::new(grid.to_vec(), grid.iter().map(|&p| model.evaluate(p)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonePopulations {
    pub fractions: [f64; ZONES],
    /// NaN when the covariance is singular
    pub uncertainties: [f64; ZONES],
    pub model: TraceModel,
    pub sigma_uncertainty: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PopulationFitOptions {
    /// Holds the resolution at this value instead of fitting it.
    pub fixed_sigma: Option<f64>,
    /// Starting resolution; 0.1 hbar k when unset.
    pub initial_sigma: Option<f64>,
}

fn softmax(z1: f64, z2: f64) -> [f64; ZONES] {
    let m = z1.max(z2).max(0.0);
    let e = [(-m).exp(), (z1 - m).exp(), (z2 - m).exp()];
    let s: f64 = e.iter().sum();
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Least-squares zone fit with fractions `softmax(0, z1, z2)`, resolution,
/// amplitude, offset and center free.
pub fn fit_populations(trace: &MomentumTrace, opts: &PopulationFitOptions) -> Result<ZonePopulations> {
    let p = trace.momentum();
    let od = trace.od();
    if p.is_empty() || p[0] > -3.0 + 1e-9 || p[p.len() - 1] < 3.0 - 1e-9 {
        return Err(Error::domain("trace must span at least -3..3 hbar k"));
    }
    if let Some(s) = opts.fixed_sigma {
        ensure_positive("fixed_sigma", s)?;
    }

    // Starting point from zone integrals above the baseline.
    let outside: Vec<f64> = p.iter().zip(od).filter(|(x, _)| x.abs() > 3.5).map(|(_, y)| *y).collect();
    let offset0 = if outside.is_empty() {
        od.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        outside.iter().sum::<f64>() / outside.len() as f64
    };
    let lifted: Vec<f64> = od.iter().map(|y| y - offset0).collect();
    let zone_area = |lo: f64, hi: f64| -> f64 {
        p.iter().zip(&lifted).filter(|(x, _)| x.abs() >= lo && x.abs() < hi).map(|(_, y)| y.max(0.0)).sum::<f64>()
    };
    let areas = [zone_area(0.0, 1.0), zone_area(1.0, 2.0), zone_area(2.0, 3.0)];
    let a_sum: f64 = areas.iter().sum();
    let f0: Vec<f64> = areas.iter().map(|a| (a / a_sum).max(1e-3)).collect();
    let amp0 = trapezoid(p, &lifted).max(f64::MIN_POSITIVE);
    let total: f64 = lifted.iter().map(|y| y.max(0.0)).sum();
    let center0 =
        if total > 0.0 { p.iter().zip(&lifted).map(|(x, y)| x * y.max(0.0)).sum::<f64>() / total } else { 0.0 };
    let sigma0 = opts.fixed_sigma.or(opts.initial_sigma).unwrap_or(0.1);
    let scale = od.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);

    let unpack = |q: &[f64]| -> TraceModel {
        let sigma = match opts.fixed_sigma {
            Some(s) => s,
            None => q[5].exp(),
        };
        TraceModel { fractions: softmax(q[0], q[1]), sigma, amplitude: q[2], offset: q[3], center: q[4] }
    };
    let residuals = |q: &[f64]| -> Result<Vec<f64>> {
        let m = unpack(q);
        Ok(p.iter().zip(od).map(|(&x, y)| (m.evaluate(x) - y) / scale).collect())
    };
    let mut start = vec![(f0[1] / f0[0]).ln(), (f0[2] / f0[0]).ln(), amp0, offset0, center0.clamp(-0.5, 0.5)];
    if opts.fixed_sigma.is_none() {
        start.push(sigma0.ln());
    }
    if p.len() <= start.len() {
        return Err(Error::InsufficientData(format!("{} trace samples", p.len())));
    }
    let lm_opts = LmOptions { max_iterations: 500, objective_floor: 1e-30, ..LmOptions::default() };
    let min = lm::minimize(residuals, &start, &lm_opts)?;
    let model = unpack(&min.params);

    // Uncertainties: softmax Jacobian applied to the (z1, z2) covariance.
    let (mut unc, mut sigma_unc) = ([f64::NAN; ZONES], f64::NAN);
    if let Ok((cov, _)) = lm::covariance(&min.jacobian, min.chi_square) {
        let f = model.fractions;
        let g = DMatrix::from_fn(ZONES, 2, |i, j| {
            let k = j + 1;
            f[i] * (if i == k { 1.0 } else { 0.0 } - f[k])
        });
        let cz = DMatrix::from_fn(2, 2, |i, j| cov[i][j]);
        let cf = &g * cz * g.transpose();
        for i in 0..ZONES {
            unc[i] = cf[(i, i)].max(0.0).sqrt();
        }
        if opts.fixed_sigma.is_none() {
            sigma_unc = model.sigma * cov[5][5].max(0.0).sqrt();
        }
    }
    Ok(ZonePopulations {
        fractions: model.fractions,
        uncertainties: unc,
        model,
        sigma_uncertainty: sigma_unc,
        residual_norm: (min.chi_square).sqrt() * scale,
        iterations: min.iterations,
        converged: min.termination.converged(),
        termination: min.termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const CAL: f64 = 0.1;

    fn grid(half: f64, step: f64) -> Vec<f64> {
        let n = (2.0 * half / step).round() as usize;
        (0..=n).map(|i| -half + i as f64 * step).collect()
    }

    #[test]
    fn sharp_ground_zone_is_a_rectangle() {
        let m = TraceModel::new([1.0, 0.0, 0.0], 0.0);
        assert_eq!(m.evaluate(0.0), 0.5);
        assert_eq!(m.evaluate(0.99), 0.5);
        assert_eq!(m.evaluate(1.0), 0.25);
        assert_eq!(m.evaluate(1.01), 0.0);
        assert_eq!(m.evaluate(-1.5), 0.0);
    }

    #[test]
    fn center_value_for_narrow_resolution() {
        let m = TraceModel { amplitude: 2.0, ..TraceModel::new([0.5, 0.3, 0.2], 0.1) };
        let v0 = 0.5 / 2.0 * 2.0;
        let ratio = m.evaluate(0.0) / v0;
        assert!(ratio > 0.99 && ratio < 1.01, "{ratio}");
        assert_relative_eq!(
            m.evaluate(0.0),
            v0 * erf(1.0 / (SQRT_2 * 0.1))
                + 0.3 / 2.0 * 2.0 * 2.0 * 0.5 * (erf(2.0 / (SQRT_2 * 0.1)) - erf(1.0 / (SQRT_2 * 0.1)))
                + 0.2 * 2.0 * 0.5 * (erf(3.0 / (SQRT_2 * 0.1)) - erf(2.0 / (SQRT_2 * 0.1))),
            max_relative = 1e-14
        );
    }

    #[test]
    fn area_is_amplitude_for_any_resolution() {
        let g = grid(8.0, 1e-3);
        for sigma in [0.02, 0.1, 0.3, 0.6] {
            let m = TraceModel { amplitude: 3.7, ..TraceModel::new([0.6, 0.3, 0.1], sigma) };
            let area = model_trace(&m, &g).unwrap().area();
            assert!((area - 3.7).abs() / 3.7 < 1e-10, "{sigma}: {area}");
        }
    }

    #[test]
    fn rejects_unnormalized_fractions() {
        assert!(model_trace(&TraceModel::new([0.5, 0.3, 0.1], 0.1), &[0.0]).is_err());
        assert!(model_trace(&TraceModel::new([1.0, 0.0, 0.0], -0.1), &[0.0]).is_err());
    }

    #[test]
    fn noise_free_round_trip() {
        let g = grid(4.0, CAL);
        let truth =
            TraceModel { amplitude: 1.3, offset: 0.02, center: 0.03, ..TraceModel::new([0.75, 0.19, 0.06], 1.5 * CAL) };
        let trace = model_trace(&truth, &g).unwrap();
        let fit = fit_populations(&trace, &PopulationFitOptions::default()).unwrap();
        assert!(fit.converged);
        for (a, b) in fit.fractions.iter().zip(truth.fractions) {
            assert!((a - b).abs() < 1e-6, "{:?}", fit.fractions);
        }
        assert!((fit.model.sigma - truth.sigma).abs() < 1e-6);
    }

    #[test]
    fn resolution_mismodelling_stays_within_three_percent() {
        let g = grid(4.0, CAL);
        for true_px in [1.0, 1.5, 2.0] {
            for assumed_px in [1.0, 1.5, 2.0] {
                let truth = TraceModel::new([0.75, 0.19, 0.06], true_px * CAL);
                let trace = model_trace(&truth, &g).unwrap();
                let opts = PopulationFitOptions { fixed_sigma: Some(assumed_px * CAL), initial_sigma: None };
                let fit = fit_populations(&trace, &opts).unwrap();
                for (a, b) in fit.fractions.iter().zip(truth.fractions) {
                    assert!((a - b).abs() <= 0.03, "{true_px} vs {assumed_px}: {:?}", fit.fractions);
                }
            }
        }
    }

    #[test]
    fn pure_ground_band() {
        let g = grid(4.0, CAL);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.005).unwrap();
        let m = TraceModel::new([1.0, 0.0, 0.0], 0.15);
        let od: Vec<f64> = g.iter().map(|&p| m.evaluate(p) + noise.sample(&mut rng)).collect();
        let fit = fit_populations(&MomentumTrace::new(g, od).unwrap(), &PopulationFitOptions::default()).unwrap();
        assert!(fit.fractions[0] > 0.98, "{:?}", fit.fractions);
    }

    #[test]
    fn narrow_trace_is_rejected() {
        let g = grid(2.5, CAL);
        let trace = model_trace(&TraceModel::new([1.0, 0.0, 0.0], 0.1), &g).unwrap();
        assert!(fit_populations(&trace, &PopulationFitOptions::default()).is_err());
    }

    fn separable_image(profile: &[f64], rows: usize, center: f64, width: f64) -> OdImage {
        let data = (0..rows)
            .flat_map(|r| {
                let g = (-0.5 * ((r as f64 - center) / width).powi(2)).exp();
                profile.iter().map(move |v| v * g)
            })
            .collect();
        OdImage::new(rows, profile.len(), data, 1e-6, CAL).unwrap()
    }

    #[test]
    fn uniform_image_gives_flat_trace() {
        let img = OdImage::new(20, 30, vec![0.7; 600], 1e-6, CAL).unwrap();
        let t = transverse_average(&img, 3.0).unwrap();
        assert!(t.od().iter().all(|&v| (v - 0.7).abs() < 1e-14));
    }

    #[test]
    fn separable_image_gives_proportional_trace() {
        let profile: Vec<f64> = (0..81).map(|c| 1.0 + (c as f64 * 0.1).sin()).collect();
        let img = separable_image(&profile, 41, 20.3, 5.0);
        let prof = transverse_profile(&img);
        assert!(prof.fitted);
        assert!((prof.center - 20.3).abs() < 1e-6 && (prof.rms_width - 5.0).abs() < 1e-6);
        let t = transverse_average(&img, prof.rms_width).unwrap();
        let ratio = t.od()[0] / profile[0];
        for (a, b) in t.od().iter().zip(&profile) {
            assert_relative_eq!(a / b, ratio, max_relative = 1e-12);
        }
    }

    #[test]
    fn averaging_window_outside_image() {
        let profile = vec![1.0; 10];
        let img = separable_image(&profile, 21, 10.0, 4.0);
        assert!(matches!(transverse_average(&img, 15.0), Err(Error::Bounds(_))));
    }

    #[test]
    fn noisy_image_average_tracks_truth() {
        let g = grid(4.0, CAL);
        let m = TraceModel::new([0.75, 0.19, 0.06], 0.15);
        let profile: Vec<f64> = g.iter().map(|&p| m.evaluate(p)).collect();
        let rows = 101;
        let noise_sd = 0.02;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, noise_sd).unwrap();
        let data: Vec<f64> = (0..rows).flat_map(|_| profile.clone()).map(|v| v + noise.sample(&mut rng)).collect();
        let img = OdImage::new(rows, profile.len(), data, 1e-6, CAL).unwrap();
        let t = transverse_average(&img, 10.0).unwrap();
        let averaged = (0..rows).filter(|&r| (r as f64 - transverse_profile(&img).center).abs() <= 10.0).count();
        let tol = 3.0 * noise_sd / (averaged as f64).sqrt();
        let worst = t.od().iter().zip(&profile).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // a handful of bins may sit beyond 3 sd; none should be far out
        let outliers = t.od().iter().zip(&profile).filter(|(a, b)| (*a - *b).abs() > tol).count();
        assert!(outliers <= 2 && worst < 5.0 * noise_sd / (averaged as f64).sqrt(), "{outliers} {worst}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn symmetric_about_zero(f1 in 0.0f64..0.4, f2 in 0.0f64..0.3, sigma in 0.0f64..0.5, p in 0.0f64..4.0) {
            let m = TraceModel::new([1.0 - f1 - f2, f1, f2], sigma);
            prop_assert!((m.evaluate(p) - m.evaluate(-p)).abs() <= 1e-12);
        }

        #[test]
        fn area_independent_of_sigma(sigma in 0.02f64..0.5) {
            let g = grid(8.0, 2e-3);
            let m = TraceModel::new([0.5, 0.3, 0.2], sigma);
            let area = model_trace(&m, &g).unwrap().area();
            prop_assert!((area - 1.0).abs() < 1e-10);
        }

        #[test]
        fn round_trip_over_fraction_and_resolution_grid(f1 in 0.02f64..0.4, f2 in 0.02f64..0.3, sigma in 0.05f64..0.3) {
            let g = grid(4.0, CAL);
            let truth = TraceModel::new([1.0 - f1 - f2, f1, f2], sigma);
            let fit = fit_populations(&model_trace(&truth, &g).unwrap(), &PopulationFitOptions::default()).unwrap();
            for (a, b) in fit.fractions.iter().zip(truth.fractions) {
                prop_assert!((a - b).abs() < 1e-4, "{:?} vs {:?}", fit.fractions, truth.fractions);
            }
        }
    }
}
