//! Single-channel capture model for the three lowest adiabatic potentials.
//!
//! `V(R) = hbar^2 L(L+1) / (2 mu R^2) + c3 / R^3 - c6 / R^6` with a perfectly
//! absorbing inner boundary. The radial equation is propagated outward as a
//! complex log-derivative `y = psi'/psi`, which stays smooth through both the
//! classically allowed and forbidden regions, together with `ln psi`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::ChannelLabel;
use crate::constants::{BOLTZMANN, FOUR_PI_EPSILON0, HBAR};
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::ode::{integrate, OdeOptions};

/// Default absorbing radius (m).
pub const DEFAULT_R_ABS: f64 = 1e-9;

/// Outer edge of the barrier search (m).
const BARRIER_SEARCH_MAX: f64 = 1e-5;

/// Propagation is done in nanometres.
const LENGTH_UNIT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticPotential {
    pub channel: ChannelLabel,
    /// C m
    pub induced_dipole: f64,
    /// kg
    pub reduced_mass: f64,
    /// J m^6
    pub c6: f64,
    pub l_eff: u32,
    /// J m^3, signed
    pub c3: f64,
}

impl AdiabaticPotential {
    pub fn new(channel: ChannelLabel, induced_dipole: f64, reduced_mass: f64, c6: f64) -> Result<Self> {
        ensure_non_negative("induced_dipole", induced_dipole)?;
        ensure_positive("reduced_mass", reduced_mass)?;
        ensure_non_negative("c6", c6)?;
        let dd = induced_dipole * induced_dipole / FOUR_PI_EPSILON0;
        let (l_eff, c3) = match channel {
            ChannelLabel::One => (0, 0.0),
            ChannelLabel::Two => (1, -2.0 * dd),
            ChannelLabel::Three => (1, dd),
        };
        Ok(AdiabaticPotential { channel, induced_dipole, reduced_mass, c6, l_eff, c3 })
    }

    /// `V = 0`: an s-wave free particle.
    pub fn free(reduced_mass: f64) -> Result<Self> {
        Self::new(ChannelLabel::One, 0.0, reduced_mass, 0.0)
    }

    fn centrifugal(&self, angular: f64, r: f64) -> f64 {
        HBAR * HBAR * angular / (2.0 * self.reduced_mass * r * r)
    }

    fn angular(&self) -> f64 {
        let l = self.l_eff as f64;
        l * (l + 1.0)
    }

    fn value_unchecked(&self, r: f64) -> f64 {
        let r3 = r * r * r;
        self.centrifugal(self.angular(), r) + self.c3 / r3 - self.c6 / (r3 * r3)
    }

    fn langer_value(&self, r: f64) -> f64 {
        let l = self.l_eff as f64 + 0.5;
        let r3 = r * r * r;
        self.centrifugal(l * l, r) + self.c3 / r3 - self.c6 / (r3 * r3)
    }

    fn derivative(&self, r: f64) -> f64 {
        let r3 = r * r * r;
        -2.0 * self.centrifugal(self.angular(), r) / r - 3.0 * self.c3 / (r3 * r) + 6.0 * self.c6 / (r3 * r3 * r)
    }

    /// Symmetry factor of the rate expression.
    pub fn symmetry_factor(&self) -> f64 {
        match self.channel {
            ChannelLabel::One => 1.0,
            ChannelLabel::Two | ChannelLabel::Three => 2.0,
        }
    }
}

pub fn potential_value(pot: &AdiabaticPotential, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::domain(format!("R must be positive, got {r}")));
    }
    Ok(pot.value_unchecked(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    /// m
    pub radius: f64,
    /// J; zero when barrierless
    pub height: f64,
    pub barrierless: bool,
}

impl Barrier {
    fn none() -> Self {
        Barrier { radius: f64::NAN, height: 0.0, barrierless: true }
    }
}

fn maximize(f: impl Fn(f64) -> f64, r_min: f64, r_max: f64) -> (f64, f64) {
    let n = 4000;
    let (l0, l1) = (r_min.ln(), r_max.ln());
    let grid = |i: usize| (l0 + (l1 - l0) * i as f64 / n as f64).exp();
    let best = (0..=n).max_by(|&a, &b| f(grid(a)).total_cmp(&f(grid(b)))).unwrap();
    let (mut a, mut b) = (grid(best.saturating_sub(1)).ln(), grid((best + 1).min(n)).ln());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let fl = |x: f64| f(x.exp());
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (fl(c), fl(d));
    while (b - a).abs() > 1e-13 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = fl(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = fl(d);
        }
    }
    let x = (0.5 * (a + b)).exp();
    (x, f(x))
}

/// Highest point of the potential outside the default absorbing radius.
pub fn barrier(pot: &AdiabaticPotential) -> Barrier {
    barrier_outside(pot, DEFAULT_R_ABS)
}

pub fn barrier_outside(pot: &AdiabaticPotential, r_abs: f64) -> Barrier {
    if pot.l_eff == 0 && pot.c3 <= 0.0 {
        return Barrier::none();
    }
    let (radius, height) = maximize(|r| pot.value_unchecked(r), r_abs, BARRIER_SEARCH_MAX);
    if height > 0.0 {
        Barrier { radius, height, barrierless: false }
    } else {
        Barrier::none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Numerical,
    Wkb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionResult {
    /// J
    pub energy: f64,
    pub probability: f64,
    pub barrier: Barrier,
    pub method: Method,
    pub over_barrier: bool,
    /// Relative mismatch between incoming minus reflected flux and absorbed
    /// flux; NaN for WKB.
    pub flux_residual: f64,
    pub steps: usize,
}

fn wave_number_sq_nm(pot: &AdiabaticPotential, energy: f64, x: f64) -> f64 {
    2.0 * pot.reduced_mass * (energy - pot.value_unchecked(x * LENGTH_UNIT)) / (HBAR * HBAR) * LENGTH_UNIT * LENGTH_UNIT
}

fn outgoing_hankel(l: u32, x: f64) -> (num_complex::Complex64, num_complex::Complex64) {
    use num_complex::Complex64 as C;
    let e = C::from_polar(1.0, x);
    let i = C::i();
    match l {
        0 => (e, i * e),
        _ => (e * (1.0 + i / x), e * (i - 1.0 / x - i / (x * x))),
    }
}

/// Flux transmitted into the absorbing boundary for a unit incoming wave.
pub fn transmission(pot: &AdiabaticPotential, energy: f64, r_abs: f64) -> Result<TransmissionResult> {
    use num_complex::Complex64 as C;
    ensure_positive("energy", energy)?;
    ensure_positive("r_abs", r_abs)?;
    if pot.l_eff > 1 {
        return Err(Error::domain("only L_eff = 0 or 1 is supported"));
    }
    let bar = barrier_outside(pot, r_abs);
    if !bar.barrierless && bar.radius <= r_abs * (1.0 + 1e-9) {
        return Err(Error::domain("absorbing radius lies outside the barrier region"));
    }
    let over_barrier = bar.barrierless || energy >= bar.height;

    let k = (2.0 * pot.reduced_mass * energy).sqrt() / HBAR * LENGTH_UNIT;
    let x_abs = r_abs / LENGTH_UNIT;
    let tail = 1e-7 * energy;
    let x_max = [
        30.0 / k,
        (pot.c3.abs() / tail).cbrt() / LENGTH_UNIT,
        (pot.c6 / tail).powf(1.0 / 6.0) / LENGTH_UNIT,
        2.0 * x_abs,
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let k2_abs = wave_number_sq_nm(pot, energy, x_abs);
    if k2_abs <= 0.0 {
        return Err(Error::Integration(format!("classically forbidden at the absorbing radius {r_abs} m")));
    }
    let k_abs = k2_abs.sqrt();
    let dk2 = -2.0 * pot.reduced_mass * pot.derivative(r_abs) / (HBAR * HBAR) * LENGTH_UNIT.powi(3);
    // WKB incoming wave: psi ~ k^{-1/2} exp(-i int k)
    let y0 = C::new(-dk2 / (4.0 * k2_abs), -k_abs);

    let rhs = |x: f64, s: &[f64], ds: &mut [f64]| {
        let y = C::new(s[0], s[1]);
        let dy = -wave_number_sq_nm(pot, energy, x) - y * y;
        ds[0] = dy.re;
        ds[1] = dy.im;
        ds[2] = s[0];
        ds[3] = s[1];
    };
    let opts = OdeOptions {
        rel_tol: 1e-11,
        abs_tol: 1e-13,
        initial_step: Some(1e-4 / k_abs.max(1.0)),
        max_step: 1.0 / k,
        max_steps: 5_000_000,
    };
    let sol = integrate(rhs, x_abs, &[y0.re, y0.im, 0.0, 0.0], &[x_max], &opts)?;
    let s = &sol.states[0];
    let y = C::new(s[0], s[1]);
    let log_psi = C::new(s[2], s[3]);
    if !log_psi.re.is_finite() || log_psi.re.abs() > 650.0 {
        return Err(Error::Integration(format!("wavefunction amplitude out of range: ln|psi| = {}", log_psi.re)));
    }
    let psi = log_psi.exp();
    let dpsi = y * psi;

    let kx = k * x_max;
    let (h_out, dh_out) = outgoing_hankel(pot.l_eff, kx);
    let (h_in, dh_in) = (h_out.conj(), dh_out.conj());
    let (dh_out, dh_in) = (dh_out * k, dh_in * k);
    let w = h_in * dh_out - dh_in * h_out;
    let a = (psi * dh_out - dpsi * h_out) / w;
    let b = (h_in * dpsi - dh_in * psi) / w;

    let incoming = k * a.norm_sqr();
    let reflected = k * b.norm_sqr();
    let absorbed = -y0.im;
    let probability = (1.0 - reflected / incoming).clamp(0.0, 1.0);
    let flux_residual = ((incoming - reflected) - absorbed).abs() / incoming;
    Ok(TransmissionResult {
        energy,
        probability,
        barrier: bar,
        method: Method::Numerical,
        over_barrier,
        flux_residual,
        steps: sol.stats.accepted,
    })
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Semiclassical tunnelling probability through the Langer-corrected barrier.
pub fn transmission_wkb(pot: &AdiabaticPotential, energy: f64, r_abs: f64) -> Result<TransmissionResult> {
    ensure_positive("energy", energy)?;
    ensure_positive("r_abs", r_abs)?;
    let bar = barrier_outside(pot, r_abs);
    let (r_top, v_top) = maximize(|r| pot.langer_value(r), r_abs, BARRIER_SEARCH_MAX);
    let result = |probability, over_barrier| TransmissionResult {
        energy,
        probability,
        barrier: bar,
        method: Method::Wkb,
        over_barrier,
        flux_residual: f64::NAN,
        steps: 0,
    };
    if v_top <= energy {
        return Ok(result(1.0, true));
    }
    let g = |r: f64| pot.langer_value(r) - energy;
    let inner = bisect(g, r_abs, r_top);
    let outer = bisect(g, r_top, BARRIER_SEARCH_MAX);
    // R = a + (b - a)(1 - cos th)/2 removes the square-root endpoint behaviour
    let n = 4000;
    let h = PI / n as f64;
    let half = 0.5 * (outer - inner);
    let integral: f64 = (0..=n)
        .map(|i| {
            let th = i as f64 * h;
            let r = inner + half * (1.0 - th.cos());
            let kappa = (2.0 * pot.reduced_mass * g(r).max(0.0)).sqrt() / HBAR;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * kappa * half * th.sin()
        })
        .sum::<f64>()
        * h
        / 3.0;
    Ok(result((-2.0 * integral).exp(), bar.barrierless || energy >= bar.height))
}

/// `beta = g (2L+1) (pi / k^2) T(E) v` at `E = k_B T_gas`, or its
/// Maxwell-Boltzmann average when `thermal_average` is set. m^3/s.
pub fn rate_constant(pot: &AdiabaticPotential, t_gas: f64, r_abs: f64, thermal_average: bool) -> Result<f64> {
    ensure_positive("temperature", t_gas)?;
    let at = |e: f64| -> Result<f64> {
        let t = transmission(pot, e, r_abs)?.probability;
        Ok(unitarity_rate(pot, e) * t)
    };
    if !thermal_average {
        return at(BOLTZMANN * t_gas);
    }
    // <beta> = int (4/sqrt(pi)) u^2 exp(-u^2) beta(u^2 kT) du
    let n = 48;
    let u_max = 5.0;
    let h = u_max / n as f64;
    let terms: Vec<f64> = (1..=n)
        .into_par_iter()
        .map(|i| {
            let u = i as f64 * h;
            let w = if i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            at(u * u * BOLTZMANN * t_gas).map(|b| w * 4.0 / PI.sqrt() * u * u * (-u * u).exp() * b)
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() * h / 3.0)
}

/// Rate at unit transmission. m^3/s.
pub fn unitarity_rate(pot: &AdiabaticPotential, energy: f64) -> f64 {
    let k = (2.0 * pot.reduced_mass * energy).sqrt() / HBAR;
    let v = HBAR * k / pot.reduced_mass;
    pot.symmetry_factor() * (2.0 * pot.l_eff as f64 + 1.0) * PI / (k * k) * v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    /// C m
    pub dipole: f64,
    /// m^3/s
    pub beta: f64,
    pub barrier: Barrier,
    pub in_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateVsDipole {
    pub channel: ChannelLabel,
    /// K
    pub temperature: f64,
    pub points: Vec<ScanPoint>,
    /// Inclusive window in C m.
    pub window: (f64, f64),
    pub slope: f64,
    pub window_points: usize,
}

/// Rates along `d_grid` (C m, strictly increasing) and the least-squares
/// slope of `ln beta` against `ln d` inside `window`.
pub fn dipole_scan(
    channel: ChannelLabel,
    d_grid: &[f64],
    reduced_mass: f64,
    c6: f64,
    t_gas: f64,
    r_abs: f64,
    window: (f64, f64),
) -> Result<RateVsDipole> {
    if d_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("dipole grid must be strictly increasing"));
    }
    if !(window.0 <= window.1) {
        return Err(Error::domain("slope window is empty"));
    }
    let inside = |d: f64| d >= window.0 * (1.0 - 1e-12) && d <= window.1 * (1.0 + 1e-12);
    let in_window: Vec<f64> = d_grid.iter().copied().filter(|&d| inside(d)).collect();
    if in_window.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} grid points inside the slope window, need at least 3",
            in_window.len()
        )));
    }
    if in_window.iter().any(|&d| d <= 0.0) {
        return Err(Error::domain("slope window must exclude d = 0"));
    }
    let points: Vec<ScanPoint> = d_grid
        .par_iter()
        .map(|&d| {
            let pot = AdiabaticPotential::new(channel, d, reduced_mass, c6)?;
            Ok(ScanPoint {
                dipole: d,
                beta: rate_constant(&pot, t_gas, r_abs, false)?,
                barrier: barrier_outside(&pot, r_abs),
                in_window: inside(d),
            })
        })
        .collect::<Result<_>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        points.iter().filter(|p| p.in_window).map(|p| (p.dipole.ln(), p.beta.max(f64::MIN_POSITIVE).ln())).unzip();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(RateVsDipole { channel, temperature: t_gas, window_points: xs.len(), points, window, slope: sxy / sxx })
}
