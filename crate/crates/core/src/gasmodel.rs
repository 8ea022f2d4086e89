//! Lattice-level populations and the layered cloud geometry.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{BOLTZMANN, PLANCK};
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};

/// Fractional populations `f(v)` of the axial oscillator levels
/// `v = 0..=v_cut`. The top bucket holds the aggregated tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VibrationalDistribution {
    fractions: Vec<f64>,
}

impl VibrationalDistribution {
    /// Normalizes `weights`; they must be non-negative with a positive sum.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("distribution needs at least one level"));
        }
        for (v, &w) in weights.iter().enumerate() {
            ensure_non_negative(&format!("f({v})"), w)?;
        }
        let total: f64 = weights.iter().sum();
        ensure_positive("sum of weights", total)?;
        Ok(VibrationalDistribution { fractions: weights.into_iter().map(|w| w / total).collect() })
    }

    /// All population in `v = 0`.
    pub fn ground(levels: usize) -> Self {
        let mut fractions = vec![0.0; levels.max(1)];
        fractions[0] = 1.0;
        VibrationalDistribution { fractions }
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn levels(&self) -> usize {
        self.fractions.len()
    }

    pub fn ground_fraction(&self) -> f64 {
        self.fractions[0]
    }

    /// `S = sum_v f(v)^2`, the probability that two molecules share a level.
    pub fn same_level_probability(&self) -> f64 {
        self.fractions.iter().map(|f| f * f).sum()
    }
}

/// Thermal occupancy of the axial levels, `f(v) ~ exp(-v h nu_z / k_B T)`,
/// with everything at or above `v_cut` lumped into `f(v_cut)`.
pub fn boltzmann_occupancy(temperature: f64, nu_z: f64, v_cut: usize) -> Result<VibrationalDistribution> {
    ensure_non_negative("temperature", temperature)?;
    ensure_positive("nu_z", nu_z)?;
    if v_cut < 2 {
        return Err(Error::domain(format!("v_cut must be at least 2, got {v_cut}")));
    }
    if temperature == 0.0 {
        return Ok(VibrationalDistribution::ground(v_cut + 1));
    }
    let q = (-PLANCK * nu_z / (BOLTZMANN * temperature)).exp();
    let mut fractions: Vec<f64> = (0..v_cut).map(|v| (1.0 - q) * q.powi(v as i32)).collect();
    fractions.push(q.powi(v_cut as i32));
    VibrationalDistribution::new(fractions)
}

/// Moves a fraction `p` of the `v = 0` population into `v = 2`.
pub fn parametric_transfer(dist: &VibrationalDistribution, p: f64) -> Result<VibrationalDistribution> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("transfer fraction must lie in [0, 1], got {p}")));
    }
    if dist.levels() < 3 {
        return Err(Error::domain("parametric transfer needs levels up to v = 2"));
    }
    let mut fractions = dist.fractions.clone();
    let moved = p * fractions[0];
    fractions[0] -= moved;
    fractions[2] += moved;
    Ok(VibrationalDistribution { fractions })
}

/// Transfer fraction that leaves `target` of the molecules in `v = 0`.
pub fn transfer_for_ground_fraction(dist: &VibrationalDistribution, target: f64) -> Result<f64> {
    let f0 = dist.ground_fraction();
    if !(0.0..=f0).contains(&target) || f0 == 0.0 {
        return Err(Error::domain(format!("target ground fraction {target} not reachable from {f0}")));
    }
    Ok(1.0 - target / f0)
}

/// Molecule numbers per lattice layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    /// `(layer index j, N_j)`
    pub layers: Vec<(i32, f64)>,
    /// rms width in layers
    pub width: f64,
}

impl LayerStack {
    pub fn from_counts(counts: Vec<f64>, width: f64) -> Result<Self> {
        for &n in &counts {
            ensure_non_negative("layer count", n)?;
        }
        let half = (counts.len() / 2) as i32;
        let layers = counts.into_iter().enumerate().map(|(i, n)| (i as i32 - half, n)).collect();
        Ok(LayerStack { layers, width })
    }

    pub fn uniform(layers: usize, total: f64) -> Result<Self> {
        ensure_non_negative("total", total)?;
        if layers == 0 {
            return Err(Error::domain("uniform stack needs at least one layer"));
        }
        LayerStack::from_counts(vec![total / layers as f64; layers], f64::INFINITY)
    }

    pub fn total(&self) -> f64 {
        self.layers.iter().map(|(_, n)| n).sum()
    }

    pub fn counts(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().map(|&(_, n)| n)
    }

    pub fn peak(&self) -> f64 {
        self.counts().fold(0.0, f64::max)
    }

    pub fn occupied(&self) -> usize {
        self.counts().filter(|&n| n > 0.0).count()
    }
}

/// Discrete Gaussian stack `N_j ~ exp(-j^2 / 2 w^2)` for `|j| <= j_max`,
/// scaled to hold `total` molecules.
pub fn gaussian_layer_stack(total: f64, width: f64, j_max: usize) -> Result<LayerStack> {
    ensure_positive("total", total)?;
    ensure_positive("width", width)?;
    if (j_max as f64) < 3.0 * width {
        return Err(Error::Truncation { j_max, min: 3.0 * width });
    }
    let j_max = j_max as i32;
    let weights: Vec<(i32, f64)> = (-j_max..=j_max)
        .map(|j| {
            let x = j as f64 / width;
            (j, (-0.5 * x * x).exp())
        })
        .collect();
    let norm: f64 = weights.iter().map(|(_, w)| w).sum();
    Ok(LayerStack { layers: weights.into_iter().map(|(j, w)| (j, total * w / norm)).collect(), width })
}

/// [`gaussian_layer_stack`] with the default range `j_max = ceil(5 w)`.
pub fn gaussian_layer_stack_default(total: f64, width: f64) -> Result<LayerStack> {
    ensure_positive("width", width)?;
    gaussian_layer_stack(total, width, (5.0 * width).ceil() as usize)
}

/// `alpha = (sum N_j)^2 / sum N_j^2`.
pub fn effective_layer_number(stack: &LayerStack) -> Result<f64> {
    let sum = stack.total();
    if !(sum > 0.0) {
        return Err(Error::domain("effective layer number of an empty stack"));
    }
    let sum_sq: f64 = stack.counts().map(|n| n * n).sum();
    Ok(sum * sum / sum_sq)
}

/// Gaussian width whose discrete stack has effective layer number `alpha`.
pub fn layer_width_for_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::domain(format!("alpha must exceed 1, got {alpha}")));
    }
    let alpha_of = |w: f64| -> Result<f64> { effective_layer_number(&gaussian_layer_stack_default(1.0, w)?) };
    let (mut lo, mut hi) = (1e-3, alpha);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if alpha_of(mid)? < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Total number, transverse rms size and effective layer number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudState {
    pub total: f64,
    pub sigma_r: f64,
    pub alpha: f64,
}

impl CloudState {
    pub fn new(total: f64, sigma_r: f64, alpha: f64) -> Result<Self> {
        ensure_non_negative("total", total)?;
        ensure_positive("sigma_r", sigma_r)?;
        if !(alpha >= 1.0) {
            return Err(Error::domain(format!("alpha must be at least 1, got {alpha}")));
        }
        Ok(CloudState { total, sigma_r, alpha })
    }

    pub fn average_density(&self) -> Result<f64> {
        average_2d_density(self.total, self.sigma_r, self.alpha)
    }
}

/// `N / (4 pi alpha sigma_r^2)`, in m^-2.
pub fn average_2d_density(total: f64, sigma_r: f64, alpha: f64) -> Result<f64> {
    ensure_positive("total", total)?;
    ensure_positive("sigma_r", sigma_r)?;
    ensure_positive("alpha", alpha)?;
    Ok(total / (4.0 * PI * alpha * sigma_r * sigma_r))
}

/// Central column density of one Gaussian layer, `N_peak / (2 pi sigma_r^2)`.
pub fn peak_layer_density(peak_count: f64, sigma_r: f64) -> Result<f64> {
    ensure_non_negative("peak_count", peak_count)?;
    ensure_positive("sigma_r", sigma_r)?;
    Ok(peak_count / (2.0 * PI * sigma_r * sigma_r))
}
