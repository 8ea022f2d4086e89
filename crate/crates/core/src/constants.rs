//! CODATA 2018 constants in SI units, plus the physical helper functions
//! that only depend on them.

use std::f64::consts::PI;

use crate::error::{ensure_non_negative, ensure_positive, Result};

/// Planck constant (J s), exact.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = PLANCK / (2.0 * PI);
/// Boltzmann constant (J/K), exact.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Vacuum permittivity (F/m).
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
/// 4 pi epsilon_0 (C^2 / (J m)).
pub const FOUR_PI_EPSILON0: f64 = 4.0 * PI * VACUUM_PERMITTIVITY;
/// Unified atomic mass unit (kg).
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Speed of light (m/s), exact.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// One debye in C m (1e-21 / c).
pub const DEBYE: f64 = 1e-21 / SPEED_OF_LIGHT;
/// Hartree energy (J).
pub const HARTREE: f64 = 4.359_744_722_207_1e-18;
/// Bohr radius (m).
pub const BOHR_RADIUS: f64 = 5.291_772_109_03e-11;
/// Atomic unit of a C6 dispersion coefficient, E_h a_0^6 (J m^6).
pub const C6_ATOMIC_UNIT: f64 =
    HARTREE * BOHR_RADIUS * BOHR_RADIUS * BOHR_RADIUS * BOHR_RADIUS * BOHR_RADIUS * BOHR_RADIUS;

/// The constants as a value, for callers that want to pass them around or
/// serialize them next to results.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhysicalConstants {
    pub planck: f64,
    pub hbar: f64,
    pub boltzmann: f64,
    pub vacuum_permittivity_factor: f64,
    pub atomic_mass_unit: f64,
    pub debye: f64,
    pub c6_atomic_unit: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants::SI
    }
}

impl PhysicalConstants {
    pub const SI: PhysicalConstants = PhysicalConstants {
        planck: PLANCK,
        hbar: HBAR,
        boltzmann: BOLTZMANN,
        vacuum_permittivity_factor: FOUR_PI_EPSILON0,
        atomic_mass_unit: ATOMIC_MASS_UNIT,
        debye: DEBYE,
        c6_atomic_unit: C6_ATOMIC_UNIT,
    };
}

/// Harmonic oscillator length `sqrt(hbar / (m 2 pi nu))`.
pub fn harmonic_length(mass: f64, frequency: f64) -> Result<f64> {
    ensure_positive("mass", mass)?;
    ensure_positive("frequency", frequency)?;
    Ok((HBAR / (mass * 2.0 * PI * frequency)).sqrt())
}

/// `k_B T / (h nu_z)`.
pub fn scaled_temperature(temperature: f64, nu_z: f64) -> Result<f64> {
    ensure_non_negative("temperature", temperature)?;
    ensure_positive("nu_z", nu_z)?;
    Ok(BOLTZMANN * temperature / (PLANCK * nu_z))
}

/// Equipartition rms size of a thermal cloud in a harmonic trap,
/// `sqrt(k_B T / (m (2 pi nu_r)^2))`.
pub fn thermal_radial_size(temperature: f64, nu_r: f64, mass: f64) -> Result<f64> {
    ensure_positive("temperature", temperature)?;
    ensure_positive("nu_r", nu_r)?;
    ensure_positive("mass", mass)?;
    let omega = 2.0 * PI * nu_r;
    Ok((BOLTZMANN * temperature / (mass * omega * omega)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units;
    use approx::assert_relative_eq;

    fn krb_mass() -> f64 {
        127.0 * ATOMIC_MASS_UNIT
    }

    #[test]
    fn hbar_is_h_over_two_pi() {
        let c = PhysicalConstants::default();
        assert_relative_eq!(c.hbar * 2.0 * PI, c.planck, max_relative = 1e-15);
        assert!(c.boltzmann > 0.0 && c.debye > 0.0 && c.c6_atomic_unit > 0.0);
    }

    #[test]
    fn harmonic_length_krb_lattice() {
        let a = harmonic_length(krb_mass(), 23e3).unwrap();
        assert!((a - 58.8e-9).abs() < 0.1e-9, "a_ho = {a:e}");
        let a4 = harmonic_length(krb_mass(), 4.0 * 23e3).unwrap();
        assert_relative_eq!(a4, a / 2.0, max_relative = 1e-14);
        let half = harmonic_length(krb_mass() / 2.0, 23e3).unwrap();
        assert_relative_eq!(half, a * 2f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn harmonic_length_rejects_non_positive() {
        assert!(harmonic_length(0.0, 1.0).is_err());
        assert!(harmonic_length(1.0, -1.0).is_err());
    }

    #[test]
    fn scaled_temperature_values() {
        let s = scaled_temperature(units::nanokelvin(800.0), 23e3).unwrap();
        assert!((s - 0.72).abs() < 0.01, "{s}");
        assert_eq!(scaled_temperature(0.0, 23e3).unwrap(), 0.0);
        let t_unit = PLANCK * 23e3 / BOLTZMANN;
        assert!((t_unit - 1.1038e-6).abs() < 1e-10);
        assert_relative_eq!(scaled_temperature(t_unit, 23e3).unwrap(), 1.0, max_relative = 1e-14);
        assert!(scaled_temperature(1e-6, 0.0).is_err());
    }

    #[test]
    fn thermal_radial_size_values() {
        let t = units::nanokelvin(800.0);
        let s = thermal_radial_size(t, 36.0, krb_mass()).unwrap();
        assert!((s - 32.0e-6).abs() < 0.05e-6, "{s:e}");
        assert_relative_eq!(thermal_radial_size(4.0 * t, 36.0, krb_mass()).unwrap(), 2.0 * s, max_relative = 1e-14);
        assert_relative_eq!(thermal_radial_size(t, 72.0, krb_mass()).unwrap(), s / 2.0, max_relative = 1e-14);
        assert!(thermal_radial_size(0.0, 36.0, krb_mass()).is_err());
    }

    #[test]
    fn monotone_in_frequency_mass_and_temperature() {
        let grid: Vec<f64> = (1..50).map(|i| i as f64 * 1e3).collect();
        for w in grid.windows(2) {
            assert!(harmonic_length(krb_mass(), w[1]).unwrap() < harmonic_length(krb_mass(), w[0]).unwrap());
            assert!(
                thermal_radial_size(1e-6, w[1], krb_mass()).unwrap()
                    < thermal_radial_size(1e-6, w[0], krb_mass()).unwrap()
            );
        }
        let masses: Vec<f64> = (1..50).map(|i| i as f64 * 10.0 * ATOMIC_MASS_UNIT).collect();
        for m in masses.windows(2) {
            // larger 1/m gives larger lengths
            assert!(harmonic_length(m[0], 1e4).unwrap() > harmonic_length(m[1], 1e4).unwrap());
            assert!(thermal_radial_size(1e-6, 30.0, m[0]).unwrap() > thermal_radial_size(1e-6, 30.0, m[1]).unwrap());
        }
        let temps: Vec<f64> = (1..50).map(|i| i as f64 * 50e-9).collect();
        for t in temps.windows(2) {
            assert!(
                thermal_radial_size(t[1], 36.0, krb_mass()).unwrap()
                    > thermal_radial_size(t[0], 36.0, krb_mass()).unwrap()
            );
        }
    }
}
