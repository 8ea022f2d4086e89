//! Conversions between SI and the laboratory units used at the I/O boundary.

use crate::constants::{BOLTZMANN, C6_ATOMIC_UNIT, DEBYE};

pub fn nanokelvin(t_nk: f64) -> f64 {
    t_nk * 1e-9
}

pub fn to_nanokelvin(t_k: f64) -> f64 {
    t_k * 1e9
}

pub fn microkelvin(t_uk: f64) -> f64 {
    t_uk * 1e-6
}

pub fn to_microkelvin(t_k: f64) -> f64 {
    t_k * 1e6
}

/// Thermal energy `k_B T` of a temperature given in nK.
pub fn nanokelvin_to_joule(t_nk: f64) -> f64 {
    BOLTZMANN * nanokelvin(t_nk)
}

pub fn joule_to_nanokelvin(e: f64) -> f64 {
    to_nanokelvin(e / BOLTZMANN)
}

pub fn debye(d: f64) -> f64 {
    d * DEBYE
}

pub fn to_debye(d_si: f64) -> f64 {
    d_si / DEBYE
}

pub fn c6_atomic(c6_au: f64) -> f64 {
    c6_au * C6_ATOMIC_UNIT
}

pub fn to_c6_atomic(c6_si: f64) -> f64 {
    c6_si / C6_ATOMIC_UNIT
}

pub fn kilohertz(f: f64) -> f64 {
    f * 1e3
}

pub fn nanometer(x: f64) -> f64 {
    x * 1e-9
}

pub fn to_nanometer(x: f64) -> f64 {
    x * 1e9
}

pub fn micrometer(x: f64) -> f64 {
    x * 1e-6
}

/// Area density cm^-2 -> m^-2.
pub fn per_cm2(n: f64) -> f64 {
    n * 1e4
}

pub fn to_per_cm2(n: f64) -> f64 {
    n * 1e-4
}

/// 2D rate constant cm^2/s -> m^2/s.
pub fn cm2_per_s(beta: f64) -> f64 {
    beta * 1e-4
}

pub fn to_cm2_per_s(beta: f64) -> f64 {
    beta * 1e4
}

/// 3D rate constant cm^3/s -> m^3/s.
pub fn cm3_per_s(beta: f64) -> f64 {
    beta * 1e-6
}

pub fn to_cm3_per_s(beta: f64) -> f64 {
    beta * 1e6
}
