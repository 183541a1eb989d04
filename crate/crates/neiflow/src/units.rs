//! Unit conversions between the field units used in configuration files and
//! the strict SI units used internally.
//!
//! Internal convention: pressure in Pa, permeability in m^2, viscosity in
//! Pa.s, compressibility in 1/Pa, length in m, time in s, rate in m^3/s.
//! Configuration files speak millidarcy, MPa, and m^3/s/MPa; conversion
//! happens exactly once, when a model is constructed.

/// One millidarcy in m^2.
pub const MILLIDARCY_TO_M2: f64 = 9.869_233e-16;

/// One megapascal in Pa.
pub const MPA_TO_PA: f64 = 1.0e6;

/// Converts permeability from millidarcy to m^2.
pub fn md_to_m2(k_md: f64) -> f64 {
    k_md * MILLIDARCY_TO_M2
}

/// Converts permeability from m^2 to millidarcy.
pub fn m2_to_md(k_m2: f64) -> f64 {
    k_m2 / MILLIDARCY_TO_M2
}

/// Converts pressure from MPa to Pa.
pub fn mpa_to_pa(p_mpa: f64) -> f64 {
    p_mpa * MPA_TO_PA
}

/// Converts pressure from Pa to MPa.
pub fn pa_to_mpa(p_pa: f64) -> f64 {
    p_pa / MPA_TO_PA
}

/// Converts a productivity index from m^3/s/MPa to m^3/s/Pa.
pub fn pi_per_mpa_to_per_pa(pi: f64) -> f64 {
    pi / MPA_TO_PA
}
