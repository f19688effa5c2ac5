//! Physical constants (SI). Sources are listed in the README.

/// Reduced Planck constant, J s (CODATA 2018; exact since the 2019 SI
/// redefinition fixed h).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Proton mass, kg (CODATA 2018).
pub const PROTON_MASS: f64 = 1.672_621_923_69e-27;
/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Julian year, s (IAU).
pub const JULIAN_YEAR: f64 = 365.25 * 86_400.0;

/// Collapse rate adopted from the GRW model, 1/s.
pub const GRW_LAMBDA: f64 = 1e-16;
/// Smearing length adopted from the GRW model: 1e-5 cm, in m.
pub const GRW_SMEARING: f64 = 1e-7;
/// Age of the universe used for the energy-gain estimate, s.
pub const UNIVERSE_AGE: f64 = 4.3e17;
