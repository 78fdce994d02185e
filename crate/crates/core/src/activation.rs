//! Smooth replacement for the indicator functions used throughout the fluid
//! equations. A hard `1{z > 0}` makes the right-hand side discontinuous, which
//! a fixed-step integrator cannot resolve; the logistic keeps it Lipschitz.

/// Default steepness applied to a normalized (unit-free) argument.
pub const DEFAULT_STEEPNESS: f64 = 50.0;

/// Logistic activation `1 / (1 + exp(-k z))`.
#[inline]
pub fn smooth_step(z: f64, steepness: f64) -> f64 {
    let a = -steepness * z;
    // exp overflows to +inf past ~709; the limit is 0 there anyway.
    if a > 700.0 {
        0.0
    } else {
        1.0 / (1.0 + a.exp())
    }
}
