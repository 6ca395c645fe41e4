//! Frequency unit conversion at the Hz boundary. Internal computation is in rad/s.

use std::f64::consts::TAU;

#[inline]
pub fn hz_to_rad(hz: f64) -> f64 {
    hz * TAU
}

#[inline]
pub fn rad_to_hz(rad: f64) -> f64 {
    rad / TAU
}
