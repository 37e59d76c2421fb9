//! Modified Bessel function of the second kind, K.
//!
//! Evaluated from the integral representation
//! K_a(z) = ∫_0^∞ exp(-z cosh t) cosh(a t) dt, truncated where the
//! integrand drops below 1e-30 of its peak. One representation covers the
//! whole (order, z) range this crate needs, so there is no series or
//! asymptotic switching. The exponentially scaled variant e^z K_a(z) is
//! exposed separately so downstream formulas with e^{c^2} prefactors can
//! cancel the exponential analytically instead of overflowing.

use crate::error::{Error, Result};
use crate::quad::Quadrature;

/// Orders past this point need asymptotic handling we deliberately left out.
const MAX_ORDER: f64 = 10.0;

fn check_range(order: f64, z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() || !order.is_finite() || order.abs() > MAX_ORDER {
        return Err(Error::BesselRange { order, z });
    }
    // K_a = K_{-a}: reduce to the non-negative order.
    Ok(order.abs())
}

/// Truncation point: beyond it, exp(-z(cosh t - 1)) cosh(a t) is below
/// 1e-30 relative to the t = 0 value with a wide safety margin.
fn upper_limit(a: f64, z: f64) -> f64 {
    let target = 30.0 * std::f64::consts::LN_10 + 20.0;
    let mut t = 1.0f64;
    while z * (t.cosh() - 1.0) - a * t < target {
        t += 0.5;
        if t > 500.0 {
            break;
        }
    }
    t
}

/// e^z K_order(z), computed as ∫_0^∞ exp(-z(cosh t - 1)) cosh(order t) dt.
pub fn bessel_k_scaled(order: f64, z: f64, quad: &Quadrature) -> Result<f64> {
    let a = check_range(order, z)?;
    let t_max = upper_limit(a, z);
    let est = quad.integrate(
        |t| {
            let e = -z * (t.cosh() - 1.0);
            if e < -700.0 {
                0.0
            } else {
                e.exp() * (a * t).cosh()
            }
        },
        0.0,
        t_max,
    )?;
    Ok(est.value)
}

/// K_order(z) for z > 0. Symmetric in the sign of `order`.
pub fn bessel_k(order: f64, z: f64, quad: &Quadrature) -> Result<f64> {
    if z > 700.0 {
        // e^{-z} underflows; the unscaled value is not representable.
        return Err(Error::BesselRange { order, z });
    }
    Ok(bessel_k_scaled(order, z, quad)? * (-z).exp())
}
