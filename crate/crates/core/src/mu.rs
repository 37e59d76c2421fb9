//! The critical function μ(c) and the moments of the limiting occupation
//! ratio.
//!
//! The two-vertex walk's far-side local time ratio converges to a law on
//! (0, ∞) with density c exp(-(c(x-1))^2 / (2x)) / sqrt(2 pi x^3); μ(c) is
//! its minimal moment, the quantity whose product with the mean offspring
//! number decides recurrence versus transience. Three independent
//! formulas are implemented and cross-checked:
//!
//! * `mu_direct`    - (c/sqrt(2 pi)) ∫_0^∞ x^{-1} exp(-(c(x-1))^2/(2x)) dx
//! * `mu_gaussian`  - (1/sqrt(2 pi)) ∫_R e^{-y^2/2} / sqrt(1 + y^2/(4c^2)) dy
//! * `mu_bessel`    - sqrt(2/pi) c e^{c^2} K_0(c^2)
//!
//! μ is continuous and strictly increasing from 0 to 1, so the critical
//! reinforcement for mean offspring b is the root of μ(c) = 1/b.

use crate::bessel::bessel_k_scaled;
use crate::error::{Error, Result};
use crate::quad::{IntegralEstimate, Quadrature};

const SQRT_2PI: f64 = 2.506628274631000502415765284811;

/// Which of the three formulas produced a μ value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuMethod {
    Direct,
    Gaussian,
    Bessel,
}

/// μ(c) together with the method used and its certified error bound.
#[derive(Debug, Clone, Copy)]
pub struct MuValue {
    pub c: f64,
    pub mu: f64,
    pub method: MuMethod,
    pub err_bound: f64,
}

/// E[(limiting ratio)^theta] at reinforcement c.
#[derive(Debug, Clone, Copy)]
pub struct MomentValue {
    pub c: f64,
    pub theta: f64,
    pub value: f64,
}

fn check_c(c: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::domain(format!(
            "reinforcement parameter must be finite and positive, got {c}"
        )));
    }
    Ok(())
}

/// Density of the limiting occupation ratio at reinforcement c
/// (inverse-Gaussian shape: mean 1, shape parameter c^2).
pub fn limit_ratio_density(c: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let d = c * (x - 1.0);
    let e = -d * d / (2.0 * x);
    if e < -745.0 {
        return 0.0;
    }
    c * e.exp() / (SQRT_2PI * x.powf(1.5))
}

/// CDF of the limiting ratio law evaluated by quadrature at an ascending
/// slice of points. Integrates segment by segment so large sorted sample
/// sets cost one Kronrod application per gap.
pub fn limit_ratio_cdf_at(c: f64, points: &[f64], quad: &Quadrature) -> Result<Vec<f64>> {
    check_c(c)?;
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &x in points {
        if !(x >= prev) {
            return Err(Error::domain(
                "cdf evaluation points must be ascending and non-negative",
            ));
        }
        if x > prev {
            // The leading segment carries the whole lower tail; later gaps
            // between sorted points are tiny and converge immediately.
            let seg = quad.integrate(|u| limit_ratio_density(c, u), prev, x)?;
            acc += seg.value;
        }
        out.push(acc.min(1.0));
        prev = x;
    }
    Ok(out)
}

/// μ(c) from the defining integral.
pub fn mu_direct(c: f64, quad: &Quadrature) -> Result<MuValue> {
    check_c(c)?;
    let est: IntegralEstimate = quad.integrate_semi_infinite(|x| {
        if x <= 0.0 {
            return 0.0;
        }
        let d = c * (x - 1.0);
        let e = -d * d / (2.0 * x);
        if e < -745.0 {
            0.0
        } else {
            e.exp() / x
        }
    })?;
    let scale = c / SQRT_2PI;
    Ok(MuValue {
        c,
        mu: scale * est.value,
        method: MuMethod::Direct,
        err_bound: scale * est.err_bound,
    })
}

/// μ(c) after the change of variable that turns the integral into a
/// Gaussian average of (1 + y^2/(4c^2))^{-1/2}.
pub fn mu_gaussian(c: f64, quad: &Quadrature) -> Result<MuValue> {
    check_c(c)?;
    let inv4c2 = 1.0 / (4.0 * c * c);
    let est = quad.integrate_real_line(|y| {
        let e = -0.5 * y * y;
        if e < -745.0 {
            0.0
        } else {
            e.exp() / (1.0 + y * y * inv4c2).sqrt()
        }
    })?;
    Ok(MuValue {
        c,
        mu: est.value / SQRT_2PI,
        method: MuMethod::Gaussian,
        err_bound: est.err_bound / SQRT_2PI,
    })
}

/// μ(c) = sqrt(2/pi) c e^{c^2} K_0(c^2), evaluated through the scaled
/// Bessel function so the e^{c^2} factor cancels analytically.
pub fn mu_bessel(c: f64, quad: &Quadrature) -> Result<MuValue> {
    check_c(c)?;
    let scale = 2.0 * c / SQRT_2PI; // sqrt(2/pi) c
    let scaled = bessel_k_scaled(0.0, c * c, quad)?;
    Ok(MuValue {
        c,
        mu: scale * scaled,
        method: MuMethod::Bessel,
        err_bound: scale * quad.abs_tol.max(quad.rel_tol * scaled),
    })
}

/// E[(limiting ratio)^theta] = sqrt(2/pi) c e^{c^2} K_{theta - 1/2}(c^2).
pub fn limit_moment(c: f64, theta: f64, quad: &Quadrature) -> Result<MomentValue> {
    check_c(c)?;
    if !theta.is_finite() {
        return Err(Error::domain("moment order must be finite"));
    }
    let scaled = bessel_k_scaled(theta - 0.5, c * c, quad)?;
    Ok(MomentValue {
        c,
        theta,
        value: 2.0 * c / SQRT_2PI * scaled,
    })
}

/// Locate the minimizing moment order and the minimum value.
///
/// The minimum sits at theta = 1/2 with value μ(c); this routine exists
/// as a consistency check, so it finds the minimizer numerically instead
/// of assuming it. Bisection on the sign of a central difference is used
/// because the objective is strictly convex in theta.
pub fn minimize_moment(c: f64, quad: &Quadrature) -> Result<(f64, f64)> {
    check_c(c)?;
    // The signal near the flat minimum is quadratic; the inner quadrature
    // must resolve differences of order (d theta)^2.
    let tight = Quadrature {
        abs_tol: quad.abs_tol.min(1e-13),
        rel_tol: quad.rel_tol.min(1e-13),
        max_subdivisions: quad.max_subdivisions,
    };
    let h = 1e-4;
    let slope_sign = |theta: f64| -> Result<f64> {
        let hi = limit_moment(c, theta + h, &tight)?.value;
        let lo = limit_moment(c, theta - h, &tight)?.value;
        Ok(hi - lo)
    };
    let (mut lo, mut hi) = (-2.0f64, 3.0f64);
    if slope_sign(lo)? >= 0.0 || slope_sign(hi)? <= 0.0 {
        return Err(Error::domain(
            "moment minimizer not bracketed by [-2, 3]; unexpected for c > 0",
        ));
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if slope_sign(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta_star = 0.5 * (lo + hi);
    let value = limit_moment(c, theta_star, &tight)?.value;
    Ok((theta_star, value))
}

/// Invert μ: the critical reinforcement for mean offspring b > 1, found by
/// bisection of the strictly increasing map c -> μ(c) against 1/b.
pub fn critical_c(b: f64, tol: f64, quad: &Quadrature) -> Result<f64> {
    if !(b > 1.0) || !b.is_finite() {
        return Err(Error::domain(format!(
            "critical reinforcement needs mean offspring b > 1, got {b}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let target = 1.0 / b;
    let mu = |c: f64| -> Result<f64> { Ok(mu_gaussian(c, quad)?.mu) };

    let mut lo = 1e-6;
    let mut hi = 64.0;
    while mu(lo)? > target {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::domain("bisection bracket collapsed at zero"));
        }
    }
    while mu(hi)? < target {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::domain("bisection bracket ran away; b too close to 1"));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mu(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
