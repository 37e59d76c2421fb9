//! Adaptive Gauss-Kronrod quadrature.
//!
//! A 15-point Kronrod rule (embedding the 7-point Gauss rule) is applied
//! per panel; the worst panel is bisected until the summed error bound
//! drops below `max(abs_tol, rel_tol * |value|)`. Semi-infinite integrals
//! are mapped onto (0, 1) with x = u/(1-u); the whole real line is folded
//! onto (0, 1) with x = (1-t)/t evaluated at both signs. Kronrod nodes
//! are interior, so transformed endpoint singularities are never sampled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// 15-point Kronrod abscissae (positive half, includes the center).
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

// 7-point Gauss weights, matching the odd Kronrod abscissae.
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

// 15-point Kronrod weights.
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// One Kronrod application on [a, b].
///
/// Returns (integral, error bound, resabs). The error bound uses the
/// QUADPACK rescaling of |K15 - G7| against the deviation integral, which
/// is sharp enough to drive adaptive refinement without being optimistic.
fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut resg = WG[3] * fc;
    let mut resk = WGK[7] * fc;
    let mut resabs = resk.abs();

    let mut fv1 = [0.0f64; 8];
    let mut fv2 = [0.0f64; 8];
    fv1[7] = fc;
    fv2[7] = fc;

    for j in 0..3 {
        let jtw = 2 * j + 1;
        let absc = half * XGK[jtw];
        let f1 = f(center - absc);
        let f2 = f(center + absc);
        fv1[jtw] = f1;
        fv2[jtw] = f2;
        let fsum = f1 + f2;
        resg += WG[j] * fsum;
        resk += WGK[jtw] * fsum;
        resabs += WGK[jtw] * (f1.abs() + f2.abs());
    }

    for j in 0..4 {
        let jtwm1 = 2 * j;
        let absc = half * XGK[jtwm1];
        let f1 = f(center - absc);
        let f2 = f(center + absc);
        fv1[jtwm1] = f1;
        fv2[jtwm1] = f2;
        let fsum = f1 + f2;
        resk += WGK[jtwm1] * fsum;
        resabs += WGK[jtwm1] * (f1.abs() + f2.abs());
    }

    let reskh = 0.5 * resk;
    let mut resasc = WGK[7] * (fc - reskh).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - reskh).abs() + (fv2[j] - reskh).abs());
    }

    let result = resk * half;
    let resabs = resabs * half.abs();
    let resasc = resasc * half.abs();
    let mut err = ((resk - resg) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    let round_floor = 50.0 * f64::EPSILON * resabs;
    if round_floor > 0.0 {
        err = err.max(round_floor);
    }
    (result, err, resabs)
}

#[derive(Debug)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Tolerances and subdivision budget for adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_subdivisions: 4000,
        }
    }
}

/// Result of an adaptive integration: the estimate and a bound on its
/// error, never silently dropped.
#[derive(Debug, Clone, Copy)]
pub struct IntegralEstimate {
    pub value: f64,
    pub err_bound: f64,
    pub subdivisions: usize,
}

impl Quadrature {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Result<Self> {
        if !(abs_tol > 0.0) || !(rel_tol > 0.0) {
            return Err(Error::domain("quadrature tolerances must be positive"));
        }
        Ok(Quadrature {
            abs_tol,
            rel_tol,
            ..Quadrature::default()
        })
    }

    /// Tighten both tolerances by `factor` (used when a caller needs more
    /// accuracy than its own contract, e.g. cross-formula agreement checks).
    #[must_use]
    pub fn tightened(&self, factor: f64) -> Self {
        Quadrature {
            abs_tol: self.abs_tol * factor,
            rel_tol: self.rel_tol * factor,
            max_subdivisions: self.max_subdivisions,
        }
    }

    /// Integrate `f` over the finite interval [a, b].
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<IntegralEstimate> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::domain("integrate requires finite bounds"));
        }
        self.adaptive(&f, a, b)
    }

    /// Integrate `f` over [0, ∞) via x = u/(1-u).
    pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(&self, f: F) -> Result<IntegralEstimate> {
        let g = |u: f64| {
            let inv = 1.0 - u;
            let x = u / inv;
            let y = f(x);
            if y == 0.0 {
                0.0
            } else {
                y / (inv * inv)
            }
        };
        self.adaptive(&g, 0.0, 1.0)
    }

    /// Integrate `f` over (-∞, ∞) by folding both tails onto (0, 1).
    pub fn integrate_real_line<F: Fn(f64) -> f64>(&self, f: F) -> Result<IntegralEstimate> {
        let g = |t: f64| {
            let x = (1.0 - t) / t;
            let s = f(x) + f(-x);
            if s == 0.0 {
                0.0
            } else {
                s / (t * t)
            }
        };
        self.adaptive(&g, 0.0, 1.0)
    }

    fn tolerance(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }

    fn adaptive<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> Result<IntegralEstimate> {
        // Eight seed panels so narrow interior features are seen before
        // the refinement loop commits to a region.
        const SEEDS: usize = 8;
        let mut heap = BinaryHeap::with_capacity(64);
        let width = (b - a) / SEEDS as f64;
        let mut value = 0.0;
        let mut err = 0.0;
        for i in 0..SEEDS {
            let lo = a + i as f64 * width;
            let hi = if i == SEEDS - 1 { b } else { lo + width };
            let (v, e, _) = kronrod15(f, lo, hi);
            if !v.is_finite() {
                return Err(Error::domain(
                    "integrand produced a non-finite value during quadrature",
                ));
            }
            value += v;
            err += e;
            heap.push(Panel {
                a: lo,
                b: hi,
                value: v,
                err: e,
            });
        }

        let mut subdivisions = SEEDS;
        while err > self.tolerance(value) {
            if subdivisions >= self.max_subdivisions {
                return Err(Error::QuadratureNoConvergence {
                    estimate: value,
                    err_bound: err,
                    subdivisions,
                });
            }
            let worst = heap.pop().expect("heap never empties");
            let mid = 0.5 * (worst.a + worst.b);
            if !(worst.a < mid && mid < worst.b) {
                // Panel narrower than machine resolution: nothing left to
                // gain from splitting, so report what we have.
                return Err(Error::QuadratureNoConvergence {
                    estimate: value,
                    err_bound: err,
                    subdivisions,
                });
            }
            let (v1, e1, _) = kronrod15(f, worst.a, mid);
            let (v2, e2, _) = kronrod15(f, mid, worst.b);
            if !(v1.is_finite() && v2.is_finite()) {
                return Err(Error::domain(
                    "integrand produced a non-finite value during quadrature",
                ));
            }
            value += v1 + v2 - worst.value;
            err += e1 + e2 - worst.err;
            heap.push(Panel {
                a: worst.a,
                b: mid,
                value: v1,
                err: e1,
            });
            heap.push(Panel {
                a: mid,
                b: worst.b,
                value: v2,
                err: e2,
            });
            subdivisions += 1;
        }

        // Recompute the totals from the live panels; the incremental sums
        // accumulate cancellation error over many refinements.
        let mut value = 0.0;
        let mut err = 0.0;
        for p in heap.iter() {
            value += p.value;
            err += p.err;
        }
        Ok(IntegralEstimate {
            value,
            err_bound: err,
            subdivisions,
        })
    }
}
