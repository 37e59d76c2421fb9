//! Exact samplers for the two fundamental laws: the budgeted two-vertex
//! functional and its limiting ratio.
//!
//! The two-vertex functional is the local-time field the walk on {0, 1}
//! leaves at the far vertex when the origin's local time reaches a budget
//! t. Two exact routes are provided:
//!
//! * an event-driven simulation of the walk itself, priced at one
//!   exponential pair per excursion (the excursion count grows like t^2/2,
//!   so this is the small-budget route and the ground-truth oracle);
//! * a Poisson mixture derived in closed form from the functional's
//!   Laplace transform exp(c^2 - c sqrt((s+t)^2 - t^2 + c^2)): the value
//!   equals c plus a Poisson(c(t-c)) number of independent increments,
//!   each an exponential whose rate is randomized by an angle-like
//!   auxiliary variable with an analytically invertible CDF. Cost is
//!   linear in t, which makes large budgets affordable.
//!
//! Both routes represent the atom at c exactly: the value is bit-equal to
//! c exactly when no excursion happened. `sample_two_vertex` dispatches on
//! the expected excursion count; the two routes are cross-checked against
//! each other in the test suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mu::limit_ratio_cdf_at;
use crate::quad::Quadrature;
use crate::rng::RngStream;
use crate::stats::ks_distance_sorted;

/// One draw of the budgeted two-vertex functional.
///
/// `value >= c` always; `hit_atom` holds exactly when the walk never left
/// the origin before exhausting its budget, in which case `value == c`
/// bit-for-bit. `jumps` counts the sampling events behind the draw (the
/// walk's excursions on the event-driven route, the mixture count on the
/// closed-form route); it is zero exactly on the atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoVertexSample {
    pub value: f64,
    pub jumps: u64,
    pub hit_atom: bool,
}

fn check_args(c: f64, t: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::domain(format!("reinforcement must be positive, got {c}")));
    }
    if !(t >= c) || !t.is_finite() {
        return Err(Error::domain(format!(
            "local-time budget t = {t} must satisfy t >= c = {c}"
        )));
    }
    Ok(())
}

/// Expected excursion count of the event-driven route.
fn expected_excursions(c: f64, t: f64) -> f64 {
    let b = t - c;
    b * (c + 0.5 * b)
}

/// Event-driven budgets below this many expected excursions are cheaper
/// than the mixture's per-draw inversion.
const EVENT_DRIVEN_CUTOFF: f64 = 512.0;

/// Simulate the two-vertex walk started at the origin until the origin's
/// local time reaches `t`; return the far vertex's local-time field.
///
/// While sitting at the origin the walk jumps at the far vertex's rate
/// field; each excursion adds an exponential holding (at the origin's
/// frozen rate field) to the far side. The final origin holding is
/// truncated exactly at the budget, which is valid by memorylessness.
pub fn two_vertex_event_driven(c: f64, t: f64, rng: &mut ChaCha8Rng) -> Result<TwoVertexSample> {
    check_args(c, t)?;
    let budget = t - c;
    let mut spent = 0.0f64; // origin occupation so far
    let mut far = c; // far vertex rate field = c + its occupation
    let mut jumps = 0u64;
    loop {
        let hold: f64 = rng.sample::<f64, _>(Exp1) / far;
        if spent + hold >= budget {
            break;
        }
        spent += hold;
        jumps += 1;
        let excursion: f64 = rng.sample::<f64, _>(Exp1) / (c + spent);
        far += excursion;
    }
    Ok(TwoVertexSample {
        value: far,
        jumps,
        hit_atom: jumps == 0,
    })
}

/// Shared geometry of the closed-form mixture for fixed (c, t).
///
/// The auxiliary variable w lives on [-1, 1] with density proportional to
/// sqrt(1 - w^2) / (t - q w) where q = sqrt(t^2 - c^2); its CDF
///
///   G(w) = -sqrt(1 - w^2)/q + (t/q^2) asin(w)
///          + (c/q^2) asin((q - t w)/(t - q w))
///
/// runs from -pi (t-c)/(2 q^2) to +pi (t-c)/(2 q^2). Conditional on w the
/// increment is exponential with rate t - q w.
#[derive(Debug, Clone, Copy)]
struct MixtureGeometry {
    c: f64,
    t: f64,
    q: f64,
    /// t - q computed stably as c^2 / (t + q).
    t_minus_q: f64,
    /// Total mass of the unnormalized w-density, pi (t - c) / q^2.
    total: f64,
}

impl MixtureGeometry {
    fn new(c: f64, t: f64) -> Self {
        let q = ((t - c) * (t + c)).sqrt();
        let t_minus_q = c * c / (t + q);
        let total = std::f64::consts::PI * (t - c) / (q * q);
        MixtureGeometry {
            c,
            t,
            q,
            t_minus_q,
            total,
        }
    }

    /// Exponential rate for a given w, exact also near w = 1.
    #[inline]
    fn rate(&self, w: f64) -> f64 {
        self.t_minus_q + self.q * (1.0 - w)
    }

    /// Unnormalized CDF G(w), centered so G(-1) = -total/2, G(1) = +total/2.
    fn g(&self, w: f64) -> f64 {
        let q = self.q;
        let one_minus = 1.0 - w;
        let root = (one_minus * (1.0 + w)).max(0.0).sqrt();
        // q - t w = -(t - q) + t (1 - w), stable against cancellation.
        let num = -self.t_minus_q + self.t * one_minus;
        let r = (num / self.rate(w)).clamp(-1.0, 1.0);
        -root / q + (self.t * w.clamp(-1.0, 1.0).asin() + self.c * r.asin()) / (q * q)
    }

    /// Invert G(w) = target with a bracket-guarded Newton iteration.
    fn invert(&self, target: f64, mut lo: f64, mut hi: f64) -> f64 {
        let mut w = 0.5 * (lo + hi);
        for _ in 0..80 {
            let fw = self.g(w) - target;
            if fw.abs() < 1e-15 * self.total {
                return w;
            }
            if fw > 0.0 {
                hi = w;
            } else {
                lo = w;
            }
            if (hi - lo) < 4.0 * f64::EPSILON {
                return 0.5 * (lo + hi);
            }
            let deriv = (1.0 - w * w).max(0.0).sqrt() / self.rate(w);
            let mut next = if deriv > 0.0 { w - fw / deriv } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            w = next;
        }
        0.5 * (lo + hi)
    }

    /// Draw one increment: randomize the rate through w, then draw the
    /// exponential.
    fn draw_increment(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let target = (u - 0.5) * self.total;
        let w = self.invert(target, -1.0, 1.0);
        rng.sample::<f64, _>(Exp1) / self.rate(w)
    }
}

/// Closed-form mixture route: value = c + sum of Poisson(c(t-c)) many
/// independent increments. Exact in law, linear cost in t.
pub fn two_vertex_mixture(c: f64, t: f64, rng: &mut ChaCha8Rng) -> Result<TwoVertexSample> {
    check_args(c, t)?;
    if t == c || (t - c) < 1e-10 * t {
        // Degenerate geometry; the event-driven walk costs nothing here.
        return two_vertex_event_driven(c, t, rng);
    }
    let geom = MixtureGeometry::new(c, t);
    let lambda = c * (t - c);
    let n = Poisson::new(lambda)
        .map_err(|_| Error::domain("invalid Poisson intensity"))?
        .sample(rng) as u64;
    let mut value = c;
    for _ in 0..n {
        value += geom.draw_increment(rng);
    }
    Ok(TwoVertexSample {
        value,
        jumps: n,
        hit_atom: n == 0,
    })
}

/// Draw the budgeted two-vertex functional, choosing the cheaper exact
/// route for the given budget.
pub fn sample_two_vertex(c: f64, t: f64, rng: &mut ChaCha8Rng) -> Result<TwoVertexSample> {
    check_args(c, t)?;
    if expected_excursions(c, t) <= EVENT_DRIVEN_CUTOFF {
        two_vertex_event_driven(c, t, rng)
    } else {
        two_vertex_mixture(c, t, rng)
    }
}

/// Reusable sampler for many draws at one (c, t): precomputes a quantile
/// table for the mixture's auxiliary variable so each draw needs only a
/// short bracketed refinement.
#[derive(Debug)]
pub struct TwoVertexSampler {
    c: f64,
    t: f64,
    mode: SamplerMode,
}

#[derive(Debug)]
enum SamplerMode {
    EventDriven,
    Mixture {
        geom: MixtureGeometry,
        poisson: Poisson<f64>,
        /// w-quantiles at k/TABLE_SIZE for k = 0..=TABLE_SIZE.
        table: Vec<f64>,
    },
}

const TABLE_SIZE: usize = 1024;

impl TwoVertexSampler {
    pub fn new(c: f64, t: f64) -> Result<Self> {
        check_args(c, t)?;
        if expected_excursions(c, t) <= EVENT_DRIVEN_CUTOFF || (t - c) < 1e-10 * t {
            return Ok(TwoVertexSampler {
                c,
                t,
                mode: SamplerMode::EventDriven,
            });
        }
        let geom = MixtureGeometry::new(c, t);
        let lambda = c * (t - c);
        let poisson =
            Poisson::new(lambda).map_err(|_| Error::domain("invalid Poisson intensity"))?;
        let mut table = Vec::with_capacity(TABLE_SIZE + 1);
        table.push(-1.0);
        let mut lo = -1.0;
        for k in 1..TABLE_SIZE {
            let target = (k as f64 / TABLE_SIZE as f64 - 0.5) * geom.total;
            let w = geom.invert(target, lo, 1.0);
            table.push(w);
            lo = w;
        }
        table.push(1.0);
        Ok(TwoVertexSampler {
            c,
            t,
            mode: SamplerMode::Mixture {
                geom,
                poisson,
                table,
            },
        })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> TwoVertexSample {
        match &self.mode {
            SamplerMode::EventDriven => two_vertex_event_driven(self.c, self.t, rng)
                .expect("arguments validated at construction"),
            SamplerMode::Mixture {
                geom,
                poisson,
                table,
            } => {
                let n = poisson.sample(rng) as u64;
                let mut value = self.c;
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let pos = u * TABLE_SIZE as f64;
                    let k = (pos as usize).min(TABLE_SIZE - 1);
                    let target = (u - 0.5) * geom.total;
                    let w = geom.invert(target, table[k], table[k + 1]);
                    value += rng.sample::<f64, _>(Exp1) / geom.rate(w);
                }
                TwoVertexSample {
                    value,
                    jumps: n,
                    hit_atom: n == 0,
                }
            }
        }
    }
}

/// Draw the limiting occupation ratio (inverse-Gaussian, mean 1, shape
/// c^2) by the transform-with-uniform-selection method. The root of the
/// defining quadratic is evaluated in a cancellation-free form so the
/// result is always strictly positive.
pub fn sample_limit_ratio(c: f64, rng: &mut ChaCha8Rng) -> f64 {
    let lambda = c * c;
    let v: f64 = rng.sample(StandardNormal);
    let y = v * v;
    let s = (y * y + 4.0 * lambda * y).sqrt();
    let x = 1.0 - 2.0 * y / (y + s);
    let u: f64 = rng.random();
    if u <= 1.0 / (1.0 + x) {
        x
    } else {
        1.0 / x
    }
}

/// One entry of a convergence-to-the-limit check.
#[derive(Debug, Clone, Copy)]
pub struct ConvergencePoint {
    pub t: f64,
    pub ks_distance: f64,
}

/// For each budget t in an ascending grid, draw `n` copies of the
/// two-vertex functional divided by t and report the KS distance to the
/// limiting ratio law (its CDF computed by quadrature). Distances shrink
/// as t grows, up to Monte Carlo noise; the degenerate t = c point is
/// reported as-is.
pub fn limit_convergence_check(
    c: f64,
    t_grid: &[f64],
    n: usize,
    quad: &Quadrature,
    stream: RngStream,
) -> Result<Vec<ConvergencePoint>> {
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("t grid must be strictly increasing"));
    }
    let mut out = Vec::with_capacity(t_grid.len());
    for (i, &t) in t_grid.iter().enumerate() {
        check_args(c, t)?;
        let sampler = TwoVertexSampler::new(c, t)?;
        let mut scaled = sample_parallel(&sampler, n, stream.child(i as u64));
        scaled.iter_mut().for_each(|x| *x /= t);
        scaled.sort_by(f64::total_cmp);
        let cdf = limit_ratio_cdf_at(c, &scaled, quad)?;
        out.push(ConvergencePoint {
            t,
            ks_distance: ks_distance_sorted(&scaled, &cdf),
        });
    }
    Ok(out)
}

/// Replica-parallel sampling with the chunk index fixing the substream,
/// so results do not depend on scheduling.
pub fn sample_parallel(sampler: &TwoVertexSampler, n: usize, stream: RngStream) -> Vec<f64> {
    const CHUNK: usize = 1024;
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|j| {
            let mut rng = stream.child(j as u64).rng();
            let len = CHUNK.min(n - j * CHUNK);
            (0..len)
                .map(|_| sampler.sample(&mut rng).value)
                .collect::<Vec<_>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{binomial_stderr, ks_two_sample, mean_and_stderr, normal_cdf};

    fn rng(seed: u64) -> ChaCha8Rng {
        RngStream::from_seed(seed).rng()
    }

    #[test]
    fn zero_budget_is_the_atom() {
        let mut r = rng(0);
        for _ in 0..100 {
            let s = two_vertex_event_driven(1.0, 1.0, &mut r).unwrap();
            assert_eq!(s.value, 1.0);
            assert_eq!(s.jumps, 0);
            assert!(s.hit_atom);
        }
    }

    #[test]
    fn rejects_budget_below_offset() {
        let mut r = rng(0);
        assert!(sample_two_vertex(1.0, 0.5, &mut r).is_err());
        assert!(sample_two_vertex(-1.0, 2.0, &mut r).is_err());
    }

    #[test]
    fn atom_mass_matches_exponential_overshoot() {
        // P{value = c} = exp(-c (t - c)), checked on both routes.
        let cases: [(f64, f64); 3] = [(1.0, 2.0), (2.0, 3.0), (0.5, 4.0)];
        let n = 100_000u64;
        for (c, t) in cases {
            let p = (-c * (t - c)).exp();
            let mut hits_event = 0u64;
            let mut r = rng(11);
            for _ in 0..n {
                if two_vertex_event_driven(c, t, &mut r).unwrap().hit_atom {
                    hits_event += 1;
                }
            }
            let mut hits_mix = 0u64;
            for _ in 0..n {
                if two_vertex_mixture(c, t, &mut r).unwrap().hit_atom {
                    hits_mix += 1;
                }
            }
            let se = binomial_stderr(p, n);
            for hits in [hits_event, hits_mix] {
                let p_hat = hits as f64 / n as f64;
                assert!(
                    (p_hat - p).abs() <= 4.0 * se,
                    "c={c} t={t}: {p_hat} vs {p}"
                );
            }
        }
    }

    #[test]
    fn no_values_inside_the_atom_gap() {
        // The atom is exact: nothing lands in (c, c + 1e-12).
        let mut r = rng(5);
        let c = 1.0;
        for t in [1.5, 3.0, 40.0] {
            for _ in 0..20_000 {
                let s = sample_two_vertex(c, t, &mut r).unwrap();
                assert!(s.value == c || s.value > c + 1e-12);
                assert_eq!(s.hit_atom, s.jumps == 0);
            }
        }
    }

    #[test]
    fn martingale_mean_equals_budget() {
        let (c, t) = (1.0, 3.0);
        let n = 100_000;
        let mut r = rng(23);
        let xs: Vec<f64> = (0..n)
            .map(|_| two_vertex_event_driven(c, t, &mut r).unwrap().value)
            .collect();
        let (mean, se) = mean_and_stderr(&xs);
        assert!((mean - t).abs() <= 4.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn variance_matches_transform_derivation() {
        // Var = t^2/c^2 - 1, read off the same Laplace transform that
        // underlies the mixture route but checked against the event route.
        let (c, t) = (2.0, 7.0);
        let n = 200_000;
        let mut r = rng(29);
        let xs: Vec<f64> = (0..n)
            .map(|_| two_vertex_event_driven(c, t, &mut r).unwrap().value)
            .collect();
        let (mean, _) = mean_and_stderr(&xs);
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let expected = t * t / (c * c) - 1.0;
        assert!(
            (var - expected).abs() < 0.05 * expected,
            "{var} vs {expected}"
        );
    }

    #[test]
    fn mixture_agrees_with_event_driven() {
        // Dual-route cross-check at a budget where both are affordable.
        let (c, t) = (1.0, 6.0);
        let n = 200_000usize;
        let mut r = rng(37);
        let a: Vec<f64> = (0..n)
            .map(|_| two_vertex_event_driven(c, t, &mut r).unwrap().value)
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|_| two_vertex_mixture(c, t, &mut r).unwrap().value)
            .collect();
        let d = ks_two_sample(&a, &b);
        assert!(d < 0.01, "routes disagree: KS = {d}");
        let (ma, _) = mean_and_stderr(&a);
        let (mb, _) = mean_and_stderr(&b);
        assert!((ma - t).abs() < 0.05 && (mb - t).abs() < 0.05);
    }

    #[test]
    fn table_sampler_matches_direct_mixture() {
        let (c, t) = (1.0, 25.0);
        let sampler = TwoVertexSampler::new(c, t).unwrap();
        let n = 100_000usize;
        let mut r = rng(41);
        let a: Vec<f64> = (0..n).map(|_| sampler.sample(&mut r).value).collect();
        let b: Vec<f64> = (0..n)
            .map(|_| two_vertex_mixture(c, t, &mut r).unwrap().value)
            .collect();
        assert!(ks_two_sample(&a, &b) < 0.012);
        let (mean, se) = mean_and_stderr(&a);
        assert!((mean - t).abs() <= 5.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn conditional_tail_dominates_first_excursion_bound() {
        // P{value >= alpha | value > c} >= exp(-(alpha - c) t).
        let (c, t, alpha): (f64, f64, f64) = (1.0, 2.0, 2.0);
        let bound = (-(alpha - c) * t).exp();
        let mut r = rng(43);
        let mut beyond = 0u64;
        let mut cont = 0u64;
        for _ in 0..100_000 {
            let s = two_vertex_event_driven(c, t, &mut r).unwrap();
            if !s.hit_atom {
                cont += 1;
                if s.value >= alpha {
                    beyond += 1;
                }
            }
        }
        let p_hat = beyond as f64 / cont as f64;
        let se = binomial_stderr(p_hat, cont);
        assert!(p_hat + 4.0 * se >= bound, "{p_hat} vs bound {bound}");
    }

    #[test]
    fn stochastically_monotone_in_budget() {
        // Larger budgets push the law upward: empirical CDF at t2 sits
        // weakly below the one at t1 on a shared grid.
        let c = 1.0;
        let n = 60_000usize;
        let mut r = rng(47);
        let mut a: Vec<f64> = (0..n)
            .map(|_| two_vertex_event_driven(c, 2.0, &mut r).unwrap().value)
            .collect();
        let mut b: Vec<f64> = (0..n)
            .map(|_| two_vertex_event_driven(c, 4.0, &mut r).unwrap().value)
            .collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for x in [1.0, 1.5, 2.0, 3.0, 5.0, 8.0] {
            let fa = a.partition_point(|&v| v <= x) as f64 / n as f64;
            let fb = b.partition_point(|&v| v <= x) as f64 / n as f64;
            let se = binomial_stderr(fa.max(1e-12), n as u64) + binomial_stderr(fb.max(1e-12), n as u64);
            assert!(fb <= fa + 4.0 * se, "x={x}: F_t2 {fb} > F_t1 {fa}");
        }
    }

    #[test]
    fn identical_streams_reproduce() {
        let s1: Vec<TwoVertexSample> = {
            let mut r = rng(7);
            (0..50)
                .map(|_| sample_two_vertex(1.0, 5.0, &mut r).unwrap())
                .collect()
        };
        let s2: Vec<TwoVertexSample> = {
            let mut r = rng(7);
            (0..50)
                .map(|_| sample_two_vertex(1.0, 5.0, &mut r).unwrap())
                .collect()
        };
        assert_eq!(s1, s2);
    }

    #[test]
    fn limit_ratio_moments() {
        let n = 1_000_000usize;
        let mut r = rng(53);
        let xs: Vec<f64> = (0..n).map(|_| sample_limit_ratio(1.0, &mut r)).collect();
        let (mean, _) = mean_and_stderr(&xs);
        assert!((mean - 1.0).abs() < 0.005, "{mean}");
        let sqrt_mean = xs.iter().map(|x| x.sqrt()).sum::<f64>() / n as f64;
        assert!((sqrt_mean - 0.9132).abs() < 0.003, "{sqrt_mean}");

        let ys: Vec<f64> = (0..n).map(|_| sample_limit_ratio(2.0, &mut r)).collect();
        let (m2, _) = mean_and_stderr(&ys);
        let var = ys.iter().map(|y| (y - m2) * (y - m2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.25).abs() < 0.01, "{var}");
        assert!(ys.iter().all(|&y| y > 0.0));
    }

    #[test]
    fn quadrature_cdf_identifies_the_closed_form() {
        // The explicit density integrates to the inverse-Gaussian CDF;
        // this is the identification that licenses the fast sampler.
        let c = 1.0;
        let lambda = c * c;
        let pts = [0.25, 0.5, 1.0, 2.0, 4.0];
        let quad = Quadrature::default();
        let by_quadrature = limit_ratio_cdf_at(c, &pts, &quad).unwrap();
        for (&x, &fq) in pts.iter().zip(&by_quadrature) {
            let s = (lambda / x).sqrt();
            let closed = normal_cdf(s * (x - 1.0)) + (2.0 * lambda).exp() * normal_cdf(-s * (x + 1.0));
            assert!((fq - closed).abs() < 1e-9, "x={x}: {fq} vs {closed}");
        }
    }

    #[test]
    fn convergence_toward_the_limit_law() {
        let quad = Quadrature::default();
        let pts = limit_convergence_check(
            1.0,
            &[2.0, 8.0, 64.0],
            20_000,
            &quad,
            RngStream::from_seed(59),
        )
        .unwrap();
        assert!(pts[2].ks_distance < pts[0].ks_distance);
        assert!(pts[2].ks_distance < 0.05, "{:?}", pts);
    }

    #[test]
    fn degenerate_grid_point_is_reported() {
        let quad = Quadrature::default();
        let pts =
            limit_convergence_check(1.0, &[1.0, 4.0], 2_000, &quad, RngStream::from_seed(61))
                .unwrap();
        // At t = c the sample is the point mass at 1; the distance is the
        // CDF gap there, reported without judgement.
        assert!(pts[0].ks_distance > 0.3);
        assert!(pts[1].ks_distance < pts[0].ks_distance);
    }
}

