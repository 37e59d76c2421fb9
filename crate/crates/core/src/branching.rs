//! The branching Markov chain built over the offspring law, its absorbed
//! single-lineage chain, and the barrier-crossing machinery used to
//! estimate survival probabilities and decay exponents.
//!
//! A particle at position x > c spawns an offspring-law number of
//! children, each positioned by an independent draw of the budgeted
//! two-vertex functional at budget x. The offset value c is absorbing:
//! absorbed particles only ever beget absorbed descendants, so fronts
//! carry alive positions exactly and absorbed particles as a bare count.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sampling::{sample_limit_ratio, sample_two_vertex};
use crate::stats::{binomial_stderr, linear_fit};
use crate::trees::OffspringDistribution;

/// One step of the absorbed local-time chain: from x >= c, move to a
/// fresh draw of the two-vertex functional at budget x. The absorbing
/// value consumes no randomness.
pub fn chain_step(c: f64, x: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    if x == c {
        return Ok(c);
    }
    Ok(sample_two_vertex(c, x, rng)?.value)
}

/// Like [`chain_step`] but also reports the sampler's event count, used
/// for work accounting in long replica sweeps.
fn chain_step_metered(c: f64, x: f64, rng: &mut ChaCha8Rng) -> Result<(f64, u64)> {
    if x == c {
        return Ok((c, 0));
    }
    let s = sample_two_vertex(c, x, rng)?;
    Ok((s.value, s.jumps + 1))
}

/// The positions of one generation of the branching chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleFront {
    pub generation: u32,
    /// Positions strictly above the absorbing value.
    pub alive: Vec<f64>,
    /// Count of particles sitting exactly at the absorbing value.
    pub absorbed: u64,
}

impl ParticleFront {
    /// Front of the single initial particle at x0 >= c.
    pub fn start(x0: f64, c: f64) -> Result<Self> {
        if !(x0 >= c) {
            return Err(Error::domain(format!(
                "initial position {x0} must be at least the absorbing value {c}"
            )));
        }
        Ok(if x0 > c {
            ParticleFront {
                generation: 0,
                alive: vec![x0],
                absorbed: 0,
            }
        } else {
            ParticleFront {
                generation: 0,
                alive: Vec::new(),
                absorbed: 1,
            }
        })
    }

    pub fn total(&self) -> u64 {
        self.alive.len() as u64 + self.absorbed
    }

    pub fn alive_count(&self) -> usize {
        self.alive.len()
    }

    /// Dead in the absorbing sense: no particle strictly above c. Once
    /// true it stays true for every later generation, exactly.
    pub fn is_dead(&self) -> bool {
        self.alive.is_empty()
    }
}

/// Number of particles (alive or absorbed at c) positioned in [lo, hi].
/// Use an infinite `hi` for a half line.
pub fn count_in_interval(front: &ParticleFront, c: f64, lo: f64, hi: f64) -> Result<u64> {
    if !(lo <= hi) {
        return Err(Error::domain("interval bounds out of order"));
    }
    let alive = front
        .alive
        .iter()
        .filter(|&&x| x >= lo && x <= hi)
        .count() as u64;
    let absorbed = if lo <= c && c <= hi { front.absorbed } else { 0 };
    Ok(alive + absorbed)
}

/// Limits for a full-tracking front evolution.
#[derive(Debug, Clone, Copy)]
pub struct EvolveConfig {
    /// Cap on the total particle count of the produced generation.
    pub population_cap: usize,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            population_cap: 1_000_000,
        }
    }
}

/// Advance a front one generation, tracking absorbed lineages too (their
/// offspring counts are drawn, their positions are c without randomness).
/// Errors with the population cap when the next generation would exceed
/// it, leaving the caller to subsample or stop.
pub fn evolve_front(
    front: &ParticleFront,
    nu: &OffspringDistribution,
    c: f64,
    cfg: &EvolveConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ParticleFront> {
    let mut alive = Vec::with_capacity(front.alive.len() * 2);
    let mut absorbed = 0u64;
    let generation = front.generation + 1;
    for &x in &front.alive {
        let k = nu.sample(rng);
        for _ in 0..k {
            let value = sample_two_vertex(c, x, rng)?.value;
            if value > c {
                alive.push(value);
            } else {
                absorbed += 1;
            }
            if alive.len() + absorbed as usize > cfg.population_cap {
                return Err(Error::PopulationCap {
                    generation,
                    cap: cfg.population_cap,
                });
            }
        }
    }
    for _ in 0..front.absorbed {
        absorbed += nu.sample(rng) as u64;
        if alive.len() + absorbed as usize > cfg.population_cap {
            return Err(Error::PopulationCap {
                generation,
                cap: cfg.population_cap,
            });
        }
    }
    Ok(ParticleFront {
        generation,
        alive,
        absorbed,
    })
}

/// Tuning for replica-parallel survival estimation.
#[derive(Debug, Clone, Copy)]
pub struct SurvivalConfig {
    pub generations: u32,
    pub replicas: u32,
    /// A replica whose alive population reaches this size is declared a
    /// survivor and stops early (a front this large dies out later with
    /// negligible probability; the call is conservative anyway).
    pub alive_cap: usize,
    /// Sampler-event budget per replica; exceeding it also declares a
    /// survivor. Bounds the heavy-tailed cost of rare high-flying
    /// lineages.
    pub work_cap: u64,
}

impl Default for SurvivalConfig {
    fn default() -> Self {
        SurvivalConfig {
            generations: 25,
            replicas: 400,
            alive_cap: 4096,
            work_cap: 20_000_000,
        }
    }
}

/// Survival curve from replicated front evolutions.
#[derive(Debug, Clone)]
pub struct SurvivalEstimate {
    /// Fraction of replicas alive at the final generation.
    pub p_hat: f64,
    pub stderr: f64,
    /// (generation, surviving replica count, p_hat at that generation).
    pub per_generation: Vec<(u32, u64, f64)>,
    pub replicas: u32,
    /// Replicas stopped early at the alive cap (counted as survivors).
    pub population_capped: u32,
    /// Replicas stopped early at the work cap (counted as survivors).
    pub work_capped: u32,
}

impl SurvivalEstimate {
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.population_capped > 0 {
            w.push(format!(
                "{} replicas hit the alive-population cap and were counted as survivors",
                self.population_capped
            ));
        }
        if self.work_capped > 0 {
            w.push(format!(
                "{} replicas hit the work cap and were counted as survivors",
                self.work_capped
            ));
        }
        w
    }
}

/// Probability that the front from a single particle at x0 still has an
/// alive particle after the configured number of generations.
///
/// Only alive lineages are simulated; absorbed subtrees cannot produce
/// alive descendants, so dropping them leaves the survival event's law
/// untouched. The estimate is an upper-biased proxy for survival in the
/// infinite-generation sense and decreases in the horizon; the full
/// per-generation curve is returned so the bias stays visible.
pub fn estimate_survival(
    x0: f64,
    nu: &OffspringDistribution,
    c: f64,
    cfg: &SurvivalConfig,
    stream: RngStream,
) -> Result<SurvivalEstimate> {
    if cfg.generations == 0 || cfg.replicas == 0 {
        return Err(Error::domain("survival estimation needs generations, replicas >= 1"));
    }
    ParticleFront::start(x0, c)?;

    #[derive(Clone, Copy)]
    enum Outcome {
        DiedAt(u32),
        Survived,
        PopulationCapped,
        WorkCapped,
    }

    let outcomes: Vec<Result<Outcome>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream.child(r as u64).rng();
            let mut alive: Vec<f64> = if x0 > c { vec![x0] } else { Vec::new() };
            if alive.is_empty() {
                return Ok(Outcome::DiedAt(0));
            }
            let mut work = 0u64;
            let mut next: Vec<f64> = Vec::new();
            for g in 1..=cfg.generations {
                next.clear();
                for &x in &alive {
                    let k = nu.sample(&mut rng);
                    for _ in 0..k {
                        let (value, events) = chain_step_metered(c, x, &mut rng)?;
                        work += events;
                        if value > c {
                            next.push(value);
                        }
                    }
                }
                std::mem::swap(&mut alive, &mut next);
                if alive.is_empty() {
                    return Ok(Outcome::DiedAt(g));
                }
                if alive.len() >= cfg.alive_cap {
                    return Ok(Outcome::PopulationCapped);
                }
                if work >= cfg.work_cap {
                    return Ok(Outcome::WorkCapped);
                }
            }
            Ok(Outcome::Survived)
        })
        .collect();

    let mut died_at: Vec<Option<u32>> = Vec::with_capacity(cfg.replicas as usize);
    let mut population_capped = 0u32;
    let mut work_capped = 0u32;
    for o in outcomes {
        match o? {
            Outcome::DiedAt(g) => died_at.push(Some(g)),
            Outcome::Survived => died_at.push(None),
            Outcome::PopulationCapped => {
                population_capped += 1;
                died_at.push(None);
            }
            Outcome::WorkCapped => {
                work_capped += 1;
                died_at.push(None);
            }
        }
    }

    let n = cfg.replicas as u64;
    let mut per_generation = Vec::with_capacity(cfg.generations as usize);
    for g in 1..=cfg.generations {
        let survivors = died_at
            .iter()
            .filter(|d| d.map_or(true, |dg| dg > g))
            .count() as u64;
        per_generation.push((g, survivors, survivors as f64 / n as f64));
    }
    let p_hat = per_generation.last().expect("generations >= 1").2;
    Ok(SurvivalEstimate {
        p_hat,
        stderr: binomial_stderr(p_hat, n),
        per_generation,
        replicas: cfg.replicas,
        population_capped,
        work_capped,
    })
}

/// Pointwise comparison of alive-count distributions from two starting
/// positions; the higher start must dominate.
#[derive(Debug, Clone)]
pub struct DominanceReport {
    pub generations: u32,
    /// Worst (most negative allowed is bounded by tolerance) violation of
    /// P_x(N_g >= k) <= P_y(N_g >= k), measured in standard errors.
    pub worst_violation_sigma: f64,
    pub p_hat_low: f64,
    pub p_hat_high: f64,
    pub holds: bool,
}

/// Empirical check that the front started higher stochastically dominates
/// the one started lower, generation by generation. Shared replica
/// substreams make equal starts produce bit-identical runs.
pub fn dominance_check(
    x: f64,
    y: f64,
    nu: &OffspringDistribution,
    c: f64,
    generations: u32,
    replicas: u32,
    stream: RngStream,
) -> Result<DominanceReport> {
    if !(x <= y) {
        return Err(Error::domain("dominance check expects x <= y"));
    }
    let counts = |start: f64| -> Result<Vec<Vec<u32>>> {
        (0..replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream.child(r as u64).rng();
                let mut alive: Vec<f64> = if start > c { vec![start] } else { Vec::new() };
                let mut per_gen = Vec::with_capacity(generations as usize);
                let mut next: Vec<f64> = Vec::new();
                for _ in 1..=generations {
                    next.clear();
                    for &p in &alive {
                        let k = nu.sample(&mut rng);
                        for _ in 0..k {
                            let v = chain_step(c, p, &mut rng)?;
                            if v > c {
                                next.push(v);
                            }
                        }
                    }
                    std::mem::swap(&mut alive, &mut next);
                    per_gen.push(alive.len().min(u32::MAX as usize) as u32);
                    if alive.len() > 100_000 {
                        // Enough particles that both fronts are immortal in
                        // practice; freeze the count for later generations.
                        for _ in per_gen.len()..generations as usize {
                            per_gen.push(alive.len() as u32);
                        }
                        break;
                    }
                }
                Ok(per_gen)
            })
            .collect()
    };
    let low = counts(x)?;
    let high = counts(y)?;

    let mut worst = f64::INFINITY;
    for g in 0..generations as usize {
        for k in [1u32, 2, 4, 8, 16, 32, 64] {
            let p_low = low.iter().filter(|r| r[g] >= k).count() as f64 / replicas as f64;
            let p_high = high.iter().filter(|r| r[g] >= k).count() as f64 / replicas as f64;
            let se = binomial_stderr(p_low.max(1e-12), replicas as u64)
                + binomial_stderr(p_high.max(1e-12), replicas as u64);
            if se > 0.0 {
                worst = worst.min((p_high - p_low) / se);
            }
        }
    }
    let p_hat_low = low.iter().filter(|r| r[generations as usize - 1] >= 1).count() as f64
        / replicas as f64;
    let p_hat_high = high.iter().filter(|r| r[generations as usize - 1] >= 1).count() as f64
        / replicas as f64;
    Ok(DominanceReport {
        generations,
        worst_violation_sigma: worst,
        p_hat_low,
        p_hat_high,
        holds: worst >= -4.0,
    })
}

/// A single barrier run of the log-position chain.
#[derive(Debug, Clone)]
pub struct BarrierRun {
    /// Barrier level, log scale; the chain starts here.
    pub start: f64,
    /// Successive log positions, including the first one below the
    /// barrier if crossing happened inside the horizon.
    pub path: Vec<f64>,
    /// First index (1-based) at which the path dropped below the start.
    pub crossing: Option<u32>,
}

/// What drives the log-position steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierStepKind {
    /// Independent increments distributed as the log of the limiting
    /// ratio: the classical random-walk control case.
    IidLimitRatio,
    /// The actual absorbed local-time chain viewed on the log scale.
    LocalTimeChain,
}

/// Simulate one barrier run up to `n_max` steps.
pub fn barrier_run(
    c: f64,
    start_log: f64,
    n_max: u32,
    kind: BarrierStepKind,
    rng: &mut ChaCha8Rng,
) -> Result<BarrierRun> {
    let mut path = Vec::with_capacity(n_max as usize);
    let mut y = start_log;
    let mut crossing = None;
    for n in 1..=n_max {
        y = match kind {
            BarrierStepKind::IidLimitRatio => y + sample_limit_ratio(c, rng).ln(),
            BarrierStepKind::LocalTimeChain => chain_step(c, y.exp(), rng)?.ln(),
        };
        path.push(y);
        if y < start_log {
            crossing = Some(n);
            break;
        }
    }
    Ok(BarrierRun {
        start: start_log,
        path,
        crossing,
    })
}

/// Tuning for the decay-rate fit.
#[derive(Debug, Clone, Copy)]
pub struct BarrierConfig {
    pub n_min: u32,
    pub n_max: u32,
    pub replicas: u64,
    /// Bootstrap resamples for the confidence interval.
    pub bootstrap: u32,
    /// Minimum surviving paths at n_max for a usable fit.
    pub min_survivors: u64,
    /// Sampler-event budget per replica (chain kind only).
    pub work_cap: u64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        BarrierConfig {
            n_min: 10,
            n_max: 30,
            replicas: 1_000_000,
            bootstrap: 1000,
            min_survivors: 100,
            work_cap: 50_000_000,
        }
    }
}

/// Fitted barrier-survival decay rate.
#[derive(Debug, Clone)]
pub struct BarrierEstimate {
    /// exp(slope) of the fit of ln P(tau > n) + 3/2 ln n against n: the
    /// 3/2 term removes the universal first-passage polynomial factor so
    /// the window estimate tracks the exponential rate.
    pub rate: f64,
    /// Same fit without the polynomial correction, for reference.
    pub raw_rate: f64,
    /// Bootstrap percentile interval on `rate`.
    pub ci: (f64, f64),
    /// (n, paths with tau > n) for n = 0..=n_max.
    pub survival: Vec<(u32, u64)>,
    pub replicas: u64,
}

fn fit_rate(survival: &[(u32, u64)], replicas: u64, n_min: u32, n_max: u32) -> Option<(f64, f64)> {
    let mut xs = Vec::new();
    let mut ys_corrected = Vec::new();
    let mut ys_raw = Vec::new();
    for &(n, survivors) in survival {
        if n < n_min || n > n_max || survivors == 0 {
            continue;
        }
        let p = survivors as f64 / replicas as f64;
        xs.push(n as f64);
        ys_corrected.push(p.ln() + 1.5 * (n as f64).ln());
        ys_raw.push(p.ln());
    }
    if xs.len() < 3 {
        return None;
    }
    let (_, slope) = linear_fit(&xs, &ys_corrected);
    let (_, slope_raw) = linear_fit(&xs, &ys_raw);
    Some((slope.exp(), slope_raw.exp()))
}

/// Estimate the decay rate of P(tau > n) where tau is the first time the
/// log-position chain from `start_log` drops below its starting level.
pub fn barrier_exponent(
    c: f64,
    start_log: f64,
    cfg: &BarrierConfig,
    kind: BarrierStepKind,
    stream: RngStream,
) -> Result<BarrierEstimate> {
    if cfg.n_min >= cfg.n_max || cfg.replicas == 0 {
        return Err(Error::domain("barrier window must satisfy n_min < n_max"));
    }
    if kind == BarrierStepKind::LocalTimeChain && !(start_log.exp() > c) {
        return Err(Error::domain(
            "chain barrier runs need exp(start) above the absorbing value",
        ));
    }
    let n_max = cfg.n_max;
    // Histogram of tau over 1..=n_max, with n_max + 1 meaning "survived
    // the whole window". Replica-parallel in fixed-size blocks.
    const BLOCK: u64 = 4096;
    let blocks = cfg.replicas.div_ceil(BLOCK);
    let hists: Vec<Result<Vec<u64>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream.child(b).rng();
            let mut hist = vec![0u64; n_max as usize + 2];
            let in_block = BLOCK.min(cfg.replicas - b * BLOCK);
            for _ in 0..in_block {
                let mut y = start_log;
                let mut tau = n_max + 1;
                let mut work = 0u64;
                for n in 1..=n_max {
                    y = match kind {
                        BarrierStepKind::IidLimitRatio => {
                            y + sample_limit_ratio(c, &mut rng).ln()
                        }
                        BarrierStepKind::LocalTimeChain => {
                            let (z, events) = chain_step_metered(c, y.exp(), &mut rng)?;
                            work += events;
                            z.ln()
                        }
                    };
                    if y < start_log {
                        tau = n;
                        break;
                    }
                    if work >= cfg.work_cap {
                        // Treat as surviving the window; flagged by the
                        // caller through the survivors count only.
                        break;
                    }
                }
                hist[tau as usize] += 1;
            }
            Ok(hist)
        })
        .collect();
    let mut hist = vec![0u64; n_max as usize + 2];
    for h in hists {
        for (acc, v) in hist.iter_mut().zip(h?) {
            *acc += v;
        }
    }

    let survival_from = |hist: &[u64]| -> Vec<(u32, u64)> {
        let mut out = Vec::with_capacity(n_max as usize + 1);
        let mut beyond: u64 = hist.iter().sum();
        out.push((0, beyond));
        for n in 1..=n_max {
            beyond -= hist[n as usize];
            out.push((n, beyond));
        }
        out
    };
    let survival = survival_from(&hist);
    let survivors_at_end = survival.last().expect("non-empty").1;
    if survivors_at_end < cfg.min_survivors {
        return Err(Error::InsufficientData {
            survivors: survivors_at_end,
            needed: cfg.min_survivors,
            at: n_max,
        });
    }
    let (rate, raw_rate) =
        fit_rate(&survival, cfg.replicas, cfg.n_min, cfg.n_max).ok_or(Error::InsufficientData {
            survivors: survivors_at_end,
            needed: cfg.min_survivors,
            at: n_max,
        })?;

    // Percentile bootstrap over the tau histogram (multinomial resampling
    // by sequential binomials).
    let mut rng = stream.fold(0xb007).rng();
    let mut rates = Vec::with_capacity(cfg.bootstrap as usize);
    for _ in 0..cfg.bootstrap {
        let mut remaining = cfg.replicas;
        let mut mass = 1.0f64;
        let mut resampled = vec![0u64; hist.len()];
        for (i, &count) in hist.iter().enumerate() {
            if remaining == 0 || mass <= 0.0 {
                break;
            }
            let p = (count as f64 / cfg.replicas as f64 / mass).clamp(0.0, 1.0);
            let draw = if i + 1 == hist.len() {
                remaining
            } else {
                Binomial::new(remaining, p)
                    .map_err(|_| Error::domain("bootstrap binomial out of range"))?
                    .sample(&mut rng)
            };
            resampled[i] = draw;
            remaining -= draw;
            mass -= count as f64 / cfg.replicas as f64;
        }
        if let Some((r, _)) =
            fit_rate(&survival_from(&resampled), cfg.replicas, cfg.n_min, cfg.n_max)
        {
            rates.push(r);
        }
    }
    rates.sort_by(f64::total_cmp);
    let ci = if rates.len() >= 40 {
        (
            rates[(rates.len() as f64 * 0.025) as usize],
            rates[(rates.len() as f64 * 0.975) as usize],
        )
    } else {
        (f64::NAN, f64::NAN)
    };

    Ok(BarrierEstimate {
        rate,
        raw_rate,
        ci,
        survival,
        replicas: cfg.replicas,
    })
}
