//! Exact event-driven simulation of the reinforced jump walk on a rooted
//! tree.
//!
//! The walk sits at a vertex for an exponential holding time whose rate
//! is the sum of the neighbors' rate fields (the reinforcement constant c
//! plus the neighbor's accumulated occupation time), then jumps to a
//! neighbor with probability proportional to its rate field. There is no
//! time discretization anywhere: holdings are exact exponential draws,
//! and rules that stop mid-holding truncate the draw exactly, which is
//! valid by memorylessness.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mu::mu_gaussian;
use crate::quad::Quadrature;
use crate::rng::RngStream;
use crate::trees::{RootedTree, VertexId};

/// Mutable state of one walk.
#[derive(Debug, Clone)]
pub struct WalkState {
    pub current: VertexId,
    /// Height of the current vertex.
    pub current_height: u32,
    /// Total elapsed process time.
    pub clock: f64,
    /// Jump count so far.
    pub events: u64,
    /// Highest height reached.
    pub max_height: u32,
    occupation: Vec<f64>,
    visits: Vec<u64>,
}

impl WalkState {
    fn start(root: VertexId) -> Self {
        let mut visits = vec![0u64; root as usize + 1];
        visits[root as usize] = 1;
        WalkState {
            current: root,
            current_height: 0,
            clock: 0.0,
            events: 0,
            max_height: 0,
            occupation: vec![0.0; root as usize + 1],
            visits,
        }
    }

    /// Occupation time accumulated at `v` (zero if never visited).
    pub fn occupation(&self, v: VertexId) -> f64 {
        self.occupation.get(v as usize).copied().unwrap_or(0.0)
    }

    /// The walk's rate field at `v`: c plus the occupation time.
    pub fn local_time(&self, c: f64, v: VertexId) -> f64 {
        c + self.occupation(v)
    }

    pub fn visits(&self, v: VertexId) -> u64 {
        self.visits.get(v as usize).copied().unwrap_or(0)
    }

    /// Ids of every vertex with positive occupation or a visit.
    pub fn touched(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.visits.len() as u32).filter(|&v| self.visits[v as usize] > 0)
    }

    /// Signed clock drift: total occupation minus the clock. Exact
    /// arithmetic would give zero; floating point accumulates at most a
    /// relative 1e-9 over any practical run.
    pub fn clock_drift(&self) -> f64 {
        self.occupation.iter().sum::<f64>() - self.clock
    }

    fn accrue(&mut self, holding: f64) {
        self.occupation[self.current as usize] += holding;
        self.clock += holding;
    }

    fn jump_to(&mut self, v: VertexId, height: u32) {
        if self.visits.len() <= v as usize {
            self.visits.resize(v as usize + 1, 0);
            self.occupation.resize(v as usize + 1, 0.0);
        }
        self.visits[v as usize] += 1;
        self.events += 1;
        self.current = v;
        self.current_height = height;
        self.max_height = self.max_height.max(height);
    }

    #[cfg(test)]
    pub(crate) fn force_occupation(&mut self, v: VertexId, value: f64) {
        if self.occupation.len() <= v as usize {
            self.occupation.resize(v as usize + 1, 0.0);
            self.visits.resize(v as usize + 1, 0);
        }
        self.occupation[v as usize] = value;
    }
}

/// When to stop a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop the instant the root's rate field (c + occupation) reaches t.
    RootLocalTime(f64),
    /// Stop on first arrival at this height.
    HitHeight(u32),
    /// Stop when the process clock reaches this time.
    ClockBudget(f64),
    /// Stop after this many jumps.
    EventBudget(u64),
}

impl StopRule {
    fn validate(&self, c: f64) -> Result<()> {
        let ok = match *self {
            StopRule::RootLocalTime(t) => t >= c,
            StopRule::HitHeight(n) => n > 0,
            StopRule::ClockBudget(t) => t > 0.0,
            StopRule::EventBudget(m) => m > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("ill-formed stop rule {self:?} for c = {c}")))
        }
    }
}

/// Why a run returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    RuleFired,
    /// The event cap was exhausted before the rule fired; the state is
    /// still returned so callers can inspect the partial run.
    EventCapExceeded,
}

fn gather_rates(
    tree: &mut RootedTree,
    state: &WalkState,
    c: f64,
    buf: &mut Vec<(VertexId, f64)>,
) -> f64 {
    buf.clear();
    let v = state.current;
    if let Some(p) = tree.parent(v) {
        buf.push((p, state.local_time(c, p)));
    }
    for child in tree.children(v) {
        buf.push((child, state.local_time(c, child)));
    }
    buf.iter().map(|&(_, r)| r).sum()
}

/// One full jump event: draw the holding at the current vertex, accrue
/// it, and move to a neighbor chosen proportionally to its rate field.
/// Lazily expands the tree as neighbors are enumerated.
pub fn step(
    state: &mut WalkState,
    tree: &mut RootedTree,
    c: f64,
    rng: &mut ChaCha8Rng,
) -> Result<VertexId> {
    let mut buf = Vec::new();
    let total = gather_rates(tree, state, c, &mut buf);
    if buf.is_empty() {
        return Err(Error::domain("walk reached an isolated vertex"));
    }
    let holding = rng.sample::<f64, _>(Exp1) / total;
    state.accrue(holding);
    let next = select_neighbor(&buf, total, rng);
    state.jump_to(next, tree.height(next));
    Ok(next)
}

fn select_neighbor(buf: &[(VertexId, f64)], total: f64, rng: &mut ChaCha8Rng) -> VertexId {
    let mark = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &(v, r) in buf {
        acc += r;
        if mark < acc {
            return v;
        }
    }
    buf.last().expect("non-empty neighbor list").0
}

/// Run until the rule fires or `event_cap` jumps have happened, invoking
/// `observer` after every jump.
pub fn run_with<F: FnMut(&WalkState)>(
    tree: &mut RootedTree,
    c: f64,
    rule: &StopRule,
    event_cap: u64,
    stream: RngStream,
    mut observer: F,
) -> Result<(WalkState, StopReason)> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::domain("reinforcement must be positive"));
    }
    rule.validate(c)?;
    let mut rng = stream.rng();
    let mut state = WalkState::start(tree.root());
    let mut buf: Vec<(VertexId, f64)> = Vec::new();
    loop {
        // Rules that can hold at the current state, before any event.
        match *rule {
            StopRule::RootLocalTime(t) => {
                if state.occupation(tree.root()) >= t - c {
                    return Ok((state, StopReason::RuleFired));
                }
            }
            StopRule::HitHeight(n) => {
                if tree.height(state.current) >= n {
                    return Ok((state, StopReason::RuleFired));
                }
            }
            StopRule::ClockBudget(t) => {
                if state.clock >= t {
                    return Ok((state, StopReason::RuleFired));
                }
            }
            StopRule::EventBudget(m) => {
                if state.events >= m {
                    return Ok((state, StopReason::RuleFired));
                }
            }
        }
        if state.events >= event_cap {
            return Ok((state, StopReason::EventCapExceeded));
        }

        let total = gather_rates(tree, &state, c, &mut buf);
        if buf.is_empty() {
            return Err(Error::domain("walk reached an isolated vertex"));
        }
        let holding = rng.sample::<f64, _>(Exp1) / total;

        // Exact mid-holding truncation, justified by memorylessness.
        match *rule {
            StopRule::RootLocalTime(t) if state.current == tree.root() => {
                let remaining = (t - c) - state.occupation(tree.root());
                if holding >= remaining {
                    state.accrue(remaining);
                    return Ok((state, StopReason::RuleFired));
                }
            }
            StopRule::ClockBudget(t) => {
                let remaining = t - state.clock;
                if holding >= remaining {
                    state.accrue(remaining);
                    return Ok((state, StopReason::RuleFired));
                }
            }
            _ => {}
        }

        state.accrue(holding);
        let next = select_neighbor(&buf, total, &mut rng);
        state.jump_to(next, tree.height(next));
        observer(&state);
    }
}

/// Run until the rule fires or `event_cap` jumps have happened.
pub fn run(
    tree: &mut RootedTree,
    c: f64,
    rule: &StopRule,
    event_cap: u64,
    stream: RngStream,
) -> Result<(WalkState, StopReason)> {
    run_with(tree, c, rule, event_cap, stream, |_| {})
}

/// Samples of the root's rate field at the first arrival to height `n`,
/// over independent replica walks on the same (quenched) tree.
#[derive(Debug, Clone)]
pub struct HeightHittingSamples {
    pub n: u32,
    pub samples: Vec<f64>,
    /// Replicas that exhausted the event cap before reaching height n.
    pub capped: u64,
}

/// Replicated measurement of the root local time when the walk first
/// reaches height `n`.
pub fn height_hitting_experiment(
    template: &RootedTree,
    c: f64,
    n: u32,
    replicas: u32,
    event_cap: u64,
    stream: RngStream,
) -> Result<HeightHittingSamples> {
    let results: Vec<Result<Option<f64>>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut tree = template.clone();
            let (state, reason) = run(
                &mut tree,
                c,
                &StopRule::HitHeight(n),
                event_cap,
                stream.child(r as u64),
            )?;
            Ok(match reason {
                StopReason::RuleFired => Some(state.local_time(c, tree.root())),
                StopReason::EventCapExceeded => None,
            })
        })
        .collect();
    let mut samples = Vec::with_capacity(replicas as usize);
    let mut capped = 0u64;
    for r in results {
        match r? {
            Some(g) => samples.push(g),
            None => capped += 1,
        }
    }
    Ok(HeightHittingSamples { n, samples, capped })
}

/// Right-hand side of the height-hitting tail bound: (mu(c) sqrt(a))^n V_n.
/// Often above 1 for small n, in which case the bound is vacuous but still
/// reported.
pub fn height_hitting_bound(
    c: f64,
    a: f64,
    n: u32,
    generation_size: u64,
    quad: &Quadrature,
) -> Result<f64> {
    if !(a > 1.0) {
        return Err(Error::domain("bound requires a > 1"));
    }
    let mu = mu_gaussian(c, quad)?.mu;
    Ok((mu * a.sqrt()).powi(n as i32) * generation_size as f64)
}

/// One checkpoint of a growth profile.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticRow {
    pub events: u64,
    pub clock: f64,
    pub root_occupation: f64,
    pub max_height: u32,
}

/// Growth profile of a single budgeted run: root occupation and maximum
/// height recorded at an ascending ladder of event counts. This reports
/// data only; any recurrent/transient reading of a finite run is a
/// heuristic that belongs to the caller.
pub fn recurrence_diagnostic(
    tree: &mut RootedTree,
    c: f64,
    checkpoints: &[u64],
    stream: RngStream,
) -> Result<Vec<DiagnosticRow>> {
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("checkpoints must be ascending and non-empty"));
    }
    let cap = *checkpoints.last().expect("non-empty");
    let mut rows = Vec::with_capacity(checkpoints.len());
    let mut next_idx = 0usize;
    let root = tree.root();
    let (state, _) = run_with(
        tree,
        c,
        &StopRule::EventBudget(cap),
        cap,
        stream,
        |s| {
            while next_idx < checkpoints.len() && s.events >= checkpoints[next_idx] {
                rows.push(DiagnosticRow {
                    events: s.events,
                    clock: s.clock,
                    root_occupation: s.occupation(root),
                    max_height: s.max_height,
                });
                next_idx += 1;
            }
        },
    )?;
    // A walk trapped below the cap (cannot happen on trees with >= 2
    // vertices) would leave rows missing; fill from the final state.
    while rows.len() < checkpoints.len() {
        rows.push(DiagnosticRow {
            events: state.events,
            clock: state.clock,
            root_occupation: state.occupation(root),
            max_height: state.max_height,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample_two_vertex, two_vertex_event_driven};
    use crate::stats::{binomial_stderr, ks_two_sample, mean_and_stderr};
    use crate::trees::OffspringDistribution;

    #[test]
    fn zero_budget_stops_with_no_events() {
        let mut tree = RootedTree::regular(2, 1);
        let (state, reason) = run(
            &mut tree,
            1.0,
            &StopRule::RootLocalTime(1.0),
            1_000,
            RngStream::from_seed(2),
        )
        .unwrap();
        assert_eq!(reason, StopReason::RuleFired);
        assert_eq!(state.events, 0);
        assert_eq!(state.clock, 0.0);
    }

    #[test]
    fn hit_height_one_lands_at_height_one() {
        for seed in 0..20 {
            let mut tree = RootedTree::regular(3, 7);
            let (state, reason) = run(
                &mut tree,
                0.7,
                &StopRule::HitHeight(1),
                10_000,
                RngStream::from_seed(seed),
            )
            .unwrap();
            assert_eq!(reason, StopReason::RuleFired);
            assert_eq!(tree.height(state.current), 1);
            assert!(state.occupation(tree.root()) > 0.0);
            assert_eq!(state.events, 1);
        }
    }

    #[test]
    fn first_jump_is_uniform_over_fresh_children() {
        let trials = 40_000u32;
        let mut first_child = 0u32;
        for r in 0..trials {
            let mut tree = RootedTree::regular(2, 3);
            let (state, _) = run(
                &mut tree,
                1.0,
                &StopRule::HitHeight(1),
                100,
                RngStream::from_seed(50_000 + r as u64),
            )
            .unwrap();
            if state.current == 1 {
                first_child += 1;
            }
        }
        let p = first_child as f64 / trials as f64;
        let se = binomial_stderr(0.5, trials as u64);
        assert!((p - 0.5).abs() <= 4.0 * se, "{p}");
    }

    #[test]
    fn jump_rates_follow_the_rate_field() {
        // Root with children at occupations {0, 3} and c = 1: holding has
        // rate 5 and the jump picks the loaded child with probability 4/5.
        let c = 1.0;
        let trials = 100_000u32;
        let mut rng = RngStream::from_seed(4).rng();
        let mut to_loaded = 0u32;
        let mut holdings = Vec::with_capacity(trials as usize);
        for _ in 0..trials {
            let mut tree = RootedTree::regular(2, 3);
            let kids: Vec<VertexId> = tree.children(0).collect();
            let mut state = WalkState::start(0);
            state.force_occupation(kids[1], 3.0);
            let before = state.clock;
            let next = step(&mut state, &mut tree, c, &mut rng).unwrap();
            holdings.push(state.clock - before);
            if next == kids[1] {
                to_loaded += 1;
            }
        }
        let p = to_loaded as f64 / trials as f64;
        let se = binomial_stderr(0.8, trials as u64);
        assert!((p - 0.8).abs() <= 4.0 * se, "{p}");
        let (mean_holding, se_h) = mean_and_stderr(&holdings);
        assert!((mean_holding - 0.2).abs() <= 4.0 * se_h, "{mean_holding}");
    }

    #[test]
    fn clock_is_conserved() {
        let mut tree = RootedTree::galton_watson(
            OffspringDistribution::new([(1, 0.5), (2, 0.5)]).unwrap(),
            99,
        );
        let (state, _) = run(
            &mut tree,
            1.0,
            &StopRule::EventBudget(50_000),
            60_000,
            RngStream::from_seed(13),
        )
        .unwrap();
        assert!(state.clock_drift().abs() <= 1e-9 * state.clock.max(1.0));
    }

    #[test]
    fn event_cap_returns_partial_state() {
        let mut tree = RootedTree::regular(2, 0);
        let (state, reason) = run(
            &mut tree,
            1.0,
            &StopRule::RootLocalTime(1e12),
            100,
            RngStream::from_seed(3),
        )
        .unwrap();
        assert_eq!(reason, StopReason::EventCapExceeded);
        assert_eq!(state.events, 100);
    }

    #[test]
    fn isolated_root_is_a_structural_error() {
        let mut bare = RootedTree::regular(2, 0).percolate(1.0, 7).unwrap();
        let err = run(
            &mut bare,
            1.0,
            &StopRule::HitHeight(1),
            100,
            RngStream::from_seed(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn ill_formed_rules_are_rejected() {
        let mut tree = RootedTree::regular(2, 0);
        for rule in [
            StopRule::RootLocalTime(0.5), // below c
            StopRule::HitHeight(0),
            StopRule::ClockBudget(0.0),
            StopRule::EventBudget(0),
        ] {
            assert!(run(&mut tree, 1.0, &rule, 10, RngStream::from_seed(0)).is_err());
        }
    }

    #[test]
    fn same_seed_reproduces_the_trajectory() {
        let run_once = || {
            let mut tree = RootedTree::galton_watson(
                OffspringDistribution::new([(1, 0.3), (2, 0.7)]).unwrap(),
                5,
            );
            let (state, _) = run(
                &mut tree,
                0.8,
                &StopRule::EventBudget(500),
                1_000,
                RngStream::from_seed(21),
            )
            .unwrap();
            (state.current, state.clock, state.max_height)
        };
        assert_eq!(run_once(), run_once());
    }

    #[test]
    fn root_stop_on_path_matches_the_two_vertex_law() {
        // Restriction to the path: the local time left at the first vertex
        // when the root's field reaches t is one step of the local-time
        // chain; two levels down is the two-fold composition. A truncated
        // path keeps excursion event counts light without changing those
        // marginals (the walk restricted to the first edges is the same
        // two-vertex walk on any finite tree).
        let (c, t) = (1.0, 3.0);
        let n = 20_000usize;
        let mut level1 = Vec::with_capacity(n);
        let mut level2 = Vec::with_capacity(n);
        for r in 0..n {
            let mut tree = RootedTree::path(0).truncate(8);
            let (state, reason) = run(
                &mut tree,
                c,
                &StopRule::RootLocalTime(t),
                50_000_000,
                RngStream::from_seed(7_000 + r as u64),
            )
            .unwrap();
            assert_eq!(reason, StopReason::RuleFired);
            assert!(
                (state.local_time(c, tree.root()) - t).abs() < 1e-9,
                "root field should be exactly t"
            );
            level1.push(state.local_time(c, 1));
            level2.push(state.local_time(c, 2));
        }
        let mut rng = RngStream::from_seed(90).rng();
        let direct1: Vec<f64> = (0..n)
            .map(|_| two_vertex_event_driven(c, t, &mut rng).unwrap().value)
            .collect();
        let direct2: Vec<f64> = direct1
            .iter()
            .map(|&x| sample_two_vertex(c, x, &mut rng).unwrap().value)
            .collect();
        assert!(ks_two_sample(&level1, &direct1) < 0.02);
        assert!(ks_two_sample(&level2, &direct2) < 0.02);
    }

    #[test]
    fn height_hitting_mean_and_bound() {
        // On a single-child chain G_1 - c is exponential with rate c.
        let samples = height_hitting_experiment(
            &RootedTree::path(0),
            1.0,
            1,
            30_000,
            1_000,
            RngStream::from_seed(8),
        )
        .unwrap();
        assert_eq!(samples.capped, 0);
        let shifted: Vec<f64> = samples.samples.iter().map(|g| g - 1.0).collect();
        let mut rng = RngStream::from_seed(9).rng();
        let exp_draws: Vec<f64> = (0..30_000)
            .map(|_| rng.sample::<f64, _>(Exp1))
            .collect();
        assert!(ks_two_sample(&shifted, &exp_draws) < 0.02);

        // Tail bound on the path with a barely supercritical a: the right
        // side is below 1, so the check is not vacuous.
        let quad = Quadrature::default();
        let n = 6u32;
        let a = 1.1f64;
        let rhs = height_hitting_bound(1.0, a, n, 1, &quad).unwrap();
        assert!(rhs < 1.0, "{rhs}");
        let gn = height_hitting_experiment(
            &RootedTree::path(0),
            1.0,
            n,
            20_000,
            5_000_000,
            RngStream::from_seed(10),
        )
        .unwrap();
        let thresh = a.powi(n as i32);
        let p_hat = gn.samples.iter().filter(|&&g| g < thresh).count() as f64
            / gn.samples.len() as f64;
        let se = binomial_stderr(p_hat.max(1e-9), gn.samples.len() as u64);
        assert!(p_hat <= rhs + 4.0 * se, "{p_hat} vs bound {rhs}");
    }

    #[test]
    fn four_ary_bound_holds_even_when_vacuous() {
        // On the 4-ary tree at small n the right side exceeds 1, so the
        // inequality is a sanity check rather than a sharp bound.
        let quad = Quadrature::default();
        let (c, a, n) = (1.0, 1.05, 4u32);
        let mut tree = RootedTree::regular(4, 0);
        let v_n = tree.generation_size(n);
        assert_eq!(v_n, 256);
        let rhs = height_hitting_bound(c, a, n, v_n, &quad).unwrap();
        assert!(rhs > 1.0);
        let gn = height_hitting_experiment(
            &RootedTree::regular(4, 0),
            c,
            n,
            4_000,
            1_000_000,
            RngStream::from_seed(77),
        )
        .unwrap();
        let thresh = a.powi(n as i32);
        let p_hat =
            gn.samples.iter().filter(|&&g| g < thresh).count() as f64 / gn.samples.len() as f64;
        assert!(p_hat <= rhs, "{p_hat} vs {rhs}");
    }

    #[test]
    fn diagnostic_profiles_distinguish_regimes() {
        let checkpoints = [1_000u64, 10_000, 100_000];
        // Recurrent control: the half-line. Root occupation keeps growing.
        let mut path = RootedTree::path(0);
        let path_rows =
            recurrence_diagnostic(&mut path, 1.0, &checkpoints, RngStream::from_seed(31))
                .unwrap();
        // Transient regime: binary tree at c = 1. The walk escapes and the
        // root occupation freezes while the height keeps climbing.
        let mut btree = RootedTree::regular(2, 0);
        let tree_rows =
            recurrence_diagnostic(&mut btree, 1.0, &checkpoints, RngStream::from_seed(31))
                .unwrap();
        let path_growth = path_rows[2].root_occupation / path_rows[0].root_occupation;
        let tree_growth = tree_rows[2].root_occupation / tree_rows[0].root_occupation;
        assert!(
            path_growth > 2.0 && tree_growth < path_growth,
            "path {path_growth} tree {tree_growth}"
        );
        assert!(tree_rows[2].max_height > path_rows[2].max_height / 4);
        for rows in [&path_rows, &tree_rows] {
            assert!(rows.windows(2).all(|w| w[0].events < w[1].events));
        }
    }
}
