//! Batch experiments: configuration records, the phase classifier, curve
//! and diagram emitters, and reproducible CSV/JSON reporting.
//!
//! Every artifact embeds the master seed and a hash of the canonical
//! configuration text; re-running with the same seed reproduces each
//! output byte for byte (the wall-time field of the JSON summary is the
//! single exception and is excluded from comparisons).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::RngCore;
use serde::Serialize;

use crate::branching::{estimate_survival, SurvivalConfig};
use crate::error::{Error, Result};
use crate::mu::{mu_gaussian, MuValue};
use crate::quad::Quadrature;
use crate::rng::RngStream;
use crate::trees::{OffspringDistribution, RootedTree};
use crate::walk::{recurrence_diagnostic, run, StopRule};

/// Width of the numerical-indeterminacy band around b mu(c) = 1. Exact
/// criticality itself belongs to the recurrent side; the band only
/// acknowledges that mu is computed, not exact.
pub const DEFAULT_CRITICAL_BAND: f64 = 1e-3;

/// Phase classification of (mean offspring, reinforcement).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Recurrent,
    Transient,
    /// b mu(c) within the numerical band of 1; recorded as indeterminate
    /// (the exact critical point is recurrent).
    Critical,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Classification::Recurrent => write!(f, "recurrent"),
            Classification::Transient => write!(f, "transient"),
            Classification::Critical => write!(f, "critical"),
        }
    }
}

/// Classify by the sign of b mu(c) - 1 with a numerical tolerance band.
pub fn classify(b: f64, c: f64, band: f64, quad: &Quadrature) -> Result<Classification> {
    if !(b > 1.0) || !b.is_finite() {
        return Err(Error::domain(format!("classification needs b > 1, got {b}")));
    }
    let product = b * mu_gaussian(c, quad)?.mu;
    Ok(if product < 1.0 - band {
        Classification::Recurrent
    } else if product > 1.0 + band {
        Classification::Transient
    } else {
        Classification::Critical
    })
}

/// Offspring law with the requested mean: the two-point mixture on
/// {floor(b), floor(b) + 1}. Leafless for every b >= 1.
pub fn offspring_with_mean(b: f64) -> Result<OffspringDistribution> {
    if !(b >= 1.0) || !b.is_finite() || b > 2_000_000.0 {
        return Err(Error::domain(format!("mean offspring {b} out of range")));
    }
    let k = b.floor() as u32;
    let frac = b - k as f64;
    if frac < 1e-12 {
        Ok(OffspringDistribution::deterministic(k))
    } else {
        OffspringDistribution::new([(k, 1.0 - frac), (k + 1, frac)])
    }
}

/// A flat, order-preserving key-value configuration record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub command: String,
    pub master_seed: u64,
    pub output_path: Option<String>,
    params: Vec<(String, String)>,
}

impl ExperimentConfig {
    pub fn new(command: impl Into<String>, master_seed: u64) -> Self {
        ExperimentConfig {
            command: command.into(),
            master_seed,
            output_path: None,
            params: Vec::new(),
        }
    }

    pub fn with_output(mut self, path: impl Into<String>) -> Self {
        self.output_path = Some(path.into());
        self
    }

    /// Append a parameter (ordered; keys must be unique and line-safe).
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> Result<()> {
        let key = key.into();
        let value = value.to_string();
        if key.contains(['\n', '=']) || value.contains('\n') {
            return Err(Error::config("config keys/values must be single-line"));
        }
        if key == "command" || key == "seed" || key == "out" {
            return Err(Error::config(format!("reserved config key: {key}")));
        }
        if self.params.iter().any(|(k, _)| *k == key) {
            return Err(Error::config(format!("duplicate config key: {key}")));
        }
        self.params.push((key, value));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn params(&self) -> &[(String, String)] {
        &self.params
    }

    /// Canonical flat text form: `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("command = {}\n", self.command));
        out.push_str(&format!("seed = {}\n", self.master_seed));
        if let Some(p) = &self.output_path {
            out.push_str(&format!("out = {p}\n"));
        }
        for (k, v) in &self.params {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Parse the flat text form; `#` starts a comment line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut command = None;
        let mut seed = None;
        let mut output_path = None;
        let mut params = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("malformed config line: {line}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "command" => command = Some(value.to_string()),
                "seed" => {
                    seed = Some(value.parse::<u64>().map_err(|_| {
                        Error::config(format!("seed must be a 64-bit integer, got {value}"))
                    })?)
                }
                "out" => output_path = Some(value.to_string()),
                _ => params.push((key.to_string(), value.to_string())),
            }
        }
        Ok(ExperimentConfig {
            command: command.ok_or_else(|| Error::config("config is missing `command`"))?,
            master_seed: seed.ok_or_else(|| Error::config("config is missing `seed`"))?,
            output_path,
            params,
        })
    }

    /// FNV-1a hash of the canonical text, as fixed-width hex.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.to_text().as_bytes() {
            h ^= *byte as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// One reported metric: estimate with provenance.
#[derive(Debug, Clone, Serialize)]
pub struct MetricValue {
    pub name: String,
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    pub replicas: u64,
}

/// Seeded, replayable record of one experiment invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub master_seed: u64,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub metrics: Vec<MetricValue>,
    pub warnings: Vec<String>,
    /// Wall time of the run; the only field excluded from reproducibility
    /// comparisons.
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn new(config: &ExperimentConfig) -> Self {
        let mut map = BTreeMap::new();
        for (k, v) in config.params() {
            map.insert(k.clone(), v.clone());
        }
        RunSummary {
            tool: "vrjp",
            version: env!("CARGO_PKG_VERSION"),
            command: config.command.clone(),
            master_seed: config.master_seed,
            config_hash: config.hash(),
            config: map,
            metrics: Vec::new(),
            warnings: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn push_metric(
        &mut self,
        name: impl Into<String>,
        estimate: f64,
        stderr: Option<f64>,
        replicas: u64,
    ) {
        self.metrics.push(MetricValue {
            name: name.into(),
            estimate,
            stderr,
            replicas,
        });
    }

    pub fn finish(&mut self, started: Instant) {
        self.wall_time_s = started.elapsed().as_secs_f64();
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json().as_bytes())?;
        Ok(())
    }
}

/// Shortest-round-trip decimal formatting, shared by every CSV so output
/// bytes are reproducible.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Write one CSV with a mandatory header row and RFC-style quoting.
/// When a configuration is given, the master seed and config hash are
/// embedded as leading `#` comment lines so every artifact carries its
/// provenance.
pub fn write_csv<R, S>(
    path: &Path,
    config: Option<&ExperimentConfig>,
    header: &[&str],
    rows: R,
) -> Result<()>
where
    R: IntoIterator<Item = S>,
    S: IntoIterator<Item = String>,
{
    let mut file = std::fs::File::create(path)?;
    if let Some(cfg) = config {
        writeln!(file, "# seed = {}", cfg.master_seed)?;
        writeln!(file, "# config_hash = {}", cfg.hash())?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().map(|s| s.into_bytes()))?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluate mu on an even grid. The returned column is checked to be
/// strictly increasing, which it must be for a correct evaluator.
pub fn mu_curve(c_min: f64, c_max: f64, steps: u32, quad: &Quadrature) -> Result<Vec<MuValue>> {
    if !(c_min > 0.0) || !(c_max > c_min) || steps < 2 {
        return Err(Error::domain(
            "mu curve needs 0 < c_min < c_max and at least two steps",
        ));
    }
    let mut rows = Vec::with_capacity(steps as usize);
    for i in 0..steps {
        let c = c_min + (c_max - c_min) * i as f64 / (steps - 1) as f64;
        rows.push(mu_gaussian(c, quad)?);
    }
    if rows.windows(2).any(|w| w[1].mu <= w[0].mu) {
        return Err(Error::domain("mu grid is not strictly increasing"));
    }
    Ok(rows)
}

/// Write a mu curve as CSV with columns c, mu, err_bound.
pub fn write_mu_curve(path: &Path, config: &ExperimentConfig, rows: &[MuValue]) -> Result<()> {
    write_csv(
        path,
        Some(config),
        &["c", "mu", "err_bound"],
        rows.iter()
            .map(|r| vec![fmt_f64(r.c), fmt_f64(r.mu), fmt_f64(r.err_bound)]),
    )
}

/// Grid configuration for the phase diagram.
#[derive(Debug, Clone)]
pub struct PhaseDiagramConfig {
    pub b_values: Vec<f64>,
    pub c_values: Vec<f64>,
    pub x0: f64,
    pub generations: u32,
    pub replicas: u32,
    pub alive_cap: usize,
    pub work_cap: u64,
    pub band: f64,
    /// Survival probability from which a transient classification counts
    /// as empirically confirmed.
    pub transient_threshold: f64,
    /// Survival probability below which a recurrent classification counts
    /// as empirically confirmed.
    pub recurrent_threshold: f64,
    pub diagnostic_events: u64,
    pub master_seed: u64,
}

impl Default for PhaseDiagramConfig {
    fn default() -> Self {
        PhaseDiagramConfig {
            b_values: vec![1.5, 2.0, 4.0],
            c_values: vec![0.2, 0.5, 1.0, 2.0],
            x0: 10.0,
            generations: 25,
            replicas: 200,
            alive_cap: 4096,
            work_cap: 20_000_000,
            band: DEFAULT_CRITICAL_BAND,
            transient_threshold: 0.5,
            recurrent_threshold: 0.05,
            diagnostic_events: 30_000,
            master_seed: 0,
        }
    }
}

/// One grid cell of the phase diagram.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseCell {
    pub b: f64,
    pub c: f64,
    pub b_mu: f64,
    pub classification: Classification,
    pub survival_p_hat: f64,
    pub survival_stderr: f64,
    /// Whether the empirical survival agrees with the classification;
    /// absent inside the critical band.
    pub agreement: Option<bool>,
    pub root_occupation_growth: f64,
    pub max_height: u32,
    pub warnings: Vec<String>,
    /// Sub-run failure, recorded so the sweep can continue.
    pub error: Option<String>,
}

/// Sweep the (b, c) grid: classification plus empirical diagnostics with
/// agreement flags. Cell failures are recorded per cell.
pub fn run_phase_diagram(cfg: &PhaseDiagramConfig, quad: &Quadrature) -> Result<Vec<PhaseCell>> {
    let stream = RngStream::from_seed(cfg.master_seed);
    let mut cells = Vec::with_capacity(cfg.b_values.len() * cfg.c_values.len());
    for (bi, &b) in cfg.b_values.iter().enumerate() {
        for (ci, &c) in cfg.c_values.iter().enumerate() {
            let cell_stream = stream.child(bi as u64).child(ci as u64);
            match phase_cell(b, c, cfg, quad, cell_stream) {
                Ok(cell) => cells.push(cell),
                Err(e) => cells.push(PhaseCell {
                    b,
                    c,
                    b_mu: f64::NAN,
                    classification: Classification::Critical,
                    survival_p_hat: f64::NAN,
                    survival_stderr: f64::NAN,
                    agreement: None,
                    root_occupation_growth: f64::NAN,
                    max_height: 0,
                    warnings: Vec::new(),
                    error: Some(e.to_string()),
                }),
            }
        }
    }
    Ok(cells)
}

fn phase_cell(
    b: f64,
    c: f64,
    cfg: &PhaseDiagramConfig,
    quad: &Quadrature,
    stream: RngStream,
) -> Result<PhaseCell> {
    let classification = classify(b, c, cfg.band, quad)?;
    let b_mu = b * mu_gaussian(c, quad)?.mu;
    let nu = offspring_with_mean(b)?;
    let survival = estimate_survival(
        cfg.x0,
        &nu,
        c,
        &SurvivalConfig {
            generations: cfg.generations,
            replicas: cfg.replicas,
            alive_cap: cfg.alive_cap,
            work_cap: cfg.work_cap,
        },
        stream.child(0),
    )?;
    let checkpoints = [
        cfg.diagnostic_events / 100,
        cfg.diagnostic_events / 10,
        cfg.diagnostic_events,
    ];
    let mut tree = RootedTree::galton_watson(nu, stream.child(1).rng().next_u64());
    let rows = recurrence_diagnostic(&mut tree, c, &checkpoints, stream.child(2))?;
    let growth = rows[2].root_occupation / rows[0].root_occupation.max(1e-12);
    let agreement = match classification {
        Classification::Transient => Some(survival.p_hat >= cfg.transient_threshold),
        Classification::Recurrent => Some(survival.p_hat <= cfg.recurrent_threshold),
        Classification::Critical => None,
    };
    Ok(PhaseCell {
        b,
        c,
        b_mu,
        classification,
        survival_p_hat: survival.p_hat,
        survival_stderr: survival.stderr,
        agreement,
        root_occupation_growth: growth,
        max_height: rows[2].max_height,
        warnings: survival.warnings(),
        error: None,
    })
}

/// Write phase cells as CSV.
pub fn write_phase_cells(
    path: &Path,
    config: &ExperimentConfig,
    cells: &[PhaseCell],
) -> Result<()> {
    write_csv(
        path,
        Some(config),
        &[
            "b",
            "c",
            "b_mu",
            "classification",
            "survival_p_hat",
            "survival_stderr",
            "agreement",
            "root_occupation_growth",
            "max_height",
            "warnings",
            "error",
        ],
        cells.iter().map(|cell| {
            vec![
                fmt_f64(cell.b),
                fmt_f64(cell.c),
                fmt_f64(cell.b_mu),
                cell.classification.to_string(),
                fmt_f64(cell.survival_p_hat),
                fmt_f64(cell.survival_stderr),
                cell.agreement
                    .map_or_else(String::new, |a| a.to_string()),
                fmt_f64(cell.root_occupation_growth),
                cell.max_height.to_string(),
                cell.warnings.join("; "),
                cell.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

/// Configuration of the null-recurrence probe.
#[derive(Debug, Clone)]
pub struct NullRecurrenceConfig {
    pub c: f64,
    /// Root rate-field target t >= c.
    pub t: f64,
    /// Ascending ladder of event budgets.
    pub budgets: Vec<u64>,
    pub replicas: u32,
    pub master_seed: u64,
}

/// One row of the probe: the mean time to reach the root target, censored
/// at an event budget.
#[derive(Debug, Clone, Serialize)]
pub struct NullRecurrenceRow {
    pub budget: u64,
    pub mean_censored_time: f64,
    pub stderr: f64,
    /// Fraction of replicas whose rule fired within the budget.
    pub fired_fraction: f64,
}

/// Estimate the (infinite-mean) time for the root's rate field to reach t
/// on the half line, censored at growing event budgets. Growth of the
/// censored means across budgets with no plateau is the observable shadow
/// of the infinite expectation; the probe reports evidence, it cannot
/// assert the limit.
pub fn run_null_recurrence_probe(cfg: &NullRecurrenceConfig) -> Result<Vec<NullRecurrenceRow>> {
    if cfg.budgets.is_empty() || cfg.budgets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("budgets must be ascending and non-empty"));
    }
    if cfg.replicas == 0 {
        return Err(Error::domain("probe needs replicas >= 1"));
    }
    let stream = RngStream::from_seed(cfg.master_seed);
    let mut rows = Vec::with_capacity(cfg.budgets.len());
    for &budget in &cfg.budgets {
        let mut times = Vec::with_capacity(cfg.replicas as usize);
        let mut fired = 0u64;
        for r in 0..cfg.replicas {
            // Identical substream across budgets: each replica's censored
            // time is monotone in the budget by construction.
            let mut tree = RootedTree::path(0);
            let (state, reason) = run(
                &mut tree,
                cfg.c,
                &StopRule::RootLocalTime(cfg.t),
                budget,
                stream.child(r as u64),
            )?;
            if reason == crate::walk::StopReason::RuleFired {
                fired += 1;
            }
            times.push(state.clock);
        }
        let (mean, se) = crate::stats::mean_and_stderr(&times);
        rows.push(NullRecurrenceRow {
            budget,
            mean_censored_time: mean,
            stderr: se,
            fired_fraction: fired as f64 / cfg.replicas as f64,
        });
    }
    Ok(rows)
}

/// Write probe rows as CSV.
pub fn write_null_recurrence(
    path: &Path,
    config: &ExperimentConfig,
    rows: &[NullRecurrenceRow],
) -> Result<()> {
    write_csv(
        path,
        Some(config),
        &["budget", "mean_censored_time", "stderr", "fired_fraction"],
        rows.iter().map(|r| {
            vec![
                r.budget.to_string(),
                fmt_f64(r.mean_censored_time),
                fmt_f64(r.stderr),
                fmt_f64(r.fired_fraction),
            ]
        }),
    )
}

/// Write a survival curve as CSV with the columns n, survivors, replicas,
/// p_hat, stderr.
pub fn write_survival_curve(
    path: &Path,
    config: &ExperimentConfig,
    per_generation: &[(u32, u64, f64)],
    replicas: u64,
) -> Result<()> {
    write_csv(
        path,
        Some(config),
        &["n", "survivors", "replicas", "p_hat", "stderr"],
        per_generation.iter().map(|&(n, survivors, p)| {
            vec![
                n.to_string(),
                survivors.to_string(),
                replicas.to_string(),
                fmt_f64(p),
                fmt_f64(crate::stats::binomial_stderr(p, replicas)),
            ]
        }),
    )
}
