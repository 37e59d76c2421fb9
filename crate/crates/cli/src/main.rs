//! Command-line harness for the reinforced-jump-process toolkit.
//!
//! Subcommands mirror the library's experiment surface; every stochastic
//! command takes --seed and --replicas, and --out selects the primary CSV
//! artifact (a JSON run summary is written next to it). Without --out the
//! results are printed instead. Exit codes: 0 success, 2 configuration
//! error, 3 numerical failure, 4 insufficient data.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vrjp_core::branching::{
    barrier_exponent, estimate_survival, BarrierConfig, BarrierStepKind, SurvivalConfig,
};
use vrjp_core::error::Error;
use vrjp_core::experiments::{
    fmt_f64, mu_curve, run_null_recurrence_probe, run_phase_diagram, write_csv, write_mu_curve,
    write_null_recurrence, write_phase_cells, write_survival_curve, ExperimentConfig,
    NullRecurrenceConfig, PhaseDiagramConfig, RunSummary,
};
use vrjp_core::mu::critical_c;
use vrjp_core::quad::Quadrature;
use vrjp_core::rng::RngStream;
use vrjp_core::sampling::{sample_limit_ratio, TwoVertexSampler};
use vrjp_core::stats::mean_and_stderr;
use vrjp_core::trees::{OffspringDistribution, RootedTree};
use vrjp_core::walk::{run_with, StopReason, StopRule};

#[derive(Parser)]
#[command(name = "vrjp", version, about = "Reinforced jump processes on random trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed; identical seeds reproduce outputs byte for byte.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Primary CSV artifact path; a .summary.json is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replica count for statistical commands (deterministic commands
    /// accept and record it for interface uniformity).
    #[arg(long)]
    replicas: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the critical function mu(c) on an even grid.
    Mu {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.05)]
        c_min: f64,
        #[arg(long, default_value_t = 4.0)]
        c_max: f64,
        #[arg(long, default_value_t = 200)]
        steps: u32,
    },
    /// Critical reinforcement for a mean offspring number: the root of
    /// mu(c) = 1/b.
    CriticalC {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        b: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Draw from the exact samplers.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        law: SampleLaw,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Local-time budget (kernel law only).
        #[arg(long)]
        t: Option<f64>,
    },
    /// Run one walk under a stopping rule; optionally trace every event.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Tree spec: path | regular:K | gw:K:P,K:P,...
        #[arg(long, default_value = "regular:2")]
        tree: String,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Stop rule: root-time:T | height:N | clock:T | events:M
        #[arg(long, default_value = "events:100000")]
        stop: String,
        #[arg(long, default_value_t = 10_000_000)]
        event_cap: u64,
        /// Write an event trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Survival probability of the branching front.
    Survival {
        #[command(flatten)]
        common: Common,
        /// Mean offspring (two-point law); exclusive with --nu.
        #[arg(long, conflicts_with = "nu")]
        b: Option<f64>,
        /// Explicit offspring law K:P,K:P,...
        #[arg(long)]
        nu: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 10.0)]
        x0: f64,
        #[arg(long, default_value_t = 25)]
        generations: u32,
        #[arg(long, default_value_t = 4096)]
        alive_cap: usize,
        #[arg(long, default_value_t = 20_000_000)]
        work_cap: u64,
        /// Percolation: remove each child independently with this
        /// probability (exact offspring thinning).
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
    },
    /// Decay rate of barrier survival for the log-position chain.
    Barrier {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = BarrierKind::Iid)]
        kind: BarrierKind,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Start/barrier: log-scale level for iid, position for chain.
        #[arg(long, default_value_t = 0.0)]
        x: f64,
        #[arg(long, default_value_t = 10)]
        n_min: u32,
        #[arg(long, default_value_t = 30)]
        n_max: u32,
        #[arg(long, default_value_t = 1000)]
        bootstrap: u32,
    },
    /// Classification vs empirical survival over a (b, c) grid.
    PhaseDiagram {
        #[command(flatten)]
        common: Common,
        /// Comma-separated mean offspring values, all > 1.
        #[arg(long, default_value = "1.5,2,4")]
        b_grid: String,
        /// Comma-separated reinforcement values.
        #[arg(long, default_value = "0.2,0.5,1,2")]
        c_grid: String,
        #[arg(long, default_value_t = 10.0)]
        x0: f64,
        #[arg(long, default_value_t = 25)]
        generations: u32,
    },
    /// Censored means of the time to reach a root local-time target on
    /// the half line: evidence for the infinite expectation.
    NullRecurrence {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 2.0)]
        t: f64,
        /// Ascending comma-separated event budgets.
        #[arg(long, default_value = "300,3000,30000")]
        budgets: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleLaw {
    /// Limiting occupation ratio (inverse-Gaussian, mean 1, shape c^2).
    Limit,
    /// Budgeted two-vertex functional at (c, t).
    Kernel,
}

#[derive(Clone, Copy, ValueEnum)]
enum BarrierKind {
    Iid,
    Chain,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("VRJP_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::QuadratureNoConvergence { .. }
        | Error::BesselRange { .. }
        | Error::PopulationCap { .. } => 3,
        Error::InsufficientData { .. } => 4,
        Error::Io(_) | Error::Csv(_) => 1,
    }
}

fn parse_offspring(spec: &str) -> Result<OffspringDistribution, Error> {
    let mut pairs = Vec::new();
    for part in spec.split(',') {
        let (k, p) = part
            .split_once(':')
            .ok_or_else(|| Error::config(format!("offspring entry `{part}` is not K:P")))?;
        let k: u32 = k
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("bad offspring count `{k}`")))?;
        let p: f64 = p
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("bad probability `{p}`")))?;
        pairs.push((k, p));
    }
    OffspringDistribution::new(pairs)
}

fn parse_tree(spec: &str, seed: u64) -> Result<RootedTree, Error> {
    if spec == "path" {
        return Ok(RootedTree::path(seed));
    }
    if let Some(k) = spec.strip_prefix("regular:") {
        let k: u32 = k
            .parse()
            .map_err(|_| Error::config(format!("bad arity in tree spec `{spec}`")))?;
        if k == 0 {
            return Err(Error::config("regular tree arity must be positive"));
        }
        return Ok(RootedTree::regular(k, seed));
    }
    if let Some(rest) = spec.strip_prefix("gw:") {
        return Ok(RootedTree::galton_watson(parse_offspring(rest)?, seed));
    }
    Err(Error::config(format!(
        "unknown tree spec `{spec}` (expected path | regular:K | gw:K:P,...)"
    )))
}

fn parse_stop(spec: &str) -> Result<StopRule, Error> {
    let (kind, value) = spec
        .split_once(':')
        .ok_or_else(|| Error::config(format!("stop rule `{spec}` is not KIND:VALUE")))?;
    let bad = |what: &str| Error::config(format!("bad {what} in stop rule `{spec}`"));
    Ok(match kind {
        "root-time" => StopRule::RootLocalTime(value.parse().map_err(|_| bad("time"))?),
        "height" => StopRule::HitHeight(value.parse().map_err(|_| bad("height"))?),
        "clock" => StopRule::ClockBudget(value.parse().map_err(|_| bad("time"))?),
        "events" => StopRule::EventBudget(value.parse().map_err(|_| bad("count"))?),
        _ => return Err(Error::config(format!("unknown stop rule kind `{kind}`"))),
    })
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Error> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad grid value `{s}`")))
        })
        .collect()
}

fn summary_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_stem()
        .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned());
    name.push_str(".summary.json");
    out.with_file_name(name)
}

fn emit(summary: &mut RunSummary, started: Instant, out: &Option<PathBuf>) -> Result<(), Error> {
    summary.finish(started);
    match out {
        Some(path) => summary.write_json(&summary_path(path))?,
        None => print!("{}", summary.to_json()),
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Error> {
    let quad = Quadrature::default();
    match command {
        Command::Mu {
            common,
            c_min,
            c_max,
            steps,
        } => {
            let started = Instant::now();
            let mut cfg = ExperimentConfig::new("mu", common.seed);
            if let Some(r) = common.replicas {
                cfg.set("replicas", r)?;
            }
            cfg.set("c_min", c_min)?;
            cfg.set("c_max", c_max)?;
            cfg.set("steps", steps)?;
            let rows = mu_curve(c_min, c_max, steps, &quad)?;
            let mut summary = RunSummary::new(&cfg);
            summary.push_metric("mu_min", rows.first().unwrap().mu, None, 1);
            summary.push_metric("mu_max", rows.last().unwrap().mu, None, 1);
            if let Some(path) = &common.out {
                write_mu_curve(path, &cfg, &rows)?;
            } else {
                println!("c,mu,err_bound");
                for r in &rows {
                    println!("{},{},{}", fmt_f64(r.c), fmt_f64(r.mu), fmt_f64(r.err_bound));
                }
            }
            emit(&mut summary, started, &common.out)
        }

        Command::CriticalC { common, b, tol } => {
            let started = Instant::now();
            let mut cfg = ExperimentConfig::new("critical-c", common.seed);
            if let Some(r) = common.replicas {
                cfg.set("replicas", r)?;
            }
            cfg.set("b", b)?;
            cfg.set("tol", tol)?;
            let c_star = critical_c(b, tol, &quad)?;
            let mut summary = RunSummary::new(&cfg);
            summary.push_metric("critical_c", c_star, None, 1);
            println!("critical c for mean offspring {b}: {c_star}");
            if let Some(path) = &common.out {
                write_csv(
                    path,
                    Some(&cfg),
                    &["b", "critical_c", "tol"],
                    [vec![fmt_f64(b), fmt_f64(c_star), fmt_f64(tol)]],
                )?;
            }
            emit(&mut summary, started, &common.out)
        }

        Command::Sample { common, law, c, t } => {
            let started = Instant::now();
            let replicas = common.replicas.unwrap_or(10_000);
            let mut cfg = ExperimentConfig::new("sample", common.seed);
            cfg.set("c", c)?;
            cfg.set("replicas", replicas)?;
            let mut rng = RngStream::from_seed(common.seed).rng();
            let mut summary;
            let header: &[&str];
            let mut rows: Vec<Vec<String>> = Vec::with_capacity(replicas as usize);
            match law {
                SampleLaw::Limit => {
                    cfg.set("law", "limit")?;
                    summary = RunSummary::new(&cfg);
                    header = &["value"];
                    let values: Vec<f64> =
                        (0..replicas).map(|_| sample_limit_ratio(c, &mut rng)).collect();
                    let (mean, se) = mean_and_stderr(&values);
                    summary.push_metric("mean", mean, Some(se), replicas);
                    rows.extend(values.iter().map(|v| vec![fmt_f64(*v)]));
                }
                SampleLaw::Kernel => {
                    let t = t.ok_or_else(|| Error::config("kernel law needs --t"))?;
                    cfg.set("law", "kernel")?;
                    cfg.set("t", t)?;
                    summary = RunSummary::new(&cfg);
                    header = &["value", "jumps", "hit_atom"];
                    let sampler = TwoVertexSampler::new(c, t)?;
                    let mut values = Vec::with_capacity(replicas as usize);
                    let mut atoms = 0u64;
                    for _ in 0..replicas {
                        let s = sampler.sample(&mut rng);
                        atoms += s.hit_atom as u64;
                        values.push(s.value);
                        rows.push(vec![
                            fmt_f64(s.value),
                            s.jumps.to_string(),
                            s.hit_atom.to_string(),
                        ]);
                    }
                    let (mean, se) = mean_and_stderr(&values);
                    summary.push_metric("mean", mean, Some(se), replicas);
                    summary.push_metric(
                        "atom_fraction",
                        atoms as f64 / replicas as f64,
                        None,
                        replicas,
                    );
                }
            }
            if let Some(path) = &common.out {
                write_csv(path, Some(&cfg), header, rows)?;
            } else {
                let m = &summary.metrics[0];
                println!("{} draws: mean {}", replicas, fmt_f64(m.estimate));
            }
            emit(&mut summary, started, &common.out)
        }

        Command::Simulate {
            common,
            tree,
            c,
            stop,
            event_cap,
            trace,
        } => {
            let started = Instant::now();
            let mut cfg = ExperimentConfig::new("simulate", common.seed);
            if let Some(r) = common.replicas {
                cfg.set("replicas", r)?;
            }
            cfg.set("tree", &tree)?;
            cfg.set("c", c)?;
            cfg.set("stop", &stop)?;
            cfg.set("event_cap", event_cap)?;
            let mut t = parse_tree(&tree, common.seed)?;
            let rule = parse_stop(&stop)?;
            let root = t.root();

            let mut trace_rows: Vec<Vec<String>> = Vec::new();
            let (state, reason) = run_with(
                &mut t,
                c,
                &rule,
                event_cap,
                RngStream::from_seed(common.seed).child(1),
                |s| {
                    if trace.is_some() {
                        trace_rows.push(vec![
                            s.events.to_string(),
                            fmt_f64(s.clock),
                            s.current_height.to_string(),
                            fmt_f64(s.occupation(root)),
                        ]);
                    }
                },
            )?;
            if let Some(path) = &trace {
                write_csv(
                    path,
                    Some(&cfg),
                    &["event_index", "clock", "vertex_height", "root_occupation"],
                    trace_rows,
                )?;
            }
            let mut summary = RunSummary::new(&cfg);
            summary.push_metric("events", state.events as f64, None, 1);
            summary.push_metric("clock", state.clock, None, 1);
            summary.push_metric("root_occupation", state.occupation(root), None, 1);
            summary.push_metric("max_height", state.max_height as f64, None, 1);
            if reason == StopReason::EventCapExceeded {
                summary.warnings.push("event cap exceeded before the stop rule fired".into());
            }
            println!(
                "stopped ({}) after {} events, clock {}, root occupation {}, max height {}",
                match reason {
                    StopReason::RuleFired => "rule fired",
                    StopReason::EventCapExceeded => "event cap",
                },
                state.events,
                fmt_f64(state.clock),
                fmt_f64(state.occupation(root)),
                state.max_height
            );
            if let Some(path) = &common.out {
                write_csv(
                    path,
                    Some(&cfg),
                    &["events", "clock", "root_occupation", "max_height", "stop_reason"],
                    [vec![
                        state.events.to_string(),
                        fmt_f64(state.clock),
                        fmt_f64(state.occupation(root)),
                        state.max_height.to_string(),
                        format!("{reason:?}"),
                    ]],
                )?;
            }
            emit(&mut summary, started, &common.out)
        }

        Command::Survival {
            common,
            b,
            nu,
            c,
            x0,
            generations,
            alive_cap,
            work_cap,
            eta,
        } => {
            let started = Instant::now();
            let replicas = u32::try_from(common.replicas.unwrap_or(400))
                .map_err(|_| Error::config("replica count out of range"))?;
            let mut cfg = ExperimentConfig::new("survival", common.seed);
            let law = match (&b, &nu) {
                (Some(b), None) => {
                    cfg.set("b", b)?;
                    vrjp_core::experiments::offspring_with_mean(*b)?
                }
                (None, Some(spec)) => {
                    cfg.set("nu", spec)?;
                    parse_offspring(spec)?
                }
                _ => return Err(Error::config("survival needs exactly one of --b or --nu")),
            };
            cfg.set("c", c)?;
            cfg.set("x0", x0)?;
            cfg.set("generations", generations)?;
            cfg.set("replicas", replicas)?;
            cfg.set("eta", eta)?;
            let law = if eta > 0.0 { law.thin(eta)? } else { law };
            let est = estimate_survival(
                x0,
                &law,
                c,
                &SurvivalConfig {
                    generations,
                    replicas,
                    alive_cap,
                    work_cap,
                },
                RngStream::from_seed(common.seed),
            )?;
            let mut summary = RunSummary::new(&cfg);
            summary.push_metric("p_hat", est.p_hat, Some(est.stderr), replicas as u64);
            summary.warnings.extend(est.warnings());
            println!(
                "survival p_hat = {} (stderr {}) at generation {generations}",
                fmt_f64(est.p_hat),
                fmt_f64(est.stderr)
            );
            if let Some(path) = &common.out {
                write_survival_curve(path, &cfg, &est.per_generation, replicas as u64)?;
            }
            emit(&mut summary, started, &common.out)
        }

        Command::Barrier {
            common,
            kind,
            c,
            x,
            n_min,
            n_max,
            bootstrap,
        } => {
            let started = Instant::now();
            let replicas = common.replicas.unwrap_or(1_000_000);
            let mut cfg = ExperimentConfig::new("barrier", common.seed);
            cfg.set("c", c)?;
            cfg.set("x", x)?;
            cfg.set("n_min", n_min)?;
            cfg.set("n_max", n_max)?;
            cfg.set("replicas", replicas)?;
            let (step_kind, start_log) = match kind {
                BarrierKind::Iid => {
                    cfg.set("kind", "iid")?;
                    (BarrierStepKind::IidLimitRatio, x)
                }
                BarrierKind::Chain => {
                    cfg.set("kind", "chain")?;
                    if !(x > 0.0) {
                        return Err(Error::config("chain barrier needs a positive position --x"));
                    }
                    (BarrierStepKind::LocalTimeChain, x.ln())
                }
            };
            let est = barrier_exponent(
                c,
                start_log,
                &BarrierConfig {
                    n_min,
                    n_max,
                    replicas,
                    bootstrap,
                    ..Default::default()
                },
                step_kind,
                RngStream::from_seed(common.seed),
            )?;
            let mut summary = RunSummary::new(&cfg);
            summary.push_metric("rate", est.rate, None, replicas);
            summary.push_metric("rate_ci_low", est.ci.0, None, replicas);
            summary.push_metric("rate_ci_high", est.ci.1, None, replicas);
            summary.push_metric("raw_rate", est.raw_rate, None, replicas);
            println!(
                "barrier decay rate {} (95% CI {} .. {})",
                fmt_f64(est.rate),
                fmt_f64(est.ci.0),
                fmt_f64(est.ci.1)
            );
            if let Some(path) = &common.out {
                write_csv(
                    path,
                    Some(&cfg),
                    &["n", "survivors", "replicas", "p_hat", "stderr"],
                    est.survival.iter().map(|&(n, s)| {
                        let p = s as f64 / est.replicas as f64;
                        vec![
                            n.to_string(),
                            s.to_string(),
                            est.replicas.to_string(),
                            fmt_f64(p),
                            fmt_f64(vrjp_core::stats::binomial_stderr(p, est.replicas)),
                        ]
                    }),
                )?;
            }
            emit(&mut summary, started, &common.out)
        }

        Command::PhaseDiagram {
            common,
            b_grid,
            c_grid,
            x0,
            generations,
        } => {
            let started = Instant::now();
            let replicas = u32::try_from(common.replicas.unwrap_or(200))
                .map_err(|_| Error::config("replica count out of range"))?;
            let mut cfg = ExperimentConfig::new("phase-diagram", common.seed);
            cfg.set("b_grid", &b_grid)?;
            cfg.set("c_grid", &c_grid)?;
            cfg.set("x0", x0)?;
            cfg.set("generations", generations)?;
            cfg.set("replicas", replicas)?;
            let pd = PhaseDiagramConfig {
                b_values: parse_grid(&b_grid)?,
                c_values: parse_grid(&c_grid)?,
                x0,
                generations,
                replicas,
                master_seed: common.seed,
                ..Default::default()
            };
            let cells = run_phase_diagram(&pd, &quad)?;
            let mut summary = RunSummary::new(&cfg);
            let agreed = cells
                .iter()
                .filter(|cell| cell.agreement == Some(true))
                .count();
            let flagged = cells
                .iter()
                .filter(|cell| cell.agreement == Some(false))
                .count();
            summary.push_metric("cells", cells.len() as f64, None, replicas as u64);
            summary.push_metric("agreements", agreed as f64, None, replicas as u64);
            summary.push_metric("disagreements", flagged as f64, None, replicas as u64);
            for cell in &cells {
                if let Some(e) = &cell.error {
                    summary
                        .warnings
                        .push(format!("cell (b={}, c={}): {e}", cell.b, cell.c));
                }
            }
            println!(
                "{} cells: {agreed} agree, {flagged} disagree, {} errored",
                cells.len(),
                cells.iter().filter(|cell| cell.error.is_some()).count()
            );
            if let Some(path) = &common.out {
                write_phase_cells(path, &cfg, &cells)?;
            }
            emit(&mut summary, started, &common.out)
        }

        Command::NullRecurrence {
            common,
            c,
            t,
            budgets,
        } => {
            let started = Instant::now();
            let replicas = u32::try_from(common.replicas.unwrap_or(400))
                .map_err(|_| Error::config("replica count out of range"))?;
            let mut cfg = ExperimentConfig::new("null-recurrence", common.seed);
            cfg.set("c", c)?;
            cfg.set("t", t)?;
            cfg.set("budgets", &budgets)?;
            cfg.set("replicas", replicas)?;
            let parsed: Vec<u64> = budgets
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::config(format!("bad budget `{s}`")))
                })
                .collect::<Result<_, _>>()?;
            let rows = run_null_recurrence_probe(&NullRecurrenceConfig {
                c,
                t,
                budgets: parsed,
                replicas,
                master_seed: common.seed,
            })?;
            let mut summary = RunSummary::new(&cfg);
            for row in &rows {
                summary.push_metric(
                    format!("mean_censored_time_at_{}", row.budget),
                    row.mean_censored_time,
                    Some(row.stderr),
                    replicas as u64,
                );
            }
            for row in &rows {
                println!(
                    "budget {:>9}: mean censored time {} (fired {})",
                    row.budget,
                    fmt_f64(row.mean_censored_time),
                    fmt_f64(row.fired_fraction)
                );
            }
            if let Some(path) = &common.out {
                write_null_recurrence(path, &cfg, &rows)?;
            }
            emit(&mut summary, started, &common.out)
        }
    }
}
