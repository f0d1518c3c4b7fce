//! Command-line front end for the density-evolution toolkit.
//!
//! Seven subcommands cover the analysis surface:
//!
//! - `threshold`: bisection search for the decoding threshold of one
//!   ensemble under one method.
//! - `evolve`: a single evolution run at a fixed noise level, with the
//!   per-iteration trajectory available as CSV or JSON.
//! - `compare`: thresholds for several methods side by side, with the
//!   relative gap to the full-density baseline.
//! - `sweep`: threshold as a function of one free template coefficient.
//! - `optimize`: stochastic coefficient search over a template.
//! - `cost`: per-edge operation counts of the selected analysis method.
//! - `mc-check`: sampled-decoder cross-check of the density engine.
//!
//! Every numeric knob can also be set through a `METDE_`-prefixed
//! environment variable (for example `METDE_GRID_POINTS=2000`); explicit
//! flags win over the environment.  Outputs are deterministic: repeated
//! runs with the same flags produce byte-identical files (timing is only
//! included when `--timing` asks for it).  Exit status is 0 on success, 1
//! when a computation fails, and 2 for usage errors.

use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use metde::channel::{ebn0_db_from_sigma, shannon_sigma};
use metde::ensemble::{per_edge_cost, CostMethod, EnsembleDef, MetEnsemble};
use metde::full_de::{run_full_de, DeConfig};
use metde::gauss_approx::{run_approx, ApproxConfig, ApproxMethod};
use metde::hybrid::{run_hybrid, HybridConfig};
use metde::mc_oracle::{run_mc, McConfig};
use metde::optimizer::{
    optimize_ensemble, sweep_parameter, EnsembleTemplate, SweepOutcome, SweepPoint,
    SweepPointOutcome,
};
use metde::threshold::{find_threshold, threshold_error, Method, ThresholdConfig};
use metde::trace::Trace;

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "metde",
    version,
    about = "Density-evolution analysis for multi-edge-type LDPC ensembles",
    after_help = "Numeric knobs also read METDE_-prefixed environment variables \
                  (flags win).  Exit status: 0 success, 1 computation error, 2 usage error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text, env = "METDE_FORMAT")]
    format: Format,
    /// Write the result here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for batch subcommands (compare, sweep).
    #[arg(long, global = true, default_value_t = 1, env = "METDE_JOBS")]
    jobs: usize,
    /// Append wall-clock timing to the report (off by default so outputs
    /// are byte-identical across runs).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

/// Grid and iteration knobs shared by every evolution-backed subcommand.
#[derive(Args, Clone)]
struct EvolutionFlags {
    /// Quantization points of the LLR grid (rounded up to the next odd count).
    #[arg(long, default_value_t = 9800, env = "METDE_GRID_POINTS")]
    grid_points: usize,
    /// Saturation boundary of the LLR grid.
    #[arg(long, default_value_t = 50.0, env = "METDE_LLR_MAX")]
    llr_max: f64,
    /// Iteration cap per evolution run.
    #[arg(long = "max-iters", default_value_t = 1000, env = "METDE_MAX_ITERS")]
    max_iters: usize,
    /// Posterior error probability counting as converged.
    #[arg(long = "target-ber", default_value_t = 1e-10, env = "METDE_TARGET_BER")]
    target_ber: f64,
    /// Iterations between Gaussian-divergence checkpoints.
    #[arg(long = "kl-interval", default_value_t = 5, env = "METDE_KL_INTERVAL")]
    kl_interval: usize,
    /// Divergence level below which the hybrid switches to the mean recursion.
    #[arg(long = "kl-target", default_value_t = 0.04, env = "METDE_KL_TARGET")]
    kl_target: f64,
    /// Cap on density-phase iterations of the hybrid.
    #[arg(long = "max-full-iters", default_value_t = 100, env = "METDE_MAX_FULL_ITERS")]
    max_full_iters: usize,
}

impl EvolutionFlags {
    fn de(&self) -> DeConfig {
        DeConfig {
            grid_points: self.grid_points,
            llr_max: self.llr_max,
            max_iterations: self.max_iters,
            target_ber: self.target_ber,
            kl_check_interval: self.kl_interval,
        }
    }

    fn approx(&self) -> ApproxConfig {
        ApproxConfig { max_iterations: self.max_iters, target_ber: self.target_ber }
    }

    fn hybrid(&self) -> HybridConfig {
        HybridConfig {
            kl_target: self.kl_target,
            max_full_iterations: self.max_full_iters,
            de: self.de(),
            approx: self.approx(),
        }
    }
}

/// Bisection knobs for threshold-producing subcommands.
#[derive(Args, Clone)]
struct SearchFlags {
    /// Bisection stops once the bracket is tighter than this (absolute σ).
    #[arg(long, default_value_t = 1e-4, env = "METDE_TOL")]
    tol: f64,
    /// Lower edge of the initial σ bracket (defaults to half the Shannon
    /// noise level for the ensemble's rate).  Requires --sigma-hi.
    #[arg(long = "sigma-lo", requires = "sigma_hi")]
    sigma_lo: Option<f64>,
    /// Upper edge of the initial σ bracket (defaults to 1.2× the Shannon
    /// noise level).  Requires --sigma-lo.
    #[arg(long = "sigma-hi", requires = "sigma_lo")]
    sigma_hi: Option<f64>,
}

impl SearchFlags {
    /// Builds the search configuration; an explicit σ bracket is converted
    /// to Shannon-limit multiples for the ensemble's rate.
    fn config(&self, evo: &EvolutionFlags, rate: f64) -> Result<ThresholdConfig, CliError> {
        let mut cfg = ThresholdConfig {
            tolerance: self.tol,
            de: evo.de(),
            approx: evo.approx(),
            hybrid: evo.hybrid(),
            ..ThresholdConfig::default()
        };
        if let (Some(lo), Some(hi)) = (self.sigma_lo, self.sigma_hi) {
            if !(lo > 0.0 && lo < hi) {
                return Err(CliError::Usage(format!(
                    "--sigma-lo/--sigma-hi must satisfy 0 < lo < hi, got {lo} and {hi}"
                )));
            }
            let shannon = shannon_sigma(rate)?;
            cfg.bracket = (lo / shannon, hi / shannon);
        }
        Ok(cfg)
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Find the decoding threshold of an ensemble by bisection.
    Threshold {
        /// Ensemble definition file.
        #[arg(long)]
        ensemble: PathBuf,
        /// Analysis method: full, mean, ber, rca, or hybrid.
        #[arg(long, default_value = "full", value_parser = parse_method)]
        method: Method,
        #[command(flatten)]
        search: SearchFlags,
        #[command(flatten)]
        evo: EvolutionFlags,
    },
    /// Run one evolution at a fixed noise level and report the trajectory.
    Evolve {
        /// Ensemble definition file.
        #[arg(long)]
        ensemble: PathBuf,
        /// Channel noise standard deviation.
        #[arg(long)]
        sigma: f64,
        /// Analysis method: full, mean, ber, rca, or hybrid.
        #[arg(long, default_value = "full", value_parser = parse_method)]
        method: Method,
        #[command(flatten)]
        evo: EvolutionFlags,
    },
    /// Thresholds for several methods side by side.
    Compare {
        /// Ensemble definition file.
        #[arg(long)]
        ensemble: PathBuf,
        /// Comma-separated methods.  The full method anchors the error
        /// column and is added when absent.
        #[arg(long, default_value = "full,mean,ber,rca,hybrid")]
        methods: String,
        #[command(flatten)]
        search: SearchFlags,
        #[command(flatten)]
        evo: EvolutionFlags,
    },
    /// Threshold as a function of one free template coefficient.
    Sweep {
        /// Template file: an ensemble plus free/bounds/constraints blocks.
        #[arg(long)]
        template: PathBuf,
        /// Grid as lo:hi:count (inclusive, evenly spaced).
        #[arg(long, conflicts_with = "points")]
        grid: Option<String>,
        /// Explicit comma-separated grid values.
        #[arg(long)]
        points: Option<String>,
        /// Analysis method per grid point.
        #[arg(long, default_value = "mean", value_parser = parse_method)]
        method: Method,
        #[command(flatten)]
        search: SearchFlags,
        #[command(flatten)]
        evo: EvolutionFlags,
    },
    /// Stochastic coefficient search over a template.
    Optimize {
        /// Template file: an ensemble plus free/bounds/constraints blocks.
        #[arg(long)]
        template: PathBuf,
        /// Threshold evaluations to spend.
        #[arg(long, default_value_t = 100)]
        budget: usize,
        /// Seed of the proposal stream.
        #[arg(long, default_value_t = 0, env = "METDE_SEED")]
        seed: u64,
        /// Analysis method scoring each candidate.
        #[arg(long, default_value = "mean", value_parser = parse_method)]
        method: Method,
        #[command(flatten)]
        search: SearchFlags,
        #[command(flatten)]
        evo: EvolutionFlags,
    },
    /// Per-edge operation counts of the selected analysis method.
    Cost {
        /// Ensemble definition file.
        #[arg(long)]
        ensemble: PathBuf,
        /// Analysis method: full, mean, ber, rca, or hybrid.
        #[arg(long, default_value = "full", value_parser = parse_method)]
        method: Method,
        /// Fraction of iterations the hybrid spends in the density phase
        /// (hybrid only).
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Cross-check the density engine against the sampled decoder.
    #[command(name = "mc-check", hide = true)]
    McCheck {
        /// Ensemble definition file.
        #[arg(long)]
        ensemble: PathBuf,
        /// Channel noise standard deviation.
        #[arg(long)]
        sigma: f64,
        /// Total decoder samples, split across the replicas.
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        /// Independent replicas behind the error bars.
        #[arg(long, default_value_t = 20)]
        replicas: usize,
        /// Decoding iterations to compare.
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        /// Seed of the sample draw.
        #[arg(long, default_value_t = 0x6d63_6465, env = "METDE_SEED")]
        seed: u64,
        #[command(flatten)]
        evo: EvolutionFlags,
    },
}

// ---------------------------------------------------------------------------
// Error handling and output plumbing
// ---------------------------------------------------------------------------

/// Failure modes of a subcommand, mapped onto exit codes in `main`.
#[derive(Debug)]
enum CliError {
    /// Inconsistent or invalid flags (exit 2).
    Usage(String),
    /// The computation or its I/O failed (exit 1).
    Run(String),
}

impl From<metde::Error> for CliError {
    fn from(e: metde::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

/// Writes a finished report to the selected destination.
fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
            Ok(())
        }
        Some(path) => {
            std::fs::write(path, content)
                .map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))
        }
    }
}

fn json_report(value: serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(&value).expect("report values serialize");
    s.push('\n');
    s
}

/// Runs `tasks` on `jobs` worker threads, preserving input order in the
/// output.  With one worker everything runs inline.
fn pooled<T, R, F>(jobs: usize, tasks: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    if jobs <= 1 || tasks.len() <= 1 {
        return tasks.into_iter().map(f).collect();
    }
    let n = tasks.len();
    let slots: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let queue: Vec<Mutex<Option<T>>> = tasks.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let task = queue[i].lock().unwrap().take().expect("each task taken once");
                *slots[i].lock().unwrap() = Some(f(task));
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().unwrap().expect("all slots filled")).collect()
}

fn load_ensemble(path: &PathBuf) -> Result<MetEnsemble, CliError> {
    MetEnsemble::from_json_file(path)
        .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

fn load_template(path: &PathBuf) -> Result<EnsembleTemplate, CliError> {
    EnsembleTemplate::from_json_file(path)
        .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Subcommand implementations
// ---------------------------------------------------------------------------

fn main() {
    let cli = Cli::parse();
    let start = std::time::Instant::now();
    let result = match &cli.command {
        Command::Threshold { ensemble, method, search, evo } => {
            cmd_threshold(&cli, ensemble, *method, search, evo, start)
        }
        Command::Evolve { ensemble, sigma, method, evo } => {
            cmd_evolve(&cli, ensemble, *sigma, *method, evo, start)
        }
        Command::Compare { ensemble, methods, search, evo } => {
            cmd_compare(&cli, ensemble, methods, search, evo, start)
        }
        Command::Sweep { template, grid, points, method, search, evo } => {
            cmd_sweep(&cli, template, grid.as_deref(), points.as_deref(), *method, search, evo, start)
        }
        Command::Optimize { template, budget, seed, method, search, evo } => {
            cmd_optimize(&cli, template, *budget, *seed, *method, search, evo, start)
        }
        Command::Cost { ensemble, method, alpha } => cmd_cost(&cli, ensemble, *method, *alpha),
        Command::McCheck { ensemble, sigma, samples, replicas, iterations, seed, evo } => {
            cmd_mc_check(&cli, ensemble, *sigma, *samples, *replicas, *iterations, *seed, evo, start)
        }
    };
    match result {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
    }
}

/// Appends the timing line/field only when requested, keeping default
/// outputs byte-identical across runs.
fn timing_text(cli: &Cli, start: std::time::Instant) -> String {
    if cli.timing {
        format!("elapsed:    {:.1} s\n", start.elapsed().as_secs_f64())
    } else {
        String::new()
    }
}

fn with_timing(cli: &Cli, start: std::time::Instant, mut value: serde_json::Value) -> serde_json::Value {
    if cli.timing {
        value["elapsed_s"] = json!(start.elapsed().as_secs_f64());
    }
    value
}

fn cmd_threshold(
    cli: &Cli,
    ensemble: &PathBuf,
    method: Method,
    search: &SearchFlags,
    evo: &EvolutionFlags,
    start: std::time::Instant,
) -> Result<(), CliError> {
    let ens = load_ensemble(ensemble)?;
    let cfg = search.config(evo, ens.rate())?;
    let out = find_threshold(&ens, method, &cfg)?;
    let ebn0 = ebn0_db_from_sigma(out.sigma_star, ens.rate())?;
    let report = match cli.format {
        Format::Text => format!(
            "ensemble:   {} (rate {:.4}, {} edge types)\n\
             method:     {}\n\
             sigma*:     {:.6}\n\
             Eb/N0*:     {:.3} dB\n\
             probes:     {}\n\
             iterations: {}\n{}",
            ensemble.display(),
            ens.rate(),
            ens.edge_types(),
            method.name(),
            out.sigma_star,
            ebn0,
            out.probes.len(),
            out.total_iterations,
            timing_text(cli, start),
        ),
        Format::Json => json_report(with_timing(cli, start, json!({
            "command": "threshold",
            "ensemble": ensemble.display().to_string(),
            "rate": ens.rate(),
            "method": method.name(),
            "sigma_star": out.sigma_star,
            "sigma_fail": out.sigma_fail,
            "ebn0_db": ebn0,
            "probes": out.probes.iter().map(|p| json!({
                "sigma": p.sigma,
                "converged": p.converged,
                "iterations": p.iterations,
            })).collect::<Vec<_>>(),
            "total_iterations": out.total_iterations,
        }))),
        Format::Csv => format!(
            "method,sigma_star,sigma_fail,probes,total_iterations\n{},{},{},{},{}\n",
            method.name(),
            out.sigma_star,
            out.sigma_fail,
            out.probes.len(),
            out.total_iterations
        ),
    };
    emit(&cli.out, &report)
}

/// Evolution summary plus trace, dispatched over the method kinds.
fn cmd_evolve(
    cli: &Cli,
    ensemble: &PathBuf,
    sigma: f64,
    method: Method,
    evo: &EvolutionFlags,
    start: std::time::Instant,
) -> Result<(), CliError> {
    let ens = load_ensemble(ensemble)?;
    let (converged, iterations, final_ber, switch, trace): (bool, usize, f64, Option<(usize, f64)>, Trace) =
        match method {
            Method::Full => {
                let o = run_full_de(&ens, sigma, &evo.de())?;
                (o.converged, o.iterations, o.final_ber, None, o.trace)
            }
            Method::Mean | Method::Ber | Method::Rca => {
                let m = match method {
                    Method::Mean => ApproxMethod::Mean,
                    Method::Ber => ApproxMethod::Ber,
                    _ => ApproxMethod::Rca,
                };
                let o = run_approx(&ens, sigma, m, &evo.approx())?;
                (o.converged, o.iterations, o.final_ber, None, o.trace)
            }
            Method::Hybrid => {
                let o = run_hybrid(&ens, sigma, &evo.hybrid())?;
                (o.converged, o.iterations, o.final_ber, Some((o.switch_iteration, o.full_fraction)), o.trace)
            }
        };
    let report = match cli.format {
        Format::Text => {
            let mut s = format!(
                "ensemble:   {} (rate {:.4})\n\
                 method:     {}\n\
                 sigma:      {}\n\
                 converged:  {}\n\
                 iterations: {}\n\
                 final BER:  {:.6e}\n",
                ensemble.display(),
                ens.rate(),
                method.name(),
                sigma,
                converged,
                iterations,
                final_ber,
            );
            if let Some((at, fraction)) = switch {
                s.push_str(&format!(
                    "switch:     after iteration {at} ({:.1}% density phase)\n",
                    100.0 * fraction
                ));
            }
            s.push_str(&timing_text(cli, start));
            s
        }
        Format::Json => {
            let mut value = json!({
                "command": "evolve",
                "ensemble": ensemble.display().to_string(),
                "method": method.name(),
                "sigma": sigma,
                "converged": converged,
                "iterations": iterations,
                "final_ber": final_ber,
                "trace": serde_json::to_value(&trace).expect("traces serialize"),
            });
            if let Some((at, fraction)) = switch {
                value["switch_iteration"] = json!(at);
                value["full_fraction"] = json!(fraction);
            }
            json_report(with_timing(cli, start, value))
        }
        Format::Csv => {
            let mut buf = Vec::new();
            trace.write_csv(&mut buf).map_err(metde::Error::from)?;
            String::from_utf8(buf).expect("trace CSV is UTF-8")
        }
    };
    emit(&cli.out, &report)
}

fn parse_methods_list(s: &str) -> Result<Vec<Method>, CliError> {
    let mut methods = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let m = part.parse::<Method>().map_err(|e| CliError::Usage(e.to_string()))?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(CliError::Usage("--methods lists no methods".into()));
    }
    Ok(methods)
}

fn cmd_compare(
    cli: &Cli,
    ensemble: &PathBuf,
    methods: &str,
    search: &SearchFlags,
    evo: &EvolutionFlags,
    start: std::time::Instant,
) -> Result<(), CliError> {
    let mut methods = parse_methods_list(methods)?;
    // The error column is relative to the full method, so it always runs.
    if !methods.contains(&Method::Full) {
        methods.insert(0, Method::Full);
    }
    let ens = load_ensemble(ensemble)?;
    let cfg = search.config(evo, ens.rate())?;

    let results = pooled(cli.jobs, methods.clone(), |m| find_threshold(&ens, m, &cfg));
    let mut rows = Vec::new();
    for (m, r) in methods.iter().zip(results) {
        rows.push((m, r?));
    }
    let full_sigma = rows
        .iter()
        .find(|(m, _)| **m == Method::Full)
        .map(|(_, o)| o.sigma_star)
        .expect("full method always runs");

    let report = match cli.format {
        Format::Text => {
            let mut s = format!(
                "ensemble: {} (rate {:.4})\n\n{:<8}{:>12}{:>18}{:>9}{:>13}\n",
                ensemble.display(),
                ens.rate(),
                "method",
                "sigma*",
                "threshold_error",
                "probes",
                "iterations"
            );
            for (m, o) in &rows {
                s.push_str(&format!(
                    "{:<8}{:>12.6}{:>17.3}%{:>9}{:>13}\n",
                    m.name(),
                    o.sigma_star,
                    100.0 * threshold_error(o.sigma_star, full_sigma),
                    o.probes.len(),
                    o.total_iterations
                ));
            }
            s.push_str(&timing_text(cli, start));
            s
        }
        Format::Json => json_report(with_timing(cli, start, json!({
            "command": "compare",
            "ensemble": ensemble.display().to_string(),
            "rate": ens.rate(),
            "baseline_sigma_star": full_sigma,
            "methods": rows.iter().map(|(m, o)| json!({
                "method": m.name(),
                "sigma_star": o.sigma_star,
                "threshold_error": threshold_error(o.sigma_star, full_sigma),
                "probes": o.probes.len(),
                "total_iterations": o.total_iterations,
            })).collect::<Vec<_>>(),
        }))),
        Format::Csv => {
            let mut s = String::from("method,sigma_star,threshold_error,probes,total_iterations\n");
            for (m, o) in &rows {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    m.name(),
                    o.sigma_star,
                    threshold_error(o.sigma_star, full_sigma),
                    o.probes.len(),
                    o.total_iterations
                ));
            }
            s
        }
    };
    emit(&cli.out, &report)
}

/// Parses `lo:hi:count` into an inclusive evenly spaced grid.
fn parse_grid_spec(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let usage = || {
        CliError::Usage(format!(
            "--grid expects lo:hi:count with lo < hi and count >= 2, got {spec:?}"
        ))
    };
    if parts.len() != 3 {
        return Err(usage());
    }
    let lo: f64 = parts[0].parse().map_err(|_| usage())?;
    let hi: f64 = parts[1].parse().map_err(|_| usage())?;
    let count: usize = parts[2].parse().map_err(|_| usage())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi && count >= 2) {
        return Err(usage());
    }
    // Interior points inherit half-ulp noise from the decimal endpoints
    // (0.15:0.35:5 would land on 0.19999999999999998); snapping to 13
    // significant digits recovers the decimal grid the spec means.
    let snap = |x: f64| format!("{x:.12e}").parse::<f64>().expect("formatted float");
    let span = hi - lo;
    Ok((0..count).map(|i| snap(lo + span * (i as f64 / (count - 1) as f64))).collect())
}

fn parse_points_list(s: &str) -> Result<Vec<f64>, CliError> {
    let values: Vec<f64> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("--points contains a non-number: {p:?}")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("--points lists no values".into()));
    }
    Ok(values)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    cli: &Cli,
    template: &PathBuf,
    grid: Option<&str>,
    points: Option<&str>,
    method: Method,
    search: &SearchFlags,
    evo: &EvolutionFlags,
    start: std::time::Instant,
) -> Result<(), CliError> {
    let t = load_template(template)?;
    let grid = match (grid, points) {
        (Some(spec), None) => parse_grid_spec(spec)?,
        (None, Some(list)) => parse_points_list(list)?,
        (None, None) => {
            return Err(CliError::Usage("sweep needs --grid lo:hi:count or --points".into()))
        }
        (Some(_), Some(_)) => unreachable!("clap rejects --grid with --points"),
    };
    let free = t.free_names();
    if free.len() != 1 {
        return Err(CliError::Usage(format!(
            "sweep needs a template with exactly one free coefficient, found {}",
            free.len()
        )));
    }
    let parameter = free[0].clone();
    let rate = t.instantiate(&t.initial_values()).map(|e| e.rate()).unwrap_or(0.5);
    let cfg = search.config(evo, rate)?;

    // Each grid point runs the library sweep on a singleton grid so the
    // skip/threshold semantics are identical at any worker count; a fully
    // infeasible singleton comes back as an all-failed error wrapping the
    // point's own skip reason, which the row keeps without the wrapper.
    let outcomes = pooled(cli.jobs, grid.clone(), |value| {
        match sweep_parameter(&t, &parameter, &[value], method, &cfg) {
            Ok(mut sweep) => sweep.points.remove(0),
            Err(e) => {
                let msg = e.to_string();
                let reason = msg
                    .rsplit_once("first reason: ")
                    .map(|(_, inner)| inner.to_string())
                    .unwrap_or(msg);
                SweepPoint { value, outcome: SweepPointOutcome::Skipped { reason } }
            }
        }
    });
    let sweep = SweepOutcome { parameter: parameter.clone(), points: outcomes };
    let best = sweep.argmax();

    let report = match cli.format {
        Format::Text => {
            let mut s = format!(
                "template:  {} (free coefficient {})\nmethod:    {}\n\n{:>10}  {:<10}{:>12}  {}\n",
                template.display(),
                parameter,
                method.name(),
                "value",
                "status",
                "sigma*",
                "detail"
            );
            for p in &sweep.points {
                match &p.outcome {
                    SweepPointOutcome::Threshold { sigma_star, probes, iterations } => {
                        s.push_str(&format!(
                            "{:>10}  {:<10}{:>12.6}  {probes} probes, {iterations} iterations\n",
                            p.value, "threshold", sigma_star
                        ));
                    }
                    SweepPointOutcome::Skipped { reason } => {
                        s.push_str(&format!("{:>10}  {:<10}{:>12}  {reason}\n", p.value, "skipped", "-"));
                    }
                }
            }
            match best {
                Some((value, sigma_star)) => {
                    s.push_str(&format!("\nbest: {parameter} = {value} (sigma* {sigma_star:.6})\n"));
                }
                None => s.push_str("\nbest: none (every grid point was skipped)\n"),
            }
            s.push_str(&timing_text(cli, start));
            s
        }
        Format::Json => json_report(with_timing(cli, start, json!({
            "command": "sweep",
            "template": template.display().to_string(),
            "parameter": parameter,
            "method": method.name(),
            "points": serde_json::to_value(&sweep.points).expect("sweep points serialize"),
            "best_value": best.map(|(value, _)| value),
            "best_sigma_star": best.map(|(_, sigma_star)| sigma_star),
        }))),
        Format::Csv => {
            let mut s = String::from("value,status,sigma_star,probes,iterations,reason\n");
            for p in &sweep.points {
                match &p.outcome {
                    SweepPointOutcome::Threshold { sigma_star, probes, iterations } => {
                        s.push_str(&format!("{},threshold,{sigma_star},{probes},{iterations},\n", p.value));
                    }
                    SweepPointOutcome::Skipped { reason } => {
                        s.push_str(&format!(
                            "{},skipped,,,,{}\n",
                            p.value,
                            reason.replace(',', ";")
                        ));
                    }
                }
            }
            s
        }
    };
    emit(&cli.out, &report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    cli: &Cli,
    template: &PathBuf,
    budget: usize,
    seed: u64,
    method: Method,
    search: &SearchFlags,
    evo: &EvolutionFlags,
    start: std::time::Instant,
) -> Result<(), CliError> {
    if cli.format == Format::Csv {
        return Err(CliError::Usage("optimize reports JSON or text, not CSV".into()));
    }
    let t = load_template(template)?;
    let rate = t.instantiate(&t.initial_values()).map(|e| e.rate()).unwrap_or(0.5);
    let cfg = search.config(evo, rate)?;
    let out = optimize_ensemble(&t, method, budget, seed, &cfg)?;

    let values: Vec<(String, f64)> = t
        .free_names()
        .iter()
        .cloned()
        .zip(out.best_values.iter().copied())
        .collect();
    let best_def: &EnsembleDef = out.best.def();
    let report = match cli.format {
        Format::Text => {
            let mut s = format!(
                "template:    {}\nmethod:      {}\nevaluations: {} ({} accepted)\nsigma*:      {:.6}\n",
                template.display(),
                method.name(),
                out.evaluations,
                out.accepted,
                out.sigma_star,
            );
            for (name, value) in &values {
                s.push_str(&format!("{name}:          {value:.6}\n"));
            }
            s.push_str(&timing_text(cli, start));
            s
        }
        Format::Json | Format::Csv => json_report(with_timing(cli, start, json!({
            "command": "optimize",
            "template": template.display().to_string(),
            "method": method.name(),
            "seed": seed,
            "budget": budget,
            "evaluations": out.evaluations,
            "accepted": out.accepted,
            "sigma_star": out.sigma_star,
            "best_values": values.iter().map(|(n, v)| json!({"name": n, "value": v})).collect::<Vec<_>>(),
            "ensemble": serde_json::to_value(best_def).expect("ensemble definitions serialize"),
        }))),
    };
    emit(&cli.out, &report)
}

fn cmd_cost(
    cli: &Cli,
    ensemble: &PathBuf,
    method: Method,
    alpha: Option<f64>,
) -> Result<(), CliError> {
    let cost_method = match (method, alpha) {
        (Method::Hybrid, Some(a)) => CostMethod::Hybrid { full_fraction: a },
        (Method::Hybrid, None) => {
            return Err(CliError::Usage(
                "cost --method hybrid needs --alpha (density-phase fraction)".into(),
            ))
        }
        (_, Some(_)) => {
            return Err(CliError::Usage("--alpha only applies to --method hybrid".into()))
        }
        (Method::Full, None) => CostMethod::Full,
        (Method::Mean, None) => CostMethod::Mean,
        (Method::Ber, None) => CostMethod::Ber,
        (Method::Rca, None) => CostMethod::Rca,
    };
    let ens = load_ensemble(ensemble)?;
    let rows = per_edge_cost(&ens, cost_method)?;
    let report = match cli.format {
        Format::Text => {
            let mut s = format!(
                "ensemble: {} (mean degrees: variable {:.3}, check {:.3})\nmethod:   {}{}\n\n{:<16}{:>14}{:>12}\n",
                ensemble.display(),
                ens.avg_var_degree(),
                ens.avg_chk_degree(),
                method.name(),
                alpha.map(|a| format!(" (alpha {a})")).unwrap_or_default(),
                "operation",
                "variable",
                "check"
            );
            for row in &rows {
                s.push_str(&format!(
                    "{:<16}{:>14.4}{:>12.4}\n",
                    row.operation.name(),
                    row.variable,
                    row.check
                ));
            }
            s
        }
        Format::Json => json_report(json!({
            "command": "cost",
            "ensemble": ensemble.display().to_string(),
            "method": method.name(),
            "alpha": alpha,
            "rows": rows.iter().map(|r| json!({
                "operation": r.operation.name(),
                "variable": r.variable,
                "check": r.check,
            })).collect::<Vec<_>>(),
        })),
        Format::Csv => {
            let mut s = String::from("operation,variable,check\n");
            for row in &rows {
                s.push_str(&format!("{},{},{}\n", row.operation.name(), row.variable, row.check));
            }
            s
        }
    };
    emit(&cli.out, &report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_mc_check(
    cli: &Cli,
    ensemble: &PathBuf,
    sigma: f64,
    samples: usize,
    replicas: usize,
    iterations: usize,
    seed: u64,
    evo: &EvolutionFlags,
    start: std::time::Instant,
) -> Result<(), CliError> {
    let ens = load_ensemble(ensemble)?;
    let mc = run_mc(&ens, sigma, &McConfig { samples, iterations, replicas, seed })?;
    // The density engine must run every compared iteration, so its stopping
    // target sits below any reachable error probability.
    let de_cfg = DeConfig {
        max_iterations: iterations,
        target_ber: f64::MIN_POSITIVE,
        ..evo.de()
    };
    let de = run_full_de(&ens, sigma, &de_cfg)?;
    let de_ber: Vec<f64> = de.trace.rows.iter().map(|r| r.posterior_ber).collect();

    let n = mc.ber.len().min(de_ber.len());
    let gap = |i: usize| (mc.ber[i] - de_ber[i]) / mc.standard_error[i].max(f64::MIN_POSITIVE);
    let worst = (0..n).map(|i| gap(i).abs()).fold(0.0, f64::max);

    let report = match cli.format {
        Format::Text => {
            let mut s = format!(
                "ensemble: {}\nsigma:    {}\nsamples:  {samples} over {replicas} replicas  seed: {seed}\n\n\
                 {:>4}{:>14}{:>14}{:>14}{:>10}\n",
                ensemble.display(),
                sigma,
                "iter",
                "sampled",
                "density",
                "std.err",
                "gap"
            );
            for i in 0..n {
                s.push_str(&format!(
                    "{:>4}{:>14.6e}{:>14.6e}{:>14.2e}{:>10.2}\n",
                    i + 1,
                    mc.ber[i],
                    de_ber[i],
                    mc.standard_error[i],
                    gap(i)
                ));
            }
            s.push_str(&format!("\nworst gap: {worst:.2} standard errors\n"));
            s.push_str(&timing_text(cli, start));
            s
        }
        Format::Json => json_report(with_timing(cli, start, json!({
            "command": "mc-check",
            "ensemble": ensemble.display().to_string(),
            "sigma": sigma,
            "samples": samples,
            "replicas": replicas,
            "seed": seed,
            "iterations": (0..n).map(|i| json!({
                "iteration": i + 1,
                "sampled_ber": mc.ber[i],
                "density_ber": de_ber[i],
                "standard_error": mc.standard_error[i],
                "gap": gap(i),
            })).collect::<Vec<_>>(),
            "worst_gap": worst,
        }))),
        Format::Csv => {
            let mut s = String::from("iteration,sampled_ber,density_ber,standard_error,gap\n");
            for i in 0..n {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    i + 1,
                    mc.ber[i],
                    de_ber[i],
                    mc.standard_error[i],
                    gap(i)
                ));
            }
            s
        }
    };
    emit(&cli.out, &report)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
