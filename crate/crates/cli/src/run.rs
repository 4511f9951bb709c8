//! Command execution and artifact writing.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nematiq_core::diagnostics::{ensemble_moments, CheckRecord, EnergyTrace, MomentsReport, AUX_HEADER, CSV_HEADER};
use nematiq_core::integrator::{run_trajectory, RunOutput};
use nematiq_core::noise::StoppingTime;
use nematiq_core::picard::{chain_windows, ChainOutput, CutoffSpec};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Command, Format, RunConfig};
use crate::suite::{convolution_suite, verify_suite};

pub const TRACE_FORMAT: &str = "nematiq-trace-v1";
pub const WORKERS_ENV: &str = "NEMATIQ_WORKERS";

#[derive(Debug)]
pub enum RunError {
    Io(String),
    Runtime(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Io(m) => write!(f, "io: {m}"),
            RunError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

/// Exit status of a finished run.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Ok,
    Failed(Vec<String>),
    Fatal(String),
}

impl Outcome {
    pub fn code(&self) -> i32 {
        match self {
            Outcome::Ok => 0,
            Outcome::Failed(_) => 1,
            Outcome::Fatal(_) => 3,
        }
    }
}

/// Worker count from the environment, at least one.
pub fn workers() -> usize {
    std::env::var(WORKERS_ENV).ok().and_then(|s| s.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

fn in_pool<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> Result<T, RunError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| RunError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?))
}

fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RunError> {
    let mut w = create(path)?;
    for it in items {
        writeln!(w, "{}", serde_json::to_string(it).map_err(|e| RunError::Io(e.to_string()))?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_file(cfg: &RunConfig, seed: u64) -> String {
    match cfg.format {
        Format::Csv => format!("trace_{seed}.csv"),
        Format::Ndjson => format!("trace_{seed}.ndjson"),
    }
}

/// Write one trace in the configured format.
pub fn write_trace(cfg: &RunConfig, dir: &Path, seed: u64, trace: &EnergyTrace) -> Result<(), RunError> {
    let mut w = create(&dir.join(trace_file(cfg, seed)))?;
    match cfg.format {
        Format::Csv => {
            writeln!(w, "{CSV_HEADER}")?;
            for r in &trace.rows {
                writeln!(w, "{}", r.csv())?;
            }
            let mut a = create(&dir.join(format!("aux_{seed}.csv")))?;
            writeln!(a, "{AUX_HEADER}")?;
            for r in &trace.rows {
                writeln!(a, "{}", r.aux_csv())?;
            }
            a.flush()?;
        }
        Format::Ndjson => {
            for r in &trace.rows {
                writeln!(w, "{}", serde_json::to_string(r).map_err(|e| RunError::Io(e.to_string()))?)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_manifest(cfg: &RunConfig, dir: &Path) -> Result<(), RunError> {
    fs::write(dir.join("run.conf"), cfg.canonical_text())?;
    let m = json!({
        "command": cfg.command.name(),
        "trace_format": TRACE_FORMAT,
        "config_hash": cfg.hash(),
        "seeds": cfg.seeds,
        "build": concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
        "config": cfg.resolved,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m).map_err(|e| RunError::Io(e.to_string()))? + "\n")?;
    Ok(())
}

fn tau_text(t: &StoppingTime) -> String {
    if t.is_finite() {
        format!("{}", t.value)
    } else {
        "inf".into()
    }
}

fn simulate_seeds(cfg: &RunConfig, dir: &Path) -> Result<Vec<(u64, RunOutput)>, RunError> {
    let runs: Vec<Result<(u64, RunOutput), RunError>> = in_pool(workers(), || {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let mut s = cfg.solver.clone();
                s.seed = seed;
                let out = run_trajectory(&s).map_err(|e| RunError::Runtime(format!("seed {seed}: {e}")))?;
                write_trace(cfg, dir, seed, &out.trace)?;
                Ok((seed, out))
            })
            .collect()
    })?;
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut w = create(&dir.join("stopping.csv"))?;
    writeln!(w, "seed,k,tau")?;
    for (seed, out) in &runs {
        for (k, t) in cfg.solver.k_levels.iter().zip(&out.stopping) {
            writeln!(w, "{seed},{k},{}", tau_text(t))?;
        }
        if let Some(b) = &out.blowup {
            writeln!(w, "{seed},blowup,{}", b.value)?;
        }
    }
    w.flush()?;
    Ok(runs)
}

fn blowups(runs: &[(u64, RunOutput)]) -> Vec<String> {
    runs.iter().filter_map(|(s, o)| o.blowup.map(|b| format!("seed {s}: blow-up at t = {}", b.value))).collect()
}

#[derive(Serialize)]
struct Summary {
    seeds: Vec<u64>,
    moments: Option<MomentsReport>,
    moments_note: Option<String>,
    top_level_crossings: Vec<u64>,
    blowups: Vec<String>,
}

#[derive(Serialize)]
struct TauRow {
    seed: u64,
    n: f64,
    tau: String,
    grid_index: Option<usize>,
    max_factor: f64,
    max_iterations: usize,
}

fn picard_seed(cfg: &RunConfig, dir: &Path, seed: u64) -> Result<(Vec<TauRow>, Vec<String>), RunError> {
    let mut s = cfg.solver.clone();
    s.seed = seed;
    let mut chains: Vec<(f64, ChainOutput)> = Vec::new();
    for &n in &cfg.cutoff_levels {
        let cut = CutoffSpec::new(n).map_err(|e| RunError::Runtime(e.to_string()))?;
        let ch = chain_windows(&s, cut, cfg.window, cfg.picard_tol, cfg.picard_max_iter)
            .map_err(|e| RunError::Runtime(format!("seed {seed}, n = {n}: {e}")))?;
        write_ndjson(&dir.join(format!("picard_{seed}_n{n}.ndjson")), &ch.records)?;
        chains.push((n, ch));
    }
    chains.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut failures = Vec::new();
    for w in chains.windows(2) {
        let ((n0, a), (n1, b)) = (&w[0], &w[1]);
        if a.tau.value > b.tau.value {
            failures.push(format!("seed {seed}: tau_{n0} > tau_{n1}"));
        }
        let stop = a.tau.grid_index.unwrap_or(usize::MAX).min(a.trajectory.len());
        let dev = (0..stop).map(|m| a.trajectory.states[m].sub(&b.trajectory.states[m]).v_norm_sq().sqrt()).fold(0.0, f64::max);
        if dev > 1e-8 {
            failures.push(format!("seed {seed}: u^{n0} and u^{n1} differ by {dev:e} before tau_{n0}"));
        }
    }
    let rows = chains
        .iter()
        .map(|(n, ch)| TauRow {
            seed,
            n: *n,
            tau: tau_text(&ch.tau),
            grid_index: ch.tau.grid_index,
            max_factor: ch.max_factor,
            max_iterations: ch.max_iterations,
        })
        .collect();
    Ok((rows, failures))
}

fn checks_outcome(records: &[CheckRecord]) -> Outcome {
    let failed: Vec<String> = records.iter().filter(|r| !r.pass).map(|r| format!("{} ({} = {:e})", r.check, r.statistic, r.value)).collect();
    if failed.is_empty() {
        Outcome::Ok
    } else {
        Outcome::Failed(failed)
    }
}

/// Run the configured command, writing artifacts under `output_dir`.
pub fn run(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir)?;
    write_manifest(cfg, dir)?;
    match cfg.command {
        Command::Simulate | Command::Ensemble => {
            let runs = simulate_seeds(cfg, dir)?;
            let blown = blowups(&runs);
            let mut failures = Vec::new();
            if cfg.command == Command::Ensemble {
                let traces: Vec<EnergyTrace> = runs.iter().map(|(_, o)| o.trace.clone()).collect();
                let p = cfg.solver.diagnostics.moment_exponent(cfg.solver.poly.degree());
                let (moments, note) = match ensemble_moments(&traces, p, cfg.solver.poly.a_lead_potential()) {
                    Ok(m) => (Some(m), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                if let Some(m) = &moments {
                    if !m.finite {
                        failures.push("moment estimates not finite".to_string());
                    }
                    if !m.integrand_nonnegative {
                        failures.push("dissipation integrand negative on a recorded state".to_string());
                    }
                }
                let top: Vec<u64> = runs
                    .iter()
                    .filter(|(_, o)| o.stopping.last().map(|t| t.is_finite()).unwrap_or(false))
                    .map(|(s, _)| *s)
                    .collect();
                for s in &top {
                    failures.push(format!("seed {s}: crosses the top stopping level (see {})", trace_file(cfg, *s)));
                }
                failures.extend(blown.iter().cloned());
                let summary = Summary { seeds: cfg.seeds.clone(), moments, moments_note: note, top_level_crossings: top, blowups: blown.clone() };
                fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).map_err(|e| RunError::Io(e.to_string()))? + "\n")?;
            }
            if cfg.blowup_fatal && !blown.is_empty() {
                return Ok(Outcome::Fatal(blown.join("; ")));
            }
            Ok(if failures.is_empty() { Outcome::Ok } else { Outcome::Failed(failures) })
        }
        Command::Picard => {
            let per_seed: Vec<Result<(Vec<TauRow>, Vec<String>), RunError>> =
                in_pool(workers(), || cfg.seeds.par_iter().map(|&s| picard_seed(cfg, dir, s)).collect())?;
            let mut rows = Vec::new();
            let mut failures = Vec::new();
            for r in per_seed {
                let (r, f) = r?;
                rows.extend(r);
                failures.extend(f);
            }
            let mut w = create(&dir.join("tau_table.csv"))?;
            writeln!(w, "seed,n,tau,grid_index,max_factor,max_iterations")?;
            for r in &rows {
                let gi = r.grid_index.map(|g| g.to_string()).unwrap_or_default();
                writeln!(w, "{},{},{},{},{:?},{}", r.seed, r.n, r.tau, gi, r.max_factor, r.max_iterations)?;
            }
            w.flush()?;
            Ok(if failures.is_empty() { Outcome::Ok } else { Outcome::Failed(failures) })
        }
        Command::Verify => {
            let records = verify_suite(&cfg.solver, cfg.samples, cfg.solver.seed);
            write_ndjson(&dir.join("verify_report.ndjson"), &records)?;
            Ok(checks_outcome(&records))
        }
        Command::ConvolutionTest => {
            let records = convolution_suite(&cfg.solver.grid, cfg.solver.dt, cfg.samples, cfg.solver.seed);
            write_ndjson(&dir.join("convolution_report.ndjson"), &records)?;
            Ok(checks_outcome(&records))
        }
    }
}
