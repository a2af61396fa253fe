//! `graphmfg`: config-driven runner for the graph mean field game suites.

mod config;
mod output;
mod suites;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use graphmfg::graph::GENERATORS;
use rayon::prelude::*;
use serde_json::json;

use config::Suite;
use suites::{Context, Status};

/// Environment variable overriding the output directory of `run`.
const OUT_ENV: &str = "GRAPHMFG_OUT";

#[derive(Parser)]
#[command(name = "graphmfg", version, about = "Mean field games on finite weighted graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected suites and write reports.
    Run {
        config: PathBuf,
        /// Suites to run instead of those listed in the config.
        #[arg(long = "suite", value_enum)]
        suites: Vec<Suite>,
        /// Number of worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without running anything.
    Validate { config: PathBuf },
    /// List the built-in graph generators.
    ListGenerators,
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn list_generators() {
    for (name, help) in GENERATORS {
        println!("{name:<10} {help}");
    }
    println!();
    println!("torus h-sweep with dims [n] and h = 1/n:");
    for n in [4usize, 8, 16, 32] {
        let h = 1.0 / n as f64;
        println!("  n = {n:<3} h = {h:<8} omega = {:<5} vertices = {n}", n * n);
    }
}

fn validate(path: &Path) -> ExitCode {
    match config::load(path, &[]) {
        Ok(loaded) => {
            let c = &loaded.config;
            let names: Vec<&str> = loaded.suites.iter().map(|s| s.name()).collect();
            println!(
                "OK {}: {} vertices, {} edges, horizon {}, {} point(s), suites [{}]",
                path.display(),
                c.graph.graph.n(),
                c.graph.graph.edges().len(),
                c.horizon,
                c.points.len(),
                names.join(", ")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(path: &Path, suite_override: &[Suite], jobs: Option<usize>, out: Option<PathBuf>) -> ExitCode {
    let loaded = match config::load(path, suite_override) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out_dir = out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| loaded.config.out.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return ExitCode::from(2);
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };
    let ctx = match Context::new(loaded.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };

    let started = unix_ms();
    let results: Vec<(Suite, suites::SuiteOutput, f64)> = pool.install(|| {
        loaded
            .suites
            .par_iter()
            .map(|&s| {
                let clock = Instant::now();
                let out = suites::run(&ctx, s);
                (s, out, clock.elapsed().as_secs_f64())
            })
            .collect()
    });
    let finished = unix_ms();

    let failed = |s: Status| matches!(s, Status::Fail | Status::Error);
    let passed = results.iter().all(|(_, o, _)| !failed(o.status));
    let write = || -> std::io::Result<()> {
        for (suite, o, _) in &results {
            let doc = json!({ "suite": suite.name(), "status": o.status, "checks": o.checks, "report": o.report });
            output::write_json(&out_dir.join(format!("{}.json", suite.name())), &doc)?;
            for (name, text) in &o.csv {
                std::fs::write(out_dir.join(name), text)?;
            }
        }
        let c = &ctx.config;
        let summary = json!({
            "passed": passed,
            "graph": c.graph.spec,
            "model": c.model,
            "horizon": c.horizon,
            "beta": c.beta,
            "seed": c.options.seed,
            "suites": results
                .iter()
                .map(|(s, o, _)| json!({ "suite": s.name(), "status": o.status, "checks": o.checks }))
                .collect::<Vec<_>>(),
        });
        output::write_json(&out_dir.join("summary.json"), &summary)?;
        let metadata = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "config": path,
            "out": out_dir,
            "jobs": pool.current_num_threads(),
            "started_unix_ms": started,
            "finished_unix_ms": finished,
            "suite_seconds": results.iter().map(|(s, _, t)| json!({ "suite": s.name(), "seconds": t })).collect::<Vec<_>>(),
        });
        output::write_json(&out_dir.join("metadata.json"), &metadata)
    };
    if let Err(e) = write() {
        eprintln!("error: cannot write reports to {}: {e}", out_dir.display());
        return ExitCode::from(2);
    }

    for (suite, o, secs) in &results {
        let status = serde_json::to_value(o.status).ok().and_then(|v| v.as_str().map(str::to_uppercase));
        println!("{:<12} {:<15} {secs:>8.2}s", suite.name(), status.unwrap_or_default());
        for c in o.checks.iter().filter(|c| !c.passed) {
            let kind = if c.hard { "failed" } else { "note" };
            println!("  {kind}: {} = {:?} (need {} {})", c.name, c.value, c.op, c.tolerance);
        }
        if let Some(err) = o.report.get("error") {
            println!("  error: {err}");
        }
    }
    println!("reports written to {}", out_dir.display());
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, suites, jobs, out } => run(&config, &suites, jobs, out),
        Command::Validate { config } => validate(&config),
        Command::ListGenerators => {
            list_generators();
            ExitCode::SUCCESS
        }
    }
}
