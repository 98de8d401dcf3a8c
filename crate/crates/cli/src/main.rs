use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use convsplit::solver::BoundMode;
use convsplit_cli::commands::{gl_segment, scad_bench, solve, CommandOutcome};
use convsplit_cli::config::{parse_algorithms, RunConfig};
use convsplit_cli::diag::run_diag;
use convsplit_cli::output::{write_json, VERSION};

#[derive(Parser)]
#[command(
    name = "convsplit",
    version,
    about = "Preconditioned convex-splitting solvers: benchmarks, segmentation and audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Random sparse regression instances with the SCAD penalty.
    ScadBench(Common),
    /// Graph Ginzburg-Landau segmentation of an image or a synthetic one.
    GlSegment(Common),
    /// A single run with its full trace.
    Solve(Common),
    /// Invariant and accuracy audit; exits 1 on any failure.
    Diag {
        #[command(flatten)]
        common: Common,
        /// Inject a corrupted step into a strict run.
        #[arg(long)]
        corrupt: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail instead of warning when theoretical step bounds do not hold.
    #[arg(long)]
    strict: bool,
    /// Comma-separated algorithm list, e.g. `dca,bdca,bapdca-ls-t`.
    #[arg(long)]
    algorithms: Option<String>,
    /// Scale factor applied to the SCAD base sizes.
    #[arg(long)]
    scale: Option<f64>,
    /// Number of random instances (seeds `seed`, `seed + 1`, ...).
    #[arg(long)]
    instances: Option<usize>,
    /// Worker threads; 0 lets the pool decide.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if self.strict {
            cfg.solver.bound_mode = BoundMode::StrictTheory;
        }
        if let Some(list) = &self.algorithms {
            cfg.solver.algorithms = parse_algorithms(list)?;
        }
        if let Some(s) = self.scale {
            cfg.scad.scale = s;
        }
        if let Some(n) = self.instances {
            cfg.instances = n;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(outcome: &CommandOutcome) -> ExitCode {
    for a in &outcome.aggregates {
        println!(
            "{:<6} size {:<5} {:<12} {:<12} runs {} failed {} iter mean {:.1} median {:.1} violations {} time {:.3}s{}",
            a.problem,
            a.size,
            a.algorithm,
            a.criterion,
            a.runs,
            a.failed,
            a.mean_iterations,
            a.median_iterations,
            a.violations,
            a.mean_wall_time,
            a.mean_quality.map(|q| format!(" quality {q:.4}")).unwrap_or_default(),
        );
    }
    for r in outcome.rows.iter().filter(|r| !r.ok()) {
        eprintln!("{} seed {}: {}", r.algorithm, r.seed, r.status);
    }
    if outcome.any_failed() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::ScadBench(c) => Ok(report(&scad_bench(&c.resolve()?)?)),
        Command::GlSegment(c) => Ok(report(&gl_segment(&c.resolve()?)?)),
        Command::Solve(c) => Ok(report(&solve(&c.resolve()?)?)),
        Command::Diag { common, corrupt } => {
            let cfg = common.resolve()?;
            let corrupt = corrupt || cfg.diag.corrupt;
            let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.diag.threads).build()?;
            let diag = pool.install(|| run_diag(&cfg, corrupt))?;
            std::fs::create_dir_all(&cfg.output.dir)
                .with_context(|| format!("creating {}", cfg.output.dir.display()))?;
            let value = serde_json::json!({
                "version": VERSION,
                "config_hash": cfg.hash(),
                "passed": diag.passed(),
                "report": diag,
            });
            write_json(&cfg.output.dir.join("diag_report.json"), &value)?;
            for g in &diag.gradients {
                println!(
                    "gradient {:<8} {:<4} max rel error {:.2e}",
                    g.family, g.quantity, g.max_rel_error
                );
            }
            for o in &diag.order {
                println!(
                    "order {:?}: residual slope {:?}, error slope {:?}, error ratio {:?}",
                    o.preconditioner, o.residual_slope, o.error_slope, o.error_ratio
                );
            }
            for s in &diag.strict_scad {
                println!(
                    "strict scad {:<5} {} iterations, {} violations",
                    s.variant, s.iterations, s.violations
                );
            }
            for f in &diag.failures {
                eprintln!("FAIL {f}");
            }
            Ok(if diag.passed() {
                println!("diag: all checks passed");
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
