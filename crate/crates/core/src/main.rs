use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use trackattack::gradcheck::{self, GradcheckConfig};
use trackattack::harness::{self, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "trackattack", version, about = "Online adversarial attacks on a template-matching tracker")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; built-in acceptance grid when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the scene suite as PPM frames with annotations and targets.
    Gen(Common),
    /// Execute an experiment config.
    Run {
        #[command(flatten)]
        common: Common,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        workers: Option<usize>,
        /// Keep per-frame perturbations, heatmaps and adversarial frames.
        #[arg(long)]
        dump_perturbations: bool,
    },
    /// Rebuild tables and plots from a stored run.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the built-in acceptance config as JSON.
    Config,
    /// Finite-difference checks of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trials per objective and kernel.
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
}

fn load(c: &Common) -> trackattack::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::acceptance(),
    };
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn real_main(cli: Cli) -> trackattack::Result<bool> {
    match cli.cmd {
        Cmd::Gen(c) => {
            let cfg = load(&c)?;
            harness::generate_suite(&cfg, &cfg.out)?;
            println!("wrote {} videos to {}", cfg.suite.count, cfg.out.display());
        }
        Cmd::Run {
            common,
            workers,
            dump_perturbations,
        } => {
            let mut cfg = load(&common)?;
            cfg.dump_perturbations |= dump_perturbations;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let start = Instant::now();
            let suite = harness::run_suite(
                &cfg,
                &RunOptions {
                    out: Some(cfg.out.clone()),
                    workers: None,
                },
            )?;
            print!("{}", suite.table.to_csv());
            eprintln!(
                "{} cells in {:.1}s, results in {}",
                suite.cells.len(),
                start.elapsed().as_secs_f64(),
                cfg.out.display()
            );
        }
        Cmd::Config => println!("{}", serde_json::to_string_pretty(&ExperimentConfig::acceptance())?),
        Cmd::Report { out } => {
            let table = harness::report(&out)?;
            print!("{}", table.to_csv());
        }
        Cmd::Gradcheck { seed, trials } => {
            let start = Instant::now();
            let r = gradcheck::run(&GradcheckConfig {
                seed,
                trials,
                ..GradcheckConfig::default()
            })?;
            for l in &r.lines {
                println!("{:<24} trials={:<3} max_rel_err={:.3e}", l.name, l.trials, l.max_rel_err);
            }
            let worst = r.max_rel_err();
            println!(
                "overall trials={} max_rel_err={:.3e} ({:.1}s)",
                r.total_trials(),
                worst,
                start.elapsed().as_secs_f64()
            );
            return Ok(worst < 1e-4);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
