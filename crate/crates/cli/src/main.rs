use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use singkal::config::{ModelKind, RunConfig};
use singkal::pipeline::{self, PipelineError};

/// MAP smoothing for linear state-space models with singular covariances.
#[derive(Debug, Parser)]
#[command(name = "singkal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset for the configured model.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Model to simulate with default parameters when no config is given.
        #[arg(long, value_enum, conflicts_with = "config", required_unless_present = "config")]
        model: Option<ModelArg>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite existing dataset files.
        #[arg(long)]
        force: bool,
    },
    /// Check dimensions and per-step surjectivity; exits 1 if any step fails.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the smoother and write states, residuals, history and run.json.
    Smooth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run even if validation fails.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration. Relative input paths resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModelArg {
    DcMotor,
    KinematicNav,
}

struct Loaded {
    cfg: RunConfig,
    base: PathBuf,
}

fn load(common: &Common, model: Option<ModelArg>) -> Result<Loaded, String> {
    let (mut cfg, base) = match (&common.config, model) {
        (Some(path), _) => {
            let cfg = RunConfig::load(path).map_err(|e| format!("cannot load {}: {e}", path.display()))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, base)
        }
        (None, Some(m)) => {
            let kind = match m {
                ModelArg::DcMotor => ModelKind::DcMotor,
                ModelArg::KinematicNav => ModelKind::KinematicNav,
            };
            (RunConfig::new(kind), PathBuf::from("."))
        }
        (None, None) => return Err("--config is required".into()),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(Loaded { cfg, base })
}

fn out_dir(flag: &Option<PathBuf>, loaded: &Loaded) -> PathBuf {
    match (flag, &loaded.cfg.io.out_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) if p.is_absolute() => p.clone(),
        (None, Some(p)) => loaded.base.join(p),
        (None, None) => PathBuf::from("out"),
    }
}

fn fail(e: &PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn usage(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            common,
            model,
            out,
            force,
        } => {
            let loaded = match load(&common, model) {
                Ok(l) => l,
                Err(m) => return usage(&m),
            };
            let dir = out_dir(&out, &loaded);
            match pipeline::simulate(&loaded.cfg, &dir, force) {
                Ok(paths) => {
                    for p in paths {
                        println!("{}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Validate { common } => {
            let loaded = match load(&common, None) {
                Ok(l) => l,
                Err(m) => return usage(&m),
            };
            let report = match pipeline::validate(&loaded.cfg, &loaded.base) {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
            println!(
                "model {:?}: {} steps, state dimension {}, A is {}×{}",
                report.model, report.steps, report.state_dim, report.rows, report.cols
            );
            for (k, i) in &report.dropped_rows {
                println!("dropped all-zero measurement row {} at step {}", i + 1, k + 1);
            }
            println!("step,rows,min_singular_value,ok");
            for s in &report.surjectivity.steps {
                let sv = s.min_singular_value.map_or(String::new(), |v| format!("{v:e}"));
                println!("{},{},{},{}", s.step, s.meas_rows, sv, s.ok);
            }
            if report.ok() {
                println!("surjective: yes");
                ExitCode::SUCCESS
            } else {
                let n = report.surjectivity.failing_steps().count();
                println!("surjective: no ({n} failing step(s))");
                ExitCode::from(1)
            }
        }
        Command::Smooth { common, out, force } => {
            let loaded = match load(&common, None) {
                Ok(l) => l,
                Err(m) => return usage(&m),
            };
            let dir = out_dir(&out, &loaded);
            match pipeline::smooth(&loaded.cfg, &loaded.base, &dir, force) {
                Ok(run) => {
                    let r = &run.report;
                    println!(
                        "{:?} after {} iterations: objective {:.6e}, feasibility {:.2e}, subgradient residual {:.2e}",
                        r.status, r.iterations, r.objective, r.certificate.feas, r.certificate.subgrad_resid
                    );
                    if let Some(rate) = &r.rate {
                        println!("estimated rate {:.6} (R² {:.3})", rate.kappa, rate.r_squared);
                    }
                    for (name, v) in &r.bias {
                        println!("{name} = {v:.6}");
                    }
                    println!("outputs in {}", dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
