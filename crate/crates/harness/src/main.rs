use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use modmf_core::nash::DeviationFamily;
use modmf_harness::config::{ConfigLayer, ExperimentConfig, FeedbackSpec, Kind};
use modmf_harness::run::{RunManifest, RESOLVED_CONFIG};
use modmf_harness::{run, HarnessError, Result};

#[derive(Parser)]
#[command(name = "modmf", version, about = "Monte Carlo experiments for Markov-modulated mean-field systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample regime chains and tabulate state frequencies.
    Chain(Flags),
    /// Model file utilities.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
    /// Simulate the interacting particle system.
    Particles(Flags),
    /// Solve the mean-field fixed point by Picard iteration.
    Meanfield(Flags),
    /// Propagation-of-chaos ladder with a log-log rate fit.
    Chaos(Flags),
    /// Least-squares Monte Carlo adjoint with regression diagnostics.
    Adjoint(Flags),
    /// Check the sufficient conditions of the maximum principle.
    VerifyMp(Flags),
    /// Riccati oracle for linear-quadratic models.
    LqOracle(Flags),
    /// Unilateral deviation gaps of the finite-population game.
    Nash(Flags),
    /// Rerun a manifest and compare output checksums.
    Rerun {
        manifest: PathBuf,
        /// Write the rerun here instead of the original directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Spot-check the standing assumptions of a model file.
    Check(Flags),
}

/// Overrides for any configuration key; flags win over `--config`.
#[derive(clap::Args, Debug, Default)]
struct Flags {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSON generator matrix (chain only).
    #[arg(long)]
    generator: Option<PathBuf>,
    /// 1-based initial regime.
    #[arg(long)]
    initial_regime: Option<usize>,
    /// Feedback as inline JSON or a JSON file.
    #[arg(long)]
    feedback: Option<String>,
    /// Deviation family as inline JSON or a JSON file.
    #[arg(long)]
    deviation: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Monte Carlo paths or copies (M).
    #[arg(long, short = 'm')]
    paths: Option<usize>,
    /// Horizon T.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    damping: Option<f64>,
    /// Comma-separated particle counts.
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<usize>>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $MODMF_OUT_DIR, then ./modmf-out).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    basis_degree: Option<usize>,
    #[arg(long)]
    comparisons: Option<usize>,
    /// Also write per-path CSV.
    #[arg(long)]
    per_path: bool,
    /// Skip the SVG rate plot.
    #[arg(long)]
    no_plot: bool,
}

fn inline_or_file<T: serde::de::DeserializeOwned>(arg: &str, what: &str) -> Result<T> {
    let text = if arg.trim_start().starts_with('{') || arg.trim_start().starts_with('"') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| HarnessError::io(arg, e))?
    };
    serde_json::from_str(&text).map_err(|e| HarnessError::validation(format!("`{what}`: {e}")))
}

impl Flags {
    fn layer(&self) -> Result<ConfigLayer> {
        Ok(ConfigLayer {
            kind: None,
            model: self.model.clone(),
            generator: self.generator.clone(),
            initial_regime: self.initial_regime,
            feedback: self.feedback.as_deref().map(|s| inline_or_file::<FeedbackSpec>(s, "feedback")).transpose()?,
            deviation: self
                .deviation
                .as_deref()
                .map(|s| inline_or_file::<DeviationFamily>(s, "deviation"))
                .transpose()?,
            n: self.n,
            paths: self.paths,
            horizon: self.horizon,
            n_steps: self.n_steps,
            tol: self.tol,
            max_iters: self.max_iters,
            damping: self.damping,
            ladder: self.ladder.clone(),
            replications: self.replications,
            samples: self.samples,
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            threads: self.threads,
            basis_degree: self.basis_degree,
            comparisons: self.comparisons,
            per_path: self.per_path.then_some(true),
            plot: self.no_plot.then_some(false),
        })
    }

    fn resolve(&self, kind: Kind) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ConfigLayer::load(p)?,
            None => ConfigLayer::default(),
        };
        ExperimentConfig::resolve(base.merge(self.layer()?), Some(kind))
    }
}

fn report(m: &RunManifest) {
    println!("{} finished in {:.2}s; outputs in {}", m.kind.name(), m.wall_time_seconds, m.config.out_dir.display());
    for o in &m.outputs {
        println!("  {}  {}", o.sha256, o.file);
    }
}

fn rerun(manifest: &PathBuf, out_dir: Option<PathBuf>) -> Result<bool> {
    let text = std::fs::read_to_string(manifest).map_err(|e| HarnessError::io(manifest, e))?;
    let old: RunManifest =
        serde_json::from_str(&text).map_err(|e| HarnessError::validation(format!("manifest: {e}")))?;
    let mut cfg = old.config.clone();
    if let Some(d) = out_dir {
        cfg.out_dir = d;
    }
    let new = run(&cfg)?;
    report(&new);
    let mut same = true;
    for o in old.outputs.iter().filter(|o| o.file != RESOLVED_CONFIG) {
        match new.outputs.iter().find(|n| n.file == o.file) {
            Some(n) if n.sha256 == o.sha256 => {}
            _ => {
                eprintln!("checksum mismatch: {}", o.file);
                same = false;
            }
        }
    }
    if same {
        println!("all outputs byte-identical to {}", manifest.display());
    }
    Ok(same)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (flags, kind) = match &cli.command {
        Command::Chain(f) => (f, Kind::Chain),
        Command::Model { command: ModelCommand::Check(f) } => (f, Kind::ModelCheck),
        Command::Particles(f) => (f, Kind::Particles),
        Command::Meanfield(f) => (f, Kind::Meanfield),
        Command::Chaos(f) => (f, Kind::Chaos),
        Command::Adjoint(f) => (f, Kind::Adjoint),
        Command::VerifyMp(f) => (f, Kind::VerifyMp),
        Command::LqOracle(f) => (f, Kind::LqOracle),
        Command::Nash(f) => (f, Kind::Nash),
        Command::Rerun { manifest, out_dir } => {
            return match rerun(manifest, out_dir.clone()) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::FAILURE,
                Err(e) => fail(e),
            };
        }
    };
    match flags.resolve(kind).and_then(|cfg| run(&cfg)) {
        Ok(m) => {
            report(&m);
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn fail(e: HarnessError) -> ExitCode {
    eprintln!("modmf: {e}");
    ExitCode::from(e.exit_code() as u8)
}
