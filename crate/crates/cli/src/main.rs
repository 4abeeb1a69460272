use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use embedding_atlas::config::PipelineConfig;
use embedding_atlas::pipeline::{run_pipeline, Experiment, PipelineError};

/// Probe the embedding geometry of a small vision transformer: spectra,
/// directional Lipschitz distributions, embedding matching, interpolation
/// paths, null-space walks, and anchor classification.
#[derive(Parser)]
#[command(name = "embedding-atlas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the master experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config's out_dir, then "out").
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Jacobian singular-value spectrum per input.
    Spectrum {
        #[command(flatten)]
        common: Common,
    },
    /// Local directional Lipschitz distributions per direction family.
    Ldlc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        grid_n: Option<usize>,
        #[arg(long)]
        singular: Option<usize>,
        #[arg(long)]
        random: Option<usize>,
        #[arg(long)]
        null: Option<usize>,
        #[arg(long)]
        optimized: Option<usize>,
    },
    /// Gradient-descent embedding matching between two inputs.
    Match {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        original: Option<usize>,
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Loss threshold; pass "off" to disable.
        #[arg(long)]
        loss_tol: Option<String>,
        /// Cosine threshold; pass "off" to disable.
        #[arg(long)]
        cos_tol: Option<String>,
        #[arg(long)]
        perturb_budget: Option<f64>,
        #[arg(long)]
        record_every: Option<usize>,
    },
    /// Embedding trace along the straight path between two inputs.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        frames_every: Option<usize>,
    },
    /// Null-space walk from an input with drift correction.
    Walk {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        step_len: Option<f64>,
        #[arg(long)]
        n_steps: Option<usize>,
        #[arg(long)]
        drift_cap: Option<f64>,
        #[arg(long)]
        rank_cut: Option<usize>,
        /// "fresh" or "persistent".
        #[arg(long)]
        mode: Option<String>,
    },
    /// Nearest-anchor classification and the optional flip protocol.
    Classify {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("EMBEDDING_ATLAS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }

    let cli = Cli::parse();
    match execute(cli) {
        Ok(manifest) => {
            println!("manifest: {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            let payload = serde_json::json!({
                "error": {
                    "kind": err.kind(),
                    "message": err.to_string(),
                    "exit_code": err.exit_code(),
                }
            });
            eprintln!("{payload}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<PathBuf, PipelineError> {
    let (common, experiment) = match &cli.command {
        Command::Spectrum { common } => (common, Experiment::Spectrum),
        Command::Ldlc { common, .. } => (common, Experiment::Ldlc),
        Command::Match { common, .. } => (common, Experiment::Match),
        Command::Interpolate { common, .. } => (common, Experiment::Interpolate),
        Command::Walk { common, .. } => (common, Experiment::Walk),
        Command::Classify { common } => (common, Experiment::Classify),
    };

    let text = std::fs::read_to_string(&common.config).map_err(|e| {
        PipelineError::Validation(format!("reading {}: {e}", common.config.display()))
    })?;
    let mut config: PipelineConfig = serde_json::from_str(&text).map_err(|e| {
        PipelineError::Validation(format!("parsing {}: {e}", common.config.display()))
    })?;

    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    apply_overrides(&cli.command, &mut config)?;

    let out_dir = common
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    run_pipeline(&config, experiment, &out_dir)
}

/// Parse an optional tolerance flag that accepts "off" to disable.
fn tolerance(raw: &Option<String>, current: Option<f64>, what: &str) -> Result<Option<f64>, PipelineError> {
    match raw.as_deref() {
        None => Ok(current),
        Some("off") => Ok(None),
        Some(s) => s.parse::<f64>().map(Some).map_err(|_| {
            PipelineError::Validation(format!("--{what} expects a number or \"off\", got \"{s}\""))
        }),
    }
}

fn apply_overrides(cmd: &Command, config: &mut PipelineConfig) -> Result<(), PipelineError> {
    match cmd {
        Command::Spectrum { .. } | Command::Classify { .. } => {}
        Command::Ldlc {
            epsilon,
            grid_n,
            singular,
            random,
            null,
            optimized,
            ..
        } => {
            let p = config.ldlc.get_or_insert_with(Default::default);
            if let Some(v) = epsilon {
                p.epsilon = *v;
            }
            if let Some(v) = grid_n {
                p.grid_n = *v;
            }
            if let Some(v) = singular {
                p.singular = *v;
            }
            if let Some(v) = random {
                p.random = *v;
            }
            if let Some(v) = null {
                p.null = *v;
            }
            if let Some(v) = optimized {
                p.optimized = *v;
            }
        }
        Command::Match {
            original,
            target,
            lr,
            max_iters,
            loss_tol,
            cos_tol,
            perturb_budget,
            record_every,
            ..
        } => {
            let p = config.match_params.get_or_insert_with(Default::default);
            if let Some(v) = original {
                p.original = *v;
            }
            if let Some(v) = target {
                p.target = *v;
            }
            if let Some(v) = lr {
                p.learning_rate = *v;
            }
            if let Some(v) = max_iters {
                p.max_iters = *v;
            }
            p.loss_tol = tolerance(loss_tol, p.loss_tol, "loss-tol")?;
            p.cos_tol = tolerance(cos_tol, p.cos_tol, "cos-tol")?;
            if let Some(v) = perturb_budget {
                p.perturb_budget = Some(*v);
            }
            if let Some(v) = record_every {
                p.record_every = *v;
            }
        }
        Command::Interpolate {
            steps,
            frames_every,
            ..
        } => {
            let p = config.interpolate.get_or_insert_with(Default::default);
            if let Some(v) = steps {
                p.steps = *v;
            }
            if let Some(v) = frames_every {
                p.frames_every = Some(*v);
            }
        }
        Command::Walk {
            step_len,
            n_steps,
            drift_cap,
            rank_cut,
            mode,
            ..
        } => {
            let p = config.walk.get_or_insert_with(Default::default);
            if let Some(v) = step_len {
                p.step_len = *v;
            }
            if let Some(v) = n_steps {
                p.n_steps = *v;
            }
            if let Some(v) = drift_cap {
                p.drift_cap = Some(*v);
            }
            if let Some(v) = rank_cut {
                p.rank_cut = Some(*v);
            }
            if let Some(v) = mode {
                p.mode = v.clone();
            }
        }
    }
    Ok(())
}
