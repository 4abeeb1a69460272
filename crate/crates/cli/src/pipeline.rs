//! Pipeline runner: validate everything up front (config consistency, file
//! existence, parseability, index bounds), then execute one experiment and
//! write its artifacts plus a manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use atlas_core::error::Error as CoreError;
use atlas_core::rng::Rng;
use atlas_core::synth::{generate, jitter_image, noise_image, PatternKind, PatternSpec};
use atlas_core::tensor::Tensor;
use atlas_core::vit::{init_weights, load_weights, Embedder, VitConfig, VitWeights};

use crate::config::{InputSpec, PipelineConfig, WeightsSpec};
use crate::experiments;
use crate::output::OutputSink;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    /// Bad configuration or unreadable/ill-formed referenced files,
    /// detected before any computation. Exit code 2.
    #[error("validation error: {0}")]
    Validation(String),
    /// Numeric failure during the experiment (divergence, non-convergence,
    /// degenerate geometry). Exit code 3.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Failure writing results. Exit code 4.
    #[error("i/o error: {0}")]
    Io(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Numeric(_) => 3,
            PipelineError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Validation(_) => "validation",
            PipelineError::Numeric(_) => "numeric",
            PipelineError::Io(_) => "io",
        }
    }
}

/// Map a core error that escaped validation onto the run-time categories.
pub fn numeric(err: CoreError) -> PipelineError {
    match err {
        CoreError::Io(e) => PipelineError::Io(e.to_string()),
        other => PipelineError::Numeric(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Spectrum,
    Ldlc,
    Match,
    Interpolate,
    Walk,
    Classify,
}

impl Experiment {
    pub fn parse(name: &str) -> Option<Experiment> {
        match name {
            "spectrum" => Some(Experiment::Spectrum),
            "ldlc" => Some(Experiment::Ldlc),
            "match" => Some(Experiment::Match),
            "interpolate" => Some(Experiment::Interpolate),
            "walk" => Some(Experiment::Walk),
            "classify" => Some(Experiment::Classify),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Experiment::Spectrum => "spectrum",
            Experiment::Ldlc => "ldlc",
            Experiment::Match => "match",
            Experiment::Interpolate => "interpolate",
            Experiment::Walk => "walk",
            Experiment::Classify => "classify",
        }
    }
}

/// Everything resolved and checked, ready to run.
pub struct ValidatedPipeline {
    pub experiment: Experiment,
    pub vit_config: VitConfig,
    pub weights: VitWeights,
    pub inputs: Vec<Tensor>,
    pub config: PipelineConfig,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl ValidatedPipeline {
    pub fn embedder(&self) -> Result<Embedder<'_>, PipelineError> {
        Embedder::new(&self.vit_config, &self.weights)
            .map_err(|e| PipelineError::Validation(e.to_string()))
    }
}

/// Resolve an input spec into an image tensor for the given model geometry.
pub fn load_input(spec: &InputSpec, cfg: &VitConfig) -> Result<Tensor, PipelineError> {
    let expect = [cfg.channels, cfg.image_size, cfg.image_size];
    let tensor = match spec {
        InputSpec::Ppm { ppm } => atlas_core::io::load_ppm(ppm)
            .map_err(|e| PipelineError::Validation(format!("{}: {e}", ppm.display())))?,
        InputSpec::Emat { emat } => atlas_core::io::load_emat(emat)
            .map_err(|e| PipelineError::Validation(format!("{}: {e}", emat.display())))?,
        InputSpec::Pattern { pattern } => {
            let kind = PatternKind::parse(&pattern.kind).ok_or_else(|| {
                PipelineError::Validation(format!(
                    "unknown pattern kind '{}' (expected stripes|checkers|disks)",
                    pattern.kind
                ))
            })?;
            let base = generate(
                &PatternSpec {
                    kind,
                    seed: pattern.seed,
                    frequency: pattern.frequency,
                },
                cfg.channels,
                cfg.image_size,
            );
            match &pattern.jitter {
                Some(j) => jitter_image(&base, j.seed, j.amplitude),
                None => base,
            }
        }
        InputSpec::Noise { noise } => noise_image(noise.seed, cfg.channels, cfg.image_size),
    };
    if tensor.shape() != expect {
        return Err(PipelineError::Validation(format!(
            "input has shape {:?}, model expects {:?}",
            tensor.shape(),
            expect
        )));
    }
    Ok(tensor)
}

/// Fail-fast validation: model config, weights source, every referenced
/// input, and the selected experiment's parameter block.
pub fn validate(
    config: &PipelineConfig,
    experiment: Experiment,
) -> Result<ValidatedPipeline, PipelineError> {
    let vit_config = config.model.config.resolve();
    vit_config
        .validate()
        .map_err(|e| PipelineError::Validation(e.to_string()))?;

    let weights = match &config.model.weights {
        WeightsSpec::Seed { seed } => init_weights(&vit_config, &mut Rng::new(*seed))
            .map_err(|e| PipelineError::Validation(e.to_string()))?,
        WeightsSpec::File { file } => {
            let (stored_cfg, w) = load_weights(file)
                .map_err(|e| PipelineError::Validation(format!("{}: {e}", file.display())))?;
            if stored_cfg != vit_config {
                return Err(PipelineError::Validation(format!(
                    "weights file {} was built for a different model configuration",
                    file.display()
                )));
            }
            w
        }
    };

    let mut warnings = Vec::new();
    let mut inputs = Vec::with_capacity(config.inputs.len());
    for (i, spec) in config.inputs.iter().enumerate() {
        let t = load_input(spec, &vit_config)?;
        if t.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            warnings.push(format!("input {i} has pixel values outside [0,1]"));
        }
        inputs.push(t);
    }

    let need_inputs = |n: usize, what: &str| -> Result<(), PipelineError> {
        if inputs.len() < n {
            return Err(PipelineError::Validation(format!(
                "{} experiment needs at least {} input(s), config lists {}",
                what,
                n,
                inputs.len()
            )));
        }
        Ok(())
    };
    let in_range = |idx: usize, what: &str| -> Result<(), PipelineError> {
        if idx >= inputs.len() {
            return Err(PipelineError::Validation(format!(
                "{} references input {} but only {} are listed",
                what,
                idx,
                inputs.len()
            )));
        }
        Ok(())
    };

    match experiment {
        Experiment::Spectrum => need_inputs(1, "spectrum")?,
        Experiment::Ldlc => {
            let p = config.ldlc.clone().unwrap_or_default();
            need_inputs(1, "ldlc")?;
            in_range(p.anchor, "ldlc.anchor")?;
            if p.grid_n < 3 || p.grid_n % 2 == 0 {
                return Err(PipelineError::Validation(format!(
                    "ldlc.grid_n must be odd and >= 3, got {}",
                    p.grid_n
                )));
            }
            if !(p.epsilon > 0.0) {
                return Err(PipelineError::Validation("ldlc.epsilon must be > 0".into()));
            }
            if p.singular > vit_config.embed_dim {
                return Err(PipelineError::Validation(format!(
                    "ldlc.singular {} exceeds embed_dim {}",
                    p.singular, vit_config.embed_dim
                )));
            }
        }
        Experiment::Match => {
            let p = config.match_params.clone().unwrap_or_default();
            need_inputs(2, "match")?;
            in_range(p.original, "match.original")?;
            in_range(p.target, "match.target")?;
            if p.loss_tol.is_none() && p.cos_tol.is_none() {
                return Err(PipelineError::Validation(
                    "match: at most one of loss_tol / cos_tol may be disabled".into(),
                ));
            }
        }
        Experiment::Interpolate => {
            let p = config.interpolate.clone().unwrap_or_default();
            need_inputs(2, "interpolate")?;
            in_range(p.a, "interpolate.a")?;
            in_range(p.b, "interpolate.b")?;
            if p.steps < 2 {
                return Err(PipelineError::Validation("interpolate.steps must be >= 2".into()));
            }
        }
        Experiment::Walk => {
            let p = config.walk.clone().unwrap_or_default();
            need_inputs(1, "walk")?;
            in_range(p.input, "walk.input")?;
            if crate::experiments::walk::parse_mode(&p.mode).is_none() {
                return Err(PipelineError::Validation(format!(
                    "walk.mode must be \"fresh\" or \"persistent\", got \"{}\"",
                    p.mode
                )));
            }
        }
        Experiment::Classify => {
            let p = config.classify.clone().ok_or_else(|| {
                PipelineError::Validation("classify experiment needs a classify block".into())
            })?;
            if p.classes.len() < 2 {
                return Err(PipelineError::Validation(
                    "classify needs at least 2 classes".into(),
                ));
            }
            for class in &p.classes {
                if class.inputs.is_empty() {
                    return Err(PipelineError::Validation(format!(
                        "class '{}' has no inputs",
                        class.label
                    )));
                }
                for spec in &class.inputs {
                    load_input(spec, &vit_config)?;
                }
            }
            for spec in &p.queries {
                load_input(spec, &vit_config)?;
            }
            if let Some(flip) = &p.flip {
                for (i, pair) in flip.pairs.iter().enumerate() {
                    if pair.query >= p.queries.len() {
                        return Err(PipelineError::Validation(format!(
                            "flip pair {i} references query {} of {}",
                            pair.query,
                            p.queries.len()
                        )));
                    }
                    if pair.target_class >= p.classes.len() {
                        return Err(PipelineError::Validation(format!(
                            "flip pair {i} references class {} of {}",
                            pair.target_class,
                            p.classes.len()
                        )));
                    }
                    if pair.target_exemplar >= p.classes[pair.target_class].inputs.len() {
                        return Err(PipelineError::Validation(format!(
                            "flip pair {i} exemplar index out of range"
                        )));
                    }
                }
            }
        }
    }

    Ok(ValidatedPipeline {
        experiment,
        vit_config,
        weights,
        inputs,
        config: config.clone(),
        seed: config.seed,
        warnings,
    })
}

/// Run one experiment end to end; returns the manifest path.
pub fn run_pipeline(
    config: &PipelineConfig,
    experiment: Experiment,
    out_dir: &Path,
) -> Result<PathBuf, PipelineError> {
    let started = Instant::now();
    let validated = validate(config, experiment)?;
    let mut sink = OutputSink::new(out_dir)?;

    match experiment {
        Experiment::Spectrum => experiments::spectrum::run(&validated, &mut sink)?,
        Experiment::Ldlc => experiments::ldlc::run(&validated, &mut sink)?,
        Experiment::Match => experiments::matching::run(&validated, &mut sink)?,
        Experiment::Interpolate => experiments::interpolate::run(&validated, &mut sink)?,
        Experiment::Walk => experiments::walk::run(&validated, &mut sink)?,
        Experiment::Classify => experiments::classify::run(&validated, &mut sink)?,
    }

    let (weights_seed, weights_file) = match &config.model.weights {
        WeightsSpec::Seed { seed } => (Some(*seed), None),
        WeightsSpec::File { file } => (None, Some(file.display().to_string())),
    };
    let manifest = serde_json::json!({
        "experiment": experiment.label(),
        "seeds": {
            "weights_seed": weights_seed,
            "weights_file": weights_file,
            "master_seed": validated.seed,
        },
        "config": serde_json::to_value(config)
            .map_err(|e| PipelineError::Io(e.to_string()))?,
        "artifacts": sink.artifacts(),
        "warnings": validated.warnings,
        "wall_time_ms": started.elapsed().as_millis() as u64,
    });
    let path = out_dir.join("manifest.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).map_err(|e| PipelineError::Io(e.to_string()))?,
    )
    .map_err(|e| PipelineError::Io(format!("writing manifest: {e}")))?;
    Ok(path)
}
