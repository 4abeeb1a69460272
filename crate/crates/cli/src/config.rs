//! JSON pipeline configuration: model, inputs, and per-experiment parameter
//! blocks. Every omitted field falls back to the documented default, so a
//! minimal config is just a model seed and an input list.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use atlas_core::vit::VitConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub inputs: Vec<InputSpec>,
    /// Optional experiment name; the CLI subcommand takes precedence.
    #[serde(default)]
    pub experiment: Option<String>,
    /// Master seed for experiment-level randomness (direction draws, walk
    /// steps, generated targets). Distinct from the weights seed.
    #[serde(default = "default_master_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub spectrum: Option<SpectrumParams>,
    #[serde(default)]
    pub ldlc: Option<LdlcParams>,
    #[serde(default, rename = "match")]
    pub match_params: Option<MatchParams>,
    #[serde(default)]
    pub interpolate: Option<InterpolateParams>,
    #[serde(default)]
    pub walk: Option<WalkParams>,
    #[serde(default)]
    pub classify: Option<ClassifyParams>,
}

fn default_master_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub config: VitConfigSpec,
    pub weights: WeightsSpec,
}

/// Either a seed for deterministic initialization or an EVIT weights file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsSpec {
    Seed { seed: u64 },
    File { file: PathBuf },
}

/// Model hyperparameters; omitted fields use the reference desk-scale
/// configuration (32x32x3 input, 16-dim embedding).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VitConfigSpec {
    pub image_size: Option<usize>,
    pub channels: Option<usize>,
    pub patch_size: Option<usize>,
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub head_dim: Option<usize>,
    pub mlp_hidden: Option<usize>,
    pub n_layers: Option<usize>,
    pub embed_dim: Option<usize>,
}

impl VitConfigSpec {
    pub fn resolve(&self) -> VitConfig {
        let r = VitConfig::reference();
        VitConfig {
            image_size: self.image_size.unwrap_or(r.image_size),
            channels: self.channels.unwrap_or(r.channels),
            patch_size: self.patch_size.unwrap_or(r.patch_size),
            d_model: self.d_model.unwrap_or(r.d_model),
            n_heads: self.n_heads.unwrap_or(r.n_heads),
            head_dim: self.head_dim.unwrap_or(r.head_dim),
            mlp_hidden: self.mlp_hidden.unwrap_or(r.mlp_hidden),
            n_layers: self.n_layers.unwrap_or(r.n_layers),
            embed_dim: self.embed_dim.unwrap_or(r.embed_dim),
        }
    }
}

/// An image source: a PPM or EMAT file, a seeded geometric pattern, or
/// seeded uniform noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    Ppm { ppm: PathBuf },
    Emat { emat: PathBuf },
    Pattern { pattern: PatternParams },
    Noise { noise: NoiseParams },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternParams {
    /// "stripes", "checkers", or "disks".
    pub kind: String,
    pub seed: u64,
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    /// Optional uniform jitter applied on top of the base pattern.
    #[serde(default)]
    pub jitter: Option<JitterParams>,
}

fn default_frequency() -> f64 {
    4.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterParams {
    pub seed: u64,
    #[serde(default = "default_jitter_amplitude")]
    pub amplitude: f64,
}

fn default_jitter_amplitude() -> f64 {
    0.02
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumParams {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdlcParams {
    pub anchor: usize,
    pub epsilon: f64,
    pub grid_n: usize,
    pub singular: usize,
    pub random: usize,
    pub null: usize,
    /// Directions taken from embedding-matching perturbations against
    /// seeded noise targets.
    pub optimized: usize,
    pub match_learning_rate: f64,
    pub match_max_iters: usize,
    pub match_cos_tol: f64,
}

impl Default for LdlcParams {
    fn default() -> Self {
        LdlcParams {
            anchor: 0,
            epsilon: atlas_core::lipschitz::DEFAULT_EPSILON,
            grid_n: atlas_core::lipschitz::DEFAULT_GRID_N,
            singular: 5,
            random: 200,
            null: 200,
            optimized: 0,
            match_learning_rate: 0.05,
            match_max_iters: 1500,
            match_cos_tol: 0.99,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    /// Index of the original input.
    pub original: usize,
    /// Index of the input whose embedding is matched.
    pub target: usize,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub loss_tol: Option<f64>,
    pub cos_tol: Option<f64>,
    pub perturb_budget: Option<f64>,
    pub record_every: usize,
    pub diff_scale: f64,
    pub save_images: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            original: 0,
            target: 1,
            learning_rate: 0.05,
            max_iters: 5000,
            loss_tol: None,
            cos_tol: Some(0.99),
            perturb_budget: None,
            record_every: 1,
            diff_scale: atlas_core::matcher::DIFF_IMAGE_SCALE,
            save_images: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpolateParams {
    pub a: usize,
    pub b: usize,
    pub steps: usize,
    /// Dump every n-th interpolated frame as a PPM.
    pub frames_every: Option<usize>,
}

impl Default for InterpolateParams {
    fn default() -> Self {
        InterpolateParams {
            a: 0,
            b: 1,
            steps: 100,
            frames_every: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkParams {
    pub input: usize,
    pub step_len: f64,
    pub n_steps: usize,
    pub rank_cut: Option<usize>,
    /// Absolute embedding-drift cap; when absent the cap is
    /// `drift_cap_rel_sigma * sigma_max` at the starting point.
    pub drift_cap: Option<f64>,
    pub drift_cap_rel_sigma: f64,
    /// "fresh" or "persistent".
    pub mode: String,
    pub correction_learning_rate: f64,
    pub correction_iters: usize,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            input: 0,
            step_len: 0.5,
            n_steps: 50,
            rank_cut: None,
            drift_cap: None,
            drift_cap_rel_sigma: 0.005,
            mode: "fresh".to_string(),
            correction_learning_rate: 0.01,
            correction_iters: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyParams {
    pub classes: Vec<ClassSpec>,
    #[serde(default)]
    pub queries: Vec<InputSpec>,
    #[serde(default)]
    pub flip: Option<FlipSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub label: String,
    pub inputs: Vec<InputSpec>,
}

/// The classification-flip protocol: match each listed query toward the
/// embedding of another class's exemplar, then classify both versions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipSpec {
    pub pairs: Vec<FlipPair>,
    #[serde(default = "default_flip_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_flip_iters")]
    pub max_iters: usize,
    #[serde(default = "default_flip_cos_tol")]
    pub cos_tol: f64,
}

fn default_flip_lr() -> f64 {
    0.05
}
fn default_flip_iters() -> usize {
    5000
}
fn default_flip_cos_tol() -> f64 {
    0.99
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipPair {
    /// Index into `queries`.
    pub query: usize,
    /// Index into `classes`.
    pub target_class: usize,
    /// Index into the target class's inputs.
    #[serde(default)]
    pub target_exemplar: usize,
}
