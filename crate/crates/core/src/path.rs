//! Embedding evolution along input-space paths: straight-line interpolation
//! between two inputs, and null-space walks that travel far in pixel space
//! while the embedding barely moves, re-anchoring via short matching runs
//! when drift builds up.

use crate::autodiff::{eval, Model};
use crate::error::{Error, Result};
use crate::matcher::{match_embedding, MatchConfig};
use crate::rng::{gaussian, Rng};
use crate::spectral::{jacobian_at, svd_analysis};
use crate::tensor::{mean_abs_diff, Tensor};

/// `u . v / (||u|| ||v||)`.
pub fn cosine_similarity(u: &Tensor, v: &Tensor) -> Result<f64> {
    let nu = u.norm_l2();
    let nv = v.norm_l2();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateInput(
            "cosine similarity of zero vector".to_string(),
        ));
    }
    Ok((u.dot(v)? / (nu * nv)).clamp(-1.0, 1.0))
}

/// One sample of an interpolation trace.
#[derive(Debug, Clone, Copy)]
pub struct PathPoint {
    pub t: f64,
    pub cos_to_a: f64,
    pub cos_to_b: f64,
    pub dist_a: f64,
    pub dist_b: f64,
    pub mean_abs_delta: f64,
}

#[derive(Debug, Clone)]
pub struct PathTrace {
    pub points: Vec<PathPoint>,
}

/// Embeddings along the straight segment `x(t) = (1-t) xa + t xb`, sampled
/// at `steps + 1` uniform parameters. The endpoint weights are computed so
/// that swapping the endpoints mirrors the trace exactly.
pub fn interpolate_trace<M: Model>(
    model: &M,
    xa: &Tensor,
    xb: &Tensor,
    steps: usize,
) -> Result<PathTrace> {
    if xa.shape() != xb.shape() {
        return Err(Error::dim(
            "interpolate_trace",
            format!("{:?} vs {:?}", xa.shape(), xb.shape()),
        ));
    }
    if steps < 2 {
        return Err(Error::Config(format!("steps must be >= 2, got {steps}")));
    }
    let fa = eval(model, xa)?;
    let fb = eval(model, xb)?;
    let denom = steps as f64;
    let mut points = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let wa = (steps - k) as f64 / denom;
        let wb = k as f64 / denom;
        let data: Vec<f64> = xa
            .data()
            .iter()
            .zip(xb.data())
            .map(|(a, b)| wa * a + wb * b)
            .collect();
        let x = Tensor::from_vec(xa.shape(), data)?;
        let f = eval(model, &x)?;
        points.push(PathPoint {
            t: wb,
            cos_to_a: cosine_similarity(&f, &fa)?,
            cos_to_b: cosine_similarity(&f, &fb)?,
            dist_a: f.sub(&fa)?.norm_l2(),
            dist_b: f.sub(&fb)?.norm_l2(),
            mean_abs_delta: mean_abs_diff(&x, xa)?,
        });
    }
    Ok(PathTrace { points })
}

/// How walk directions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkMode {
    /// Fresh Gaussian per step: a diffusive wander in the null manifold.
    FreshRandom,
    /// Re-project the previous direction each step: straight-line
    /// accumulation, covering distance quickly.
    Persistent,
}

#[derive(Debug, Clone)]
pub struct WalkParams {
    pub step_len: f64,
    pub n_steps: usize,
    /// Singular directions removed before stepping; `None` uses the
    /// effective rank at each step.
    pub rank_cut: Option<usize>,
    /// Embedding drift (vs the start) above which a correction run fires.
    pub drift_cap: f64,
    pub mode: WalkMode,
    pub correction_lr: f64,
    pub correction_iters: usize,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            step_len: 0.5,
            n_steps: 50,
            rank_cut: None,
            drift_cap: 0.01,
            mode: WalkMode::FreshRandom,
            correction_lr: 0.01,
            correction_iters: 200,
        }
    }
}

/// One row of a walk trace; `reprojections` counts the correction runs up to
/// and including step `k`.
#[derive(Debug, Clone, Copy)]
pub struct WalkStep {
    pub k: usize,
    pub input_disp: f64,
    pub embed_drift: f64,
    pub reprojections: usize,
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct WalkTrace {
    pub steps: Vec<WalkStep>,
}

impl WalkTrace {
    pub fn last(&self) -> &WalkStep {
        self.steps.last().expect("trace always has the k=0 row")
    }
}

const MAX_DIRECTION_RESAMPLES: usize = 10;

/// Iterate: recompute the Jacobian SVD at the current point, step along a
/// unit null direction, clamp into `[0,1]`, and run a short matching
/// correction toward the starting embedding whenever drift exceeds the cap.
pub fn null_walk<M: Model>(
    model: &M,
    x0: &Tensor,
    params: &WalkParams,
    rng: &mut Rng,
) -> Result<WalkTrace> {
    if !(params.step_len > 0.0) {
        return Err(Error::Config(format!(
            "step_len must be > 0, got {}",
            params.step_len
        )));
    }
    if !(params.drift_cap > 0.0) {
        return Err(Error::Config(format!(
            "drift_cap must be > 0, got {}",
            params.drift_cap
        )));
    }
    let f0 = eval(model, x0)?;
    let correction_cfg = MatchConfig {
        learning_rate: params.correction_lr,
        max_iters: params.correction_iters,
        loss_tol: Some(0.5 * (0.5 * params.drift_cap).powi(2)),
        cos_tol: None,
        perturb_budget: None,
        record_every: params.correction_iters.max(1),
    };

    let mut steps = vec![WalkStep {
        k: 0,
        input_disp: 0.0,
        embed_drift: 0.0,
        reprojections: 0,
        clamped: false,
    }];
    let mut x = x0.clone();
    let mut prev_dir: Option<Tensor> = None;
    let mut reprojections = 0usize;

    for k in 1..=params.n_steps {
        let j = jacobian_at(model, &x)?;
        let svd = svd_analysis(&j, &x)?;
        let mut direction = None;
        for attempt in 0..MAX_DIRECTION_RESAMPLES {
            let candidate = match (&prev_dir, params.mode, attempt) {
                (Some(d), WalkMode::Persistent, 0) => d.clone(),
                _ => gaussian(rng, &[x.len()]).reshape(x.shape())?,
            };
            match svd.project_null(&candidate, params.rank_cut) {
                Ok(d) => {
                    direction = Some(d.reshape(x.shape())?);
                    break;
                }
                Err(Error::DegenerateDirection(_)) => continue,
                Err(other) => return Err(other),
            }
        }
        let Some(d) = direction else {
            return Err(Error::DegenerateDirection(format!(
                "walk step {}: no usable null direction after {} resamples",
                k, MAX_DIRECTION_RESAMPLES
            )));
        };

        let (stepped, n_clamped) = x.add_scaled(&d, params.step_len)?.clamp(0.0, 1.0);
        let mut next = stepped;
        let mut drift = eval(model, &next)?.sub(&f0)?.norm_l2();
        if drift > params.drift_cap {
            let (corrected, _) = match_embedding(model, &next, &f0, &correction_cfg)?;
            next = corrected;
            drift = eval(model, &next)?.sub(&f0)?.norm_l2();
            reprojections += 1;
        }
        steps.push(WalkStep {
            k,
            input_disp: next.sub(x0)?.norm_l2(),
            embed_drift: drift,
            reprojections,
            clamped: n_clamped > 0,
        });
        prev_dir = Some(d);
        x = next;
    }
    Ok(WalkTrace { steps })
}
