//! Embedding matching: gradient descent on the half-squared embedding
//! distance until an input's embedding matches a target embedding, with a
//! full per-step trace of loss, cosine similarity, and pixel drift.

use crate::autodiff::{record, Model};
use crate::error::{Error, Result};
use crate::path::cosine_similarity;
use crate::tensor::{max_abs_diff, mean_abs_diff, Tensor};

/// Gradient-descent settings for one matching run.
#[derive(Debug, Clone)]
pub struct MatchConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop when the loss falls to this value.
    pub loss_tol: Option<f64>,
    /// Stop when cosine similarity to the target reaches this value.
    pub cos_tol: Option<f64>,
    /// Abort (unconverged) when mean |x - x0| exceeds this budget.
    pub perturb_budget: Option<f64>,
    pub record_every: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            learning_rate: 0.05,
            max_iters: 5000,
            loss_tol: None,
            cos_tol: Some(0.99),
            perturb_budget: None,
            record_every: 10,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be >= 1".to_string()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be >= 1".to_string()));
        }
        if self.loss_tol.is_none() && self.cos_tol.is_none() {
            return Err(Error::Config(
                "at most one of loss_tol / cos_tol may be disabled".to_string(),
            ));
        }
        Ok(())
    }
}

/// One recorded step of a matching run.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub cosine: f64,
    pub mean_abs_delta: f64,
    pub max_abs_delta: f64,
    /// Gradient steps since the previous recorded row in which the domain
    /// clamp rewrote at least one pixel.
    pub clamped_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    CosTol,
    LossTol,
    PerturbBudget,
    MaxIters,
}

impl StopReason {
    pub fn label(self) -> &'static str {
        match self {
            StopReason::CosTol => "cos_tol",
            StopReason::LossTol => "loss_tol",
            StopReason::PerturbBudget => "perturb_budget",
            StopReason::MaxIters => "max_iters",
        }
    }
}

/// Full record of a matching run.
#[derive(Debug, Clone)]
pub struct MatchTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Total gradient steps in which the clamp rewrote at least one pixel.
    pub total_clamped_steps: usize,
}

/// Eq-4 style objective: `0.5 * ||f(x) - target||^2`.
pub fn match_loss<M: Model>(model: &M, x: &Tensor, target: &Tensor) -> Result<f64> {
    let y = crate::autodiff::eval(model, x)?;
    let r = y.sub(target)?;
    Ok(0.5 * r.dot(&r)?)
}

/// Gradient of [`match_loss`] at `x`: one reverse pass with the residual
/// `f(x) - target` as cotangent, which equals `J^T (f(x) - target)` exactly.
pub fn match_gradient<M: Model>(model: &M, x: &Tensor, target: &Tensor) -> Result<Tensor> {
    let (y, tape) = record(model, x)?;
    let r = y.sub(target)?;
    tape.vjp(&r)
}

/// Gradient descent `x <- clamp(x - lr * grad, 0, 1)` from `x0` until the
/// embedding matches `target` or a budget runs out. Deterministic.
pub fn match_embedding<M: Model>(
    model: &M,
    x0: &Tensor,
    target: &Tensor,
    cfg: &MatchConfig,
) -> Result<(Tensor, MatchTrace)> {
    cfg.validate()?;
    if target.norm_l2() == 0.0 {
        return Err(Error::DegenerateInput(
            "target embedding has zero norm".to_string(),
        ));
    }

    let mut x = x0.clone();
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut clamps_since_record = 0usize;
    let mut total_clamped_steps = 0usize;

    for iter in 0..=cfg.max_iters {
        let (y, tape) = record(model, &x)?;
        let resid = y.sub(target)?;
        let loss = 0.5 * resid.dot(&resid)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iter,
                trace: Box::new(MatchTrace {
                    rows,
                    converged: false,
                    stop_reason: StopReason::MaxIters,
                    total_clamped_steps,
                }),
            });
        }
        let cosine = cosine_similarity(&y, target)?;
        let mean_delta = mean_abs_diff(&x, x0)?;
        let max_delta = max_abs_diff(&x, x0)?;

        let row = TraceRow {
            iter,
            loss,
            cosine,
            mean_abs_delta: mean_delta,
            max_abs_delta: max_delta,
            clamped_steps: clamps_since_record,
        };

        let stop = if cfg.cos_tol.is_some_and(|t| cosine >= t) {
            Some((true, StopReason::CosTol))
        } else if cfg.loss_tol.is_some_and(|t| loss <= t) {
            Some((true, StopReason::LossTol))
        } else if cfg.perturb_budget.is_some_and(|b| mean_delta > b) {
            Some((false, StopReason::PerturbBudget))
        } else if iter == cfg.max_iters {
            Some((false, StopReason::MaxIters))
        } else {
            None
        };

        if iter % cfg.record_every == 0 || stop.is_some() {
            rows.push(row);
            clamps_since_record = 0;
        }

        if let Some((converged, stop_reason)) = stop {
            if converged {
                if let (StopReason::LossTol, Some(tol)) = (stop_reason, cfg.loss_tol) {
                    // algebraic link between the two convergence metrics
                    debug_assert!(
                        cosine >= 1.0 - tol * 2.0 / target.dot(target)?,
                        "loss-converged run violates the cosine bound"
                    );
                }
            }
            return Ok((
                x,
                MatchTrace {
                    rows,
                    converged,
                    stop_reason,
                    total_clamped_steps,
                },
            ));
        }

        let grad = tape.vjp(&resid)?;
        let stepped = x.add_scaled(&grad, -cfg.learning_rate)?;
        let (clamped, n_clamped) = stepped.clamp(0.0, 1.0);
        if n_clamped > 0 {
            clamps_since_record += 1;
            total_clamped_steps += 1;
        }
        x = clamped;
    }
    unreachable!("loop returns at iter == max_iters");
}

/// Pixel-difference report between an original and its matched counterpart.
/// `diff_image` is the signed difference centered at mid-gray and amplified
/// by `scale` (50 reproduces the usual visualization).
#[derive(Debug, Clone)]
pub struct PerturbationReport {
    pub mean_abs: f64,
    pub max_abs: f64,
    /// Infinity norm of the perturbation; identical to `max_abs`, kept under
    /// both names expected by downstream reports.
    pub linf: f64,
    pub diff_image: Tensor,
}

pub const DIFF_IMAGE_SCALE: f64 = 50.0;

pub fn perturbation_report(x0: &Tensor, x_star: &Tensor, scale: f64) -> Result<PerturbationReport> {
    let delta = x_star.sub(x0)?;
    let mean_abs = delta.mean_abs();
    let max_abs = delta.max_abs();
    let shifted = delta.scale(scale);
    let data = shifted.data().iter().map(|v| (0.5 + v).clamp(0.0, 1.0)).collect();
    let diff_image = Tensor::from_vec(x0.shape(), data)?;
    Ok(PerturbationReport {
        mean_abs,
        max_abs,
        linf: max_abs,
        diff_image,
    })
}
