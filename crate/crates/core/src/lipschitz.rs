//! Local directional Lipschitz estimation: probe the model along a unit
//! direction on a symmetric grid of offsets and report the steepest pairwise
//! secant slope, plus the direction families the distribution experiments
//! compare (right singular vectors, raw Gaussians, null-projected Gaussians,
//! optimization-derived perturbations).

use rayon::prelude::*;

use crate::autodiff::{eval, Model};
use crate::error::{Error, Result};
use crate::rng::{gaussian, Rng};
use crate::spectral::JacobianSvd;
use crate::tensor::Tensor;

/// Default probe radius on the `[0,1]` pixel domain; small enough to stay
/// local, large enough that embedding differences dwarf f64 rounding.
pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_GRID_N: usize = 21;
/// Log-spaced histogram resolution.
pub const HIST_BINS: usize = 20;

/// One directional Lipschitz estimate: the steepest secant slope of
/// `t -> f(x0 + t d)` over all grid pairs with offsets in `[-eps, eps]`.
#[derive(Debug, Clone)]
pub struct LdlcEstimate {
    pub direction: Tensor,
    pub epsilon: f64,
    pub value: f64,
    pub argmax_alpha: f64,
    pub argmax_beta: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DirectionFamily {
    Singular,
    RandomGaussian,
    NullProjected,
    Optimized,
}

impl DirectionFamily {
    pub fn label(self) -> &'static str {
        match self {
            DirectionFamily::Singular => "singular",
            DirectionFamily::RandomGaussian => "random_gaussian",
            DirectionFamily::NullProjected => "null_projected",
            DirectionFamily::Optimized => "optimized",
        }
    }
}

/// Symmetric offset grid: `grid_n` uniform points in `[-eps, eps]` built so
/// that `t[i] == -t[grid_n-1-i]` exactly and 0 is a grid point.
pub fn symmetric_grid(epsilon: f64, grid_n: usize) -> Vec<f64> {
    let g = grid_n;
    let mut ts = vec![0.0; g];
    let denom = (g - 1) as f64;
    for i in 0..=(g / 2) {
        let u = epsilon * ((g - 1 - 2 * i) as f64) / denom;
        ts[i] = -u;
        ts[g - 1 - i] = u;
    }
    ts
}

/// Estimate the local directional Lipschitz constant along `direction`.
///
/// All `grid_n` forward passes are cached, then every pair of grid points
/// contributes the secant `||f_j - f_i|| / |t_j - t_i|`; restricting pairs
/// to at least one grid spacing apart keeps the ratio away from the regime
/// where both sides are rounding noise.
pub fn ldlc_estimate<M: Model>(
    model: &M,
    x0: &Tensor,
    direction: &Tensor,
    epsilon: f64,
    grid_n: usize,
) -> Result<LdlcEstimate> {
    if (direction.norm_l2() - 1.0).abs() > 1e-10 {
        return Err(Error::Config(format!(
            "direction must be unit length, got norm {}",
            direction.norm_l2()
        )));
    }
    if direction.len() != x0.len() {
        return Err(Error::dim(
            "ldlc_estimate",
            format!("direction length {} vs input {}", direction.len(), x0.len()),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
    }
    if grid_n < 3 || grid_n % 2 == 0 {
        return Err(Error::Config(format!(
            "grid_n must be odd and >= 3, got {grid_n}"
        )));
    }

    let step = direction.reshape(x0.shape())?;
    let ts = symmetric_grid(epsilon, grid_n);
    let mut embeddings = Vec::with_capacity(grid_n);
    for &t in &ts {
        let x = x0.add_scaled(&step, t)?;
        embeddings.push(eval(model, &x)?);
    }

    let mut value = 0.0f64;
    let mut argmax = (ts[0], ts[1]);
    for i in 0..grid_n {
        for j in (i + 1)..grid_n {
            let gap = ts[j] - ts[i];
            let diff = embeddings[j].sub(&embeddings[i])?.norm_l2();
            let slope = diff / gap;
            if slope > value {
                value = slope;
                argmax = (ts[i], ts[j]);
            }
        }
    }

    Ok(LdlcEstimate {
        direction: direction.clone(),
        epsilon,
        value,
        argmax_alpha: argmax.0,
        argmax_beta: argmax.1,
        n_samples: grid_n,
    })
}

/// Requested direction counts per family.
#[derive(Debug, Clone, Copy)]
pub struct DirectionCounts {
    pub singular: usize,
    pub random: usize,
    pub null: usize,
}

/// Build the probe directions: the leading right singular vectors, raw unit
/// Gaussians, and Gaussians projected into the null space. Degenerate null
/// projections are skipped and counted.
pub fn direction_suite(
    svd: &JacobianSvd,
    rng: &mut Rng,
    counts: DirectionCounts,
) -> Result<(Vec<(DirectionFamily, Tensor)>, usize)> {
    let n = svd.s.len();
    let m = svd.v.rows();
    if counts.singular > n {
        return Err(Error::Config(format!(
            "requested {} singular directions but only {} exist",
            counts.singular, n
        )));
    }
    let mut out = Vec::with_capacity(counts.singular + counts.random + counts.null);
    for c in 0..counts.singular {
        let col: Vec<f64> = (0..m).map(|i| svd.v.get2(i, c)).collect();
        out.push((
            DirectionFamily::Singular,
            Tensor::from_vec(&[m], col)?.normalized()?,
        ));
    }
    for _ in 0..counts.random {
        out.push((
            DirectionFamily::RandomGaussian,
            gaussian(rng, &[m]).normalized()?,
        ));
    }
    let mut skipped = 0usize;
    for _ in 0..counts.null {
        let draw = gaussian(rng, &[m]);
        match svd.project_null(&draw, None) {
            Ok(d) => out.push((DirectionFamily::NullProjected, d)),
            Err(Error::DegenerateDirection(_)) => skipped += 1,
            Err(other) => return Err(other),
        }
    }
    Ok((out, skipped))
}

#[derive(Debug, Clone, Copy)]
pub struct DistributionSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// All estimates of one direction family plus summary statistics and a
/// log10-spaced histogram.
#[derive(Debug, Clone)]
pub struct LdlcDistribution {
    pub family: DirectionFamily,
    pub estimates: Vec<LdlcEstimate>,
    pub summary: DistributionSummary,
    pub histogram: Vec<HistBin>,
}

/// Evaluate every direction (in parallel) and group the estimates by family
/// in fixed family order; deterministic given inputs.
pub fn ldlc_distribution<M: Model>(
    model: &M,
    x0: &Tensor,
    directions: &[(DirectionFamily, Tensor)],
    epsilon: f64,
    grid_n: usize,
) -> Result<Vec<LdlcDistribution>> {
    if directions.is_empty() {
        return Err(Error::Config("no directions supplied".to_string()));
    }
    let estimates: Vec<Result<LdlcEstimate>> = directions
        .par_iter()
        .map(|(_, d)| ldlc_estimate(model, x0, d, epsilon, grid_n))
        .collect();
    let mut per_family: Vec<(DirectionFamily, Vec<LdlcEstimate>)> = Vec::new();
    for ((family, _), est) in directions.iter().zip(estimates) {
        let est = est?;
        match per_family.iter_mut().find(|(f, _)| f == family) {
            Some((_, v)) => v.push(est),
            None => per_family.push((*family, vec![est])),
        }
    }
    per_family.sort_by_key(|(f, _)| *f);
    Ok(per_family
        .into_iter()
        .map(|(family, estimates)| {
            let summary = summarize(&estimates);
            let histogram = log_histogram(&estimates, HIST_BINS);
            LdlcDistribution {
                family,
                estimates,
                summary,
                histogram,
            }
        })
        .collect())
}

fn summarize(estimates: &[LdlcEstimate]) -> DistributionSummary {
    let mut values: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    DistributionSummary {
        min: values[0],
        median,
        max: values[n - 1],
        mean: values.iter().sum::<f64>() / n as f64,
    }
}

/// Log10-spaced bins over the positive values; zeros land in the first bin.
fn log_histogram(estimates: &[LdlcEstimate], bins: usize) -> Vec<HistBin> {
    let values: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let positive: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    if positive.is_empty() {
        return vec![HistBin {
            lo: 0.0,
            hi: 0.0,
            count: values.len(),
        }];
    }
    let lo = positive.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = positive.iter().cloned().fold(0.0f64, f64::max);
    if lo == hi {
        return vec![HistBin {
            lo,
            hi,
            count: values.len(),
        }];
    }
    let (l0, l1) = (lo.log10(), hi.log10());
    let mut out: Vec<HistBin> = (0..bins)
        .map(|i| HistBin {
            lo: 10f64.powf(l0 + (l1 - l0) * i as f64 / bins as f64),
            hi: 10f64.powf(l0 + (l1 - l0) * (i + 1) as f64 / bins as f64),
            count: 0,
        })
        .collect();
    for &v in &values {
        let idx = if v <= 0.0 {
            0
        } else {
            let frac = (v.log10() - l0) / (l1 - l0);
            ((frac * bins as f64) as usize).min(bins - 1)
        };
        out[idx].count += 1;
    }
    out
}
