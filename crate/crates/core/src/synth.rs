//! Seeded synthetic image classes (stripes, checkers, disks) so every
//! experiment runs without external data, plus uniform-noise images and a
//! small jitter helper for building class variants.

use crate::rng::{uniform, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Stripes,
    Checkers,
    Disks,
}

impl PatternKind {
    pub fn label(self) -> &'static str {
        match self {
            PatternKind::Stripes => "stripes",
            PatternKind::Checkers => "checkers",
            PatternKind::Disks => "disks",
        }
    }

    pub fn parse(s: &str) -> Option<PatternKind> {
        match s {
            "stripes" => Some(PatternKind::Stripes),
            "checkers" => Some(PatternKind::Checkers),
            "disks" => Some(PatternKind::Disks),
            _ => None,
        }
    }
}

/// A deterministic pattern: the seed picks orientation, phase, and channel
/// tints; the frequency sets the cycle count across the image.
#[derive(Debug, Clone, Copy)]
pub struct PatternSpec {
    pub kind: PatternKind,
    pub seed: u64,
    pub frequency: f64,
}

/// Render a `[channels, size, size]` image in `[0,1]`.
pub fn generate(spec: &PatternSpec, channels: usize, size: usize) -> Tensor {
    let mut rng = Rng::with_stream(spec.seed, 0xA17);
    let angle = rng.next_f64() * std::f64::consts::TAU;
    let phase = rng.next_f64() * std::f64::consts::TAU;
    let tints: Vec<f64> = (0..channels).map(|_| 0.6 + 0.4 * rng.next_f64()).collect();
    let offsets: Vec<f64> = (0..channels).map(|_| rng.next_f64()).collect();

    let mut img = Tensor::zeros(&[channels, size, size]);
    let f = spec.frequency;
    let s = size as f64;
    for c in 0..channels {
        for y in 0..size {
            for x in 0..size {
                let u = x as f64 / s;
                let v = y as f64 / s;
                let value = match spec.kind {
                    PatternKind::Stripes => {
                        let proj = u * angle.cos() + v * angle.sin();
                        0.5 + 0.45
                            * (std::f64::consts::TAU * f * proj
                                + phase
                                + offsets[c] * std::f64::consts::TAU)
                                .sin()
                    }
                    PatternKind::Checkers => {
                        let cell = ((u * f + offsets[c] * 0.25).floor()
                            + (v * f + phase / std::f64::consts::TAU).floor())
                            as i64;
                        if cell.rem_euclid(2) == 0 {
                            0.9
                        } else {
                            0.1
                        }
                    }
                    PatternKind::Disks => {
                        // grid of disks, radius a fixed fraction of the cell
                        let gu = (u * f + offsets[c] * 0.3).fract();
                        let gv = (v * f + phase / std::f64::consts::TAU).fract();
                        let du = gu - 0.5;
                        let dv = gv - 0.5;
                        if (du * du + dv * dv).sqrt() < 0.3 {
                            0.85
                        } else {
                            0.15
                        }
                    }
                };
                img.data_mut()[c * size * size + y * size + x] =
                    (value * tints[c]).clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Uniform random image in `[0,1]`.
pub fn noise_image(seed: u64, channels: usize, size: usize) -> Tensor {
    uniform(&mut Rng::with_stream(seed, 0xB0), &[channels, size, size], 0.0, 1.0)
}

/// Base image plus uniform noise of the given amplitude, clamped to `[0,1]`.
pub fn jitter_image(base: &Tensor, seed: u64, amplitude: f64) -> Tensor {
    let noise = uniform(
        &mut Rng::with_stream(seed, 0xC1),
        base.shape(),
        -amplitude,
        amplitude,
    );
    base.add_scaled(&noise, 1.0)
        .expect("same shape by construction")
        .clamp(0.0, 1.0)
        .0
}
