//! Shared fixtures for the integration suites.

use atlas_core::autodiff::{Model, TensorOps};
use atlas_core::error::Result;
use atlas_core::rng::Rng;
use atlas_core::tensor::Tensor;
use atlas_core::vit::{init_weights, VitConfig, VitWeights};

/// f(x) = A x as a differentiable model over flat vectors.
pub struct LinearModel {
    pub a: Tensor,
}

impl Model for LinearModel {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        let m = self.a.cols();
        let n = self.a.rows();
        let a = ops.constant(&self.a);
        let col = ops.reshape(&x, &[m, 1])?;
        let y = ops.matmul(&a, &col)?;
        ops.reshape(&y, &[n])
    }
}

/// A small transformer (8x8x3 input, 4-dim embedding) that keeps gradient
/// loops fast in tests.
pub fn small_vit(seed: u64) -> (VitConfig, VitWeights) {
    let cfg = VitConfig {
        image_size: 8,
        channels: 3,
        patch_size: 4,
        d_model: 8,
        n_heads: 2,
        head_dim: 4,
        mlp_hidden: 16,
        n_layers: 1,
        embed_dim: 4,
    };
    let w = init_weights(&cfg, &mut Rng::new(seed)).unwrap();
    (cfg, w)
}

/// Max absolute deviation normalized by the largest reference entry.
pub fn scaled_max_error(got: &Tensor, want: &Tensor) -> f64 {
    let scale = want.max_abs().max(1e-12);
    got.data()
        .iter()
        .zip(want.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}
