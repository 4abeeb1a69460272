//! Desk-scale vision transformer: patchify, multi-head self-attention,
//! post-norm LN -> ReLU-MLP -> LN blocks, mean pooling, and a final linear
//! projection onto the embedding.
//!
//! The forward pass is written once against [`TensorOps`], so the same
//! definition runs eagerly, records onto a tape for exact differentiation,
//! or feeds the finite-difference oracle.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::autodiff::{self, Model, TensorOps};
use crate::error::{Error, Result};
use crate::io::{read_emat, write_emat};
use crate::rng::{gaussian, Rng};
use crate::tensor::Tensor;

/// Hyperparameters of the toy transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VitConfig {
    /// Pixels per image side.
    pub image_size: usize,
    pub channels: usize,
    /// Side length of the square non-overlapping patches.
    pub patch_size: usize,
    /// Token width d.
    pub d_model: usize,
    /// Attention heads H.
    pub n_heads: usize,
    /// Per-head width k; H * k must equal d.
    pub head_dim: usize,
    /// Hidden width of the ReLU MLP.
    pub mlp_hidden: usize,
    pub n_layers: usize,
    /// Output embedding width n; must stay below the input dimension.
    pub embed_dim: usize,
}

impl VitConfig {
    /// The desk-scale configuration every seeded experiment runs on:
    /// 32x32x3 input (m = 3072) mapped to a 16-dimensional embedding.
    pub fn reference() -> VitConfig {
        VitConfig {
            image_size: 32,
            channels: 3,
            patch_size: 8,
            d_model: 32,
            n_heads: 4,
            head_dim: 8,
            mlp_hidden: 64,
            n_layers: 2,
            embed_dim: 16,
        }
    }

    pub fn n_patches(&self) -> usize {
        let per_side = self.image_size / self.patch_size;
        per_side * per_side
    }

    /// Flattened patch width: patch_size^2 * channels.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Input dimension m = channels * image_size^2.
    pub fn input_dim(&self) -> usize {
        self.channels * self.image_size * self.image_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0
            || self.channels == 0
            || self.patch_size == 0
            || self.d_model == 0
            || self.n_heads == 0
            || self.head_dim == 0
            || self.mlp_hidden == 0
            || self.n_layers == 0
            || self.embed_dim == 0
        {
            return Err(Error::Config("all dimensions must be positive".to_string()));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.n_heads * self.head_dim != self.d_model {
            return Err(Error::Config(format!(
                "n_heads {} * head_dim {} != d_model {}",
                self.n_heads, self.head_dim, self.d_model
            )));
        }
        if self.embed_dim >= self.input_dim() {
            return Err(Error::Config(format!(
                "embed_dim {} must be below the input dimension {}",
                self.embed_dim,
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Per-layer parameters: per-head projections, head mixing, the two layer
/// norms, and the MLP.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    /// Per head, d x k.
    pub w_q: Vec<Tensor>,
    pub w_k: Vec<Tensor>,
    pub w_v: Vec<Tensor>,
    /// Per head, k x d.
    pub w_c: Vec<Tensor>,
    pub gamma1: Tensor,
    pub beta1: Tensor,
    pub gamma2: Tensor,
    pub beta2: Tensor,
    /// d x mlp_hidden.
    pub w1: Tensor,
    /// mlp_hidden x d.
    pub w2: Tensor,
}

/// All parameters of the toy transformer.
#[derive(Debug, Clone)]
pub struct VitWeights {
    /// patch_dim x d_model.
    pub patch_proj: Tensor,
    /// n_patches x d_model positional encodings.
    pub pos: Tensor,
    pub layers: Vec<LayerWeights>,
    /// d_model x embed_dim.
    pub embed_proj: Tensor,
}

/// Gaussian init scaled by 1/sqrt(fan_in) per matrix; layer-norm affines
/// start at identity. The generation order is fixed and matches the EVIT
/// serialization order, so a seed pins every parameter.
pub fn init_weights(config: &VitConfig, rng: &mut Rng) -> Result<VitWeights> {
    config.validate()?;
    let d = config.d_model;
    let k = config.head_dim;
    let scaled = |rng: &mut Rng, shape: &[usize], fan_in: usize| {
        gaussian(rng, shape).scale(1.0 / (fan_in as f64).sqrt())
    };

    let patch_proj = scaled(rng, &[config.patch_dim(), d], config.patch_dim());
    let pos = scaled(rng, &[config.n_patches(), d], d);
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        let mut w_q = Vec::with_capacity(config.n_heads);
        let mut w_k = Vec::with_capacity(config.n_heads);
        let mut w_v = Vec::with_capacity(config.n_heads);
        for _ in 0..config.n_heads {
            w_q.push(scaled(rng, &[d, k], d));
            w_k.push(scaled(rng, &[d, k], d));
            w_v.push(scaled(rng, &[d, k], d));
        }
        let mut w_c = Vec::with_capacity(config.n_heads);
        for _ in 0..config.n_heads {
            w_c.push(scaled(rng, &[k, d], k));
        }
        layers.push(LayerWeights {
            w_q,
            w_k,
            w_v,
            w_c,
            gamma1: Tensor::from_vec(&[d], vec![1.0; d])?,
            beta1: Tensor::zeros(&[d]),
            gamma2: Tensor::from_vec(&[d], vec![1.0; d])?,
            beta2: Tensor::zeros(&[d]),
            w1: scaled(rng, &[d, config.mlp_hidden], d),
            w2: scaled(rng, &[config.mlp_hidden, d], config.mlp_hidden),
        });
    }
    let embed_proj = scaled(rng, &[d, config.embed_dim], d);
    Ok(VitWeights {
        patch_proj,
        pos,
        layers,
        embed_proj,
    })
}

/// Index map realizing patch extraction as a gather: row p of the patch
/// matrix is the p-th patch (row-major patch order) flattened channel-major.
pub fn patch_index_map(config: &VitConfig) -> Vec<usize> {
    let s = config.image_size;
    let p = config.patch_size;
    let per_side = s / p;
    let mut idx = Vec::with_capacity(config.n_patches() * config.patch_dim());
    for pr in 0..per_side {
        for pc in 0..per_side {
            for c in 0..config.channels {
                for y in 0..p {
                    for x in 0..p {
                        idx.push(c * s * s + (pr * p + y) * s + (pc * p + x));
                    }
                }
            }
        }
    }
    idx
}

/// The input -> embedding map f: R^m -> R^n as a differentiable [`Model`].
pub struct Embedder<'a> {
    config: &'a VitConfig,
    weights: &'a VitWeights,
    patch_idx: Arc<Vec<usize>>,
}

impl<'a> Embedder<'a> {
    pub fn new(config: &'a VitConfig, weights: &'a VitWeights) -> Result<Embedder<'a>> {
        config.validate()?;
        check_weight_shapes(config, weights)?;
        Ok(Embedder {
            config,
            weights,
            patch_idx: Arc::new(patch_index_map(config)),
        })
    }

    pub fn config(&self) -> &VitConfig {
        self.config
    }
}

impl Model for Embedder<'_> {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        let cfg = self.config;
        let w = self.weights;
        let patches = ops.gather(&x, &self.patch_idx, &[cfg.n_patches(), cfg.patch_dim()])?;
        let wp = ops.constant(&w.patch_proj);
        let projected = ops.matmul(&patches, &wp)?;
        let pos = ops.constant(&w.pos);
        let mut tokens = ops.add(&projected, &pos)?;
        for layer in &w.layers {
            tokens = attention_block_ops(ops, &tokens, layer, cfg)?;
        }
        let pooled = ops.mean_rows(&tokens)?;
        let row = ops.reshape(&pooled, &[1, cfg.d_model])?;
        let we = ops.constant(&w.embed_proj);
        let emb = ops.matmul(&row, &we)?;
        ops.reshape(&emb, &[cfg.embed_dim])
    }
}

/// One transformer block on a `[n_patches, d]` token matrix: multi-head
/// attention, residual + LN, ReLU MLP, residual + LN.
fn attention_block_ops<O: TensorOps>(
    ops: &mut O,
    x: &O::Value,
    layer: &LayerWeights,
    cfg: &VitConfig,
) -> Result<O::Value> {
    let inv_sqrt_k = 1.0 / (cfg.head_dim as f64).sqrt();
    let mut mixed_sum: Option<O::Value> = None;
    for h in 0..cfg.n_heads {
        let wq = ops.constant(&layer.w_q[h]);
        let wk = ops.constant(&layer.w_k[h]);
        let wv = ops.constant(&layer.w_v[h]);
        let q = ops.matmul(x, &wq)?;
        let kmat = ops.matmul(x, &wk)?;
        let v = ops.matmul(x, &wv)?;
        let kt = ops.transpose(&kmat)?;
        let logits_raw = ops.matmul(&q, &kt)?;
        let logits = ops.scale(&logits_raw, inv_sqrt_k)?;
        let alpha = ops.softmax_rows(&logits)?;
        let ctx = ops.matmul(&alpha, &v)?;
        let wc = ops.constant(&layer.w_c[h]);
        let mixed = ops.matmul(&ctx, &wc)?;
        mixed_sum = Some(match mixed_sum {
            None => mixed,
            Some(acc) => ops.add(&acc, &mixed)?,
        });
    }
    let attn = mixed_sum.expect("n_heads >= 1 validated");
    let res1 = ops.add(x, &attn)?;
    let gamma1 = ops.constant(&layer.gamma1);
    let beta1 = ops.constant(&layer.beta1);
    let u = ops.layer_norm(&res1, &gamma1, &beta1)?;
    let w1 = ops.constant(&layer.w1);
    let w2 = ops.constant(&layer.w2);
    let pre = ops.matmul(&u, &w1)?;
    let hidden = ops.relu(&pre)?;
    let mlp = ops.matmul(&hidden, &w2)?;
    let res2 = ops.add(&u, &mlp)?;
    let gamma2 = ops.constant(&layer.gamma2);
    let beta2 = ops.constant(&layer.beta2);
    ops.layer_norm(&res2, &gamma2, &beta2)
}

/// Eager single-block forward, for direct inspection and testing.
pub fn attention_block(x: &Tensor, layer: &LayerWeights, cfg: &VitConfig) -> Result<Tensor> {
    let mut ops = crate::autodiff::Eval::default();
    attention_block_ops(&mut ops, x, layer, cfg)
}

/// Per-head attention weight matrices of one block at `x`, each row-stochastic.
pub fn attention_weights(x: &Tensor, layer: &LayerWeights, cfg: &VitConfig) -> Result<Vec<Tensor>> {
    let inv_sqrt_k = 1.0 / (cfg.head_dim as f64).sqrt();
    let mut out = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let q = x.matmul(&layer.w_q[h])?;
        let k = x.matmul(&layer.w_k[h])?;
        let logits = q.matmul(&k.transpose()?)?.scale(inv_sqrt_k);
        out.push(logits.softmax_rows()?);
    }
    Ok(out)
}

/// Patch embedding stage alone: gather patches, project, add positions.
pub fn patchify(image: &Tensor, weights: &VitWeights, config: &VitConfig) -> Result<Tensor> {
    if image.shape() != [config.channels, config.image_size, config.image_size] {
        return Err(Error::dim(
            "patchify",
            format!(
                "image {:?} vs config [{}, {}, {}]",
                image.shape(),
                config.channels,
                config.image_size,
                config.image_size
            ),
        ));
    }
    let idx = patch_index_map(config);
    let patches = image.gather(&idx, &[config.n_patches(), config.patch_dim()])?;
    patches.matmul(&weights.patch_proj)?.add(&weights.pos)
}

/// Full embedding f(image): patchify, n_layers blocks, mean-pool, project.
/// Not length-normalized.
pub fn embed(image: &Tensor, weights: &VitWeights, config: &VitConfig) -> Result<Tensor> {
    let embedder = Embedder::new(config, weights)?;
    if image.shape() != [config.channels, config.image_size, config.image_size] {
        return Err(Error::dim(
            "embed",
            format!("image shape {:?} does not match config", image.shape()),
        ));
    }
    autodiff::eval(&embedder, image)
}

fn check_weight_shapes(cfg: &VitConfig, w: &VitWeights) -> Result<()> {
    let d = cfg.d_model;
    let k = cfg.head_dim;
    let expect = |name: &str, t: &Tensor, shape: &[usize]| -> Result<()> {
        if t.shape() != shape {
            return Err(Error::dim(
                "weights",
                format!("{} has shape {:?}, expected {:?}", name, t.shape(), shape),
            ));
        }
        if !t.is_finite() {
            return Err(Error::Numeric {
                op: "weights",
                detail: format!("{} contains non-finite entries", name),
            });
        }
        Ok(())
    };
    expect("patch_proj", &w.patch_proj, &[cfg.patch_dim(), d])?;
    expect("pos", &w.pos, &[cfg.n_patches(), d])?;
    if w.layers.len() != cfg.n_layers {
        return Err(Error::dim(
            "weights",
            format!("{} layers, expected {}", w.layers.len(), cfg.n_layers),
        ));
    }
    for (i, layer) in w.layers.iter().enumerate() {
        if layer.w_q.len() != cfg.n_heads
            || layer.w_k.len() != cfg.n_heads
            || layer.w_v.len() != cfg.n_heads
            || layer.w_c.len() != cfg.n_heads
        {
            return Err(Error::dim(
                "weights",
                format!("layer {} head count mismatch", i),
            ));
        }
        for h in 0..cfg.n_heads {
            expect("w_q", &layer.w_q[h], &[d, k])?;
            expect("w_k", &layer.w_k[h], &[d, k])?;
            expect("w_v", &layer.w_v[h], &[d, k])?;
            expect("w_c", &layer.w_c[h], &[k, d])?;
        }
        expect("gamma1", &layer.gamma1, &[d])?;
        expect("beta1", &layer.beta1, &[d])?;
        expect("gamma2", &layer.gamma2, &[d])?;
        expect("beta2", &layer.beta2, &[d])?;
        expect("w1", &layer.w1, &[d, cfg.mlp_hidden])?;
        expect("w2", &layer.w2, &[cfg.mlp_hidden, d])?;
    }
    expect("embed_proj", &w.embed_proj, &[d, cfg.embed_dim])
}

// ── EVIT weights file ───────────────────────────────────────────────

const EVIT_MAGIC: &[u8; 4] = b"EVIT";
const EVIT_VERSION: u32 = 1;

/// Write config (u32 fields in declaration order, n_patches included) and
/// every weight tensor as consecutive EMAT records in initialization order.
pub fn write_weights<W: Write>(w: &mut W, cfg: &VitConfig, weights: &VitWeights) -> Result<()> {
    w.write_all(EVIT_MAGIC)?;
    w.write_all(&EVIT_VERSION.to_le_bytes())?;
    for field in [
        cfg.image_size,
        cfg.channels,
        cfg.patch_size,
        cfg.n_patches(),
        cfg.d_model,
        cfg.n_heads,
        cfg.head_dim,
        cfg.mlp_hidden,
        cfg.n_layers,
        cfg.embed_dim,
    ] {
        w.write_all(&(field as u32).to_le_bytes())?;
    }
    for t in weight_order(weights) {
        write_emat(w, t)?;
    }
    Ok(())
}

pub fn read_weights<R: Read>(r: &mut R) -> Result<(VitConfig, VitWeights)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Parse {
        offset: 0,
        detail: "truncated EVIT magic".to_string(),
    })?;
    if &magic != EVIT_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            detail: format!("bad magic {:?}, expected \"EVIT\"", magic),
        });
    }
    let mut u32buf = [0u8; 4];
    let mut next_u32 = |r: &mut R, at: usize| -> Result<u32> {
        r.read_exact(&mut u32buf).map_err(|_| Error::Parse {
            offset: at,
            detail: "truncated EVIT header".to_string(),
        })?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = next_u32(r, 4)?;
    if version != EVIT_VERSION {
        return Err(Error::Parse {
            offset: 4,
            detail: format!("unsupported EVIT version {}", version),
        });
    }
    let mut fields = [0u32; 10];
    for (i, f) in fields.iter_mut().enumerate() {
        *f = next_u32(r, 8 + 4 * i)?;
    }
    let cfg = VitConfig {
        image_size: fields[0] as usize,
        channels: fields[1] as usize,
        patch_size: fields[2] as usize,
        d_model: fields[4] as usize,
        n_heads: fields[5] as usize,
        head_dim: fields[6] as usize,
        mlp_hidden: fields[7] as usize,
        n_layers: fields[8] as usize,
        embed_dim: fields[9] as usize,
    };
    cfg.validate()?;
    if cfg.n_patches() != fields[3] as usize {
        return Err(Error::Parse {
            offset: 8 + 4 * 3,
            detail: format!(
                "stored n_patches {} disagrees with derived {}",
                fields[3],
                cfg.n_patches()
            ),
        });
    }

    let mut tensor = || read_emat(r);
    let patch_proj = tensor()?;
    let pos = tensor()?;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for _ in 0..cfg.n_layers {
        let mut w_q = Vec::new();
        let mut w_k = Vec::new();
        let mut w_v = Vec::new();
        for _ in 0..cfg.n_heads {
            w_q.push(tensor()?);
            w_k.push(tensor()?);
            w_v.push(tensor()?);
        }
        let mut w_c = Vec::new();
        for _ in 0..cfg.n_heads {
            w_c.push(tensor()?);
        }
        layers.push(LayerWeights {
            w_q,
            w_k,
            w_v,
            w_c,
            gamma1: tensor()?,
            beta1: tensor()?,
            gamma2: tensor()?,
            beta2: tensor()?,
            w1: tensor()?,
            w2: tensor()?,
        });
    }
    let embed_proj = tensor()?;
    let weights = VitWeights {
        patch_proj,
        pos,
        layers,
        embed_proj,
    };
    check_weight_shapes(&cfg, &weights)?;
    Ok((cfg, weights))
}

pub fn save_weights(path: &Path, cfg: &VitConfig, weights: &VitWeights) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_weights(&mut w, cfg, weights)?;
    w.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(VitConfig, VitWeights)> {
    read_weights(&mut BufReader::new(std::fs::File::open(path)?))
}

/// Serialization order of all weight tensors (also the init order).
fn weight_order(w: &VitWeights) -> Vec<&Tensor> {
    let mut order: Vec<&Tensor> = vec![&w.patch_proj, &w.pos];
    for layer in &w.layers {
        for h in 0..layer.w_q.len() {
            order.push(&layer.w_q[h]);
            order.push(&layer.w_k[h]);
            order.push(&layer.w_v[h]);
        }
        for wc in &layer.w_c {
            order.push(wc);
        }
        order.push(&layer.gamma1);
        order.push(&layer.beta1);
        order.push(&layer.gamma2);
        order.push(&layer.beta2);
        order.push(&layer.w1);
        order.push(&layer.w2);
    }
    order.push(&w.embed_proj);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> VitConfig {
        VitConfig {
            image_size: 2,
            channels: 3,
            patch_size: 1,
            d_model: 3,
            n_heads: 1,
            head_dim: 3,
            mlp_hidden: 4,
            n_layers: 1,
            embed_dim: 2,
        }
    }

    #[test]
    fn reference_config_is_valid() {
        VitConfig::reference().validate().unwrap();
        assert_eq!(VitConfig::reference().n_patches(), 16);
        assert_eq!(VitConfig::reference().input_dim(), 3072);
    }

    #[test]
    fn config_rejects_bad_head_split() {
        let mut cfg = VitConfig::reference();
        cfg.head_dim = 7;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = VitConfig::reference();
        let a = init_weights(&cfg, &mut Rng::new(5)).unwrap();
        let b = init_weights(&cfg, &mut Rng::new(5)).unwrap();
        assert_eq!(a.patch_proj, b.patch_proj);
        assert_eq!(a.layers[1].w1, b.layers[1].w1);
        assert_eq!(a.embed_proj, b.embed_proj);
    }

    #[test]
    fn init_gamma_is_ones() {
        let cfg = VitConfig::reference();
        let w = init_weights(&cfg, &mut Rng::new(5)).unwrap();
        assert!(w.layers[0].gamma1.data().iter().all(|&v| v == 1.0));
        assert!(w.layers[0].beta1.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_fan_in_scaling() {
        // wide config so the per-matrix sample exceeds 10^4 entries
        let cfg = VitConfig {
            image_size: 16,
            channels: 3,
            patch_size: 4,
            d_model: 128,
            n_heads: 4,
            head_dim: 32,
            mlp_hidden: 64,
            n_layers: 1,
            embed_dim: 16,
        };
        let w = init_weights(&cfg, &mut Rng::new(77)).unwrap();
        let mut vals = Vec::new();
        for h in 0..cfg.n_heads {
            vals.extend_from_slice(w.layers[0].w_q[h].data());
        }
        assert!(vals.len() >= 10_000);
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let want = 1.0 / (cfg.d_model as f64).sqrt();
        assert!(
            (std - want).abs() / want < 0.10,
            "std {} vs 1/sqrt(d) {}",
            std,
            want
        );
    }

    #[test]
    fn patchify_counts_patches() {
        let cfg = VitConfig::reference();
        let w = init_weights(&cfg, &mut Rng::new(3)).unwrap();
        let img = Tensor::zeros(&[3, 32, 32]);
        let t = patchify(&img, &w, &cfg).unwrap();
        assert_eq!(t.shape(), &[16, 32]);
    }

    #[test]
    fn patchify_zero_image_zero_pos_is_zero() {
        let cfg = VitConfig::reference();
        let mut w = init_weights(&cfg, &mut Rng::new(3)).unwrap();
        w.pos = Tensor::zeros(&[16, 32]);
        let img = Tensor::zeros(&[3, 32, 32]);
        let t = patchify(&img, &w, &cfg).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn patchify_identity_projection_recovers_pixels() {
        // 2x2 image, patch 1: each token is one pixel's [r, g, b] row.
        let cfg = tiny_config();
        let mut w = init_weights(&cfg, &mut Rng::new(1)).unwrap();
        w.patch_proj = Tensor::identity(3);
        w.pos = Tensor::zeros(&[4, 3]);
        let mut img = Tensor::zeros(&[3, 2, 2]);
        // pixel p gets channel values (p+1)/10 + c/100
        for c in 0..3 {
            for p in 0..4 {
                img.data_mut()[c * 4 + p] = (p + 1) as f64 / 10.0 + c as f64 / 100.0;
            }
        }
        let t = patchify(&img, &w, &cfg).unwrap();
        for p in 0..4 {
            for c in 0..3 {
                let want = (p + 1) as f64 / 10.0 + c as f64 / 100.0;
                assert_eq!(t.get2(p, c), want, "patch {} channel {}", p, c);
            }
        }
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let cfg = VitConfig::reference();
        let w = init_weights(&cfg, &mut Rng::new(11)).unwrap();
        let x = gaussian(&mut Rng::new(12), &[16, 32]);
        for alpha in attention_weights(&x, &w.layers[0], &cfg).unwrap() {
            for i in 0..alpha.rows() {
                let sum: f64 = alpha.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(alpha.row(i).iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn single_token_attention_is_trivial() {
        let cfg = VitConfig {
            image_size: 1,
            channels: 3,
            patch_size: 1,
            d_model: 4,
            n_heads: 2,
            head_dim: 2,
            mlp_hidden: 4,
            n_layers: 1,
            embed_dim: 2,
        };
        let w = init_weights(&cfg, &mut Rng::new(4)).unwrap();
        let x = gaussian(&mut Rng::new(5), &[1, 4]);
        for alpha in attention_weights(&x, &w.layers[0], &cfg).unwrap() {
            assert_eq!(alpha.shape(), &[1, 1]);
            assert_eq!(alpha.data()[0], 1.0);
        }
    }

    /// Hand-rolled scalar oracle for a 2-token, 1-head, d=2, k=1 block.
    #[test]
    fn block_matches_scalar_oracle() {
        let cfg = VitConfig {
            image_size: 2,
            channels: 1,
            patch_size: 1,
            d_model: 2,
            n_heads: 1,
            head_dim: 1,
            mlp_hidden: 3,
            n_layers: 1,
            embed_dim: 2,
        };
        // hand-picked small weights
        let wq = Tensor::from_rows(&[vec![0.3], vec![-0.5]]).unwrap();
        let wk = Tensor::from_rows(&[vec![0.7], vec![0.2]]).unwrap();
        let wv = Tensor::from_rows(&[vec![-0.4], vec![0.6]]).unwrap();
        let wc = Tensor::from_rows(&[vec![0.5, -0.25]]).unwrap();
        let w1 = Tensor::from_rows(&[vec![0.2, -0.3, 0.4], vec![0.1, 0.5, -0.2]]).unwrap();
        let w2 =
            Tensor::from_rows(&[vec![0.6, -0.1], vec![0.3, 0.2], vec![-0.5, 0.4]]).unwrap();
        let layer = LayerWeights {
            w_q: vec![wq],
            w_k: vec![wk],
            w_v: vec![wv],
            w_c: vec![wc],
            gamma1: Tensor::from_vec(&[2], vec![1.1, 0.9]).unwrap(),
            beta1: Tensor::from_vec(&[2], vec![0.05, -0.05]).unwrap(),
            gamma2: Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap(),
            beta2: Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap(),
            w1,
            w2,
        };
        let x = Tensor::from_rows(&[vec![0.8, -0.2], vec![-0.1, 0.4]]).unwrap();
        let got = attention_block(&x, &layer, &cfg).unwrap();

        // scalar arithmetic, step by step
        let q: Vec<f64> = (0..2).map(|i| 0.3 * x.get2(i, 0) - 0.5 * x.get2(i, 1)).collect();
        let k: Vec<f64> = (0..2).map(|i| 0.7 * x.get2(i, 0) + 0.2 * x.get2(i, 1)).collect();
        let v: Vec<f64> = (0..2).map(|i| -0.4 * x.get2(i, 0) + 0.6 * x.get2(i, 1)).collect();
        let ln = |z: &[f64], gamma: &[f64], beta: &[f64]| -> Vec<f64> {
            let mu = (z[0] + z[1]) / 2.0;
            let var = ((z[0] - mu).powi(2) + (z[1] - mu).powi(2)) / 2.0;
            let sigma = (var + crate::tensor::LN_EPS).sqrt();
            (0..2)
                .map(|j| gamma[j] * (z[j] - mu) / sigma + beta[j])
                .collect()
        };
        let mut want = Vec::new();
        for i in 0..2 {
            // attention weights with 1/sqrt(k) = 1
            let l0 = q[i] * k[0];
            let l1 = q[i] * k[1];
            let mx = l0.max(l1);
            let (e0, e1) = ((l0 - mx).exp(), (l1 - mx).exp());
            let z = e0 + e1;
            let (a0, a1) = (e0 / z, e1 / z);
            let ctx = a0 * v[0] + a1 * v[1];
            let u_prime = [0.5 * ctx, -0.25 * ctx];
            let res1 = [x.get2(i, 0) + u_prime[0], x.get2(i, 1) + u_prime[1]];
            let u = ln(&res1, &[1.1, 0.9], &[0.05, -0.05]);
            let h0 = (0.2 * u[0] + 0.1 * u[1]).max(0.0);
            let h1 = (-0.3 * u[0] + 0.5 * u[1]).max(0.0);
            let h2 = (0.4 * u[0] - 0.2 * u[1]).max(0.0);
            let z_prime = [
                0.6 * h0 + 0.3 * h1 - 0.5 * h2,
                -0.1 * h0 + 0.2 * h1 + 0.4 * h2,
            ];
            let res2 = [u[0] + z_prime[0], u[1] + z_prime[1]];
            want.extend(ln(&res2, &[1.0, 1.0], &[0.0, 0.0]));
        }
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{} vs {}", g, w);
        }
    }

    #[test]
    fn embed_is_deterministic_with_expected_shape() {
        let cfg = VitConfig::reference();
        let w = init_weights(&cfg, &mut Rng::new(6)).unwrap();
        let img = crate::rng::uniform(&mut Rng::new(7), &[3, 32, 32], 0.0, 1.0);
        let a = embed(&img, &w, &cfg).unwrap();
        let b = embed(&img, &w, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[16]);
    }

    #[test]
    fn embed_is_sensitive_to_patch_permutation() {
        let cfg = VitConfig::reference();
        let w = init_weights(&cfg, &mut Rng::new(6)).unwrap();
        // structured image: per-patch constant blocks with distinct values
        let mut img = Tensor::zeros(&[3, 32, 32]);
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let p = (y / 8) * 4 + (x / 8);
                    img.data_mut()[c * 1024 + y * 32 + x] = (p as f64 + 1.0) / 20.0;
                }
            }
        }
        // swap patches 0 and 5 pixelwise
        let mut swapped = img.clone();
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    let a = c * 1024 + y * 32 + x;
                    let b = c * 1024 + (8 + y) * 32 + (8 + x);
                    swapped.data_mut().swap(a, b);
                }
            }
        }
        let ea = embed(&img, &w, &cfg).unwrap();
        let eb = embed(&swapped, &w, &cfg).unwrap();
        assert!(ea.sub(&eb).unwrap().norm_l2() > 0.0);
    }

    #[test]
    fn recorded_forward_is_bitwise_equal_to_plain() {
        let cfg = VitConfig::reference();
        let w = init_weights(&cfg, &mut Rng::new(8)).unwrap();
        let img = crate::rng::uniform(&mut Rng::new(9), &[3, 32, 32], 0.0, 1.0);
        let embedder = Embedder::new(&cfg, &w).unwrap();
        let plain = autodiff::eval(&embedder, &img).unwrap();
        let (recorded, _) = autodiff::record(&embedder, &img).unwrap();
        assert_eq!(plain, recorded);
    }

    #[test]
    fn evit_round_trip() {
        let cfg = VitConfig::reference();
        let w = init_weights(&cfg, &mut Rng::new(10)).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &cfg, &w).unwrap();
        let (cfg2, w2) = read_weights(&mut buf.as_slice()).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(w.patch_proj, w2.patch_proj);
        assert_eq!(w.layers[1].w_c[3], w2.layers[1].w_c[3]);
        assert_eq!(w.embed_proj, w2.embed_proj);
    }

    #[test]
    fn ln_probe_reports_normalized_rows() {
        let cfg = VitConfig::reference();
        let w = init_weights(&cfg, &mut Rng::new(13)).unwrap();
        let img = crate::rng::uniform(&mut Rng::new(14), &[3, 32, 32], 0.0, 1.0);
        let embedder = Embedder::new(&cfg, &w).unwrap();
        let (_, stats) = autodiff::eval_probed(&embedder, &img).unwrap();
        // 2 layers x 2 norms x 16 tokens
        assert_eq!(stats.len(), 64);
        for s in stats {
            assert!(s.mean.abs() < 1e-10, "mean {}", s.mean);
            assert!((s.std - 1.0).abs() < 1e-6, "std {}", s.std);
        }
    }
}
