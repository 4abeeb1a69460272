//! Per-primitive gradient checks: the reverse rule of every tape operation
//! must agree with central finite differences on random inputs, and the
//! vector-Jacobian product must be linear in the cotangent.

mod common;

use std::sync::Arc;

use atlas_core::autodiff::{
    finite_diff_jacobian, jacobian, record, Model, TensorOps,
};
use atlas_core::error::Result;
use atlas_core::rng::{gaussian, Rng};
use atlas_core::tensor::Tensor;

use common::scaled_max_error;

const FD_H: f64 = 1e-5;
const TOL: f64 = 1e-7;

struct MatMulRight {
    b: Tensor,
}
impl Model for MatMulRight {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        let rows = 2usize;
        let x2 = ops.reshape(&x, &[rows, self.b.rows()])?;
        let b = ops.constant(&self.b);
        let y = ops.matmul(&x2, &b)?;
        ops.reshape(&y, &[rows * self.b.cols()])
    }
}

struct MatMulLeft {
    a: Tensor,
}
impl Model for MatMulLeft {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        let cols = 3usize;
        let x2 = ops.reshape(&x, &[self.a.cols(), cols])?;
        let a = ops.constant(&self.a);
        let y = ops.matmul(&a, &x2)?;
        ops.reshape(&y, &[self.a.rows() * cols])
    }
}

struct AddConst {
    c: Tensor,
}
impl Model for AddConst {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        let c = ops.constant(&self.c);
        ops.add(&x, &c)
    }
}

struct ScaleBy(f64);
impl Model for ScaleBy {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        ops.scale(&x, self.0)
    }
}

struct ReluOnly;
impl Model for ReluOnly {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        ops.relu(&x)
    }
}

struct SoftmaxOnly {
    rows: usize,
    cols: usize,
}
impl Model for SoftmaxOnly {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        let x2 = ops.reshape(&x, &[self.rows, self.cols])?;
        let s = ops.softmax_rows(&x2)?;
        ops.reshape(&s, &[self.rows * self.cols])
    }
}

struct LayerNormOnly {
    gamma: Tensor,
    beta: Tensor,
    rows: usize,
}
impl Model for LayerNormOnly {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        let d = self.gamma.len();
        let x2 = ops.reshape(&x, &[self.rows, d])?;
        let g = ops.constant(&self.gamma);
        let b = ops.constant(&self.beta);
        let y = ops.layer_norm(&x2, &g, &b)?;
        ops.reshape(&y, &[self.rows * d])
    }
}

struct SliceMiddle;
impl Model for SliceMiddle {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        let x2 = ops.reshape(&x, &[4, 3])?;
        let s = ops.slice_rows(&x2, 1, 3)?;
        ops.reshape(&s, &[6])
    }
}

struct MeanRowsOnly;
impl Model for MeanRowsOnly {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        let x2 = ops.reshape(&x, &[5, 3])?;
        ops.mean_rows(&x2)
    }
}

struct TransposeChain {
    b: Tensor,
}
impl Model for TransposeChain {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        // x -> x^T -> B x^T exercises the transpose backward
        let x2 = ops.reshape(&x, &[3, 4])?;
        let xt = ops.transpose(&x2)?;
        let b = ops.constant(&self.b);
        let y = ops.matmul(&b, &xt)?;
        ops.reshape(&y, &[2 * 3])
    }
}

struct GatherOnly {
    idx: Arc<Vec<usize>>,
}
impl Model for GatherOnly {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
        ops.gather(&x, &self.idx, &[self.idx.len()])
    }
}

fn check<M: Model>(name: &str, model: &M, x: &Tensor) {
    let ad = jacobian(model, x).unwrap();
    let fd = finite_diff_jacobian(model, x, FD_H).unwrap();
    let err = scaled_max_error(&ad, &fd);
    assert!(err < TOL, "{name}: gradient check failed, rel err {err:.3e}");
}

#[test]
fn matmul_right_backward() {
    let mut rng = Rng::new(1000);
    let b = gaussian(&mut rng, &[5, 4]);
    let x = gaussian(&mut rng, &[10]);
    check("matmul_right", &MatMulRight { b }, &x);
}

#[test]
fn matmul_left_backward() {
    let mut rng = Rng::new(1001);
    let a = gaussian(&mut rng, &[4, 5]);
    let x = gaussian(&mut rng, &[15]);
    check("matmul_left", &MatMulLeft { a }, &x);
}

#[test]
fn add_backward() {
    let mut rng = Rng::new(1002);
    let c = gaussian(&mut rng, &[8]);
    let x = gaussian(&mut rng, &[8]);
    check("add", &AddConst { c }, &x);
}

#[test]
fn scale_backward() {
    let mut rng = Rng::new(1003);
    let x = gaussian(&mut rng, &[9]);
    check("scale", &ScaleBy(-2.5), &x);
}

#[test]
fn relu_backward_away_from_kink() {
    let mut rng = Rng::new(1004);
    // push entries away from 0 so finite differences see a fixed pattern
    let data: Vec<f64> = gaussian(&mut rng, &[12])
        .data()
        .iter()
        .map(|v| if v.abs() < 0.1 { v.signum() * 0.3 } else { *v })
        .collect();
    let x = Tensor::from_vec(&[12], data).unwrap();
    check("relu", &ReluOnly, &x);
}

#[test]
fn softmax_backward() {
    let mut rng = Rng::new(1005);
    let x = gaussian(&mut rng, &[12]);
    check("softmax_rows", &SoftmaxOnly { rows: 3, cols: 4 }, &x);
}

#[test]
fn layer_norm_backward() {
    let mut rng = Rng::new(1006);
    let gamma = gaussian(&mut rng, &[6]);
    let beta = gaussian(&mut rng, &[6]);
    let x = gaussian(&mut rng, &[12]);
    check("layer_norm", &LayerNormOnly { gamma, beta, rows: 2 }, &x);
}

#[test]
fn slice_backward() {
    let mut rng = Rng::new(1007);
    let x = gaussian(&mut rng, &[12]);
    check("slice_rows", &SliceMiddle, &x);
}

#[test]
fn mean_rows_backward() {
    let mut rng = Rng::new(1008);
    let x = gaussian(&mut rng, &[15]);
    check("mean_rows", &MeanRowsOnly, &x);
}

#[test]
fn transpose_backward() {
    let mut rng = Rng::new(1009);
    let b = gaussian(&mut rng, &[2, 4]);
    let x = gaussian(&mut rng, &[12]);
    check("transpose", &TransposeChain { b }, &x);
}

#[test]
fn gather_backward_with_repeats() {
    let mut rng = Rng::new(1010);
    let idx = Arc::new(vec![0usize, 3, 3, 1, 5, 0]);
    let x = gaussian(&mut rng, &[6]);
    check("gather", &GatherOnly { idx }, &x);
}

#[test]
fn vjp_is_linear_in_the_cotangent() {
    let (cfg, w) = common::small_vit(1011);
    let model = atlas_core::vit::Embedder::new(&cfg, &w).unwrap();
    let x = atlas_core::rng::uniform(&mut Rng::new(1012), &[3, 8, 8], 0.0, 1.0);
    let (_, tape) = record(&model, &x).unwrap();
    let mut rng = Rng::new(1013);
    let c1 = gaussian(&mut rng, &[4]);
    let c2 = gaussian(&mut rng, &[4]);
    let (a, b) = (0.7, -2.3);
    let combined = tape.vjp(&c1.scale(a).add(&c2.scale(b)).unwrap()).unwrap();
    let separate = tape
        .vjp(&c1)
        .unwrap()
        .scale(a)
        .add(&tape.vjp(&c2).unwrap().scale(b))
        .unwrap();
    let err = scaled_max_error(&combined, &separate);
    assert!(err < 1e-10, "linearity violated: {err:.3e}");
}

#[test]
fn jacobian_rows_do_not_depend_on_evaluation_order() {
    let (cfg, w) = common::small_vit(1014);
    let model = atlas_core::vit::Embedder::new(&cfg, &w).unwrap();
    let x = atlas_core::rng::uniform(&mut Rng::new(1015), &[3, 8, 8], 0.0, 1.0);
    let parallel = jacobian(&model, &x).unwrap();
    // serial assembly via explicit basis cotangents
    let (y, tape) = record(&model, &x).unwrap();
    let n = y.len();
    let m = x.len();
    let mut serial = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let mut basis = Tensor::zeros(&[n]);
        basis.data_mut()[i] = 1.0;
        let row = tape.vjp(&basis).unwrap();
        serial.data_mut()[i * m..(i + 1) * m].copy_from_slice(&row.data()[..m]);
    }
    assert_eq!(parallel, serial);
}
