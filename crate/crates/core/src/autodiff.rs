//! Reverse-mode automatic differentiation over whole-tensor primitives.
//!
//! A model is written once against the [`TensorOps`] trait and can then run
//! in two ways: eagerly ([`Eval`]) or recorded onto a [`Tape`] whose nodes
//! save the forward values needed for the backward rules. Both paths call
//! the same tensor kernels in the same order, so their outputs are bitwise
//! identical. A finished tape is immutable; replaying it for vector-Jacobian
//! products needs only private accumulators, so rows of a Jacobian can be
//! assembled concurrently.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{mean_var, Tensor, LN_EPS};

/// The primitive vocabulary models are composed from.
pub trait TensorOps {
    type Value: Clone;

    /// Inject a parameter; never differentiated.
    fn constant(&mut self, t: &Tensor) -> Self::Value;
    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, a: &Self::Value, c: f64) -> Result<Self::Value>;
    fn relu(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn softmax_rows(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn layer_norm(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
    ) -> Result<Self::Value>;
    fn reshape(&mut self, a: &Self::Value, shape: &[usize]) -> Result<Self::Value>;
    fn slice_rows(&mut self, a: &Self::Value, start: usize, end: usize) -> Result<Self::Value>;
    fn mean_rows(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn transpose(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn gather(
        &mut self,
        a: &Self::Value,
        idx: &Arc<Vec<usize>>,
        out_shape: &[usize],
    ) -> Result<Self::Value>;
}

/// A differentiable map from one tensor to another, written against
/// [`TensorOps`] so the same definition serves eager evaluation, recording,
/// and finite differencing.
pub trait Model: Sync {
    fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value>;
}

/// Per-token statistics of the unguarded normalization inside a layer norm,
/// collected by [`eval_probed`].
#[derive(Debug, Clone, Copy)]
pub struct LnStat {
    pub mean: f64,
    pub std: f64,
}

/// Eager executor; optionally probes every layer-norm site.
#[derive(Default)]
pub struct Eval {
    probe_ln: bool,
    ln_stats: Vec<LnStat>,
}

impl TensorOps for Eval {
    type Value = Tensor;

    fn constant(&mut self, t: &Tensor) -> Tensor {
        t.clone()
    }
    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.matmul(b)
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }
    fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        Ok(a.scale(c))
    }
    fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(a.relu())
    }
    fn softmax_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        a.softmax_rows()
    }
    fn layer_norm(&mut self, x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
        if self.probe_ln {
            let d = *x.shape().last().unwrap_or(&0);
            for row in x.data().chunks(d.max(1)) {
                let (mu, var) = mean_var(row);
                if var <= 0.0 {
                    continue;
                }
                let inv = 1.0 / var.sqrt();
                let normalized: Vec<f64> = row.iter().map(|v| (v - mu) * inv).collect();
                let (nm, nv) = mean_var(&normalized);
                self.ln_stats.push(LnStat {
                    mean: nm,
                    std: nv.sqrt(),
                });
            }
        }
        x.layer_norm(gamma, beta)
    }
    fn reshape(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        a.reshape(shape)
    }
    fn slice_rows(&mut self, a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        a.slice_rows(start, end)
    }
    fn mean_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        a.mean_rows()
    }
    fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        a.transpose()
    }
    fn gather(&mut self, a: &Tensor, idx: &Arc<Vec<usize>>, out_shape: &[usize]) -> Result<Tensor> {
        a.gather(idx, out_shape)
    }
}

/// Plain forward pass.
pub fn eval<M: Model>(model: &M, x: &Tensor) -> Result<Tensor> {
    let mut ops = Eval::default();
    model.apply(&mut ops, x.clone())
}

/// Forward pass that also reports the normalization statistics of every
/// layer-norm site the model visits.
pub fn eval_probed<M: Model>(model: &M, x: &Tensor) -> Result<(Tensor, Vec<LnStat>)> {
    let mut ops = Eval {
        probe_ln: true,
        ln_stats: Vec::new(),
    };
    let y = model.apply(&mut ops, x.clone())?;
    Ok((y, ops.ln_stats))
}

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Constant,
    MatMul(usize, usize),
    Add(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    SoftmaxRows(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize },
    Reshape(usize),
    SliceRows { src: usize, start: usize },
    MeanRows(usize),
    Transpose(usize),
    Gather { src: usize, idx: Arc<Vec<usize>> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward pass in topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    input: usize,
    output: usize,
}

impl Tape {
    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: &Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn value(&self, id: usize) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn output(&self) -> &Tensor {
        &self.nodes[self.output].value
    }

    /// Number of recorded operations, inputs and constants excluded.
    pub fn op_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Input | Op::Constant))
            .count()
    }

    /// Pull the cotangent back through the tape: returns `(df/dx)^T * cotangent`.
    pub fn vjp(&self, cotangent: &Tensor) -> Result<Tensor> {
        let out_shape = self.output().shape();
        if cotangent.shape() != out_shape {
            return Err(Error::dim(
                "vjp",
                format!("cotangent {:?} vs output {:?}", cotangent.shape(), out_shape),
            ));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[self.output] = Some(cotangent.clone());

        for id in (0..self.nodes.len()).rev() {
            if !self.nodes[id].needs_grad {
                adj[id] = None;
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input | Op::Constant => {
                    if matches!(self.nodes[id].op, Op::Input) {
                        adj[id] = Some(g);
                    }
                }
                Op::MatMul(a, b) => {
                    if self.nodes[*a].needs_grad {
                        let bt = self.value(*b).transpose()?;
                        accumulate(&mut adj, *a, g.matmul(&bt)?)?;
                    }
                    if self.nodes[*b].needs_grad {
                        let at = self.value(*a).transpose()?;
                        accumulate(&mut adj, *b, at.matmul(&g)?)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[*a].needs_grad {
                        accumulate(&mut adj, *a, g.clone())?;
                    }
                    if self.nodes[*b].needs_grad {
                        accumulate(&mut adj, *b, g)?;
                    }
                }
                Op::Scale(a, c) => {
                    accumulate(&mut adj, *a, g.scale(*c))?;
                }
                Op::Relu(a) => {
                    let xin = self.value(*a);
                    let data = xin
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gi)| if x > 0.0 { gi } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, Tensor::from_vec(xin.shape(), data)?)?;
                }
                Op::SoftmaxRows(a) => {
                    let s = self.value(id);
                    let (r, c) = (s.rows(), s.cols());
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        let srow = &s.data()[i * c..(i + 1) * c];
                        let grow = &g.data()[i * c..(i + 1) * c];
                        let dot: f64 = srow.iter().zip(grow).map(|(si, gi)| si * gi).sum();
                        for j in 0..c {
                            out[i * c + j] = srow[j] * (grow[j] - dot);
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::from_vec(&[r, c], out)?)?;
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gamma);
                    let d = *xv.shape().last().unwrap();
                    let rows = xv.len() / d;
                    if self.nodes[*x].needs_grad {
                        let mut out = vec![0.0; xv.len()];
                        for i in 0..rows {
                            let xr = &xv.data()[i * d..(i + 1) * d];
                            let gr = &g.data()[i * d..(i + 1) * d];
                            let (mu, var) = mean_var(xr);
                            let sigma = (var + LN_EPS).sqrt();
                            let hat: Vec<f64> = xr.iter().map(|v| (v - mu) / sigma).collect();
                            let gl: Vec<f64> = gr
                                .iter()
                                .zip(gv.data())
                                .map(|(gi, ga)| gi * ga)
                                .collect();
                            let m1 = gl.iter().sum::<f64>() / d as f64;
                            let m2 = gl.iter().zip(&hat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                            for j in 0..d {
                                out[i * d + j] = (gl[j] - m1 - hat[j] * m2) / sigma;
                            }
                        }
                        accumulate(&mut adj, *x, Tensor::from_vec(xv.shape(), out)?)?;
                    }
                    if self.nodes[*gamma].needs_grad {
                        let mut dg = vec![0.0; d];
                        for i in 0..rows {
                            let xr = &xv.data()[i * d..(i + 1) * d];
                            let gr = &g.data()[i * d..(i + 1) * d];
                            let (mu, var) = mean_var(xr);
                            let sigma = (var + LN_EPS).sqrt();
                            for j in 0..d {
                                dg[j] += gr[j] * (xr[j] - mu) / sigma;
                            }
                        }
                        accumulate(&mut adj, *gamma, Tensor::from_vec(&[d], dg)?)?;
                    }
                    if self.nodes[*beta].needs_grad {
                        let mut db = vec![0.0; d];
                        for i in 0..rows {
                            for j in 0..d {
                                db[j] += g.data()[i * d + j];
                            }
                        }
                        accumulate(&mut adj, *beta, Tensor::from_vec(&[d], db)?)?;
                    }
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut adj, *a, g.reshape(&shape)?)?;
                }
                Op::SliceRows { src, start } => {
                    let sv = self.value(*src);
                    let (r, c) = (sv.rows(), sv.cols());
                    let mut out = vec![0.0; r * c];
                    out[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut adj, *src, Tensor::from_vec(&[r, c], out)?)?;
                }
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let (r, c) = (av.rows(), av.cols());
                    let inv = 1.0 / r as f64;
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            out[i * c + j] = g.data()[j] * inv;
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::from_vec(&[r, c], out)?)?;
                }
                Op::Transpose(a) => {
                    accumulate(&mut adj, *a, g.transpose()?)?;
                }
                Op::Gather { src, idx } => {
                    let sv = self.value(*src);
                    let mut out = vec![0.0; sv.len()];
                    for (gi, &j) in g.data().iter().zip(idx.iter()) {
                        out[j] += gi;
                    }
                    accumulate(&mut adj, *src, Tensor::from_vec(sv.shape(), out)?)?;
                }
            }
        }

        let input_shape = self.nodes[self.input].value.shape().to_vec();
        Ok(adj[self.input]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&input_shape)))
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: usize, grad: Tensor) -> Result<()> {
    adj[id] = Some(match adj[id].take() {
        Some(existing) => existing.add(&grad)?,
        None => grad,
    });
    Ok(())
}

impl TensorOps for Tape {
    type Value = Var;

    fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Constant, false)
    }
    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.value(a.0).matmul(self.value(b.0))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MatMul(a.0, b.0), ng))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.value(a.0).add(self.value(b.0))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a.0, b.0), ng))
    }
    fn scale(&mut self, a: &Var, c: f64) -> Result<Var> {
        let v = self.value(a.0).scale(c);
        let ng = self.needs(a);
        Ok(self.push(v, Op::Scale(a.0, c), ng))
    }
    fn relu(&mut self, a: &Var) -> Result<Var> {
        let v = self.value(a.0).relu();
        let ng = self.needs(a);
        Ok(self.push(v, Op::Relu(a.0), ng))
    }
    fn softmax_rows(&mut self, a: &Var) -> Result<Var> {
        let v = self.value(a.0).softmax_rows()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::SoftmaxRows(a.0), ng))
    }
    fn layer_norm(&mut self, x: &Var, gamma: &Var, beta: &Var) -> Result<Var> {
        let v = self
            .value(x.0)
            .layer_norm(self.value(gamma.0), self.value(beta.0))?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
            },
            ng,
        ))
    }
    fn reshape(&mut self, a: &Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a.0).reshape(shape)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Reshape(a.0), ng))
    }
    fn slice_rows(&mut self, a: &Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a.0).slice_rows(start, end)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::SliceRows { src: a.0, start }, ng))
    }
    fn mean_rows(&mut self, a: &Var) -> Result<Var> {
        let v = self.value(a.0).mean_rows()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::MeanRows(a.0), ng))
    }
    fn transpose(&mut self, a: &Var) -> Result<Var> {
        let v = self.value(a.0).transpose()?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Transpose(a.0), ng))
    }
    fn gather(&mut self, a: &Var, idx: &Arc<Vec<usize>>, out_shape: &[usize]) -> Result<Var> {
        let v = self.value(a.0).gather(idx, out_shape)?;
        let ng = self.needs(a);
        Ok(self.push(
            v,
            Op::Gather {
                src: a.0,
                idx: Arc::clone(idx),
            },
            ng,
        ))
    }
}

/// Run the model once, recording every primitive. The returned output equals
/// the plain forward pass bitwise.
pub fn record<M: Model>(model: &M, x: &Tensor) -> Result<(Tensor, Tape)> {
    let mut tape = Tape::default();
    let xv = tape.push(x.clone(), Op::Input, true);
    tape.input = xv.0;
    let yv = model.apply(&mut tape, xv)?;
    tape.output = yv.0;
    Ok((tape.output().clone(), tape))
}

/// Exact Jacobian, one reverse pass per output coordinate. Rows are computed
/// independently (in parallel) and written in index order, so the result is
/// bitwise deterministic.
pub fn jacobian<M: Model>(model: &M, x: &Tensor) -> Result<Tensor> {
    let (y, tape) = record(model, x)?;
    let n = y.len();
    let m = x.len();
    let out_shape = y.shape().to_vec();
    let rows: Vec<Result<Tensor>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut basis = Tensor::zeros(&out_shape);
            basis.data_mut()[i] = 1.0;
            tape.vjp(&basis)
        })
        .collect();
    let mut data = vec![0.0; n * m];
    for (i, row) in rows.into_iter().enumerate() {
        data[i * m..(i + 1) * m].copy_from_slice(row?.data());
    }
    Tensor::from_vec(&[n, m], data)
}

/// Central-difference Jacobian: column j is `(f(x + h e_j) - f(x - h e_j)) / 2h`.
/// The independent oracle for everything reverse mode produces.
pub fn finite_diff_jacobian<M: Model>(model: &M, x: &Tensor, h: f64) -> Result<Tensor> {
    if h <= 0.0 {
        return Err(Error::Config(format!("finite difference step must be > 0, got {h}")));
    }
    let m = x.len();
    let cols: Vec<Result<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut xp = x.clone();
            xp.data_mut()[j] += h;
            let mut xm = x.clone();
            xm.data_mut()[j] -= h;
            let fp = eval(model, &xp)?;
            let fm = eval(model, &xm)?;
            Ok(fp
                .data()
                .iter()
                .zip(fm.data())
                .map(|(p, q)| (p - q) / (2.0 * h))
                .collect())
        })
        .collect();
    let mut n = 0usize;
    let mut flat: Vec<Vec<f64>> = Vec::with_capacity(m);
    for col in cols {
        let col = col?;
        n = col.len();
        flat.push(col);
    }
    let mut data = vec![0.0; n * m];
    for (j, col) in flat.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * m + j] = v;
        }
    }
    Tensor::from_vec(&[n, m], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Identity;
    impl Model for Identity {
        fn apply<O: TensorOps>(&self, _ops: &mut O, x: O::Value) -> Result<O::Value> {
            Ok(x)
        }
    }

    struct Doubler;
    impl Model for Doubler {
        fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
            ops.scale(&x, 2.0)
        }
    }

    struct LinearMap {
        a: Tensor,
    }
    impl Model for LinearMap {
        fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
            let m = self.a.cols();
            let a = ops.constant(&self.a);
            let col = ops.reshape(&x, &[m, 1])?;
            let y = ops.matmul(&a, &col)?;
            let n = self.a.rows();
            ops.reshape(&y, &[n])
        }
    }

    #[test]
    fn identity_records_nothing() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let (y, tape) = record(&Identity, &x).unwrap();
        assert_eq!(y, x);
        assert_eq!(tape.op_count(), 0);
        let c = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(tape.vjp(&c).unwrap(), c);
    }

    #[test]
    fn doubling_doubles() {
        let x = Tensor::from_vec(&[2], vec![1.5, -4.0]).unwrap();
        let (y, _) = record(&Doubler, &x).unwrap();
        assert_eq!(y.data(), &[3.0, -8.0]);
    }

    #[test]
    fn linear_map_vjp_is_matrix_transpose() {
        let mut rng = crate::rng::Rng::new(17);
        let a = crate::rng::gaussian(&mut rng, &[4, 6]);
        let x = crate::rng::gaussian(&mut rng, &[6]);
        let c = crate::rng::gaussian(&mut rng, &[4]);
        let (_, tape) = record(&LinearMap { a: a.clone() }, &x).unwrap();
        let got = tape.vjp(&c).unwrap();
        let want = a
            .transpose()
            .unwrap()
            .matmul(&c.reshape(&[4, 1]).unwrap())
            .unwrap()
            .reshape(&[6])
            .unwrap();
        let diff = crate::tensor::max_abs_diff(&got, &want).unwrap();
        assert!(diff < 1e-12, "diff {}", diff);
    }

    #[test]
    fn jacobian_of_identity_is_identity() {
        let x = Tensor::from_vec(&[3], vec![0.3, -1.0, 2.0]).unwrap();
        let j = jacobian(&Identity, &x).unwrap();
        assert_eq!(j, Tensor::identity(3));
    }

    #[test]
    fn jacobian_of_linear_map_is_exact() {
        let mut rng = crate::rng::Rng::new(23);
        let a = crate::rng::gaussian(&mut rng, &[5, 7]);
        let x = crate::rng::gaussian(&mut rng, &[7]);
        let j = jacobian(&LinearMap { a: a.clone() }, &x).unwrap();
        assert_eq!(j, a);
    }

    #[test]
    fn finite_diff_square_function() {
        struct Square;
        impl Model for Square {
            fn apply<O: TensorOps>(&self, ops: &mut O, x: O::Value) -> Result<O::Value> {
                // x^2 on a length-1 vector via a matmul of x with itself
                let row = ops.reshape(&x, &[1, 1])?;
                let sq = ops.matmul(&row, &row)?;
                ops.reshape(&sq, &[1])
            }
        }
        let x = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let j = finite_diff_jacobian(&Square, &x, 1e-5).unwrap();
        assert!((j.data()[0] - 6.0).abs() < 1e-9, "{}", j.data()[0]);
    }

    #[test]
    fn finite_diff_linear_is_exact_for_any_h() {
        let mut rng = crate::rng::Rng::new(29);
        let a = crate::rng::gaussian(&mut rng, &[3, 4]);
        let x = crate::rng::gaussian(&mut rng, &[4]);
        for h in [1e-3, 1e-5, 1e-7] {
            let j = finite_diff_jacobian(&LinearMap { a: a.clone() }, &x, h).unwrap();
            let diff = crate::tensor::max_abs_diff(&j, &a).unwrap();
            assert!(diff < 1e-8, "h={h}: {diff}");
        }
    }

    #[test]
    fn vjp_rejects_wrong_cotangent_shape() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let (_, tape) = record(&Identity, &x).unwrap();
        let bad = Tensor::zeros(&[4]);
        assert!(tape.vjp(&bad).is_err());
    }
}
