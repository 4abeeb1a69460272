//! Reduced singular value decomposition via one-sided Jacobi.
//!
//! Specialized to the wide case `n <= m` (few embedding coordinates, many
//! pixels): the rotations act on the n rows, each of length m, so a full
//! sweep touches n*(n-1)/2 row pairs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sweep cap before reporting non-convergence.
const MAX_SWEEPS: usize = 100;
/// A pair is rotated while |<wp,wq>| exceeds this fraction of ||wp||*||wq||.
const PAIR_TOL: f64 = 1e-14;
/// Singular values below `NULL_TOL * ||J||_F` get synthesized right vectors.
const NULL_TOL: f64 = 1e-13;

/// Reduced SVD factors of an n x m matrix, n <= m.
///
/// `u` is n x n, `s` descending and non-negative of length n, `v` is m x n;
/// `J = u * diag(s) * v^T`. Each column of `u` has its largest-magnitude
/// entry positive.
#[derive(Debug, Clone)]
pub struct ReducedSvd {
    pub u: Tensor,
    pub s: Tensor,
    pub v: Tensor,
}

pub fn reduced_svd(j: &Tensor) -> Result<ReducedSvd> {
    if j.rank() != 2 {
        return Err(Error::dim("reduced_svd", "operand must be a matrix".to_string()));
    }
    let (n, m) = (j.rows(), j.cols());
    if n == 0 || m == 0 {
        return Err(Error::dim("reduced_svd", "empty matrix".to_string()));
    }
    if n > m {
        return Err(Error::dim(
            "reduced_svd",
            format!("expected n <= m, got {}x{}", n, m),
        ));
    }
    if !j.is_finite() {
        return Err(Error::Numeric {
            op: "reduced_svd",
            detail: "non-finite input".to_string(),
        });
    }

    // Working rows w[i] = row i of J; rotating pairs of them orthogonalizes
    // the columns of J^T. `rot` accumulates the rotations (n x n, by column).
    let mut w: Vec<Vec<f64>> = (0..n).map(|i| j.row(i).to_vec()).collect();
    let mut rot: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut col = vec![0.0; n];
            col[i] = 1.0;
            col
        })
        .collect();

    let fro = j.norm_l2();
    let mut converged = n < 2;
    let mut worst = 0.0f64;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        worst = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
                for (x, y) in w[p].iter().zip(w[q].iter()) {
                    a += x * x;
                    b += y * y;
                    c += x * y;
                }
                if a == 0.0 || b == 0.0 {
                    continue;
                }
                let rel = c.abs() / (a * b).sqrt();
                worst = worst.max(rel);
                if rel <= PAIR_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (b - a) / (2.0 * c);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate_pair(&mut w, p, q, cs, sn);
                rotate_pair(&mut rot, p, q, cs, sn);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Numeric {
            op: "reduced_svd",
            detail: format!(
                "no convergence after {} sweeps; worst pair residual {:.3e} (tol {:.1e})",
                MAX_SWEEPS, worst, PAIR_TOL
            ),
        });
    }

    // Singular values and descending order.
    let norms: Vec<f64> = w.iter().map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &k| norms[k].partial_cmp(&norms[i]).unwrap().then(i.cmp(&k)));

    let null_floor = fro * NULL_TOL;
    let mut s = vec![0.0; n];
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (rank, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        u_cols.push(rot[src].clone());
        if sigma > null_floor {
            s[rank] = sigma;
            v_cols.push(w[src].iter().map(|v| v / sigma).collect());
        } else {
            s[rank] = 0.0;
            v_cols.push(complete_column(&v_cols, m));
        }
    }

    // Sign convention: largest-magnitude entry of each U column positive.
    for (uc, vc) in u_cols.iter_mut().zip(v_cols.iter_mut()) {
        let mut best = 0usize;
        for (i, v) in uc.iter().enumerate() {
            if v.abs() > uc[best].abs() {
                best = i;
            }
        }
        if uc[best] < 0.0 {
            for v in uc.iter_mut() {
                *v = -*v;
            }
            for v in vc.iter_mut() {
                *v = -*v;
            }
        }
    }

    Ok(ReducedSvd {
        u: cols_to_tensor(&u_cols, n),
        s: Tensor::from_vec(&[n], s)?,
        v: cols_to_tensor(&v_cols, m),
    })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, cs: f64, sn: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let wp = &mut head[p];
    let wq = &mut tail[0];
    for (x, y) in wp.iter_mut().zip(wq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = cs * xp - sn * xq;
        *y = sn * xp + cs * xq;
    }
}

/// Deterministic orthonormal completion: first canonical basis vector with a
/// substantial residual against the existing columns, re-orthogonalized twice.
fn complete_column(existing: &[Vec<f64>], m: usize) -> Vec<f64> {
    for cand in 0..m {
        let mut v = vec![0.0; m];
        v[cand] = 1.0;
        for _ in 0..2 {
            for col in existing {
                let d: f64 = col.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(col.iter()) {
                    *vi -= d * ci;
                }
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.5 {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            return v;
        }
    }
    unreachable!("fewer than m columns always leave a basis vector free")
}

fn cols_to_tensor(cols: &[Vec<f64>], rows: usize) -> Tensor {
    let n = cols.len();
    let mut data = vec![0.0; rows * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * n + j] = v;
        }
    }
    Tensor::from_vec(&[rows, n], data).expect("consistent by construction")
}
