//! Jacobian assembly at an anchor input, reduced SVD of the local linear
//! model, and the null/normal subspace projectors derived from it.

use crate::autodiff::{self, Model};
use crate::error::{Error, Result};
use crate::io::tensor_checksum;
use crate::svd::reduced_svd;
use crate::tensor::Tensor;

/// Relative singular-value cut below which a direction counts as null.
pub const RANK_TOL: f64 = 1e-10;
/// Residual norm below which a projection is considered degenerate.
pub const DEGENERATE_TOL: f64 = 1e-12;

/// Reduced SVD of the embedding Jacobian at an anchor input.
///
/// `sigma_max = s[0]` is the local Lipschitz estimate at the anchor. The
/// reconstruction and orthogonality bounds are verified at construction.
#[derive(Debug, Clone)]
pub struct JacobianSvd {
    pub u: Tensor,
    pub s: Tensor,
    pub v: Tensor,
    pub sigma_max: f64,
    pub anchor: Tensor,
}

/// Exact Jacobian of the model at `x0`, one row per embedding coordinate.
pub fn jacobian_at<M: Model>(model: &M, x0: &Tensor) -> Result<Tensor> {
    autodiff::jacobian(model, x0)
}

/// Decompose a Jacobian; fails if the factors do not reproduce it to 1e-10
/// relative or are not orthonormal to 1e-10.
pub fn svd_analysis(j: &Tensor, x0: &Tensor) -> Result<JacobianSvd> {
    let f = reduced_svd(j)?;
    let n = f.s.len();

    for i in 1..n {
        if f.s.data()[i] > f.s.data()[i - 1] {
            return Err(Error::Numeric {
                op: "svd_analysis",
                detail: "singular values not descending".to_string(),
            });
        }
    }
    let recon = {
        let mut sm = Tensor::zeros(&[n, n]);
        for i in 0..n {
            sm.data_mut()[i * n + i] = f.s.data()[i];
        }
        f.u.matmul(&sm)?.matmul(&f.v.transpose()?)?
    };
    let jn = j.norm_l2();
    let rel = if jn == 0.0 {
        recon.sub(j)?.norm_l2()
    } else {
        recon.sub(j)?.norm_l2() / jn
    };
    if rel >= 1e-10 {
        return Err(Error::Numeric {
            op: "svd_analysis",
            detail: format!("reconstruction residual {:.3e} exceeds 1e-10", rel),
        });
    }
    for (name, q) in [("U", &f.u), ("V", &f.v)] {
        let res = orthogonality_residual(q)?;
        if res >= 1e-10 {
            return Err(Error::Numeric {
                op: "svd_analysis",
                detail: format!("{}^T {} residual {:.3e} exceeds 1e-10", name, name, res),
            });
        }
    }

    let sigma_max = f.s.data()[0];
    Ok(JacobianSvd {
        u: f.u,
        s: f.s,
        v: f.v,
        sigma_max,
        anchor: x0.clone(),
    })
}

/// `max |Q^T Q - I|`.
pub fn orthogonality_residual(q: &Tensor) -> Result<f64> {
    let g = q.transpose()?.matmul(q)?;
    let n = g.rows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.get2(i, j) - want).abs());
        }
    }
    Ok(worst)
}

impl JacobianSvd {
    /// Smallest r with `s[r] < RANK_TOL * s[0]`; n when every value is
    /// significant, 0 for a zero Jacobian.
    pub fn effective_rank(&self) -> usize {
        let s0 = self.s.data()[0];
        if s0 == 0.0 {
            return 0;
        }
        self.s
            .data()
            .iter()
            .position(|&si| si < RANK_TOL * s0)
            .unwrap_or(self.s.len())
    }

    pub fn anchor_checksum(&self) -> String {
        tensor_checksum(&self.anchor)
    }

    fn resolve_rank(&self, rank_cut: Option<usize>) -> Result<usize> {
        let r = rank_cut.unwrap_or_else(|| self.effective_rank());
        if r > self.s.len() {
            return Err(Error::Config(format!(
                "rank_cut {} exceeds {} singular directions",
                r,
                self.s.len()
            )));
        }
        Ok(r)
    }

    /// Coefficients `V_r^T v` against the first `r` right singular vectors.
    fn coefficients(&self, v: &Tensor, r: usize) -> Vec<f64> {
        let m = self.v.rows();
        (0..r)
            .map(|c| {
                let mut dot = 0.0;
                for i in 0..m {
                    dot += self.v.get2(i, c) * v.data()[i];
                }
                dot
            })
            .collect()
    }

    /// Unit direction of `v` minus its component in the span of the leading
    /// `rank_cut` right singular vectors (default: effective rank). Along the
    /// result the embedding is locally invariant to rank tolerance.
    pub fn project_null(&self, v: &Tensor, rank_cut: Option<usize>) -> Result<Tensor> {
        let r = self.resolve_rank(rank_cut)?;
        let unit = v.normalized()?;
        let coeff = self.coefficients(&unit, r);
        let m = self.v.rows();
        let mut out = unit.data().to_vec();
        for (c, &co) in coeff.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                *o -= co * self.v.get2(i, c);
            }
        }
        let residual = Tensor::from_vec(&[m], out)?;
        let norm = residual.norm_l2();
        if norm < DEGENERATE_TOL {
            return Err(Error::DegenerateDirection(format!(
                "direction lies in the span of the first {} singular vectors (residual {:.3e})",
                r, norm
            )));
        }
        Ok(residual.scale(1.0 / norm))
    }

    /// Unit direction of the component of `v` inside the leading singular
    /// span; complements [`JacobianSvd::project_null`].
    pub fn project_normal(&self, v: &Tensor, rank_cut: Option<usize>) -> Result<Tensor> {
        let r = self.resolve_rank(rank_cut)?;
        let unit = v.normalized()?;
        let coeff = self.coefficients(&unit, r);
        let m = self.v.rows();
        let mut out = vec![0.0; m];
        for (c, &co) in coeff.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                *o += co * self.v.get2(i, c);
            }
        }
        let projected = Tensor::from_vec(&[m], out)?;
        let norm = projected.norm_l2();
        if norm < DEGENERATE_TOL {
            return Err(Error::DegenerateDirection(format!(
                "direction is orthogonal to the first {} singular vectors (norm {:.3e})",
                r, norm
            )));
        }
        Ok(projected.scale(1.0 / norm))
    }

    /// Fraction of `v`'s energy inside the leading singular span.
    pub fn normal_energy_fraction(&self, v: &Tensor, rank_cut: Option<usize>) -> Result<f64> {
        let r = self.resolve_rank(rank_cut)?;
        let unit = v.normalized()?;
        let coeff = self.coefficients(&unit, r);
        Ok(coeff.iter().map(|c| c * c).sum())
    }

    /// `J * w` without materializing J again.
    pub fn apply_jacobian(&self, w: &Tensor) -> Result<Tensor> {
        let m = self.v.rows();
        let n = self.s.len();
        if w.len() != m {
            return Err(Error::dim(
                "apply_jacobian",
                format!("direction length {} vs {}", w.len(), m),
            ));
        }
        // J w = U diag(s) V^T w
        let coeff = self.coefficients(w, n);
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            for (c, &co) in coeff.iter().enumerate() {
                *o += self.u.get2(i, c) * self.s.data()[c] * co;
            }
        }
        Tensor::from_vec(&[n], out)
    }
}

/// Data behind `svd-report.json` and the spectrum CSV.
#[derive(Debug, Clone)]
pub struct SvdReport {
    pub sigma: Vec<f64>,
    pub effective_rank: usize,
    pub sigma_max: f64,
    pub anchor_checksum: String,
}

pub fn svd_report(svd: &JacobianSvd) -> SvdReport {
    SvdReport {
        sigma: svd.s.data().to_vec(),
        effective_rank: svd.effective_rank(),
        sigma_max: svd.sigma_max,
        anchor_checksum: svd.anchor_checksum(),
    }
}
