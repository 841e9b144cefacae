//! Fixed-size 3×3 singular value decomposition with an analytic,
//! numerically stabilized backward pass.
//!
//! The forward path eigendecomposes `MᵀM` with cyclic Jacobi rotations,
//! which is exact enough for the always-3×3 covariance matrices that show
//! up here and keeps the backward pass hand-checkable. Columns of `V` are
//! sign-canonicalized (largest-magnitude entry positive) so results are
//! deterministic across platforms.

use crate::error::CoreError;
use crate::mat3::{self, Mat3, Vec3};

/// Divisor floor for the stabilized `K` factor in the backward pass.
pub const SVD_BACKWARD_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Svd3Result {
    /// Left singular vectors, columns of a 3×3 orthogonal matrix.
    pub u: Mat3,
    /// Singular values, sorted descending, all nonnegative.
    pub s: Vec3,
    /// Right singular vectors, columns of a 3×3 orthogonal matrix.
    pub v: Mat3,
}

impl Svd3Result {
    /// `U·diag(s)·Vᵀ`, for reconstruction checks.
    pub fn reconstruct(&self) -> Mat3 {
        let mut us = self.u;
        for i in 0..3 {
            for j in 0..3 {
                us[i * 3 + j] *= self.s[j];
            }
        }
        mat3::matmul(&us, &mat3::transpose(&self.v))
    }

    /// Ratio of largest to smallest singular value; infinite when the
    /// smallest is zero.
    pub fn condition_number(&self) -> f64 {
        if self.s[2] <= 0.0 {
            f64::INFINITY
        } else {
            self.s[0] / self.s[2]
        }
    }
}

/// Eigendecomposition of a symmetric 3×3 matrix by cyclic Jacobi sweeps.
/// Returns (eigenvalues, eigenvector matrix with eigenvectors as columns),
/// unsorted.
fn jacobi_eig_sym(a: &Mat3) -> (Vec3, Mat3) {
    let mut a = *a;
    let mut v = mat3::IDENTITY;
    let scale: f64 = a.iter().fold(0.0_f64, |m, &x| m.max(libm::fabs(x))).max(1e-300);

    for _sweep in 0..64 {
        let off = libm::fabs(a[1]).max(libm::fabs(a[2])).max(libm::fabs(a[5]));
        if off < 1e-16 * scale {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p * 3 + q];
            if libm::fabs(apq) < 1e-300 {
                continue;
            }
            let app = a[p * 3 + p];
            let aqq = a[q * 3 + q];
            let theta = (aqq - app) / (2.0 * apq);
            let t = if libm::fabs(theta) > 1e154 {
                1.0 / (2.0 * theta)
            } else {
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                sign / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0))
            };
            let c = 1.0 / libm::sqrt(t * t + 1.0);
            let s = t * c;

            // rotate rows/cols p and q of A
            for k in 0..3 {
                let akp = a[k * 3 + p];
                let akq = a[k * 3 + q];
                a[k * 3 + p] = c * akp - s * akq;
                a[k * 3 + q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p * 3 + k];
                let aqk = a[q * 3 + k];
                a[p * 3 + k] = c * apk - s * aqk;
                a[q * 3 + k] = s * apk + c * aqk;
            }
            for k in 0..3 {
                let vkp = v[k * 3 + p];
                let vkq = v[k * 3 + q];
                v[k * 3 + p] = c * vkp - s * vkq;
                v[k * 3 + q] = s * vkp + c * vkq;
            }
        }
    }
    ([a[0], a[4], a[8]], v)
}

/// SVD of an arbitrary 3×3 matrix.
pub fn svd3(m: &Mat3) -> Result<Svd3Result, CoreError> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::non_finite("svd3 input"));
    }
    let mtm = mat3::matmul(&mat3::transpose(m), m);
    let (eigvals, eigvecs) = jacobi_eig_sym(&mtm);

    // sort descending
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eigvals[j].partial_cmp(&eigvals[i]).unwrap());

    let mut s = [0.0; 3];
    let mut v = [0.0; 9];
    for (col, &src) in order.iter().enumerate() {
        s[col] = libm::sqrt(eigvals[src].max(0.0));
        for row in 0..3 {
            v[row * 3 + col] = eigvecs[row * 3 + src];
        }
    }
    // σ below the accuracy limit of the MᵀM eigensolve is pure rounding
    // noise; truncate so rank-deficient inputs come out exactly rank-deficient
    for col in 1..3 {
        if s[col] <= 1e-7 * s[0] {
            s[col] = 0.0;
        }
    }

    // sign convention: largest-magnitude entry of each V column positive
    for col in 0..3 {
        let mut best = 0;
        for row in 1..3 {
            if libm::fabs(v[row * 3 + col]) > libm::fabs(v[best * 3 + col]) {
                best = row;
            }
        }
        if v[best * 3 + col] < 0.0 {
            for row in 0..3 {
                v[row * 3 + col] = -v[row * 3 + col];
            }
        }
    }

    // U columns: M·v_i / σ_i, re-orthonormalized in order (tiny σ make the
    // raw direction noisy), with orthogonal completion for zero σ
    let mut u = [0.0; 9];
    let mut filled = [false; 3];
    for col in 0..3 {
        if s[col] > 1e-12 * s[0].max(1.0) {
            let vc = [v[col], v[3 + col], v[6 + col]];
            let mv = mat3::matvec(m, &vc);
            let mut cand = mat3::scale(&mv, 1.0 / s[col]);
            for prev in 0..col {
                if !filled[prev] {
                    continue;
                }
                let pv = [u[prev], u[3 + prev], u[6 + prev]];
                let d = mat3::dot(&cand, &pv);
                for k in 0..3 {
                    cand[k] -= d * pv[k];
                }
            }
            let n = mat3::norm(&cand);
            if n > 1e-8 {
                let cand = mat3::scale(&cand, 1.0 / n);
                u[col] = cand[0];
                u[3 + col] = cand[1];
                u[6 + col] = cand[2];
                filled[col] = true;
            }
        }
    }
    complete_orthonormal(&mut u, &filled);

    Ok(Svd3Result { u, s, v })
}

/// Fill unfilled columns of `u` with unit vectors orthogonal to the filled
/// ones (Gram-Schmidt against the standard basis).
fn complete_orthonormal(u: &mut Mat3, filled: &[bool; 3]) {
    let mut have: heapless_vec::ColVec = heapless_vec::ColVec::new();
    for col in 0..3 {
        if filled[col] {
            have.push([u[col], u[3 + col], u[6 + col]]);
        }
    }
    for col in 0..3 {
        if filled[col] {
            continue;
        }
        let mut picked = [0.0; 3];
        for basis in 0..3 {
            let mut cand = [0.0; 3];
            cand[basis] = 1.0;
            for h in have.iter() {
                let d = mat3::dot(&cand, h);
                for k in 0..3 {
                    cand[k] -= d * h[k];
                }
            }
            let n = mat3::norm(&cand);
            if n > 1e-6 {
                picked = mat3::scale(&cand, 1.0 / n);
                break;
            }
        }
        u[col] = picked[0];
        u[3 + col] = picked[1];
        u[6 + col] = picked[2];
        have.push(picked);
    }
}

/// Tiny fixed-capacity vector so the completion code stays alloc-free.
mod heapless_vec {
    pub struct ColVec {
        items: [[f64; 3]; 3],
        len: usize,
    }
    impl ColVec {
        pub fn new() -> Self {
            ColVec {
                items: [[0.0; 3]; 3],
                len: 0,
            }
        }
        pub fn push(&mut self, v: [f64; 3]) {
            self.items[self.len] = v;
            self.len += 1;
        }
        pub fn iter(&self) -> impl Iterator<Item = &[f64; 3]> {
            self.items[..self.len].iter()
        }
    }
}

/// Analytic backward pass through [`svd3`].
///
/// Computes `∂L/∂M` from the cotangents of the singular values and of `V`,
/// treating `U` as outside the graph (`∂L/∂U = 0`). The pairwise factor is
/// stabilized as `K_ij = 1/(σᵢ+σⱼ) · sign(σᵢ−σⱼ)/max(|σᵢ−σⱼ|, ε)` with
/// `ε = 1e-6` (the `σᵢ+σⱼ` divisor is floored at the same ε), so the output
/// is finite for any input, including repeated singular values.
pub fn svd3_backward(res: &Svd3Result, dl_ds: &Vec3, dl_dv: &Mat3) -> Mat3 {
    let s = &res.s;
    let eps = SVD_BACKWARD_EPS;

    // K with the stabilized off-diagonal entries
    let mut k = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let diff = s[i] - s[j];
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            k[i * 3 + j] =
                1.0 / (s[i] + s[j]).max(eps) * sign / libm::fabs(diff).max(eps);
        }
    }

    // first term: U·(dL/dΣ)_diag·Vᵀ
    let mut term1 = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for d in 0..3 {
                acc += res.u[i * 3 + d] * dl_ds[d] * res.v[j * 3 + d];
            }
            term1[i * 3 + j] = acc;
        }
    }

    // second term: 2·U·Σ·(Kᵀ∘(Vᵀ·dL/dV))_sym·Vᵀ
    let vt_dv = mat3::matmul(&mat3::transpose(&res.v), dl_dv);
    let mut inner = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            inner[i * 3 + j] = k[j * 3 + i] * vt_dv[i * 3 + j];
        }
    }
    let mut sym = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            sym[i * 3 + j] = 0.5 * (inner[i * 3 + j] + inner[j * 3 + i]);
        }
    }
    let mut usig = res.u;
    for i in 0..3 {
        for j in 0..3 {
            usig[i * 3 + j] *= s[j];
        }
    }
    let term2 = mat3::matmul(&mat3::matmul(&usig, &sym), &mat3::transpose(&res.v));

    let mut out = [0.0; 9];
    for i in 0..9 {
        out[i] = term1[i] + 2.0 * term2[i];
    }
    out
}
