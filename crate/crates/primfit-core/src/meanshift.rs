//! Differentiable recurrent mean-shift clustering on the unit sphere of
//! embedding space: bandwidth estimation, von Mises-Fisher kernel
//! iterations, non-max-suppression center extraction and soft membership.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Bound on the argument of every `exp` in the kernel and membership
/// computations.
pub const EXP_CLAMP: f64 = 50.0;

/// Hard cap on the number of NMS centers.
pub const MAX_CENTERS: usize = 32;

#[derive(Debug, Clone)]
pub struct BandwidthConfig {
    /// Which nearest neighbor's distance is averaged (capped at N−1).
    pub neighbor_rank: usize,
    /// Mean-shift iteration count.
    pub iterations: usize,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        BandwidthConfig {
            neighbor_rank: 100,
            iterations: 10,
        }
    }
}

/// Cluster centers with the soft membership of every point.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    /// M×D unit-norm center embeddings (constants w.r.t. the graph).
    pub centers: Tensor,
    /// N×M row-stochastic membership, on the graph.
    pub membership: Var,
    /// Index of the source point each center came from.
    pub center_indices: Vec<usize>,
}

/// Mean distance from each embedding to its `neighbor_rank`-th nearest
/// neighbor (brute force; computed outside the gradient graph).
pub fn estimate_bandwidth(z: &Tensor, cfg: &BandwidthConfig) -> Result<f64, CoreError> {
    let n = z.rows();
    let d = z.cols();
    if n < 2 {
        return Err(CoreError::invalid("estimate_bandwidth: need at least 2 points"));
    }
    let rank = cfg.neighbor_rank.max(1).min(n - 1);
    let mut acc = 0.0;
    let mut dists = vec![0.0_f64; n - 1];
    for i in 0..n {
        let mut k = 0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut s = 0.0;
            for c in 0..d {
                let diff = z.at(i, c) - z.at(j, c);
                s += diff * diff;
            }
            dists[k] = libm::sqrt(s);
            k += 1;
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        acc += dists[rank - 1];
    }
    let b = acc / n as f64;
    if b <= 0.0 {
        return Err(CoreError::degenerate(
            "estimate_bandwidth: all embeddings identical; run similarity-loss warmup first",
        ));
    }
    Ok(b)
}

/// `iterations` recurrent mean-shift updates with the vMF kernel
/// `K = exp(G·Zᵀ/b²)`, re-normalizing rows to unit norm after every
/// iteration. Fully differentiable w.r.t. `z`.
pub fn meanshift_iterate(
    graph: &mut Graph,
    z: Var,
    bandwidth: f64,
    iterations: usize,
) -> Result<Var, CoreError> {
    if bandwidth <= 0.0 {
        return Err(CoreError::invalid("meanshift_iterate: bandwidth must be positive"));
    }
    let inv_b2 = 1.0 / (bandwidth * bandwidth);
    let zt = graph.transpose(z)?;
    let mut g = z;
    for _ in 0..iterations {
        let sim = graph.matmul(g, zt)?;
        let scaled = graph.mul_scalar(sim, inv_b2)?;
        // Subtracting the per-row max cancels in the degree normalization
        // (same stabilization as the membership softmax) but keeps the
        // clamp from flattening the kernel at small bandwidths, where
        // every argument would otherwise saturate at +EXP_CLAMP.
        let shift = {
            let s = graph.value(scaled);
            let mut m = vec![f64::NEG_INFINITY; s.rows()];
            for i in 0..s.rows() {
                for j in 0..s.cols() {
                    m[i] = m[i].max(s.at(i, j));
                }
            }
            let neg: Vec<f64> = m.iter().map(|v| -v).collect();
            graph.constant(Tensor::vector(neg))
        };
        let centered = graph.add_col(scaled, shift)?;
        let clamped = graph.clamp(centered, -EXP_CLAMP, EXP_CLAMP)?;
        let kernel = graph.exp(clamped)?;
        let degree = graph.sum_axis(kernel, 1)?;
        let inv_degree = graph.recip(degree)?;
        let kz = graph.matmul(kernel, z)?;
        let shifted = graph.scale_rows(kz, inv_degree)?;
        g = renormalize_rows(graph, shifted)?;
    }
    Ok(g)
}

/// Re-normalizes matrix rows to unit norm on the graph.
pub fn renormalize_rows(graph: &mut Graph, m: Var) -> Result<Var, CoreError> {
    let sq = graph.mul(m, m)?;
    let sums = graph.sum_axis(sq, 1)?;
    let floored = graph.clamp(sums, 1e-24, f64::INFINITY)?;
    let norms = graph.sqrt(floored)?;
    let inv = graph.recip(norms)?;
    graph.scale_rows(m, inv)
}

/// Non-max-suppression center extraction. Densities are neighbor counts
/// within radius `b` (self included) over the final shifted embeddings;
/// ties break toward the lower point index; at most [`MAX_CENTERS`]
/// highest-density centers are kept. Always yields at least one center.
pub fn nms_centers(g: &Tensor, bandwidth: f64) -> (Tensor, Vec<usize>) {
    let n = g.rows();
    let d = g.cols();
    let b2 = bandwidth * bandwidth;

    let mut within: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut density = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for c in 0..d {
                let diff = g.at(i, c) - g.at(j, c);
                s += diff * diff;
            }
            if s <= b2 {
                within[i].push(j);
            }
        }
        density[i] = within[i].len();
    }

    let mut alive = vec![true; n];
    let mut picked: Vec<usize> = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !alive[i] || density[i] < 2 {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b_idx) if density[i] > density[b_idx] => best = Some(i),
                _ => {}
            }
        }
        match best {
            Some(i) => {
                picked.push(i);
                for &j in &within[i] {
                    alive[j] = false;
                }
            }
            None => break,
        }
    }

    if picked.is_empty() {
        // every point isolated: fall back to the single densest point
        let mut best = 0;
        for i in 1..n {
            if density[i] > density[best] {
                best = i;
            }
        }
        picked.push(best);
    }

    if picked.len() > MAX_CENTERS {
        picked.sort_by(|&a, &b| density[b].cmp(&density[a]).then(a.cmp(&b)));
        picked.truncate(MAX_CENTERS);
    }

    let mut data = Vec::with_capacity(picked.len() * d);
    for &i in &picked {
        for c in 0..d {
            data.push(g.at(i, c));
        }
    }
    (
        Tensor::matrix(picked.len(), d, data).expect("nms center tensor"),
        picked,
    )
}

/// Soft membership `softmax(C·gᵢ)` rows. Centers enter as constants
/// (straight-through past NMS); gradients flow to `g` only. Logits are
/// clamped to ±[`EXP_CLAMP`] and the row max is subtracted inside the
/// softmax.
pub fn soft_membership(
    graph: &mut Graph,
    g: Var,
    centers: &Tensor,
) -> Result<Var, CoreError> {
    if centers.rows() == 0 {
        return Err(CoreError::empty("soft_membership: no centers"));
    }
    let centers_t = {
        let (m, d) = (centers.rows(), centers.cols());
        let mut data = vec![0.0; m * d];
        for i in 0..m {
            for j in 0..d {
                data[j * m + i] = centers.at(i, j);
            }
        }
        Tensor::matrix(d, m, data)?
    };
    let ct = graph.constant(centers_t);
    let logits = graph.matmul(g, ct)?;
    let clamped = graph.clamp(logits, -EXP_CLAMP, EXP_CLAMP)?;
    graph.softmax(clamped)
}

/// Full clustering step: mean-shift, NMS, soft membership.
pub fn cluster(
    graph: &mut Graph,
    z: Var,
    bandwidth: f64,
    iterations: usize,
) -> Result<(Var, ClusterAssignment), CoreError> {
    let g = meanshift_iterate(graph, z, bandwidth, iterations)?;
    let (centers, center_indices) = nms_centers(graph.value(g), bandwidth);
    let membership = soft_membership(graph, g, &centers)?;
    Ok((
        g,
        ClusterAssignment {
            centers,
            membership,
            center_indices,
        },
    ))
}

/// Plain (tape-free) mean-shift for inference paths where gradients are
/// not needed; bitwise-matches the graph version in double precision.
pub fn meanshift_plain(z: &Tensor, bandwidth: f64, iterations: usize) -> Tensor {
    let n = z.rows();
    let d = z.cols();
    let inv_b2 = 1.0 / (bandwidth * bandwidth);
    let mut g = z.clone();
    let mut next = Tensor::zeros(vec![n, d]);
    let mut scaled = vec![0.0; n];
    for _ in 0..iterations {
        for i in 0..n {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                let mut dot = 0.0;
                for c in 0..d {
                    dot += g.at(i, c) * z.at(j, c);
                }
                scaled[j] = dot * inv_b2;
                mx = mx.max(scaled[j]);
            }
            let mut row = vec![0.0; d];
            let mut degree = 0.0;
            for j in 0..n {
                let k = libm::exp((scaled[j] - mx).clamp(-EXP_CLAMP, EXP_CLAMP));
                degree += k;
                for c in 0..d {
                    row[c] += k * z.at(j, c);
                }
            }
            let mut norm_sq = 0.0;
            for c in 0..d {
                row[c] /= degree;
                norm_sq += row[c] * row[c];
            }
            let inv_norm = 1.0 / libm::sqrt(norm_sq.max(1e-24));
            for c in 0..d {
                next.set(i, c, row[c] * inv_norm);
            }
        }
        core::mem::swap(&mut g, &mut next);
    }
    g
}

/// Hard assignment: argmax over membership rows.
pub fn hard_assignment(membership: &Tensor) -> Vec<usize> {
    let (n, m) = (membership.rows(), membership.cols());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let mut best = 0;
        for j in 1..m {
            if membership.at(i, j) > membership.at(i, best) {
                best = j;
            }
        }
        out[i] = best;
    }
    out
}
