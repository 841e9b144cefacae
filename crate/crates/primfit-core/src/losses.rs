//! Training objectives: bidirectional reconstruction (coverage + fit),
//! pairwise intersection, embedding similarity, cross-entropy, and their
//! weighted combination.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::fit::{PrimitiveParams, PrimitiveVars};
use crate::graph::{Graph, Var};
use crate::mat3::Vec3;
use crate::sdf;
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDA1: f64 = 0.001;
pub const DEFAULT_LAMBDA2: f64 = 2.0;
pub const DEFAULT_INTERIOR_SAMPLES: usize = 128;
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
        }
    }
}

/// Scalar values of every loss term for one shape. `sym` is zero outside
/// warmup and `ce` is zero on unlabeled shapes, so
/// `total = l1 + l2 + lambda1·inter + lambda2·sym + ce` always holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub recon: f64,
    pub inter: f64,
    pub sym: f64,
    pub ce: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Graph handles of the per-shape loss terms before combination.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub l1: Var,
    pub l2: Var,
    pub inter: Var,
    pub sym: Option<Var>,
    pub ce: Option<Var>,
}

/// Coverage direction: Σᵢ min_m SD_m²(xᵢ). The min routes gradient to the
/// closest primitive only.
pub fn coverage_loss(
    g: &mut Graph,
    points: Var,
    prims: &[(PrimitiveParams, PrimitiveVars)],
) -> Result<Var, CoreError> {
    if prims.is_empty() {
        return Err(CoreError::empty("coverage_loss"));
    }
    let n = g.value(points).rows();
    let mut cols = Vec::with_capacity(prims.len());
    for (params, vars) in prims {
        let sd = sdf::sdf_batch(g, points, vars, params.kind)?;
        let sq = g.mul(sd, sd)?;
        cols.push(g.reshape(sq, alloc::vec![n, 1])?);
    }
    let mut stacked = cols[0];
    for &c in &cols[1..] {
        stacked = g.concat_cols(stacked, c)?;
    }
    let best = g.min_axis(stacked, 1)?;
    g.sum(best)
}

/// Fit direction: Σ over surface samples of the squared distance to the
/// nearest input point. Input points are constants; gradients reach the
/// primitives through the sample coordinates.
pub fn fit_loss(g: &mut Graph, points: &Tensor, samples: Var) -> Result<Var, CoreError> {
    if points.rows() == 0 || g.value(samples).rows() == 0 {
        return Err(CoreError::empty("fit_loss"));
    }
    let x_sq: Vec<f64> = (0..points.rows())
        .map(|i| (0..3).map(|j| points.at(i, j) * points.at(i, j)).sum())
        .collect();
    let x_sq = g.constant(Tensor::vector(x_sq));
    let xt = {
        let x = g.constant(points.clone());
        g.transpose(x)?
    };
    let p_sq = {
        let sq = g.mul(samples, samples)?;
        g.sum_axis(sq, 1)?
    };
    let cross = g.matmul(samples, xt)?;
    let cross = g.mul_scalar(cross, -2.0)?;
    let d2 = g.add_col(cross, p_sq)?;
    let d2 = g.add_row(d2, x_sq)?;
    let best = g.min_axis(d2, 1)?;
    g.sum(best)
}

/// Overlap penalty: interior samples of each primitive, evaluated under
/// every other primitive, contribute min(SD, 0)². The samples themselves
/// are constants.
pub fn intersection_loss(
    g: &mut Graph,
    prims: &[(PrimitiveParams, PrimitiveVars)],
    interior: &[Vec<Vec3>],
) -> Result<Var, CoreError> {
    if prims.len() != interior.len() {
        return Err(CoreError::shape("intersection_loss: primitive/sample count"));
    }
    let mut acc = g.constant_scalar(0.0);
    for (m, pts) in interior.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        let batch = g.constant(Tensor::matrix(pts.len(), 3, flat)?);
        for (j, (params, vars)) in prims.iter().enumerate() {
            if j == m {
                continue;
            }
            let sd = sdf::sdf_batch(g, batch, vars, params.kind)?;
            let neg = g.clamp(sd, f64::NEG_INFINITY, 0.0)?;
            let sq = g.mul(neg, neg)?;
            let s = g.sum(sq)?;
            acc = g.add(acc, s)?;
        }
    }
    Ok(acc)
}

/// Embedding anti-collapse term: Σ_{i≠j} (1 + gᵢ·gⱼ)² over ordered pairs.
pub fn similarity_loss(g: &mut Graph, embeddings: Var) -> Result<Var, CoreError> {
    let n = g.value(embeddings).rows();
    if n == 0 {
        return Err(CoreError::empty("similarity_loss"));
    }
    let gt = g.transpose(embeddings)?;
    let gram = g.matmul(embeddings, gt)?;
    let shifted = g.add_scalar(gram, 1.0)?;
    let sq = g.mul(shifted, shifted)?;
    let mut mask = Tensor::filled(alloc::vec![n, n], 1.0);
    for i in 0..n {
        mask.set(i, i, 0.0);
    }
    let mask = g.constant(mask);
    let off_diag = g.mul(sq, mask)?;
    g.sum(off_diag)
}

/// Mean over points of −log p[label], probabilities floored at 1e-12.
pub fn cross_entropy(g: &mut Graph, probs: Var, labels: &[usize]) -> Result<Var, CoreError> {
    let t = g.value(probs);
    if t.rows() != labels.len() {
        return Err(CoreError::shape("cross_entropy: label count"));
    }
    if labels.iter().any(|&l| l >= t.cols()) {
        return Err(CoreError::invalid("cross_entropy: label out of range"));
    }
    let picked = g.gather_per_row(probs, labels)?;
    let floored = g.clamp(picked, PROB_FLOOR, f64::INFINITY)?;
    let logs = g.log(floored)?;
    let m = g.mean(logs)?;
    g.neg(m)
}

/// Combine per-shape terms: `recon + λ₁·inter [+ λ₂·sym during warmup]
/// [+ ce when labeled]`. Returns the total node plus a value snapshot.
pub fn total_loss(
    g: &mut Graph,
    terms: &LossTerms,
    weights: &LossWeights,
    warmup: bool,
    labeled: bool,
) -> Result<(Var, LossBreakdown), CoreError> {
    let recon = g.add(terms.l1, terms.l2)?;
    let weighted_inter = g.mul_scalar(terms.inter, weights.lambda1)?;
    let mut total = g.add(recon, weighted_inter)?;
    let mut sym_val = 0.0;
    if warmup {
        if let Some(sym) = terms.sym {
            let weighted = g.mul_scalar(sym, weights.lambda2)?;
            total = g.add(total, weighted)?;
            sym_val = g.value(sym).scalar_value();
        }
    }
    let mut ce_val = 0.0;
    if labeled {
        if let Some(ce) = terms.ce {
            total = g.add(total, ce)?;
            ce_val = g.value(ce).scalar_value();
        }
    }
    let breakdown = LossBreakdown {
        l1: g.value(terms.l1).scalar_value(),
        l2: g.value(terms.l2).scalar_value(),
        recon: g.value(recon).scalar_value(),
        inter: g.value(terms.inter).scalar_value(),
        sym: sym_val,
        ce: ce_val,
        total: g.value(total).scalar_value(),
        lambda1: weights.lambda1,
        lambda2: weights.lambda2,
    };
    if !breakdown.total.is_finite() {
        return Err(CoreError::non_finite("total loss"));
    }
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::PrimitiveKind;
    use crate::mat3;
    use crate::rng;
    use crate::sample;

    fn vars_for(g: &mut Graph, p: &PrimitiveParams) -> PrimitiveVars {
        PrimitiveVars {
            center: g.leaf(Tensor::vector(p.center.to_vec())),
            rotation: g.leaf(Tensor::matrix(3, 3, p.rotation.to_vec()).unwrap()),
            semi_axes: g.leaf(Tensor::vector(p.semi_axes.to_vec())),
        }
    }

    fn sphere_at(x: f64, r: f64) -> PrimitiveParams {
        PrimitiveParams::sphere([x, 0.0, 0.0], r)
    }

    fn scalar(g: &Graph, v: Var) -> f64 {
        g.value(v).scalar_value()
    }

    #[test]
    fn coverage_zero_on_surface_points() {
        let prim = sphere_at(0.0, 1.0);
        let mut g = Graph::new();
        let vars = vars_for(&mut g, &prim);
        let batch = sample::sample_surface(&mut g, &[(prim, vars)], 200, 3).unwrap();
        let pts = g.value(batch.points).clone();
        let x = g.constant(pts);
        let prim2 = sphere_at(0.0, 1.0);
        let l1 = coverage_loss(&mut g, x, &[(prim2, vars)]).unwrap();
        assert!(scalar(&g, l1).abs() < 1e-10);
    }

    #[test]
    fn coverage_single_point_distance_two() {
        let prim = sphere_at(0.0, 1.0);
        let mut g = Graph::new();
        let vars = vars_for(&mut g, &prim);
        let x = g.constant(Tensor::matrix(1, 3, vec![3.0, 0.0, 0.0]).unwrap());
        let l1 = coverage_loss(&mut g, x, &[(prim, vars)]).unwrap();
        assert!((scalar(&g, l1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn extra_primitive_never_increases_coverage() {
        let mut r = rng::stream(5, "cov-test");
        let near = sphere_at(0.0, 1.0);
        let far = sphere_at(10.0, 0.5);
        let pts: Vec<f64> = (0..60).map(|_| rng::uniform_in(&mut r, -2.0, 2.0)).collect();
        let mut g = Graph::new();
        let vn = vars_for(&mut g, &near);
        let vf = vars_for(&mut g, &far);
        let x = g.constant(Tensor::matrix(20, 3, pts).unwrap());
        let one = coverage_loss(&mut g, x, &[(near.clone(), vn)]).unwrap();
        let two = coverage_loss(&mut g, x, &[(near, vn), (far, vf)]).unwrap();
        assert!(scalar(&g, two) <= scalar(&g, one) + 1e-12);
    }

    #[test]
    fn fit_loss_zero_when_samples_equal_points() {
        let pts = Tensor::matrix(3, 3, vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0])
            .unwrap();
        let mut g = Graph::new();
        let s = g.constant(pts.clone());
        let l2 = fit_loss(&mut g, &pts, s).unwrap();
        assert!(scalar(&g, l2).abs() < 1e-12);
    }

    #[test]
    fn fit_loss_single_offset_sample() {
        let pts = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let mut g = Graph::new();
        let s = g.constant(Tensor::matrix(1, 3, vec![1.0, 0.0, 0.0]).unwrap());
        let l2 = fit_loss(&mut g, &pts, s).unwrap();
        assert!((scalar(&g, l2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shrinking_spurious_primitive_decreases_fit_loss() {
        // input surface near origin; a far-away sphere's samples are all far,
        // so d(L2)/d(semi_axes) must be positive (shrinking decreases L2)
        let prim = sphere_at(5.0, 1.0);
        let plan = sample::plan_surface_samples(&[prim.clone()], 100, 11).unwrap();
        let pts = Tensor::matrix(2, 3, vec![0.1, 0.0, 0.0, -0.1, 0.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let semi = g.leaf(Tensor::vector(vec![1.0, 1.0, 1.0]));
        let vars = PrimitiveVars {
            center: g.leaf(Tensor::vector(vec![5.0, 0.0, 0.0])),
            rotation: g.leaf(Tensor::matrix(3, 3, mat3::IDENTITY.to_vec()).unwrap()),
            semi_axes: semi,
        };
        let batch = sample::inject_surface_samples(&mut g, &[vars], &plan).unwrap();
        let l2 = fit_loss(&mut g, &pts, batch.points).unwrap();
        let grads = g.backward(l2).unwrap();
        let gs = grads.wrt_or_zeros(semi);
        assert!(gs.data().iter().all(|&d| d > 0.0), "{:?}", gs.data());
    }

    #[test]
    fn disjoint_spheres_no_intersection() {
        let a = sphere_at(-3.0, 1.0);
        let b = sphere_at(3.0, 1.0);
        let ia = sample::sample_inside(&a, 64, 1).unwrap();
        let ib = sample::sample_inside(&b, 64, 2).unwrap();
        let mut g = Graph::new();
        let va = vars_for(&mut g, &a);
        let vb = vars_for(&mut g, &b);
        let l = intersection_loss(&mut g, &[(a, va), (b, vb)], &[ia, ib]).unwrap();
        assert_eq!(scalar(&g, l), 0.0);
    }

    #[test]
    fn identical_spheres_overlap_positive() {
        let a = sphere_at(0.0, 1.0);
        let b = sphere_at(0.0, 1.0);
        let ia = sample::sample_inside(&a, 64, 1).unwrap();
        let ib = sample::sample_inside(&b, 64, 2).unwrap();
        let mut g = Graph::new();
        let va = vars_for(&mut g, &a);
        let vb = vars_for(&mut g, &b);
        let l = intersection_loss(&mut g, &[(a, va), (b, vb)], &[ia, ib]).unwrap();
        assert!(scalar(&g, l) > 0.0);
    }

    #[test]
    fn concentric_spheres_match_monte_carlo() {
        // samples in the unit sphere, each contributes (‖p‖ − 2)² under the
        // radius-2 sphere
        let small = sphere_at(0.0, 1.0);
        let big = sphere_at(0.0, 2.0);
        let inner = sample::sample_inside(&small, 2000, 3).unwrap();
        let mut g = Graph::new();
        let vs = vars_for(&mut g, &small);
        let vb = vars_for(&mut g, &big);
        let l = intersection_loss(
            &mut g,
            &[(small, vs), (big, vb)],
            &[inner.clone(), Vec::new()],
        )
        .unwrap();
        let got = scalar(&g, l);
        // independent Monte-Carlo estimate of N·E[(r−2)²] over the unit ball
        let mut r = rng::stream(99, "mc-oracle");
        let mut acc = 0.0;
        let mut n = 0;
        while n < 20_000 {
            let p = [
                rng::uniform_in(&mut r, -1.0, 1.0),
                rng::uniform_in(&mut r, -1.0, 1.0),
                rng::uniform_in(&mut r, -1.0, 1.0),
            ];
            let d = mat3::norm(&p);
            if d < 1.0 {
                acc += (d - 2.0) * (d - 2.0);
                n += 1;
            }
        }
        let oracle = inner.len() as f64 * acc / n as f64;
        assert!((got - oracle).abs() / oracle < 0.05, "got {got} oracle {oracle}");
        for p in &inner {
            let c = (mat3::norm(p) - 2.0).powi(2);
            assert!((1.0..=4.0).contains(&c));
        }
    }

    #[test]
    fn similarity_closed_forms() {
        let cases: Vec<(Vec<f64>, usize, f64)> = vec![
            (vec![1.0, 0.0, -1.0, 0.0], 2, 0.0),
            (vec![1.0, 0.0, 1.0, 0.0], 2, 8.0),
            (
                vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                3,
                6.0,
            ),
        ];
        for (data, n, want) in cases {
            let d = data.len() / n;
            let mut g = Graph::new();
            let e = g.constant(Tensor::matrix(n, d, data).unwrap());
            let l = similarity_loss(&mut g, e).unwrap();
            assert!((scalar(&g, l) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let mut g = Graph::new();
        // perfect one-hot
        let p = g.constant(Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
        let ce = cross_entropy(&mut g, p, &[0, 2]).unwrap();
        assert!(scalar(&g, ce) < 1e-11);
        // uniform over 4 classes
        let p = g.constant(Tensor::matrix(3, 4, vec![0.25; 12]).unwrap());
        let ce = cross_entropy(&mut g, p, &[0, 1, 3]).unwrap();
        assert!((scalar(&g, ce) - 4f64.ln()).abs() < 1e-12);
        // out-of-range label
        assert!(cross_entropy(&mut g, p, &[0, 1, 4]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = vec![0.3, -0.7, 1.1, 0.2, 0.5, -0.2];
        let labels = [2, 0];
        let eval = |vals: &[f64]| -> f64 {
            let mut g = Graph::new();
            let l = g.leaf(Tensor::matrix(2, 3, vals.to_vec()).unwrap());
            let p = g.softmax(l).unwrap();
            let ce = cross_entropy(&mut g, p, &labels).unwrap();
            scalar(&g, ce)
        };
        let mut g = Graph::new();
        let l = g.leaf(Tensor::matrix(2, 3, logits.clone()).unwrap());
        let p = g.softmax(l).unwrap();
        let ce = cross_entropy(&mut g, p, &labels).unwrap();
        let grads = g.backward(ce).unwrap();
        let an = grads.wrt_or_zeros(l);
        let h = 1e-6;
        for k in 0..6 {
            let mut plus = logits.clone();
            plus[k] += h;
            let mut minus = logits.clone();
            minus[k] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            assert!((fd - an.data()[k]).abs() < 1e-5);
        }
    }

    #[test]
    fn total_combination_rules() {
        let mut g = Graph::new();
        let terms = LossTerms {
            l1: g.constant_scalar(1.0),
            l2: g.constant_scalar(2.0),
            inter: g.constant_scalar(10.0),
            sym: Some(g.constant_scalar(0.5)),
            ce: Some(g.constant_scalar(0.25)),
        };
        let w = LossWeights::default();
        let (_, b) = total_loss(&mut g, &terms, &w, false, false).unwrap();
        assert!((b.total - (3.0 + 0.001 * 10.0)).abs() < 1e-12);
        assert_eq!(b.sym, 0.0);
        assert_eq!(b.ce, 0.0);
        let (_, b) = total_loss(&mut g, &terms, &w, true, true).unwrap();
        assert!((b.total - (3.0 + 0.01 + 2.0 * 0.5 + 0.25)).abs() < 1e-12);
        let zero = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
        };
        let (_, b) = total_loss(&mut g, &terms, &zero, true, true).unwrap();
        assert!((b.total - (3.0 + 0.25)).abs() < 1e-12);
        assert_eq!(b.recon, 3.0);
    }

    #[test]
    fn cuboid_losses_run() {
        let prim = PrimitiveParams {
            kind: PrimitiveKind::Cuboid,
            ..sphere_at(0.0, 1.0)
        };
        let mut g = Graph::new();
        let vars = vars_for(&mut g, &prim);
        let x = g.constant(Tensor::matrix(1, 3, vec![2.0, 0.0, 0.0]).unwrap());
        let l1 = coverage_loss(&mut g, x, &[(prim, vars)]).unwrap();
        assert!((scalar(&g, l1) - 1.0).abs() < 1e-12);
    }
}
