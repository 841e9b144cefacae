//! Signed distances to ellipsoid and cuboid primitives.
//!
//! Plain `f64` evaluators (exact, used by generators, metrics and tests)
//! and batched graph versions (used inside losses, with small clamp floors
//! that keep gradients finite near the non-smooth loci).

use alloc::vec;

use crate::error::CoreError;
use crate::fit::{PrimitiveKind, PrimitiveParams, PrimitiveVars};
use crate::graph::{Graph, Var};
use crate::mat3::{self, Vec3};
use crate::tensor::Tensor;

/// Region around the ellipsoid center where the approximate SDF is 0/0;
/// there the batched evaluator returns `-min(semi_axes)` with zero
/// gradient.
pub const ELLIPSOID_CENTER_EPS: f64 = 1e-6;

/// Local-frame coordinates `p = Vᵀ(x − μ)`.
pub fn to_local(x: &Vec3, prim: &PrimitiveParams) -> Vec3 {
    let d = mat3::sub(x, &prim.center);
    mat3::matvec(&mat3::transpose(&prim.rotation), &d)
}

/// World coordinates from local: `x = V·p + μ`.
pub fn to_world(p: &Vec3, prim: &PrimitiveParams) -> Vec3 {
    mat3::add(&mat3::matvec(&prim.rotation, p), &prim.center)
}

/// Approximate ellipsoid signed distance `k₁(k₁−1)/k₂` in the local frame.
/// Exact for spheres. Returns `-min(semi_axes)` inside the tiny central
/// region where the formula degenerates.
pub fn ellipsoid_sdf(p: &Vec3, semi_axes: &Vec3) -> f64 {
    let mut k1sq = 0.0;
    let mut k2sq = 0.0;
    for i in 0..3 {
        let r1 = p[i] / semi_axes[i];
        let r2 = p[i] / (semi_axes[i] * semi_axes[i]);
        k1sq += r1 * r1;
        k2sq += r2 * r2;
    }
    let k1 = libm::sqrt(k1sq);
    if k1 < ELLIPSOID_CENTER_EPS {
        return -semi_axes[0].min(semi_axes[1]).min(semi_axes[2]);
    }
    let k2 = libm::sqrt(k2sq).max(1e-12);
    k1 * (k1 - 1.0) / k2
}

/// Exact Euclidean signed distance to a box with the given half-extents,
/// in the local frame.
pub fn cuboid_sdf(p: &Vec3, half_extents: &Vec3) -> f64 {
    let q = [
        libm::fabs(p[0]) - half_extents[0],
        libm::fabs(p[1]) - half_extents[1],
        libm::fabs(p[2]) - half_extents[2],
    ];
    let qp = [q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)];
    let outside = libm::sqrt(qp[0] * qp[0] + qp[1] * qp[1] + qp[2] * qp[2]);
    let inside = q[0].max(q[1]).max(q[2]).min(0.0);
    outside + inside
}

/// Signed distance of a world-space point to a primitive.
pub fn signed_distance(x: &Vec3, prim: &PrimitiveParams) -> f64 {
    let p = to_local(x, prim);
    match prim.kind {
        PrimitiveKind::Ellipsoid => ellipsoid_sdf(&p, &prim.semi_axes),
        PrimitiveKind::Cuboid => cuboid_sdf(&p, &prim.semi_axes),
    }
}

/// Exact inside test (not the approximate SDF sign).
pub fn is_inside(x: &Vec3, prim: &PrimitiveParams) -> bool {
    let p = to_local(x, prim);
    match prim.kind {
        PrimitiveKind::Ellipsoid => {
            let mut s = 0.0;
            for i in 0..3 {
                let r = p[i] / prim.semi_axes[i];
                s += r * r;
            }
            s < 1.0
        }
        PrimitiveKind::Cuboid => (0..3).all(|i| libm::fabs(p[i]) < prim.semi_axes[i]),
    }
}

// ----- batched graph versions -----

/// Local-frame coordinates of a batch of world points (P×3 node):
/// `(X − μ)·V`, differentiable w.r.t. the points and the primitive.
pub fn to_local_batch(
    graph: &mut Graph,
    x_world: Var,
    prim: &PrimitiveVars,
) -> Result<Var, CoreError> {
    let centered = graph.sub_row(x_world, prim.center)?;
    graph.matmul(centered, prim.rotation)
}

/// Batched approximate ellipsoid SDF of local points (P×3) under semi-axes
/// (length-3 node). Returns a length-P node.
pub fn ellipsoid_sdf_batch(
    graph: &mut Graph,
    local: Var,
    semi_axes: Var,
) -> Result<Var, CoreError> {
    let p = graph.value(local).rows();

    let ratio1 = graph.div_row(local, semi_axes)?;
    let sq_axes = graph.mul(semi_axes, semi_axes)?;
    let ratio2 = graph.div_row(local, sq_axes)?;

    let r1sq = graph.mul(ratio1, ratio1)?;
    let k1sq = graph.sum_axis(r1sq, 1)?;
    let r2sq = graph.mul(ratio2, ratio2)?;
    let k2sq = graph.sum_axis(r2sq, 1)?;

    let k1sq_f = graph.clamp(k1sq, 1e-24, f64::INFINITY)?;
    let k2sq_f = graph.clamp(k2sq, 1e-24, f64::INFINITY)?;
    let k1 = graph.sqrt(k1sq_f)?;
    let k2 = graph.sqrt(k2sq_f)?;

    let k1m1 = graph.add_scalar(k1, -1.0)?;
    let num = graph.mul(k1, k1m1)?;
    let formula = graph.div(num, k2)?;

    // central-region mask, constant for this forward pass
    let k1_vals = graph.value(k1).data().to_vec();
    let semi = graph.value(semi_axes).data();
    let min_axis = semi[0].min(semi[1]).min(semi[2]);
    let mut keep = vec![1.0; p];
    let mut fallback = vec![0.0; p];
    let mut any_central = false;
    for i in 0..p {
        if k1_vals[i] < ELLIPSOID_CENTER_EPS {
            keep[i] = 0.0;
            fallback[i] = -min_axis;
            any_central = true;
        }
    }
    if !any_central {
        return Ok(formula);
    }
    let keep_c = graph.constant(Tensor::vector(keep));
    let fallback_c = graph.constant(Tensor::vector(fallback));
    let masked = graph.mul(formula, keep_c)?;
    graph.add(masked, fallback_c)
}

/// Batched exact cuboid SDF of local points (P×3) under half-extents
/// (length-3 node). Returns a length-P node. The outside-norm square root
/// is floored at 1e-24, which perturbs interior values by at most 1e-12.
pub fn cuboid_sdf_batch(
    graph: &mut Graph,
    local: Var,
    half_extents: Var,
) -> Result<Var, CoreError> {
    let abs_p = graph.abs(local)?;
    let q = graph.sub_row(abs_p, half_extents)?;
    let q_plus = graph.clamp(q, 0.0, f64::INFINITY)?;
    let qp_sq = graph.mul(q_plus, q_plus)?;
    let sumsq = graph.sum_axis(qp_sq, 1)?;
    let sumsq_f = graph.clamp(sumsq, 1e-24, f64::INFINITY)?;
    let outside = graph.sqrt(sumsq_f)?;
    let q_max = graph.max_axis(q, 1)?;
    let inside = graph.clamp(q_max, f64::NEG_INFINITY, 0.0)?;
    graph.add(outside, inside)
}

/// Batched SDF dispatching on the primitive kind.
pub fn sdf_batch(
    graph: &mut Graph,
    x_world: Var,
    prim: &PrimitiveVars,
    kind: PrimitiveKind,
) -> Result<Var, CoreError> {
    let local = to_local_batch(graph, x_world, prim)?;
    match kind {
        PrimitiveKind::Ellipsoid => ellipsoid_sdf_batch(graph, local, prim.semi_axes),
        PrimitiveKind::Cuboid => cuboid_sdf_batch(graph, local, prim.semi_axes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec::Vec;

    #[test]
    fn sphere_surface_point_is_zero() {
        assert!(ellipsoid_sdf(&[1.0, 0.0, 0.0], &[1.0; 3]).abs() < 1e-15);
    }

    #[test]
    fn sphere_hand_cases() {
        // k1 = k2 = 2 at (2,0,0)
        assert!((ellipsoid_sdf(&[2.0, 0.0, 0.0], &[1.0; 3]) - 1.0).abs() < 1e-15);
        // k1 = k2 = 0.5 at (0.5,0,0)
        assert!((ellipsoid_sdf(&[0.5, 0.0, 0.0], &[1.0; 3]) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn sphere_sdf_equals_norm_minus_radius() {
        let mut r = rng::stream(1, "sdf-sphere");
        for _ in 0..200 {
            let p = [
                rng::normal(&mut r),
                rng::normal(&mut r),
                rng::normal(&mut r),
            ];
            let n = mat3::norm(&p);
            if n < 1e-3 {
                continue;
            }
            let radius = rng::uniform_in(&mut r, 0.3, 2.0);
            let sd = ellipsoid_sdf(&p, &[radius; 3]);
            assert!((sd - (n - radius)).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipsoid_center_returns_min_axis() {
        let sd = ellipsoid_sdf(&[0.0; 3], &[2.0, 1.0, 0.5]);
        assert_eq!(sd, -0.5);
    }

    #[test]
    fn cuboid_hand_cases() {
        let s = [1.0; 3];
        assert!((cuboid_sdf(&[2.0, 0.0, 0.0], &s) - 1.0).abs() < 1e-15);
        assert!((cuboid_sdf(&[0.0, 0.0, 0.0], &s) + 1.0).abs() < 1e-15);
        assert_eq!(cuboid_sdf(&[1.0, 1.0, 1.0], &s), 0.0);
    }

    #[test]
    fn to_local_round_trip() {
        let mut r = rng::stream(9, "local");
        // rotation from svd of a random matrix
        let mut m = [0.0; 9];
        for x in &mut m {
            *x = rng::normal(&mut r);
        }
        let rot = crate::svd3::svd3(&m).unwrap().v;
        let prim = PrimitiveParams::ellipsoid([0.4, -0.3, 0.9], rot, [2.0, 1.0, 0.5]);
        for _ in 0..50 {
            let x = [
                rng::normal(&mut r),
                rng::normal(&mut r),
                rng::normal(&mut r),
            ];
            let p = to_local(&x, &prim);
            let back = to_world(&p, &prim);
            for k in 0..3 {
                assert!((back[k] - x[k]).abs() < 1e-12);
            }
        }
        assert_eq!(to_local(&prim.center.clone(), &prim), [0.0; 3]);
    }

    #[test]
    fn sdf_sign_matches_exact_membership() {
        let mut r = rng::stream(21, "sign");
        for _ in 0..1000 {
            let kind = if rng::uniform(&mut r) < 0.5 {
                PrimitiveKind::Ellipsoid
            } else {
                PrimitiveKind::Cuboid
            };
            let mut m = [0.0; 9];
            for x in &mut m {
                *x = rng::normal(&mut r);
            }
            let rot = crate::svd3::svd3(&m).unwrap().v;
            let prim = PrimitiveParams {
                kind,
                center: [
                    rng::normal(&mut r) * 0.5,
                    rng::normal(&mut r) * 0.5,
                    rng::normal(&mut r) * 0.5,
                ],
                rotation: rot,
                semi_axes: [
                    rng::uniform_in(&mut r, 0.3, 2.0),
                    rng::uniform_in(&mut r, 0.3, 2.0),
                    rng::uniform_in(&mut r, 0.3, 2.0),
                ],
            };
            let x = [
                rng::normal(&mut r) * 1.5,
                rng::normal(&mut r) * 1.5,
                rng::normal(&mut r) * 1.5,
            ];
            let sd = signed_distance(&x, &prim);
            if sd.abs() < 1e-9 {
                continue; // on the surface, either answer fine
            }
            assert_eq!(sd < 0.0, is_inside(&x, &prim));
        }
    }

    #[test]
    fn batched_matches_plain_for_both_kinds() {
        let mut r = rng::stream(2, "batch");
        let prim = PrimitiveParams::ellipsoid([0.2, 0.1, -0.3], mat3::IDENTITY, [1.5, 1.0, 0.7]);
        let n = 64;
        let mut flat = Vec::with_capacity(n * 3);
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            let p = [
                rng::normal(&mut r),
                rng::normal(&mut r),
                rng::normal(&mut r),
            ];
            flat.extend_from_slice(&p);
            pts.push(p);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(n, 3, flat).unwrap());
        let center = g.leaf(Tensor::vector(prim.center.to_vec()));
        let rotation = g.leaf(Tensor::matrix(3, 3, prim.rotation.to_vec()).unwrap());
        let semi = g.leaf(Tensor::vector(prim.semi_axes.to_vec()));
        let vars = PrimitiveVars {
            center,
            rotation,
            semi_axes: semi,
        };
        for kind in [PrimitiveKind::Ellipsoid, PrimitiveKind::Cuboid] {
            let sd = sdf_batch(&mut g, x, &vars, kind).unwrap();
            let vals = g.value(sd).data();
            for (i, p) in pts.iter().enumerate() {
                let mut prim_k = prim.clone();
                prim_k.kind = kind;
                let expect = signed_distance(p, &prim_k);
                assert!(
                    (vals[i] - expect).abs() < 1e-10,
                    "{kind:?} point {i}: {} vs {expect}",
                    vals[i]
                );
            }
        }
    }
}
