//! Near-uniform surface and interior sampling of fitted primitives.
//!
//! Surface points are drawn outside the gradient graph (Jacobian rejection
//! in the (u,v) parametric domain for ellipsoids, per-face area sampling
//! for cuboids), then the unit-shape coordinates are reinjected as
//! constants so that gradients flow to the semi-axes, rotation and center
//! while the sampling parameters stay fixed.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::fit::{PrimitiveKind, PrimitiveParams, PrimitiveVars};
use crate::graph::{Graph, Var};
use crate::mat3::Vec3;
use crate::rng;
use crate::sdf;
use crate::tensor::Tensor;

pub const DEFAULT_SURFACE_SAMPLES: usize = 10_000;

fn sq(x: f64) -> f64 {
    x * x
}

/// Sampling decisions made outside the graph: per-primitive counts plus the
/// unit-shape coordinates of every sample. Reinjecting the same plan
/// reproduces the same points, which keeps finite-difference checks exact.
#[derive(Debug, Clone)]
pub struct SurfacePlan {
    /// Per-primitive k×3 unit coordinates: (cos u sin v, sin u sin v, cos v)
    /// for ellipsoids, the unit-cube face point for cuboids.
    pub unit_coords: Vec<Tensor>,
    pub counts: Vec<usize>,
    pub source_primitive: Vec<usize>,
    pub params_uv: Vec<[f64; 2]>,
}

/// Surface samples on the graph.
#[derive(Debug, Clone)]
pub struct SurfaceSampleBatch {
    /// P×3 world coordinates, differentiable w.r.t. primitive parameters.
    pub points: Var,
    pub source_primitive: Vec<usize>,
    pub params_uv: Vec<[f64; 2]>,
    pub counts: Vec<usize>,
}

/// Largest-remainder allocation of `total` samples proportional to areas.
pub fn allocate_counts(areas: &[f64], total: usize) -> Result<Vec<usize>, CoreError> {
    if areas.is_empty() {
        return Err(CoreError::empty("allocate_counts"));
    }
    let sum: f64 = areas.iter().sum();
    if !(sum > 0.0) || areas.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(CoreError::invalid("allocate_counts: total area must be positive"));
    }
    let quotas: Vec<f64> = areas.iter().map(|a| a / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = quotas[i] - libm::floor(quotas[i]);
        let rj = quotas[j] - libm::floor(quotas[j]);
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    for k in 0..total - assigned {
        counts[order[k % order.len()]] += 1;
    }
    Ok(counts)
}

fn ellipsoid_unit_coords(
    semi: &Vec3,
    count: usize,
    r: &mut rng::Rng,
) -> (Vec<f64>, Vec<[f64; 2]>) {
    let (a, b, c) = (semi[0], semi[1], semi[2]);
    let g_max = (a * b).max(b * c).max(a * c);
    let mut coords = Vec::with_capacity(3 * count);
    let mut uv = Vec::with_capacity(count);
    while uv.len() < count {
        let u = rng::uniform_in(r, -core::f64::consts::PI, core::f64::consts::PI);
        let cos_v = rng::uniform_in(r, -1.0, 1.0);
        let v = libm::acos(cos_v.clamp(-1.0, 1.0));
        let (su, cu) = (libm::sin(u), libm::cos(u));
        let sv = libm::sin(v);
        // area element over the (u, cos v) measure; bounded by the largest
        // pairwise semi-axis product
        let g2 = sq(b * c * cu * sv) + sq(a * c * su * sv) + sq(a * b * cos_v);
        if rng::uniform(r) * g_max > libm::sqrt(g2) {
            continue;
        }
        coords.push(cu * sv);
        coords.push(su * sv);
        coords.push(cos_v);
        uv.push([u, v]);
    }
    (coords, uv)
}

fn cuboid_unit_coords(
    half: &Vec3,
    count: usize,
    r: &mut rng::Rng,
) -> (Vec<f64>, Vec<[f64; 2]>) {
    let (sx, sy, sz) = (half[0], half[1], half[2]);
    // two faces per axis pair
    let face_areas = [sy * sz, sx * sz, sx * sy];
    let total: f64 = 2.0 * face_areas.iter().sum::<f64>();
    let mut coords = Vec::with_capacity(3 * count);
    let mut uv = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pick = rng::uniform(r) * total;
        let mut axis = 0;
        for (i, fa) in face_areas.iter().enumerate() {
            if pick < 2.0 * fa {
                axis = i;
                break;
            }
            pick -= 2.0 * fa;
        }
        let side = if rng::uniform(r) < 0.5 { -1.0 } else { 1.0 };
        let s = rng::uniform_in(r, -1.0, 1.0);
        let t = rng::uniform_in(r, -1.0, 1.0);
        let mut p = [0.0; 3];
        p[axis] = side;
        p[(axis + 1) % 3] = s;
        p[(axis + 2) % 3] = t;
        coords.extend_from_slice(&p);
        uv.push([s, t]);
    }
    (coords, uv)
}

/// Draw the sampling plan: counts by surface area, then unit-shape
/// coordinates per primitive with a per-primitive derived RNG stream.
pub fn plan_surface_samples(
    prims: &[PrimitiveParams],
    total: usize,
    seed: u64,
) -> Result<SurfacePlan, CoreError> {
    if prims.is_empty() {
        return Err(CoreError::empty("plan_surface_samples"));
    }
    let areas: Vec<f64> = prims.iter().map(|p| p.surface_area()).collect();
    let counts = allocate_counts(&areas, total)?;
    let mut unit_coords = Vec::with_capacity(prims.len());
    let mut source = Vec::with_capacity(total);
    let mut params_uv = Vec::with_capacity(total);
    for (i, (prim, &k)) in prims.iter().zip(&counts).enumerate() {
        let mut r = rng::stream(seed ^ i as u64, "surface-samples");
        let (coords, uv) = match prim.kind {
            PrimitiveKind::Ellipsoid => ellipsoid_unit_coords(&prim.semi_axes, k, &mut r),
            PrimitiveKind::Cuboid => cuboid_unit_coords(&prim.semi_axes, k, &mut r),
        };
        unit_coords.push(Tensor::matrix(k, 3, coords)?);
        source.extend(core::iter::repeat(i).take(k));
        params_uv.extend(uv);
    }
    Ok(SurfacePlan {
        unit_coords,
        counts,
        source_primitive: source,
        params_uv,
    })
}

/// Vertical concatenation built from the transpose/concat_cols ops.
pub fn concat_rows(g: &mut Graph, parts: &[Var]) -> Result<Var, CoreError> {
    if parts.is_empty() {
        return Err(CoreError::empty("concat_rows"));
    }
    let mut acc = g.transpose(parts[0])?;
    for &p in &parts[1..] {
        let t = g.transpose(p)?;
        acc = g.concat_cols(acc, t)?;
    }
    g.transpose(acc)
}

/// Reinject a plan into the graph: world points `C ∘ s · Vᵀ + μ` per
/// primitive, stacked into one P×3 node.
pub fn inject_surface_samples(
    g: &mut Graph,
    vars: &[PrimitiveVars],
    plan: &SurfacePlan,
) -> Result<SurfaceSampleBatch, CoreError> {
    if vars.len() != plan.unit_coords.len() {
        return Err(CoreError::shape("inject_surface_samples: plan/vars length"));
    }
    let mut parts = Vec::with_capacity(vars.len());
    for (pv, unit) in vars.iter().zip(&plan.unit_coords) {
        if unit.rows() == 0 {
            continue;
        }
        let c = g.constant(unit.clone());
        let local = g.mul_row(c, pv.semi_axes)?;
        let vt = g.transpose(pv.rotation)?;
        let world = g.matmul(local, vt)?;
        let world = g.add_row(world, pv.center)?;
        parts.push(world);
    }
    let points = concat_rows(g, &parts)?;
    Ok(SurfaceSampleBatch {
        points,
        source_primitive: plan.source_primitive.clone(),
        params_uv: plan.params_uv.clone(),
        counts: plan.counts.clone(),
    })
}

/// Plan and inject in one call.
pub fn sample_surface(
    g: &mut Graph,
    prims: &[(PrimitiveParams, PrimitiveVars)],
    total: usize,
    seed: u64,
) -> Result<SurfaceSampleBatch, CoreError> {
    let params: Vec<PrimitiveParams> = prims.iter().map(|(p, _)| p.clone()).collect();
    let vars: Vec<PrimitiveVars> = prims.iter().map(|(_, v)| *v).collect();
    let plan = plan_surface_samples(&params, total, seed)?;
    inject_surface_samples(g, &vars, &plan)
}

/// Rejection sampling inside a primitive's local bounding box; world-frame
/// constants (gradients never flow through interior samples).
pub fn sample_inside(
    prim: &PrimitiveParams,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec3>, CoreError> {
    let mut r = rng::stream(seed, "interior-samples");
    let mut out = Vec::with_capacity(count);
    let budget = 100 * count.max(1);
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let p = [
            rng::uniform_in(&mut r, -prim.semi_axes[0], prim.semi_axes[0]),
            rng::uniform_in(&mut r, -prim.semi_axes[1], prim.semi_axes[1]),
            rng::uniform_in(&mut r, -prim.semi_axes[2], prim.semi_axes[2]),
        ];
        let inside = match prim.kind {
            PrimitiveKind::Ellipsoid => {
                let q: f64 = (0..3)
                    .map(|i| sq(p[i] / prim.semi_axes[i]))
                    .sum();
                q < 1.0
            }
            PrimitiveKind::Cuboid => true,
        };
        if inside {
            out.push(sdf::to_world(&p, prim));
        }
    }
    if out.len() < count {
        return Err(CoreError::degenerate(
            "sample_inside: acceptance failure, primitive too thin",
        ));
    }
    Ok(out)
}
