//! Procedural synthetic shapes with ground-truth part labels: the
//! desk-scale stand-in for a real segmentation dataset.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::cloud::PointCloud;
use crate::error::CoreError;
use crate::fit::PrimitiveParams;
use crate::mat3::{self, Vec3};
use crate::rng;
use crate::sample;
use crate::sdf;
use crate::svd3;

pub const DEFAULT_POINTS_PER_SHAPE: usize = 2048;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub parts: Vec<PrimitiveParams>,
    pub points: usize,
    pub seed: u64,
    pub name: String,
}

impl SyntheticSpec {
    pub fn new(parts: Vec<PrimitiveParams>, seed: u64, name: String) -> Self {
        SyntheticSpec {
            parts,
            points: DEFAULT_POINTS_PER_SHAPE,
            seed,
            name,
        }
    }
}

/// Sample each part's surface proportionally to area; label = part index.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<PointCloud, CoreError> {
    if spec.parts.is_empty() {
        return Err(CoreError::empty("generate_synthetic: no parts"));
    }
    for p in &spec.parts {
        if p.semi_axes.iter().any(|&s| !(s > 0.0)) {
            return Err(CoreError::invalid("generate_synthetic: zero semi-axis"));
        }
    }
    let plan = sample::plan_surface_samples(&spec.parts, spec.points, spec.seed)?;
    let mut points = Vec::with_capacity(spec.points);
    let mut labels = Vec::with_capacity(spec.points);
    for (i, (part, unit)) in spec.parts.iter().zip(&plan.unit_coords).enumerate() {
        for r in 0..unit.rows() {
            let local = [
                part.semi_axes[0] * unit.at(r, 0),
                part.semi_axes[1] * unit.at(r, 1),
                part.semi_axes[2] * unit.at(r, 2),
            ];
            points.push(sdf::to_world(&local, part));
            labels.push(i);
        }
    }
    PointCloud::new(points, Some(labels), spec.name.clone())
}

fn random_rotation(r: &mut rng::Rng) -> mat3::Mat3 {
    let mut m = [0.0; 9];
    for x in &mut m {
        *x = rng::normal(r);
    }
    svd3::svd3(&m).map(|res| res.v).unwrap_or(mat3::IDENTITY)
}

/// K randomly oriented ellipsoids on a circle, spaced so that every pair
/// is disjoint (center distance exceeds the sum of max semi-axes).
pub fn separated_ellipsoids(k: usize, seed: u64) -> Vec<PrimitiveParams> {
    let mut r = rng::stream(seed, "separated-parts");
    let max_axis = 0.6;
    let radius = if k == 1 {
        0.0
    } else {
        // adjacent chord > 2·max_axis with margin
        1.3 * max_axis / libm::sin(core::f64::consts::PI / k as f64)
    };
    (0..k)
        .map(|i| {
            let angle = 2.0 * core::f64::consts::PI * i as f64 / k as f64;
            let center: Vec3 = [radius * libm::cos(angle), radius * libm::sin(angle), 0.0];
            let semi = [
                rng::uniform_in(&mut r, 0.25, max_axis),
                rng::uniform_in(&mut r, 0.25, max_axis),
                rng::uniform_in(&mut r, 0.25, max_axis),
            ];
            PrimitiveParams::ellipsoid(center, random_rotation(&mut r), semi)
        })
        .collect()
}

/// Fixed part layout for one benchmark class: four ellipsoids whose
/// arrangement differs per class.
fn class_template(class: usize) -> Vec<([f64; 3], [f64; 3])> {
    match class % 3 {
        // bar: parts in a row with alternating thickness
        0 => alloc::vec![
            ([-1.8, 0.0, 0.0], [0.5, 0.3, 0.3]),
            ([-0.6, 0.0, 0.0], [0.5, 0.45, 0.2]),
            ([0.6, 0.0, 0.0], [0.5, 0.3, 0.3]),
            ([1.8, 0.0, 0.0], [0.5, 0.45, 0.2]),
        ],
        // cross: parts along both axes
        1 => alloc::vec![
            ([-1.2, 0.0, 0.0], [0.55, 0.25, 0.25]),
            ([1.2, 0.0, 0.0], [0.55, 0.25, 0.25]),
            ([0.0, -1.2, 0.0], [0.25, 0.55, 0.25]),
            ([0.0, 1.2, 0.0], [0.25, 0.55, 0.25]),
        ],
        // tower: parts stacked in z with shrinking girth
        _ => alloc::vec![
            ([0.0, 0.0, -1.8], [0.6, 0.6, 0.3]),
            ([0.0, 0.0, -0.6], [0.45, 0.45, 0.3]),
            ([0.0, 0.0, 0.6], [0.35, 0.35, 0.3]),
            ([0.0, 0.0, 1.8], [0.25, 0.25, 0.3]),
        ],
    }
}

/// One labeled benchmark shape: the class layout with mild per-shape
/// jitter, sampled and normalized. Labels are part indices (0..4).
pub fn benchmark_shape(
    class: usize,
    seed: u64,
    points: usize,
) -> Result<PointCloud, CoreError> {
    let mut r = rng::stream(seed, "benchmark-jitter");
    let parts: Vec<PrimitiveParams> = class_template(class)
        .into_iter()
        .map(|(center, semi)| {
            let center = [
                center[0] + rng::uniform_in(&mut r, -0.1, 0.1),
                center[1] + rng::uniform_in(&mut r, -0.1, 0.1),
                center[2] + rng::uniform_in(&mut r, -0.1, 0.1),
            ];
            let semi = [
                semi[0] * rng::uniform_in(&mut r, 0.85, 1.15),
                semi[1] * rng::uniform_in(&mut r, 0.85, 1.15),
                semi[2] * rng::uniform_in(&mut r, 0.85, 1.15),
            ];
            PrimitiveParams::ellipsoid(center, mat3::IDENTITY, semi)
        })
        .collect();
    let spec = SyntheticSpec {
        parts,
        points,
        seed,
        name: format!("class{}-seed{}", class % 3, seed),
    };
    generate_synthetic(&spec)?.normalize()
}
