//! Per-shape pipeline: embeddings → mean-shift clustering → primitive
//! fitting → sampling → the combined objective, all on one gradient tape.
//!
//! Quantities decided outside the graph (bandwidth, NMS centers, sampling
//! plans, interior samples) can be captured in a [`FrozenContext`] and
//! replayed, which makes finite-difference checks of the analytic
//! gradients exact: both evaluations then share the same straight-through
//! constants.

use alloc::vec::Vec;

use crate::cloud::PointCloud;
use crate::embedder::{self, ClassifierVars, EmbedderParams, EmbedderVars};
use crate::error::CoreError;
use crate::fit::{self, FitConfig, FitResult, PrimitiveKind, PrimitiveParams, PrimitiveVars};
use crate::graph::{Graph, Var};
use crate::losses::{self, LossBreakdown, LossTerms, LossWeights};
use crate::mat3::Vec3;
use crate::meanshift::{self, BandwidthConfig};
use crate::sample::{self, SurfacePlan, SurfaceSampleBatch};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub bandwidth: BandwidthConfig,
    pub fit: FitConfig,
    pub weights: LossWeights,
    pub kind: PrimitiveKind,
    pub surface_samples: usize,
    pub interior_samples: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bandwidth: BandwidthConfig::default(),
            fit: FitConfig::default(),
            weights: LossWeights::default(),
            kind: PrimitiveKind::Ellipsoid,
            surface_samples: sample::DEFAULT_SURFACE_SAMPLES,
            interior_samples: losses::DEFAULT_INTERIOR_SAMPLES,
            seed: 0,
        }
    }
}

/// Out-of-graph decisions captured from one forward pass.
#[derive(Debug, Clone)]
pub struct FrozenContext {
    pub bandwidth: f64,
    pub centers: Tensor,
    pub center_indices: Vec<usize>,
    pub surface_plan: SurfacePlan,
    pub interior: Vec<Vec<Vec3>>,
}

pub struct PipelineOutput {
    pub embeddings: Var,
    pub shifted: Var,
    pub membership: Var,
    pub fits: Vec<FitResult>,
    pub prims: Vec<(PrimitiveParams, PrimitiveVars)>,
    pub surface: SurfaceSampleBatch,
    pub terms: LossTerms,
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub frozen: FrozenContext,
}

/// Build the full objective for one shape. `labels` enables the
/// cross-entropy term; `frozen` replays captured sampling decisions.
#[allow(clippy::too_many_arguments)]
pub fn shape_objective(
    g: &mut Graph,
    points: &Tensor,
    embed_vars: &EmbedderVars,
    classifier: Option<(&ClassifierVars, &[usize])>,
    cfg: &PipelineConfig,
    warmup: bool,
    frozen: Option<&FrozenContext>,
) -> Result<PipelineOutput, CoreError> {
    if points.shape().len() != 2 || points.cols() != 3 {
        return Err(CoreError::shape("shape_objective: points must be N×3"));
    }
    let x = g.constant(points.clone());
    let z = embedder::embed(g, embed_vars, x)?;

    let bandwidth = match frozen {
        Some(f) => f.bandwidth,
        None => meanshift::estimate_bandwidth(g.value(z), &cfg.bandwidth)?,
    };
    let shifted = meanshift::meanshift_iterate(g, z, bandwidth, cfg.bandwidth.iterations)?;
    let (centers, center_indices) = match frozen {
        Some(f) => (f.centers.clone(), f.center_indices.clone()),
        None => meanshift::nms_centers(g.value(shifted), bandwidth),
    };
    let membership = meanshift::soft_membership(g, shifted, &centers)?;

    let fits = fit::fit_all(g, x, membership, &cfg.fit)?;
    let mut prims = Vec::with_capacity(fits.len());
    for f in &fits {
        let params = match cfg.kind {
            PrimitiveKind::Ellipsoid => f.params.clone(),
            PrimitiveKind::Cuboid => fit::ellipsoid_to_cuboid(&f.params)?,
        };
        prims.push((params, f.vars));
    }
    let prim_params: Vec<PrimitiveParams> = prims.iter().map(|(p, _)| p.clone()).collect();
    let prim_vars: Vec<PrimitiveVars> = prims.iter().map(|(_, v)| *v).collect();

    let surface_plan = match frozen {
        Some(f) => f.surface_plan.clone(),
        None => sample::plan_surface_samples(&prim_params, cfg.surface_samples, cfg.seed)?,
    };
    let surface = sample::inject_surface_samples(g, &prim_vars, &surface_plan)?;

    let interior = match frozen {
        Some(f) => f.interior.clone(),
        None => prim_params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                // a cluster can collapse to a sliver; skip its interior
                // term instead of aborting the whole step
                sample::sample_inside(p, cfg.interior_samples, cfg.seed ^ i as u64)
                    .unwrap_or_default()
            })
            .collect(),
    };

    let l1 = losses::coverage_loss(g, x, &prims)?;
    let l2 = losses::fit_loss(g, points, surface.points)?;
    let inter = losses::intersection_loss(g, &prims, &interior)?;
    let sym = if warmup {
        Some(losses::similarity_loss(g, z)?)
    } else {
        None
    };
    let ce = match classifier {
        Some((cv, labels)) => {
            let probs = embedder::classify(g, cv, z)?;
            Some(losses::cross_entropy(g, probs, labels)?)
        }
        None => None,
    };
    let terms = LossTerms {
        l1,
        l2,
        inter,
        sym,
        ce,
    };
    let (total, breakdown) =
        losses::total_loss(g, &terms, &cfg.weights, warmup, classifier.is_some())?;

    Ok(PipelineOutput {
        embeddings: z,
        shifted,
        membership,
        fits,
        prims,
        surface,
        terms,
        total,
        breakdown,
        frozen: FrozenContext {
            bandwidth,
            centers,
            center_indices,
            surface_plan,
            interior,
        },
    })
}

/// Inference-only decomposition of a normalized cloud.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub labels: Vec<usize>,
    pub centers: Tensor,
    pub prims: Vec<PrimitiveParams>,
    pub bandwidth: f64,
    pub breakdown: Option<LossBreakdown>,
}

/// Embed, cluster with the tape-free mean-shift, fit primitives, and
/// report hard cluster labels.
pub fn decompose(
    pc: &PointCloud,
    params: &EmbedderParams,
    cfg: &PipelineConfig,
) -> Result<Decomposition, CoreError> {
    let flat = pc.flat_points();
    let z = embedder::embed_points(params, &flat)?;
    let bandwidth = meanshift::estimate_bandwidth(&z, &cfg.bandwidth)?;
    let shifted = meanshift::meanshift_plain(&z, bandwidth, cfg.bandwidth.iterations);
    let (centers, _) = meanshift::nms_centers(&shifted, bandwidth);

    // plain soft membership: softmax of clamped center similarities
    let n = shifted.rows();
    let m = centers.rows();
    let d = centers.cols();
    let mut w = Tensor::zeros(alloc::vec![n, m]);
    for i in 0..n {
        let mut row = alloc::vec![0.0; m];
        let mut max = f64::NEG_INFINITY;
        for (c, r) in row.iter_mut().enumerate() {
            let mut dot = 0.0;
            for k in 0..d {
                dot += shifted.at(i, k) * centers.at(c, k);
            }
            *r = dot.clamp(-meanshift::EXP_CLAMP, meanshift::EXP_CLAMP);
            max = max.max(*r);
        }
        let mut sum = 0.0;
        for r in row.iter_mut() {
            *r = libm::exp(*r - max);
            sum += *r;
        }
        for (c, r) in row.iter().enumerate() {
            w.set(i, c, r / sum);
        }
    }
    let labels = meanshift::hard_assignment(&w);

    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(n, 3, flat)?);
    let wv = g.constant(w);
    let fits = fit::fit_all(&mut g, x, wv, &cfg.fit)?;
    let prims = fits
        .iter()
        .map(|f| match cfg.kind {
            PrimitiveKind::Ellipsoid => Ok(f.params.clone()),
            PrimitiveKind::Cuboid => fit::ellipsoid_to_cuboid(&f.params),
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Decomposition {
        labels,
        centers,
        prims,
        bandwidth,
        breakdown: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn small_cloud(seed: u64) -> PointCloud {
        let spec = synth::SyntheticSpec {
            parts: synth::separated_ellipsoids(2, seed),
            points: 64,
            seed,
            name: alloc::string::String::from("test"),
        };
        synth::generate_synthetic(&spec).unwrap().normalize().unwrap()
    }

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            bandwidth: BandwidthConfig {
                neighbor_rank: 10,
                iterations: 5,
            },
            surface_samples: 128,
            interior_samples: 32,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn objective_is_finite_and_replayable() {
        let pc = small_cloud(1);
        let pts = Tensor::matrix(pc.len(), 3, pc.flat_points()).unwrap();
        let params = EmbedderParams::init(2, 8, 6).unwrap();
        let cfg = small_cfg();

        let run = |frozen: Option<&FrozenContext>| {
            let mut g = Graph::new();
            let ev = params.insert(&mut g).unwrap();
            let out =
                shape_objective(&mut g, &pts, &ev, None, &cfg, true, frozen).unwrap();
            let total = g.value(out.total).scalar_value();
            (out.frozen.clone(), total, out.breakdown)
        };

        let (frozen, total, b) = run(None);
        assert!(total.is_finite() && total > 0.0);
        assert!(b.l1 >= 0.0 && b.l2 >= 0.0 && b.inter >= 0.0 && b.sym >= 0.0);
        assert!((b.total - (b.recon + b.lambda1 * b.inter + b.lambda2 * b.sym)).abs() < 1e-9);

        let (_, replay_total, _) = run(Some(&frozen));
        assert_eq!(total, replay_total);
    }

    #[test]
    fn membership_rows_stochastic() {
        let pc = small_cloud(2);
        let pts = Tensor::matrix(pc.len(), 3, pc.flat_points()).unwrap();
        let params = EmbedderParams::init(4, 8, 6).unwrap();
        let mut g = Graph::new();
        let ev = params.insert(&mut g).unwrap();
        let out = shape_objective(&mut g, &pts, &ev, None, &small_cfg(), false, None).unwrap();
        let w = g.value(out.membership);
        for i in 0..w.rows() {
            let s: f64 = (0..w.cols()).map(|j| w.at(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_yields_finite_gradients() {
        let pc = small_cloud(3);
        let pts = Tensor::matrix(pc.len(), 3, pc.flat_points()).unwrap();
        let params = EmbedderParams::init(5, 8, 6).unwrap();
        let classifier = crate::embedder::ClassifierParams::init(5, 6, 4).unwrap();
        let labels = pc.labels.clone().unwrap();
        let mut g = Graph::new();
        let ev = params.insert(&mut g).unwrap();
        let cv = classifier.insert(&mut g).unwrap();
        let out = shape_objective(
            &mut g,
            &pts,
            &ev,
            Some((&cv, &labels)),
            &small_cfg(),
            true,
            None,
        )
        .unwrap();
        assert!(out.breakdown.ce > 0.0);
        let grads = g.backward(out.total).unwrap();
        for v in ev.all().into_iter().chain(cv.all()) {
            let t = grads.wrt_or_zeros(v);
            assert!(t.all_finite());
        }
        // at least one embedder gradient is nonzero
        assert!(ev
            .all()
            .iter()
            .any(|&v| grads.wrt_or_zeros(v).data().iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn cuboid_pipeline_runs() {
        let pc = small_cloud(4);
        let pts = Tensor::matrix(pc.len(), 3, pc.flat_points()).unwrap();
        let params = EmbedderParams::init(6, 8, 6).unwrap();
        let cfg = PipelineConfig {
            kind: PrimitiveKind::Cuboid,
            ..small_cfg()
        };
        let mut g = Graph::new();
        let ev = params.insert(&mut g).unwrap();
        let out = shape_objective(&mut g, &pts, &ev, None, &cfg, false, None).unwrap();
        assert!(out
            .prims
            .iter()
            .all(|(p, _)| p.kind == PrimitiveKind::Cuboid));
        assert!(out.breakdown.total.is_finite());
    }

    #[test]
    fn decompose_matches_cluster_count_bounds() {
        let pc = small_cloud(5);
        let params = EmbedderParams::init(7, 8, 6).unwrap();
        let dec = decompose(&pc, &params, &small_cfg()).unwrap();
        assert_eq!(dec.labels.len(), pc.len());
        assert!(dec.centers.rows() >= 1);
        assert!(!dec.prims.is_empty());
        assert!(dec.labels.iter().all(|&l| l < dec.centers.rows()));
        assert!(dec.bandwidth > 0.0);
    }
}
