use primfit_core::cloud::PointCloud;
use primfit_core::graph::Graph;
use primfit_core::meanshift::{self, BandwidthConfig};
use primfit_core::metrics;
use primfit_core::pipeline::{self, PipelineConfig};
use primfit_core::synth::{self, SyntheticSpec};
use primfit_core::Tensor;

fn shape(k: usize, seed: u64, points: usize) -> PointCloud {
    let spec = SyntheticSpec {
        parts: synth::separated_ellipsoids(k, seed),
        points,
        seed,
        name: format!("k{k}s{seed}"),
    };
    synth::generate_synthetic(&spec).unwrap().normalize().unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let eval_n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(50);
    let pts: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2048);
    let ranks: Vec<usize> = args
        .get(3)
        .map(|s| s.split(',').map(|r| r.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![300, 400, 500]);
    let ckpt = std::env::var("EXP4_CKPT").unwrap();
    let emb = primfit::checkpoint::load_checkpoint(std::path::Path::new(&ckpt))
        .unwrap()
        .0;

    let t0 = std::time::Instant::now();
    let mut exact = 0usize;
    let mut nmis = Vec::new();
    for s in 0..eval_n {
        let k = 2 + s % 3;
        let pc = shape(k, 5000 + s as u64, pts);
        let gt = pc.labels.as_ref().unwrap();
        let points = Tensor::matrix(pc.len(), 3, pc.flat_points()).unwrap();

        let mut best: Option<(f64, usize, Vec<usize>, usize)> = None;
        for &r in &ranks {
            let cfg = PipelineConfig {
                bandwidth: BandwidthConfig {
                    neighbor_rank: r,
                    iterations: 10,
                },
                ..PipelineConfig::default()
            };
            let mut g = Graph::new();
            let ev = emb.insert(&mut g).unwrap();
            let out = match pipeline::shape_objective(&mut g, &points, &ev, None, &cfg, false, None)
            {
                Ok(o) => o,
                Err(_) => continue,
            };
            let total = out.breakdown.total;
            let labels = meanshift::hard_assignment(g.value(out.membership));
            let m = out.prims.len();
            if best.as_ref().map(|b| total < b.0).unwrap_or(true) {
                best = Some((total, m, labels, r));
            }
        }
        let (total, m, labels, r) = best.unwrap();
        let nmi = metrics::nmi(&labels, gt).unwrap();
        if m == k {
            exact += 1;
        }
        nmis.push(nmi);
        if m != k || s < 5 {
            println!("  shape {s} k={k}: found {m} (rank {r}, loss {total:.4}) nmi {nmi:.3}");
        }
    }
    let mean_nmi: f64 = nmis.iter().sum::<f64>() / nmis.len() as f64;
    println!(
        "objective-selected eval {eval_n} shapes: exact-K {exact}/{eval_n}, mean NMI {mean_nmi:.3}, {:.1}s",
        t0.elapsed().as_secs_f64()
    );
}
