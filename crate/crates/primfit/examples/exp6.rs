use primfit_core::cloud::PointCloud;
use primfit_core::synth;
use primfit_core::train::{self, TrainConfig};

fn bench(class: usize, seed: u64, points: usize) -> PointCloud {
    synth::benchmark_shape(class, seed, points).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(150);
    let seeds: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3);
    let n_unlabeled: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(60);
    let pts: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(512);
    let lr: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let sub: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(256);
    let labeled_pts: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(pts);
    let clip: f64 = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(5.0);
    let train_rank: usize = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(100);
    let batch: usize = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(1);
    let ssl_frac: f64 = args.get(11).map(|s| s.parse().unwrap()).unwrap_or(1.0);

    let mut joint_wins = 0;
    let mut diffs = Vec::new();
    for seed in 0..seeds {
        let t0 = std::time::Instant::now();
        let unlabeled: Vec<PointCloud> = (0..n_unlabeled)
            .map(|i| bench(i % 3, 10_000 + seed * 1000 + i as u64, pts))
            .collect();
        let labeled: Vec<PointCloud> = (0..15)
            .map(|i| bench(i % 3, 20_000 + seed * 1000 + i as u64, labeled_pts))
            .collect();
        let test: Vec<PointCloud> = (0..15)
            .map(|i| bench(i % 3, 30_000 + seed * 1000 + i as u64, pts))
            .collect();

        let mut cfg = TrainConfig {
            steps,
            subsample: sub,
            surface_samples: 256,
            interior_samples: 32,
            seed: 100 + seed,
            learning_rate: lr,
            grad_clip: clip,
            batch_unlabeled: batch,
            ssl_fraction: ssl_frac,
            bandwidth: primfit_core::meanshift::BandwidthConfig {
                neighbor_rank: train_rank,
                iterations: 10,
            },
            ..TrainConfig::default()
        };
        let joint = train::train(&unlabeled, &labeled, &cfg).unwrap();
        if std::env::var("EXP6_VERBOSE").is_ok() {
            for r in joint.log.iter().take(30) {
                println!(
                    "  step {} sup={} l1={:.2} l2={:.2} sym={:.1} ce={:.3} total={:.1}",
                    r.step, r.supervised, r.l1, r.l2, r.sym, r.ce, r.total
                );
            }
        }
        let rj = train::evaluate_segmentation(&joint.embedder, &joint.classifier, &test).unwrap();

        cfg.ssl_enabled = false;
        let sup = train::train(&unlabeled, &labeled, &cfg).unwrap();
        let rs = train::evaluate_segmentation(&sup.embedder, &sup.classifier, &test).unwrap();

        let d = (rj.miou - rs.miou) * 100.0;
        if rj.miou > rs.miou {
            joint_wins += 1;
        }
        diffs.push(d);
        println!(
            "seed {seed}: joint miou {:.3} sup miou {:.3} diff {:+.1} pts ({:.0}s)",
            rj.miou,
            rs.miou,
            d,
            t0.elapsed().as_secs_f64()
        );
    }
    let mean: f64 = diffs.iter().sum::<f64>() / diffs.len() as f64;
    println!("wins {joint_wins}/{seeds}, mean diff {mean:+.1} IoU pts");
}
