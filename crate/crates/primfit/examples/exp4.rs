use primfit_core::cloud::PointCloud;
use primfit_core::metrics;
use primfit_core::pipeline::{self, PipelineConfig};
use primfit_core::synth::{self, SyntheticSpec};
use primfit_core::train::{self, TrainConfig};

fn shape(k: usize, seed: u64, points: usize) -> PointCloud {
    let spec = SyntheticSpec {
        parts: synth::separated_ellipsoids(k, seed),
        points,
        seed,
        name: format!("k{k}s{seed}"),
    };
    synth::generate_synthetic(&spec)
        .unwrap()
        .normalize()
        .unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let eval_n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(50);
    let eval_pts: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2048);
    let rank: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(100);
    let warmup: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let lr: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let eval_rank: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(rank);
    let n_labeled: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(0);
    let ms_iters: usize = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(10);
    let dim: usize = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(32);

    let heavy4: bool = args.get(11).map(|s| s == "1").unwrap_or(false);
    let mew: f64 = args.get(12).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let train_seed: u64 = args.get(13).map(|s| s.parse().unwrap()).unwrap_or(7);
    let n_train: usize = args.get(14).map(|s| s.parse().unwrap()).unwrap_or(30);

    let t0 = std::time::Instant::now();
    let kmix = |i: usize| {
        if heavy4 {
            [4usize, 3, 4, 2, 4, 3][i % 6]
        } else {
            2 + i % 3
        }
    };
    let unlabeled: Vec<PointCloud> = (0..n_train)
        .map(|i| shape(kmix(i), 1000 + i as u64, 512))
        .collect();
    let cfg = TrainConfig {
        steps,
        subsample: 256,
        surface_samples: 256,
        interior_samples: 32,
        seed: train_seed,
        warmup_fraction: warmup,
        learning_rate: lr,
        bandwidth: primfit_core::meanshift::BandwidthConfig {
            neighbor_rank: rank,
            iterations: ms_iters,
        },
        dim,
        ..TrainConfig::default()
    };
    let labeled: Vec<PointCloud> = (0..n_labeled)
        .map(|i| shape(2 + i % 3, 2000 + i as u64, 512))
        .collect();
    let ckpt_path = std::env::var("EXP4_CKPT").ok();
    let embedder = if steps == 0 {
        if let Some(p) = &ckpt_path {
            println!("loading checkpoint {p}");
            primfit::checkpoint::load_checkpoint(std::path::Path::new(p))
                .unwrap()
                .0
        } else {
            train::train(&unlabeled, &labeled, &cfg).unwrap().embedder
        }
    } else {
        let outcome = train::train(&unlabeled, &labeled, &cfg).unwrap();
        if let Some(p) = &ckpt_path {
            primfit::checkpoint::save_checkpoint(
                &outcome.embedder,
                &outcome.classifier,
                std::path::Path::new(p),
            )
            .unwrap();
            println!("saved checkpoint {p}");
        }
        outcome.embedder
    };
    println!("train {} steps: {:.1}s", steps, t0.elapsed().as_secs_f64());

    let t1 = std::time::Instant::now();
    let mut pcfg = PipelineConfig {
        bandwidth: primfit_core::meanshift::BandwidthConfig {
            neighbor_rank: eval_rank,
            iterations: ms_iters,
        },
        ..PipelineConfig::default()
    };
    pcfg.fit.min_effective_weight = mew;
    let mut exact = 0usize;
    let mut nmis = Vec::new();
    for s in 0..eval_n {
        let k = 2 + s % 3;
        let pc = shape(k, 5000 + s as u64, eval_pts);
        let dec = pipeline::decompose(&pc, &embedder, &pcfg).unwrap();
        let gt = pc.labels.as_ref().unwrap();
        let nmi = metrics::nmi(&dec.labels, gt).unwrap();
        if dec.prims.len() == k {
            exact += 1;
        }
        nmis.push(nmi);
        if s < 10 || dec.prims.len() != k {
            println!("  shape {s} k={k}: found {} nmi {:.3}", dec.prims.len(), nmi);
        }
    }
    let mean_nmi: f64 = nmis.iter().sum::<f64>() / nmis.len() as f64;
    println!(
        "eval {} shapes: exact-K {}/{}, mean NMI {:.3}, {:.1}s",
        eval_n,
        exact,
        eval_n,
        mean_nmi,
        t1.elapsed().as_secs_f64()
    );
}
