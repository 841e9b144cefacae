use primfit_core::cloud::PointCloud;
use primfit_core::embedder;
use primfit_core::meanshift::{self, BandwidthConfig};
use primfit_core::synth::{self, SyntheticSpec};
use primfit_core::train::{self, TrainConfig};
use primfit_core::Tensor;

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
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(100);
    let warmup: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.3);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let train_rank: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(100);

    let unlabeled: Vec<PointCloud> = (0..30)
        .map(|i| shape(2 + i % 3, 1000 + i as u64, 512))
        .collect();
    let cfg = TrainConfig {
        steps,
        subsample: 256,
        surface_samples: 256,
        interior_samples: 32,
        seed: 7,
        warmup_fraction: warmup,
        learning_rate: lr,
        bandwidth: BandwidthConfig {
            neighbor_rank: train_rank,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let outcome = train::train(&unlabeled, &[], &cfg).unwrap();

    let pc = shape(4, 5002, 1024);
    let gt = pc.labels.clone().unwrap();
    let z = embedder::embed_points(&outcome.embedder, &pc.flat_points()).unwrap();
    let n = z.rows();
    let d = z.cols();

    // mean embedding per gt part, then inter-part cosine similarities
    let k = 4;
    let mut means = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let l = gt[i];
        counts[l] += 1;
        for j in 0..d {
            means[l][j] += z.at(i, j);
        }
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        let norm: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let _ = c;
        for v in m.iter_mut() {
            *v /= norm.max(1e-12);
        }
    }
    println!("part counts: {counts:?}");
    for a in 0..k {
        for b in 0..k {
            let dot: f64 = (0..d).map(|j| means[a][j] * means[b][j]).sum();
            print!("{dot:6.3} ");
        }
        println!();
    }

    // intra-part spread: mean cos sim to part mean
    for a in 0..k {
        let mut s = 0.0;
        for i in 0..n {
            if gt[i] == a {
                let dot: f64 = (0..d).map(|j| z.at(i, j) * means[a][j]).sum();
                s += dot;
            }
        }
        println!("part {a}: mean cos to part mean {:.3}", s / counts[a] as f64);
    }

    for rank in [10usize, 30, 60, 100, 150, 200] {
        let bw = meanshift::estimate_bandwidth(
            &z,
            &BandwidthConfig {
                neighbor_rank: rank,
                iterations: 10,
            },
        )
        .unwrap();
        for iters in [10usize, 30, 100] {
            let shifted: Tensor = meanshift::meanshift_plain(&z, bw, iters);
            let (centers, _) = meanshift::nms_centers(&shifted, bw);
            println!(
                "rank {rank} iters {iters}: bandwidth {bw:.4} -> {} centers",
                centers.rows()
            );
        }
    }
}
