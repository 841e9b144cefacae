use primfit_core::cloud::PointCloud;
use primfit_core::graph::Graph;
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
    let s: usize = args.get(1).map(|x| x.parse().unwrap()).unwrap_or(1);
    let pts: usize = args.get(2).map(|x| x.parse().unwrap()).unwrap_or(2048);
    let rank: usize = args.get(3).map(|x| x.parse().unwrap()).unwrap_or(60);
    let ckpt = std::env::var("EXP4_CKPT").unwrap();
    let emb = primfit::checkpoint::load_checkpoint(std::path::Path::new(&ckpt))
        .unwrap()
        .0;

    let k = 2 + s % 3;
    let pc = shape(k, 5000 + s as u64, pts);
    let gt = pc.labels.clone().unwrap();

    // raw embeddings
    let et = primfit_core::embedder::embed_points(&emb, &pc.flat_points()).unwrap();
    let d = et.cols();

    // per-part mean embedding cosines and tightness
    let mut means = vec![vec![0.0f64; d]; k];
    let mut counts = vec![0usize; k];
    for i in 0..pc.len() {
        for j in 0..d {
            means[gt[i]][j] += et.data()[i * d + j];
        }
        counts[gt[i]] += 1;
    }
    for p in 0..k {
        let n = (means[p].iter().map(|v| v * v).sum::<f64>()).sqrt();
        println!(
            "part {p}: n={} |mean|={:.3} (tightness)",
            counts[p],
            n / counts[p] as f64
        );
        for v in means[p].iter_mut() {
            *v /= n;
        }
    }
    for a in 0..k {
        let row: Vec<String> = (0..k)
            .map(|b| {
                let dot: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| x * y).sum();
                format!("{dot:+.2}")
            })
            .collect();
        println!("cos part {a}: {}", row.join(" "));
    }

    let pcfg = PipelineConfig {
        bandwidth: primfit_core::meanshift::BandwidthConfig {
            neighbor_rank: rank,
            iterations: 10,
        },
        ..PipelineConfig::default()
    };
    let dec = pipeline::decompose(&pc, &emb, &pcfg).unwrap();
    println!(
        "k={k}: found {} bandwidth {:.3} nmi {:.3}",
        dec.prims.len(),
        dec.bandwidth,
        metrics::nmi(&dec.labels, &gt).unwrap()
    );
    // cross-tab clusters vs parts
    let nc = dec.prims.len();
    let mut tab = vec![vec![0usize; k]; nc];
    for i in 0..pc.len() {
        tab[dec.labels[i]][gt[i]] += 1;
    }
    for (c, row) in tab.iter().enumerate() {
        println!(
            "cluster {c}: {}",
            row.iter().map(|v| format!("{v:5}")).collect::<Vec<_>>().join(" ")
        );
    }
}
