//! Command-line interface: decompose, train, eval, gradcheck, synth.
//!
//! Exit codes: 0 success, 1 parse/IO error, 2 unfittable shape,
//! 3 divergence, 4 gradient-check failure.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use primfit_core::cloud::PointCloud;
use primfit_core::embedder::{ClassifierParams, EmbedderParams};
use primfit_core::fit::PrimitiveKind;
use primfit_core::gradcheck::{self, CheckStatus};
use primfit_core::losses::LossBreakdown;
use primfit_core::pipeline::{self, PipelineConfig};
use primfit_core::synth::{self, SyntheticSpec};
use primfit_core::train::{self, TrainConfig};
use primfit_core::{Graph, Tensor};

use crate::config::{self, FileConfig};
use crate::{checkpoint, io, report, CliError};

#[derive(Parser)]
#[command(
    name = "primfit",
    version,
    about = "Decompose 3D point clouds into ellipsoid or cuboid primitives"
)]
struct Cli {
    /// Upper bound on worker threads (computation is single-threaded; any
    /// bound >= 1 is accepted).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit primitives to one point cloud and export them
    Decompose(DecomposeArgs),
    /// Train the embedder on unlabeled and labeled shapes
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled test directory
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Generate synthetic labeled shapes
    Synth(SynthArgs),
}

#[derive(Args)]
struct DecomposeArgs {
    /// Input point cloud (.xyz or .ply)
    #[arg(long)]
    input: PathBuf,
    /// Primitive kind: ellipsoid or cuboid
    #[arg(long, default_value = "ellipsoid")]
    primitive: String,
    /// Trained checkpoint; omitted = random init (with a warning)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write fitted primitives as a triangulated OBJ
    #[arg(long)]
    out_obj: Option<PathBuf>,
    /// Write fitted primitives as JSON
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Write the cloud with predicted cluster labels as XYZ
    #[arg(long)]
    out_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON config file (defaults < file < flags)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Embedder width when no checkpoint is given
    #[arg(long)]
    hidden: Option<usize>,
    /// Embedding dimension when no checkpoint is given
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of unlabeled training shapes
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    /// Directory of labeled training shapes
    #[arg(long)]
    labeled: Option<PathBuf>,
    /// Few-shot cap: labeled shapes kept per class (class = file-name stem
    /// before the last underscore); 0 keeps all
    #[arg(long, default_value_t = 0)]
    k: usize,
    #[arg(long)]
    steps: Option<usize>,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Training log (JSON lines)
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config file (defaults < file < flags)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Disable the self-supervised half (supervised-only baseline)
    #[arg(long)]
    supervised_only: bool,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    #[arg(long)]
    primitive: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Points kept per shape during training
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long)]
    surface_samples: Option<usize>,
    #[arg(long)]
    interior_samples: Option<usize>,
    #[arg(long)]
    batch_unlabeled: Option<usize>,
    /// Global-norm gradient clip; 0 disables
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Fraction of steps with the self-supervised half active
    #[arg(long)]
    ssl_fraction: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of labeled test shapes
    #[arg(long)]
    test: PathBuf,
    /// Output EvalReport JSON
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the full report as JSON
    #[arg(long)]
    report: Option<PathBuf>,
    /// Test hook: inject a known-broken gradient entry
    #[arg(long, hide = true)]
    inject_failure: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Parts per shape (separated-ellipsoid mode)
    #[arg(long, default_value_t = 3)]
    parts: usize,
    /// Number of shapes to generate
    #[arg(long, default_value_t = 1)]
    shapes: usize,
    /// Points per shape
    #[arg(long, default_value_t = synth::DEFAULT_POINTS_PER_SHAPE)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generate the fixed class benchmark instead of separated ellipsoids
    #[arg(long)]
    benchmark: bool,
    /// Benchmark classes (benchmark mode)
    #[arg(long, default_value_t = 3)]
    classes: usize,
}

/// Parse arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
    }
    let result = match cli.cmd {
        Command::Decompose(a) => cmd_decompose(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn print_breakdown(b: &LossBreakdown) {
    println!(
        "loss: total={:.6} l1={:.6} l2={:.6} inter={:.6} sym={:.6} ce={:.6}",
        b.total, b.l1, b.l2, b.inter, b.sym, b.ce
    );
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        Some(p) => config::load_config(p),
        None => Ok(FileConfig::default()),
    }
}

fn cmd_decompose(a: &DecomposeArgs) -> Result<(), CliError> {
    let file = load_file_config(&a.config)?;
    let mut tcfg = TrainConfig::default();
    config::apply_file(&mut tcfg, &file)?;
    let hidden = a.hidden.unwrap_or(tcfg.hidden);
    let dim = a.dim.unwrap_or(tcfg.dim);
    let kind = config::parse_kind(&a.primitive)?;

    let pc = io::load_pointcloud(&a.input)?.normalize()?;
    let params = match &a.checkpoint {
        Some(p) => checkpoint::load_checkpoint(p)?.0,
        None => {
            eprintln!("warning: no checkpoint given, using randomly initialized embedder");
            EmbedderParams::init(a.seed, hidden, dim)?
        }
    };
    let cfg = PipelineConfig {
        kind,
        surface_samples: tcfg.surface_samples,
        interior_samples: tcfg.interior_samples,
        seed: a.seed,
        ..PipelineConfig::default()
    };
    let dec = pipeline::decompose(&pc, &params, &cfg)?;

    println!(
        "{}: {} points, bandwidth {:.4}, {} primitives",
        pc.name,
        pc.len(),
        dec.bandwidth,
        dec.prims.len()
    );
    for (i, p) in dec.prims.iter().enumerate() {
        let kind = match p.kind {
            PrimitiveKind::Ellipsoid => "ellipsoid",
            PrimitiveKind::Cuboid => "cuboid",
        };
        println!(
            "primitive {i}: {kind} center=({:.4}, {:.4}, {:.4}) semi_axes=({:.4}, {:.4}, {:.4})",
            p.center[0], p.center[1], p.center[2],
            p.semi_axes[0], p.semi_axes[1], p.semi_axes[2]
        );
    }

    // forward-only objective on a subsample, for the printed breakdown
    let sub = pc.subsample(tcfg.subsample);
    let pts = Tensor::matrix(sub.len(), 3, sub.flat_points())?;
    let mut g = Graph::new();
    let ev = params.insert(&mut g)?;
    let out = pipeline::shape_objective(&mut g, &pts, &ev, None, &cfg, false, None)?;
    print_breakdown(&out.breakdown);

    if let Some(p) = &a.out_obj {
        io::export_primitives_obj(&dec.prims, p)?;
    }
    if let Some(p) = &a.out_json {
        io::export_primitives_json(&dec.prims, p)?;
    }
    if let Some(p) = &a.out_labels {
        let labeled = PointCloud::new(pc.points.clone(), Some(dec.labels.clone()), pc.name.clone())?;
        io::save_xyz(&labeled, p)?;
    }
    Ok(())
}

/// Few-shot subset: keep the first `k` labeled shapes (by name) per class,
/// where class = file-name stem before the last underscore.
fn few_shot_subset(shapes: Vec<PointCloud>, k: usize) -> Vec<PointCloud> {
    if k == 0 {
        return shapes;
    }
    let mut kept: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for pc in shapes {
        let class = match pc.name.rfind('_') {
            Some(i) => pc.name[..i].to_string(),
            None => pc.name.clone(),
        };
        let n = kept.entry(class).or_insert(0);
        if *n < k {
            *n += 1;
            out.push(pc);
        }
    }
    out
}

fn normalize_all(shapes: Vec<PointCloud>) -> Result<Vec<PointCloud>, CliError> {
    shapes
        .into_iter()
        .map(|pc| pc.normalize().map_err(CliError::from))
        .collect()
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let file = load_file_config(&a.config)?;
    let mut cfg = TrainConfig::default();
    config::apply_file(&mut cfg, &file)?;
    macro_rules! flag {
        ($field:ident) => {
            if let Some(v) = a.$field {
                cfg.$field = v;
            }
        };
    }
    flag!(steps);
    flag!(seed);
    flag!(learning_rate);
    flag!(momentum);
    flag!(warmup_fraction);
    flag!(hidden);
    flag!(dim);
    flag!(classes);
    flag!(subsample);
    flag!(surface_samples);
    flag!(interior_samples);
    flag!(batch_unlabeled);
    flag!(grad_clip);
    flag!(ssl_fraction);
    if let Some(p) = &a.primitive {
        cfg.kind = config::parse_kind(p)?;
    }
    cfg.labeled_k = a.k;
    cfg.ssl_enabled = !a.supervised_only;

    let unlabeled = match &a.unlabeled {
        Some(d) => normalize_all(io::load_dir(d)?)?,
        None => Vec::new(),
    };
    let labeled = match &a.labeled {
        Some(d) => few_shot_subset(normalize_all(io::load_dir(d)?)?, a.k),
        None => Vec::new(),
    };
    println!(
        "training: {} unlabeled, {} labeled shapes, {} steps (ssl {})",
        unlabeled.len(),
        labeled.len(),
        cfg.steps,
        if cfg.ssl_enabled { "on" } else { "off" }
    );

    let outcome = train::train(&unlabeled, &labeled, &cfg)?;
    checkpoint::save_checkpoint(&outcome.embedder, &outcome.classifier, &a.out)?;
    if let Some(p) = &a.log {
        report::write_training_log(&outcome.log, p)?;
    }
    if let Some(last) = outcome.log.last() {
        println!(
            "final: step={} shape={} total={:.6} l1={:.6} l2={:.6} inter={:.6} sym={:.6} ce={:.6}",
            last.step, last.shape, last.total, last.l1, last.l2, last.inter, last.sym, last.ce
        );
    }
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let (embedder, classifier) = checkpoint::load_checkpoint(&a.checkpoint)?;
    let shapes = normalize_all(io::load_dir(&a.test)?)?;
    if shapes.iter().any(|pc| pc.labels.is_none()) {
        return Err(CliError::Io(format!(
            "{}: evaluation requires labels on every test shape",
            a.test.display()
        )));
    }
    let r = eval_report(&embedder, &classifier, &shapes)?;
    report::write_eval_report(&r, &a.report)?;
    println!("miou={:.4} nmi={:.4} precision={:.4} recall={:.4}", r.miou, r.nmi, r.precision, r.recall);
    Ok(())
}

fn eval_report(
    embedder: &EmbedderParams,
    classifier: &ClassifierParams,
    shapes: &[PointCloud],
) -> Result<train::EvalReport, CliError> {
    train::evaluate_segmentation(embedder, classifier, shapes).map_err(CliError::from)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let r = gradcheck::gradcheck_suite_with(a.seed, a.inject_failure);
    for e in &r.entries {
        let status = match &e.status {
            CheckStatus::Pass => "pass".to_string(),
            CheckStatus::Fail => "FAIL".to_string(),
            CheckStatus::Skipped(why) => format!("skipped ({why})"),
        };
        println!("{:<28} {:>12.3e}  {status}", e.name, e.max_rel_err);
    }
    if let Some(p) = &a.report {
        report::write_gradcheck_report(&r, p)?;
    }
    if r.passed {
        println!("gradcheck passed ({} entries)", r.entries.len());
        Ok(())
    } else {
        let failing: Vec<&str> = r
            .entries
            .iter()
            .filter(|e| e.status == CheckStatus::Fail)
            .map(|e| e.name.as_str())
            .collect();
        Err(CliError::Gradcheck(failing.join(", ")))
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&a.out)
        .map_err(|e| CliError::Io(format!("{}: {}", a.out.display(), e)))?;
    if a.benchmark {
        for class in 0..a.classes {
            for i in 0..a.shapes {
                let seed = a.seed ^ ((class * a.shapes + i) as u64).wrapping_mul(0x9e3779b9);
                let mut pc = synth::benchmark_shape(class, seed, a.points)?;
                pc.name = format!("class{class}_shape{i:04}");
                let path = a.out.join(format!("{}.xyz", pc.name));
                io::save_xyz(&pc, &path)?;
            }
        }
        println!(
            "wrote {} benchmark shapes ({} classes) to {}",
            a.classes * a.shapes,
            a.classes,
            a.out.display()
        );
    } else {
        for i in 0..a.shapes {
            let seed = a.seed ^ (i as u64).wrapping_mul(0x9e3779b9);
            let spec = SyntheticSpec {
                parts: synth::separated_ellipsoids(a.parts, seed),
                points: a.points,
                seed,
                name: format!("parts{}_shape{i:04}", a.parts),
            };
            let pc = synth::generate_synthetic(&spec)?.normalize()?;
            let path = a.out.join(format!("{}.xyz", pc.name));
            io::save_xyz(&pc, &path)?;
        }
        println!(
            "wrote {} shapes with {} parts each to {}",
            a.shapes,
            a.parts,
            a.out.display()
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn few_shot_keeps_k_per_class() {
        let make = |name: &str| {
            PointCloud::new(vec![[0.0; 3]], Some(vec![0]), name.to_string()).unwrap()
        };
        let shapes = vec![
            make("class0_shape0"),
            make("class0_shape1"),
            make("class0_shape2"),
            make("class1_shape0"),
            make("class1_shape1"),
        ];
        let kept = few_shot_subset(shapes, 2);
        assert_eq!(kept.len(), 4);
        assert_eq!(kept[0].name, "class0_shape0");
        assert_eq!(kept[2].name, "class1_shape0");
    }
}
