use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use segstress::corruption::{corrupt, relabel_components, Connectivity};
use segstress::ingest::load_tiff_mask;
use segstress::metrics::{aggregate, evaluate, threshold, Aggregation};
use segstress::orchestrator::{run_experiment, ExperimentConfig, ExperimentKind};
use segstress::report::report_directory;
use segstress::synthgen::{write_dataset, SynthConfig};
use segstress::tensor::{save_tensor_file, Tensor, TensorData};
use segstress::types::{BinaryMask, CorruptionSpec, InstanceMask, MetricsReport};

#[derive(Parser)]
#[command(name = "segstress", version, about = "Stress-test cell segmentation against corrupted ground truth")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Erase and resegment cells of one instance mask.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        missing: f64,
        #[arg(long, default_value_t = 0)]
        kmax: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Used to label connected components when the input has no instance labels.
        #[arg(long, default_value_t = 8)]
        connectivity: u8,
        /// Relabel components even if the input carries instance labels.
        #[arg(long)]
        relabel: bool,
    },
    /// Score predicted masks against ground truth, matched by file name.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Applied to f32 probability masks.
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
    },
    /// Write a synthetic dataset with exact instance masks.
    Synth(SynthArgs),
    /// Missing-cell corruption sweep.
    SweepMc(ExperimentArgs),
    /// Under/over-segmentation sweep.
    SweepUo(ExperimentArgs),
    /// Single-tissue vs multi-tissue training.
    Transfer(ExperimentArgs),
    /// Iterative self-training from heavily corrupted targets.
    Bootstrap(ExperimentArgs),
    /// Tables and figures from experiment results.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n_images: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    name: String,
    /// JSON file with SynthConfig fields; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    n_cells: Option<usize>,
    #[arg(long)]
    radius_min: Option<f64>,
    #[arg(long)]
    radius_max: Option<f64>,
    #[arg(long)]
    contrast: Option<f32>,
    #[arg(long)]
    noise_sigma: Option<f32>,
    #[arg(long)]
    background: Option<f32>,
}

fn load_instance(path: &Path) -> anyhow::Result<InstanceMask> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    Ok(if ext == "tif" || ext == "tiff" {
        load_tiff_mask(path)?
    } else {
        Tensor::read(path)?.into_instance_mask()?
    })
}

fn load_prediction(path: &Path, t: f32) -> anyhow::Result<BinaryMask> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "tif" || ext == "tiff" {
        return Ok(load_tiff_mask(path)?.binarize());
    }
    let tensor = Tensor::read(path)?;
    Ok(match tensor.data {
        TensorData::F32(_) => threshold(&tensor.into_probability_mask()?, t),
        _ => tensor.into_binary_mask()?,
    })
}

fn cmd_corrupt(
    input: &Path,
    out: &Path,
    missing: f64,
    kmax: u32,
    seed: u64,
    connectivity: u8,
    force_relabel: bool,
) -> anyhow::Result<()> {
    let conn = Connectivity::from_neighbours(connectivity)
        .with_context(|| format!("connectivity must be 4 or 8, got {connectivity}"))?;
    let mut mask = load_instance(input).with_context(|| format!("reading {}", input.display()))?;
    if force_relabel || mask.labels().iter().all(|&l| l <= 1) {
        mask = relabel_components(&mask, conn);
    }
    let spec = CorruptionSpec::new(missing, kmax, seed)?;
    let before = mask.cell_count();
    let result = corrupt(&mask, &spec)?;
    save_tensor_file(out, &result)?;
    log::info!("{before} cells in, {} cells out", result.cell_count());
    Ok(())
}

fn metric_fields(m: &MetricsReport) -> Vec<String> {
    let c = m.counts;
    let mut v: Vec<String> = m.values().iter().map(|x| x.to_string()).collect();
    v.extend([c.tp, c.fp, c.fn_, c.tn].iter().map(|x| x.to_string()));
    v
}

fn cmd_evaluate(pred_dir: &Path, gt_dir: &Path, out: &Path, t: f32) -> anyhow::Result<()> {
    let mut names: Vec<String> = fs::read_dir(gt_dir)
        .with_context(|| format!("listing {}", gt_dir.display()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut w = csv::Writer::from_path(out)?;
    let mut header = vec!["image"];
    header.extend(MetricsReport::NAMES);
    header.extend(["tp", "fp", "fn", "tn"]);
    w.write_record(&header)?;
    let mut reports = Vec::new();
    for name in &names {
        let pred_path = pred_dir.join(name);
        if !pred_path.is_file() {
            bail!("no prediction for {name} in {}", pred_dir.display());
        }
        let gt = load_instance(&gt_dir.join(name))?.binarize();
        let pred = load_prediction(&pred_path, t)?;
        let m = evaluate(&pred, &gt).with_context(|| format!("scoring {name}"))?;
        let mut rec = vec![name.clone()];
        rec.extend(metric_fields(&m));
        w.write_record(&rec)?;
        reports.push(m);
    }
    let mean = aggregate(&reports, Aggregation::Mean)?;
    let mut rec = vec!["mean".to_string()];
    rec.extend(metric_fields(&mean));
    w.write_record(&rec)?;
    w.flush()?;
    println!("{} images, mean DSC {:.3}", reports.len(), mean.dsc);
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(v) = a.width {
        cfg.width = v;
    }
    if let Some(v) = a.height {
        cfg.height = v;
    }
    if let Some(v) = a.n_cells {
        cfg.n_cells = v;
    }
    if let Some(v) = a.radius_min {
        cfg.radius_min = v;
    }
    if let Some(v) = a.radius_max {
        cfg.radius_max = v;
    }
    if let Some(v) = a.contrast {
        cfg.contrast = v;
    }
    if let Some(v) = a.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = a.background {
        cfg.background = v;
    }
    let m = write_dataset(&cfg, a.n_images, &a.name, &a.out)?;
    println!("wrote {} acquisitions to {}", m.acquisitions.len(), a.out.display());
    Ok(())
}

fn cmd_experiment(kind: ExperimentKind, a: &ExperimentArgs) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    let result = run_experiment(kind, cfg, &a.out)?;
    for m in &result.models {
        println!("{:<12} mean {:.3}  median {:.3}  (n={})", m.model, m.aggregate.dsc, m.dsc.median, m.dsc.n);
    }
    for r in &result.transfer {
        println!(
            "{:>5.2} {:<12} single {:.3}  multi {:.3}  delta {:+.3}",
            r.missing_fraction, r.delta.metric_name, r.delta.m_single_tissue, r.delta.m_multi_tissue, r.delta.delta
        );
    }
    if let Some(i) = result.converged_at {
        println!("targets converged at iteration {i}");
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Cmd::Corrupt {
            input,
            out,
            missing,
            kmax,
            seed,
            connectivity,
            relabel,
        } => cmd_corrupt(input, out, *missing, *kmax, *seed, *connectivity, *relabel),
        Cmd::Evaluate { pred, gt, out, threshold } => cmd_evaluate(pred, gt, out, *threshold),
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::SweepMc(a) => cmd_experiment(ExperimentKind::CorruptionSweep, a),
        Cmd::SweepUo(a) => cmd_experiment(ExperimentKind::UnderOverSweep, a),
        Cmd::Transfer(a) => cmd_experiment(ExperimentKind::Transfer, a),
        Cmd::Bootstrap(a) => cmd_experiment(ExperimentKind::Bootstrap, a),
        Cmd::Report { results, out } => {
            for f in report_directory(results, out)? {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}
