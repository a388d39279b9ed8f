use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bridgeseg::config::RunConfig;
use bridgeseg::dataset::{self, Dataset, LABELS_SUBDIR, RDM_SUBDIR};
use bridgeseg::inference::{extract_instances, generate};
use bridgeseg::instances::shape_stats;
use bridgeseg::io;
use bridgeseg::metrics::{centroid_metrics, panoptic_quality_at};
use bridgeseg::model::{train, ReferenceDenoiser};
use bridgeseg::packing::EncodedImage;
use bridgeseg::rdm::reverse_distance_map;
use bridgeseg::synth::{synth_dataset, SynthConfig};
use bridgeseg::Error;

const USAGE_EXIT: u8 = 2;
const RUNTIME_EXIT: u8 = 1;

#[derive(Parser)]
#[command(
    name = "bridgeseg",
    version,
    about = "Cell instance segmentation via a multi-task image-to-image Schrödinger bridge"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Configuration shared by subcommands: an optional key=value file plus
/// repeatable --set overrides (last writer wins).
#[derive(Args)]
struct ConfigArgs {
    /// Path to a key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set train.lr=1e-4.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for s in &self.sets {
            let (k, v) = s.split_once('=').ok_or_else(|| {
                Error::config("--set", format!("expected KEY=VALUE, got '{s}'"))
            })?;
            cfg.set_key(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic ellipse dataset (images, label maps, reverse
    /// distance maps).
    Synth {
        /// Number of images.
        #[arg(long)]
        n: usize,
        /// Image side length (square), at least 16.
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Instances per image.
        #[arg(long, default_value_t = 6)]
        density: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute reverse distance maps for every label map of a dataset.
    Rdm {
        /// Dataset directory (reads labels/, writes rdm/).
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the reference denoiser.
    Train {
        /// Dataset directory (shorthand for --set data.dir=...).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory for checkpoint.bseg, loss.csv, config.echo.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Deterministic reverse inference over a dataset's images.
    Infer {
        /// Trained checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (reads images/).
        #[arg(long)]
        data: PathBuf,
        /// Run directory; predictions land under pred/.
        #[arg(long)]
        out: PathBuf,
        /// Dump every k-th intermediate state as a tensor file.
        #[arg(long)]
        dump_every: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate predicted label maps against ground truth.
    Eval {
        /// Directory of predicted label maps (*.png16).
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth label maps (*.png).
        #[arg(long)]
        gt: PathBuf,
        /// Output directory for metrics.csv and summary.txt.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Per-instance shape statistics (area, perimeter, circularity) as CSV.
    ShapeStats {
        /// Directory of label maps.
        #[arg(long)]
        labels: PathBuf,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if err.is_usage() {
                ExitCode::from(USAGE_EXIT)
            } else {
                ExitCode::from(RUNTIME_EXIT)
            }
        }
    }
}

fn create_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn run(cmd: Cmd) -> Result<String, Error> {
    match cmd {
        Cmd::Synth {
            n,
            size,
            density,
            seed,
            out,
        } => {
            let cfg = SynthConfig {
                n,
                size,
                density,
                seed,
            };
            synth_dataset(&cfg, &out)?;
            Ok(format!(
                "synth: wrote {n} items ({size}x{size}, density {density}) to {}",
                out.display()
            ))
        }
        Cmd::Rdm { data } => {
            let labels_dir = data.join(LABELS_SUBDIR);
            let rdm_dir = data.join(RDM_SUBDIR);
            create_dir(&rdm_dir)?;
            let stems = dataset::list_stems(&labels_dir, &["png", "png16"])?;
            if stems.is_empty() {
                return Err(Error::Dataset(format!(
                    "no label maps found under {}",
                    labels_dir.display()
                )));
            }
            let count = stems.len();
            for (stem, path) in stems {
                let labels = io::read_label_map(&path)?;
                let rdm = reverse_distance_map(&labels);
                io::write_image_tensor(&rdm_dir.join(format!("{stem}.bsgt")), rdm.tensor())?;
            }
            Ok(format!(
                "rdm: wrote {count} reverse distance maps to {}",
                rdm_dir.display()
            ))
        }
        Cmd::Train { data, out, config } => {
            let mut cfg = config.build()?;
            if let Some(data) = data {
                cfg.data_dir = Some(data);
            }
            cfg.validate_for_train()?;
            create_dir(&out)?;
            let data_dir = cfg.data_dir.clone().expect("validated above");
            let dataset = Dataset::load(&data_dir)?;
            io::atomic_write(&out.join("config.echo"), cfg.echo().as_bytes())?;
            let result = train(&cfg, &dataset, Some(&out))?;
            let final_loss = result.losses.last().copied().unwrap_or(f64::NAN);
            Ok(format!(
                "train: {} iterations on {} items (task {}), final loss {final_loss:.6}, checkpoint at {}",
                cfg.train_iters,
                dataset.len(),
                cfg.train_task.as_str(),
                out.join("checkpoint.bseg").display()
            ))
        }
        Cmd::Infer {
            checkpoint,
            data,
            out,
            dump_every,
            config,
        } => {
            let mut cfg = config.build()?;
            if let Some(k) = dump_every {
                cfg.infer_dump_every = (k > 0).then_some(k);
            }
            let schedule = cfg.schedule()?;
            let ckpt = io::read_checkpoint(&checkpoint)?;
            let denoiser = ReferenceDenoiser::with_ema(&ckpt.params);
            let pred_dir = out.join("pred");
            create_dir(&pred_dir)?;
            let images = dataset::list_images(&data)?;
            let count = images.len();
            for (stem, path) in images {
                let (h, w, rgb) = io::read_rgb8(&path)?;
                let img = EncodedImage::from_rgb8(h, w, &rgb)?;
                let (mask_prob, rdm_pred, trajectory) =
                    generate(&img, &denoiser, &schedule, cfg.infer_dump_every)?;
                let (mask, labels) = extract_instances(&mask_prob, &rdm_pred, ckpt.task)?;
                io::write_image_tensor(&pred_dir.join(format!("{stem}_prob.bsgt")), &mask_prob)?;
                io::write_mask_png(&pred_dir.join(format!("{stem}_mask.png")), &mask)?;
                io::write_label_map(&pred_dir.join(format!("{stem}.png16")), &labels)?;
                for frame in trajectory {
                    io::write_image_tensor(
                        &pred_dir.join(format!("{stem}_step_{:03}.bsgt", frame.step)),
                        &frame.state,
                    )?;
                }
            }
            Ok(format!(
                "infer: wrote predictions for {count} images (task {}) to {}",
                ckpt.task.as_str(),
                pred_dir.display()
            ))
        }
        Cmd::Eval {
            pred,
            gt,
            out,
            config,
        } => {
            let cfg = config.build()?;
            cfg.validate_for_eval()?;
            create_dir(&out)?;
            let summary = run_eval(&pred, &gt, &out, &cfg)?;
            Ok(summary)
        }
        Cmd::ShapeStats { labels, out } => {
            let stems = dataset::list_stems(&labels, &["png", "png16"])?;
            if stems.is_empty() {
                return Err(Error::Dataset(format!(
                    "no label maps found under {}",
                    labels.display()
                )));
            }
            let mut csv = String::from("image,id,area,perimeter,circularity\n");
            let mut total = 0usize;
            for (stem, path) in &stems {
                let map = io::read_label_map(path)?;
                for s in shape_stats(&map) {
                    let _ = writeln!(
                        csv,
                        "{stem},{},{},{},{}",
                        s.id, s.area, s.perimeter, s.circularity
                    );
                    total += 1;
                }
            }
            match out {
                Some(path) => {
                    io::atomic_write(&path, csv.as_bytes())?;
                    Ok(format!(
                        "shape-stats: wrote {total} instances from {} maps to {}",
                        stems.len(),
                        path.display()
                    ))
                }
                None => {
                    print!("{csv}");
                    Ok(format!(
                        "shape-stats: {total} instances from {} maps",
                        stems.len()
                    ))
                }
            }
        }
    }
}

fn run_eval(pred: &Path, gt: &Path, out: &Path, cfg: &RunConfig) -> Result<String, Error> {
    let preds = dataset::list_stems(pred, &["png", "png16"])?;
    if preds.is_empty() {
        return Err(Error::Dataset(format!(
            "no predicted label maps under {}",
            pred.display()
        )));
    }
    let mut csv = String::from("image,bpq,sq,dq,tp,fp,fn,precision,recall,f1\n");
    let mut per_image = Vec::new();
    let mut pooled_tp = 0usize;
    let mut pooled_fp = 0usize;
    let mut pooled_fn = 0usize;
    let mut pooled_iou_sum = 0.0f64;
    let mut pooled_det = (0usize, 0usize, 0usize); // tp, n_pred, n_gt
    for (stem, pred_path) in &preds {
        let gt_path = ["png", "png16"]
            .iter()
            .map(|ext| gt.join(format!("{stem}.{ext}")))
            .find(|p| p.is_file())
            .ok_or_else(|| {
                Error::Dataset(format!("no ground-truth label map for '{stem}' under {}", gt.display()))
            })?;
        let pred_map = io::read_label_map(pred_path)?;
        let gt_map = io::read_label_map(&gt_path)?;
        let pq = panoptic_quality_at(&pred_map, &gt_map, cfg.eval_iou)?;
        let cm = centroid_metrics(&pred_map, &gt_map, cfg.eval_radius)?;
        let _ = writeln!(
            csv,
            "{stem},{},{},{},{},{},{},{},{},{}",
            pq.bpq, pq.sq, pq.dq, pq.tp, pq.fp, pq.fn_, cm.precision, cm.recall, cm.f1
        );
        pooled_tp += pq.tp;
        pooled_fp += pq.fp;
        pooled_fn += pq.fn_;
        pooled_iou_sum += pq.sq * pq.tp as f64;
        pooled_det.0 += cm.tp;
        pooled_det.1 += cm.n_pred;
        pooled_det.2 += cm.n_gt;
        per_image.push((pq, cm));
    }
    let n = per_image.len() as f64;
    let mean = |f: &dyn Fn(&(bridgeseg::metrics::PanopticQuality, bridgeseg::metrics::CentroidMetrics)) -> f64| {
        per_image.iter().map(f).sum::<f64>() / n
    };
    let bpq_mean = mean(&|e| e.0.bpq);
    let sq_mean = mean(&|e| e.0.sq);
    let dq_mean = mean(&|e| e.0.dq);
    let precision_mean = mean(&|e| e.1.precision);
    let recall_mean = mean(&|e| e.1.recall);
    let f1_mean = mean(&|e| e.1.f1);

    let pooled_sq = if pooled_tp > 0 {
        pooled_iou_sum / pooled_tp as f64
    } else {
        0.0
    };
    let pooled_denom = pooled_tp as f64 + 0.5 * (pooled_fp + pooled_fn) as f64;
    let pooled_dq = if pooled_denom > 0.0 {
        pooled_tp as f64 / pooled_denom
    } else {
        1.0
    };
    let pooled_bpq = pooled_sq * pooled_dq;
    let pooled_precision = if pooled_det.1 > 0 {
        pooled_det.0 as f64 / pooled_det.1 as f64
    } else {
        1.0
    };
    let pooled_recall = if pooled_det.2 > 0 {
        pooled_det.0 as f64 / pooled_det.2 as f64
    } else {
        1.0
    };
    let pooled_f1 = if pooled_precision + pooled_recall > 0.0 {
        2.0 * pooled_precision * pooled_recall / (pooled_precision + pooled_recall)
    } else {
        0.0
    };

    let mut summary = String::from("{\n");
    let _ = writeln!(summary, "  \"images\": {},", per_image.len());
    let _ = writeln!(summary, "  \"bpq_mean\": {bpq_mean},");
    let _ = writeln!(summary, "  \"sq_mean\": {sq_mean},");
    let _ = writeln!(summary, "  \"dq_mean\": {dq_mean},");
    let _ = writeln!(summary, "  \"precision_mean\": {precision_mean},");
    let _ = writeln!(summary, "  \"recall_mean\": {recall_mean},");
    let _ = writeln!(summary, "  \"f1_mean\": {f1_mean},");
    let _ = writeln!(summary, "  \"bpq_pooled\": {pooled_bpq},");
    let _ = writeln!(summary, "  \"sq_pooled\": {pooled_sq},");
    let _ = writeln!(summary, "  \"dq_pooled\": {pooled_dq},");
    let _ = writeln!(summary, "  \"precision_pooled\": {pooled_precision},");
    let _ = writeln!(summary, "  \"recall_pooled\": {pooled_recall},");
    let _ = writeln!(summary, "  \"f1_pooled\": {pooled_f1}");
    summary.push_str("}\n");

    io::atomic_write(&out.join("metrics.csv"), csv.as_bytes())?;
    io::atomic_write(&out.join("summary.txt"), summary.as_bytes())?;
    Ok(format!(
        "eval: {} images, bPQ {bpq_mean:.4} (pooled {pooled_bpq:.4}), F1 {f1_mean:.4}; wrote {}",
        per_image.len(),
        out.join("metrics.csv").display()
    ))
}
