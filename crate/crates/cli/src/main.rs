//! `rvf`: simulate, train, run and score radar/camera fusion detectors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rvf_core::dataset::{annotations_path, load_dataset};
use rvf_core::error::CoreError;
use rvf_core::evaluation::{compute_metrics, Detection, GroundTruth};
use rvf_core::formats::annotations::{parse_detections, xywh_to_xyxy, AnnotationSet};
use rvf_core::formats::radar_json::parse_radar_frame;
use rvf_core::formats::rig::RigFile;
use rvf_core::formats::{to_json_string, write_json};
use rvf_core::geometry::{project_radar_to_pixel, RadarDetection};
use rvf_core::harness::{self, NETWORK_TOLERANCE, OP_TOLERANCE};
use rvf_core::model::{Fusion, Model, ModelConfig};
use rvf_core::radar_imaging::{render_radar_frame, DEFAULT_SPLAT_RADIUS};
use rvf_core::scene_sim::{emit_dataset, SimConfig, Split};
use rvf_core::threads;
use rvf_core::train::{self, detection_records, predict, write_loss_csv, Progress, TrainConfig};

#[derive(Parser)]
#[command(name = "rvf", version, about = "Radar and camera fusion detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset.
    Simulate {
        /// Simulator config JSON; defaults to the 128-pixel desk profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of frames to generate (at least 10).
        #[arg(long)]
        frames: usize,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render a raw radar frame to a radar image.
    EncodeRadar {
        /// Raw radar frame JSON.
        #[arg(long = "in")]
        input: PathBuf,
        /// Sensor rig JSON.
        #[arg(long)]
        rig: PathBuf,
        /// Output PNG.
        #[arg(long)]
        out: PathBuf,
        /// Disc radius in pixels at the rig's resolution.
        #[arg(long, default_value_t = DEFAULT_SPLAT_RADIUS)]
        splat: u32,
        /// Output side length; defaults to the rig's image size.
        #[arg(long)]
        size: Option<u32>,
    },
    /// Project one radar detection to the image plane.
    Project {
        /// Sensor rig JSON.
        #[arg(long)]
        rig: PathBuf,
        /// Range, meters.
        #[arg(long)]
        rho: f64,
        /// Azimuth, degrees.
        #[arg(long = "theta-deg", allow_hyphen_values = true)]
        theta_deg: f64,
        /// Elevation, degrees.
        #[arg(long = "phi-deg", allow_hyphen_values = true)]
        phi_deg: f64,
    },
    /// Train a detector on the train split of a dataset.
    Train {
        /// Dataset directory written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        /// Training config JSON; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fusion mode: add, mul, cat or sac.
        #[arg(long)]
        fusion: Option<Fusion>,
        /// Comma-separated SAC kernel sizes, e.g. 1,3,5.
        #[arg(long = "sac-kernels", value_delimiter = ',')]
        sac_kernels: Option<Vec<usize>>,
        /// Output weights file.
        #[arg(long)]
        out: PathBuf,
        /// Loss curve CSV; defaults to the weights path with `.loss.csv`.
        #[arg(long = "loss-csv")]
        loss_csv: Option<PathBuf>,
        /// Overrides the config's seed (data order and initialisation).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a trained detector over a split and write detections.
    Infer {
        /// Weights file written by `train`.
        #[arg(long)]
        weights: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Split to run on.
        #[arg(long, default_value = "test")]
        split: String,
        /// Output detections JSON.
        #[arg(long)]
        out: PathBuf,
        /// Minimum class score kept before NMS.
        #[arg(long = "score-thresh", default_value_t = 0.05)]
        score_thresh: f64,
        /// NMS IoU threshold.
        #[arg(long = "nms-iou", default_value_t = 0.6)]
        nms_iou: f64,
        /// Detections kept per image.
        #[arg(long = "max-dets", default_value_t = 100)]
        max_dets: usize,
    },
    /// Score detections against annotations.
    Eval {
        /// Detections JSON.
        #[arg(long)]
        dets: PathBuf,
        /// Annotations JSON.
        #[arg(long)]
        ann: PathBuf,
        /// Detections considered per image.
        #[arg(long = "max-dets", default_value_t = 100)]
        max_dets: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// Check the full network at 128 pixels instead of a reduced one.
        #[arg(long)]
        full: bool,
        /// Directional probes for the network check.
        #[arg(long, default_value_t = 20)]
        probes: usize,
        /// Seed for inputs and probe directions.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every fusion mode with one seed and compare them.
    AblateFusion {
        /// Dataset directory; runs train on its train split.
        #[arg(long)]
        data: PathBuf,
        /// Training config JSON shared by all four runs.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Split the runs are scored on.
        #[arg(long, default_value = "val")]
        split: String,
        /// Also write the comparison as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// Failure classes, mapped to exit codes 2 and 3.
enum Failure {
    Data(String),
    Numerical(String),
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e).into())
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig, Failure> {
    Ok(match path {
        Some(p) => TrainConfig::from_json(&read_text(p)?)?,
        None => TrainConfig::default(),
    })
}

fn simulate(config: Option<&Path>, frames: usize, out: &Path, seed: Option<u64>) -> Outcome {
    let mut cfg = match config {
        Some(p) => SimConfig::from_json(&read_text(p)?)?,
        None => SimConfig::desk(128),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let m = emit_dataset(&cfg, frames, out)?;
    println!(
        "wrote {} frames ({} train / {} val / {} test, {} boxes) to {}",
        m.n_frames,
        m.splits.train,
        m.splits.val,
        m.splits.test,
        m.annotations,
        out.display()
    );
    Ok(())
}

fn encode_radar(input: &Path, rig: &Path, out: &Path, splat: u32, size: Option<u32>) -> Outcome {
    let frame = parse_radar_frame(&read_text(input)?)?;
    let rig = RigFile::from_json(&read_text(rig)?)?.to_rig()?;
    let (w, h) = match size {
        Some(s) => (s, s),
        None => (rig.intrinsics.width, rig.intrinsics.height),
    };
    let (img, stats) = render_radar_frame(&frame, &rig, w, h, splat);
    img.write_png(out)?;
    println!("painted {} points, dropped {}", stats.painted, stats.dropped);
    Ok(())
}

fn project(rig: &Path, rho: f64, theta_deg: f64, phi_deg: f64) -> Outcome {
    let rig = RigFile::from_json(&read_text(rig)?)?.to_rig()?;
    let det = RadarDetection::from_degrees(rho, theta_deg, phi_deg, 0.0)?;
    let p = project_radar_to_pixel(&det, &rig);
    if p.is_behind() {
        println!("behind camera (depth {:.6})", p.z_c);
    } else {
        println!("pixel {:.6} {:.6} depth {:.6} in_frame {}", p.x_p, p.y_p, p.z_c, p.in_frame);
    }
    Ok(())
}

fn print_progress(label: &str, p: Progress<'_>) {
    match p {
        Progress::Loss(r) if r.iteration == 1 || r.iteration % 50 == 0 => eprintln!(
            "{label}iter {:>6}  loss {:.5}  cls {:.5}  reg {:.5}  ctr {:.5}",
            r.iteration, r.total, r.cls, r.reg, r.centerness
        ),
        Progress::Loss(_) => {}
        Progress::Eval(it, m) => eprintln!("{label}eval @{it}: AP {:.1}  AP50 {:.1}  AR100 {:.1}", m.ap, m.ap50, m.ar100),
    }
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    data: &Path,
    config: Option<&Path>,
    fusion: Option<Fusion>,
    sac_kernels: Option<Vec<usize>>,
    out: &Path,
    loss_csv: Option<PathBuf>,
    seed: Option<u64>,
) -> Outcome {
    let mut cfg = load_train_config(config)?;
    if let Some(f) = fusion {
        cfg.model.fusion = f;
        if f == Fusion::Sac && cfg.model.sac_kernels.is_empty() {
            cfg.model.sac_kernels = ModelConfig::default().sac_kernels;
        }
    }
    if let Some(k) = sac_kernels {
        cfg.model.sac_kernels = k;
    }
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.model.seed = s;
    }
    cfg.validate()?;
    let train_set = load_dataset(data, Split::Train)?;
    let val = if annotations_path(data, Split::Val).exists() { load_dataset(data, Split::Val)? } else { Vec::new() };
    let mut model = Model::new(cfg.model.clone())?;
    eprintln!(
        "training {} ({} parameters) on {} pairs, {} iterations",
        model.cfg.fusion.name(),
        model.param_count(),
        train_set.len(),
        cfg.iterations
    );
    let outcome = train::train(&mut model, &train_set, &val, &cfg, |p| print_progress("", p))?;
    model.save_weights(out)?;
    let csv = loss_csv.unwrap_or_else(|| out.with_extension("loss.csv"));
    write_loss_csv(&csv, &outcome.losses)?;
    println!("wrote {} and {}", out.display(), csv.display());
    Ok(())
}

fn infer(weights: &Path, data: &Path, split: &str, out: &Path, dc: train::DecodeConfig) -> Outcome {
    let model = Model::load_weights(weights)?;
    let samples = load_dataset(data, Split::parse(split)?)?;
    let preds = predict(&model, &samples, &dc)?;
    let records = detection_records(&samples, &preds);
    write_json(out, &records)?;
    println!("wrote {} detections for {} images to {}", records.len(), samples.len(), out.display());
    Ok(())
}

fn eval(dets: &Path, ann: &Path, max_dets: usize, json: Option<&Path>) -> Outcome {
    let ann = AnnotationSet::from_json(&read_text(ann)?)?;
    let records = parse_detections(&read_text(dets)?)?;
    let known: std::collections::HashSet<u64> = ann.images.iter().map(|i| i.id).collect();
    if let Some(r) = records.iter().find(|r| !known.contains(&r.image_id)) {
        return Err(CoreError::Annotation {
            id: r.id,
            message: format!("detection refers to unknown image {}", r.image_id),
        }
        .into());
    }
    let dets: Vec<Detection> = records
        .iter()
        .map(|r| Detection { image_id: r.image_id, category_id: r.category_id, bbox: xywh_to_xyxy(r.bbox), score: r.score })
        .collect();
    let gts: Vec<GroundTruth> = ann
        .annotations
        .iter()
        .map(|a| GroundTruth { image_id: a.image_id, category_id: a.category_id, bbox: xywh_to_xyxy(a.bbox) })
        .collect();
    let report = compute_metrics(&dets, &gts, max_dets);
    print!("{}", report.to_text());
    if let Some(p) = json {
        write_json(p, &report)?;
    }
    Ok(())
}

fn gradcheck(full: bool, probes: usize, seed: u64) -> Outcome {
    let mut ok = true;
    for check in harness::op_gradcheck(seed)? {
        let pass = check.passed(OP_TOLERANCE);
        ok &= pass;
        println!(
            "{:<28} max rel err {:.3e} ({} checked, {} skipped) {}",
            check.name,
            check.report.max_rel_error,
            check.report.checked,
            check.report.skipped,
            if pass { "ok" } else { "FAIL" }
        );
    }
    let cfg = if full {
        ModelConfig::default()
    } else {
        ModelConfig { input_size: 64, width_mult: 0.0625, ..ModelConfig::default() }
    };
    let r = harness::network_gradcheck(&cfg, probes, seed)?;
    let pass = (r.max_rel_error as f64) < NETWORK_TOLERANCE;
    ok &= pass;
    println!(
        "network {}px ({} probes)       max rel err {:.3e} {}",
        cfg.input_size,
        r.checked,
        r.max_rel_error,
        if pass { "ok" } else { "FAIL" }
    );
    if ok {
        Ok(())
    } else {
        Err(Failure::Numerical("gradient check failed".into()))
    }
}

fn ablate(data: &Path, config: Option<&Path>, split: &str, json: Option<&Path>) -> Outcome {
    let cfg = load_train_config(config)?;
    let train_set = load_dataset(data, Split::Train)?;
    let eval_set = load_dataset(data, Split::parse(split)?)?;
    let report = harness::ablate_fusion(&train_set, &eval_set, &cfg, |f, p| print_progress(&format!("[{}] ", f.name()), p))?;
    print!("{}", report.to_text());
    if let Some(p) = json {
        let rows: Vec<(String, &rvf_core::evaluation::MetricReport)> =
            report.rows.iter().map(|r| (r.fusion.name().to_string(), &r.report)).collect();
        std::fs::write(p, to_json_string(&rows)?).map_err(|e| CoreError::io(p, e))?;
    }
    if !report.all_finite() {
        return Err(Failure::Numerical("non-finite metric in ablation".into()));
    }
    if !report.sac_liveness.is_live() {
        return Err(Failure::Numerical("SAC output does not depend on the radar input".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Simulate { config, frames, out, seed } => simulate(config.as_deref(), frames, &out, seed),
        Command::EncodeRadar { input, rig, out, splat, size } => encode_radar(&input, &rig, &out, splat, size),
        Command::Project { rig, rho, theta_deg, phi_deg } => project(&rig, rho, theta_deg, phi_deg),
        Command::Train { data, config, fusion, sac_kernels, out, loss_csv, seed } => {
            train_cmd(&data, config.as_deref(), fusion, sac_kernels, &out, loss_csv, seed)
        }
        Command::Infer { weights, data, split, out, score_thresh, nms_iou, max_dets } => {
            infer(&weights, &data, &split, &out, train::DecodeConfig { score_thresh, nms_iou, max_dets })
        }
        Command::Eval { dets, ann, max_dets, json } => eval(&dets, &ann, max_dets, json.as_deref()),
        Command::Gradcheck { full, probes, seed } => gradcheck(full, probes, seed),
        Command::AblateFusion { data, config, split, json } => ablate(&data, config.as_deref(), &split, json.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    threads::init_pool();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}
