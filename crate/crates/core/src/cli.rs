//! Command-line front end. Exit codes: 0 success, 1 partial failure,
//! 2 usage or input error.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;

use crate::coco_io::{
    load_image, parse_coco, parse_detections, save_image, write_coco, write_detections, SaveFormat,
};
use crate::datamodel::{merge_datasets, split_dataset, Dataset, Detection};
use crate::eval::{default_thresholds, evaluate};
use crate::pipeline::{build_pipeline, parse_config, run_dataset};
use crate::postprocess::{
    major_class_suppress_per_image, nms_per_image, tta_fuse, SuppressionParams, TtaVariant,
    DEFAULT_IOU_THRESHOLD, DEFAULT_SUPPRESSION_FACTOR,
};
use crate::render;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "logoforge",
    version,
    about = "Few-shot logo detection data toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an augmentation pipeline over a COCO dataset.
    Augment(AugmentArgs),
    /// Post-process detections: NMS, major-class suppression or TTA fusion.
    Postprocess(PostprocessArgs),
    /// Compute per-class AP and mAP against ground truth.
    Eval(EvalArgs),
    /// Hold out a fixed number of images per category.
    Split(SplitArgs),
    /// Merge two or more COCO datasets.
    Merge(MergeArgs),
    /// Draw boxes and labels onto images.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// COCO annotation file.
    #[arg(long)]
    ann: PathBuf,
    /// Directory holding the images named in --ann.
    #[arg(long)]
    images: PathBuf,
    /// Output directory; receives annotations.json and images/.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's global_seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    TtaFuse,
    MajorSuppress,
    Nms,
}

#[derive(Debug, Args)]
struct PostprocessArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Detection file(s). One for nms and major-suppress; for tta-fuse,
    /// one per sidecar variant that does not name its own file.
    #[arg(long, num_args = 1..)]
    dets: Vec<PathBuf>,
    /// TTA sidecar (JSON), required by tta-fuse.
    #[arg(long)]
    variants: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SUPPRESSION_FACTOR)]
    factor: f64,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    iou: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    dets: PathBuf,
    /// Comma-separated IoU thresholds; default 0.50:0.05:0.95.
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<f64>,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    ann: PathBuf,
    #[arg(long)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    val_out: PathBuf,
}

#[derive(Debug, Args)]
struct MergeArgs {
    /// COCO files, merged left to right.
    #[arg(required = true, num_args = 2..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VisualizeArgs {
    #[arg(long)]
    ann: PathBuf,
    /// Draw these detections instead of the ground-truth boxes.
    #[arg(long)]
    dets: Option<PathBuf>,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Detections below this score are not drawn.
    #[arg(long, default_value_t = 0.0)]
    min_score: f64,
}

/// Failure of a command, mapped to its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Partial(String),
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn partial(e: impl std::fmt::Display) -> Failure {
    Failure::Partial(e.to_string())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_coco(path: &Path) -> Result<Dataset, Failure> {
    parse_coco(&read_text(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_dets(path: &Path) -> Result<Vec<Detection>, Failure> {
    parse_detections(&read_text(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| partial(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| partial(format!("{}: {e}", path.display())))
}

/// Parses `args` (program name first) and runs the selected command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ =
        env_logger::Builder::from_env(env_logger::Env::new().filter_or("LOGOFORGE_LOG", "warn"))
            .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Augment(a) => cmd_augment(a),
        Command::Postprocess(a) => cmd_postprocess(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Split(a) => cmd_split(a),
        Command::Merge(a) => cmd_merge(a),
        Command::Visualize(a) => cmd_visualize(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Partial(m)) => {
            eprintln!("error: {m}");
            EXIT_PARTIAL
        }
    }
}

fn cmd_augment(a: AugmentArgs) -> CmdResult {
    let mut cfg = parse_config(&read_text(&a.config)?)
        .map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    if let Some(seed) = a.seed {
        cfg.global_seed = seed;
    }
    let pipeline =
        build_pipeline(&cfg).map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    let ds = read_coco(&a.ann)?;
    log::info!(
        "augmenting {} images, {} passes each, {} workers",
        ds.images.len(),
        cfg.passes_per_image,
        a.workers
    );

    let report = run_dataset(&pipeline, &ds, &a.images, &a.out, a.workers).map_err(partial)?;
    let json = write_coco(&report.dataset).map_err(partial)?;
    write_text(&a.out.join("annotations.json"), &json)?;

    println!(
        "wrote {} images to {}",
        report.dataset.images.len(),
        a.out.display()
    );
    for (i, (kind, fired)) in report
        .stage_kinds
        .iter()
        .zip(&report.stage_fires)
        .enumerate()
    {
        let rate = if report.passes == 0 {
            0.0
        } else {
            *fired as f64 / report.passes as f64
        };
        println!(
            "stage {i} {kind:<20} fired {fired}/{} ({:.1}%)",
            report.passes,
            100.0 * rate
        );
    }
    if report.failures.is_empty() {
        return Ok(());
    }
    for f in &report.failures {
        eprintln!("image {} ({}): {}", f.image_id, f.file_name, f.message);
    }
    Err(partial(format!(
        "{} of {} images failed",
        report.failures.len(),
        ds.images.len()
    )))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    images: Vec<SidecarImage>,
    variants: Vec<SidecarVariant>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarImage {
    image_id: u64,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarVariant {
    width: u32,
    height: u32,
    #[serde(default)]
    hflip: bool,
    /// Detection file, relative to the sidecar's directory.
    detections: Option<PathBuf>,
}

fn cmd_postprocess(a: PostprocessArgs) -> CmdResult {
    if !(0.0..=1.0).contains(&a.factor) {
        return Err(usage(format!(
            "--factor must lie in [0, 1], got {}",
            a.factor
        )));
    }
    if !(0.0..=1.0).contains(&a.iou) {
        return Err(usage(format!("--iou must lie in [0, 1], got {}", a.iou)));
    }
    let out = match a.mode {
        Mode::Nms | Mode::MajorSuppress => {
            if a.variants.is_some() {
                return Err(usage("--variants is only used by --mode tta-fuse"));
            }
            let [path] = a.dets.as_slice() else {
                return Err(usage("this mode takes exactly one --dets file"));
            };
            let dets = read_dets(path)?;
            if a.mode == Mode::Nms {
                nms_per_image(&dets, a.iou).map_err(usage)?
            } else {
                let params = SuppressionParams::new(a.factor).map_err(usage)?;
                major_class_suppress_per_image(&dets, params).map_err(usage)?
            }
        }
        Mode::TtaFuse => {
            let Some(sidecar_path) = &a.variants else {
                return Err(usage("--mode tta-fuse requires --variants"));
            };
            fuse_from_sidecar(sidecar_path, &a.dets, a.iou)?
        }
    };
    write_text(&a.out, &write_detections(&out).map_err(partial)?)?;
    println!("wrote {} detections to {}", out.len(), a.out.display());
    Ok(())
}

fn fuse_from_sidecar(path: &Path, extra: &[PathBuf], iou: f64) -> Result<Vec<Detection>, Failure> {
    let sidecar: Sidecar = serde_json::from_str(&read_text(path)?)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let needed = sidecar
        .variants
        .iter()
        .filter(|v| v.detections.is_none())
        .count();
    if needed != extra.len() {
        return Err(usage(format!(
            "{needed} variant(s) name no detection file but {} --dets given",
            extra.len()
        )));
    }
    let mut extra = extra.iter();
    let sizes: HashMap<u64, (u32, u32)> = sidecar
        .images
        .iter()
        .map(|i| (i.image_id, (i.width, i.height)))
        .collect();

    let mut variants = Vec::with_capacity(sidecar.variants.len());
    let mut files = Vec::with_capacity(sidecar.variants.len());
    for (vi, v) in sidecar.variants.iter().enumerate() {
        variants.push(
            TtaVariant::new(v.width, v.height, v.hflip)
                .map_err(|e| usage(format!("variant {vi}: {e}")))?,
        );
        files.push(match &v.detections {
            Some(p) => base.join(p),
            None => extra.next().expect("counted above").clone(),
        });
    }

    // image_id -> per-variant detections, variants in sidecar order
    let mut per_image: BTreeMap<u64, Vec<(TtaVariant, Vec<Detection>)>> = BTreeMap::new();
    for (vi, file) in files.iter().enumerate() {
        for d in read_dets(file)? {
            if !sizes.contains_key(&d.image_id) {
                return Err(usage(format!(
                    "{}: image {} is not listed in the sidecar",
                    file.display(),
                    d.image_id
                )));
            }
            per_image
                .entry(d.image_id)
                .or_insert_with(|| variants.iter().map(|v| (*v, Vec::new())).collect())[vi]
                .1
                .push(d);
        }
    }
    let mut fused = Vec::new();
    for (id, lists) in per_image {
        fused.extend(tta_fuse(&lists, sizes[&id], iou));
    }
    Ok(fused)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let gt = read_coco(&a.gt)?;
    let dets = read_dets(&a.dets)?;
    let thresholds = if a.thresholds.is_empty() {
        default_thresholds()
    } else {
        a.thresholds
    };
    let report = evaluate(&dets, &gt, &thresholds).map_err(usage)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        let json = serde_json::to_string_pretty(&report).map_err(partial)?;
        write_text(out, &json)?;
    }
    Ok(())
}

fn cmd_split(a: SplitArgs) -> CmdResult {
    let ds = read_coco(&a.ann)?;
    let (train, val) = split_dataset(&ds, a.per_class, a.seed).map_err(usage)?;
    write_text(&a.train_out, &write_coco(&train).map_err(partial)?)?;
    write_text(&a.val_out, &write_coco(&val).map_err(partial)?)?;
    println!(
        "train: {} images, val: {} images",
        train.images.len(),
        val.images.len()
    );
    Ok(())
}

fn cmd_merge(a: MergeArgs) -> CmdResult {
    let mut merged = read_coco(&a.inputs[0])?;
    for path in &a.inputs[1..] {
        merged = merge_datasets(&merged, &read_coco(path)?).map_err(usage)?;
    }
    write_text(&a.out, &write_coco(&merged).map_err(partial)?)?;
    println!(
        "merged: {} images, {} annotations, {} categories",
        merged.images.len(),
        merged.annotations.len(),
        merged.categories.len()
    );
    Ok(())
}

fn cmd_visualize(a: VisualizeArgs) -> CmdResult {
    let ds = read_coco(&a.ann)?;
    let names: HashMap<u64, &str> = ds
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    let name = |id: u64| {
        names
            .get(&id)
            .map(|s| s.to_string())
            .unwrap_or_else(|| id.to_string())
    };

    let mut items: HashMap<u64, Vec<(crate::BBox, String, u64)>> = HashMap::new();
    match &a.dets {
        Some(p) => {
            for d in read_dets(p)?.into_iter().filter(|d| d.score >= a.min_score) {
                let label = format!("{}:{:.2}", name(d.category_id), d.score);
                items
                    .entry(d.image_id)
                    .or_default()
                    .push((d.bbox, label, d.category_id));
            }
        }
        None => {
            for ann in &ds.annotations {
                items.entry(ann.image_id).or_default().push((
                    ann.bbox,
                    name(ann.category_id),
                    ann.category_id,
                ));
            }
        }
    }
    fs::create_dir_all(&a.out).map_err(|e| partial(format!("{}: {e}", a.out.display())))?;

    let failures: Vec<String> = ds
        .images
        .par_iter()
        .filter_map(|info| {
            let src = a.images.join(&info.file_name);
            let stem = Path::new(&info.file_name)
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            let dst = a.out.join(format!("{stem}.png"));
            let result = load_image(&src)
                .map_err(|e| e.to_string())
                .and_then(|mut img| {
                    if let Some(list) = items.get(&info.id) {
                        render::annotate(&mut img, list);
                    }
                    save_image(&img, &dst, SaveFormat::Png).map_err(|e| e.to_string())
                });
            result.err().map(|e| format!("image {}: {e}", info.id))
        })
        .collect();
    println!(
        "rendered {} of {} images to {}",
        ds.images.len() - failures.len(),
        ds.images.len(),
        a.out.display()
    );
    if failures.is_empty() {
        return Ok(());
    }
    for f in &failures {
        eprintln!("{f}");
    }
    Err(partial(format!("{} images failed", failures.len())))
}
