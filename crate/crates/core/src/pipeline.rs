//! Declarative augmentation pipelines with deterministic per-stage seeding
//! and parallel dataset-scale execution.
//!
//! Every random draw in a pass comes from a stream seeded by
//! [`derive_seed`]`(global_seed, image_id, pass, stage_index)`, so output
//! depends only on the config, the dataset and the seed, never on worker
//! count or scheduling order.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::coco_io::{load_image, save_image, SaveFormat};
use crate::datamodel::{Annotation, Dataset, ImageInfo, Sample};
use crate::geometry::{
    clip_and_filter, hflip, pad_to, resize_sample, rotate90, scale_jitter, simple_mixup,
    GeometryError, MixupParams, Resample, RotationChoice, ScaleJitterParams,
};
use crate::photometric::{
    rand_augment, strong_color_jitter, ColorJitterParams, PhotometricError, RandAugmentParams,
};

/// Training resolution of the baseline recipe.
pub const BASE_RESOLUTION: u32 = 1200;
/// Raised training resolution.
pub const HIGH_RESOLUTION: u32 = 1472;

/// Random stream handed to every stage.
pub type StageRng = ChaCha8Rng;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON (line {line}, column {column}): {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("config: {0}")]
    Schema(String),
    #[error("stage {index}: {message}")]
    Stage { index: usize, message: String },
    #[error("resolution must be at least 1, got {0}")]
    BadResolution(u32),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {index} ({kind}): {source}")]
    Geometry {
        index: usize,
        kind: &'static str,
        #[source]
        source: GeometryError,
    },
    #[error("stage {index} ({kind}): {source}")]
    Photometric {
        index: usize,
        kind: &'static str,
        #[source]
        source: PhotometricError,
    },
    #[error("mixup partner: {0}")]
    Partner(String),
    #[error("output directory {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn min_ratio() -> f64 {
    ScaleJitterParams::default().min_ratio
}
fn max_ratio() -> f64 {
    ScaleJitterParams::default().max_ratio
}
fn all_turns() -> Vec<u8> {
    vec![1, 2, 3]
}

/// One augmentation stage as written in a config file. `probability` is
/// the chance the stage fires on a given pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageSpec {
    ScaleJitter {
        #[serde(default = "one")]
        probability: f64,
        #[serde(default = "min_ratio")]
        min_ratio: f64,
        #[serde(default = "max_ratio")]
        max_ratio: f64,
        #[serde(default)]
        resample: Resample,
    },
    Rotate90 {
        #[serde(default = "half")]
        probability: f64,
        /// Candidate clockwise quarter turns, drawn uniformly.
        #[serde(default = "all_turns")]
        quarter_turns: Vec<u8>,
    },
    Hflip {
        #[serde(default = "half")]
        probability: f64,
    },
    SimpleMixup {
        #[serde(default = "one")]
        probability: f64,
        #[serde(default = "half")]
        alpha: f64,
        #[serde(default = "min_ratio")]
        min_ratio: f64,
        #[serde(default = "max_ratio")]
        max_ratio: f64,
        #[serde(default)]
        resample: Resample,
    },
    StrongColorJitter {
        #[serde(default = "one")]
        probability: f64,
        #[serde(default)]
        params: ColorJitterParams,
    },
    RandAugment {
        #[serde(default = "one")]
        probability: f64,
        #[serde(default)]
        params: RandAugmentParams,
    },
    /// Square (or explicit) resize; missing sides default to the config
    /// resolution.
    ResizeTo {
        #[serde(default = "one")]
        probability: f64,
        #[serde(default)]
        width: Option<u32>,
        #[serde(default)]
        height: Option<u32>,
        #[serde(default)]
        resample: Resample,
    },
    PadTo {
        #[serde(default = "one")]
        probability: f64,
        width: u32,
        height: u32,
        #[serde(default)]
        fill: u8,
    },
}

impl StageSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            StageSpec::ScaleJitter { .. } => "scale_jitter",
            StageSpec::Rotate90 { .. } => "rotate90",
            StageSpec::Hflip { .. } => "hflip",
            StageSpec::SimpleMixup { .. } => "simple_mixup",
            StageSpec::StrongColorJitter { .. } => "strong_color_jitter",
            StageSpec::RandAugment { .. } => "rand_augment",
            StageSpec::ResizeTo { .. } => "resize_to",
            StageSpec::PadTo { .. } => "pad_to",
        }
    }

    pub fn probability(&self) -> f64 {
        match self {
            StageSpec::ScaleJitter { probability, .. }
            | StageSpec::Rotate90 { probability, .. }
            | StageSpec::Hflip { probability }
            | StageSpec::SimpleMixup { probability, .. }
            | StageSpec::StrongColorJitter { probability, .. }
            | StageSpec::RandAugment { probability, .. }
            | StageSpec::ResizeTo { probability, .. }
            | StageSpec::PadTo { probability, .. } => *probability,
        }
    }
}

fn default_resolution() -> u32 {
    BASE_RESOLUTION
}
fn default_passes() -> u32 {
    1
}
fn default_min_box() -> f64 {
    crate::geometry::DEFAULT_MIN_BOX_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub global_seed: u64,
    /// Output side length used by `resize_to` stages without explicit size.
    #[serde(default = "default_resolution")]
    pub resolution: u32,
    #[serde(default = "default_passes")]
    pub passes_per_image: u32,
    #[serde(default = "default_min_box")]
    pub min_box_size: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: Vec::new(),
            global_seed: 0,
            resolution: BASE_RESOLUTION,
            passes_per_image: 1,
            min_box_size: default_min_box(),
        }
    }
}

/// Stage toggles of the augmentation ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Rotation,
    Mixup,
    ColorJitter,
    RandAugment,
}

impl PipelineConfig {
    /// Simple-Mixup, random quarter-turn rotation, strong color jitter,
    /// RandAugment (N=1, M=10), then a square resize to `resolution`.
    pub fn logo_recipe(resolution: u32, global_seed: u64) -> Self {
        Self {
            stages: vec![
                StageSpec::SimpleMixup {
                    probability: 1.0,
                    alpha: 0.5,
                    min_ratio: 0.1,
                    max_ratio: 2.0,
                    resample: Resample::Bilinear,
                },
                StageSpec::Rotate90 {
                    probability: 0.5,
                    quarter_turns: all_turns(),
                },
                StageSpec::StrongColorJitter {
                    probability: 1.0,
                    params: ColorJitterParams::default(),
                },
                StageSpec::RandAugment {
                    probability: 1.0,
                    params: RandAugmentParams::default(),
                },
                StageSpec::ResizeTo {
                    probability: 1.0,
                    width: None,
                    height: None,
                    resample: Resample::Bilinear,
                },
            ],
            global_seed,
            resolution,
            passes_per_image: 1,
            min_box_size: default_min_box(),
        }
    }

    /// The config with one augmentation switched off. Removing Simple-Mixup
    /// substitutes plain scale jitter over the same ratio range.
    pub fn ablate(&self, which: Ablation) -> Self {
        let mut out = self.clone();
        out.stages = self
            .stages
            .iter()
            .filter_map(|s| match (which, s) {
                (Ablation::Rotation, StageSpec::Rotate90 { .. })
                | (Ablation::ColorJitter, StageSpec::StrongColorJitter { .. })
                | (Ablation::RandAugment, StageSpec::RandAugment { .. }) => None,
                (
                    Ablation::Mixup,
                    StageSpec::SimpleMixup {
                        probability,
                        min_ratio,
                        max_ratio,
                        resample,
                        ..
                    },
                ) => Some(StageSpec::ScaleJitter {
                    probability: *probability,
                    min_ratio: *min_ratio,
                    max_ratio: *max_ratio,
                    resample: *resample,
                }),
                _ => Some(s.clone()),
            })
            .collect();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }
}

/// Parses a JSON pipeline config. Unknown fields are rejected; stage errors
/// name the stage index.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let stages = match doc.as_object_mut() {
        Some(obj) => obj.remove("stages"),
        None => return Err(ConfigError::Schema("top level must be an object".into())),
    };
    let mut cfg: PipelineConfig =
        serde_json::from_value(doc).map_err(|e| ConfigError::Schema(e.to_string()))?;
    if let Some(stages) = stages {
        let Value::Array(items) = stages else {
            return Err(ConfigError::Schema("\"stages\" must be an array".into()));
        };
        cfg.stages = items
            .into_iter()
            .enumerate()
            .map(|(index, v)| {
                serde_json::from_value(v).map_err(|e| ConfigError::Stage {
                    index,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
    }
    Ok(cfg)
}

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream for one stage of one pass over one image:
/// `h = global; for k in [image_id, pass, stage]: h = splitmix64(h ^ splitmix64(k))`.
pub fn derive_seed(global_seed: u64, image_id: u64, pass: u64, stage: u64) -> u64 {
    [image_id, pass, stage]
        .into_iter()
        .fold(global_seed, |h, k| splitmix64(h ^ splitmix64(k)))
}

pub fn stage_rng(global_seed: u64, image_id: u64, pass: u64, stage: u64) -> StageRng {
    StageRng::seed_from_u64(derive_seed(global_seed, image_id, pass, stage))
}

/// Supplies the second image for Simple-Mixup.
pub trait PartnerProvider: Sync {
    /// Picks a partner for `image_id`, drawing any randomness from `rng`.
    /// `Ok(None)` means no partner exists; mixup then degrades to scale
    /// jitter of the current sample.
    fn partner(&self, image_id: u64, rng: &mut StageRng) -> Result<Option<Sample>, PipelineError>;
}

/// Never supplies a partner.
pub struct NoPartner;

impl PartnerProvider for NoPartner {
    fn partner(&self, _: u64, _: &mut StageRng) -> Result<Option<Sample>, PipelineError> {
        Ok(None)
    }
}

/// Always supplies the same sample.
pub struct FixedPartner(pub Sample);

impl PartnerProvider for FixedPartner {
    fn partner(&self, _: u64, _: &mut StageRng) -> Result<Option<Sample>, PipelineError> {
        Ok(Some(self.0.clone()))
    }
}

/// Uniform draw over in-memory samples, excluding the current image.
pub struct SamplePool<'a>(pub &'a [Sample]);

impl PartnerProvider for SamplePool<'_> {
    fn partner(&self, image_id: u64, rng: &mut StageRng) -> Result<Option<Sample>, PipelineError> {
        let others: Vec<&Sample> = self.0.iter().filter(|s| s.image_id != image_id).collect();
        if others.is_empty() {
            return Ok(None);
        }
        Ok(Some(others[rng.random_range(0..others.len())].clone()))
    }
}

#[derive(Debug, Clone)]
enum StageOp {
    ScaleJitter(ScaleJitterParams, Resample),
    Rotate90(Vec<RotationChoice>),
    Hflip,
    SimpleMixup(MixupParams, Resample),
    StrongColorJitter(ColorJitterParams),
    RandAugment(RandAugmentParams),
    ResizeTo(u32, u32, Resample),
    PadTo(u32, u32, u8),
}

#[derive(Debug, Clone)]
struct Stage {
    kind: &'static str,
    probability: f64,
    op: StageOp,
}

/// A validated, executable pipeline.
#[derive(Debug, Clone)]
pub struct Pipeline {
    stages: Vec<Stage>,
    global_seed: u64,
    passes_per_image: u32,
    min_box_size: f64,
}

/// Result of one pass over one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PassOutput {
    pub sample: Sample,
    /// Whether each stage fired, by stage index.
    pub fired: Vec<bool>,
}

/// Validates a config into an executable pipeline.
pub fn build_pipeline(cfg: &PipelineConfig) -> Result<Pipeline, ConfigError> {
    if cfg.resolution == 0 {
        return Err(ConfigError::BadResolution(cfg.resolution));
    }
    if !(cfg.min_box_size >= 0.0 && cfg.min_box_size.is_finite()) {
        return Err(ConfigError::Schema(format!(
            "min_box_size must be non-negative, got {}",
            cfg.min_box_size
        )));
    }
    let stages = cfg
        .stages
        .iter()
        .enumerate()
        .map(|(index, spec)| {
            let err = |message: String| ConfigError::Stage { index, message };
            let p = spec.probability();
            if !(0.0..=1.0).contains(&p) {
                return Err(err(format!("probability {p} outside [0, 1]")));
            }
            let op = match spec {
                StageSpec::ScaleJitter {
                    min_ratio,
                    max_ratio,
                    resample,
                    ..
                } => StageOp::ScaleJitter(
                    ScaleJitterParams::new(*min_ratio, *max_ratio)
                        .map_err(|e| err(e.to_string()))?,
                    *resample,
                ),
                StageSpec::Rotate90 { quarter_turns, .. } => {
                    if quarter_turns.is_empty() {
                        return Err(err("quarter_turns must not be empty".into()));
                    }
                    StageOp::Rotate90(
                        quarter_turns
                            .iter()
                            .map(|&n| RotationChoice::new(n).map_err(|e| err(e.to_string())))
                            .collect::<Result<_, _>>()?,
                    )
                }
                StageSpec::Hflip { .. } => StageOp::Hflip,
                StageSpec::SimpleMixup {
                    alpha,
                    min_ratio,
                    max_ratio,
                    resample,
                    ..
                } => {
                    let params = MixupParams {
                        alpha: *alpha,
                        jitter: ScaleJitterParams {
                            min_ratio: *min_ratio,
                            max_ratio: *max_ratio,
                        },
                    };
                    params.validate().map_err(|e| err(e.to_string()))?;
                    StageOp::SimpleMixup(params, *resample)
                }
                StageSpec::StrongColorJitter { params, .. } => {
                    params.validate().map_err(|e| err(e.to_string()))?;
                    StageOp::StrongColorJitter(params.clone())
                }
                StageSpec::RandAugment { params, .. } => {
                    params.validate().map_err(|e| err(e.to_string()))?;
                    StageOp::RandAugment(params.clone())
                }
                StageSpec::ResizeTo {
                    width,
                    height,
                    resample,
                    ..
                } => {
                    let w = width.unwrap_or(cfg.resolution);
                    let h = height.unwrap_or(cfg.resolution);
                    if w == 0 || h == 0 {
                        return Err(err(format!("resize target {w}x{h} must be at least 1x1")));
                    }
                    StageOp::ResizeTo(w, h, *resample)
                }
                StageSpec::PadTo {
                    width,
                    height,
                    fill,
                    ..
                } => {
                    if *width == 0 || *height == 0 {
                        return Err(err(format!(
                            "pad target {width}x{height} must be at least 1x1"
                        )));
                    }
                    StageOp::PadTo(*width, *height, *fill)
                }
            };
            Ok(Stage {
                kind: spec.kind(),
                probability: p,
                op,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Pipeline {
        stages,
        global_seed: cfg.global_seed,
        passes_per_image: cfg.passes_per_image,
        min_box_size: cfg.min_box_size,
    })
}

impl Pipeline {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn stage_kinds(&self) -> Vec<&'static str> {
        self.stages.iter().map(|s| s.kind).collect()
    }

    pub fn passes_per_image(&self) -> u32 {
        self.passes_per_image
    }

    /// Runs every stage in order on `sample` for the given pass, then clips
    /// and filters boxes.
    pub fn apply(
        &self,
        sample: &Sample,
        partners: &dyn PartnerProvider,
        pass: u32,
    ) -> Result<PassOutput, PipelineError> {
        let image_id = sample.image_id;
        let mut s = sample.clone();
        let mut fired = Vec::with_capacity(self.stages.len());
        for (index, stage) in self.stages.iter().enumerate() {
            let mut rng = stage_rng(self.global_seed, image_id, pass as u64, index as u64);
            let fire = rng.random::<f64>() < stage.probability;
            fired.push(fire);
            if !fire {
                continue;
            }
            let geo = |source| PipelineError::Geometry {
                index,
                kind: stage.kind,
                source,
            };
            s = match &stage.op {
                StageOp::ScaleJitter(params, filter) => {
                    scale_jitter(&s, params.sample(&mut rng), *filter).map_err(geo)?
                }
                StageOp::Rotate90(choices) => {
                    rotate90(&s, choices[rng.random_range(0..choices.len())])
                }
                StageOp::Hflip => hflip(&s),
                StageOp::SimpleMixup(params, filter) => {
                    let partner = partners.partner(image_id, &mut rng)?;
                    let r0 = params.jitter.sample(&mut rng);
                    let r1 = params.jitter.sample(&mut rng);
                    match partner {
                        Some(b) => simple_mixup(&s, &b, params, (r0, r1), *filter).map_err(geo)?,
                        None => scale_jitter(&s, r0, *filter).map_err(geo)?,
                    }
                }
                StageOp::StrongColorJitter(params) => Sample {
                    image: strong_color_jitter(&s.image, params, &mut rng),
                    ..s
                },
                StageOp::RandAugment(params) => Sample {
                    image: rand_augment(&s.image, params, &mut rng).map_err(|source| {
                        PipelineError::Photometric {
                            index,
                            kind: stage.kind,
                            source,
                        }
                    })?,
                    ..s
                },
                StageOp::ResizeTo(w, h, filter) => {
                    resize_sample(&s, *w, *h, *filter, self.min_box_size).map_err(geo)?
                }
                StageOp::PadTo(w, h, fill) => pad_to(&s, *w, *h, *fill).map_err(geo)?,
            };
        }
        Ok(PassOutput {
            sample: clip_and_filter(&s, self.min_box_size),
            fired,
        })
    }
}

/// Free-function form of [`Pipeline::apply`].
pub fn apply_pipeline(
    p: &Pipeline,
    sample: &Sample,
    partners: &dyn PartnerProvider,
    pass: u32,
) -> Result<PassOutput, PipelineError> {
    p.apply(sample, partners, pass)
}

/// Loads a dataset image with its (clipped) annotations, checking the
/// decoded size against the stored one.
pub fn load_sample(
    info: &ImageInfo,
    annotations: &[Annotation],
    image_root: &Path,
    min_box_size: f64,
) -> Result<Sample, String> {
    let image = load_image(&image_root.join(&info.file_name)).map_err(|e| e.to_string())?;
    if (image.width(), image.height()) != (info.width, info.height) {
        return Err(format!(
            "{}: decoded size {}x{} differs from annotated {}x{}",
            info.file_name,
            image.width(),
            image.height(),
            info.width,
            info.height
        ));
    }
    let s = Sample::new(info.id, image, annotations.to_vec());
    Ok(clip_and_filter(&s, min_box_size))
}

/// Mixup partners drawn uniformly from a dataset on disk.
pub struct DatasetPartners<'a> {
    ds: &'a Dataset,
    by_image: HashMap<u64, Vec<Annotation>>,
    image_root: &'a Path,
    min_box_size: f64,
}

impl<'a> DatasetPartners<'a> {
    pub fn new(ds: &'a Dataset, image_root: &'a Path, min_box_size: f64) -> Self {
        Self {
            ds,
            by_image: ds.annotations_by_image(),
            image_root,
            min_box_size,
        }
    }
}

impl PartnerProvider for DatasetPartners<'_> {
    fn partner(&self, image_id: u64, rng: &mut StageRng) -> Result<Option<Sample>, PipelineError> {
        let others: Vec<&ImageInfo> = self.ds.images.iter().filter(|i| i.id != image_id).collect();
        if others.is_empty() {
            return Ok(None);
        }
        let info = others[rng.random_range(0..others.len())];
        let anns = self
            .by_image
            .get(&info.id)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        load_sample(info, anns, self.image_root, self.min_box_size)
            .map(Some)
            .map_err(PipelineError::Partner)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFailure {
    pub image_id: u64,
    pub file_name: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    /// Dataset describing the written images, file names relative to
    /// `<out_root>/images`.
    pub dataset: Dataset,
    pub failures: Vec<ImageFailure>,
    pub stage_kinds: Vec<&'static str>,
    /// How often each stage fired across all completed passes.
    pub stage_fires: Vec<u64>,
    pub passes: u64,
}

/// Subdirectory of the output root that receives augmented images.
pub const IMAGES_DIR: &str = "images";

/// Augments every image of `ds` `passes_per_image` times, writing
/// `<out_root>/images/{image_id}_{pass}.png`. Per-image failures are
/// collected in the report; the run continues past them.
pub fn run_dataset(
    p: &Pipeline,
    ds: &Dataset,
    image_root: &Path,
    out_root: &Path,
    workers: usize,
) -> Result<RunReport, PipelineError> {
    let img_dir = out_root.join(IMAGES_DIR);
    fs::create_dir_all(&img_dir).map_err(|source| PipelineError::Output {
        path: img_dir.clone(),
        source,
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;

    let by_image = ds.annotations_by_image();
    let partners = DatasetPartners::new(ds, image_root, p.min_box_size);
    let passes = p.passes_per_image;

    type PassResult = Result<(String, PassOutput), String>;
    let results: Vec<(usize, Vec<PassResult>)> = pool.install(|| {
        ds.images
            .par_iter()
            .enumerate()
            .map(|(i, info)| {
                let anns = by_image.get(&info.id).map(Vec::as_slice).unwrap_or(&[]);
                let sample = match load_sample(info, anns, image_root, p.min_box_size) {
                    Ok(s) => s,
                    Err(e) => return (i, vec![Err(e)]),
                };
                let outs = (0..passes)
                    .into_par_iter()
                    .map(|pass| {
                        let out = p
                            .apply(&sample, &partners, pass)
                            .map_err(|e| e.to_string())?;
                        let name = format!("{}_{}.png", info.id, pass);
                        save_image(&out.sample.image, &img_dir.join(&name), SaveFormat::Png)
                            .map_err(|e| e.to_string())?;
                        Ok((name, out))
                    })
                    .collect();
                (i, outs)
            })
            .collect()
    });

    let mut report = RunReport {
        dataset: Dataset {
            categories: ds.categories.clone(),
            ..Dataset::default()
        },
        failures: Vec::new(),
        stage_kinds: p.stage_kinds(),
        stage_fires: vec![0; p.len()],
        passes: 0,
    };
    let mut next_ann = 1u64;
    for (i, outs) in results {
        let info = &ds.images[i];
        for r in outs {
            match r {
                Ok((file_name, out)) => {
                    let id = report.dataset.images.len() as u64 + 1;
                    report.dataset.images.push(ImageInfo {
                        id,
                        file_name,
                        width: out.sample.width(),
                        height: out.sample.height(),
                    });
                    for a in &out.sample.annotations {
                        report.dataset.annotations.push(Annotation {
                            id: next_ann,
                            image_id: id,
                            ..*a
                        });
                        next_ann += 1;
                    }
                    for (count, fired) in report.stage_fires.iter_mut().zip(&out.fired) {
                        *count += *fired as u64;
                    }
                    report.passes += 1;
                }
                Err(message) => report.failures.push(ImageFailure {
                    image_id: info.id,
                    file_name: info.file_name.clone(),
                    message,
                }),
            }
        }
    }
    Ok(report)
}
