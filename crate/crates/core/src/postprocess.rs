//! Detection post-processing: IoU, class-wise NMS, TTA coordinate mapping
//! and fusion, and major-class score suppression.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{BBox, Detection};

/// Inference resolutions used for multi-resolution test-time augmentation.
pub const TTA_RESOLUTIONS: [u32; 3] = [982, 1472, 2208];

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SUPPRESSION_FACTOR: f64 = 0.3;

#[derive(Debug, Error, PartialEq)]
pub enum PostprocessError {
    #[error("detections span several images ({first} and {other}); expected one")]
    MixedImages { first: u64, other: u64 },
    #[error("IoU threshold {0} outside [0, 1]")]
    BadIouThreshold(f64),
    #[error("suppression factor {0} outside [0, 1]")]
    BadFactor(f64),
    #[error("variant resolution must be at least 1x1, got {0}x{1}")]
    BadVariant(u32, u32),
}

/// One test-time view: the resolution inference ran at and whether the
/// input was mirrored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtaVariant {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub hflip: bool,
}

impl TtaVariant {
    pub fn new(width: u32, height: u32, hflip: bool) -> Result<Self, PostprocessError> {
        if width == 0 || height == 0 {
            return Err(PostprocessError::BadVariant(width, height));
        }
        Ok(Self {
            width,
            height,
            hflip,
        })
    }
}

/// Every square resolution in `sizes`, each with and without a flip.
pub fn multi_resolution_variants(sizes: &[u32]) -> Vec<TtaVariant> {
    sizes
        .iter()
        .flat_map(|&s| {
            [false, true].map(|hflip| TtaVariant {
                width: s,
                height: s,
                hflip,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuppressionParams {
    pub factor: f64,
}

impl Default for SuppressionParams {
    fn default() -> Self {
        Self {
            factor: DEFAULT_SUPPRESSION_FACTOR,
        }
    }
}

impl SuppressionParams {
    pub fn new(factor: f64) -> Result<Self, PostprocessError> {
        if (0.0..=1.0).contains(&factor) {
            Ok(Self { factor })
        } else {
            Err(PostprocessError::BadFactor(factor))
        }
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(1.0)
}

fn single_image(dets: &[Detection]) -> Result<(), PostprocessError> {
    if let Some(first) = dets.first() {
        if let Some(other) = dets.iter().find(|d| d.image_id != first.image_id) {
            return Err(PostprocessError::MixedImages {
                first: first.image_id,
                other: other.image_id,
            });
        }
    }
    Ok(())
}

/// Indices of `dets` ordered by descending score, ties by ascending index.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy class-wise NMS over detections of a single image. Returns the
/// kept detections by descending score.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Result<Vec<Detection>, PostprocessError> {
    if !(0.0..=1.0).contains(&iou_thresh) {
        return Err(PostprocessError::BadIouThreshold(iou_thresh));
    }
    single_image(dets)?;
    Ok(nms_unchecked(dets, iou_thresh))
}

fn nms_unchecked(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        let suppressed = kept.iter().any(|&k| {
            dets[k].category_id == dets[i].category_id
                && iou(&dets[k].bbox, &dets[i].bbox) > iou_thresh
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i]).collect()
}

/// Groups detections by image id in ascending id order.
pub fn group_by_image(dets: &[Detection]) -> BTreeMap<u64, Vec<Detection>> {
    let mut groups: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        groups.entry(d.image_id).or_default().push(*d);
    }
    groups
}

/// [`nms`] applied to every image separately.
pub fn nms_per_image(
    dets: &[Detection],
    iou_thresh: f64,
) -> Result<Vec<Detection>, PostprocessError> {
    let mut out = Vec::with_capacity(dets.len());
    for group in group_by_image(dets).values() {
        out.extend(nms(group, iou_thresh)?);
    }
    Ok(out)
}

/// Maps detections from a variant's coordinate frame back to the original
/// image: undo the flip, then rescale each axis.
pub fn map_to_original(
    dets: &[Detection],
    variant: TtaVariant,
    original: (u32, u32),
) -> Vec<Detection> {
    let vw = variant.width as f64;
    let sx = original.0 as f64 / vw;
    let sy = original.1 as f64 / variant.height as f64;
    dets.iter()
        .map(|d| {
            let mut b = d.bbox;
            if variant.hflip {
                b.x = vw - b.x - b.w;
            }
            Detection {
                bbox: BBox::new(b.x * sx, b.y * sy, b.w * sx, b.h * sy),
                ..*d
            }
        })
        .collect()
}

/// Inverse of [`map_to_original`]: original frame into the variant frame.
pub fn map_to_variant(
    dets: &[Detection],
    variant: TtaVariant,
    original: (u32, u32),
) -> Vec<Detection> {
    let vw = variant.width as f64;
    let sx = vw / original.0 as f64;
    let sy = variant.height as f64 / original.1 as f64;
    dets.iter()
        .map(|d| {
            let mut b = BBox::new(d.bbox.x * sx, d.bbox.y * sy, d.bbox.w * sx, d.bbox.h * sy);
            if variant.hflip {
                b.x = vw - b.x - b.w;
            }
            Detection { bbox: b, ..*d }
        })
        .collect()
}

/// Fuses per-variant detections of one image: map each list back to the
/// original frame, concatenate, run class-wise NMS and clip to the image.
/// Detections of several images are fused image by image, in ascending id
/// order. Boxes that clip to nothing are dropped.
pub fn tta_fuse(
    per_variant: &[(TtaVariant, Vec<Detection>)],
    original: (u32, u32),
    iou_thresh: f64,
) -> Vec<Detection> {
    let merged: Vec<Detection> = per_variant
        .iter()
        .flat_map(|(v, dets)| map_to_original(dets, *v, original))
        .collect();
    group_by_image(&merged)
        .values()
        .flat_map(|group| nms_unchecked(group, iou_thresh))
        .filter_map(|d| {
            let b = d.bbox.clip_to(original.0 as f64, original.1 as f64);
            (b.w > 0.0 && b.h > 0.0).then_some(Detection { bbox: b, ..d })
        })
        .collect()
}

/// Category of the top-scoring detection; ties go to the lower category id,
/// then the earlier detection.
pub fn major_class(dets: &[Detection]) -> Option<u64> {
    dets.iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.category_id.cmp(&b.category_id))
                .then(ia.cmp(ib))
        })
        .map(|(_, d)| d.category_id)
}

/// Scales the scores of every detection outside the image's major class by
/// `params.factor`. Output is ordered by descending adjusted score.
pub fn major_class_suppress(
    dets: &[Detection],
    params: SuppressionParams,
) -> Result<Vec<Detection>, PostprocessError> {
    single_image(dets)?;
    let Some(major) = major_class(dets) else {
        return Ok(Vec::new());
    };
    let adjusted: Vec<Detection> = dets
        .iter()
        .map(|d| {
            if d.category_id == major {
                *d
            } else {
                Detection {
                    score: d.score * params.factor,
                    ..*d
                }
            }
        })
        .collect();
    Ok(score_order(&adjusted)
        .into_iter()
        .map(|i| adjusted[i])
        .collect())
}

/// [`major_class_suppress`] applied to every image separately.
pub fn major_class_suppress_per_image(
    dets: &[Detection],
    params: SuppressionParams,
) -> Result<Vec<Detection>, PostprocessError> {
    let mut out = Vec::with_capacity(dets.len());
    for group in group_by_image(dets).values() {
        out.extend(major_class_suppress(group, params)?);
    }
    Ok(out)
}
