//! Data-side machinery for few-shot logo detection: box-aware augmentation,
//! detection post-processing (NMS, multi-resolution TTA fusion, major-class
//! score suppression) and COCO-style mAP evaluation.

pub mod cli;
pub mod coco_io;
pub mod datamodel;
pub mod eval;
pub mod geometry;
pub mod photometric;
pub mod pipeline;
pub mod postprocess;
mod render;

pub use datamodel::{
    validate_dataset, Annotation, BBox, Category, Dataset, Detection, ImageBuffer, ImageInfo,
    Sample, Violation,
};
