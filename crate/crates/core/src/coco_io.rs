//! COCO annotation documents, detection-result documents and image files.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::datamodel::{
    validate_dataset, Annotation, BBox, Category, Dataset, Detection, ImageBuffer, ImageInfo,
    Violation,
};

#[derive(Debug, Error)]
pub enum CocoError {
    #[error("malformed JSON at byte {offset} (line {line}, column {column}): {message}")]
    Syntax {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing required key {0:?}")]
    MissingKey(&'static str),
    #[error("invalid value at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("dataset violates invariants: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Violations(Vec<Violation>),
    #[error("detection record {index}: score {score} outside [0, 1]")]
    ScoreRange { index: usize, score: f64 },
}

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported image format (PNG and JPEG only)")]
    Unsupported { path: PathBuf },
    #[error("{path}: decode failed: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: encode failed: {message}")]
    Encode { path: PathBuf, message: String },
}

/// Output codec for [`save_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaveFormat {
    Png,
    Jpeg,
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct RawCategory {
    id: u64,
    name: String,
}

#[derive(Serialize)]
struct RawDocument<'a> {
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotation>,
    categories: Vec<RawCategoryRef<'a>>,
}

#[derive(Serialize)]
struct RawCategoryRef<'a> {
    id: u64,
    name: &'a str,
}

#[derive(Serialize, Deserialize)]
struct RawDetection {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

fn syntax_error(text: &str, e: serde_json::Error) -> CocoError {
    let (line, column) = (e.line(), e.column());
    // serde_json reports 1-based line and column; turn that into a byte offset.
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            offset += column.saturating_sub(1).min(l.len());
            break;
        }
        offset += l.len();
    }
    CocoError::Syntax {
        offset,
        line,
        column,
        message: e.to_string(),
    }
}

fn parse_value(text: &str) -> Result<Value, CocoError> {
    serde_json::from_str(text).map_err(|e| syntax_error(text, e))
}

fn schema_error(path: impl Into<String>, e: impl ToString) -> CocoError {
    CocoError::Schema {
        path: path.into(),
        message: e.to_string(),
    }
}

fn records<T: for<'de> Deserialize<'de>>(
    doc: &mut serde_json::Map<String, Value>,
    key: &'static str,
) -> Result<Vec<T>, CocoError> {
    let value = doc.remove(key).ok_or(CocoError::MissingKey(key))?;
    let Value::Array(items) = value else {
        return Err(schema_error(key, "expected an array"));
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| serde_json::from_value(v).map_err(|e| schema_error(format!("{key}[{i}]"), e)))
        .collect()
}

/// Parses a COCO annotation document. Keys other than `images`,
/// `annotations` and `categories` (and unknown per-record fields) are ignored.
pub fn parse_coco(text: &str) -> Result<Dataset, CocoError> {
    let Value::Object(mut doc) = parse_value(text)? else {
        return Err(schema_error("$", "top level must be an object"));
    };
    let images: Vec<RawImage> = records(&mut doc, "images")?;
    let annotations: Vec<RawAnnotation> = records(&mut doc, "annotations")?;
    let categories: Vec<RawCategory> = records(&mut doc, "categories")?;

    let ds = Dataset {
        images: images
            .into_iter()
            .map(|r| ImageInfo {
                id: r.id,
                file_name: r.file_name,
                width: r.width,
                height: r.height,
            })
            .collect(),
        annotations: annotations
            .into_iter()
            .map(|r| Annotation {
                id: r.id,
                image_id: r.image_id,
                category_id: r.category_id,
                bbox: BBox::new(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]),
            })
            .collect(),
        categories: categories
            .into_iter()
            .map(|r| Category {
                id: r.id,
                name: r.name,
            })
            .collect(),
    };
    let violations = validate_dataset(&ds);
    if !violations.is_empty() {
        return Err(CocoError::Violations(violations));
    }
    Ok(ds)
}

/// Serializes a valid dataset with keys in the order images, annotations,
/// categories.
pub fn write_coco(ds: &Dataset) -> Result<String, CocoError> {
    let violations = validate_dataset(ds);
    if !violations.is_empty() {
        return Err(CocoError::Violations(violations));
    }
    let doc = RawDocument {
        images: ds
            .images
            .iter()
            .map(|i| RawImage {
                id: i.id,
                file_name: i.file_name.clone(),
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations: ds
            .annotations
            .iter()
            .map(|a| RawAnnotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h],
            })
            .collect(),
        categories: ds
            .categories
            .iter()
            .map(|c| RawCategoryRef {
                id: c.id,
                name: &c.name,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc).expect("dataset serialization is infallible"))
}

fn check_score(index: usize, score: f64) -> Result<(), CocoError> {
    if (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(CocoError::ScoreRange { index, score })
    }
}

/// Parses a flat detection-result array, preserving record order.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>, CocoError> {
    let Value::Array(items) = parse_value(text)? else {
        return Err(schema_error("$", "detections must be a JSON array"));
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let r: RawDetection =
                serde_json::from_value(v).map_err(|e| schema_error(format!("[{i}]"), e))?;
            check_score(i, r.score)?;
            Ok(Detection {
                image_id: r.image_id,
                category_id: r.category_id,
                bbox: BBox::new(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]),
                score: r.score,
            })
        })
        .collect()
}

pub fn write_detections(dets: &[Detection]) -> Result<String, CocoError> {
    let raw = dets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            check_score(i, d.score)?;
            Ok(RawDetection {
                image_id: d.image_id,
                category_id: d.category_id,
                bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
                score: d.score,
            })
        })
        .collect::<Result<Vec<_>, CocoError>>()?;
    Ok(serde_json::to_string_pretty(&raw).expect("detection serialization is infallible"))
}

/// Drops alpha by compositing over black, rounding to nearest.
fn composite_over_black(img: DynamicImage) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    if !img.color().has_alpha() {
        let rgb = img.into_rgb8();
        return ImageBuffer::new(w, h, rgb.into_raw()).expect("decoder produced RGB8 of its size");
    }
    let rgba = img.into_rgba8();
    let mut out = Vec::with_capacity(w as usize * h as usize * 3);
    for px in rgba.pixels() {
        let a = px[3] as u32;
        for c in &px.0[..3] {
            out.push(((*c as u32 * a + 127) / 255) as u8);
        }
    }
    ImageBuffer::new(w, h, out).expect("decoder produced RGBA8 of its size")
}

/// Decodes a PNG or JPEG file into an RGB buffer. Grayscale is expanded to
/// three channels and alpha is composited over black.
pub fn load_image(path: &Path) -> Result<ImageBuffer, ImageIoError> {
    let reader = ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|source| ImageIoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
        _ => {
            return Err(ImageIoError::Unsupported {
                path: path.to_path_buf(),
            })
        }
    }
    let img = reader.decode().map_err(|e| ImageIoError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(composite_over_black(img))
}

pub fn save_image(img: &ImageBuffer, path: &Path, format: SaveFormat) -> Result<(), ImageIoError> {
    let buf = image::RgbImage::from_raw(img.width(), img.height(), img.pixels().to_vec())
        .expect("ImageBuffer length matches its dimensions");
    let fmt = match format {
        SaveFormat::Png => ImageFormat::Png,
        SaveFormat::Jpeg => ImageFormat::Jpeg,
    };
    buf.save_with_format(path, fmt)
        .map_err(|e| ImageIoError::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}
