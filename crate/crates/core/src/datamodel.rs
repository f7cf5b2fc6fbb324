//! Core domain types: rasters, boxes, annotations, datasets and detections,
//! plus dataset-level validation, per-class holdout splitting and merging.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("pixel buffer has {actual} bytes, expected {expected} for {width}x{height} RGB")]
    PixelLength {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("category {category_id} ({name:?}) has {available} candidate images, holdout needs {needed}")]
    NotEnoughImages {
        category_id: u64,
        name: String,
        available: usize,
        needed: usize,
    },
    #[error("file name {file_name:?} appears with different dimensions ({a_width}x{a_height} vs {b_width}x{b_height})")]
    MergeCollision {
        file_name: String,
        a_width: u32,
        a_height: u32,
        b_width: u32,
        b_height: u32,
    },
    #[error("invalid dataset: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Decoded 8-bit RGB raster, row-major and channel-interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::EmptyImage { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(DataError::PixelLength {
                width,
                height,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Image of the given size with every pixel set to `rgb`.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Copies out the `w`x`h` region whose top-left corner is `(x, y)`.
    ///
    /// Panics if the region is empty or leaves the image.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> ImageBuffer {
        assert!(w > 0 && h > 0 && x + w <= self.width && y + h <= self.height);
        let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
        for row in y..y + h {
            let start = self.offset(x, row);
            pixels.extend_from_slice(&self.pixels[start..start + w as usize * 3]);
        }
        ImageBuffer {
            width: w,
            height: h,
            pixels,
        }
    }
}

/// Axis-aligned box in pixel coordinates: left, top, width, height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    /// Positive, finite extent with a non-negative origin.
    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.w > 0.0 && self.h > 0.0 && self.x >= 0.0 && self.y >= 0.0
    }

    /// Intersection with the rectangle `[0, width] x [0, height]`. The result
    /// may have zero extent when the box lies outside.
    pub fn clip_to(&self, width: f64, height: f64) -> BBox {
        let x0 = self.x.clamp(0.0, width);
        let y0 = self.y.clamp(0.0, height);
        let x1 = self.right().clamp(0.0, width);
        let y1 = self.bottom().clamp(0.0, height);
        BBox::new(x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0))
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.right() <= width && self.bottom() <= height
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

/// Image record of a dataset; pixels live on disk under `file_name`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInfo {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

/// One decoded image together with its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageBuffer,
    pub annotations: Vec<Annotation>,
    pub image_id: u64,
}

impl Sample {
    pub fn new(image_id: u64, image: ImageBuffer, annotations: Vec<Annotation>) -> Self {
        Self {
            image,
            annotations,
            image_id,
        }
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    /// Describes every broken sample invariant; empty when the sample is valid.
    pub fn violations(&self) -> Vec<String> {
        let (w, h) = (self.width() as f64, self.height() as f64);
        let mut out = Vec::new();
        for a in &self.annotations {
            if a.image_id != self.image_id {
                out.push(format!(
                    "annotation {} belongs to image {} but sample is image {}",
                    a.id, a.image_id, self.image_id
                ));
            }
            if !a.bbox.is_valid() {
                out.push(format!(
                    "annotation {} has degenerate box {:?}",
                    a.id, a.bbox
                ));
            } else if !a.bbox.within(w, h) {
                out.push(format!(
                    "annotation {} box {:?} exceeds {}x{} image",
                    a.id, a.bbox, w, h
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

impl Dataset {
    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn category(&self, id: u64) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    /// Annotations grouped by image id, each group in dataset order.
    pub fn annotations_by_image(&self) -> HashMap<u64, Vec<Annotation>> {
        let mut map: HashMap<u64, Vec<Annotation>> = HashMap::new();
        for a in &self.annotations {
            map.entry(a.image_id).or_default().push(*a);
        }
        map
    }
}

/// Detector output for one box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

/// A broken dataset rule, naming the offending id.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateImageId(u64),
    DuplicateAnnotationId(u64),
    DuplicateCategoryId(u64),
    DuplicateCategoryName(String),
    EmptyCategoryName(u64),
    EmptyImage {
        image_id: u64,
    },
    MissingImage {
        annotation_id: u64,
        image_id: u64,
    },
    MissingCategory {
        annotation_id: u64,
        category_id: u64,
    },
    DegenerateBox {
        annotation_id: u64,
        bbox: BBox,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateImageId(id) => write!(f, "image id {id} is not unique"),
            Violation::DuplicateAnnotationId(id) => write!(f, "annotation id {id} is not unique"),
            Violation::DuplicateCategoryId(id) => write!(f, "category id {id} is not unique"),
            Violation::DuplicateCategoryName(n) => write!(f, "category name {n:?} is not unique"),
            Violation::EmptyCategoryName(id) => write!(f, "category {id} has an empty name"),
            Violation::EmptyImage { image_id } => {
                write!(f, "image {image_id} has zero width or height")
            }
            Violation::MissingImage {
                annotation_id,
                image_id,
            } => write!(
                f,
                "annotation {annotation_id} references missing image {image_id}"
            ),
            Violation::MissingCategory {
                annotation_id,
                category_id,
            } => write!(
                f,
                "annotation {annotation_id} references missing category {category_id}"
            ),
            Violation::DegenerateBox {
                annotation_id,
                bbox,
            } => write!(
                f,
                "annotation {annotation_id} has degenerate box [{}, {}, {}, {}]",
                bbox.x, bbox.y, bbox.w, bbox.h
            ),
        }
    }
}

/// Checks every dataset invariant. An empty result means the dataset is valid.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut image_ids = HashSet::new();
    for img in &ds.images {
        if !image_ids.insert(img.id) {
            out.push(Violation::DuplicateImageId(img.id));
        }
        if img.width == 0 || img.height == 0 {
            out.push(Violation::EmptyImage { image_id: img.id });
        }
    }

    let mut cat_ids = HashSet::new();
    let mut cat_names = HashSet::new();
    for c in &ds.categories {
        if !cat_ids.insert(c.id) {
            out.push(Violation::DuplicateCategoryId(c.id));
        }
        if c.name.is_empty() {
            out.push(Violation::EmptyCategoryName(c.id));
        } else if !cat_names.insert(c.name.as_str()) {
            out.push(Violation::DuplicateCategoryName(c.name.clone()));
        }
    }

    let mut ann_ids = HashSet::new();
    for a in &ds.annotations {
        if !ann_ids.insert(a.id) {
            out.push(Violation::DuplicateAnnotationId(a.id));
        }
        if !image_ids.contains(&a.image_id) {
            out.push(Violation::MissingImage {
                annotation_id: a.id,
                image_id: a.image_id,
            });
        }
        if !cat_ids.contains(&a.category_id) {
            out.push(Violation::MissingCategory {
                annotation_id: a.id,
                category_id: a.category_id,
            });
        }
        if !a.bbox.is_valid() {
            out.push(Violation::DegenerateBox {
                annotation_id: a.id,
                bbox: a.bbox,
            });
        }
    }
    out
}

fn ensure_valid(ds: &Dataset) -> Result<(), DataError> {
    let v = validate_dataset(ds);
    if v.is_empty() {
        Ok(())
    } else {
        Err(DataError::Invalid(v))
    }
}

/// Holds out `per_class_holdout` images per category into a validation set.
///
/// Categories are visited in ascending id order. Each draws its holdout
/// uniformly without replacement from the images that contain it and were
/// not already taken by an earlier category.
pub fn split_dataset(
    ds: &Dataset,
    per_class_holdout: usize,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    ensure_valid(ds)?;

    let mut images_of: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for a in &ds.annotations {
        images_of
            .entry(a.category_id)
            .or_default()
            .insert(a.image_id);
    }

    let mut cats: Vec<&Category> = ds.categories.iter().collect();
    cats.sort_by_key(|c| c.id);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held: BTreeSet<u64> = BTreeSet::new();
    if per_class_holdout > 0 {
        for cat in cats {
            let candidates: Vec<u64> = images_of
                .get(&cat.id)
                .map(|s| s.iter().copied().filter(|id| !held.contains(id)).collect())
                .unwrap_or_default();
            if candidates.len() < per_class_holdout {
                return Err(DataError::NotEnoughImages {
                    category_id: cat.id,
                    name: cat.name.clone(),
                    available: candidates.len(),
                    needed: per_class_holdout,
                });
            }
            for i in index::sample(&mut rng, candidates.len(), per_class_holdout) {
                held.insert(candidates[i]);
            }
        }
    }

    let subset = |keep_held: bool| Dataset {
        images: ds
            .images
            .iter()
            .filter(|i| held.contains(&i.id) == keep_held)
            .cloned()
            .collect(),
        annotations: ds
            .annotations
            .iter()
            .filter(|a| held.contains(&a.image_id) == keep_held)
            .copied()
            .collect(),
        categories: ds.categories.clone(),
    };
    Ok((subset(false), subset(true)))
}

/// Concatenates two datasets. Categories are unified by name; image,
/// annotation and category ids are renumbered from 1 in input order
/// (all of `a`, then all of `b`).
pub fn merge_datasets(a: &Dataset, b: &Dataset) -> Result<Dataset, DataError> {
    ensure_valid(a)?;
    ensure_valid(b)?;

    let mut seen_files: HashMap<&str, (u32, u32)> = HashMap::new();
    for img in a.images.iter().chain(&b.images) {
        match seen_files.get(img.file_name.as_str()) {
            Some(&(w, h)) if (w, h) != (img.width, img.height) => {
                return Err(DataError::MergeCollision {
                    file_name: img.file_name.clone(),
                    a_width: w,
                    a_height: h,
                    b_width: img.width,
                    b_height: img.height,
                });
            }
            Some(_) => {}
            None => {
                seen_files.insert(&img.file_name, (img.width, img.height));
            }
        }
    }

    let mut out = Dataset::default();
    let mut cat_by_name: HashMap<String, u64> = HashMap::new();
    let mut next_image = 1u64;
    let mut next_ann = 1u64;

    for src in [a, b] {
        let mut cat_map = HashMap::new();
        for c in &src.categories {
            let id = *cat_by_name.entry(c.name.clone()).or_insert_with(|| {
                let id = out.categories.len() as u64 + 1;
                out.categories.push(Category {
                    id,
                    name: c.name.clone(),
                });
                id
            });
            cat_map.insert(c.id, id);
        }
        let mut image_map = HashMap::new();
        for img in &src.images {
            image_map.insert(img.id, next_image);
            out.images.push(ImageInfo {
                id: next_image,
                ..img.clone()
            });
            next_image += 1;
        }
        for ann in &src.annotations {
            out.annotations.push(Annotation {
                id: next_ann,
                image_id: image_map[&ann.image_id],
                category_id: cat_map[&ann.category_id],
                bbox: ann.bbox,
            });
            next_ann += 1;
        }
    }
    Ok(out)
}
