//! Box-aware geometric augmentations: scale jitter, quarter-turn rotation,
//! horizontal flip, padding, clipping and Simple-Mixup.
//!
//! Every op takes a [`Sample`] by reference and returns a new one; boxes are
//! transformed with exact affine arithmetic alongside the pixels.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Annotation, BBox, ImageBuffer, Sample};

/// Boxes narrower or shorter than this many pixels are dropped after clipping.
pub const DEFAULT_MIN_BOX_SIZE: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("scale ratio must be positive and finite, got {0}")]
    BadRatio(f64),
    #[error("ratio {ratio} outside jitter range [{min}, {max}]")]
    RatioOutOfRange { ratio: f64, min: f64, max: f64 },
    #[error("jitter range [{min}, {max}] must satisfy 0 < min <= max")]
    BadJitterRange { min: f64, max: f64 },
    #[error("mixup alpha must lie strictly between 0 and 1, got {0}")]
    BadAlpha(f64),
    #[error("rotation must be 0..=3 quarter turns, got {0}")]
    BadRotation(u8),
    #[error("cannot pad {width}x{height} image to smaller target {target_w}x{target_h}")]
    PadTooSmall {
        width: u32,
        height: u32,
        target_w: u32,
        target_h: u32,
    },
    #[error("resize target must be at least 1x1, got {0}x{1}")]
    BadSize(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleJitterParams {
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl Default for ScaleJitterParams {
    fn default() -> Self {
        Self {
            min_ratio: 0.1,
            max_ratio: 2.0,
        }
    }
}

impl ScaleJitterParams {
    pub fn new(min_ratio: f64, max_ratio: f64) -> Result<Self, GeometryError> {
        let p = Self {
            min_ratio,
            max_ratio,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.min_ratio > 0.0 && self.min_ratio <= self.max_ratio && self.max_ratio.is_finite() {
            Ok(())
        } else {
            Err(GeometryError::BadJitterRange {
                min: self.min_ratio,
                max: self.max_ratio,
            })
        }
    }

    pub fn contains(&self, ratio: f64) -> bool {
        (self.min_ratio..=self.max_ratio).contains(&ratio)
    }

    /// Uniform draw from `[min_ratio, max_ratio]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.min_ratio + (self.max_ratio - self.min_ratio) * rng.random::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixupParams {
    pub alpha: f64,
    pub jitter: ScaleJitterParams,
}

impl Default for MixupParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            jitter: ScaleJitterParams::default(),
        }
    }
}

impl MixupParams {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(GeometryError::BadAlpha(self.alpha));
        }
        self.jitter.validate()
    }
}

/// Number of clockwise quarter turns, 0 to 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RotationChoice(u8);

impl RotationChoice {
    pub const IDENTITY: RotationChoice = RotationChoice(0);
    pub const CW90: RotationChoice = RotationChoice(1);

    pub fn new(n: u8) -> Result<Self, GeometryError> {
        if n <= 3 {
            Ok(Self(n))
        } else {
            Err(GeometryError::BadRotation(n))
        }
    }

    pub fn quarter_turns(self) -> u8 {
        self.0
    }
}

/// Resamples `img` to `new_w` x `new_h` using pixel-center alignment.
pub fn resize_image(img: &ImageBuffer, new_w: u32, new_h: u32, filter: Resample) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    if (w, h) == (new_w, new_h) {
        return img.clone();
    }
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    let src = img.pixels();
    let mut out = vec![0u8; new_w as usize * new_h as usize * 3];
    let row_len = w as usize * 3;

    match filter {
        Resample::Nearest => {
            let xs: Vec<usize> = (0..new_w)
                .map(|dx| (((dx as f64 + 0.5) * sx) as usize).min(w as usize - 1) * 3)
                .collect();
            for dy in 0..new_h as usize {
                let sy_i = (((dy as f64 + 0.5) * sy) as usize).min(h as usize - 1);
                let src_row = &src[sy_i * row_len..(sy_i + 1) * row_len];
                let dst_row = &mut out[dy * new_w as usize * 3..(dy + 1) * new_w as usize * 3];
                for (dst, &xo) in dst_row.chunks_exact_mut(3).zip(&xs) {
                    dst.copy_from_slice(&src_row[xo..xo + 3]);
                }
            }
        }
        Resample::Bilinear => {
            let taps = |n_dst: u32, scale: f64, n_src: u32| -> Vec<(usize, usize, f32)> {
                (0..n_dst)
                    .map(|d| {
                        let f = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_src - 1) as f64);
                        let i0 = f.floor() as usize;
                        let i1 = (i0 + 1).min(n_src as usize - 1);
                        (i0, i1, (f - i0 as f64) as f32)
                    })
                    .collect()
            };
            let xt = taps(new_w, sx, w);
            let yt = taps(new_h, sy, h);
            for (dy, &(y0, y1, ty)) in yt.iter().enumerate() {
                let r0 = &src[y0 * row_len..(y0 + 1) * row_len];
                let r1 = &src[y1 * row_len..(y1 + 1) * row_len];
                let dst_row = &mut out[dy * new_w as usize * 3..(dy + 1) * new_w as usize * 3];
                for (dst, &(x0, x1, tx)) in dst_row.chunks_exact_mut(3).zip(&xt) {
                    for c in 0..3 {
                        let a = r0[x0 * 3 + c] as f32 * (1.0 - tx) + r0[x1 * 3 + c] as f32 * tx;
                        let b = r1[x0 * 3 + c] as f32 * (1.0 - tx) + r1[x1 * 3 + c] as f32 * tx;
                        let v = a * (1.0 - ty) + b * ty;
                        dst[c] = (v + 0.5).clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
    }
    ImageBuffer::new(new_w, new_h, out).expect("resize output sized to its dimensions")
}

/// Multiplies box coordinates by per-axis factors. No clipping.
pub fn scale_annotations(anns: &[Annotation], rx: f64, ry: f64) -> Vec<Annotation> {
    anns.iter()
        .map(|a| {
            let mut a = *a;
            a.bbox.x *= rx;
            a.bbox.w *= rx;
            a.bbox.y *= ry;
            a.bbox.h *= ry;
            a
        })
        .collect()
}

/// Resizes a sample to an exact size, scaling boxes by the realized
/// per-axis ratios, then clips and filters them.
pub fn resize_sample(
    s: &Sample,
    new_w: u32,
    new_h: u32,
    filter: Resample,
    min_box_size: f64,
) -> Result<Sample, GeometryError> {
    if new_w == 0 || new_h == 0 {
        return Err(GeometryError::BadSize(new_w, new_h));
    }
    let rx = new_w as f64 / s.width() as f64;
    let ry = new_h as f64 / s.height() as f64;
    let out = Sample::new(
        s.image_id,
        resize_image(&s.image, new_w, new_h, filter),
        scale_annotations(&s.annotations, rx, ry),
    );
    Ok(clip_and_filter(&out, min_box_size))
}

/// Output size for an isotropic scale: `round(dim * ratio)`, at least 1.
pub fn jittered_size(width: u32, height: u32, ratio: f64) -> (u32, u32) {
    let f = |d: u32| ((d as f64 * ratio).round() as u32).max(1);
    (f(width), f(height))
}

/// Rescales a sample by `ratio` on both axes.
pub fn scale_jitter(s: &Sample, ratio: f64, filter: Resample) -> Result<Sample, GeometryError> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(GeometryError::BadRatio(ratio));
    }
    let (w, h) = jittered_size(s.width(), s.height(), ratio);
    resize_sample(s, w, h, filter, DEFAULT_MIN_BOX_SIZE)
}

/// Rotates clockwise by `n` quarter turns.
pub fn rotate90(s: &Sample, n: RotationChoice) -> Sample {
    let (w, h) = (s.width(), s.height());
    let turns = n.quarter_turns();
    if turns == 0 {
        return s.clone();
    }
    let (out_w, out_h) = if turns == 2 { (w, h) } else { (h, w) };
    let mut out = ImageBuffer::filled(out_w, out_h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let (nx, ny) = match turns {
                1 => (h - 1 - y, x),
                2 => (w - 1 - x, h - 1 - y),
                _ => (y, w - 1 - x),
            };
            out.put(nx, ny, s.image.get(x, y));
        }
    }
    let (wf, hf) = (w as f64, h as f64);
    let annotations = s
        .annotations
        .iter()
        .map(|a| {
            let b = a.bbox;
            let mut a = *a;
            a.bbox = match turns {
                1 => BBox::new(hf - b.y - b.h, b.x, b.h, b.w),
                2 => BBox::new(wf - b.x - b.w, hf - b.y - b.h, b.w, b.h),
                _ => BBox::new(b.y, wf - b.x - b.w, b.h, b.w),
            };
            a
        })
        .collect();
    Sample::new(s.image_id, out, annotations)
}

/// Mirrors the sample left to right.
pub fn hflip(s: &Sample) -> Sample {
    let w = s.width();
    let mut out = s.image.clone();
    let row_len = w as usize * 3;
    for row in out.pixels_mut().chunks_exact_mut(row_len) {
        for x in 0..(w as usize / 2) {
            let m = w as usize - 1 - x;
            for c in 0..3 {
                row.swap(x * 3 + c, m * 3 + c);
            }
        }
    }
    let wf = w as f64;
    let annotations = s
        .annotations
        .iter()
        .map(|a| {
            let mut a = *a;
            a.bbox.x = wf - a.bbox.x - a.bbox.w;
            a
        })
        .collect();
    Sample::new(s.image_id, out, annotations)
}

/// Grows the canvas to `target_w` x `target_h`, keeping content at the
/// top-left corner and filling new pixels with `fill` on every channel.
pub fn pad_to(s: &Sample, target_w: u32, target_h: u32, fill: u8) -> Result<Sample, GeometryError> {
    let (w, h) = (s.width(), s.height());
    if target_w < w || target_h < h {
        return Err(GeometryError::PadTooSmall {
            width: w,
            height: h,
            target_w,
            target_h,
        });
    }
    if (target_w, target_h) == (w, h) {
        return Ok(s.clone());
    }
    let mut out = ImageBuffer::filled(target_w, target_h, [fill; 3]);
    let src_row = w as usize * 3;
    let dst_row = target_w as usize * 3;
    let src = s.image.pixels();
    let dst = out.pixels_mut();
    for y in 0..h as usize {
        dst[y * dst_row..y * dst_row + src_row]
            .copy_from_slice(&src[y * src_row..(y + 1) * src_row]);
    }
    Ok(Sample::new(s.image_id, out, s.annotations.clone()))
}

/// Intersects every box with the image and drops boxes whose clipped width
/// or height falls below `min_box_size` (or that are empty or non-finite).
pub fn clip_and_filter(s: &Sample, min_box_size: f64) -> Sample {
    let (w, h) = (s.width() as f64, s.height() as f64);
    let annotations = s
        .annotations
        .iter()
        .filter(|a| a.bbox.is_finite())
        .filter_map(|a| {
            let b = a.bbox.clip_to(w, h);
            (b.w > 0.0 && b.h > 0.0 && b.w >= min_box_size && b.h >= min_box_size)
                .then_some(Annotation { bbox: b, ..*a })
        })
        .collect();
    Sample::new(s.image_id, s.image.clone(), annotations)
}

/// Round-half-up blend of two equally sized buffers.
pub fn blend(a: &ImageBuffer, b: &ImageBuffer, alpha: f64) -> ImageBuffer {
    assert_eq!((a.width(), a.height()), (b.width(), b.height()));
    let px = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            (alpha * x as f64 + (1.0 - alpha) * y as f64 + 0.5)
                .floor()
                .clamp(0.0, 255.0) as u8
        })
        .collect();
    ImageBuffer::new(a.width(), a.height(), px).expect("blend keeps dimensions")
}

/// Scale-jitters both samples independently, zero-pads them to a common
/// canvas and blends them. Annotations from both sides are kept with their
/// own labels; the result carries `a`'s image id.
pub fn simple_mixup(
    a: &Sample,
    b: &Sample,
    params: &MixupParams,
    ratios: (f64, f64),
    filter: Resample,
) -> Result<Sample, GeometryError> {
    params.validate()?;
    for r in [ratios.0, ratios.1] {
        if !params.jitter.contains(r) {
            return Err(GeometryError::RatioOutOfRange {
                ratio: r,
                min: params.jitter.min_ratio,
                max: params.jitter.max_ratio,
            });
        }
    }
    let a2 = scale_jitter(a, ratios.0, filter)?;
    let b2 = scale_jitter(b, ratios.1, filter)?;
    let tw = a2.width().max(b2.width());
    let th = a2.height().max(b2.height());
    let a3 = pad_to(&a2, tw, th, 0)?;
    let b3 = pad_to(&b2, tw, th, 0)?;

    let image = blend(&a3.image, &b3.image, params.alpha);
    let mut annotations = a3.annotations;
    annotations.extend(b3.annotations.into_iter().map(|ann| Annotation {
        image_id: a.image_id,
        ..ann
    }));
    Ok(clip_and_filter(
        &Sample::new(a.image_id, image, annotations),
        DEFAULT_MIN_BOX_SIZE,
    ))
}
