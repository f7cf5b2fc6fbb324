//! Color-space augmentations. None of these touch geometry, so annotations
//! pass through unchanged wherever these are applied to a sample.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::ImageBuffer;

/// Upper end of the RandAugment magnitude scale.
pub const MAX_MAGNITUDE: u32 = 30;

#[derive(Debug, Error, PartialEq)]
pub enum PhotometricError {
    #[error("{0:?} is not a permutation of (0, 1, 2)")]
    NotPermutation([usize; 3]),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("RandAugment op pool is empty but n_ops = {0}")]
    EmptyPool(usize),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> PhotometricError {
    PhotometricError::InvalidParam {
        name,
        reason: reason.into(),
    }
}

#[inline]
fn clip(v: f64) -> f64 {
    v.clamp(0.0, 255.0)
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn map_pixels(img: &ImageBuffer, f: impl Fn(u8) -> u8) -> ImageBuffer {
    let px = img.pixels().iter().map(|&v| f(v)).collect();
    ImageBuffer::new(img.width(), img.height(), px).expect("same dimensions")
}

#[inline]
fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn invert(img: &ImageBuffer) -> ImageBuffer {
    map_pixels(img, |v| 255 - v)
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Brightness, contrast, saturation and hue adjustment, applied in that
/// order. Factors of 1 and a hue shift of 0 leave a stage out.
pub fn adjust_bcsh(
    img: &ImageBuffer,
    brightness: f64,
    contrast: f64,
    saturation: f64,
    hue_degrees: f64,
) -> ImageBuffer {
    let mut buf: Vec<f64> = img.pixels().iter().map(|&v| v as f64).collect();

    if brightness != 1.0 {
        buf.iter_mut().for_each(|v| *v = clip(*v * brightness));
    }
    if contrast != 1.0 {
        let n = (buf.len() / 3) as f64;
        let mean = buf
            .chunks_exact(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .sum::<f64>()
            / n;
        buf.iter_mut()
            .for_each(|v| *v = clip((*v - mean) * contrast + mean));
    }
    if saturation != 1.0 {
        for p in buf.chunks_exact_mut(3) {
            let y = luma(p[0], p[1], p[2]);
            for v in p.iter_mut() {
                *v = clip(y + saturation * (*v - y));
            }
        }
    }
    if hue_degrees != 0.0 {
        for p in buf.chunks_exact_mut(3) {
            let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
            let (r, g, b) = hsv_to_rgb(h + hue_degrees, s, v);
            p[0] = clip(r);
            p[1] = clip(g);
            p[2] = clip(b);
        }
    }
    let px = buf.into_iter().map(to_u8).collect();
    ImageBuffer::new(img.width(), img.height(), px).expect("same dimensions")
}

/// Output channel `i` takes input channel `perm[i]`.
pub fn swap_channels(img: &ImageBuffer, perm: [usize; 3]) -> Result<ImageBuffer, PhotometricError> {
    let mut sorted = perm;
    sorted.sort_unstable();
    if sorted != [0, 1, 2] {
        return Err(PhotometricError::NotPermutation(perm));
    }
    let mut out = img.clone();
    for (dst, src) in out
        .pixels_mut()
        .chunks_exact_mut(3)
        .zip(img.pixels().chunks_exact(3))
    {
        for i in 0..3 {
            dst[i] = src[perm[i]];
        }
    }
    Ok(out)
}

/// Mirror index into `0..n` with edge repetition (`d c b a | a b c d`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalized 1-D Gaussian kernel of radius `ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> ImageBuffer {
    if sigma <= 0.0 {
        return img.clone();
    }
    let kernel: Vec<f32> = gaussian_kernel(sigma)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src = img.pixels();

    let mut tmp = vec![0f32; w * h * 3];
    let xs: Vec<Vec<usize>> = (0..w as isize)
        .map(|x| (-radius..=radius).map(|k| reflect(x + k, w)).collect())
        .collect();
    for y in 0..h {
        let row = &src[y * w * 3..(y + 1) * w * 3];
        let out = &mut tmp[y * w * 3..(y + 1) * w * 3];
        for x in 0..w {
            let mut acc = [0f32; 3];
            for (&sx, &kv) in xs[x].iter().zip(&kernel) {
                for c in 0..3 {
                    acc[c] += row[sx * 3 + c] as f32 * kv;
                }
            }
            out[x * 3..x * 3 + 3].copy_from_slice(&acc);
        }
    }

    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        let rows: Vec<usize> = (-radius..=radius)
            .map(|k| reflect(y as isize + k, h))
            .collect();
        let dst = &mut out[y * w * 3..(y + 1) * w * 3];
        for i in 0..w * 3 {
            let mut acc = 0f32;
            for (&sy, &kv) in rows.iter().zip(&kernel) {
                acc += tmp[sy * w * 3 + i] * kv;
            }
            dst[i] = (acc + 0.5).clamp(0.0, 255.0) as u8;
        }
    }
    ImageBuffer::new(img.width(), img.height(), out).expect("same dimensions")
}

/// Adds independent `Normal(0, std^2)` noise to every channel value.
pub fn gaussian_noise<R: Rng + ?Sized>(img: &ImageBuffer, std: f64, rng: &mut R) -> ImageBuffer {
    if std <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, std).expect("std is positive and finite");
    let px = img
        .pixels()
        .iter()
        .map(|&v| to_u8(v as f64 + normal.sample(rng)))
        .collect();
    ImageBuffer::new(img.width(), img.height(), px).expect("same dimensions")
}

/// Salt-and-pepper noise: each pixel is replaced, with probability
/// `fraction`, by pure black or pure white.
pub fn impulse_noise<R: Rng + ?Sized>(
    img: &ImageBuffer,
    fraction: f64,
    rng: &mut R,
) -> ImageBuffer {
    if fraction <= 0.0 {
        return img.clone();
    }
    let fraction = fraction.min(1.0);
    let mut out = img.clone();
    for p in out.pixels_mut().chunks_exact_mut(3) {
        if rng.random::<f64>() < fraction {
            let v = if rng.random::<bool>() { 255 } else { 0 };
            p.fill(v);
        }
    }
    out
}

/// Knobs for [`strong_color_jitter`]. Ranges are `[min, max]` pairs sampled
/// uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorJitterParams {
    pub p_invert: f64,
    pub p_swap: f64,
    pub p_blur: f64,
    pub p_gauss_noise: f64,
    pub p_impulse: f64,
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
    pub saturation: [f64; 2],
    pub hue: [f64; 2],
    pub blur_sigma: [f64; 2],
    pub noise_std: [f64; 2],
    pub impulse_fraction: [f64; 2],
}

impl Default for ColorJitterParams {
    fn default() -> Self {
        Self {
            p_invert: 0.1,
            p_swap: 0.2,
            p_blur: 0.2,
            p_gauss_noise: 0.2,
            p_impulse: 0.2,
            brightness: [0.6, 1.4],
            contrast: [0.6, 1.4],
            saturation: [0.6, 1.4],
            hue: [-18.0, 18.0],
            blur_sigma: [0.5, 2.0],
            noise_std: [2.0, 15.0],
            impulse_fraction: [0.01, 0.05],
        }
    }
}

impl ColorJitterParams {
    /// Every stage gated off and every range pinned at its neutral value.
    pub fn neutral() -> Self {
        Self {
            p_invert: 0.0,
            p_swap: 0.0,
            p_blur: 0.0,
            p_gauss_noise: 0.0,
            p_impulse: 0.0,
            brightness: [1.0, 1.0],
            contrast: [1.0, 1.0],
            saturation: [1.0, 1.0],
            hue: [0.0, 0.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PhotometricError> {
        let probs = [
            ("p_invert", self.p_invert),
            ("p_swap", self.p_swap),
            ("p_blur", self.p_blur),
            ("p_gauss_noise", self.p_gauss_noise),
            ("p_impulse", self.p_impulse),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(name, format!("probability {p} outside [0, 1]")));
            }
        }
        let ranges = [
            ("brightness", self.brightness, 0.0, f64::INFINITY),
            ("contrast", self.contrast, 0.0, f64::INFINITY),
            ("saturation", self.saturation, 0.0, f64::INFINITY),
            ("hue", self.hue, -180.0, 180.0),
            ("blur_sigma", self.blur_sigma, 0.0, f64::INFINITY),
            ("noise_std", self.noise_std, 0.0, f64::INFINITY),
            ("impulse_fraction", self.impulse_fraction, 0.0, 1.0),
        ];
        for (name, [lo, hi], min, max) in ranges {
            if !(lo <= hi && lo >= min && hi <= max && hi.is_finite()) {
                return Err(invalid(
                    name,
                    format!("range [{lo}, {hi}] must be ordered and within [{min}, {max}]"),
                ));
            }
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// The composite color jitter: optional inversion, BCSH jitter, optional
/// channel shuffle, then optional blur, Gaussian noise and impulse noise.
pub fn strong_color_jitter<R: Rng + ?Sized>(
    img: &ImageBuffer,
    params: &ColorJitterParams,
    rng: &mut R,
) -> ImageBuffer {
    let mut out = img.clone();
    if rng.random::<f64>() < params.p_invert {
        out = invert(&out);
    }

    let b = uniform(rng, params.brightness);
    let c = uniform(rng, params.contrast);
    let s = uniform(rng, params.saturation);
    let h = uniform(rng, params.hue);
    if (b, c, s, h) != (1.0, 1.0, 1.0, 0.0) {
        out = adjust_bcsh(&out, b, c, s, h);
    }

    if rng.random::<f64>() < params.p_swap {
        let perm = *PERMUTATIONS.choose(rng).expect("non-empty");
        out = swap_channels(&out, perm).expect("table holds permutations");
    }
    if rng.random::<f64>() < params.p_blur {
        out = gaussian_blur(&out, uniform(rng, params.blur_sigma));
    }
    if rng.random::<f64>() < params.p_gauss_noise {
        let std = uniform(rng, params.noise_std);
        out = gaussian_noise(&out, std, rng);
    }
    if rng.random::<f64>() < params.p_impulse {
        let fraction = uniform(rng, params.impulse_fraction);
        out = impulse_noise(&out, fraction, rng);
    }
    out
}

/// Photometric operations available to RandAugment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaOp {
    AutoContrast,
    Equalize,
    Posterize,
    Solarize,
    Color,
    Contrast,
    Brightness,
    Sharpness,
}

impl RaOp {
    pub const ALL: [RaOp; 8] = [
        RaOp::AutoContrast,
        RaOp::Equalize,
        RaOp::Posterize,
        RaOp::Solarize,
        RaOp::Color,
        RaOp::Contrast,
        RaOp::Brightness,
        RaOp::Sharpness,
    ];

    /// Whether the op's strength is mirrored around neutral at random.
    fn signed(self) -> bool {
        matches!(
            self,
            RaOp::Color | RaOp::Contrast | RaOp::Brightness | RaOp::Sharpness
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandAugmentParams {
    pub n_ops: usize,
    pub magnitude: u32,
    pub op_pool: Vec<RaOp>,
}

impl Default for RandAugmentParams {
    fn default() -> Self {
        Self {
            n_ops: 1,
            magnitude: 10,
            op_pool: RaOp::ALL.to_vec(),
        }
    }
}

impl RandAugmentParams {
    pub fn validate(&self) -> Result<(), PhotometricError> {
        if self.magnitude > MAX_MAGNITUDE {
            return Err(invalid(
                "magnitude",
                format!("{} exceeds {MAX_MAGNITUDE}", self.magnitude),
            ));
        }
        if self.n_ops > 0 && self.op_pool.is_empty() {
            return Err(PhotometricError::EmptyPool(self.n_ops));
        }
        Ok(())
    }
}

/// One sampled RandAugment step. `negate` mirrors enhancement factors
/// below 1 for the signed ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaStep {
    pub op: RaOp,
    pub negate: bool,
}

/// Draws `n_ops` steps uniformly with replacement from the pool.
pub fn plan_rand_augment<R: Rng + ?Sized>(
    params: &RandAugmentParams,
    rng: &mut R,
) -> Result<Vec<RaStep>, PhotometricError> {
    params.validate()?;
    Ok((0..params.n_ops)
        .map(|_| {
            let op = params.op_pool[rng.random_range(0..params.op_pool.len())];
            let negate = op.signed() && rng.random::<bool>();
            RaStep { op, negate }
        })
        .collect())
}

fn grayscale(img: &ImageBuffer) -> Vec<f64> {
    img.pixels()
        .chunks_exact(3)
        .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64))
        .collect()
}

/// Linear blend `degenerate + factor * (img - degenerate)`, per channel.
fn enhance(
    img: &ImageBuffer,
    factor: f64,
    degenerate: impl Fn(usize, usize) -> f64,
) -> ImageBuffer {
    let px = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let d = degenerate(i / 3, i % 3);
            to_u8(d + factor * (v as f64 - d))
        })
        .collect();
    ImageBuffer::new(img.width(), img.height(), px).expect("same dimensions")
}

fn autocontrast(img: &ImageBuffer) -> ImageBuffer {
    let mut lo = [255u8; 3];
    let mut hi = [0u8; 3];
    for p in img.pixels().chunks_exact(3) {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let px = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i % 3;
            if hi[c] <= lo[c] {
                v
            } else {
                to_u8((v - lo[c]) as f64 * 255.0 / (hi[c] - lo[c]) as f64)
            }
        })
        .collect();
    ImageBuffer::new(img.width(), img.height(), px).expect("same dimensions")
}

/// Per-channel histogram equalization with the step rule used by PIL.
fn equalize(img: &ImageBuffer) -> ImageBuffer {
    let mut luts = [[0u8; 256]; 3];
    for (c, lut) in luts.iter_mut().enumerate() {
        let mut hist = [0usize; 256];
        for p in img.pixels().chunks_exact(3) {
            hist[p[c] as usize] += 1;
        }
        let nonzero: Vec<usize> = hist.iter().copied().filter(|&n| n > 0).collect();
        let step = if nonzero.len() <= 1 {
            0
        } else {
            (nonzero.iter().sum::<usize>() - nonzero[nonzero.len() - 1]) / 255
        };
        if step == 0 {
            for (i, v) in lut.iter_mut().enumerate() {
                *v = i as u8;
            }
            continue;
        }
        let mut n = step / 2;
        for (i, v) in lut.iter_mut().enumerate() {
            *v = (n / step).min(255) as u8;
            n += hist[i];
        }
    }
    let px = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| luts[i % 3][v as usize])
        .collect();
    ImageBuffer::new(img.width(), img.height(), px).expect("same dimensions")
}

/// 3x3 smoothing (center weight 5) with the one-pixel border left as-is.
fn smooth(img: &ImageBuffer) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src = img.pixels();
    let mut out: Vec<f64> = src.iter().map(|&v| v as f64).collect();
    if w < 3 || h < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..3 {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let wgt = if dx == 1 && dy == 1 { 5.0 } else { 1.0 };
                        acc += wgt * src[((y + dy - 1) * w + x + dx - 1) * 3 + c] as f64;
                    }
                }
                out[(y * w + x) * 3 + c] = (acc / 13.0).round();
            }
        }
    }
    out
}

/// Applies one step at the given magnitude (0..=30).
pub fn apply_ra_step(img: &ImageBuffer, step: RaStep, magnitude: u32) -> ImageBuffer {
    let level = magnitude.min(MAX_MAGNITUDE) as f64 / MAX_MAGNITUDE as f64;
    let factor = if step.negate {
        1.0 - 0.9 * level
    } else {
        1.0 + 0.9 * level
    };
    match step.op {
        RaOp::AutoContrast => autocontrast(img),
        RaOp::Equalize => equalize(img),
        RaOp::Posterize => {
            let bits = 8 - (4.0 * level).round() as u32;
            let mask = (0xFFu32 << (8 - bits)) as u8;
            map_pixels(img, |v| v & mask)
        }
        RaOp::Solarize => {
            let threshold = (256.0 * (1.0 - level)).round() as u16;
            map_pixels(img, |v| if v as u16 >= threshold { 255 - v } else { v })
        }
        RaOp::Color => {
            let gray = grayscale(img);
            enhance(img, factor, |p, _| gray[p])
        }
        RaOp::Contrast => {
            let gray = grayscale(img);
            let mean = (gray.iter().sum::<f64>() / gray.len() as f64).round();
            enhance(img, factor, |_, _| mean)
        }
        RaOp::Brightness => enhance(img, factor, |_, _| 0.0),
        RaOp::Sharpness => {
            let blurred = smooth(img);
            enhance(img, factor, |p, c| blurred[p * 3 + c])
        }
    }
}

/// RandAugment over the photometric op pool.
pub fn rand_augment<R: Rng + ?Sized>(
    img: &ImageBuffer,
    params: &RandAugmentParams,
    rng: &mut R,
) -> Result<ImageBuffer, PhotometricError> {
    let plan = plan_rand_augment(params, rng)?;
    Ok(plan.into_iter().fold(img.clone(), |acc, step| {
        apply_ra_step(&acc, step, params.magnitude)
    }))
}
