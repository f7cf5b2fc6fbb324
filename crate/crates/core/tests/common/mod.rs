//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use logoforge::coco_io::{save_image, write_coco, SaveFormat};
use logoforge::datamodel::{Category, ImageInfo};
use logoforge::{Annotation, BBox, Dataset, Detection, ImageBuffer, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut impl Rng, w: u32, h: u32) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
}

/// Integer-aligned box of at least `min` pixels per side inside `w x h`.
pub fn random_int_box(rng: &mut impl Rng, w: u32, h: u32, min: u32) -> BBox {
    let bw = rng.random_range(min..=w);
    let bh = rng.random_range(min..=h);
    let x = rng.random_range(0..=w - bw);
    let y = rng.random_range(0..=h - bh);
    BBox::new(x as f64, y as f64, bw as f64, bh as f64)
}

/// Image whose channel 0 is 255 exactly inside `b` and 0 elsewhere; the
/// other channels carry noise.
pub fn mask_image(rng: &mut impl Rng, w: u32, h: u32, b: &BBox) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, |x, y| {
        let inside = (x as f64) >= b.x
            && (x as f64) < b.right()
            && (y as f64) >= b.y
            && (y as f64) < b.bottom();
        [if inside { 255 } else { 0 }, rng.random(), rng.random()]
    })
}

/// Tight box around pixels whose channel 0 is at least `thresh`.
pub fn mask_bbox(img: &ImageBuffer, thresh: u8) -> Option<BBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut any = false;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y)[0] >= thresh {
                any = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    any.then(|| BBox::new(x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64))
}

pub fn naive_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Textbook greedy NMS: repeatedly take the best remaining detection
/// (highest score, then lowest index) and drop same-class boxes with IoU
/// above the threshold.
pub fn brute_nms(dets: &[Detection], thresh: f64) -> Vec<Detection> {
    let mut alive: Vec<usize> = (0..dets.len()).collect();
    let mut out = Vec::new();
    while !alive.is_empty() {
        let mut best = alive[0];
        for &i in &alive {
            if dets[i].score > dets[best].score || (dets[i].score == dets[best].score && i < best) {
                best = i;
            }
        }
        out.push(dets[best]);
        alive.retain(|&i| {
            i != best
                && !(dets[i].category_id == dets[best].category_id
                    && naive_iou(&dets[i].bbox, &dets[best].bbox) > thresh)
        });
    }
    out
}

/// Intersect with the image and keep boxes at least `min` on each side.
pub fn clip_filter_oracle(anns: &[Annotation], w: u32, h: u32, min: f64) -> Vec<Annotation> {
    anns.iter()
        .filter_map(|a| {
            let x0 = a.bbox.x.max(0.0);
            let y0 = a.bbox.y.max(0.0);
            let x1 = (a.bbox.x + a.bbox.w).min(w as f64);
            let y1 = (a.bbox.y + a.bbox.h).min(h as f64);
            (x1 - x0 >= min && y1 - y0 >= min).then(|| Annotation {
                bbox: BBox::new(x0, y0, x1 - x0, y1 - y0),
                ..*a
            })
        })
        .collect()
}

/// (category, box bits) keys, sorted, for multiset comparison.
pub fn ann_multiset(anns: &[Annotation]) -> Vec<(u64, [u64; 4])> {
    let mut v: Vec<(u64, [u64; 4])> = anns
        .iter()
        .map(|a| {
            (
                a.category_id,
                [
                    a.bbox.x.to_bits(),
                    a.bbox.y.to_bits(),
                    a.bbox.w.to_bits(),
                    a.bbox.h.to_bits(),
                ],
            )
        })
        .collect();
    v.sort();
    v
}

/// Result of the naive evaluator: per (category, threshold) AP and the
/// threshold-averaged mAP.
pub struct NaiveEval {
    pub ap: HashMap<(u64, u64), Option<f64>>,
    pub map: Option<f64>,
}

/// Direct PR-curve evaluator: global score sort per category, greedy
/// best-IoU matching, and at every recall point k/100 the maximum
/// precision over all ranks reaching that recall.
pub fn naive_evaluate(dets: &[Detection], gt: &Dataset, thresholds: &[f64]) -> NaiveEval {
    let mut ap = HashMap::new();
    let mut per_threshold = Vec::new();
    for &t in thresholds {
        let mut aps = Vec::new();
        for c in &gt.categories {
            let gts: Vec<&Annotation> = gt
                .annotations
                .iter()
                .filter(|a| a.category_id == c.id)
                .collect();
            if gts.is_empty() {
                ap.insert((c.id, t.to_bits()), None);
                continue;
            }
            let mut ds: Vec<(usize, &Detection)> = dets
                .iter()
                .enumerate()
                .filter(|(_, d)| d.category_id == c.id)
                .collect();
            ds.sort_by(|a, b| {
                b.1.score
                    .partial_cmp(&a.1.score)
                    .unwrap()
                    .then(a.0.cmp(&b.0))
            });
            let mut used = vec![false; gts.len()];
            let mut points = Vec::new();
            let mut tp = 0usize;
            for (rank, (_, d)) in ds.iter().enumerate() {
                let mut best: Option<(usize, f64)> = None;
                for (g, a) in gts.iter().enumerate() {
                    if used[g] || a.image_id != d.image_id {
                        continue;
                    }
                    let v = naive_iou(&d.bbox, &a.bbox);
                    if v >= t && best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((g, v));
                    }
                }
                if let Some((g, _)) = best {
                    used[g] = true;
                    tp += 1;
                }
                points.push((tp as f64 / gts.len() as f64, tp as f64 / (rank + 1) as f64));
            }
            let mut sum = 0.0;
            for k in 0..=100 {
                let r = k as f64 / 100.0;
                let p = points
                    .iter()
                    .filter(|(rec, _)| *rec >= r)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                sum += p;
            }
            let v = sum / 101.0;
            ap.insert((c.id, t.to_bits()), Some(v));
            aps.push(v);
        }
        if !aps.is_empty() {
            per_threshold.push(aps.iter().sum::<f64>() / aps.len() as f64);
        }
    }
    let map = (!per_threshold.is_empty())
        .then(|| per_threshold.iter().sum::<f64>() / per_threshold.len() as f64);
    NaiveEval { ap, map }
}

/// Writes `n` random PNGs with one or two boxes each plus `annotations.json`
/// under `dir`. Returns the annotation path and the dataset.
pub fn write_synthetic_dataset(
    dir: &Path,
    n: usize,
    size: (u32, u32),
    seed: u64,
) -> (PathBuf, Dataset) {
    let mut r = rng(seed);
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).unwrap();
    let mut ds = Dataset {
        categories: vec![
            Category {
                id: 1,
                name: "acme".into(),
            },
            Category {
                id: 2,
                name: "globex".into(),
            },
            Category {
                id: 3,
                name: "initech".into(),
            },
        ],
        ..Dataset::default()
    };
    for i in 0..n as u64 {
        let (w, h) = (
            r.random_range(size.0..=size.1),
            r.random_range(size.0..=size.1),
        );
        let base: [u8; 3] = [r.random(), r.random(), r.random()];
        let img = ImageBuffer::from_fn(w, h, |x, y| {
            [
                base[0].wrapping_add((x * 2) as u8),
                base[1].wrapping_add((y * 3) as u8),
                base[2] ^ ((x ^ y) as u8),
            ]
        });
        let file_name = format!("img_{i:03}.png");
        save_image(&img, &img_dir.join(&file_name), SaveFormat::Png).unwrap();
        ds.images.push(ImageInfo {
            id: i + 1,
            file_name,
            width: w,
            height: h,
        });
        for _ in 0..r.random_range(1..=2) {
            let id = ds.annotations.len() as u64 + 1;
            ds.annotations.push(Annotation {
                id,
                image_id: i + 1,
                category_id: r.random_range(1..=3),
                bbox: random_int_box(&mut r, w, h, 4),
            });
        }
    }
    let ann = dir.join("annotations.json");
    fs::write(&ann, write_coco(&ds).unwrap()).unwrap();
    (ann, ds)
}

/// SHA-256 over every file under `root`: sorted relative paths and contents.
pub fn hash_tree(root: &Path) -> String {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, out);
            } else {
                out.push(p);
            }
        }
    }
    let mut files = Vec::new();
    walk(root, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(root).unwrap().to_string_lossy().as_bytes());
        h.update([0]);
        h.update(fs::read(&f).unwrap());
    }
    hex::encode(h.finalize())
}

pub fn sample_with_boxes(rng: &mut impl Rng, id: u64, w: u32, h: u32, n_boxes: usize) -> Sample {
    let img = random_image(rng, w, h);
    let anns = (0..n_boxes)
        .map(|k| Annotation {
            id: k as u64 + 1,
            image_id: id,
            category_id: rng.random_range(1..=3),
            bbox: random_int_box(rng, w, h, 1),
        })
        .collect();
    Sample::new(id, img, anns)
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_logoforge")
}
