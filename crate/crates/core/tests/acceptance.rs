//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a gating criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use logoforge::datamodel::{Category, ImageInfo};
use logoforge::eval::{default_thresholds, evaluate};
use logoforge::geometry::{
    hflip, rotate90, scale_jitter, simple_mixup, MixupParams, Resample, RotationChoice,
};
use logoforge::photometric::{gaussian_noise, impulse_noise};
use logoforge::pipeline::{build_pipeline, PipelineConfig, SamplePool, StageSpec, BASE_RESOLUTION};
use logoforge::postprocess::{
    major_class_suppress_per_image, map_to_original, map_to_variant, multi_resolution_variants,
    nms, tta_fuse, SuppressionParams, TTA_RESOLUTIONS,
};
use logoforge::{Annotation, BBox, Dataset, Detection, ImageBuffer, Sample};
use rand::Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

/// (id, name, check, gating)
type Criterion = (&'static str, &'static str, fn() -> Outcome, bool);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Sample with boxes on a quarter-pixel grid so every transform is exact.
fn quarter_grid_sample(r: &mut impl Rng, id: u64) -> Sample {
    let (w, h) = (r.random_range(1..=40u32), r.random_range(1..=40u32));
    let img = random_image(r, w, h);
    let anns = (0..r.random_range(0..4))
        .map(|k| {
            let bw = r.random_range(4..=4 * w) as f64 / 4.0;
            let bh = r.random_range(4..=4 * h) as f64 / 4.0;
            let x = r.random_range(0..=((w as f64 - bw) * 4.0) as u32) as f64 / 4.0;
            let y = r.random_range(0..=((h as f64 - bh) * 4.0) as u32) as f64 / 4.0;
            Annotation {
                id: k + 1,
                image_id: id,
                category_id: 1,
                bbox: BBox::new(x, y, bw, bh),
            }
        })
        .collect();
    Sample::new(id, img, anns)
}

fn ac1_group_laws() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    for i in 0..200 {
        let s = quarter_grid_sample(&mut r, i);
        let mut t = s.clone();
        for _ in 0..4 {
            t = rotate90(&t, RotationChoice::CW90);
        }
        ensure(t == s, || {
            format!("sample {i}: four quarter turns changed the sample")
        })?;
        ensure(hflip(&hflip(&s)) == s, || {
            format!("sample {i}: double flip changed the sample")
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2} s, limit 10 s"))?;
    Ok(format!("200 samples, {secs:.2} s"))
}

fn ac2_box_oracle() -> Outcome {
    let mut r = rng(2);
    let mut worst_scale = 0.0f64;
    for i in 0..500 {
        let (w, h) = (r.random_range(4..=32u32), r.random_range(4..=32u32));
        let b = random_int_box(&mut r, w, h, 4);
        let s = Sample::new(
            1,
            mask_image(&mut r, w, h, &b),
            vec![Annotation {
                id: 1,
                image_id: 1,
                category_id: 1,
                bbox: b,
            }],
        );
        let check_exact = |out: &Sample, what: &str| {
            let truth = mask_bbox(&out.image, 255)
                .ok_or_else(|| format!("pair {i}: {what} lost the mask"))?;
            ensure(
                out.annotations.len() == 1 && out.annotations[0].bbox == truth,
                || {
                    format!(
                        "pair {i}: {what} box {:?} vs mask {truth:?}",
                        out.annotations
                    )
                },
            )
        };
        for n in 1..=3 {
            check_exact(
                &rotate90(&s, RotationChoice::new(n).unwrap()),
                &format!("rotate90({n})"),
            )?;
        }
        check_exact(&hflip(&s), "hflip")?;

        let ratio = r.random_range(0.5..=2.0);
        let out = scale_jitter(&s, ratio, Resample::Bilinear).map_err(|e| e.to_string())?;
        let truth =
            mask_bbox(&out.image, 128).ok_or_else(|| format!("pair {i}: scaling lost the mask"))?;
        ensure(out.annotations.len() == 1, || {
            format!("pair {i}: scaled box was dropped")
        })?;
        let got = out.annotations[0].bbox;
        let err = [
            got.x - truth.x,
            got.y - truth.y,
            got.right() - truth.right(),
            got.bottom() - truth.bottom(),
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
        worst_scale = worst_scale.max(err);
        ensure(err <= 1.0, || {
            format!("pair {i}: ratio {ratio}: box {got:?} vs mask {truth:?}")
        })?;
    }
    Ok(format!(
        "500 pairs, rotate/flip exact, worst bilinear edge error {worst_scale:.3} px"
    ))
}

fn mixup_input(r: &mut impl Rng, id: u64) -> Sample {
    let (w, h, n) = (
        r.random_range(1..=48),
        r.random_range(1..=48),
        r.random_range(0..4),
    );
    sample_with_boxes(r, id, w, h, n)
}

fn ac3_mixup() -> Outcome {
    let mut r = rng(3);
    let params = MixupParams::default();
    for i in 0..100 {
        let a = mixup_input(&mut r, 1);
        let b = mixup_input(&mut r, 2);
        let ratios = (r.random_range(0.1..=2.0), r.random_range(0.1..=2.0));
        let out =
            simple_mixup(&a, &b, &params, ratios, Resample::Bilinear).map_err(|e| e.to_string())?;
        let a2 = scale_jitter(&a, ratios.0, Resample::Bilinear).unwrap();
        let b2 = scale_jitter(&b, ratios.1, Resample::Bilinear).unwrap();
        let (tw, th) = (a2.width().max(b2.width()), a2.height().max(b2.height()));
        ensure((out.width(), out.height()) == (tw, th), || {
            format!("pair {i}: canvas size")
        })?;
        let px = |s: &Sample, x: u32, y: u32| {
            if x < s.width() && y < s.height() {
                s.image.get(x, y)
            } else {
                [0; 3]
            }
        };
        for y in 0..th {
            for x in 0..tw {
                let (pa, pb) = (px(&a2, x, y), px(&b2, x, y));
                let want: Vec<u8> = (0..3)
                    .map(|c| (0.5 * pa[c] as f64 + 0.5 * pb[c] as f64).round() as u8)
                    .collect();
                ensure(out.image.get(x, y).as_slice() == want, || {
                    format!("pair {i}: pixel ({x},{y})")
                })?;
            }
        }
        let mut union = a2.annotations.clone();
        union.extend(
            b2.annotations
                .iter()
                .map(|x| Annotation { image_id: 1, ..*x }),
        );
        let want = clip_filter_oracle(&union, tw, th, 1.0);
        ensure(
            ann_multiset(&out.annotations) == ann_multiset(&want),
            || format!("pair {i}: annotation multiset"),
        )?;
        ensure(out.annotations.iter().all(|x| x.image_id == 1), || {
            format!("pair {i}: image id")
        })?;
    }
    Ok("100 pairs, pixels and annotation multisets exact".into())
}

fn ac4_determinism() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ann, _) = write_synthetic_dataset(dir.path(), 50, (64, 128), 4);
    let cfg = dir.path().join("recipe.json");
    fs::write(
        &cfg,
        PipelineConfig::logo_recipe(BASE_RESOLUTION, 0).to_json(),
    )
    .unwrap();
    let mut hashes = Vec::new();
    for workers in [1, 8] {
        let out = dir.path().join(format!("out_w{workers}"));
        let status = Command::new(bin())
            .args([
                "augment",
                "--seed",
                "2024",
                "--workers",
                &workers.to_string(),
            ])
            .arg("--config")
            .arg(&cfg)
            .arg("--ann")
            .arg(&ann)
            .arg("--images")
            .arg(dir.path().join("images"))
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            format!(
                "workers={workers}: {}",
                String::from_utf8_lossy(&status.stderr)
            )
        })?;
        let n = fs::read_dir(out.join("images")).unwrap().count();
        ensure(n == 50, || format!("workers={workers}: {n} images written"))?;
        hashes.push(hash_tree(&out));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(hashes[0] == hashes[1], || {
        "output trees differ between 1 and 8 workers".into()
    })?;
    ensure(secs < 120.0, || format!("took {secs:.1} s, limit 120 s"))?;
    Ok(format!(
        "50 images at {BASE_RESOLUTION}px, trees identical ({}...), {secs:.1} s",
        &hashes[0][..12]
    ))
}

fn ac5_nms() -> Outcome {
    let mut r = rng(5);
    for i in 0..1000 {
        let n = r.random_range(0..=12);
        let dets: Vec<Detection> = (0..n)
            .map(|_| Detection {
                image_id: 1,
                category_id: r.random_range(1..=2),
                bbox: BBox::new(
                    r.random_range(0.0..40.0),
                    r.random_range(0.0..40.0),
                    r.random_range(1.0..30.0),
                    r.random_range(1.0..30.0),
                ),
                // coarse scores so ties occur
                score: r.random_range(0..10) as f64 / 10.0,
            })
            .collect();
        let t = [0.3, 0.5, 0.7][i % 3];
        let got = nms(&dets, t).map_err(|e| e.to_string())?;
        ensure(got == brute_nms(&dets, t), || {
            format!("instance {i}: mismatch")
        })?;
    }
    Ok("1000 instances identical".into())
}

fn ac6_tta() -> Outcome {
    let variants = multi_resolution_variants(&TTA_RESOLUTIONS);
    ensure(variants.len() == 6, || {
        format!("{} variants", variants.len())
    })?;
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let orig = (r.random_range(50..3000u32), r.random_range(50..3000u32));
        let dets: Vec<Detection> = (0..r.random_range(1..10))
            .map(|_| {
                let b = random_int_box(&mut r, orig.0, orig.1, 2);
                Detection {
                    image_id: 1,
                    category_id: r.random_range(1..=3),
                    bbox: b,
                    score: r.random_range(0.01..1.0),
                }
            })
            .collect();
        for v in &variants {
            for (a, b) in
                dets.iter()
                    .zip(map_to_original(&map_to_variant(&dets, *v, orig), *v, orig))
            {
                worst = worst.max(box_diff(&a.bbox, &b.bbox));
            }
            let in_variant = map_to_variant(&dets, *v, orig);
            for (a, b) in in_variant.iter().zip(map_to_variant(
                &map_to_original(&in_variant, *v, orig),
                *v,
                orig,
            )) {
                worst = worst.max(box_diff(&a.bbox, &b.bbox));
            }
        }
        ensure(worst <= 1e-9, || format!("round trip error {worst:e}"))?;

        let per_variant: Vec<(_, Vec<Detection>)> = variants
            .iter()
            .map(|v| (*v, map_to_variant(&dets, *v, orig)))
            .collect();
        let fused = tta_fuse(&per_variant, orig, 0.5);
        let single = nms(&dets, 0.5).unwrap();
        ensure(fused.len() == single.len(), || {
            format!("fused {} vs single {}", fused.len(), single.len())
        })?;
        for (f, s) in fused.iter().zip(&single) {
            ensure(
                f.category_id == s.category_id
                    && f.score == s.score
                    && box_diff(&f.bbox, &s.bbox) <= 1e-9,
                || format!("fused {f:?} vs single {s:?}"),
            )?;
        }
    }
    Ok(format!(
        "6 variants, 200 images, worst round-trip error {worst:.1e}"
    ))
}

fn box_diff(a: &BBox, b: &BBox) -> f64 {
    [a.x - b.x, a.y - b.y, a.w - b.w, a.h - b.h]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// 200 single-class images; each GT box is detected at a score around 0.8
/// and shadowed by a wrong-class box around 0.6 at the same place.
fn suppression_benchmark(seed: u64) -> (Dataset, Vec<Detection>) {
    let mut r = rng(seed);
    let n_cat = 10u64;
    let mut gt = Dataset {
        categories: (1..=n_cat)
            .map(|id| Category {
                id,
                name: format!("brand{id}"),
            })
            .collect(),
        ..Dataset::default()
    };
    let mut dets = Vec::new();
    for image_id in 1..=200u64 {
        gt.images.push(ImageInfo {
            id: image_id,
            file_name: format!("{image_id}.png"),
            width: 640,
            height: 480,
        });
        let cat = r.random_range(1..=n_cat);
        for _ in 0..r.random_range(1..=3) {
            let b = random_int_box(&mut r, 640, 480, 16);
            let id = gt.annotations.len() as u64 + 1;
            gt.annotations.push(Annotation {
                id,
                image_id,
                category_id: cat,
                bbox: b,
            });
            dets.push(Detection {
                image_id,
                category_id: cat,
                bbox: b,
                score: r.random_range(0.65..0.95),
            });
            if r.random_bool(0.7) {
                let wrong = (cat + r.random_range(1..n_cat) - 1) % n_cat + 1;
                dets.push(Detection {
                    image_id,
                    category_id: wrong,
                    bbox: b,
                    score: r.random_range(0.45..0.75),
                });
            }
        }
    }
    (gt, dets)
}

fn ac7_suppression() -> Outcome {
    let (gt, dets) = suppression_benchmark(7);
    let thresholds = default_thresholds();
    let before = evaluate(&dets, &gt, &thresholds)
        .map_err(|e| e.to_string())?
        .map
        .unwrap();
    let suppressed =
        major_class_suppress_per_image(&dets, SuppressionParams::new(0.3).unwrap()).unwrap();
    let after = evaluate(&suppressed, &gt, &thresholds)
        .map_err(|e| e.to_string())?
        .map
        .unwrap();
    ensure(after > before, || {
        format!("mAP {before:.4} -> {after:.4}, no improvement")
    })?;
    Ok(format!("mAP {before:.4} -> {after:.4} with factor 0.3"))
}

fn random_eval_instance(r: &mut impl Rng) -> (Dataset, Vec<Detection>) {
    let n_cat = r.random_range(1..=3u64);
    let mut gt = Dataset {
        categories: (1..=n_cat)
            .map(|id| Category {
                id,
                name: format!("c{id}"),
            })
            .collect(),
        ..Dataset::default()
    };
    let mut dets = Vec::new();
    for image_id in 1..=r.random_range(1..=5u64) {
        gt.images.push(ImageInfo {
            id: image_id,
            file_name: format!("{image_id}.png"),
            width: 100,
            height: 100,
        });
        for _ in 0..r.random_range(0..=4) {
            let b = random_int_box(r, 100, 100, 5);
            let cat = r.random_range(1..=n_cat);
            let id = gt.annotations.len() as u64 + 1;
            gt.annotations.push(Annotation {
                id,
                image_id,
                category_id: cat,
                bbox: b,
            });
            if r.random_bool(0.8) {
                let j = BBox::new(
                    b.x + r.random_range(-3.0..3.0),
                    b.y + r.random_range(-3.0..3.0),
                    b.w,
                    b.h,
                );
                dets.push(Detection {
                    image_id,
                    category_id: cat,
                    bbox: j,
                    score: r.random::<f64>(),
                });
            }
        }
        for _ in 0..r.random_range(0..=3) {
            dets.push(Detection {
                image_id,
                category_id: r.random_range(1..=n_cat),
                bbox: random_int_box(r, 100, 100, 5),
                score: r.random::<f64>(),
            });
        }
    }
    (gt, dets)
}

fn ac8_evaluator() -> Outcome {
    let mut r = rng(8);
    let thresholds = default_thresholds();
    for i in 0..100 {
        let (gt, dets) = random_eval_instance(&mut r);
        let got = evaluate(&dets, &gt, &thresholds).map_err(|e| e.to_string())?;
        let want = naive_evaluate(&dets, &gt, &thresholds);
        for c in &got.cells {
            let w = want.ap[&(c.category_id, c.iou_threshold.to_bits())];
            let ok = match (c.ap, w) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
                (None, None) => true,
                _ => false,
            };
            ensure(ok, || {
                format!(
                    "instance {i}: cat {} @{}: {:?} vs {w:?}",
                    c.category_id, c.iou_threshold, c.ap
                )
            })?;
        }
        let ok = match (got.map, want.map) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
            (None, None) => true,
            _ => false,
        };
        ensure(ok, || {
            format!("instance {i}: mAP {:?} vs {:?}", got.map, want.map)
        })?;
    }
    let (gt, _) = suppression_benchmark(8);
    let perfect: Vec<Detection> = gt
        .annotations
        .iter()
        .map(|a| Detection {
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: a.bbox,
            score: 0.9,
        })
        .collect();
    let p = evaluate(&perfect, &gt, &thresholds).unwrap().map;
    ensure(p == Some(1.0), || format!("perfect detections give {p:?}"))?;
    let e = evaluate(&[], &gt, &thresholds).unwrap().map;
    ensure(e == Some(0.0), || format!("empty detections give {e:?}"))?;
    Ok("100 instances within 1e-9; perfect 1.0, empty 0.0".into())
}

fn ac9_statistics() -> Outcome {
    let gray = ImageBuffer::filled(64, 64, [128; 3]);
    let noisy = gaussian_noise(&gray, 10.0, &mut rng(9));
    let diffs: Vec<f64> = noisy.pixels().iter().map(|&v| v as f64 - 128.0).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let std =
        (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
    ensure((8.5..=11.5).contains(&std), || {
        format!("noise std {std:.3} outside [8.5, 11.5]")
    })?;

    let gray = ImageBuffer::filled(100, 100, [128; 3]);
    let salted = impulse_noise(&gray, 0.1, &mut rng(10));
    let hits = salted
        .pixels()
        .chunks_exact(3)
        .filter(|p| p != &[128, 128, 128])
        .count();
    ensure((700..=1300).contains(&hits), || {
        format!("impulse count {hits} outside [700, 1300]")
    })?;

    let cfg = PipelineConfig {
        stages: vec![StageSpec::Rotate90 {
            probability: 1.0,
            quarter_turns: vec![1, 2, 3],
        }],
        global_seed: 11,
        ..PipelineConfig::default()
    };
    let p = build_pipeline(&cfg).unwrap();
    let s = sample_with_boxes(&mut rng(12), 1, 3, 2, 0);
    let candidates: Vec<Sample> = (1..=3)
        .map(|n| rotate90(&s, RotationChoice::new(n).unwrap()))
        .collect();
    let mut counts = [0usize; 3];
    for pass in 0..3000 {
        let out = p
            .apply(&s, &logoforge::pipeline::NoPartner, pass)
            .unwrap()
            .sample;
        let k = candidates
            .iter()
            .position(|c| *c == out)
            .ok_or("output matches no rotation")?;
        counts[k] += 1;
    }
    ensure(counts.iter().all(|c| (800..=1200).contains(c)), || {
        format!("rotation counts {counts:?}")
    })?;
    Ok(format!(
        "noise std {std:.3}, impulse hits {hits}, rotation counts {counts:?}"
    ))
}

/// Soft target: reported, never gating.
fn ac10_throughput() -> Outcome {
    let mut r = rng(13);
    let pool: Vec<Sample> = (1..=16)
        .map(|id| sample_with_boxes(&mut r, id, 512, 512, 2))
        .collect();
    let p = build_pipeline(&PipelineConfig::logo_recipe(512, 3)).unwrap();
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(8)
        .build()
        .unwrap();
    let partners = SamplePool(&pool);
    let jobs: Vec<(usize, u32)> = (0..pool.len())
        .flat_map(|i| (0..4).map(move |pass| (i, pass)))
        .collect();
    let start = Instant::now();
    threads.install(|| {
        jobs.par_iter().for_each(|&(i, pass)| {
            p.apply(&pool[i], &partners, pass).unwrap();
        })
    });
    let elapsed = start.elapsed().max(Duration::from_micros(1));
    let rate = jobs.len() as f64 / elapsed.as_secs_f64();
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!("{rate:.1} images/s at 512x512, 8 threads on {cpus} CPU(s), target 50");
    if rate >= 50.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("AC1", "geometry group laws", ac1_group_laws, true),
        (
            "AC2",
            "box-transform pixel-mask oracle",
            ac2_box_oracle,
            true,
        ),
        ("AC3", "simple-mixup exactness", ac3_mixup, true),
        (
            "AC4",
            "augment determinism across worker counts",
            ac4_determinism,
            true,
        ),
        ("AC5", "nms brute-force equivalence", ac5_nms, true),
        ("AC6", "tta round trip and duplicate fusion", ac6_tta, true),
        (
            "AC7",
            "major-class suppression improves mAP",
            ac7_suppression,
            true,
        ),
        (
            "AC8",
            "evaluator naive-oracle agreement",
            ac8_evaluator,
            true,
        ),
        (
            "AC9",
            "noise, impulse and rotation statistics",
            ac9_statistics,
            true,
        ),
        ("AC10", "pipeline throughput (soft)", ac10_throughput, false),
    ];
    let mut failed = 0;
    for (id, name, f, gating) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("{id:<5} PASS  {name}: {detail}"),
            Err(detail) if gating => {
                failed += 1;
                println!("{id:<5} FAIL  {name}: {detail}");
            }
            Err(detail) => println!("{id:<5} FAIL  {name} [soft, not gating]: {detail}"),
        }
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        std::process::exit(1);
    }
    println!("all gating criteria passed");
}
