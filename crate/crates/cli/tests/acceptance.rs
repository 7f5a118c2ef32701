//! Acceptance suite. One sequential test so timings are not disturbed by
//! parallel tests; each criterion prints one PASS/FAIL line.
//!
//! Run with `cargo test --release -p denseprompt-cli --test acceptance -- --nocapture`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use denseprompt::backbone::{
    Backbones, DecodeResult, ImageEncoder, MaskDecoder, OracleBackend, OracleConfig,
    SemanticEncoder, CANDIDATES,
};
use denseprompt::bench::{
    grid_sweep, make_scenes, sampler_comparison, BenchConfig, BenchRow, SamplerKind,
};
use denseprompt::eps::{eps_sample, EpsConfig};
use denseprompt::eval::{evaluate, EvalImage};
use denseprompt::geometry::{
    iou_boxes, iou_masks, nms, point_in_mask, rle_decode, rle_encode, BitMask, BoxXYXY,
    PointPrompt, SoftMask,
};
use denseprompt::model::Heads;
use denseprompt::pipeline::{annotate, CropConfig, PipelineConfig};
use denseprompt::prompt::grid_points;
use denseprompt::pwdnet::{select_best, PwdScorer};
use denseprompt::rng::rng_for;
use denseprompt::scene::{render, SceneParams};
use denseprompt::trainer::{
    prepare, sample_training_points, total_loss, train, training_prompts, LabeledImage, TrainConfig,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// The shared model: 10 desk-scale scenes, the default 2000-step schedule.
fn trained_heads(be: &OracleBackend) -> Heads {
    let params = SceneParams::desk_crowd();
    let images: Vec<LabeledImage> = (1000..1010)
        .map(|s| {
            let (scene, gt) = params.generate(s).unwrap();
            LabeledImage {
                image: render(&scene),
                boxes: gt.visible_boxes,
            }
        })
        .collect();
    train(be, &images, &TrainConfig::default()).unwrap().heads
}

fn native_scorer(dec: &DecodeResult) -> denseprompt::Result<Vec<f64>> {
    Ok(dec.native_iou.clone())
}

fn to_native(p: &PointPrompt, m: &BitMask, w: usize, h: usize) -> PointPrompt {
    PointPrompt {
        x: p.x * m.width() as f64 / w as f64,
        y: p.y * m.height() as f64 / h as f64,
        ..*p
    }
}

fn eps_conformance(be: &OracleBackend) -> Outcome {
    let t = Instant::now();
    let params = SceneParams::desk_crowd();
    let cfg = EpsConfig::default();
    let (w, h) = (params.width, params.height);
    let mut problems = Vec::new();
    let mut totals = (0, 0);
    for seed in 3000..3020u64 {
        let (scene, _) = params.generate(seed).unwrap();
        let emb = be.encode_image(&render(&scene)).unwrap();
        let pool = grid_points(w, h, 64);
        let seeded = EpsConfig { seed, ..cfg };
        let a = eps_sample(&emb, &pool, &mut native_scorer, be, w, h, &seeded).unwrap();
        let b = eps_sample(&emb, &pool, &mut native_scorer, be, w, h, &seeded).unwrap();
        let ids = |ps: &[PointPrompt]| ps.iter().map(|p| p.grid_index).collect::<Vec<_>>();
        let selected: HashSet<usize> = ids(&a.selected).into_iter().collect();
        let pruned: HashSet<usize> = a.pruned.iter().map(|(p, _)| p.grid_index).collect();
        totals.0 += a.selected.len();
        totals.1 += a.pruned.len();
        if a.selected.len() > cfg.budget || a.trace.total_decoded() != a.selected.len() {
            problems.push(format!(
                "seed {seed}: {} decoded over budget {}",
                a.selected.len(),
                cfg.budget
            ));
        }
        if selected.len() != a.selected.len()
            || pruned.len() != a.pruned.len()
            || !selected.is_disjoint(&pruned)
        {
            problems.push(format!(
                "seed {seed}: decoded and pruned sets overlap or repeat"
            ));
        }
        if selected.len() + pruned.len() > pool.len() {
            problems.push(format!(
                "seed {seed}: more prompts accounted for than exist"
            ));
        }
        for (p, k) in &a.pruned {
            let valid = &a.masks[*k];
            let m = valid.mask.binarize();
            let inside = point_in_mask(&to_native(p, &m, w, h), &m).unwrap();
            let drawn_before = a
                .selected
                .iter()
                .position(|s| s.grid_index == valid.prompt.grid_index);
            if !inside || valid.score <= cfg.threshold || drawn_before.is_none() {
                problems.push(format!(
                    "seed {seed}: prompt {} pruned without a covering valid mask",
                    p.grid_index
                ));
                break;
            }
        }
        let same = ids(&a.selected) == ids(&b.selected)
            && a.trace == b.trace
            && a.masks.len() == b.masks.len()
            && a.masks
                .iter()
                .zip(&b.masks)
                .all(|(x, y)| x.score == y.score && *x.mask == *y.mask);
        if !same {
            problems.push(format!("seed {seed}: rerun differs"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    if secs >= 60.0 {
        problems.push(format!("runtime {secs:.1}s"));
    }
    check(
        problems.is_empty(),
        format!(
            "20 scenes, {} decoded, {} pruned, {secs:.1}s{}",
            totals.0,
            totals.1,
            problems
                .first()
                .map(|p| format!("; {p}"))
                .unwrap_or_default()
        ),
    )
}

fn row<'a>(rows: &'a [BenchRow], sampler: &str, grid: usize) -> &'a BenchRow {
    rows.iter()
        .find(|r| r.sampler == sampler && r.grid == grid)
        .unwrap()
}

fn sampler_trend(
    be: &OracleBackend,
    heads: &Heads,
    scenes: &[denseprompt::bench::BenchScene],
) -> Outcome {
    let cfg = BenchConfig::default();
    let rows = sampler_comparison(
        be,
        Some(heads),
        scenes,
        &[32, 192],
        &[500],
        &[SamplerKind::Random, SamplerKind::Eps],
        &cfg,
    )
    .unwrap();
    let (e192, r192, e32) = (
        row(&rows, "eps", 192).recall,
        row(&rows, "random", 192).recall,
        row(&rows, "eps", 32).recall,
    );
    check(
        e192 - r192 >= 0.02 && e192 > e32,
        format!("recall at K=500: eps@192 {e192:.4}, random@192 {r192:.4}, eps@32 {e32:.4}"),
    )
}

fn grid_trend(
    be: &OracleBackend,
    heads: &Heads,
    scenes: &[denseprompt::bench::BenchScene],
) -> Outcome {
    let rows = grid_sweep(
        be,
        Some(heads),
        scenes,
        &[16, 32, 64, 128],
        &BenchConfig::default(),
    )
    .unwrap();
    let full: Vec<f64> = rows
        .iter()
        .filter(|r| r.sampler == "full")
        .map(|r| r.recall)
        .collect();
    let center = row(&rows, "center", 0).recall;
    let monotone = full.windows(2).all(|w| w[1] >= w[0]);
    check(
        monotone && center == 1.0,
        format!("full-decode recall over 16/32/64/128: {full:.4?}; centre prompts {center:.4}"),
    )
}

fn gradient_check() -> Outcome {
    let be = OracleBackend::new(OracleConfig {
        patch_size: 4,
        feature_channels: 6,
        token_channels: 4,
        mask_stride: 1,
        ..Default::default()
    })
    .unwrap();
    let params = SceneParams {
        n_objects: 2,
        width: 16,
        height: 16,
        size_range: [0.4, 0.6],
        ..SceneParams::desk_crowd()
    };
    let (scene, gt) = params.generate(1).unwrap();
    let img = LabeledImage {
        image: render(&scene),
        boxes: gt.visible_boxes,
    };
    let prep = prepare(&be, &img).unwrap();
    let (prompts, labels) = training_prompts(&prep, &sample_training_points(&prep.pseudo, 4, 4, 3));
    let mut heads = Heads::for_caps(&be.caps(), 2);
    let mut rng = rng_for(7, 5);
    for t in heads.tensors_mut() {
        t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let loss = |h: &Heads| total_loss(h, &be, &prep, &prompts, &labels).unwrap().0;
    let (parts, grad) = total_loss(&heads, &be, &prep, &prompts, &labels).unwrap();
    if (parts.total - (parts.fg + parts.iou)).abs() > 1e-12 {
        return Err(format!("total {} is not fg + iou", parts.total));
    }
    let step = 1e-5;
    let mut worst = (0.0f64, String::new());
    let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|(_, _, v)| v.to_vec()).collect();
    let names: Vec<&str> = heads.tensors().iter().map(|(n, _, _)| *n).collect();
    let mut count = 0;
    for (ti, name) in names.iter().enumerate() {
        for i in 0..analytic[ti].len() {
            let mut p = heads.clone();
            p.tensors_mut()[ti][i] += step;
            let mut q = heads.clone();
            q.tensors_mut()[ti][i] -= step;
            let numeric = (loss(&p).total - loss(&q).total) / (2.0 * step);
            let a = analytic[ti][i];
            // relative to the larger magnitude, with an absolute floor for
            // parameters whose gradient is essentially zero
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}]"));
            }
            count += 1;
        }
    }
    // the gradient holds exactly the trainable tensors, so every frozen
    // backbone component has no gradient at all
    let grad_names: Vec<&str> = grad.tensors().iter().map(|(n, _, _)| *n).collect();
    let trainable = grad_names == names
        && grad_names
            .iter()
            .all(|n| n.starts_with("adapter.") || n.starts_with("cls.") || n.starts_with("par."));
    let dec_before = be.decode_prompts(&prep.embedding, &prompts).unwrap();
    let cfg = TrainConfig {
        iterations: 3,
        learning_rate: 1e-2,
        ..Default::default()
    };
    let _ = train(&be, std::slice::from_ref(&img), &cfg).unwrap();
    let dec_after = be.decode_prompts(&prep.embedding, &prompts).unwrap();
    let frozen_kept = dec_before.native_iou == dec_after.native_iou
        && dec_before.mask_tokens == dec_after.mask_tokens;
    check(
        worst.0 < 1e-4 && trainable && frozen_kept,
        format!(
            "{count} parameters, worst relative error {:.2e} at {}; frozen components outside the gradient: {}",
            worst.0,
            worst.1,
            trainable && frozen_kept
        ),
    )
}

/// Nearest upsampling of a native-resolution mask to the image grid.
fn upsample(m: &SoftMask, w: usize, h: usize) -> BitMask {
    m.binarize().resize_nearest(w, h)
}

fn discrimination(be: &OracleBackend, heads: &Heads) -> Outcome {
    let params = SceneParams::desk_crowd();
    let (w, h) = (params.width, params.height);
    let (mut whole, mut fg, mut s_fg, mut s_bg, mut bg) = (0usize, 0usize, 0.0, 0.0, 0usize);
    for seed in 5000..5020u64 {
        let (scene, gt) = params.generate(seed).unwrap();
        let img = render(&scene);
        let emb = be.encode_image(&img).unwrap();
        let raw = be.extract_semantic_features(&img).unwrap();
        let adapted = heads.adapt(&raw).unwrap().features;
        let prompts = grid_points(w, h, 64);
        let dec = be.decode_prompts(&emb, &prompts).unwrap();
        let scores = PwdScorer {
            heads,
            adapted: &adapted,
        }
        .score(&dec)
        .unwrap();
        let mut iou_cache: HashMap<*const SoftMask, f64> = HashMap::new();
        for (i, (pick, score)) in select_best(&scores.s).into_iter().enumerate() {
            let (px, py) = (prompts[i].x as usize, prompts[i].y as usize);
            match gt.visible_masks.iter().position(|m| m.get(px, py)) {
                None => {
                    bg += 1;
                    s_bg += score;
                }
                Some(k) => {
                    fg += 1;
                    s_fg += score;
                    // the whole-object candidate is the one that best
                    // matches the object's visible mask
                    let ious: Vec<f64> = (0..CANDIDATES)
                        .map(|j| {
                            let m = &dec.masks[i][j];
                            *iou_cache.entry(Arc::as_ptr(m)).or_insert_with(|| {
                                iou_masks(&upsample(m, w, h), &gt.visible_masks[k]).unwrap()
                            })
                        })
                        .collect();
                    let best =
                        (0..CANDIDATES).fold(0, |b, j| if ious[j] > ious[b] { j } else { b });
                    if pick == best {
                        whole += 1;
                    }
                }
            }
        }
    }
    let frac = whole as f64 / fg as f64;
    let (mf, mb) = (s_fg / fg as f64, s_bg / bg as f64);
    check(
        frac >= 0.9 && mb < 0.5 * mf,
        format!("whole chosen for {whole}/{fg} = {frac:.4} foreground prompts; mean score fg {mf:.4}, bg {mb:.4}"),
    )
}

fn run_annotation(
    be: &OracleBackend,
    heads: &Heads,
    params: &SceneParams,
    cfg: &PipelineConfig,
) -> denseprompt::eval::Metrics {
    let images: Vec<EvalImage> = (5000..5020u64)
        .map(|seed| {
            let (scene, gt) = params.generate(seed).unwrap();
            let r = annotate(&render(&scene), heads, be, cfg).unwrap();
            EvalImage {
                detections: r.detections.iter().map(|d| (d.bbox, d.score)).collect(),
                ground_truth: gt.visible_boxes,
            }
        })
        .collect();
    evaluate(&images, 0.5)
}

fn end_to_end(be: &OracleBackend, heads: &Heads) -> Outcome {
    let crowd = run_annotation(
        be,
        heads,
        &SceneParams::desk_crowd(),
        &PipelineConfig::default(),
    );
    let small = SceneParams::small_objects();
    let single = run_annotation(be, heads, &small, &PipelineConfig::default());
    let multi_cfg = PipelineConfig {
        crop: Some(CropConfig {
            window: 128,
            overlap: 32,
            resize_to: 256,
            include_full_image: true,
        }),
        ..Default::default()
    };
    let multi = run_annotation(be, heads, &small, &multi_cfg);
    check(
        crowd.recall >= 0.9 && crowd.ap50 >= 0.85 && multi.recall >= single.recall,
        format!(
            "crowd recall {:.4} AP50 {:.4}; small objects recall single {:.4} vs multi-crop {:.4}",
            crowd.recall, crowd.ap50, single.recall, multi.recall
        ),
    )
}

/// Brute-force metric references: every quantity is recomputed from the
/// set of detections kept at each candidate score threshold.
mod reference {
    use super::*;

    /// Greedy matching in score order; each detection takes the unmatched
    /// ground truth of highest IoU at or above 0.5 (lowest index on ties).
    pub fn hits(dets: &[(BoxXYXY, f64)], gts: &[BoxXYXY]) -> Vec<bool> {
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1).then(a.cmp(&b)));
        let mut used = vec![false; gts.len()];
        let mut hit = vec![false; dets.len()];
        for d in order {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                let v = iou_boxes(&dets[d].0, gt);
                if !used[g] && v >= 0.5 && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
                hit[d] = true;
            }
        }
        hit
    }

    pub struct Pooled {
        pub dets: Vec<(f64, bool)>,
        pub n_gt: usize,
        pub n_images: usize,
    }

    pub fn pool(ims: &[EvalImage]) -> Pooled {
        let mut dets = Vec::new();
        for im in ims {
            let h = hits(&im.detections, &im.ground_truth);
            dets.extend(im.detections.iter().zip(h).map(|(d, t)| (d.1, t)));
        }
        Pooled {
            dets,
            n_gt: ims.iter().map(|i| i.ground_truth.len()).sum(),
            n_images: ims.len(),
        }
    }

    /// (tp, fp) over detections scoring at least `t`.
    fn kept(p: &Pooled, t: f64) -> (usize, usize) {
        let tp = p.dets.iter().filter(|d| d.0 >= t && d.1).count();
        let fp = p.dets.iter().filter(|d| d.0 >= t && !d.1).count();
        (tp, fp)
    }

    /// Mean over the ground truths of the best precision at any threshold
    /// reaching that many true positives.
    pub fn ap(p: &Pooled) -> f64 {
        if p.n_gt == 0 {
            return 0.0;
        }
        let sum: f64 = (1..=p.n_gt)
            .map(|k| {
                p.dets
                    .iter()
                    .map(|d| kept(p, d.0))
                    .filter(|&(tp, _)| tp >= k)
                    .map(|(tp, fp)| tp as f64 / (tp + fp) as f64)
                    .fold(0.0, f64::max)
            })
            .sum();
        sum / p.n_gt as f64
    }

    pub fn recall(p: &Pooled) -> f64 {
        if p.n_gt == 0 {
            return 0.0;
        }
        p.dets.iter().filter(|d| d.1).count() as f64 / p.n_gt as f64
    }

    pub fn mr2(p: &Pooled) -> f64 {
        if p.n_gt == 0 {
            return 1.0;
        }
        let mut thresholds: Vec<f64> = p.dets.iter().map(|d| d.0).collect();
        thresholds.push(f64::INFINITY);
        let logs: f64 = (0..9)
            .map(|i| {
                let fppi = 10f64.powf(-2.0 + 0.25 * i as f64);
                thresholds
                    .iter()
                    .map(|&t| kept(p, t))
                    .filter(|&(_, fp)| fp as f64 / p.n_images as f64 <= fppi)
                    .map(|(tp, _)| 1.0 - tp as f64 / p.n_gt as f64)
                    .fold(1.0, f64::min)
                    .max(1e-6)
                    .ln()
            })
            .sum();
        (logs / 9.0).exp()
    }
}

fn random_instance(seed: u64) -> Vec<EvalImage> {
    let mut rng = rng_for(seed, 0xACC);
    let bx = |rng: &mut rand_chacha::ChaCha8Rng| {
        let (x, y) = (
            rng.random_range(0..6) as f64 * 4.0,
            rng.random_range(0..6) as f64 * 4.0,
        );
        let (w, h) = (
            rng.random_range(1..4) as f64 * 4.0,
            rng.random_range(1..4) as f64 * 4.0,
        );
        BoxXYXY::new(x, y, x + w, y + h).unwrap()
    };
    let n_images = rng.random_range(1..4);
    let n_det: usize = rng.random_range(0..=12);
    let n_gt: usize = rng.random_range(0..=8);
    // distinct scores: a shuffled ladder
    let mut scores: Vec<f64> = (1..=n_det).map(|k| k as f64 / 16.0).collect();
    for i in (1..scores.len()).rev() {
        scores.swap(i, rng.random_range(0..=i));
    }
    let mut ims: Vec<EvalImage> = (0..n_images).map(|_| EvalImage::default()).collect();
    for s in scores {
        let k = rng.random_range(0..n_images);
        let b = bx(&mut rng);
        ims[k].detections.push((b, s));
    }
    for _ in 0..n_gt {
        let k = rng.random_range(0..n_images);
        let b = bx(&mut rng);
        ims[k].ground_truth.push(b);
    }
    ims
}

fn metric_oracles() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..200 {
        let ims = random_instance(seed);
        let e = evaluate(&ims, 0.5);
        let p = reference::pool(&ims);
        for d in [
            e.ap50 - reference::ap(&p),
            e.recall - reference::recall(&p),
            e.mr2 - reference::mr2(&p),
        ] {
            worst = worst.max(d.abs());
        }
    }
    let b = |x: f64| BoxXYXY::new(x, 0.0, x + 10.0, 10.0).unwrap();
    let hand = [EvalImage {
        detections: vec![(b(0.0), 0.9), (b(200.0), 0.8), (b(50.0), 0.7)],
        ground_truth: vec![b(0.0), b(50.0)],
    }];
    let ap = evaluate(&hand, 0.5).ap50;
    // the hand-computed PR curve, evaluated in the same arithmetic
    let expected = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
    check(
        worst < 1e-9 && ap == expected,
        format!("200 instances, worst deviation {worst:.1e}; TP,FP,TP over 2 GT gives AP {ap} (hand {expected})"),
    )
}

fn small_box() -> impl Strategy<Value = BoxXYXY> {
    (0.0..50.0f64, 0.0..50.0f64, 0.5..30.0f64, 0.5..30.0f64)
        .prop_map(|(x, y, w, h)| BoxXYXY::new(x, y, x + w, y + h).unwrap())
}

fn geometry_properties() -> Outcome {
    const CASES: u32 = 1000;
    let runner = || {
        TestRunner::new(PtConfig {
            cases: CASES,
            failure_persistence: None,
            ..PtConfig::default()
        })
    };
    let mask = (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
        (
            Just(w),
            Just(h),
            prop::collection::vec(any::<bool>(), w * h),
        )
    });
    let rle = runner().run(&mask, |(w, h, bits)| {
        let m = BitMask::from_fn(w, h, |x, y| bits[y * w + x]);
        prop_assert_eq!(rle_decode(&rle_encode(&m)).unwrap(), m);
        Ok(())
    });
    let dets = prop::collection::vec((small_box(), 0.0..1.0f64), 0..24);
    let nms_props = runner().run(&(dets, 0.05..0.95f64), |(dets, thr)| {
        let keep = nms(&dets, thr);
        for (i, &a) in keep.iter().enumerate() {
            for &b in &keep[i + 1..] {
                prop_assert!(iou_boxes(&dets[a].0, &dets[b].0) <= thr);
            }
        }
        let kept: Vec<_> = keep.iter().map(|&i| dets[i]).collect();
        let again = nms(&kept, thr);
        prop_assert_eq!(again, (0..kept.len()).collect::<Vec<_>>());
        Ok(())
    });
    let pair_masks = (1usize..16, 1usize..16).prop_flat_map(|(w, h)| {
        (
            Just(w),
            prop::collection::vec(any::<bool>(), w * h),
            prop::collection::vec(any::<bool>(), w * h),
        )
    });
    let sym = runner().run(
        &(small_box(), small_box(), pair_masks),
        |(a, b, (w, ma, mb))| {
            prop_assert_eq!(iou_boxes(&a, &b), iou_boxes(&b, &a));
            let h = ma.len() / w;
            let x = BitMask::from_fn(w, h, |i, j| ma[j * w + i]);
            let y = BitMask::from_fn(w, h, |i, j| mb[j * w + i]);
            prop_assert_eq!(iou_masks(&x, &y).unwrap(), iou_masks(&y, &x).unwrap());
            Ok(())
        },
    );
    let results = [
        ("RLE round trip", rle.err().map(|e| e.to_string())),
        (
            "NMS idempotence and IoU bound",
            nms_props.err().map(|e| e.to_string()),
        ),
        ("IoU symmetry", sym.err().map(|e| e.to_string())),
    ];
    let failed: Vec<String> = results
        .iter()
        .filter_map(|(n, e)| e.as_ref().map(|e| format!("{n}: {e}")))
        .collect();
    check(
        failed.is_empty(),
        if failed.is_empty() {
            format!(
                "{CASES} cases each: RLE round trip, NMS idempotence and IoU bound, IoU symmetry"
            )
        } else {
            failed.join("; ")
        },
    )
}

const CLI_CONFIG: &str = r#"
seed = 11
[train]
iterations = 60
[data.train]
kind = "scenes"
first_seed = 1000
count = 2
[data.eval]
kind = "scenes"
first_seed = 5000
count = 3
[annotate.crop]
window = 160
overlap = 32
[bench]
sweep_grids = [8, 16, 32]
sampler_grids = [32]
budgets = [128]
samplers = ["full", "random", "eps"]
[bench.scenes]
family = "desk_crowd"
count = 3
"#;

fn cli_outputs(dir: &Path, out: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let bin = env!("CARGO_BIN_EXE_denseprompt");
    let ck = format!("{out}/heads.ck");
    let runs: [&[&str]; 6] = [
        &["scenes"],
        &["train"],
        &["annotate"],
        &["eval"],
        &["bench-samplers"],
        &["bench-samplers", "--checkpoint", &ck],
    ];
    for (i, args) in runs.iter().enumerate() {
        // the two bench runs write the same names; keep both
        let out_dir = if i == 5 {
            format!("{out}/heads")
        } else {
            out.to_string()
        };
        let res = Command::new(bin)
            .current_dir(dir)
            .args(["--config", "run.toml", "--out-dir", &out_dir])
            .args(*args)
            .output()
            .map_err(|e| e.to_string())?;
        if !res.status.success() {
            return Err(format!(
                "{args:?}: {}",
                String::from_utf8_lossy(&res.stderr).trim()
            ));
        }
    }
    let mut files = BTreeMap::new();
    let root = dir.join(out);
    let mut stack: Vec<PathBuf> = vec![root.clone()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            let name = p
                .strip_prefix(&root)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            if p.is_dir() {
                stack.push(p);
            } else if (name.ends_with(".csv") || name.ends_with(".json"))
                && !name.ends_with("timing.csv")
            {
                files.insert(name, std::fs::read(&p).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(files)
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(dir.path().join("run.toml"), CLI_CONFIG).map_err(|e| e.to_string())?;
    let a = cli_outputs(dir.path(), "a")?;
    let b = cli_outputs(dir.path(), "b")?;
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != Some(&a[*k])).collect();
    check(
        differing.is_empty() && a.len() == b.len() && a.len() >= 10,
        format!(
            "scenes, train, annotate, eval, bench-samplers twice: {} CSV/JSON files{}",
            a.len(),
            if differing.is_empty() {
                ", all byte-identical".to_string()
            } else {
                format!(", differing: {differing:?}")
            }
        ),
    )
}

fn run_criterion(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = Duration::as_secs_f64(&t.elapsed());
    let (tag, detail) = match &r {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("[{tag}] criterion {n}: {name}: {detail} ({secs:.1}s)");
    r.is_ok()
}

#[test]
fn acceptance_criteria() {
    let be = OracleBackend::new(OracleConfig::default()).unwrap();
    let mut ok = Vec::new();
    ok.push(run_criterion(1, "sampler conformance", || {
        eps_conformance(&be)
    }));
    let t = Instant::now();
    let heads = trained_heads(&be);
    println!("trained shared model in {:.1}s", t.elapsed().as_secs_f64());
    let scenes = make_scenes(
        &SceneParams::bench_crowd(),
        &(2000..2020).collect::<Vec<_>>(),
    )
    .unwrap();
    ok.push(run_criterion(2, "sampler comparison trend", || {
        sampler_trend(&be, &heads, &scenes)
    }));
    ok.push(run_criterion(3, "grid density trend", || {
        grid_trend(&be, &heads, &scenes)
    }));
    ok.push(run_criterion(4, "gradient verification", gradient_check));
    ok.push(run_criterion(5, "scoring-head discrimination", || {
        discrimination(&be, &heads)
    }));
    ok.push(run_criterion(6, "end-to-end annotation", || {
        end_to_end(&be, &heads)
    }));
    ok.push(run_criterion(7, "metric oracles", metric_oracles));
    ok.push(run_criterion(8, "geometry properties", geometry_properties));
    ok.push(run_criterion(9, "reproducibility", reproducibility));
    let passed = ok.iter().filter(|&&o| o).count();
    println!("{passed}/{} criteria passed", ok.len());
    assert_eq!(passed, ok.len(), "some acceptance criteria failed");
}
