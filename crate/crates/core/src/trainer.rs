//! Few-shot training of the adapter, the shared classifier and the parallel
//! IoU head against frozen backbones.
//!
//! The loss is the dice loss of the upsampled heatmap against the
//! box-decoded pseudo mask plus the MSE of the joint mask scores against
//! their IoU targets on sampled foreground/background points. Gradients are
//! derived by hand and checked against central differences in the tests.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbones, FeatureMap, CANDIDATES};
use crate::error::{Error, Result};
use crate::geometry::{BitMask, BoxXYXY, PointPrompt};
use crate::image::RgbImage;
use crate::model::Heads;
use crate::nn::sigmoid;
use crate::prompt::{box_masks, cell_logits, heatmap_dice, merge_pseudo_mask};
use crate::pwdnet::{self, target_scores};
use crate::rng::{hash_words, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub iterations: usize,
    pub batch_images: usize,
    pub pos_points_per_image: usize,
    pub neg_points_per_image: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            iterations: 2000,
            batch_images: 1,
            pos_points_per_image: 32,
            neg_points_per_image: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.batch_images >= 1
            && self.pos_points_per_image + self.neg_points_per_image >= 1;
        if !ok {
            return Err(Error::Config(format!(
                "invalid training configuration {self:?}"
            )));
        }
        Ok(())
    }
}

/// One few-shot training image: pixels plus box annotations only.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: RgbImage,
    pub boxes: Vec<BoxXYXY>,
}

/// Frozen backbone outputs and pseudo labels for one training image.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub width: usize,
    pub height: usize,
    pub raw: FeatureMap,
    pub embedding: FeatureMap,
    /// Per-box pseudo masks at image resolution.
    pub objects: Vec<BitMask>,
    /// The same masks OR-pooled to the decoder's native mask resolution.
    pub objects_native: Vec<BitMask>,
    /// Merged foreground at `PSEUDO_SIDE x PSEUDO_SIDE`.
    pub pseudo: BitMask,
}

pub fn prepare(backend: &dyn Backbones, img: &LabeledImage) -> Result<PreparedImage> {
    let (w, h) = (img.image.width(), img.image.height());
    let raw = backend.extract_semantic_features(&img.image)?;
    let embedding = backend.encode_image(&img.image)?;
    let objects = box_masks(&img.boxes, &embedding, backend, w, h)?;
    let pseudo = merge_pseudo_mask(&objects, w, h)?;
    let (nw, nh) = backend.caps().mask_dims(w, h);
    let objects_native = objects.iter().map(|m| m.downsample_any(nw, nh)).collect();
    Ok(PreparedImage {
        width: w,
        height: h,
        raw,
        embedding,
        objects,
        objects_native,
        pseudo,
    })
}

/// Points drawn from a pseudo mask, in the mask's pixel coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSample {
    /// `(point, is_foreground)`, positives first.
    pub points: Vec<(PointPrompt, bool)>,
    /// Shortfalls when the mask had fewer pixels of a kind than requested.
    pub warnings: Vec<String>,
}

/// Uniform draws without replacement from foreground and background
/// pixels; each point sits at its pixel centre.
pub fn sample_training_points(
    mask: &BitMask,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> PointSample {
    let w = mask.width();
    let (fg, bg): (Vec<usize>, Vec<usize>) =
        (0..mask.data().len()).partition(|&i| mask.data()[i] != 0);
    let mut rng = rng_for(seed, 0x9015);
    let mut out = PointSample::default();
    for (pool, want, positive) in [(&fg, n_pos, true), (&bg, n_neg, false)] {
        let k = want.min(pool.len());
        if k < want {
            out.warnings.push(format!(
                "requested {want} {} points, mask has {}",
                if positive { "positive" } else { "negative" },
                pool.len()
            ));
        }
        for i in sample(&mut rng, pool.len(), k) {
            let p = pool[i];
            out.points.push((
                PointPrompt::new((p % w) as f64 + 0.5, (p / w) as f64 + 0.5),
                positive,
            ));
        }
    }
    out
}

/// Sampled points mapped to image coordinates, paired with the index of
/// the pseudo object containing each positive. Positives that land outside
/// every object mask after resampling are dropped.
pub fn training_prompts(
    prep: &PreparedImage,
    sample: &PointSample,
) -> (Vec<PointPrompt>, Vec<Option<usize>>) {
    let sx = prep.width as f64 / prep.pseudo.width() as f64;
    let sy = prep.height as f64 / prep.pseudo.height() as f64;
    let mut prompts = Vec::new();
    let mut labels = Vec::new();
    for (p, fg) in &sample.points {
        let q = PointPrompt::new(p.x * sx, p.y * sy);
        let (ix, iy) = (
            (q.x as usize).min(prep.width - 1),
            (q.y as usize).min(prep.height - 1),
        );
        let label = if *fg {
            match prep.objects.iter().position(|m| m.get(ix, iy)) {
                Some(k) => Some(k),
                None => continue,
            }
        } else {
            None
        };
        prompts.push(q);
        labels.push(label);
    }
    (prompts, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParts {
    pub fg: f64,
    pub iou: f64,
    pub total: f64,
}

/// Loss on one image for fixed prompts, with gradients for the trainable
/// heads. The returned `Heads` holds gradients, not parameters; frozen
/// backbone outputs have no slot in it.
pub fn total_loss(
    heads: &Heads,
    backend: &dyn Backbones,
    prep: &PreparedImage,
    prompts: &[PointPrompt],
    labels: &[Option<usize>],
) -> Result<(LossParts, Heads)> {
    let mut grad = heads.zeros_like();
    let adapted = heads.adapt(&prep.raw)?;
    let feat = &adapted.features;
    let c = feat.channels;
    let mut d_feat = vec![0.0; feat.data.len()];

    // dice path
    let heat: Vec<f64> = cell_logits(feat, &heads.cls)
        .into_iter()
        .map(sigmoid)
        .collect();
    let (l_fg, d_heat) = heatmap_dice(&heat, feat.width, feat.height, &prep.pseudo);
    for (cell, (&hv, &dh)) in heat.iter().zip(&d_heat).enumerate() {
        let dz = dh * hv * (1.0 - hv);
        let a = feat.cell(cell);
        heads.cls.backward(
            a,
            &[dz],
            &mut grad.cls,
            Some(&mut d_feat[cell * c..(cell + 1) * c]),
        );
    }

    // scoring path
    let mut l_iou = 0.0;
    if !prompts.is_empty() {
        let dec = backend.decode_prompts(&prep.embedding, prompts)?;
        let fw = pwdnet::forward(&dec, feat, heads)?;
        let target = target_scores(&dec.masks, &prep.objects_native, labels)?;
        let s = &fw.scores;
        let m = s.s.len() as f64;
        l_iou = pwdnet::iou_loss(&s.s, &target)?;

        let mut d_iou = vec![0.0; s.s.len()];
        // token gradients summed per distinct pooling map
        let mut pooled_grads: Vec<(Arc<Vec<f64>>, Vec<f64>)> = Vec::new();
        for k in 0..s.s.len() {
            let ds = 2.0 * (s.s[k] - target[k]) / m;
            d_iou[k] = ds * s.s_cls[k];
            let dz = ds * s.s_iou[k] * s.s_cls[k] * (1.0 - s.s_cls[k]);
            let (i, j) = (k / CANDIDATES, k % CANDIDATES);
            let mut d_token = vec![0.0; c];
            heads.cls.backward(
                fw.tokens.token(i, j),
                &[dz],
                &mut grad.cls,
                Some(&mut d_token),
            );
            let w = &fw.tokens.weights[k];
            match pooled_grads.iter_mut().find(|(a, _)| Arc::ptr_eq(a, w)) {
                Some((_, acc)) => acc.iter_mut().zip(&d_token).for_each(|(a, d)| *a += d),
                None => pooled_grads.push((w.clone(), d_token)),
            }
        }
        heads
            .par
            .backward_batch(&fw.par_input, &fw.par_cache, &d_iou, &mut grad.par, None);
        for (weights, d_token) in &pooled_grads {
            for (cell, &a) in weights.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, t) in d_feat[cell * c..(cell + 1) * c].iter_mut().zip(d_token) {
                    *d += a * t;
                }
            }
        }
    }

    heads.adapter.backward_batch(
        &prep.raw.data,
        &adapted.cache,
        &d_feat,
        &mut grad.adapter,
        None,
    );
    Ok((
        LossParts {
            fg: l_fg,
            iou: l_iou,
            total: l_fg + l_iou,
        },
        grad,
    ))
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Heads,
    v: Heads,
    t: u64,
}

impl Adam {
    pub fn new(like: &Heads) -> Self {
        Adam {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut Heads, grads: &Heads, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let grads = grads.tensors();
        for (((p, (_, _, g)), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                let gi = g[i] + cfg.weight_decay * p[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub l_fg: f64,
    pub l_iou: f64,
    pub l: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub heads: Heads,
    pub log: Vec<LossRecord>,
    pub warnings: Vec<String>,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,l_fg,l_iou,l\n");
        for r in &self.log {
            let _ = writeln!(s, "{},{:.9},{:.9},{:.9}", r.iteration, r.l_fg, r.l_iou, r.l);
        }
        s
    }
}

/// Points used for `image` at `iteration`.
pub fn iteration_points(
    prep: &PreparedImage,
    cfg: &TrainConfig,
    iteration: usize,
    image: usize,
) -> PointSample {
    let seed = hash_words(&[cfg.seed, iteration as u64, image as u64]);
    sample_training_points(
        &prep.pseudo,
        cfg.pos_points_per_image,
        cfg.neg_points_per_image,
        seed,
    )
}

/// Trains from `init` on pre-computed images.
pub fn train_prepared(
    backend: &dyn Backbones,
    data: &[PreparedImage],
    cfg: &TrainConfig,
    init: Heads,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset(
            "training needs at least one labeled image".into(),
        ));
    }
    let mut heads = init;
    let mut adam = Adam::new(&heads);
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut warnings = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut rng = rng_for(cfg.seed, 0x0DE5);
    for it in 0..cfg.iterations {
        let mut grad = heads.zeros_like();
        let mut sum = LossParts {
            fg: 0.0,
            iou: 0.0,
            total: 0.0,
        };
        for _ in 0..cfg.batch_images {
            if order.is_empty() {
                order = sample(&mut rng, data.len(), data.len()).into_vec();
            }
            let idx = order.pop().expect("refilled above");
            let prep = &data[idx];
            let pts = iteration_points(prep, cfg, it, idx);
            for w in &pts.warnings {
                if warnings.len() < 100 {
                    warnings.push(format!("iteration {it}, image {idx}: {w}"));
                }
            }
            let (prompts, labels) = training_prompts(prep, &pts);
            let (parts, g) = total_loss(&heads, backend, prep, &prompts, &labels)?;
            sum.fg += parts.fg;
            sum.iou += parts.iou;
            sum.total += parts.total;
            for (acc, (_, _, gv)) in grad.tensors_mut().into_iter().zip(g.tensors()) {
                acc.iter_mut().zip(gv).for_each(|(a, b)| *a += b);
            }
        }
        let nb = cfg.batch_images as f64;
        if cfg.batch_images > 1 {
            for t in grad.tensors_mut() {
                t.iter_mut().for_each(|v| *v /= nb);
            }
        }
        let rec = LossRecord {
            iteration: it,
            l_fg: sum.fg / nb,
            l_iou: sum.iou / nb,
            l: sum.total / nb,
        };
        if !rec.l.is_finite() || !grad.is_finite() {
            let norms: Vec<String> = heads
                .tensors()
                .iter()
                .map(|(n, _, v)| format!("{n}={:.3e}", v.iter().map(|x| x * x).sum::<f64>().sqrt()))
                .collect();
            return Err(Error::NonFiniteLoss {
                iteration: it,
                detail: format!(
                    "l_fg={} l_iou={} params: {}",
                    rec.l_fg,
                    rec.l_iou,
                    norms.join(" ")
                ),
            });
        }
        log.push(rec);
        adam.step(&mut heads, &grad, cfg);
    }
    Ok(TrainOutcome {
        heads,
        log,
        warnings,
    })
}

/// Prepares every image and trains freshly initialised heads.
pub fn train(
    backend: &dyn Backbones,
    images: &[LabeledImage],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let data = images
        .iter()
        .map(|i| prepare(backend, i))
        .collect::<Result<Vec<_>>>()?;
    train_prepared(
        backend,
        &data,
        cfg,
        Heads::for_caps(&backend.caps(), cfg.seed),
    )
}
