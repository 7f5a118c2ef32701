//! Class-specific prompt generation: a foreground heatmap over adapted
//! semantic features, its dice-loss supervision from box-decoded pseudo
//! masks, and extraction of point prompts from the heatmap.

use crate::backbone::{FeatureMap, MaskDecoder};
use crate::error::{Error, Result};
use crate::geometry::{
    bilinear_resize_adjoint_f64, bilinear_resize_f64, BitMask, BoxXYXY, PointPrompt, SoftMask,
};
use crate::model::Heads;
use crate::nn::{sigmoid, Linear};

/// Side of the square pseudo-mask raster the dice loss is computed on.
pub const PSEUDO_SIDE: usize = 256;

/// Dice smoothing constant.
pub const DICE_EPS: f64 = 1.0;

/// Classifier logits for every cell of an adapted feature map.
pub fn cell_logits(adapted: &FeatureMap, cls: &Linear) -> Vec<f64> {
    (0..adapted.cells())
        .map(|i| cls.forward(adapted.cell(i))[0])
        .collect()
}

/// Heatmap from features that already went through the adapter.
pub fn heatmap_from_adapted(adapted: &FeatureMap, cls: &Linear) -> SoftMask {
    SoftMask {
        width: adapted.width,
        height: adapted.height,
        data: cell_logits(adapted, cls)
            .into_iter()
            .map(|z| sigmoid(z) as f32)
            .collect(),
        is_logit: false,
    }
}

/// `sigmoid(cls(adapter(raw)))` per feature cell.
pub fn compute_heatmap(raw: &FeatureMap, heads: &Heads) -> Result<SoftMask> {
    let adapted = heads.adapt(raw)?;
    Ok(heatmap_from_adapted(&adapted.features, &heads.cls))
}

/// One decoded mask per box, at image resolution.
pub fn box_masks(
    boxes: &[BoxXYXY],
    embedding: &FeatureMap,
    decoder: &dyn MaskDecoder,
    image_w: usize,
    image_h: usize,
) -> Result<Vec<BitMask>> {
    boxes
        .iter()
        .map(|b| {
            if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > image_w as f64 || b.y2 > image_h as f64 {
                return Err(Error::InvalidBox(format!(
                    "box {b:?} outside {image_w}x{image_h} canvas"
                )));
            }
            let m = decoder.decode_box_prompt(embedding, b)?;
            Ok(if m.width() == image_w && m.height() == image_h {
                m
            } else {
                m.resize_nearest(image_w, image_h)
            })
        })
        .collect()
}

/// Union of per-box masks, nearest-resampled to the pseudo-mask raster.
pub fn merge_pseudo_mask(masks: &[BitMask], image_w: usize, image_h: usize) -> Result<BitMask> {
    let mut union = BitMask::new(image_w, image_h);
    for m in masks {
        union.union_with(m)?;
    }
    Ok(union.resize_nearest(PSEUDO_SIDE, PSEUDO_SIDE))
}

/// Box-prompted pseudo foreground mask at `PSEUDO_SIDE x PSEUDO_SIDE`.
pub fn generate_pseudo_masks(
    boxes: &[BoxXYXY],
    embedding: &FeatureMap,
    decoder: &dyn MaskDecoder,
    image_w: usize,
    image_h: usize,
) -> Result<BitMask> {
    let masks = box_masks(boxes, embedding, decoder, image_w, image_h)?;
    merge_pseudo_mask(&masks, image_w, image_h)
}

/// Smoothed dice loss `1 - (2 sum pg + eps) / (sum p + sum g + eps)`.
pub fn dice_loss(pred: &SoftMask, target: &BitMask) -> Result<f64> {
    if pred.width != target.width() || pred.height != target.height() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs target {}x{}",
            pred.width,
            pred.height,
            target.width(),
            target.height()
        )));
    }
    let p: Vec<f64> = pred.data.iter().map(|&v| v as f64).collect();
    Ok(dice_loss_grad(&p, target.data()).0)
}

/// Dice loss value and its gradient with respect to `pred`.
pub fn dice_loss_grad(pred: &[f64], target: &[u8]) -> (f64, Vec<f64>) {
    let mut inter = 0.0;
    let mut sum_p = 0.0;
    let mut sum_g = 0.0;
    for (&p, &g) in pred.iter().zip(target) {
        let g = g as f64;
        inter += p * g;
        sum_p += p;
        sum_g += g;
    }
    let num = 2.0 * inter + DICE_EPS;
    let den = sum_p + sum_g + DICE_EPS;
    let grad = target
        .iter()
        .map(|&g| -(2.0 * g as f64 * den - num) / (den * den))
        .collect();
    (1.0 - num / den, grad)
}

/// Heatmap after bilinear upsampling to the pseudo-mask raster, and the
/// dice loss against `target`, plus the gradient with respect to each
/// heatmap cell.
pub(crate) fn heatmap_dice(heat: &[f64], w: usize, h: usize, target: &BitMask) -> (f64, Vec<f64>) {
    let up = bilinear_resize_f64(heat, w, h, PSEUDO_SIDE, PSEUDO_SIDE);
    let (loss, dup) = dice_loss_grad(&up, target.data());
    (
        loss,
        bilinear_resize_adjoint_f64(&dup, w, h, PSEUDO_SIDE, PSEUDO_SIDE),
    )
}

/// Bilinear heat lookup at image coordinates, with the same sampling grid
/// as the resize functions (cell `j` centred at `(j + 0.5) * W / w`).
pub fn sample_heat(heat: &SoftMask, image_w: usize, image_h: usize, x: f64, y: f64) -> f64 {
    let axis = |v: f64, size: usize, cells: usize| {
        let u = (v * cells as f64 / size as f64 - 0.5).clamp(0.0, (cells - 1) as f64);
        let i0 = u.floor() as usize;
        let i1 = (i0 + 1).min(cells - 1);
        (i0, i1, u - i0 as f64)
    };
    let (x0, x1, fx) = axis(x, image_w, heat.width);
    let (y0, y1, fy) = axis(y, image_h, heat.height);
    let g = |xx, yy| heat.get(xx, yy) as f64;
    let top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
    let bot = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Centres of an `n x n` grid over a `width x height` canvas, row-major.
pub fn grid_points(width: usize, height: usize, n: usize) -> Vec<PointPrompt> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut p = PointPrompt::new(
                (j as f64 + 0.5) * width as f64 / n as f64,
                (i as f64 + 0.5) * height as f64 / n as f64,
            );
            p.grid_index = i * n + j;
            out.push(p);
        }
    }
    out
}

/// Grid points whose heat is at least `t`, tagged with that heat.
pub fn extract_prompts(
    heat: &SoftMask,
    image_w: usize,
    image_h: usize,
    grid: usize,
    t: f64,
) -> Vec<PointPrompt> {
    grid_points(image_w, image_h, grid)
        .into_iter()
        .filter_map(|mut p| {
            let v = sample_heat(heat, image_w, image_h, p.x, p.y);
            (v >= t).then(|| {
                p.heat = v;
                p
            })
        })
        .collect()
}
