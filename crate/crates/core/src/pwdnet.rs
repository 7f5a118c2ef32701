//! Part/whole discrimination: scores each of the decoder's four candidate
//! masks by a refined IoU estimate times a semantic foreground score, and
//! picks the best candidate per prompt.

use std::collections::HashMap;
use std::sync::Arc;

use crate::backbone::{DecodeResult, FeatureMap, CANDIDATES};
use crate::error::{Error, Result};
use crate::geometry::{bilinear_taps, iou_masks, BitMask, SoftMask};
use crate::model::Heads;
use crate::nn::{sigmoid, Linear, Mlp, MlpCache};

/// Per-candidate scores, each `n x 4` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointScores {
    pub n: usize,
    pub s_iou: Vec<f64>,
    pub s_cls: Vec<f64>,
    pub s: Vec<f64>,
}

impl JointScores {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.s[i * CANDIDATES..(i + 1) * CANDIDATES]
    }
}

/// Semantic tokens, `n x 4 x C`, with the pooling weights that made them.
#[derive(Debug, Clone)]
pub struct SemanticTokens {
    pub n: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    /// One spatial weight map per candidate; identical candidates share one.
    pub(crate) weights: Vec<Arc<Vec<f64>>>,
}

impl SemanticTokens {
    pub fn token(&self, i: usize, j: usize) -> &[f64] {
        let off = (i * CANDIDATES + j) * self.channels;
        &self.data[off..off + self.channels]
    }
}

/// Spatial softmax of the candidate's logits after bilinear downscaling to
/// the `w x h` feature grid.
pub fn pooling_weights(mask: &SoftMask, w: usize, h: usize) -> Vec<f64> {
    let xt = bilinear_taps(mask.width, w);
    let yt = bilinear_taps(mask.height, h);
    let mut z = Vec::with_capacity(w * h);
    for ty in &yt {
        let r0 = &mask.data[ty.i0 * mask.width..(ty.i0 + 1) * mask.width];
        let r1 = &mask.data[ty.i1 * mask.width..(ty.i1 + 1) * mask.width];
        for tx in &xt {
            let top = r0[tx.i0] as f64 * (1.0 - tx.w1) + r0[tx.i1] as f64 * tx.w1;
            let bot = r1[tx.i0] as f64 * (1.0 - tx.w1) + r1[tx.i1] as f64 * tx.w1;
            z.push(top * (1.0 - ty.w1) + bot * ty.w1);
        }
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
    z
}

fn pooled(weights: &[f64], feat: &FeatureMap) -> Vec<f64> {
    let mut token = vec![0.0; feat.channels];
    for (cell, &a) in weights.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (t, f) in token.iter_mut().zip(feat.cell(cell)) {
            *t += a * f;
        }
    }
    token
}

/// Semantic tokens and `s_cls = sigmoid(cls(token))` for every candidate.
/// `feat` must be the adapter output, the same map the heatmap uses.
pub fn semantic_score(
    dec: &DecodeResult,
    feat: &FeatureMap,
    cls: &Linear,
) -> Result<(SemanticTokens, Vec<f64>)> {
    if cls.inputs != feat.channels {
        return Err(Error::DimensionMismatch(format!(
            "classifier expects {} channels, features have {}",
            cls.inputs, feat.channels
        )));
    }
    let c = feat.channels;
    let n = dec.len();
    let mut data = Vec::with_capacity(n * CANDIDATES * c);
    let mut weights = Vec::with_capacity(n * CANDIDATES);
    let mut s_cls = Vec::with_capacity(n * CANDIDATES);
    let mut seen: HashMap<*const SoftMask, (Arc<Vec<f64>>, Vec<f64>, f64)> = HashMap::new();
    for row in &dec.masks {
        for m in row {
            let (a, token, s) = seen.entry(Arc::as_ptr(m)).or_insert_with(|| {
                let a = Arc::new(pooling_weights(m, feat.width, feat.height));
                let token = pooled(&a, feat);
                let s = sigmoid(cls.forward(&token)[0]);
                (a, token, s)
            });
            data.extend_from_slice(token);
            weights.push(a.clone());
            s_cls.push(*s);
        }
    }
    Ok((
        SemanticTokens {
            n,
            channels: c,
            data,
            weights,
        },
        s_cls,
    ))
}

/// Rows of `concat(iou_token, mask_token_j)`, `(n * 4) x 2 C_tok`.
pub fn par_inputs(dec: &DecodeResult) -> Vec<f64> {
    let c = dec.token_channels;
    let mut x = Vec::with_capacity(dec.len() * CANDIDATES * 2 * c);
    for i in 0..dec.len() {
        for j in 0..CANDIDATES {
            x.extend_from_slice(dec.iou_token_of(i));
            x.extend_from_slice(dec.mask_token(i, j));
        }
    }
    x
}

/// `par(concat(repeat4(U), M)) + native_iou`.
pub fn refine_iou(dec: &DecodeResult, par: &Mlp) -> Result<Vec<f64>> {
    Ok(refine_iou_cached(dec, par)?.2)
}

fn refine_iou_cached(dec: &DecodeResult, par: &Mlp) -> Result<(Vec<f64>, MlpCache, Vec<f64>)> {
    dec.validate()?;
    if par.inputs() != 2 * dec.token_channels || par.outputs() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "IoU head takes {} inputs, tokens give {}",
            par.inputs(),
            2 * dec.token_channels
        )));
    }
    let x = par_inputs(dec);
    let cache = par.forward_batch(&x);
    let s = cache
        .output
        .iter()
        .zip(&dec.native_iou)
        .map(|(p, n)| p + n)
        .collect();
    Ok((x, cache, s))
}

/// Elementwise `s_iou * s_cls`.
pub fn joint_score(s_iou: &[f64], s_cls: &[f64]) -> Result<Vec<f64>> {
    if s_iou.len() != s_cls.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} IoU scores vs {} class scores",
            s_iou.len(),
            s_cls.len()
        )));
    }
    Ok(s_iou.iter().zip(s_cls).map(|(a, b)| a * b).collect())
}

/// Everything the backward pass needs from a scoring forward pass.
#[derive(Debug, Clone)]
pub struct PwdForward {
    pub scores: JointScores,
    pub tokens: SemanticTokens,
    pub(crate) par_input: Vec<f64>,
    pub(crate) par_cache: MlpCache,
}

pub fn forward(dec: &DecodeResult, adapted: &FeatureMap, heads: &Heads) -> Result<PwdForward> {
    let (par_input, par_cache, s_iou) = refine_iou_cached(dec, &heads.par)?;
    let (tokens, s_cls) = semantic_score(dec, adapted, &heads.cls)?;
    let s = joint_score(&s_iou, &s_cls)?;
    Ok(PwdForward {
        scores: JointScores {
            n: dec.len(),
            s_iou,
            s_cls,
            s,
        },
        tokens,
        par_input,
        par_cache,
    })
}

/// Scores decoder output with trained heads over one image's adapted
/// semantic features.
#[derive(Debug, Clone, Copy)]
pub struct PwdScorer<'a> {
    pub heads: &'a Heads,
    pub adapted: &'a FeatureMap,
}

impl PwdScorer<'_> {
    pub fn score(&self, dec: &DecodeResult) -> Result<JointScores> {
        Ok(forward(dec, self.adapted, self.heads)?.scores)
    }
}

/// Regression targets: for a prompt inside ground-truth mask `k`, each
/// candidate's IoU with mask `k`; zero for background prompts.
///
/// `gt` must be at the candidates' resolution.
pub fn target_scores(
    masks: &[[Arc<SoftMask>; CANDIDATES]],
    gt: &[BitMask],
    labels: &[Option<usize>],
) -> Result<Vec<f64>> {
    if masks.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} candidate rows vs {} prompt labels",
            masks.len(),
            labels.len()
        )));
    }
    let mut binarized: HashMap<*const SoftMask, BitMask> = HashMap::new();
    let mut out = Vec::with_capacity(masks.len() * CANDIDATES);
    for (row, label) in masks.iter().zip(labels) {
        let Some(k) = *label else {
            out.extend([0.0; CANDIDATES]);
            continue;
        };
        let target = gt
            .get(k)
            .ok_or_else(|| Error::DimensionMismatch(format!("no ground-truth mask {k}")))?;
        for m in row {
            let b = binarized
                .entry(Arc::as_ptr(m))
                .or_insert_with(|| m.binarize());
            out.push(iou_masks(b, target)?);
        }
    }
    Ok(out)
}

/// Mean squared error over all entries.
pub fn iou_loss(s: &[f64], target: &[f64]) -> Result<f64> {
    if s.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores vs {} targets",
            s.len(),
            target.len()
        )));
    }
    if s.is_empty() {
        return Ok(0.0);
    }
    Ok(s.iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / s.len() as f64)
}

/// Row-wise argmax over the four candidates, ties to the lowest index.
pub fn select_best(s: &[f64]) -> Vec<(usize, f64)> {
    s.chunks_exact(CANDIDATES)
        .map(|row| {
            row.iter().enumerate().fold(
                (0, row[0]),
                |best, (j, &v)| if v > best.1 { (j, v) } else { best },
            )
        })
        .collect()
}
