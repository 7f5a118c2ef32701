//! Efficient prompt sampling under a decode budget.
//!
//! Prompts are drawn in random batches, decoded and scored; every prompt
//! whose best mask is confident enough marks that mask valid, and every
//! still-undrawn prompt lying inside a valid mask is dropped without ever
//! being decoded.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::backbone::{DecodeResult, FeatureMap, MaskDecoder, CANDIDATES};
use crate::error::{Error, Result};
use crate::geometry::{point_in_mask, BitMask, PointPrompt, SoftMask};
use crate::pwdnet::select_best;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsConfig {
    pub batch_size: usize,
    /// Maximum number of prompts decoded.
    pub budget: usize,
    /// A prompt's best mask is valid when its joint score exceeds this.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for EpsConfig {
    fn default() -> Self {
        EpsConfig {
            batch_size: 64,
            budget: 500,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl EpsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.budget < self.batch_size
            || !(0.0..=1.0).contains(&self.threshold)
        {
            return Err(Error::Config(format!(
                "sampler needs batch_size >= 1, budget >= batch_size and threshold in [0, 1], got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A decoded prompt with its chosen candidate.
#[derive(Debug, Clone)]
pub struct ScoredMask {
    pub prompt: PointPrompt,
    pub candidate: usize,
    /// Candidate logits at the decoder's native resolution.
    pub mask: Arc<SoftMask>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EpsIteration {
    pub iteration: usize,
    pub sampled: usize,
    pub decoded: usize,
    pub pruned: usize,
    pub valid: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EpsTrace {
    pub rows: Vec<EpsIteration>,
}

impl EpsTrace {
    pub fn total_decoded(&self) -> usize {
        self.rows.iter().map(|r| r.decoded).sum()
    }

    pub fn total_pruned(&self) -> usize {
        self.rows.iter().map(|r| r.pruned).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,sampled,decoded,pruned,valid\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.iteration, r.sampled, r.decoded, r.pruned, r.valid
            );
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct EpsOutput {
    /// Prompts drawn and decoded, in draw order.
    pub selected: Vec<PointPrompt>,
    /// Valid masks, in draw order.
    pub masks: Vec<ScoredMask>,
    /// Best candidate of every decoded prompt, valid or not.
    pub decoded: Vec<ScoredMask>,
    /// Prompts removed without decoding, with the index into `masks` of a
    /// valid mask containing each.
    pub pruned: Vec<(PointPrompt, usize)>,
    pub trace: EpsTrace,
}

/// Runs the sampler over `prompts` (image coordinates). `scorer` returns the
/// `n x 4` joint scores of a decoded batch.
pub fn eps_sample(
    embedding: &FeatureMap,
    prompts: &[PointPrompt],
    scorer: &mut dyn FnMut(&DecodeResult) -> Result<Vec<f64>>,
    decoder: &dyn MaskDecoder,
    image_w: usize,
    image_h: usize,
    cfg: &EpsConfig,
) -> Result<EpsOutput> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, 0xE95);
    let mut pool: Vec<PointPrompt> = prompts.to_vec();
    let mut out = EpsOutput::default();
    let mut iteration = 0;
    while !pool.is_empty() && out.selected.len() < cfg.budget {
        let wrap = |source: Error| Error::Sampler {
            iteration,
            source: Box::new(source),
        };
        let take = cfg
            .batch_size
            .min(cfg.budget - out.selected.len())
            .min(pool.len());
        let mut picked = sample(&mut rng, pool.len(), take).into_vec();
        let batch: Vec<PointPrompt> = picked.iter().map(|&i| pool[i]).collect();
        picked.sort_unstable_by(|a, b| b.cmp(a));
        for i in picked {
            pool.swap_remove(i);
        }

        let dec = decoder.decode_prompts(embedding, &batch).map_err(wrap)?;
        let scores = scorer(&dec).map_err(wrap)?;
        if scores.len() != batch.len() * CANDIDATES {
            return Err(wrap(Error::DimensionMismatch(format!(
                "scorer returned {} values for {} prompts",
                scores.len(),
                batch.len()
            ))));
        }
        let first_valid = out.masks.len();
        for (i, (candidate, score)) in select_best(&scores).into_iter().enumerate() {
            let sm = ScoredMask {
                prompt: batch[i],
                candidate,
                mask: dec.masks[i][candidate].clone(),
                score,
            };
            if score > cfg.threshold {
                out.masks.push(sm.clone());
            }
            out.decoded.push(sm);
        }
        out.selected.extend_from_slice(&batch);

        let before = pool.len();
        if out.masks.len() > first_valid {
            let mut seen = HashSet::new();
            let covers: Vec<(BitMask, usize)> = out
                .masks
                .iter()
                .enumerate()
                .skip(first_valid)
                .filter(|(_, sm)| seen.insert(Arc::as_ptr(&sm.mask)))
                .map(|(k, sm)| (sm.mask.binarize(), k))
                .collect();
            let mut kept = Vec::with_capacity(pool.len());
            for p in pool.drain(..) {
                let mut hit = None;
                for (m, k) in &covers {
                    if point_in_mask(&to_mask_coords(&p, m, image_w, image_h), m).map_err(wrap)? {
                        hit = Some(*k);
                        break;
                    }
                }
                match hit {
                    Some(k) => out.pruned.push((p, k)),
                    None => kept.push(p),
                }
            }
            pool = kept;
        }
        out.trace.rows.push(EpsIteration {
            iteration,
            sampled: take,
            decoded: take,
            pruned: before - pool.len(),
            valid: out.masks.len() - first_valid,
        });
        iteration += 1;
    }
    Ok(out)
}

fn to_mask_coords(p: &PointPrompt, m: &BitMask, image_w: usize, image_h: usize) -> PointPrompt {
    PointPrompt {
        x: p.x * m.width() as f64 / image_w as f64,
        y: p.y * m.height() as f64 / image_h as f64,
        ..*p
    }
}

/// Baseline that decodes every prompt.
pub fn full_sampler(prompts: &[PointPrompt]) -> Vec<PointPrompt> {
    prompts.to_vec()
}

/// Uniform subset of `min(k, n)` prompts without replacement, in input order.
pub fn random_sampler(prompts: &[PointPrompt], k: usize, seed: u64) -> Vec<PointPrompt> {
    if k >= prompts.len() {
        return prompts.to_vec();
    }
    let mut rng = rng_for(seed, 0x7A4D);
    let mut idx = sample(&mut rng, prompts.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| prompts[i]).collect()
}
