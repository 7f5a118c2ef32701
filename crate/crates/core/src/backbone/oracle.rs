//! Deterministic backend for rendered synthetic scenes.
//!
//! The image embedding is the per-pixel object label plane recovered from
//! the rendered colours. For a prompt on object `k` the decoder returns
//! `[whole visible mask, top half, bottom half, 1.2x dilation]`; for a
//! background prompt it returns four background-only blobs of growing
//! radius around the point. Tokens are a fixed seeded linear map of
//! `(candidate IoU, foreground flag, part flag, over-segmentation flag,
//! object code)` plus small noise, and the native IoU head reports the true
//! best-match IoU corrupted by seeded Gaussian noise.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    Backbones, BackendCaps, DecodeResult, FeatureMap, ImageEncoder, MaskDecoder, SemanticEncoder,
    CANDIDATES,
};
use crate::error::{Error, Result};
use crate::geometry::{iou_boxes, raster_cell, BitMask, BoxXYXY, PointPrompt, SoftMask};
use crate::image::RgbImage;
use crate::rng::{hash_normal, hash_unit, hash_words, rng_for};
use crate::scene::decode_labels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub seed: u64,
    pub patch_size: usize,
    pub feature_channels: usize,
    pub token_channels: usize,
    pub mask_stride: usize,
    /// Standard deviation of the noise on the native IoU predictions.
    pub native_iou_noise: f64,
    /// Magnitude of the emitted mask logits.
    pub mask_logit: f32,
    /// Overall scale of the semantic features.
    pub feature_scale: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            seed: 0,
            patch_size: 8,
            feature_channels: 32,
            token_channels: 16,
            mask_stride: 2,
            native_iou_noise: 0.05,
            mask_logit: 8.0,
            feature_scale: 4.0,
        }
    }
}

/// Distinct labels of the image pixels falling in each native mask cell.
struct NativeCells {
    width: usize,
    height: usize,
    /// Slots per cell.
    k: usize,
    labels: Vec<u8>,
    len: Vec<u8>,
}

impl NativeCells {
    fn cell_at(&self, i: usize) -> &[u8] {
        &self.labels[i * self.k..i * self.k + self.len[i] as usize]
    }

    fn cell(&self, x: usize, y: usize) -> &[u8] {
        self.cell_at(y * self.width + x)
    }

    fn has(&self, x: usize, y: usize, label: u8) -> bool {
        self.cell(x, y).contains(&label)
    }

    fn background(&self, x: usize, y: usize) -> bool {
        self.cell(x, y) == [0]
    }
}

/// Width of the latent vector the token mixing matrices act on.
const MASK_LATENT: usize = 7;
const IOU_LATENT: usize = 4;
const TOKEN_NOISE: f64 = 0.05;

/// Half-open `(x0, x1, y0, y1)` window of a native-resolution raster.
type Region = (usize, usize, usize, usize);

#[derive(Debug, Clone)]
pub struct OracleBackend {
    cfg: OracleConfig,
    fg_dir: Vec<f64>,
    bg_dir: Vec<f64>,
    mask_mix: Vec<f64>,
    iou_mix: Vec<f64>,
}

impl OracleBackend {
    pub fn new(cfg: OracleConfig) -> Result<Self> {
        if cfg.patch_size == 0
            || cfg.feature_channels == 0
            || cfg.token_channels == 0
            || cfg.mask_stride == 0
        {
            return Err(Error::Config(
                "oracle shape parameters must be positive".into(),
            ));
        }
        let mut rng = rng_for(cfg.seed, 0x0AC1E);
        let mut normals =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let c = cfg.feature_channels;
        let fg_dir = normals(c);
        let bg_dir = normals(c);
        let mask_mix = normals(cfg.token_channels * MASK_LATENT);
        let iou_mix = normals(cfg.token_channels * IOU_LATENT);
        Ok(OracleBackend {
            cfg,
            fg_dir,
            bg_dir,
            mask_mix,
            iou_mix,
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    fn object_code(&self, label: u8) -> [f64; 2] {
        if label == 0 {
            return [0.0, 0.0];
        }
        let k = hash_words(&[self.cfg.seed, label as u64, 0x0B]);
        [2.0 * hash_unit(k) - 1.0, 2.0 * hash_unit(k ^ 0x55) - 1.0]
    }

    /// Labels present in each native cell. A cell holds every label of the
    /// image pixels that map into it, so thin visible slivers survive the
    /// coarser resolution.
    fn native_cells(&self, emb: &FeatureMap) -> NativeCells {
        let (w, h) = (emb.width, emb.height);
        let s = self.cfg.mask_stride;
        let (nw, nh) = (w.div_ceil(s), h.div_ceil(s));
        let k = s * s;
        let mut labels = vec![0u8; nw * nh * k];
        let mut len = vec![0u8; nw * nh];
        for y in 0..h {
            let cy = y * nh / h;
            for x in 0..w {
                let cell = cy * nw + x * nw / w;
                let l = emb.data[y * w + x] as u8;
                let slots = &mut labels[cell * k..cell * k + len[cell] as usize + 1];
                if !slots[..slots.len() - 1].contains(&l) {
                    slots[slots.len() - 1] = l;
                    len[cell] += 1;
                }
            }
        }
        NativeCells {
            width: nw,
            height: nh,
            k,
            labels,
            len,
        }
    }

    /// Candidate logits, negative everywhere outside `region`, positive
    /// where `inside` holds within it.
    fn logits(
        &self,
        nw: usize,
        nh: usize,
        region: Region,
        mut inside: impl FnMut(usize, usize) -> bool,
    ) -> SoftMask {
        let l = self.cfg.mask_logit;
        let mut data = vec![-l; nw * nh];
        let (x0, x1, y0, y1) = region;
        for y in y0..y1 {
            for x in x0..x1 {
                if inside(x, y) {
                    data[y * nw + x] = l;
                }
            }
        }
        SoftMask {
            width: nw,
            height: nh,
            data,
            is_logit: true,
        }
    }

    /// Candidates for an object prompt and the region they all lie in.
    fn object_candidates(
        &self,
        cells: &NativeCells,
        label: u8,
    ) -> ([SoftMask; CANDIDATES], Region) {
        let (nw, nh) = (cells.width, cells.height);
        let (mut bx0, mut bx1, mut by0, mut by1) = (nw, 0, nh, 0);
        for y in 0..nh {
            for x in 0..nw {
                if cells.has(x, y, label) {
                    bx0 = bx0.min(x);
                    bx1 = bx1.max(x + 1);
                    by0 = by0.min(y);
                    by1 = by1.max(y + 1);
                }
            }
        }
        if bx0 >= bx1 {
            let e = || self.logits(nw, nh, (0, 0, 0, 0), |_, _| false);
            return ([e(), e(), e(), e()], (0, 0, 0, 0));
        }
        let tight = (bx0, bx1, by0, by1);
        let is = |x: usize, y: usize| cells.has(x, y, label);
        let mid = (by0 + (by1 - by0) / 2).max(by0 + 1);
        let whole = self.logits(nw, nh, tight, is);
        let top = self.logits(nw, nh, tight, |x, y| y < mid && is(x, y));
        let bottom = self.logits(nw, nh, tight, |x, y| y >= mid && is(x, y));
        let (cx, cy) = (0.5 * (bx0 + bx1) as f64, 0.5 * (by0 + by1) as f64);
        let f = 1.2;
        let gx1 = (cx - (cx - bx0 as f64) * f).floor().max(0.0) as usize;
        let gx2 = ((cx + (bx1 as f64 - cx) * f).ceil() as usize).min(nw);
        let gy1 = (cy - (cy - by0 as f64) * f).floor().max(0.0) as usize;
        let gy2 = ((cy + (by1 as f64 - cy) * f).ceil() as usize).min(nh);
        let grown = (gx1.min(bx0), gx2.max(bx1), gy1.min(by0), gy2.max(by1));
        let dilated = self.logits(nw, nh, grown, |x, y| {
            let sx = cx + (x as f64 + 0.5 - cx) / f;
            let sy = cy + (y as f64 + 0.5 - cy) / f;
            is(x, y)
                || (sx >= 0.0
                    && sy >= 0.0
                    && (sx as usize) < nw
                    && (sy as usize) < nh
                    && is(sx as usize, sy as usize))
        });
        ([whole, top, bottom, dilated], grown)
    }

    fn background_candidates(
        &self,
        cells: &NativeCells,
        px: f64,
        py: f64,
    ) -> ([SoftMask; CANDIDATES], Region) {
        let (nw, nh) = (cells.width, cells.height);
        let base = (nw.max(nh) as f64 / 128.0).max(1.5);
        let window = |r: f64| {
            (
                (px - r).floor().max(0.0) as usize,
                ((px + r).ceil() as usize).min(nw),
                (py - r).floor().max(0.0) as usize,
                ((py + r).ceil() as usize).min(nh),
            )
        };
        let masks = [1.0, 1.5, 2.0, 3.0].map(|k| {
            let r = base * k;
            self.logits(nw, nh, window(r), |x, y| {
                let dx = x as f64 + 0.5 - px;
                let dy = y as f64 + 0.5 - py;
                dx * dx + dy * dy <= r * r && cells.background(x, y)
            })
        });
        (masks, window(base * 3.0))
    }

    /// Best IoU of `m` against any visible object; `m` is negative outside
    /// `region`.
    fn best_iou(m: &SoftMask, cells: &NativeCells, areas: &[usize; 256], region: Region) -> f64 {
        let (x0, x1, y0, y1) = region;
        let w = m.width;
        let mut inter = [0usize; 256];
        let mut size = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                if m.data[y * w + x] > 0.0 {
                    size += 1;
                    for &l in cells.cell(x, y) {
                        inter[l as usize] += 1;
                    }
                }
            }
        }
        (1..256)
            .filter(|&l| areas[l] > 0)
            .map(|l| inter[l] as f64 / (size + areas[l] - inter[l]) as f64)
            .fold(0.0, f64::max)
    }

    fn mix(&self, matrix: &[f64], latent: &[f64], key: u64, out: &mut Vec<f64>) {
        let n = latent.len();
        for c in 0..self.cfg.token_channels {
            let row = &matrix[c * n..(c + 1) * n];
            let v: f64 = row.iter().zip(latent).map(|(a, b)| a * b).sum();
            out.push(v + TOKEN_NOISE * hash_normal(hash_words(&[key, c as u64])));
        }
    }
}

impl ImageEncoder for OracleBackend {
    fn encode_image(&self, image: &RgbImage) -> Result<FeatureMap> {
        let labels = decode_labels(image);
        FeatureMap::new(
            image.height(),
            image.width(),
            1,
            labels.into_iter().map(f64::from).collect(),
        )
    }
}

impl SemanticEncoder for OracleBackend {
    fn extract_semantic_features(&self, image: &RgbImage) -> Result<FeatureMap> {
        let labels = decode_labels(image);
        let (w, h) = (image.width(), image.height());
        let s = self.cfg.patch_size;
        let (gw, gh) = (w.div_ceil(s), h.div_ceil(s));
        let c = self.cfg.feature_channels;
        let mut data = Vec::with_capacity(gw * gh * c);
        let raw = image.as_raw();
        for gy in 0..gh {
            for gx in 0..gw {
                let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
                let mut total = 0usize;
                let mut content = hash_words(&[self.cfg.seed, 0xFEA7]);
                for y in gy * s..((gy + 1) * s).min(h) {
                    for x in gx * s..((gx + 1) * s).min(w) {
                        *counts.entry(labels[y * w + x]).or_default() += 1;
                        total += 1;
                        let i = (y * w + x) * 3;
                        content = hash_words(&[
                            content,
                            u64::from(raw[i]) << 16
                                | u64::from(raw[i + 1]) << 8
                                | u64::from(raw[i + 2]),
                        ]);
                    }
                }
                let bg = counts.get(&0).copied().unwrap_or(0);
                let fg_frac = (total - bg) as f64 / total as f64;
                let dominant = counts
                    .iter()
                    .filter(|(&l, _)| l != 0)
                    .max_by_key(|(&l, &n)| (n, std::cmp::Reverse(l)))
                    .map(|(&l, _)| l)
                    .unwrap_or(0);
                let code = self.object_code(dominant);
                for ch in 0..c {
                    let obj = code[0] * hash_normal(hash_words(&[self.cfg.seed, ch as u64, 0x0B1]))
                        + code[1] * hash_normal(hash_words(&[self.cfg.seed, ch as u64, 0x0B2]));
                    let noise = hash_normal(hash_words(&[content, ch as u64]));
                    let v = fg_frac * self.fg_dir[ch]
                        + (1.0 - fg_frac) * self.bg_dir[ch]
                        + 0.4 * fg_frac * obj
                        + 0.25 * noise;
                    data.push(self.cfg.feature_scale * v);
                }
            }
        }
        FeatureMap::new(gh, gw, c, data)
    }
}

impl MaskDecoder for OracleBackend {
    fn decode_prompts(&self, emb: &FeatureMap, prompts: &[PointPrompt]) -> Result<DecodeResult> {
        if emb.channels != 1 {
            return Err(Error::DimensionMismatch(
                "oracle embedding must be a label plane".into(),
            ));
        }
        let cells = self.native_cells(emb);
        let mut areas = [0usize; 256];
        for i in 0..cells.width * cells.height {
            for &l in cells.cell_at(i) {
                areas[l as usize] += 1;
            }
        }
        let s = self.cfg.mask_stride as f64;
        let mut per_object: BTreeMap<u8, ([Arc<SoftMask>; CANDIDATES], [f64; CANDIDATES])> =
            BTreeMap::new();
        let c = self.cfg.token_channels;
        let mut out = DecodeResult {
            masks: Vec::with_capacity(prompts.len()),
            mask_tokens: Vec::with_capacity(prompts.len() * CANDIDATES * c),
            iou_token: Vec::with_capacity(prompts.len() * c),
            native_iou: Vec::with_capacity(prompts.len() * CANDIDATES),
            token_channels: c,
        };
        for p in prompts {
            let (ix, iy) = raster_cell(p.x, p.y, emb.width, emb.height)?;
            let label = emb.data[iy * emb.width + ix] as u8;
            let (masks, ious) = if label != 0 {
                per_object
                    .entry(label)
                    .or_insert_with(|| {
                        let (cands, region) = self.object_candidates(&cells, label);
                        let ious =
                            [0, 1, 2, 3].map(|j| Self::best_iou(&cands[j], &cells, &areas, region));
                        (cands.map(Arc::new), ious)
                    })
                    .clone()
            } else {
                let (cands, region) = self.background_candidates(&cells, p.x / s, p.y / s);
                let ious = [0, 1, 2, 3].map(|j| Self::best_iou(&cands[j], &cells, &areas, region));
                (cands.map(Arc::new), ious)
            };
            let fg = f64::from(u8::from(label != 0));
            let code = self.object_code(label);
            let key = hash_words(&[self.cfg.seed, p.x.to_bits(), p.y.to_bits()]);
            for (j, &iou) in ious.iter().enumerate() {
                let part = f64::from(u8::from(label != 0 && (j == 1 || j == 2)));
                let over = f64::from(u8::from(label != 0 && j == 3));
                let latent = [iou, fg, part, over, 1.0, code[0], code[1]];
                self.mix(
                    &self.mask_mix,
                    &latent,
                    hash_words(&[key, j as u64, 0x70]),
                    &mut out.mask_tokens,
                );
                let noisy = iou
                    + self.cfg.native_iou_noise * hash_normal(hash_words(&[key, j as u64, 0x10]));
                out.native_iou.push(noisy.clamp(0.0, 1.0));
            }
            self.mix(
                &self.iou_mix,
                &[fg, 1.0, code[0], code[1]],
                hash_words(&[key, 0x71]),
                &mut out.iou_token,
            );
            out.masks.push(masks);
        }
        Ok(out)
    }

    fn decode_box_prompt(&self, emb: &FeatureMap, bbox: &BoxXYXY) -> Result<BitMask> {
        if bbox.area() <= 0.0 {
            return Err(Error::InvalidBox(format!("degenerate box prompt {bbox:?}")));
        }
        let (w, h) = (emb.width, emb.height);
        // Each visible object is scored by how well its tight box matches the
        // prompt, times how much of the box region its pixels explain. The
        // box term is sharpened so it dominates; coverage separates an
        // occluded object from the one in front when their boxes nearly
        // coincide.
        let mut inside = [0usize; 256];
        let mut area = [0usize; 256];
        let mut lo = [(usize::MAX, usize::MAX); 256];
        let mut hi = [(0usize, 0usize); 256];
        let mut box_px = 0usize;
        for y in 0..h {
            for x in 0..w {
                let l = emb.data[y * w + x] as usize;
                let hit = bbox.contains_point(x as f64 + 0.5, y as f64 + 0.5);
                box_px += usize::from(hit);
                area[l] += 1;
                lo[l] = (lo[l].0.min(x), lo[l].1.min(y));
                hi[l] = (hi[l].0.max(x + 1), hi[l].1.max(y + 1));
                if hit {
                    inside[l] += 1;
                }
            }
        }
        let mut best: Option<(f64, usize)> = None;
        for l in 1..256 {
            if inside[l] == 0 {
                continue;
            }
            let tight = BoxXYXY {
                x1: lo[l].0 as f64,
                y1: lo[l].1 as f64,
                x2: hi[l].0 as f64,
                y2: hi[l].1 as f64,
            };
            let fill = inside[l] as f64 / (box_px + area[l] - inside[l]) as f64;
            let score = iou_boxes(&tight, bbox).powi(8) * fill;
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, l));
            }
        }
        Ok(match best {
            Some((_, l)) => BitMask::from_fn(w, h, |x, y| emb.data[y * w + x] as usize == l),
            None => BitMask::new(w, h),
        })
    }
}

impl Backbones for OracleBackend {
    fn caps(&self) -> BackendCaps {
        BackendCaps {
            patch_size: self.cfg.patch_size,
            feature_channels: self.cfg.feature_channels,
            token_channels: self.cfg.token_channels,
            mask_stride: self.cfg.mask_stride,
            embed_stride: 1,
            embed_channels: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{iou_masks, mask_to_box, ResizeMode};
    use crate::scene::{render, SceneParams};

    fn exact() -> OracleBackend {
        OracleBackend::new(OracleConfig {
            mask_stride: 1,
            ..Default::default()
        })
        .unwrap()
    }

    fn inner_point(m: &BitMask) -> PointPrompt {
        // pixel closest to the box centre that lies in the mask
        let b = mask_to_box(m).unwrap();
        let (cx, cy) = (0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2));
        let mut best = (f64::MAX, 0, 0);
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.get(x, y) {
                    let d = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                    if d < best.0 {
                        best = (d, x, y);
                    }
                }
            }
        }
        PointPrompt::new(best.1 as f64 + 0.5, best.2 as f64 + 0.5)
    }

    #[test]
    fn encoders_are_deterministic_and_scene_specific() {
        let be = OracleBackend::new(OracleConfig::default()).unwrap();
        let params = SceneParams::desk_crowd();
        let (s1, _) = params.generate(1).unwrap();
        let (s2, _) = params.generate(2).unwrap();
        let (i1, i2) = (render(&s1), render(&s2));
        assert_eq!(be.encode_image(&i1).unwrap(), be.encode_image(&i1).unwrap());
        let f1 = be.extract_semantic_features(&i1).unwrap();
        assert_eq!(f1, be.extract_semantic_features(&i1).unwrap());
        assert_ne!(f1, be.extract_semantic_features(&i2).unwrap());
        assert_ne!(be.encode_image(&i1).unwrap(), be.encode_image(&i2).unwrap());
        let caps = be.caps();
        assert_eq!((f1.width, f1.height), caps.feature_dims(256, 256));
        assert_eq!(f1.channels, caps.feature_channels);
        let emb = be.encode_image(&i1).unwrap();
        assert_eq!((emb.width, emb.height), caps.embed_dims(256, 256));
        assert_eq!(emb.channels, caps.embed_channels);
        let d = be
            .decode_prompts(&emb, &[PointPrompt::new(10.0, 10.0)])
            .unwrap();
        assert_eq!(
            (d.masks[0][0].width, d.masks[0][0].height),
            caps.mask_dims(256, 256)
        );
        assert_eq!(d.token_channels, caps.token_channels);
    }

    #[test]
    fn whole_candidate_is_exact_visible_mask() {
        let be = exact();
        let (scene, gt) = SceneParams::desk_crowd().generate(5).unwrap();
        let emb = be.encode_image(&render(&scene)).unwrap();
        let prompts: Vec<_> = gt.visible_masks.iter().map(inner_point).collect();
        let d = be.decode_prompts(&emb, &prompts).unwrap();
        d.validate().unwrap();
        assert_eq!(d.len(), prompts.len());
        assert_eq!(d.mask_tokens.len(), prompts.len() * 4 * 16);
        assert_eq!(d.iou_token.len(), prompts.len() * 16);
        assert_eq!(d.native_iou.len(), prompts.len() * 4);
        for (k, m) in gt.visible_masks.iter().enumerate() {
            assert_eq!(&d.masks[k][0].binarize(), m);
            assert_eq!(iou_masks(&d.masks[k][0].binarize(), m).unwrap(), 1.0);
        }
        // top half of a fully visible object is about half of it
        if let Some(k) = gt.visibility.iter().position(|&v| v == 1.0) {
            let iou = iou_masks(&d.masks[k][1].binarize(), &gt.visible_masks[k]).unwrap();
            assert!((iou - 0.5).abs() < 0.08, "{iou}");
        }
    }

    #[test]
    fn background_prompts_miss_every_object() {
        let be = OracleBackend::new(OracleConfig::default()).unwrap();
        let params = SceneParams::desk_crowd();
        for seed in 0..3 {
            let (scene, gt) = params.generate(seed).unwrap();
            let emb = be.encode_image(&render(&scene)).unwrap();
            let union = gt.union_mask(256, 256);
            let prompts: Vec<_> = (0..256)
                .step_by(9)
                .flat_map(|y| (0..256).step_by(9).map(move |x| (x, y)))
                .filter(|&(x, y)| !union.get(x, y))
                .map(|(x, y)| PointPrompt::new(x as f64 + 0.5, y as f64 + 0.5))
                .collect();
            let d = be.decode_prompts(&emb, &prompts).unwrap();
            for cands in &d.masks {
                for c in cands {
                    let up =
                        crate::geometry::resize_mask(c, 256, 256, ResizeMode::Nearest).binarize();
                    for m in &gt.visible_masks {
                        assert!(iou_masks(&up, m).unwrap() < 0.1);
                    }
                }
            }
        }
    }

    #[test]
    fn out_of_canvas_prompt_rejected() {
        let be = exact();
        let emb = be.encode_image(&RgbImage::new(32, 32)).unwrap();
        assert!(matches!(
            be.decode_prompts(&emb, &[PointPrompt::new(32.0, 3.0)]),
            Err(Error::PointOutOfCanvas { .. })
        ));
    }

    #[test]
    fn box_prompts() {
        let be = exact();
        for seed in 8..14 {
            let (scene, gt) = SceneParams::desk_crowd().generate(seed).unwrap();
            let emb = be.encode_image(&render(&scene)).unwrap();
            for (k, b) in gt.visible_boxes.iter().enumerate() {
                let exact = be.decode_box_prompt(&emb, b).unwrap();
                assert!(
                    exact == gt.visible_masks[k],
                    "object {k} vis {} fill {}",
                    gt.visibility[k],
                    gt.visible_masks[k].count() as f64 / b.area()
                );
                let jitter = BoxXYXY {
                    x1: b.x1 - 0.05 * b.width(),
                    y1: b.y1 + 0.05 * b.height(),
                    x2: b.x2 + 0.05 * b.width(),
                    y2: b.y2 - 0.05 * b.height(),
                };
                let m = be.decode_box_prompt(&emb, &jitter).unwrap();
                let iou = iou_masks(&m, &gt.visible_masks[k]).unwrap();
                assert!(iou >= 0.9, "object {k}: {iou} box {b:?}");
            }
        }
        let blank = be.encode_image(&RgbImage::new(32, 32)).unwrap();
        let b = BoxXYXY::new(2.0, 2.0, 10.0, 10.0).unwrap();
        assert!(be.decode_box_prompt(&blank, &b).unwrap().is_empty());
        let flat = BoxXYXY::new(2.0, 2.0, 2.0, 10.0).unwrap();
        assert!(be.decode_box_prompt(&blank, &flat).is_err());
    }
}
