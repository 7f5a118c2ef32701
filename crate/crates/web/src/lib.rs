//! Browser demo: generate a synthetic crowd, train the heads for a few
//! hundred steps and watch the heatmap, then compare the pruning sampler
//! against random sampling at the same decode budget.

use std::collections::HashSet;
use std::sync::Arc;

use denseprompt::backbone::{
    Backbones, DecodeResult, FeatureMap, ImageEncoder, MaskDecoder, OracleBackend, OracleConfig,
    SemanticEncoder,
};
use denseprompt::eps::{eps_sample, random_sampler, EpsConfig};
use denseprompt::eval::match_detections;
use denseprompt::geometry::{mask_to_box, BitMask, BoxXYXY, PointPrompt, SoftMask};
use denseprompt::image::RgbImage;
use denseprompt::model::Heads;
use denseprompt::prompt::{compute_heatmap, extract_prompts, grid_points, sample_heat};
use denseprompt::pwdnet::{select_best, PwdScorer};
use denseprompt::scene::{render, GroundTruth, SceneParams};
use denseprompt::trainer::{prepare, train_prepared, LabeledImage, PreparedImage, TrainConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Seeds of the few-shot training scenes, disjoint from anything a user
/// is likely to type.
const TRAIN_SEEDS: [u64; 3] = [910_000, 910_001, 910_002];

fn js(e: denseprompt::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

struct Scene {
    image: RgbImage,
    gt: GroundTruth,
}

/// Precomputed per-scene inputs for sampling.
struct Inputs {
    embedding: FeatureMap,
    adapted: Option<FeatureMap>,
    heat: Option<SoftMask>,
}

struct SamplerView {
    decoded: Vec<PointPrompt>,
    pruned: Vec<PointPrompt>,
    undrawn: Vec<PointPrompt>,
    valid: Vec<Arc<SoftMask>>,
}

#[derive(Serialize)]
struct SamplerSummary {
    scorer: &'static str,
    pool: usize,
    decoded: usize,
    pruned: usize,
    valid_masks: usize,
    objects: usize,
    eps_recall: f64,
    random_recall: f64,
}

#[wasm_bindgen]
pub struct Demo {
    backend: OracleBackend,
    scene: Option<Scene>,
    heads: Heads,
    steps: usize,
    train_data: Vec<PreparedImage>,
    view: Option<SamplerView>,
}

impl Default for Demo {
    fn default() -> Self {
        Self::new()
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        let backend = OracleBackend::new(OracleConfig::default()).expect("default oracle is valid");
        let heads = Heads::for_caps(&backend.caps(), 0);
        Demo {
            backend,
            scene: None,
            heads,
            steps: 0,
            train_data: Vec::new(),
            view: None,
        }
    }

    /// A 256x256 crowd.
    pub fn generate(&mut self, seed: u32, n_objects: u32, overlap: f64) -> Result<(), JsValue> {
        let params = SceneParams {
            n_objects: n_objects as usize,
            overlap_level: overlap,
            ..SceneParams::desk_crowd()
        };
        let (spec, gt) = params.generate(seed as u64).map_err(js)?;
        self.scene = Some(Scene {
            image: render(&spec),
            gt,
        });
        self.view = None;
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.scene.as_ref().map_or(0, |s| s.image.width() as u32)
    }

    pub fn height(&self) -> u32 {
        self.scene.as_ref().map_or(0, |s| s.image.height() as u32)
    }

    pub fn trained_steps(&self) -> u32 {
        self.steps as u32
    }

    pub fn objects(&self) -> u32 {
        self.scene.as_ref().map_or(0, |s| s.gt.len() as u32)
    }

    /// Scene pixels as RGBA for `ImageData`.
    pub fn scene_rgba(&self) -> Vec<u8> {
        self.scene
            .as_ref()
            .map(|s| rgba(&s.image))
            .unwrap_or_default()
    }

    /// Continues training on the fixed few-shot scenes; returns the mean
    /// loss over the steps just run.
    pub fn train(&mut self, iterations: u32) -> Result<f64, JsValue> {
        if self.train_data.is_empty() {
            let params = SceneParams::desk_crowd();
            for seed in TRAIN_SEEDS {
                let (spec, gt) = params.generate(seed).map_err(js)?;
                let img = LabeledImage {
                    image: render(&spec),
                    boxes: gt.visible_boxes,
                };
                self.train_data
                    .push(prepare(&self.backend, &img).map_err(js)?);
            }
        }
        let cfg = TrainConfig {
            iterations: iterations as usize,
            seed: self.steps as u64,
            ..Default::default()
        };
        let out = train_prepared(&self.backend, &self.train_data, &cfg, self.heads.clone())
            .map_err(js)?;
        self.heads = out.heads;
        self.steps += iterations as usize;
        self.view = None;
        let n = out.log.len().max(1) as f64;
        Ok(out.log.iter().map(|r| r.l).sum::<f64>() / n)
    }

    /// The scene with the foreground heatmap blended in red.
    pub fn heatmap_rgba(&self) -> Result<Vec<u8>, JsValue> {
        let Some(s) = &self.scene else {
            return Ok(Vec::new());
        };
        let raw = self
            .backend
            .extract_semantic_features(&s.image)
            .map_err(js)?;
        let heat = compute_heatmap(&raw, &self.heads).map_err(js)?;
        let (w, h) = (s.image.width(), s.image.height());
        let mut out = dimmed(&s.image);
        for y in 0..h {
            for x in 0..w {
                let v = sample_heat(&heat, w, h, x as f64 + 0.5, y as f64 + 0.5).clamp(0.0, 1.0);
                let p = out.pixel(x, y);
                out.put_pixel(
                    x,
                    y,
                    [
                        (p[0] as f64 * (1.0 - v) + 255.0 * v) as u8,
                        (p[1] as f64 * (1.0 - v)) as u8,
                        (p[2] as f64 * (1.0 - v)) as u8,
                    ],
                );
            }
        }
        Ok(rgba(&out))
    }

    /// Runs the pruning sampler and a random baseline with the same budget;
    /// returns a JSON summary. Until the heads are trained the pool is the
    /// full grid and masks are ranked by the decoder's own IoU estimate.
    pub fn run_sampler(&mut self, grid: u32, budget: u32, batch: u32) -> Result<String, JsValue> {
        let Some(s) = &self.scene else {
            return Err(JsValue::from_str("generate a scene first"));
        };
        let (w, h) = (s.image.width(), s.image.height());
        let inputs = self.inputs(s).map_err(js)?;
        let grid = grid.max(1) as usize;
        let pool = match &inputs.heat {
            Some(heat) => extract_prompts(heat, w, h, grid, 0.5),
            None => grid_points(w, h, grid),
        };
        let heads = &self.heads;
        let score = |dec: &DecodeResult| -> denseprompt::Result<Vec<f64>> {
            match &inputs.adapted {
                Some(a) => Ok(PwdScorer { heads, adapted: a }.score(dec)?.s),
                None => Ok(dec.native_iou.clone()),
            }
        };
        let budget = (budget as usize).max(1);
        let cfg = EpsConfig {
            batch_size: (batch as usize).clamp(1, budget),
            budget,
            ..Default::default()
        };
        let out = eps_sample(
            &inputs.embedding,
            &pool,
            &mut |d| score(d),
            &self.backend,
            w,
            h,
            &cfg,
        )
        .map_err(js)?;
        let eps_masks: Vec<Arc<SoftMask>> = out.decoded.iter().map(|m| m.mask.clone()).collect();

        let picked = random_sampler(&pool, budget, cfg.seed);
        let dec = self
            .backend
            .decode_prompts(&inputs.embedding, &picked)
            .map_err(js)?;
        let s_rand = score(&dec).map_err(js)?;
        let rand_masks: Vec<Arc<SoftMask>> = select_best(&s_rand)
            .into_iter()
            .enumerate()
            .map(|(i, (j, _))| dec.masks[i][j].clone())
            .collect();

        let summary = SamplerSummary {
            scorer: if inputs.adapted.is_some() {
                "trained heads"
            } else {
                "decoder IoU"
            },
            pool: pool.len(),
            decoded: out.selected.len(),
            pruned: out.pruned.len(),
            valid_masks: distinct(out.masks.iter().map(|m| &m.mask)).len(),
            objects: s.gt.len(),
            eps_recall: coverage(&eps_masks, w, h, &s.gt),
            random_recall: coverage(&rand_masks, w, h, &s.gt),
        };
        let drawn: HashSet<usize> = out
            .selected
            .iter()
            .chain(out.pruned.iter().map(|(p, _)| p))
            .map(|p| p.grid_index)
            .collect();
        self.view = Some(SamplerView {
            undrawn: pool
                .iter()
                .filter(|p| !drawn.contains(&p.grid_index))
                .copied()
                .collect(),
            decoded: out.selected,
            pruned: out.pruned.into_iter().map(|(p, _)| p).collect(),
            valid: distinct(out.masks.iter().map(|m| &m.mask)),
        });
        Ok(serde_json::to_string(&summary).expect("summary serializes"))
    }

    /// The last sampler run: valid masks tinted, decoded prompts green,
    /// pruned prompts red, prompts never reached grey.
    pub fn sampler_rgba(&self) -> Vec<u8> {
        let (Some(s), Some(v)) = (&self.scene, &self.view) else {
            return Vec::new();
        };
        let (w, h) = (s.image.width(), s.image.height());
        let mut out = dimmed(&s.image);
        for (k, m) in v.valid.iter().enumerate() {
            let full = m.binarize().resize_nearest(w, h);
            let c = tint(k);
            for y in 0..h {
                for x in 0..w {
                    if full.get(x, y) {
                        let p = out.pixel(x, y);
                        out.put_pixel(
                            x,
                            y,
                            std::array::from_fn(|i| ((p[i] as u16 + c[i] as u16) / 2) as u8),
                        );
                    }
                }
            }
        }
        for (ps, c) in [
            (&v.undrawn, [150, 150, 150]),
            (&v.pruned, [230, 40, 40]),
            (&v.decoded, [40, 230, 60]),
        ] {
            for p in ps.iter() {
                dot(&mut out, p, c);
            }
        }
        rgba(&out)
    }
}

impl Demo {
    fn inputs(&self, s: &Scene) -> denseprompt::Result<Inputs> {
        let embedding = self.backend.encode_image(&s.image)?;
        if self.steps == 0 {
            return Ok(Inputs {
                embedding,
                adapted: None,
                heat: None,
            });
        }
        let raw = self.backend.extract_semantic_features(&s.image)?;
        Ok(Inputs {
            embedding,
            heat: Some(compute_heatmap(&raw, &self.heads)?),
            adapted: Some(self.heads.adapt(&raw)?.features),
        })
    }
}

fn distinct<'a>(masks: impl Iterator<Item = &'a Arc<SoftMask>>) -> Vec<Arc<SoftMask>> {
    let mut seen = HashSet::new();
    masks
        .filter(|m| seen.insert(Arc::as_ptr(m)))
        .cloned()
        .collect()
}

/// Fraction of objects whose box is matched at IoU 0.5 by the box of some
/// distinct decoded mask.
fn coverage(masks: &[Arc<SoftMask>], w: usize, h: usize, gt: &GroundTruth) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let boxes: Vec<(BoxXYXY, f64)> = distinct(masks.iter())
        .iter()
        .filter_map(|m| {
            let full: BitMask = m.binarize().resize_nearest(w, h);
            mask_to_box(&full).map(|b| (b, 1.0))
        })
        .collect();
    let m = match_detections(&boxes, &gt.visible_boxes, 0.5);
    m.covered.iter().filter(|&&c| c).count() as f64 / gt.len() as f64
}

fn rgba(img: &RgbImage) -> Vec<u8> {
    img.as_raw()
        .chunks(3)
        .flat_map(|p| [p[0], p[1], p[2], 255])
        .collect()
}

fn dimmed(img: &RgbImage) -> RgbImage {
    let data = img.as_raw().iter().map(|&v| v / 2 + 20).collect();
    RgbImage::from_raw(img.width(), img.height(), data).expect("same dimensions")
}

fn tint(k: usize) -> [u8; 3] {
    const T: [[u8; 3]; 6] = [
        [80, 160, 255],
        [255, 200, 60],
        [180, 90, 255],
        [60, 220, 200],
        [255, 120, 180],
        [200, 255, 90],
    ];
    T[k % T.len()]
}

fn dot(img: &mut RgbImage, p: &PointPrompt, c: [u8; 3]) {
    let (cx, cy) = (p.x as i64, p.y as i64);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (x, y) = (cx + dx, cy + dy);
            if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
                img.put_pixel(x as usize, y as usize, c);
            }
        }
    }
}
