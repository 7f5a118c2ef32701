//! Sampler benchmarks on synthetic crowds: recall against decode cost for
//! dense grids decoded in full, and for budgeted samplers at equal budget.
//!
//! Recall here is coverage: the fraction of ground-truth objects matched
//! (box IoU >= 0.5) by some decoded prompt's best mask, before any NMS.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbones, DecodeResult, FeatureMap};
use crate::eps::{eps_sample, random_sampler, EpsConfig};
use crate::error::{Error, Result};
use crate::eval::match_detections;
use crate::geometry::{mask_to_box, BoxXYXY, PointPrompt, SoftMask};
use crate::image::RgbImage;
use crate::model::Heads;
use crate::prompt::{compute_heatmap, extract_prompts, grid_points};
use crate::pwdnet::{select_best, PwdScorer};
use crate::rng::hash_words;
use crate::scene::{render, GroundTruth, SceneParams};

/// Prompts decoded per backend call when decoding a whole pool.
const DECODE_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Full,
    Random,
    Eps,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Full => "full",
            SamplerKind::Random => "random",
            SamplerKind::Eps => "eps",
        }
    }
}

/// A rendered scene with its ground truth.
#[derive(Debug, Clone)]
pub struct BenchScene {
    pub seed: u64,
    pub image: RgbImage,
    pub gt: GroundTruth,
}

pub fn make_scenes(params: &SceneParams, seeds: &[u64]) -> Result<Vec<BenchScene>> {
    seeds
        .iter()
        .map(|&seed| {
            let (scene, gt) = params.generate(seed)?;
            Ok(BenchScene {
                seed,
                image: render(&scene),
                gt,
            })
        })
        .collect()
}

/// One sampler run on one scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneOutcome {
    pub n_gt: usize,
    pub covered: usize,
    pub decoded: usize,
    /// Distinct decoded masks matching no object.
    pub false_positives: usize,
    pub wall: Duration,
}

impl SceneOutcome {
    pub fn recall(&self) -> f64 {
        if self.n_gt == 0 {
            0.0
        } else {
            self.covered as f64 / self.n_gt as f64
        }
    }
}

/// Per-image state shared by every sampler run on a scene.
struct Prepared<'a> {
    embedding: FeatureMap,
    width: usize,
    height: usize,
    scoring: Scoring<'a>,
    heat: Option<SoftMask>,
}

enum Scoring<'a> {
    /// The decoder's own IoU predictions.
    Native,
    Pwd {
        heads: &'a Heads,
        adapted: FeatureMap,
    },
}

impl Scoring<'_> {
    fn score(&self, dec: &DecodeResult) -> Result<Vec<f64>> {
        match self {
            Scoring::Native => Ok(dec.native_iou.clone()),
            Scoring::Pwd { heads, adapted } => Ok(PwdScorer { heads, adapted }.score(dec)?.s),
        }
    }
}

fn prepare<'a>(
    backend: &dyn Backbones,
    heads: Option<&'a Heads>,
    image: &RgbImage,
) -> Result<Prepared<'a>> {
    let embedding = backend.encode_image(image)?;
    let (scoring, heat) = match heads {
        None => (Scoring::Native, None),
        Some(h) => {
            let raw = backend.extract_semantic_features(image)?;
            let heat = compute_heatmap(&raw, h)?;
            let adapted = h.adapt(&raw)?.features;
            (Scoring::Pwd { heads: h, adapted }, Some(heat))
        }
    };
    Ok(Prepared {
        embedding,
        width: image.width(),
        height: image.height(),
        scoring,
        heat,
    })
}

impl Prepared<'_> {
    /// Grid prompts, filtered by the heatmap when heads are present.
    fn pool(&self, grid: usize, threshold: f64) -> Vec<PointPrompt> {
        match &self.heat {
            Some(h) => extract_prompts(h, self.width, self.height, grid, threshold),
            None => grid_points(self.width, self.height, grid),
        }
    }

    /// Decodes every prompt and returns the best candidate of each.
    fn decode_all(
        &self,
        backend: &dyn Backbones,
        prompts: &[PointPrompt],
    ) -> Result<Vec<(Arc<SoftMask>, f64)>> {
        let mut out = Vec::with_capacity(prompts.len());
        for chunk in prompts.chunks(DECODE_CHUNK) {
            let dec = backend.decode_prompts(&self.embedding, chunk)?;
            let s = self.scoring.score(&dec)?;
            for (i, (j, score)) in select_best(&s).into_iter().enumerate() {
                out.push((dec.masks[i][j].clone(), score));
            }
        }
        Ok(out)
    }
}

/// Boxes of distinct masks (shared candidates counted once) matched
/// against the ground truth.
fn coverage(
    masks: &[(Arc<SoftMask>, f64)],
    width: usize,
    height: usize,
    gt: &GroundTruth,
) -> (usize, usize) {
    let mut seen = std::collections::HashSet::new();
    let mut dets: Vec<(BoxXYXY, f64)> = Vec::new();
    for (m, s) in masks {
        if !seen.insert(Arc::as_ptr(m)) {
            continue;
        }
        let bin = m.binarize();
        if let Some(b) = mask_to_box(&bin) {
            let sx = width as f64 / bin.width() as f64;
            let sy = height as f64 / bin.height() as f64;
            dets.push((
                BoxXYXY {
                    x1: b.x1 * sx,
                    y1: b.y1 * sy,
                    x2: b.x2 * sx,
                    y2: b.y2 * sy,
                },
                *s,
            ));
        }
    }
    let m = match_detections(&dets, &gt.visible_boxes, 0.5);
    let covered = m.covered.iter().filter(|&&c| c).count();
    let fp = m.matched.iter().filter(|x| x.is_none()).count();
    (covered, fp)
}

/// Settings shared by the benchmark runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Heatmap threshold used to build the prompt pool when heads are given.
    pub prompt_threshold: f64,
    pub eps: EpsConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            prompt_threshold: 0.5,
            eps: EpsConfig::default(),
        }
    }
}

/// Runs one sampler on one scene. With `heads`, prompts come from the
/// heatmap and masks are ranked by the joint score; without, every grid
/// point is a prompt and the decoder's IoU estimate ranks masks.
pub fn run_sampler(
    backend: &dyn Backbones,
    heads: Option<&Heads>,
    scene: &BenchScene,
    grid: usize,
    sampler: SamplerKind,
    budget: usize,
    cfg: &BenchConfig,
) -> Result<SceneOutcome> {
    let t = Instant::now();
    let prep = prepare(backend, heads, &scene.image)?;
    let pool = prep.pool(grid, cfg.prompt_threshold);
    let seed = hash_words(&[cfg.eps.seed, scene.seed, grid as u64]);
    let masks = match sampler {
        SamplerKind::Full => prep.decode_all(backend, &pool)?,
        SamplerKind::Random => prep.decode_all(backend, &random_sampler(&pool, budget, seed))?,
        SamplerKind::Eps => {
            let eps_cfg = EpsConfig {
                budget,
                batch_size: cfg.eps.batch_size.min(budget.max(1)),
                seed,
                ..cfg.eps
            };
            if budget == 0 {
                Vec::new()
            } else {
                let out = eps_sample(
                    &prep.embedding,
                    &pool,
                    &mut |d: &DecodeResult| prep.scoring.score(d),
                    backend,
                    prep.width,
                    prep.height,
                    &eps_cfg,
                )?;
                out.decoded
                    .into_iter()
                    .map(|sm| (sm.mask, sm.score))
                    .collect()
            }
        }
    };
    let (covered, false_positives) = coverage(&masks, prep.width, prep.height, &scene.gt);
    Ok(SceneOutcome {
        n_gt: scene.gt.len(),
        covered,
        decoded: masks.len(),
        false_positives,
        wall: t.elapsed(),
    })
}

/// One prompt per object: the interior pixel centre nearest the centroid
/// of its visible mask (interior = whole 3x3 neighbourhood visible), or
/// the nearest visible pixel if the mask has no interior.
pub fn center_prompts(gt: &GroundTruth) -> Vec<PointPrompt> {
    gt.visible_masks
        .iter()
        .enumerate()
        .filter_map(|(k, m)| {
            let (w, h) = (m.width(), m.height());
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    if m.get(x, y) {
                        sx += x as f64 + 0.5;
                        sy += y as f64 + 0.5;
                        n += 1.0;
                    }
                }
            }
            if n == 0.0 {
                return None;
            }
            let (cx, cy) = (sx / n, sy / n);
            let interior = |x: usize, y: usize| {
                x > 0
                    && y > 0
                    && x + 1 < w
                    && y + 1 < h
                    && (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| m.get(xx, yy)))
            };
            let mut best: Option<(bool, f64, usize, usize)> = None;
            for y in 0..h {
                for x in 0..w {
                    if !m.get(x, y) {
                        continue;
                    }
                    let inner = interior(x, y);
                    let d = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                    let better = match best {
                        None => true,
                        Some((bi, bd, _, _)) => (inner && !bi) || (inner == bi && d < bd),
                    };
                    if better {
                        best = Some((inner, d, x, y));
                    }
                }
            }
            let (_, _, x, y) = best?;
            let mut p = PointPrompt::new(x as f64 + 0.5, y as f64 + 0.5);
            p.grid_index = k;
            Some(p)
        })
        .collect()
}

/// Decodes exactly the centre prompts of each object.
pub fn run_center_prompts(
    backend: &dyn Backbones,
    heads: Option<&Heads>,
    scene: &BenchScene,
) -> Result<SceneOutcome> {
    let t = Instant::now();
    let prep = prepare(backend, heads, &scene.image)?;
    let prompts = center_prompts(&scene.gt);
    let masks = prep.decode_all(backend, &prompts)?;
    let (covered, false_positives) = coverage(&masks, prep.width, prep.height, &scene.gt);
    Ok(SceneOutcome {
        n_gt: scene.gt.len(),
        covered,
        decoded: masks.len(),
        false_positives,
        wall: t.elapsed(),
    })
}

/// Aggregate over scenes for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub sampler: String,
    pub grid: usize,
    /// `None` for unbudgeted runs.
    pub budget: Option<usize>,
    pub scenes: usize,
    /// Mean of per-scene recall.
    pub recall: f64,
    pub mean_decoded: f64,
    pub mean_false_positives: f64,
    pub wall: Duration,
}

impl BenchRow {
    pub fn from_outcomes(
        sampler: &str,
        grid: usize,
        budget: Option<usize>,
        outs: &[SceneOutcome],
    ) -> Self {
        let n = outs.len().max(1) as f64;
        BenchRow {
            sampler: sampler.into(),
            grid,
            budget,
            scenes: outs.len(),
            recall: outs.iter().map(SceneOutcome::recall).sum::<f64>() / n,
            mean_decoded: outs.iter().map(|o| o.decoded as f64).sum::<f64>() / n,
            mean_false_positives: outs.iter().map(|o| o.false_positives as f64).sum::<f64>() / n,
            wall: outs.iter().map(|o| o.wall).sum(),
        }
    }
}

/// Deterministic part of a table; wall times go to [`timing_csv`].
pub fn rows_csv(rows: &[BenchRow]) -> String {
    let mut s =
        String::from("sampler,grid,budget,scenes,recall,mean_decoded,mean_false_positives\n");
    for r in rows {
        let budget = r.budget.map(|b| b.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.3},{:.3}",
            r.sampler, r.grid, budget, r.scenes, r.recall, r.mean_decoded, r.mean_false_positives
        );
    }
    s
}

pub fn timing_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("sampler,grid,budget,wall_seconds\n");
    for r in rows {
        let budget = r.budget.map(|b| b.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{:.6}",
            r.sampler,
            r.grid,
            budget,
            r.wall.as_secs_f64()
        );
    }
    s
}

/// Full decode at each grid size, plus the centre-prompt reference row
/// (reported with grid 0).
pub fn grid_sweep(
    backend: &dyn Backbones,
    heads: Option<&Heads>,
    scenes: &[BenchScene],
    grids: &[usize],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &g in grids {
        if g == 0 {
            return Err(Error::Config("grid sizes must be positive".into()));
        }
        let outs = scenes
            .iter()
            .map(|s| run_sampler(backend, heads, s, g, SamplerKind::Full, 0, cfg))
            .collect::<Result<Vec<_>>>()?;
        rows.push(BenchRow::from_outcomes("full", g, None, &outs));
    }
    let outs = scenes
        .iter()
        .map(|s| run_center_prompts(backend, heads, s))
        .collect::<Result<Vec<_>>>()?;
    rows.push(BenchRow::from_outcomes("center", 0, None, &outs));
    Ok(rows)
}

/// Budgeted samplers at every (grid, budget) pair.
pub fn sampler_comparison(
    backend: &dyn Backbones,
    heads: Option<&Heads>,
    scenes: &[BenchScene],
    grids: &[usize],
    budgets: &[usize],
    samplers: &[SamplerKind],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &g in grids {
        for &k in budgets {
            for &sk in samplers {
                let outs = scenes
                    .iter()
                    .map(|s| run_sampler(backend, heads, s, g, sk, k, cfg))
                    .collect::<Result<Vec<_>>>()?;
                let budget = (sk != SamplerKind::Full).then_some(k);
                rows.push(BenchRow::from_outcomes(sk.name(), g, budget, &outs));
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{OracleBackend, OracleConfig};
    use crate::geometry::point_in_mask;

    #[test]
    fn center_prompts_lie_inside_their_objects() {
        let (_, gt) = SceneParams::desk_crowd().generate(4).unwrap();
        let ps = center_prompts(&gt);
        assert_eq!(ps.len(), gt.len());
        for p in &ps {
            assert!(point_in_mask(p, &gt.visible_masks[p.grid_index]).unwrap());
        }
    }

    #[test]
    fn budgets_are_respected() {
        let be = OracleBackend::new(OracleConfig::default()).unwrap();
        let scenes = make_scenes(&SceneParams::desk_crowd(), &[1]).unwrap();
        let cfg = BenchConfig::default();
        for sk in [SamplerKind::Random, SamplerKind::Eps] {
            let o = run_sampler(&be, None, &scenes[0], 32, sk, 100, &cfg).unwrap();
            assert!(o.decoded <= 100);
            assert!(o.covered <= o.n_gt);
        }
        let full = run_sampler(&be, None, &scenes[0], 16, SamplerKind::Full, 0, &cfg).unwrap();
        assert_eq!(full.decoded, 256);
        let again = run_sampler(&be, None, &scenes[0], 16, SamplerKind::Full, 0, &cfg).unwrap();
        assert_eq!(
            (again.covered, again.false_positives),
            (full.covered, full.false_positives)
        );
    }

    #[test]
    fn csv_layout() {
        let row = BenchRow::from_outcomes(
            "eps",
            192,
            Some(500),
            &[SceneOutcome {
                n_gt: 4,
                covered: 3,
                decoded: 10,
                false_positives: 1,
                wall: Duration::from_millis(5),
            }],
        );
        assert_eq!(
            rows_csv(std::slice::from_ref(&row)),
            "sampler,grid,budget,scenes,recall,mean_decoded,mean_false_positives\neps,192,500,1,0.750000,10.000,1.000\n"
        );
        assert!(timing_csv(&[row]).ends_with("eps,192,500,0.005000\n"));
    }
}
