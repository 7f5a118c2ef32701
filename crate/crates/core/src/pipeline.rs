//! End-to-end annotation of one image: optional overlapping crops, then per
//! crop heatmap, grid prompts, budgeted sampling and mask selection, and a
//! global box NMS over everything that survived.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backbone::Backbones;
use crate::eps::{eps_sample, EpsConfig};
use crate::error::{Error, Result};
use crate::geometry::{mask_to_box, nms, rle_encode, BitMask, BoxXYXY, RleMask};
use crate::image::RgbImage;
use crate::model::Heads;
use crate::prompt::{compute_heatmap, extract_prompts};
use crate::pwdnet::PwdScorer;
use crate::rng::hash_words;

/// Overlapping-window settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropConfig {
    pub window: usize,
    pub overlap: usize,
    /// Each crop is resampled (nearest) so its longer side has this length;
    /// 0 keeps crops at native size.
    pub resize_to: usize,
    /// Also run one pass over the whole image, so objects larger than the
    /// overlap margin are still found intact.
    pub include_full_image: bool,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            window: 512,
            overlap: 128,
            resize_to: 0,
            include_full_image: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Prompt grid side for a single full-image pass.
    pub grid: usize,
    /// Prompt grid side inside each crop.
    pub crop_grid: usize,
    /// Heatmap binarization threshold for prompt extraction.
    pub prompt_threshold: f64,
    /// Minimum joint score for a mask to be emitted.
    pub score_threshold: f64,
    pub nms_threshold: f64,
    pub eps: EpsConfig,
    /// `None` runs one pass over the whole image.
    pub crop: Option<CropConfig>,
    /// Threads used for independent crops.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid: 64,
            crop_grid: 32,
            prompt_threshold: 0.5,
            score_threshold: 0.3,
            nms_threshold: 0.5,
            eps: EpsConfig::default(),
            crop: None,
            workers: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.eps.validate()?;
        if self.grid == 0 || self.crop_grid == 0 {
            return Err(Error::Config("prompt grids must be at least 1".into()));
        }
        if let Some(c) = &self.crop {
            if c.window == 0 || c.overlap >= c.window {
                return Err(Error::Config(format!(
                    "crop window {} must exceed overlap {}",
                    c.window, c.overlap
                )));
            }
        }
        Ok(())
    }
}

/// One processing window in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    /// Processing size divided by window size.
    pub scale: f64,
    /// Grid side used for this window.
    pub grid: usize,
}

impl CropWindow {
    pub fn bbox(&self) -> BoxXYXY {
        BoxXYXY {
            x1: self.x0 as f64,
            y1: self.y0 as f64,
            x2: (self.x0 + self.width) as f64,
            y2: (self.y0 + self.height) as f64,
        }
    }

    fn processed_dims(&self) -> (usize, usize) {
        let d = |v: usize| ((v as f64 * self.scale).round() as usize).max(1);
        (d(self.width), d(self.height))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CropPlan {
    pub windows: Vec<CropWindow>,
    pub overlap: usize,
}

fn axis_starts(size: usize, window: usize, stride: usize) -> Vec<usize> {
    if size <= window {
        return vec![0];
    }
    let mut starts = Vec::new();
    let mut s = 0;
    while s + window < size {
        starts.push(s);
        s += stride;
    }
    starts.push(size - window);
    starts
}

/// Regular tiling with stride `window - overlap`; the last row and column
/// are shifted back to end at the image edge.
pub fn plan_crops(width: usize, height: usize, window: usize, overlap: usize) -> Result<CropPlan> {
    if window == 0 || overlap >= window {
        return Err(Error::Config(format!(
            "crop window {window} must exceed overlap {overlap}"
        )));
    }
    let stride = window - overlap;
    let xs = axis_starts(width, window, stride);
    let ys = axis_starts(height, window, stride);
    let mut windows = Vec::with_capacity(xs.len() * ys.len());
    for &y0 in &ys {
        for &x0 in &xs {
            windows.push(CropWindow {
                x0,
                y0,
                width: window.min(width),
                height: window.min(height),
                scale: 1.0,
                grid: 0,
            });
        }
    }
    Ok(CropPlan { windows, overlap })
}

/// Windows the pipeline will actually run, with grids and scales filled in.
pub fn processing_plan(width: usize, height: usize, cfg: &PipelineConfig) -> Result<CropPlan> {
    let full = CropWindow {
        x0: 0,
        y0: 0,
        width,
        height,
        scale: 1.0,
        grid: cfg.grid,
    };
    let Some(c) = &cfg.crop else {
        return Ok(CropPlan {
            windows: vec![full],
            overlap: 0,
        });
    };
    let mut plan = plan_crops(width, height, c.window, c.overlap)?;
    if plan.windows.len() == 1 {
        plan.windows = vec![full];
        return Ok(plan);
    }
    for w in plan.windows.iter_mut() {
        w.grid = cfg.crop_grid;
        if c.resize_to > 0 {
            w.scale = c.resize_to as f64 / w.width.max(w.height) as f64;
        }
    }
    if c.include_full_image {
        plan.windows.insert(0, full);
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub mask: RleMask,
    pub bbox: BoxXYXY,
    pub score: f64,
    /// Index into the processing plan of the window that produced it.
    pub crop: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timing {
    pub features: Duration,
    pub prompts: Duration,
    pub sampling: Duration,
    pub merge: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CropStats {
    pub prompts: usize,
    pub decoded: usize,
    pub pruned: usize,
}

#[derive(Debug, Clone)]
pub struct AnnotationResult {
    pub width: usize,
    pub height: usize,
    /// Sorted by descending score.
    pub detections: Vec<Detection>,
    pub plan: CropPlan,
    pub stats: Vec<CropStats>,
    pub timing: Timing,
}

struct CropOutput {
    masks: Vec<(BitMask, f64)>,
    stats: CropStats,
    timing: Timing,
}

/// Runs one window and returns its emitted masks in window pixels.
fn run_window(
    image: &RgbImage,
    win: &CropWindow,
    crop_id: usize,
    heads: &Heads,
    backend: &dyn Backbones,
    cfg: &PipelineConfig,
) -> Result<CropOutput> {
    let mut timing = Timing::default();
    let t = Instant::now();
    let mut sub = image.crop(win.x0, win.y0, win.width, win.height);
    let (pw, ph) = win.processed_dims();
    sub = sub.resize_nearest(pw, ph);
    let raw = backend.extract_semantic_features(&sub)?;
    let embedding = backend.encode_image(&sub)?;
    let adapted = heads.adapt(&raw)?.features;
    timing.features = t.elapsed();

    let t = Instant::now();
    let heat = compute_heatmap(&raw, heads)?;
    let prompts = extract_prompts(&heat, pw, ph, win.grid, cfg.prompt_threshold);
    timing.prompts = t.elapsed();
    let mut stats = CropStats {
        prompts: prompts.len(),
        ..Default::default()
    };
    if prompts.is_empty() {
        return Ok(CropOutput {
            masks: Vec::new(),
            stats,
            timing,
        });
    }

    let t = Instant::now();
    let scorer = PwdScorer {
        heads,
        adapted: &adapted,
    };
    let eps_cfg = EpsConfig {
        seed: hash_words(&[cfg.eps.seed, crop_id as u64]),
        ..cfg.eps
    };
    let out = eps_sample(
        &embedding,
        &prompts,
        &mut |dec| Ok(scorer.score(dec)?.s),
        backend,
        pw,
        ph,
        &eps_cfg,
    )?;
    stats.decoded = out.trace.total_decoded();
    stats.pruned = out.trace.total_pruned();

    let mut seen = std::collections::HashSet::new();
    let mut masks = Vec::new();
    for sm in &out.decoded {
        if sm.score < cfg.score_threshold || !seen.insert(std::sync::Arc::as_ptr(&sm.mask)) {
            continue;
        }
        let m = sm.mask.binarize().resize_nearest(win.width, win.height);
        if !m.is_empty() {
            masks.push((m, sm.score));
        }
    }
    timing.sampling = t.elapsed();
    Ok(CropOutput {
        masks,
        stats,
        timing,
    })
}

/// True when the mask's box reaches a window edge that is not also an
/// image edge, i.e. the object is probably cut off by the window.
fn cut_by_window(b: &BoxXYXY, win: &CropWindow, width: usize, height: usize) -> bool {
    let (wx2, wy2) = (win.x0 + win.width, win.y0 + win.height);
    (b.x1 <= 0.0 && win.x0 > 0)
        || (b.y1 <= 0.0 && win.y0 > 0)
        || (b.x2 >= win.width as f64 && wx2 < width)
        || (b.y2 >= win.height as f64 && wy2 < height)
}

/// Annotates one image with trained heads.
pub fn annotate(
    image: &RgbImage,
    heads: &Heads,
    backend: &dyn Backbones,
    cfg: &PipelineConfig,
) -> Result<AnnotationResult> {
    cfg.validate()?;
    let (width, height) = (image.width(), image.height());
    let plan = processing_plan(width, height, cfg)?;
    let n = plan.windows.len();
    let slots: Vec<Mutex<Option<Result<CropOutput>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        if k >= n {
            break;
        }
        let r = run_window(image, &plan.windows[k], k, heads, backend, cfg);
        *slots[k].lock().unwrap() = Some(r);
    };
    let workers = cfg.workers.clamp(1, n);
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }

    let mut timing = Timing::default();
    let mut stats = Vec::with_capacity(n);
    let mut candidates: Vec<(BitMask, BoxXYXY, f64, usize)> = Vec::new();
    for (k, slot) in slots.into_iter().enumerate() {
        let out = slot
            .into_inner()
            .unwrap()
            .expect("every window is processed")?;
        timing.features += out.timing.features;
        timing.prompts += out.timing.prompts;
        timing.sampling += out.timing.sampling;
        stats.push(out.stats);
        let t = Instant::now();
        let win = plan.windows[k];
        for (m, score) in out.masks {
            let Some(local) = mask_to_box(&m) else {
                continue;
            };
            if cut_by_window(&local, &win, width, height) {
                continue;
            }
            let mut full = BitMask::new(width, height);
            full.paste(&m, win.x0, win.y0);
            let bbox = local.transform(1.0, win.x0 as f64, win.y0 as f64);
            candidates.push((full, bbox, score, k));
        }
        timing.merge += t.elapsed();
    }

    let t = Instant::now();
    let boxes: Vec<(BoxXYXY, f64)> = candidates.iter().map(|c| (c.1, c.2)).collect();
    let detections = nms(&boxes, cfg.nms_threshold)
        .into_iter()
        .map(|i| {
            let (m, bbox, score, crop) = &candidates[i];
            Detection {
                mask: rle_encode(m),
                bbox: *bbox,
                score: *score,
                crop: *crop,
            }
        })
        .collect();
    timing.merge += t.elapsed();
    Ok(AnnotationResult {
        width,
        height,
        detections,
        plan,
        stats,
        timing,
    })
}
