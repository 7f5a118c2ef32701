//! Synthetic crowded scenes: opaque shapes painted back to front, with the
//! exact visible-region ground truth that falls out of the occlusion order.
//!
//! Rendered images carry each object's label in the low bits of its flat
//! colour (red LSB set, label split over the low nibbles of green and blue);
//! background texture always has an even red channel. The oracle backend
//! reads labels straight from pixels, so crops and nearest resizes of a
//! rendered scene stay decodable.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mask_to_box, rle_decode, rle_encode, BitMask, BoxXYXY, RleMask};
use crate::image::RgbImage;
use crate::rng::{hash_unit, hash_words, rng_for};

/// Largest number of objects a rendered scene can label.
pub const MAX_OBJECTS: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    RoundedRect,
}

/// Shape geometry in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub half_w: f64,
    pub half_h: f64,
}

impl Shape {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        match self.kind {
            ShapeKind::Ellipse => {
                let dx = (px - self.cx) / self.half_w;
                let dy = (py - self.cy) / self.half_h;
                dx * dx + dy * dy <= 1.0
            }
            ShapeKind::RoundedRect => {
                let ax = (px - self.cx).abs();
                let ay = (py - self.cy).abs();
                if ax > self.half_w || ay > self.half_h {
                    return false;
                }
                // corner radius: 40% of the half-width
                let r = 0.4 * self.half_w;
                let qx = ax - (self.half_w - r);
                let qy = ay - (self.half_h - r);
                qx <= 0.0 || qy <= 0.0 || qx * qx + qy * qy <= r * r
            }
        }
    }

    pub fn rasterize(&self, width: usize, height: usize) -> BitMask {
        let mut m = BitMask::new(width, height);
        let x0 = (self.cx - self.half_w).floor().max(0.0) as usize;
        let x1 = ((self.cx + self.half_w).ceil() as usize).min(width);
        let y0 = (self.cy - self.half_h).floor().max(0.0) as usize;
        let y1 = ((self.cy + self.half_h).ceil() as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub full_mask: BitMask,
    /// Painting order; larger depth is drawn later and occludes smaller.
    pub depth: u32,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub visible_masks: Vec<BitMask>,
    pub visible_boxes: Vec<BoxXYXY>,
    pub visibility: Vec<f64>,
    /// Index into `SceneSpec::objects` for each retained ground-truth entry.
    pub object_index: Vec<usize>,
    /// Objects left with no visible pixel.
    pub dropped: Vec<usize>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.visible_masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible_masks.is_empty()
    }

    pub fn mean_visibility(&self) -> f64 {
        if self.visibility.is_empty() {
            return 0.0;
        }
        self.visibility.iter().sum::<f64>() / self.visibility.len() as f64
    }

    pub fn union_mask(&self, width: usize, height: usize) -> BitMask {
        let mut u = BitMask::new(width, height);
        for m in &self.visible_masks {
            u.union_with(m)
                .expect("ground-truth masks share the canvas");
        }
        u
    }
}

/// Generator knobs. `overlap_level` in `[0, 1]` pulls new objects toward
/// existing ones; `min_visibility` bounds how much any object may be hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub n_objects: usize,
    pub overlap_level: f64,
    pub width: usize,
    pub height: usize,
    /// Object height range as a fraction of canvas height.
    pub size_range: [f64; 2],
    /// Width-to-height ratio range.
    pub aspect_range: [f64; 2],
    pub min_visibility: f64,
    pub max_retries: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            n_objects: 22,
            overlap_level: 0.4,
            width: 1024,
            height: 1024,
            size_range: [0.12, 0.24],
            aspect_range: [0.38, 0.55],
            min_visibility: 0.15,
            max_retries: 64,
        }
    }
}

/// Named scene presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneFamily {
    DeskCrowd,
    BenchCrowd,
    SmallObjects,
}

impl SceneFamily {
    pub fn params(&self) -> SceneParams {
        match self {
            SceneFamily::DeskCrowd => SceneParams::desk_crowd(),
            SceneFamily::BenchCrowd => SceneParams::bench_crowd(),
            SceneFamily::SmallObjects => SceneParams::small_objects(),
        }
    }
}

impl SceneParams {
    /// The 256x256 crowd family used for desk-scale experiments.
    pub fn desk_crowd() -> Self {
        SceneParams {
            width: 256,
            height: 256,
            ..Default::default()
        }
    }

    /// A 512x512 crowd with the desk family's object pixel sizes, four
    /// times the area and object count. Dense enough that a random 500
    /// prompt budget no longer saturates recall.
    pub fn bench_crowd() -> Self {
        SceneParams {
            width: 512,
            height: 512,
            n_objects: 88,
            size_range: [0.06, 0.12],
            ..Default::default()
        }
    }

    /// Crowds of small objects (each well under 1/16 of the canvas).
    pub fn small_objects() -> Self {
        SceneParams {
            width: 256,
            height: 256,
            n_objects: 30,
            size_range: [0.05, 0.09],
            overlap_level: 0.3,
            ..Default::default()
        }
    }

    pub fn generate(&self, seed: u64) -> Result<(SceneSpec, GroundTruth)> {
        if !(0.0..=1.0).contains(&self.overlap_level) {
            return Err(Error::Config(format!(
                "overlap_level {} outside [0, 1]",
                self.overlap_level
            )));
        }
        if self.n_objects > MAX_OBJECTS {
            return Err(Error::Config(format!(
                "at most {MAX_OBJECTS} objects per scene, got {}",
                self.n_objects
            )));
        }
        let min_h = self.size_range[0] * self.height as f64;
        if self.n_objects > 0 && (min_h < 4.0 || min_h * self.aspect_range[0] < 2.0) {
            return Err(Error::CanvasTooSmall(format!(
                "{}x{} canvas gives objects under 4 px tall",
                self.width, self.height
            )));
        }

        let (w, h) = (self.width, self.height);
        let mut rng = rng_for(seed, 0x5CE4E);
        // label[p] = index + 1 of the front-most object covering p, 0 for background.
        let mut label = vec![0u16; w * h];
        let mut visible_count: Vec<usize> = Vec::new();
        let mut full_count: Vec<usize> = Vec::new();
        let mut objects: Vec<SceneObject> = Vec::new();

        for i in 0..self.n_objects {
            let mut placed = None;
            for _ in 0..self.max_retries {
                let shape = self.sample_shape(&mut rng, &objects);
                let full = shape.rasterize(w, h);
                let area = full.count();
                if area == 0 {
                    continue;
                }
                let mut lost = vec![0usize; objects.len()];
                for (p, &v) in full.data().iter().enumerate() {
                    if v != 0 && label[p] != 0 {
                        lost[label[p] as usize - 1] += 1;
                    }
                }
                let ok = lost.iter().enumerate().all(|(j, &l)| {
                    l == 0
                        || (visible_count[j] - l) as f64
                            >= self.min_visibility * full_count[j] as f64
                });
                if ok {
                    placed = Some((shape, full, area, lost));
                    break;
                }
            }
            let Some((shape, full, area, lost)) = placed else {
                return Err(Error::CanvasTooSmall(format!(
                    "could not place object {i} of {} on a {w}x{h} canvas after {} retries",
                    self.n_objects, self.max_retries
                )));
            };
            for (j, l) in lost.into_iter().enumerate() {
                visible_count[j] -= l;
            }
            for (p, &v) in full.data().iter().enumerate() {
                if v != 0 {
                    label[p] = (i + 1) as u16;
                }
            }
            visible_count.push(area);
            full_count.push(area);
            let color = palette(seed, i);
            objects.push(SceneObject {
                shape,
                full_mask: full,
                depth: i as u32,
                color,
            });
        }

        let scene = SceneSpec {
            width: w,
            height: h,
            objects,
            seed,
        };
        let gt = ground_truth(&scene);
        Ok((scene, gt))
    }

    fn sample_shape(&self, rng: &mut impl Rng, existing: &[SceneObject]) -> Shape {
        let (w, h) = (self.width as f64, self.height as f64);
        let half_h = 0.5 * h * rng.random_range(self.size_range[0]..=self.size_range[1]);
        let half_w = half_h * rng.random_range(self.aspect_range[0]..=self.aspect_range[1]);
        let kind = if rng.random_bool(0.5) {
            ShapeKind::Ellipse
        } else {
            ShapeKind::RoundedRect
        };
        let attach = !existing.is_empty() && rng.random_bool(0.25 + 0.7 * self.overlap_level);
        let (mut cx, mut cy) = if attach {
            let anchor = &existing[rng.random_range(0..existing.len())].shape;
            let lo = 1.6 - 1.2 * self.overlap_level;
            let spread = rng.random_range(lo..lo + 0.5);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let dx = sign * spread * (half_w + anchor.half_w);
            let dy = rng.random_range(-0.35..0.35) * (half_h + anchor.half_h);
            (anchor.cx + dx, anchor.cy + dy)
        } else {
            (rng.random_range(0.0..w), rng.random_range(0.0..h))
        };
        cx = cx.clamp(half_w, (w - half_w).max(half_w));
        cy = cy.clamp(half_h, (h - half_h).max(half_h));
        Shape {
            kind,
            cx,
            cy,
            half_w,
            half_h,
        }
    }
}

/// Convenience wrapper with the remaining knobs at their defaults.
pub fn generate_scene(
    n_objects: usize,
    overlap_level: f64,
    canvas: (usize, usize),
    seed: u64,
) -> Result<(SceneSpec, GroundTruth)> {
    SceneParams {
        n_objects,
        overlap_level,
        width: canvas.0,
        height: canvas.1,
        ..Default::default()
    }
    .generate(seed)
}

/// Visible masks by painter's order. Objects left with nothing visible are
/// recorded in `dropped` and excluded.
pub fn ground_truth(scene: &SceneSpec) -> GroundTruth {
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.sort_by_key(|&i| (scene.objects[i].depth, i));
    let mut gt = GroundTruth::default();
    for (rank, &i) in order.iter().enumerate() {
        let obj = &scene.objects[i];
        let mut visible = obj.full_mask.clone();
        for &j in &order[rank + 1..] {
            visible
                .subtract(&scene.objects[j].full_mask)
                .expect("scene masks share the canvas");
        }
        let full = obj.full_mask.count();
        let vis = visible.count();
        match mask_to_box(&visible) {
            Some(b) => {
                gt.visible_boxes.push(b);
                gt.visible_masks.push(visible);
                gt.visibility.push(vis as f64 / full.max(1) as f64);
                gt.object_index.push(i);
            }
            None => gt.dropped.push(i),
        }
    }
    gt
}

fn palette(seed: u64, i: usize) -> [u8; 3] {
    let hue = hash_unit(hash_words(&[seed, i as u64, 0xC0])) * 6.0;
    let c = 200.0;
    let x = c * (1.0 - ((hue % 2.0) - 1.0).abs());
    let (r, g, b) = match hue as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [(r + 40.0) as u8, (g + 40.0) as u8, (b + 40.0) as u8]
}

/// Encodes `label` (1-based) into a flat object colour.
pub fn encode_label_color(color: [u8; 3], label: usize) -> [u8; 3] {
    debug_assert!((1..=MAX_OBJECTS).contains(&label));
    let l = label as u8;
    [
        (color[0] & 0xFE) | 1,
        (color[1] & 0xF0) | (l & 0x0F),
        (color[2] & 0xF0) | (l >> 4),
    ]
}

/// Recovers the 1-based object label of each pixel (0 for background).
pub fn decode_labels(img: &RgbImage) -> Vec<u8> {
    img.as_raw()
        .chunks_exact(3)
        .map(|p| {
            if p[0] & 1 == 0 {
                0
            } else {
                (p[1] & 0x0F) | ((p[2] & 0x0F) << 4)
            }
        })
        .collect()
}

/// Flat-shaded shapes over a textured background.
pub fn render(scene: &SceneSpec) -> RgbImage {
    let (w, h) = (scene.width, scene.height);
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let n = hash_unit(hash_words(&[scene.seed, x as u64, y as u64, 0xB6]));
            let wave = ((x as f64 * 0.07).sin() + (y as f64 * 0.05).cos()) * 12.0;
            let base = (70.0 + wave + n * 40.0).clamp(0.0, 255.0) as u8;
            img.put_pixel(
                x,
                y,
                [
                    base & 0xFE,
                    base.saturating_add(10),
                    base.saturating_add(25),
                ],
            );
        }
    }
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.sort_by_key(|&i| (scene.objects[i].depth, i));
    for i in order {
        let obj = &scene.objects[i];
        let rgb = encode_label_color(obj.color, i + 1);
        for y in 0..h {
            for x in 0..w {
                if obj.full_mask.get(x, y) {
                    img.put_pixel(x, y, rgb);
                }
            }
        }
    }
    img
}

/// Self-describing, replayable scene archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneArchive {
    pub format: String,
    pub version: u32,
    pub params: SceneParams,
    pub scenes: Vec<ArchivedScene>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivedScene {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub objects: Vec<ArchivedObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivedObject {
    pub shape: Shape,
    pub depth: u32,
    pub color: [u8; 3],
    pub full_mask: RleMask,
}

impl SceneArchive {
    pub const FORMAT: &'static str = "denseprompt-scenes";

    pub fn new(params: SceneParams, scenes: &[SceneSpec]) -> Self {
        SceneArchive {
            format: Self::FORMAT.to_string(),
            version: 1,
            params,
            scenes: scenes
                .iter()
                .map(|s| ArchivedScene {
                    seed: s.seed,
                    width: s.width,
                    height: s.height,
                    objects: s
                        .objects
                        .iter()
                        .map(|o| ArchivedObject {
                            shape: o.shape,
                            depth: o.depth,
                            color: o.color,
                            full_mask: rle_encode(&o.full_mask),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_scenes(&self) -> Result<Vec<SceneSpec>> {
        if self.format != Self::FORMAT || self.version != 1 {
            return Err(Error::Dataset(format!(
                "unsupported scene archive {} v{}",
                self.format, self.version
            )));
        }
        self.scenes
            .iter()
            .map(|s| {
                let objects = s
                    .objects
                    .iter()
                    .map(|o| {
                        let full_mask = rle_decode(&o.full_mask)?;
                        if full_mask.width() != s.width || full_mask.height() != s.height {
                            return Err(Error::Dataset("object mask does not match canvas".into()));
                        }
                        Ok(SceneObject {
                            shape: o.shape,
                            full_mask,
                            depth: o.depth,
                            color: o.color,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(SceneSpec {
                    width: s.width,
                    height: s.height,
                    objects,
                    seed: s.seed,
                })
            })
            .collect()
    }
}
