//! Boxes, rasters, points and the arithmetic shared by every other module.
//!
//! Conventions used throughout the crate:
//!
//! - Boxes are half-open `[x1, x2) x [y1, y2)` in pixel units. A single pixel at
//!   `(3, 5)` has the box `[3, 5, 4, 6]`.
//! - Rasters are row-major: pixel `(x, y)` lives at `y * width + x`.
//! - Bilinear resampling uses the align-corners-false grid: output cell `i`
//!   samples the source at `(i + 0.5) * in / out - 0.5`.
//! - Nearest resampling picks source index `floor((i + 0.5) * in / out)`.

mod rle;

pub use rle::{rle_decode, rle_encode, RleMask};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in absolute pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxXYXY {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxXYXY {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BoxXYXY { x1, y1, x2, y2 };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite coordinates {b:?}")));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::InvalidBox(format!("inverted coordinates {b:?}")));
        }
        Ok(b)
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection(&self, other: &BoxXYXY) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    /// Maps a box by `p -> p * scale + offset` on both axes.
    pub fn transform(&self, scale: f64, dx: f64, dy: f64) -> BoxXYXY {
        BoxXYXY {
            x1: self.x1 * scale + dx,
            y1: self.y1 * scale + dy,
            x2: self.x2 * scale + dx,
            y2: self.y2 * scale + dy,
        }
    }

    /// Clips the box to `[0, width) x [0, height)`.
    pub fn clip(&self, width: f64, height: f64) -> BoxXYXY {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BoxXYXY {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
        }
    }
}

/// Intersection over union of two boxes; `0.0` when the union is empty.
pub fn iou_boxes(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// A binary raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BitMask {
    pub fn new(width: usize, height: usize) -> Self {
        BitMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        BitMask {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    /// Builds a mask from row-major data; nonzero bytes become `1`.
    pub fn from_vec(width: usize, height: usize, mut data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask data has {} entries, expected {width}x{height}",
                data.len()
            )));
        }
        for v in &mut data {
            *v = u8::from(*v != 0);
        }
        Ok(BitMask {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(x, y)));
            }
        }
        BitMask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = u8::from(value);
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    fn check_dims(&self, other: &BitMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn union_with(&mut self, other: &BitMask) -> Result<()> {
        self.check_dims(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }

    /// Clears every pixel that is set in `other`.
    pub fn subtract(&mut self, other: &BitMask) -> Result<()> {
        self.check_dims(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a &= 1 - b;
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BitMask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a & b) as usize)
            .sum())
    }

    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f32).collect(),
            is_logit: false,
        }
    }

    /// Nearest-neighbour resampling to a new size.
    pub fn resize_nearest(&self, out_w: usize, out_h: usize) -> BitMask {
        if out_w == self.width && out_h == self.height {
            return self.clone();
        }
        let xs = nearest_indices(self.width, out_w);
        let ys = nearest_indices(self.height, out_h);
        let mut data = Vec::with_capacity(out_w * out_h);
        for &sy in &ys {
            let row = &self.data[sy * self.width..(sy + 1) * self.width];
            data.extend(xs.iter().map(|&sx| row[sx]));
        }
        BitMask {
            width: out_w,
            height: out_h,
            data,
        }
    }

    /// Shrinks by OR-pooling: source pixel `(x, y)` lands in output cell
    /// `(x * out_w / width, y * out_h / height)`, and a cell is set when any
    /// of its pixels is. Thin structures survive, unlike nearest sampling.
    pub fn downsample_any(&self, out_w: usize, out_h: usize) -> BitMask {
        assert!(
            out_w <= self.width && out_h <= self.height,
            "downsample_any cannot enlarge"
        );
        let mut out = BitMask::new(out_w, out_h);
        for y in 0..self.height {
            let oy = y * out_h / self.height;
            for x in 0..self.width {
                if self.data[y * self.width + x] != 0 {
                    out.data[oy * out_w + x * out_w / self.width] = 1;
                }
            }
        }
        out
    }

    /// Copies the `w x h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> BitMask {
        BitMask::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Writes `src` into this mask with its top-left corner at `(x0, y0)`;
    /// pixels falling outside the canvas are dropped.
    pub fn paste(&mut self, src: &BitMask, x0: usize, y0: usize) {
        for y in 0..src.height {
            let ty = y0 + y;
            if ty >= self.height {
                break;
            }
            for x in 0..src.width {
                let tx = x0 + x;
                if tx >= self.width {
                    break;
                }
                if src.get(x, y) {
                    self.set(tx, ty, true);
                }
            }
        }
    }
}

/// A real-valued raster: probabilities in `[0, 1]` or unbounded logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    pub is_logit: bool,
}

impl SoftMask {
    pub fn new(width: usize, height: usize, data: Vec<f32>, is_logit: bool) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "soft mask data has {} entries, expected {width}x{height}",
                data.len()
            )));
        }
        Ok(SoftMask {
            width,
            height,
            data,
            is_logit,
        })
    }

    pub fn constant(width: usize, height: usize, value: f32, is_logit: bool) -> Self {
        SoftMask {
            width,
            height,
            data: vec![value; width * height],
            is_logit,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Logits are thresholded at `0`, probabilities at `0.5`.
    pub fn binarize(&self) -> BitMask {
        let data = if self.is_logit {
            self.data.iter().map(|&v| u8::from(v > 0.0)).collect()
        } else {
            self.data.iter().map(|&v| u8::from(v >= 0.5)).collect()
        };
        BitMask {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Resampling mode for [`resize_mask`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Nearest,
    Bilinear,
}

fn nearest_indices(input: usize, output: usize) -> Vec<usize> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| (((i as f64 + 0.5) * scale).floor() as usize).min(input - 1))
        .collect()
}

/// One output coordinate of an align-corners-false bilinear resize: the two
/// source taps and the weight of the second one.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BilinearTap {
    pub i0: usize,
    pub i1: usize,
    pub w1: f64,
}

pub(crate) fn bilinear_taps(input: usize, output: usize) -> Vec<BilinearTap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let w1 = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            BilinearTap { i0, i1, w1 }
        })
        .collect()
}

/// Bilinear resize of a row-major `f64` plane.
pub(crate) fn bilinear_resize_f64(
    src: &[f64],
    in_w: usize,
    in_h: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    let xt = bilinear_taps(in_w, out_w);
    let yt = bilinear_taps(in_h, out_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for ty in &yt {
        let r0 = &src[ty.i0 * in_w..(ty.i0 + 1) * in_w];
        let r1 = &src[ty.i1 * in_w..(ty.i1 + 1) * in_w];
        for tx in &xt {
            let top = r0[tx.i0] * (1.0 - tx.w1) + r0[tx.i1] * tx.w1;
            let bot = r1[tx.i0] * (1.0 - tx.w1) + r1[tx.i1] * tx.w1;
            out.push(top * (1.0 - ty.w1) + bot * ty.w1);
        }
    }
    out
}

/// Transpose of [`bilinear_resize_f64`]: scatters output gradients back onto
/// the source plane.
pub(crate) fn bilinear_resize_adjoint_f64(
    grad_out: &[f64],
    in_w: usize,
    in_h: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    let xt = bilinear_taps(in_w, out_w);
    let yt = bilinear_taps(in_h, out_h);
    let mut grad = vec![0.0; in_w * in_h];
    for (oy, ty) in yt.iter().enumerate() {
        for (ox, tx) in xt.iter().enumerate() {
            let g = grad_out[oy * out_w + ox];
            if g == 0.0 {
                continue;
            }
            let gt = g * (1.0 - ty.w1);
            let gb = g * ty.w1;
            grad[ty.i0 * in_w + tx.i0] += gt * (1.0 - tx.w1);
            grad[ty.i0 * in_w + tx.i1] += gt * tx.w1;
            grad[ty.i1 * in_w + tx.i0] += gb * (1.0 - tx.w1);
            grad[ty.i1 * in_w + tx.i1] += gb * tx.w1;
        }
    }
    grad
}

/// Resizes a soft mask. Same-size resizes return the input unchanged.
pub fn resize_mask(m: &SoftMask, out_w: usize, out_h: usize, mode: ResizeMode) -> SoftMask {
    assert!(out_w > 0 && out_h > 0, "output dimensions must be positive");
    if out_w == m.width && out_h == m.height {
        return m.clone();
    }
    let data = match mode {
        ResizeMode::Nearest => {
            let xs = nearest_indices(m.width, out_w);
            let ys = nearest_indices(m.height, out_h);
            let mut data = Vec::with_capacity(out_w * out_h);
            for &sy in &ys {
                let row = &m.data[sy * m.width..(sy + 1) * m.width];
                data.extend(xs.iter().map(|&sx| row[sx]));
            }
            data
        }
        ResizeMode::Bilinear => {
            let xt = bilinear_taps(m.width, out_w);
            let yt = bilinear_taps(m.height, out_h);
            let mut data = Vec::with_capacity(out_w * out_h);
            for ty in &yt {
                let r0 = &m.data[ty.i0 * m.width..(ty.i0 + 1) * m.width];
                let r1 = &m.data[ty.i1 * m.width..(ty.i1 + 1) * m.width];
                for tx in &xt {
                    let top = r0[tx.i0] as f64 * (1.0 - tx.w1) + r0[tx.i1] as f64 * tx.w1;
                    let bot = r1[tx.i0] as f64 * (1.0 - tx.w1) + r1[tx.i1] as f64 * tx.w1;
                    data.push((top * (1.0 - ty.w1) + bot * ty.w1) as f32);
                }
            }
            data
        }
    };
    SoftMask {
        width: out_w,
        height: out_h,
        data,
        is_logit: m.is_logit,
    }
}

/// IoU of two binary masks. Two empty masks agree perfectly and score `1.0`.
pub fn iou_masks(a: &BitMask, b: &BitMask) -> Result<f64> {
    a.check_dims(b)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Tight half-open bounds of the nonzero pixels, or `None` for an empty mask.
pub fn mask_to_box(m: &BitMask) -> Option<BoxXYXY> {
    let mut x1 = usize::MAX;
    let mut y1 = usize::MAX;
    let mut x2 = 0usize;
    let mut y2 = 0usize;
    for y in 0..m.height {
        let row = &m.data[y * m.width..(y + 1) * m.width];
        let Some(first) = row.iter().position(|&v| v != 0) else {
            continue;
        };
        let last = row.iter().rposition(|&v| v != 0).unwrap_or(first);
        x1 = x1.min(first);
        x2 = x2.max(last + 1);
        y1 = y1.min(y);
        y2 = y + 1;
    }
    if x1 == usize::MAX {
        return None;
    }
    Some(BoxXYXY {
        x1: x1 as f64,
        y1: y1 as f64,
        x2: x2 as f64,
        y2: y2 as f64,
    })
}

/// Greedy non-maximum suppression.
///
/// Returns retained indices in descending score order; equal scores keep the
/// lower input index first. A box is suppressed when its IoU with an already
/// retained box is strictly greater than `iou_threshold`.
pub fn nms(dets: &[(BoxXYXY, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = keep
            .iter()
            .any(|&k| iou_boxes(&dets[k].0, &dets[i].0) > iou_threshold);
        if !suppressed {
            keep.push(i);
        }
    }
    keep
}

/// A candidate point for the mask decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: f64,
    pub y: f64,
    pub grid_index: usize,
    pub heat: f64,
}

impl PointPrompt {
    pub fn new(x: f64, y: f64) -> Self {
        PointPrompt {
            x,
            y,
            grid_index: 0,
            heat: 1.0,
        }
    }

    /// Same prompt with coordinates mapped by `p -> p * scale + offset`.
    pub fn transformed(&self, scale: f64, dx: f64, dy: f64) -> PointPrompt {
        PointPrompt {
            x: self.x * scale + dx,
            y: self.y * scale + dy,
            ..*self
        }
    }
}

/// Value of the raster cell containing `(p.x, p.y)`; the point must already be
/// expressed in the mask's pixel coordinates.
pub fn point_in_mask(p: &PointPrompt, m: &BitMask) -> Result<bool> {
    let cell = raster_cell(p.x, p.y, m.width, m.height)?;
    Ok(m.data[cell.1 * m.width + cell.0] != 0)
}

pub(crate) fn raster_cell(x: f64, y: f64, width: usize, height: usize) -> Result<(usize, usize)> {
    if !(x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64) {
        return Err(Error::PointOutOfCanvas {
            x,
            y,
            width,
            height,
        });
    }
    Ok((x.floor() as usize, y.floor() as usize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxXYXY {
        BoxXYXY::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn box_iou_cases() {
        assert_eq!(iou_boxes(&b(0., 0., 2., 2.), &b(0., 0., 2., 2.)), 1.0);
        assert!((iou_boxes(&b(0., 0., 2., 2.), &b(1., 1., 3., 3.)) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou_boxes(&b(0., 0., 1., 1.), &b(2., 2., 3., 3.)), 0.0);
        assert_eq!(iou_boxes(&b(1., 1., 1., 1.), &b(1., 1., 1., 1.)), 0.0);
    }

    #[test]
    fn or_pooling_keeps_slivers() {
        // nearest sampling at stride 2 reads odd columns only
        let m = BitMask::from_fn(8, 6, |x, _| x == 2);
        assert!(m.resize_nearest(4, 3).is_empty());
        let d = m.downsample_any(4, 3);
        assert_eq!(d, BitMask::from_fn(4, 3, |x, _| x == 1));
        // uneven ratio: every source pixel lands in exactly one cell
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_mask(&mut rng, 7, 5, 0.1);
        let d = m.downsample_any(3, 2);
        for y in 0..5 {
            for x in 0..7 {
                if m.get(x, y) {
                    assert!(d.get(x * 3 / 7, y * 2 / 5));
                }
            }
        }
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoxXYXY::new(2., 0., 1., 1.).is_err());
        assert!(BoxXYXY::new(0., f64::NAN, 1., 1.).is_err());
    }

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> BitMask {
        BitMask::from_fn(w, h, |_, _| rng.random_bool(p))
    }

    #[test]
    fn mask_iou_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_mask(&mut rng, 8, 8, 0.4);
        assert_eq!(iou_masks(&m, &m).unwrap(), 1.0);
        let e = BitMask::new(8, 8);
        assert_eq!(iou_masks(&e, &e).unwrap(), 1.0);
        assert_eq!(iou_masks(&BitMask::full(8, 8), &e).unwrap(), 0.0);
        assert!(iou_masks(&BitMask::new(8, 8), &BitMask::new(8, 7)).is_err());

        for _ in 0..50 {
            let a = random_mask(&mut rng, 8, 8, 0.5);
            let c = random_mask(&mut rng, 8, 8, 0.5);
            let (mut inter, mut union) = (0, 0);
            for y in 0..8 {
                for x in 0..8 {
                    if a.get(x, y) && c.get(x, y) {
                        inter += 1;
                    }
                    if a.get(x, y) || c.get(x, y) {
                        union += 1;
                    }
                }
            }
            let expected = if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            };
            assert_eq!(iou_masks(&a, &c).unwrap(), expected);
        }
    }

    #[test]
    fn mask_box_cases() {
        let mut m = BitMask::new(10, 10);
        m.set(3, 5, true);
        assert_eq!(mask_to_box(&m), Some(b(3., 5., 4., 6.)));
        assert_eq!(mask_to_box(&BitMask::full(7, 4)), Some(b(0., 0., 7., 4.)));
        assert_eq!(mask_to_box(&BitMask::new(4, 4)), None);

        // L shape: vertical bar at x=2 rows 1..=6, foot along row 6 to x=5.
        let l = BitMask::from_fn(8, 8, |x, y| {
            (x == 2 && (1..=6).contains(&y)) || (y == 6 && (2..=5).contains(&x))
        });
        let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..8 {
            for x in 0..8 {
                if l.get(x, y) {
                    x1 = x1.min(x);
                    y1 = y1.min(y);
                    x2 = x2.max(x + 1);
                    y2 = y2.max(y + 1);
                }
            }
        }
        assert_eq!(
            mask_to_box(&l),
            Some(b(x1 as f64, y1 as f64, x2 as f64, y2 as f64))
        );
        assert_eq!(mask_to_box(&l), Some(b(2., 1., 6., 7.)));
    }

    #[test]
    fn nms_cases() {
        let same = vec![(b(0., 0., 2., 2.), 0.9), (b(0., 0., 2., 2.), 0.8)];
        assert_eq!(nms(&same, 0.5), vec![0]);
        let disjoint = vec![
            (b(0., 0., 1., 1.), 0.2),
            (b(5., 5., 6., 6.), 0.9),
            (b(9., 0., 10., 1.), 0.5),
        ];
        let mut kept = nms(&disjoint, 0.5);
        kept.sort();
        assert_eq!(kept, vec![0, 1, 2]);
        // ties: lower index first
        let tie = vec![(b(0., 0., 2., 2.), 0.5), (b(0., 0., 2., 2.), 0.5)];
        assert_eq!(nms(&tie, 0.5), vec![0]);
    }

    /// Quadratic reference: repeatedly take the best remaining box and drop
    /// everything overlapping it.
    fn nms_reference(dets: &[(BoxXYXY, f64)], thr: f64) -> Vec<usize> {
        let mut alive = vec![true; dets.len()];
        let mut keep = vec![];
        loop {
            let mut best: Option<usize> = None;
            for i in 0..dets.len() {
                if alive[i] && best.is_none_or(|j| dets[i].1 > dets[j].1) {
                    best = Some(i);
                }
            }
            let Some(i) = best else { break };
            alive[i] = false;
            keep.push(i);
            for j in 0..dets.len() {
                if alive[j] && iou_boxes(&dets[i].0, &dets[j].0) > thr {
                    alive[j] = false;
                }
            }
        }
        keep
    }

    fn random_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<(BoxXYXY, f64)> {
        (0..n)
            .map(|_| {
                let x = rng.random_range(0.0..20.0);
                let y = rng.random_range(0.0..20.0);
                let w = rng.random_range(1.0..8.0);
                let h = rng.random_range(1.0..8.0);
                (b(x, y, x + w, y + h), rng.random::<f64>())
            })
            .collect()
    }

    #[test]
    fn nms_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let dets = random_boxes(&mut rng, 20);
            assert_eq!(nms(&dets, 0.5), nms_reference(&dets, 0.5));
        }
    }

    #[test]
    fn resize_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = SoftMask::new(5, 3, (0..15).map(|_| rng.random::<f32>()).collect(), false).unwrap();
        assert_eq!(resize_mask(&m, 5, 3, ResizeMode::Bilinear), m);
        let c = SoftMask::constant(7, 9, 0.25, false);
        for (w, h) in [(3, 3), (14, 18), (1, 1), (8, 5)] {
            for mode in [ResizeMode::Bilinear, ResizeMode::Nearest] {
                assert!(resize_mask(&c, w, h, mode)
                    .data
                    .iter()
                    .all(|&v| (v - 0.25).abs() < 1e-7));
            }
        }
        // 4x4 -> 2x2 samples at source coordinate 0.5 and 2.5: plain 2x2 block means.
        let src: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let s = SoftMask::new(4, 4, src.clone(), false).unwrap();
        let out = resize_mask(&s, 2, 2, ResizeMode::Bilinear);
        let block = |x0: usize, y0: usize| {
            (src[y0 * 4 + x0]
                + src[y0 * 4 + x0 + 1]
                + src[(y0 + 1) * 4 + x0]
                + src[(y0 + 1) * 4 + x0 + 1])
                / 4.0
        };
        assert_eq!(
            out.data,
            vec![block(0, 0), block(2, 0), block(0, 2), block(2, 2)]
        );
    }

    #[test]
    fn bilinear_adjoint_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (iw, ih, ow, oh) = (5, 4, 13, 7);
        let x: Vec<f64> = (0..iw * ih).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..ow * oh).map(|_| rng.random()).collect();
        let ax = bilinear_resize_f64(&x, iw, ih, ow, oh);
        let aty = bilinear_resize_adjoint_f64(&y, iw, ih, ow, oh);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn point_lookup() {
        let full = BitMask::full(4, 4);
        assert!(point_in_mask(&PointPrompt::new(2.0, 2.0), &full).unwrap());
        assert!(!point_in_mask(&PointPrompt::new(1.5, 0.2), &BitMask::new(4, 4)).unwrap());
        let mut m = BitMask::new(4, 4);
        m.set(3, 0, true);
        assert!(point_in_mask(&PointPrompt::new(3.999, 0.0), &m).unwrap());
        assert!(!point_in_mask(&PointPrompt::new(2.999, 0.0), &m).unwrap());
        assert!(point_in_mask(&PointPrompt::new(4.0, 0.0), &m).is_err());
        assert!(point_in_mask(&PointPrompt::new(-0.1, 0.0), &m).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn box_iou_symmetric(x in 0.0..10.0f64, y in 0.0..10.0f64, w in 0.0..5.0f64, h in 0.0..5.0f64,
                              x2 in 0.0..10.0f64, y2 in 0.0..10.0f64, w2 in 0.0..5.0f64, h2 in 0.0..5.0f64) {
            let a = b(x, y, x + w, y + h);
            let c = b(x2, y2, x2 + w2, y2 + h2);
            prop_assert_eq!(iou_boxes(&a, &c), iou_boxes(&c, &a));
            if a.area() > 0.0 {
                prop_assert!((iou_boxes(&a, &a) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn mask_iou_symmetric(bits in proptest::collection::vec(0u8..2, 36), bits2 in proptest::collection::vec(0u8..2, 36)) {
            let a = BitMask::from_vec(6, 6, bits).unwrap();
            let c = BitMask::from_vec(6, 6, bits2).unwrap();
            prop_assert_eq!(iou_masks(&a, &c).unwrap(), iou_masks(&c, &a).unwrap());
            prop_assert_eq!(iou_masks(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn mask_box_is_tight(bits in proptest::collection::vec(0u8..2, 48)) {
            let m = BitMask::from_vec(8, 6, bits).unwrap();
            match mask_to_box(&m) {
                None => prop_assert!(m.is_empty()),
                Some(bx) => {
                    let mut touches = [false; 4];
                    for y in 0..6 {
                        for x in 0..8 {
                            if m.get(x, y) {
                                prop_assert!(bx.contains_point(x as f64 + 0.5, y as f64 + 0.5));
                                touches[0] |= x as f64 == bx.x1;
                                touches[1] |= y as f64 == bx.y1;
                                touches[2] |= (x + 1) as f64 == bx.x2;
                                touches[3] |= (y + 1) as f64 == bx.y2;
                            }
                        }
                    }
                    prop_assert!(touches.iter().all(|&t| t));
                }
            }
        }

        #[test]
        fn nms_idempotent_and_bounded(seed in any::<u64>(), n in 0usize..30, thr in 0.1..0.9f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dets = random_boxes(&mut rng, n);
            let kept = nms(&dets, thr);
            let sub: Vec<_> = kept.iter().map(|&i| dets[i]).collect();
            let again: Vec<usize> = nms(&sub, thr).into_iter().map(|j| kept[j]).collect();
            prop_assert_eq!(&again, &kept);
            for (i, &a) in kept.iter().enumerate() {
                for &c in &kept[i + 1..] {
                    prop_assert!(iou_boxes(&dets[a].0, &dets[c].0) <= thr);
                }
            }
        }
    }
}
