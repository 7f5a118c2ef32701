//! Interfaces to the frozen foundation components: an image encoder and a
//! prompt-conditioned mask decoder on the segmentation side, and a semantic
//! patch-feature extractor. Everything downstream talks to these traits only.
//!
//! [`OracleBackend`] implements them from rendered synthetic scenes;
//! [`RealAdapter`] documents the contract a weight-backed implementation
//! has to meet.

mod adapter;
mod oracle;

use std::sync::Arc;

pub use adapter::{RealAdapter, RealAdapterConfig};
pub use oracle::{OracleBackend, OracleConfig};

use crate::error::{Error, Result};
use crate::geometry::{BitMask, BoxXYXY, PointPrompt, SoftMask};
use crate::image::RgbImage;

/// Number of candidate masks the decoder emits per prompt.
pub const CANDIDATES: usize = 4;

/// Dense `height x width x channels` feature grid, row-major, channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "feature data has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Feature vector of cell `(y, x)`.
    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn cell(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }
}

/// Decoder output for a batch of `n` prompts.
#[derive(Debug, Clone)]
pub struct DecodeResult {
    /// Candidate mask logits per prompt at the decoder's native resolution.
    /// Candidates are immutable and may be shared between prompts.
    pub masks: Vec<[Arc<SoftMask>; CANDIDATES]>,
    /// `n x 4 x token_channels`
    pub mask_tokens: Vec<f64>,
    /// `n x 1 x token_channels`
    pub iou_token: Vec<f64>,
    /// `n x 4`, output of the decoder's own (frozen) IoU head.
    pub native_iou: Vec<f64>,
    pub token_channels: usize,
}

impl DecodeResult {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn mask_token(&self, i: usize, j: usize) -> &[f64] {
        let c = self.token_channels;
        let off = (i * CANDIDATES + j) * c;
        &self.mask_tokens[off..off + c]
    }

    pub fn iou_token_of(&self, i: usize) -> &[f64] {
        let c = self.token_channels;
        &self.iou_token[i * c..(i + 1) * c]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.masks.len();
        let c = self.token_channels;
        if self.mask_tokens.len() != n * CANDIDATES * c
            || self.iou_token.len() != n * c
            || self.native_iou.len() != n * CANDIDATES
        {
            return Err(Error::DimensionMismatch(format!(
                "decode result shapes inconsistent for {n} prompts and {c} token channels"
            )));
        }
        let finite = self
            .mask_tokens
            .iter()
            .chain(&self.iou_token)
            .chain(&self.native_iou)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::DimensionMismatch("non-finite decoder output".into()));
        }
        Ok(())
    }

    /// Keeps only the listed prompts, in the given order.
    pub fn select(&self, rows: &[usize]) -> DecodeResult {
        let c = self.token_channels;
        let mut out = DecodeResult {
            masks: Vec::with_capacity(rows.len()),
            mask_tokens: Vec::with_capacity(rows.len() * CANDIDATES * c),
            iou_token: Vec::with_capacity(rows.len() * c),
            native_iou: Vec::with_capacity(rows.len() * CANDIDATES),
            token_channels: c,
        };
        for &i in rows {
            out.masks.push(self.masks[i].clone());
            out.mask_tokens
                .extend_from_slice(&self.mask_tokens[i * CANDIDATES * c..(i + 1) * CANDIDATES * c]);
            out.iou_token.extend_from_slice(self.iou_token_of(i));
            out.native_iou
                .extend_from_slice(&self.native_iou[i * CANDIDATES..(i + 1) * CANDIDATES]);
        }
        out
    }
}

/// Static shape information a backend reports about its outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendCaps {
    /// Semantic feature patch size `s`: features are `ceil(H/s) x ceil(W/s)`.
    pub patch_size: usize,
    pub feature_channels: usize,
    pub token_channels: usize,
    /// Decoder masks are `ceil(H/mask_stride) x ceil(W/mask_stride)`.
    pub mask_stride: usize,
    /// Image embedding is `ceil(H/embed_stride) x ceil(W/embed_stride)`.
    pub embed_stride: usize,
    pub embed_channels: usize,
}

impl BackendCaps {
    pub fn feature_dims(&self, image_w: usize, image_h: usize) -> (usize, usize) {
        (
            image_w.div_ceil(self.patch_size),
            image_h.div_ceil(self.patch_size),
        )
    }

    pub fn mask_dims(&self, image_w: usize, image_h: usize) -> (usize, usize) {
        (
            image_w.div_ceil(self.mask_stride),
            image_h.div_ceil(self.mask_stride),
        )
    }

    pub fn embed_dims(&self, image_w: usize, image_h: usize) -> (usize, usize) {
        (
            image_w.div_ceil(self.embed_stride),
            image_h.div_ceil(self.embed_stride),
        )
    }
}

/// Segmentation-side image encoder.
pub trait ImageEncoder {
    fn encode_image(&self, image: &RgbImage) -> Result<FeatureMap>;
}

/// Semantic patch-feature extractor.
pub trait SemanticEncoder {
    fn extract_semantic_features(&self, image: &RgbImage) -> Result<FeatureMap>;
}

/// Prompt-conditioned mask decoder.
pub trait MaskDecoder {
    /// Point prompts are in image pixel coordinates.
    fn decode_prompts(
        &self,
        embedding: &FeatureMap,
        prompts: &[PointPrompt],
    ) -> Result<DecodeResult>;

    /// Best single mask for a box prompt, at image resolution.
    fn decode_box_prompt(&self, embedding: &FeatureMap, bbox: &BoxXYXY) -> Result<BitMask>;
}

/// The full frozen-backbone bundle.
pub trait Backbones: ImageEncoder + SemanticEncoder + MaskDecoder + Send + Sync {
    fn caps(&self) -> BackendCaps;
}
