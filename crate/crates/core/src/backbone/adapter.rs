//! Contract for weight-backed backbones.
//!
//! A real adapter wraps a promptable segmentation model and a
//! self-supervised ViT. The shapes it must produce:
//!
//! * input image: RGB, 8 bits per channel, row-major `H x W x 3`;
//! * `encode_image`: `ceil(H/16) x ceil(W/16) x 256` image embedding;
//! * `extract_semantic_features`: `ceil(H/14) x ceil(W/14) x C` patch tokens
//!   from the last block (C = 1024 for the large variant);
//! * `decode_prompts`: four `256 x 256` low-resolution logit maps per
//!   prompt, the final-layer mask tokens (`4 x 256`) and IoU token
//!   (`1 x 256`), and the frozen IoU head output (`4`).
//!
//! Which decoder layer the tokens should be tapped from is not pinned down;
//! final-layer tokens are the default assumption here and the first thing
//! to revisit when wiring a runtime.
//!
//! No inference runtime ships with this crate, so every call reports
//! [`Error::BackendUnavailable`]. Nothing silently falls back to the oracle.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{
    Backbones, BackendCaps, DecodeResult, FeatureMap, ImageEncoder, MaskDecoder, SemanticEncoder,
};
use crate::error::{Error, Result};
use crate::geometry::{BitMask, BoxXYXY, PointPrompt};
use crate::image::RgbImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealAdapterConfig {
    pub segmenter_weights: PathBuf,
    pub semantic_weights: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RealAdapter {
    cfg: RealAdapterConfig,
}

impl RealAdapter {
    /// Checks that both weight files exist. Even when they do, the adapter
    /// cannot run without an inference runtime.
    pub fn load(cfg: RealAdapterConfig) -> Result<Self> {
        for p in [&cfg.segmenter_weights, &cfg.semantic_weights] {
            if !p.is_file() {
                return Err(Error::BackendUnavailable(format!(
                    "weight file {} not found",
                    p.display()
                )));
            }
        }
        Ok(RealAdapter { cfg })
    }

    fn unavailable<T>(&self) -> Result<T> {
        Err(Error::BackendUnavailable(format!(
            "no inference runtime for weights {}",
            self.cfg.segmenter_weights.display()
        )))
    }
}

impl ImageEncoder for RealAdapter {
    fn encode_image(&self, _image: &RgbImage) -> Result<FeatureMap> {
        self.unavailable()
    }
}

impl SemanticEncoder for RealAdapter {
    fn extract_semantic_features(&self, _image: &RgbImage) -> Result<FeatureMap> {
        self.unavailable()
    }
}

impl MaskDecoder for RealAdapter {
    fn decode_prompts(
        &self,
        _embedding: &FeatureMap,
        _prompts: &[PointPrompt],
    ) -> Result<DecodeResult> {
        self.unavailable()
    }

    fn decode_box_prompt(&self, _embedding: &FeatureMap, _bbox: &BoxXYXY) -> Result<BitMask> {
        self.unavailable()
    }
}

impl Backbones for RealAdapter {
    fn caps(&self) -> BackendCaps {
        BackendCaps {
            patch_size: 14,
            feature_channels: 1024,
            token_channels: 256,
            mask_stride: 4,
            embed_stride: 16,
            embed_channels: 256,
        }
    }
}
