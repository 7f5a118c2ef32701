//! Dataset ingestion and result files.

pub mod coco;
pub mod odgt;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::geometry::{BoxXYXY, RleMask};

/// Where a record's pixels come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    File(PathBuf),
    /// A synthetic scene regenerated from its seed.
    Scene {
        seed: u64,
    },
}

/// One image with its (visible-region) ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub image_id: String,
    pub source: ImageSource,
    pub boxes: Vec<BoxXYXY>,
    pub masks: Option<Vec<RleMask>>,
}
