//! COCO-style JSON for ground truth and detection results.
//!
//! Segmentations use the uncompressed RLE form (`{"size": [h, w],
//! "counts": [...]}`), column-major like [`crate::geometry::rle_encode`].
//! Boxes are `[x, y, w, h]`. Everything is single-category (`1`).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetRecord, ImageSource};
use crate::error::{Error, Result};
use crate::geometry::{BoxXYXY, RleMask};
use crate::pipeline::Detection;

pub const CATEGORY_ID: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoInfo {
    #[serde(default)]
    pub description: String,
    /// Fingerprint of the configuration that produced the file.
    #[serde(default)]
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    pub file_name: String,
    /// Synthetic scenes record their generator seed instead of a file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoRle {
    /// `[height, width]`
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<CocoRle>,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<CocoInfo>,
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoFile {
    pub fn new(fingerprint: &str) -> Self {
        CocoFile {
            info: Some(CocoInfo {
                description: "denseprompt annotations".into(),
                fingerprint: fingerprint.into(),
            }),
            images: Vec::new(),
            annotations: Vec::new(),
            categories: vec![CocoCategory {
                id: CATEGORY_ID,
                name: "person".into(),
            }],
        }
    }

    /// Appends an image and its detections; annotation ids continue from
    /// the current count.
    pub fn push_detections(&mut self, image: CocoImage, detections: &[Detection]) {
        for d in detections {
            let id = self.annotations.len() as u64 + 1;
            self.annotations.push(CocoAnnotation {
                id,
                image_id: image.id,
                category_id: CATEGORY_ID,
                segmentation: Some(CocoRle {
                    size: [d.mask.height, d.mask.width],
                    counts: d.mask.counts.clone(),
                }),
                bbox: d.bbox.to_xywh(),
                area: d.mask.area() as f64,
                score: Some(d.score),
                iscrowd: 0,
            });
        }
        self.images.push(image);
    }

    /// Checks cross references and mask shapes.
    pub fn validate(&self) -> Result<()> {
        let mut dims = HashMap::new();
        for im in &self.images {
            if dims.insert(im.id, (im.width, im.height)).is_some() {
                return Err(Error::Dataset(format!("duplicate image id {}", im.id)));
            }
        }
        for a in &self.annotations {
            let Some(&(w, h)) = dims.get(&a.image_id) else {
                return Err(Error::Dataset(format!(
                    "annotation {} refers to unknown image {}",
                    a.id, a.image_id
                )));
            };
            let [_, _, bw, bh] = a.bbox;
            if !a.bbox.iter().all(|v| v.is_finite()) || bw < 0.0 || bh < 0.0 {
                return Err(Error::Dataset(format!(
                    "annotation {} has invalid bbox {:?}",
                    a.id, a.bbox
                )));
            }
            if let Some(seg) = &a.segmentation {
                if seg.size != [h, w] {
                    return Err(Error::Dataset(format!(
                        "annotation {}: segmentation size {:?} does not match image {} ({}x{})",
                        a.id, seg.size, a.image_id, w, h
                    )));
                }
                let total: u64 = seg.counts.iter().map(|&c| c as u64).sum();
                if total != (w * h) as u64 {
                    return Err(Error::Dataset(format!(
                        "annotation {}: RLE covers {total} pixels, image has {}",
                        a.id,
                        w * h
                    )));
                }
            }
        }
        Ok(())
    }

    /// Detections of one image, in file order.
    pub fn detections(&self, image_id: u64) -> Result<Vec<Detection>> {
        self.annotations
            .iter()
            .filter(|a| a.image_id == image_id)
            .map(|a| {
                let seg = a.segmentation.as_ref().ok_or_else(|| {
                    Error::Dataset(format!("annotation {} has no segmentation", a.id))
                })?;
                let [x, y, w, h] = a.bbox;
                Ok(Detection {
                    mask: rle_of(seg),
                    bbox: BoxXYXY::from_xywh(x, y, w, h)?,
                    score: a.score.unwrap_or(1.0),
                    crop: 0,
                })
            })
            .collect()
    }

    /// Boxes and scores of one image, in file order; unscored
    /// annotations count as score 1.
    pub fn boxes(&self, image_id: u64) -> Result<Vec<(BoxXYXY, f64)>> {
        self.annotations
            .iter()
            .filter(|a| a.image_id == image_id)
            .map(|a| {
                let [x, y, w, h] = a.bbox;
                Ok((BoxXYXY::from_xywh(x, y, w, h)?, a.score.unwrap_or(1.0)))
            })
            .collect()
    }

    /// Ground-truth view: one record per image with its boxes. Sources are
    /// the file names as written; a scene seed is only metadata here.
    pub fn to_records(&self) -> Result<Vec<DatasetRecord>> {
        self.images
            .iter()
            .map(|im| {
                let anns: Vec<&CocoAnnotation> = self
                    .annotations
                    .iter()
                    .filter(|a| a.image_id == im.id)
                    .collect();
                let boxes = anns
                    .iter()
                    .map(|a| {
                        let [x, y, w, h] = a.bbox;
                        BoxXYXY::from_xywh(x, y, w, h)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let masks = anns
                    .iter()
                    .map(|a| a.segmentation.as_ref().map(rle_of))
                    .collect::<Option<Vec<_>>>();
                Ok(DatasetRecord {
                    image_id: im.id.to_string(),
                    source: ImageSource::File(im.file_name.clone().into()),
                    boxes,
                    masks,
                })
            })
            .collect()
    }
}

fn rle_of(seg: &CocoRle) -> RleMask {
    RleMask {
        width: seg.size[1],
        height: seg.size[0],
        counts: seg.counts.clone(),
    }
}

pub fn to_json(file: &CocoFile) -> Result<String> {
    let mut s = serde_json::to_string_pretty(file)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(text: &str) -> Result<CocoFile> {
    let file: CocoFile = serde_json::from_str(text)
        .map_err(|e| Error::Dataset(format!("COCO schema violation: {e}")))?;
    file.validate()?;
    Ok(file)
}

pub fn save_coco(file: &CocoFile, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(file)?)?;
    Ok(())
}

pub fn load_coco(path: &Path) -> Result<CocoFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mask_to_box, rle_decode, rle_encode, BitMask};

    fn det(x0: usize, score: f64) -> Detection {
        let m = BitMask::from_fn(20, 10, |x, y| x >= x0 && x < x0 + 4 && (2..7).contains(&y));
        Detection {
            bbox: mask_to_box(&m).unwrap(),
            mask: rle_encode(&m),
            score,
            crop: 0,
        }
    }

    fn image(id: u64) -> CocoImage {
        CocoImage {
            id,
            width: 20,
            height: 10,
            file_name: format!("{id}.png"),
            scene_seed: Some(id),
        }
    }

    #[test]
    fn round_trip() {
        let mut f = CocoFile::new("fp");
        let dets = vec![det(1, 0.9), det(9, 1.0 / 3.0)];
        f.push_detections(image(7), &dets);
        f.push_detections(image(8), &[]);
        let back = from_json(&to_json(&f).unwrap()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.detections(7).unwrap(), dets);
        let m = rle_decode(&back.detections(7).unwrap()[1].mask).unwrap();
        assert_eq!(rle_encode(&m), dets[1].mask);
        assert_eq!(back.annotations[0].bbox, [1.0, 2.0, 4.0, 5.0]);
        let recs = back.to_records().unwrap();
        assert_eq!(recs[0].boxes.len(), 2);
        assert_eq!(recs[1].source, ImageSource::File("8.png".into()));
    }

    #[test]
    fn empty_results_are_valid() {
        let f = CocoFile::new("fp");
        let text = to_json(&f).unwrap();
        assert!(text.contains("\"annotations\": []"));
        assert_eq!(from_json(&text).unwrap(), f);
    }

    #[test]
    fn schema_violations_are_named() {
        let mut f = CocoFile::new("");
        f.push_detections(image(1), &[det(0, 0.5)]);
        let mut bad = f.clone();
        bad.annotations[0].image_id = 5;
        assert!(bad
            .validate()
            .unwrap_err()
            .to_string()
            .contains("unknown image 5"));
        let mut bad = f.clone();
        bad.annotations[0].segmentation.as_mut().unwrap().size = [20, 10];
        assert!(bad
            .validate()
            .unwrap_err()
            .to_string()
            .contains("segmentation size"));
        let e = from_json(r#"{"images": [], "annotations": [{"id": 1}], "categories": []}"#)
            .unwrap_err();
        assert!(e.to_string().contains("schema violation"), "{e}");
    }
}
