//! Turns configured data sources into images with ground truth.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use denseprompt::geometry::{rle_encode, BoxXYXY, RleMask};
use denseprompt::image::RgbImage;
use denseprompt::io::coco::{load_coco, CocoAnnotation, CocoFile, CocoImage, CocoRle, CATEGORY_ID};
use denseprompt::io::odgt::load_odgt;
use denseprompt::io::ImageSource;
use denseprompt::scene::render;

use crate::config::DataSource;

/// One image with its visible-region ground truth.
#[derive(Debug, Clone)]
pub struct Item {
    pub id: u64,
    pub file_name: String,
    pub scene_seed: Option<u64>,
    pub image: RgbImage,
    pub boxes: Vec<BoxXYXY>,
    pub masks: Option<Vec<RleMask>>,
}

impl Item {
    pub fn coco_image(&self) -> CocoImage {
        CocoImage {
            id: self.id,
            width: self.image.width(),
            height: self.image.height(),
            file_name: self.file_name.clone(),
            scene_seed: self.scene_seed,
        }
    }
}

pub fn load(src: &DataSource) -> Result<Vec<Item>> {
    match src {
        DataSource::Scenes(s) => {
            let params = s.params();
            s.seeds()
                .into_iter()
                .map(|seed| {
                    let (scene, gt) = params.generate(seed)?;
                    Ok(Item {
                        id: seed,
                        file_name: format!("scene_{seed}.png"),
                        scene_seed: Some(seed),
                        image: render(&scene),
                        boxes: gt.visible_boxes.clone(),
                        masks: Some(gt.visible_masks.iter().map(rle_encode).collect()),
                    })
                })
                .collect()
        }
        DataSource::Coco { path } => {
            let file = load_coco(path)?;
            let dir = parent(path);
            let records = file.to_records()?;
            file.images
                .iter()
                .zip(records)
                .map(|(im, rec)| {
                    let ImageSource::File(name) = &rec.source else {
                        unreachable!("COCO records name files")
                    };
                    let image = read_image(&dir.join(name))?;
                    if (image.width(), image.height()) != (im.width, im.height) {
                        bail!(
                            "image {} is {}x{}, ground truth says {}x{}",
                            im.file_name,
                            image.width(),
                            image.height(),
                            im.width,
                            im.height
                        );
                    }
                    Ok(Item {
                        id: im.id,
                        file_name: im.file_name.clone(),
                        scene_seed: im.scene_seed,
                        image,
                        boxes: rec.boxes,
                        masks: rec.masks,
                    })
                })
                .collect()
        }
        DataSource::Odgt { path, image_dir } => {
            let dir = image_dir.clone().unwrap_or_else(|| parent(path));
            let loaded = load_odgt(path)?;
            for (line, why) in &loaded.malformed {
                eprintln!("warning: {}:{line}: {why}", path.display());
            }
            loaded
                .records
                .into_iter()
                .enumerate()
                .map(|(i, rec)| {
                    let ImageSource::File(file) = &rec.source else {
                        unreachable!("ODGT records name files")
                    };
                    let file = dir.join(file.file_name().unwrap_or_default());
                    Ok(Item {
                        id: i as u64 + 1,
                        file_name: file.to_string_lossy().into_owned(),
                        scene_seed: None,
                        image: read_image(&file)?,
                        boxes: rec.boxes,
                        masks: rec.masks,
                    })
                })
                .collect()
        }
    }
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .with_context(|| format!("cannot read image {}", path.display()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(RgbImage::from_raw(w, h, img.into_raw())?)
}

/// Ground truth of `items` as a COCO file.
pub fn ground_truth_coco(items: &[Item], fingerprint: &str) -> CocoFile {
    let mut file = CocoFile::new(fingerprint);
    for item in items {
        for (k, b) in item.boxes.iter().enumerate() {
            let seg = item.masks.as_ref().map(|ms| CocoRle {
                size: [ms[k].height, ms[k].width],
                counts: ms[k].counts.clone(),
            });
            let area = match &item.masks {
                Some(ms) => ms[k].area() as f64,
                None => b.area(),
            };
            file.annotations.push(CocoAnnotation {
                id: file.annotations.len() as u64 + 1,
                image_id: item.id,
                category_id: CATEGORY_ID,
                segmentation: seg,
                bbox: b.to_xywh(),
                area,
                score: None,
                iscrowd: 0,
            });
        }
        file.images.push(item.coco_image());
    }
    file
}
