//! CrowdHuman-style JSON-lines ground truth.
//!
//! Each line holds `{"ID": ..., "gtboxes": [{"tag": ..., "vbox": [x, y, w, h], ...}]}`.
//! Only `person` objects are kept and only their visible box is used.

use std::path::Path;

use serde::Deserialize;

use super::{DatasetRecord, ImageSource};
use crate::error::{Error, Result};
use crate::geometry::BoxXYXY;

#[derive(Deserialize)]
struct Line {
    #[serde(rename = "ID")]
    id: String,
    #[serde(default)]
    gtboxes: Vec<GtBox>,
}

#[derive(Deserialize)]
struct GtBox {
    tag: String,
    vbox: Option<[f64; 4]>,
}

/// Records plus the lines that could not be used.
#[derive(Debug, Clone, Default)]
pub struct OdgtLoad {
    pub records: Vec<DatasetRecord>,
    /// `(1-based line number, reason)`
    pub malformed: Vec<(usize, String)>,
}

/// Parses ODGT text. Image sources are `<ID>.jpg` under `image_dir`.
pub fn parse_odgt(text: &str, image_dir: &Path) -> Result<OdgtLoad> {
    let mut out = OdgtLoad::default();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line = match serde_json::from_str(raw) {
            Ok(l) => l,
            Err(e) => {
                out.malformed.push((lineno, e.to_string()));
                continue;
            }
        };
        let mut boxes = Vec::new();
        let mut bad = None;
        for (k, g) in line.gtboxes.iter().enumerate() {
            if g.tag != "person" {
                continue;
            }
            let Some([x, y, w, h]) = g.vbox else {
                bad = Some(format!("person {k} has no vbox"));
                break;
            };
            match BoxXYXY::from_xywh(x, y, w, h) {
                Ok(b) => boxes.push(b),
                Err(e) => {
                    bad = Some(format!("person {k}: {e}"));
                    break;
                }
            }
        }
        if let Some(reason) = bad {
            out.malformed.push((lineno, reason));
            continue;
        }
        out.records.push(DatasetRecord {
            source: ImageSource::File(image_dir.join(format!("{}.jpg", line.id))),
            image_id: line.id,
            boxes,
            masks: None,
        });
    }
    if out.records.is_empty() {
        let detail = match out.malformed.first() {
            Some((n, why)) => format!(" (line {n}: {why})"),
            None => String::new(),
        };
        return Err(Error::Dataset(format!("no valid lines{detail}")));
    }
    Ok(out)
}

pub fn load_odgt(path: &Path) -> Result<OdgtLoad> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_odgt(&text, dir).map_err(|e| match e {
        Error::Dataset(m) => Error::Dataset(format!("{}: {m}", path.display())),
        other => other,
    })
}
