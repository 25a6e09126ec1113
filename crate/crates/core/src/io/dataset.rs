//! Annotation and detection files: CrowdHuman odgt lines, COCO-style JSON,
//! and COCO-style detection results.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::assign::GroundTruthSet;
use crate::error::IoError;
use crate::geometry::BBox;
use crate::metrics::Detection;

pub const PERSON_TAG: &str = "person";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtBox {
    pub tag: String,
    pub class: usize,
    pub full: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible: Option<BBox>,
    #[serde(default)]
    pub ignore: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    pub gtboxes: Vec<GtBox>,
}

impl DatasetRecord {
    pub fn ground_truth(&self) -> GroundTruthSet {
        let mut gts = GroundTruthSet::new();
        for g in &self.gtboxes {
            gts.push(g.full, g.class, g.ignore);
        }
        gts
    }

    pub fn visible(&self) -> Vec<Option<BBox>> {
        self.gtboxes.iter().map(|g| g.visible).collect()
    }

    /// Declared size, or the extent of the boxes when the file omits it.
    pub fn image_size(&self) -> (f64, f64) {
        let ext = |f: fn(&BBox) -> f64| self.gtboxes.iter().map(|g| f(&g.full)).fold(1.0, f64::max);
        (
            self.width.unwrap_or_else(|| ext(|b| b.x2).ceil()),
            self.height.unwrap_or_else(|| ext(|b| b.y2).ceil()),
        )
    }
}

fn xywh(v: [f64; 4]) -> Result<BBox, String> {
    BBox::try_from_xywh(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
struct OdgtLine {
    #[serde(rename = "ID")]
    id: String,
    width: Option<f64>,
    height: Option<f64>,
    #[serde(default)]
    gtboxes: Vec<OdgtBox>,
}

#[derive(Deserialize)]
struct OdgtBox {
    tag: String,
    fbox: [f64; 4],
    vbox: Option<[f64; 4]>,
    #[serde(default)]
    extra: OdgtExtra,
}

#[derive(Default, Deserialize)]
struct OdgtExtra {
    #[serde(default)]
    ignore: i64,
}

/// Reads JSON-lines annotations. `fbox`/`vbox` are `[x, y, w, h]`; head
/// boxes and unrecognised fields are skipped. Tags other than `person` are
/// kept as ignore regions. Blank lines are allowed.
pub fn parse_odgt<R: BufRead>(reader: R) -> Result<Vec<DatasetRecord>, IoError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| IoError::Odgt { line: line_no, message };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: OdgtLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if !seen.insert(raw.id.clone()) {
            return Err(err(format!("duplicate image ID `{}`", raw.id)));
        }
        let mut gtboxes = Vec::with_capacity(raw.gtboxes.len());
        for b in raw.gtboxes {
            let full = xywh(b.fbox).map_err(&err)?;
            let visible = b.vbox.map(xywh).transpose().map_err(&err)?;
            gtboxes.push(GtBox {
                ignore: b.extra.ignore == 1 || b.tag != PERSON_TAG,
                tag: b.tag,
                class: 0,
                full,
                visible,
            });
        }
        out.push(DatasetRecord {
            image_id: raw.id,
            width: raw.width,
            height: raw.height,
            gtboxes,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct OdgtOutLine<'a> {
    #[serde(rename = "ID")]
    id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    height: Option<f64>,
    gtboxes: Vec<OdgtOutBox<'a>>,
}

#[derive(Serialize)]
struct OdgtOutBox<'a> {
    tag: &'a str,
    fbox: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    vbox: Option<[f64; 4]>,
    extra: OdgtOutExtra,
}

#[derive(Serialize)]
struct OdgtOutExtra {
    ignore: i64,
}

/// Inverse of [`parse_odgt`] for records it could have produced. Corner to
/// size conversion is exact for boxes on the pixel grid.
pub fn write_odgt<W: Write>(records: &[DatasetRecord], mut w: W) -> Result<(), IoError> {
    for r in records {
        let line = OdgtOutLine {
            id: &r.image_id,
            width: r.width,
            height: r.height,
            gtboxes: r
                .gtboxes
                .iter()
                .map(|g| OdgtOutBox {
                    tag: &g.tag,
                    fbox: g.full.to_xywh(),
                    vbox: g.visible.map(BBox::to_xywh),
                    extra: OdgtOutExtra {
                        ignore: g.ignore as i64,
                    },
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| IoError::file("<odgt output>", e))?;
    }
    Ok(())
}

/// Numeric or string image identifier, normalised to a string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Deserialize)]
#[serde(untagged)]
enum ImageId {
    Num(u64),
    Str(String),
}

impl ImageId {
    fn into_string(self) -> String {
        match self {
            ImageId::Num(n) => n.to_string(),
            ImageId::Str(s) => s,
        }
    }
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: ImageId,
    width: Option<f64>,
    height: Option<f64>,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: ImageId,
    bbox: [f64; 4],
    #[serde(default)]
    category_id: Option<u64>,
    #[serde(default)]
    iscrowd: u8,
    #[serde(default)]
    vbox: Option<[f64; 4]>,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

fn located<T: serde::de::DeserializeOwned>(text: &str, wrap: impl Fn(String, String) -> IoError) -> Result<T, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        wrap(path, e.into_inner().to_string())
    })
}

/// Reads a COCO-style annotation file. `iscrowd` boxes become ignore
/// regions; classes are category indices in ascending id order (all 0 when
/// the file lists no categories).
pub fn parse_coco(text: &str) -> Result<Vec<DatasetRecord>, IoError> {
    let err = |path: String, message: String| IoError::Coco { path, message };
    let file: CocoFile = located(text, err)?;
    let mut cats: Vec<&CocoCategory> = file.categories.iter().collect();
    cats.sort_by_key(|c| c.id);

    let mut index = BTreeMap::new();
    let mut records = Vec::with_capacity(file.images.len());
    for (i, img) in file.images.into_iter().enumerate() {
        let id = img.id.into_string();
        if index.insert(id.clone(), records.len()).is_some() {
            return Err(err(format!("images[{i}].id"), format!("duplicate image id `{id}`")));
        }
        records.push(DatasetRecord {
            image_id: id,
            width: img.width,
            height: img.height,
            gtboxes: Vec::new(),
        });
    }
    for (i, a) in file.annotations.into_iter().enumerate() {
        let at = |field: &str| format!("annotations[{i}].{field}");
        let id = a.image_id.into_string();
        let &r = index
            .get(&id)
            .ok_or_else(|| err(at("image_id"), format!("unknown image id `{id}`")))?;
        let full = xywh(a.bbox).map_err(|m| err(at("bbox"), m))?;
        let visible = a.vbox.map(xywh).transpose().map_err(|m| err(at("vbox"), m))?;
        let (class, tag) = match a.category_id {
            None => (0, PERSON_TAG.to_string()),
            Some(c) if cats.is_empty() => (0, c.to_string()),
            Some(c) => {
                let k = cats
                    .iter()
                    .position(|x| x.id == c)
                    .ok_or_else(|| err(at("category_id"), format!("unknown category {c}")))?;
                (k, cats[k].name.clone())
            }
        };
        records[r].gtboxes.push(GtBox {
            tag,
            class,
            full,
            visible,
            ignore: a.iscrowd != 0,
        });
    }
    Ok(records)
}

#[derive(Deserialize)]
struct RawDetection {
    image_id: ImageId,
    bbox: [f64; 4],
    score: f64,
}

/// Reads a COCO results array: `[{"image_id", "bbox": [x, y, w, h], "score"}]`.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>, IoError> {
    let err = |path: String, message: String| IoError::Detections { path, message };
    let raw: Vec<RawDetection> = located(text, err)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, d)| {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(err(format!("[{i}].score"), format!("score {} outside [0, 1]", d.score)));
            }
            let bbox = xywh(d.bbox).map_err(|m| err(format!("[{i}].bbox"), m))?;
            Ok(Detection::new(bbox, d.score, d.image_id.into_string()))
        })
        .collect()
}
