//! File formats: annotations, detections, harness configuration and
//! reports. Schemas are documented in `docs/formats.md`.

mod config;
mod dataset;
mod report;
pub mod svg;

pub use config::{AnchorSection, AssignerSection, HarnessConfig, RunSection, SceneSection};
pub use dataset::{parse_coco, parse_detections, parse_odgt, write_odgt, DatasetRecord, GtBox, PERSON_TAG};
pub use report::{render_csv, render_json, round_sig, write_report, Figure, Format, Report, Table};
