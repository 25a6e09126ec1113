//! Multi-level anchor grids over an image, one level per pyramid stage
//! (stage 0 is the finest, stride 8).

use serde::{Deserialize, Serialize};

use crate::error::AnchorError;
use crate::geometry::{BBox, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Anchor boxes, `ratios x scales` per location.
    #[default]
    Box,
    /// One anchor point per location. Each point still carries a nominal
    /// square box of side `base_scale * stride`.
    Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub strides: Vec<f64>,
    /// Anchor side is `base_scale * stride` at octave scale 1.
    pub base_scale: f64,
    pub octave_scales: Vec<f64>,
    /// Height over width.
    pub aspect_ratios: Vec<f64>,
    pub mode: AnchorMode,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self::single()
    }
}

impl AnchorConfig {
    pub const DEFAULT_STRIDES: [f64; 5] = [8.0, 16.0, 32.0, 64.0, 128.0];

    /// One square anchor per location.
    pub fn single() -> Self {
        Self {
            strides: Self::DEFAULT_STRIDES.to_vec(),
            base_scale: 8.0,
            octave_scales: vec![1.0],
            aspect_ratios: vec![1.0],
            mode: AnchorMode::Box,
        }
    }

    /// Three octave scales times three aspect ratios per location.
    pub fn retinanet9() -> Self {
        Self {
            octave_scales: vec![1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)],
            aspect_ratios: vec![0.5, 1.0, 2.0],
            ..Self::single()
        }
    }

    /// Anchor-free points.
    pub fn points() -> Self {
        Self {
            mode: AnchorMode::Point,
            ..Self::single()
        }
    }

    pub fn anchors_per_location(&self) -> usize {
        match self.mode {
            AnchorMode::Box => self.octave_scales.len() * self.aspect_ratios.len(),
            AnchorMode::Point => 1,
        }
    }

    pub fn num_levels(&self) -> usize {
        self.strides.len()
    }

    pub fn validate(&self) -> Result<(), AnchorError> {
        let bad = |msg: String| Err(AnchorError::InvalidConfig(msg));
        if self.strides.is_empty() || self.strides.len() > u8::MAX as usize {
            return bad(format!("need 1..=255 strides, got {}", self.strides.len()));
        }
        if let Some(s) = self.strides.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return bad(format!("stride must be positive, got {s}"));
        }
        if !(self.base_scale.is_finite() && self.base_scale > 0.0) {
            return bad(format!("base_scale must be positive, got {}", self.base_scale));
        }
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if self.mode == AnchorMode::Box {
            if self.octave_scales.is_empty() || !positive(&self.octave_scales) {
                return bad("octave_scales must be nonempty and positive".into());
            }
            if self.aspect_ratios.is_empty() || !positive(&self.aspect_ratios) {
                return bad("aspect_ratios must be nonempty and positive".into());
            }
        }
        Ok(())
    }
}

/// Flattened anchors in level-major, row, column, anchor-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub mode: AnchorMode,
    /// Anchor boxes; nominal boxes in point mode.
    pub boxes: Vec<BBox>,
    pub centers: Vec<Point>,
    pub levels: Vec<u8>,
    pub strides: Vec<f64>,
    /// Stride of each level, indexed by stage.
    pub level_strides: Vec<f64>,
    /// Grid shape `(rows, cols)` of each level.
    pub level_shapes: Vec<(usize, usize)>,
    pub anchors_per_location: usize,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn num_levels(&self) -> usize {
        self.level_strides.len()
    }

    /// Anchor count per level.
    pub fn level_counts(&self) -> Vec<usize> {
        self.level_shapes
            .iter()
            .map(|(r, c)| r * c * self.anchors_per_location)
            .collect()
    }

    /// Index range occupied by one level in the flattened order.
    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        let counts = self.level_counts();
        let start: usize = counts[..level].iter().sum();
        start..start + counts[level]
    }
}

/// Anchor of octave scale 1 and aspect ratio 1 at `center` on `level`.
pub fn single_anchor_box(level: usize, center: Point, cfg: &AnchorConfig) -> Result<BBox, AnchorError> {
    let stride = *cfg.strides.get(level).ok_or(AnchorError::LevelOutOfRange {
        level,
        levels: cfg.strides.len(),
    })?;
    Ok(match cfg.mode {
        AnchorMode::Box => {
            let side = cfg.base_scale * stride;
            BBox::from_center(center, side, side)
        }
        AnchorMode::Point => BBox::degenerate(center),
    })
}

/// Per-location anchor shapes `(w, h)` for one level.
fn location_shapes(stride: f64, cfg: &AnchorConfig) -> Vec<(f64, f64)> {
    match cfg.mode {
        AnchorMode::Point => {
            let side = cfg.base_scale * stride;
            vec![(side, side)]
        }
        AnchorMode::Box => {
            let mut shapes = Vec::with_capacity(cfg.anchors_per_location());
            for &ratio in &cfg.aspect_ratios {
                let r = ratio.sqrt();
                for &scale in &cfg.octave_scales {
                    let size = cfg.base_scale * stride * scale;
                    shapes.push((size / r, size * r));
                }
            }
            shapes
        }
    }
}

/// Lays anchors on every level's stride-aligned grid. Anchors are not
/// clipped to the image.
pub fn build_anchor_grid(image_w: f64, image_h: f64, cfg: &AnchorConfig) -> Result<AnchorSet, AnchorError> {
    if !(image_w.is_finite() && image_h.is_finite() && image_w > 0.0 && image_h > 0.0) {
        return Err(AnchorError::InvalidImageSize {
            width: image_w,
            height: image_h,
        });
    }
    cfg.validate()?;

    let per_loc = cfg.anchors_per_location();
    let level_shapes: Vec<(usize, usize)> = cfg
        .strides
        .iter()
        .map(|s| ((image_h / s).ceil() as usize, (image_w / s).ceil() as usize))
        .collect();
    let total: usize = level_shapes.iter().map(|(r, c)| r * c * per_loc).sum();

    let mut set = AnchorSet {
        mode: cfg.mode,
        boxes: Vec::with_capacity(total),
        centers: Vec::with_capacity(total),
        levels: Vec::with_capacity(total),
        strides: Vec::with_capacity(total),
        level_strides: cfg.strides.clone(),
        level_shapes: level_shapes.clone(),
        anchors_per_location: per_loc,
    };

    for (level, (&stride, &(rows, cols))) in cfg.strides.iter().zip(&level_shapes).enumerate() {
        let shapes = location_shapes(stride, cfg);
        for row in 0..rows {
            let cy = stride * (row as f64 + 0.5);
            for col in 0..cols {
                let center = Point::new(stride * (col as f64 + 0.5), cy);
                for &(w, h) in &shapes {
                    set.boxes.push(BBox::from_center(center, w, h));
                    set.centers.push(center);
                    set.levels.push(level as u8);
                    set.strides.push(stride);
                }
            }
        }
    }
    Ok(set)
}
