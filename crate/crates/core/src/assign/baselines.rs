//! Hand-crafted assigners: IoU thresholds, center sampling with FPN scale
//! ranges, and adaptive IoU thresholds over distance-ranked candidates.

use serde::{Deserialize, Serialize};

use super::{AssignOutcome, Assignment, GroundTruthSet, Label, Stage1Matches};
use crate::anchors::AnchorSet;
use crate::error::AssignError;
use crate::geometry::iou;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetinaConfig {
    pub pos_thr: f64,
    pub neg_thr: f64,
    /// Also give every GT the anchors achieving its best IoU, even below
    /// `pos_thr`.
    pub low_quality_matches: bool,
}

impl Default for RetinaConfig {
    fn default() -> Self {
        Self {
            pos_thr: 0.5,
            neg_thr: 0.4,
            low_quality_matches: false,
        }
    }
}

impl RetinaConfig {
    pub fn validate(&self) -> Result<(), AssignError> {
        if !(0.0 <= self.neg_thr && self.neg_thr <= self.pos_thr && self.pos_thr <= 1.0) {
            return Err(AssignError::InvalidParameter(format!(
                "need 0 <= neg_thr <= pos_thr <= 1, got neg {} pos {}",
                self.neg_thr, self.pos_thr
            )));
        }
        Ok(())
    }
}

/// Positive above `pos_thr` max IoU, negative below `neg_thr`, ignored in
/// between.
pub fn retinanet_assign(anchors: &AnchorSet, gts: &GroundTruthSet, cfg: &RetinaConfig) -> AssignOutcome {
    let active: Vec<usize> = gts.active().collect();
    let mut per_gt = vec![Vec::new(); gts.len()];
    let mut labels = Vec::with_capacity(anchors.len());
    let mut gt_best = vec![0.0f64; gts.len()];
    let mut ious = vec![0.0f64; gts.len()];

    let mut all_ious = cfg.low_quality_matches.then(Vec::new);
    for (j, anchor) in anchors.boxes.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for &i in &active {
            let v = iou(anchor, &gts.boxes[i]);
            ious[i] = v;
            gt_best[i] = gt_best[i].max(v);
            if v > cfg.pos_thr {
                per_gt[i].push(j);
            }
            if best.is_none_or(|(b, _)| v > b) {
                best = Some((v, i));
            }
        }
        if let Some(store) = all_ious.as_mut() {
            store.extend(active.iter().map(|&i| ious[i]));
        }
        labels.push(match best {
            Some((v, i)) if v > cfg.pos_thr => Label::Positive(i),
            Some((v, _)) if v >= cfg.neg_thr => Label::Ignore,
            _ => Label::Negative,
        });
    }

    if let Some(store) = all_ious {
        let n = active.len();
        for (slot, &i) in active.iter().enumerate() {
            if gt_best[i] <= 0.0 {
                continue;
            }
            for j in 0..anchors.len() {
                if store[j * n + slot] == gt_best[i] {
                    labels[j] = Label::Positive(i);
                    if !per_gt[i].contains(&j) {
                        per_gt[i].push(j);
                    }
                }
            }
        }
        for set in &mut per_gt {
            set.sort_unstable();
        }
    }

    AssignOutcome {
        assignment: Assignment {
            labels,
            num_gts: gts.len(),
        },
        matches: Stage1Matches { per_gt },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcosConfig {
    /// Center-sampling half-width in units of the level stride.
    pub radius: f64,
    /// Allowed `max(l, t, r, b)` per level, inclusive.
    pub scale_ranges: Vec<[f64; 2]>,
}

impl Default for FcosConfig {
    fn default() -> Self {
        Self {
            radius: 1.5,
            scale_ranges: vec![[0.0, 64.0], [64.0, 128.0], [128.0, 256.0], [256.0, 512.0], [512.0, 1e8]],
        }
    }
}

impl FcosConfig {
    pub fn validate(&self, num_levels: usize) -> Result<(), AssignError> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(AssignError::InvalidParameter(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if self.scale_ranges.len() != num_levels {
            return Err(AssignError::DimensionMismatch(format!(
                "{} scale ranges for {} levels",
                self.scale_ranges.len(),
                num_levels
            )));
        }
        if self
            .scale_ranges
            .iter()
            .any(|[lo, hi]| lo.is_nan() || hi.is_nan() || lo > hi)
        {
            return Err(AssignError::InvalidParameter("scale range with lo > hi".into()));
        }
        Ok(())
    }
}

/// Center sampling within `radius * stride` of the GT center (clipped to the
/// GT box) plus the level's regression range. A point eligible for several
/// GTs goes to the smallest one.
pub fn fcos_assign(anchors: &AnchorSet, gts: &GroundTruthSet, cfg: &FcosConfig) -> Result<AssignOutcome, AssignError> {
    cfg.validate(anchors.num_levels())?;
    let active: Vec<usize> = gts.active().collect();
    let mut per_gt = vec![Vec::new(); gts.len()];
    let mut labels = Vec::with_capacity(anchors.len());

    for (j, p) in anchors.centers.iter().enumerate() {
        let level = anchors.levels[j] as usize;
        let reach = cfg.radius * anchors.strides[j];
        let [lo, hi] = cfg.scale_ranges[level];
        let mut best: Option<(f64, usize)> = None;
        for &i in &active {
            let g = &gts.boxes[i];
            if !g.contains(*p) {
                continue;
            }
            let c = g.center();
            if (p.x - c.x).abs() > reach || (p.y - c.y).abs() > reach {
                continue;
            }
            let max_reg = (p.x - g.x1).max(p.y - g.y1).max(g.x2 - p.x).max(g.y2 - p.y);
            if max_reg < lo || max_reg > hi {
                continue;
            }
            per_gt[i].push(j);
            let area = g.area();
            if best.is_none_or(|(a, _)| area < a) {
                best = Some((area, i));
            }
        }
        labels.push(best.map_or(Label::Negative, |(_, i)| Label::Positive(i)));
    }

    Ok(AssignOutcome {
        assignment: Assignment {
            labels,
            num_gts: gts.len(),
        },
        matches: Stage1Matches { per_gt },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtssConfig {
    /// Candidates per level, nearest by center distance.
    pub top_candidates: usize,
}

impl Default for AtssConfig {
    fn default() -> Self {
        Self { top_candidates: 9 }
    }
}

/// `mean + std` of candidate IoUs, with the sample (n - 1) deviation. A
/// single candidate has zero deviation.
pub fn atss_threshold(ious: &[f64]) -> f64 {
    let n = ious.len();
    if n == 0 {
        return f64::INFINITY;
    }
    let mean = ious.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return mean;
    }
    let var = ious.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    mean + var.sqrt()
}

/// Adaptive threshold over each GT's distance-ranked candidates; survivors
/// must also have their center inside the GT. Conflicts go to the highest
/// IoU.
pub fn atss_assign(anchors: &AnchorSet, gts: &GroundTruthSet, cfg: &AtssConfig) -> AssignOutcome {
    let mut per_gt = vec![Vec::new(); gts.len()];
    let mut best: Vec<Option<(f64, usize)>> = vec![None; anchors.len()];

    for i in gts.active() {
        let g = &gts.boxes[i];
        let c = g.center();
        let mut candidates = Vec::new();
        for level in 0..anchors.num_levels() {
            let range = anchors.level_range(level);
            let mut idx: Vec<(f64, usize)> = range
                .map(|j| {
                    let p = anchors.centers[j];
                    ((p.x - c.x).powi(2) + (p.y - c.y).powi(2), j)
                })
                .collect();
            idx.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            candidates.extend(idx.into_iter().take(cfg.top_candidates).map(|(_, j)| j));
        }
        let ious: Vec<f64> = candidates.iter().map(|&j| iou(&anchors.boxes[j], g)).collect();
        let thr = atss_threshold(&ious);
        for (&j, &v) in candidates.iter().zip(&ious) {
            if v >= thr && g.contains(anchors.centers[j]) {
                per_gt[i].push(j);
                if best[j].is_none_or(|(b, _)| v > b) {
                    best[j] = Some((v, i));
                }
            }
        }
        per_gt[i].sort_unstable();
    }

    AssignOutcome {
        assignment: Assignment {
            labels: best
                .into_iter()
                .map(|b| b.map_or(Label::Negative, |(_, i)| Label::Positive(i)))
                .collect(),
            num_gts: gts.len(),
        },
        matches: Stage1Matches { per_gt },
    }
}
