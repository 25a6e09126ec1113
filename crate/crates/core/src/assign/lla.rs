//! Loss-aware label assignment.
//!
//! Every GT is scored against every anchor by the joint loss the detector
//! would incur if that anchor were trained on that GT. Anchors whose center
//! falls outside the GT box get a large additive penalty. Each GT keeps its
//! K cheapest anchors, and an anchor claimed by several GTs goes to the one
//! with the smallest cost.
//!
//! Ordering is total: equal costs break toward the lower anchor index during
//! top-K selection and toward the lower GT index during conflict resolution.

use std::cmp::Ordering;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AssignOutcome, Assignment, GroundTruthSet, Label, Predictions, Stage1Matches};
use crate::anchors::AnchorSet;
use crate::error::AssignError;
use crate::losses::{ClsLoss, RegLoss};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlaConfig {
    /// Positives kept per GT.
    pub k: usize,
    /// Weight of the regression cost.
    pub lambda: f64,
    /// Added to the cost of anchors whose center lies outside the GT box.
    pub inbox_penalty: f64,
    /// Apply the in-box penalty at all.
    pub use_inbox: bool,
    pub cls_loss: ClsLoss,
    pub reg_loss: RegLoss,
}

impl Default for LlaConfig {
    fn default() -> Self {
        Self::anchor_based()
    }
}

impl LlaConfig {
    pub const DEFAULT_K: usize = 10;
    pub const DEFAULT_PENALTY: f64 = 100.0;

    pub fn anchor_based() -> Self {
        Self {
            k: Self::DEFAULT_K,
            lambda: 1.0,
            inbox_penalty: Self::DEFAULT_PENALTY,
            use_inbox: true,
            cls_loss: ClsLoss::default(),
            reg_loss: RegLoss::Iou,
        }
    }

    pub fn anchor_free() -> Self {
        Self {
            lambda: 1.3,
            ..Self::anchor_based()
        }
    }

    /// Checks the values a harness config may carry. The kernels themselves
    /// accept `lambda = 0` and a zero penalty for ablations.
    pub fn validate(&self) -> Result<(), AssignError> {
        if self.k < 1 {
            return Err(AssignError::InvalidParameter("k must be >= 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(AssignError::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.inbox_penalty.is_finite() && self.inbox_penalty > 10.0) {
            return Err(AssignError::InvalidParameter(format!(
                "inbox_penalty must exceed 10, got {}",
                self.inbox_penalty
            )));
        }
        self.cls_loss.validate()
    }
}

/// Component matrices kept for ablation and inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct CostComponents {
    pub cls: Array2<f64>,
    pub reg: Array2<f64>,
    pub inbox: Option<Array2<f64>>,
}

/// Dense `I x J` joint-loss matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub values: Array2<f64>,
    /// Rows of ignore-flagged GTs never select anchors.
    pub row_active: Vec<bool>,
    pub restricted: bool,
    pub components: Option<CostComponents>,
}

impl CostMatrix {
    pub fn num_gts(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_anchors(&self) -> usize {
        self.values.ncols()
    }

    /// Wraps a raw matrix with every row active.
    pub fn from_values(values: Array2<f64>) -> Self {
        let rows = values.nrows();
        Self {
            values,
            row_active: vec![true; rows],
            restricted: false,
            components: None,
        }
    }
}

fn check_dims(preds: &Predictions, gts: &GroundTruthSet, anchors: &AnchorSet) -> Result<(), AssignError> {
    if preds.len() != anchors.len() {
        return Err(AssignError::DimensionMismatch(format!(
            "{} predictions for {} anchors",
            preds.len(),
            anchors.len()
        )));
    }
    if gts.classes.len() != gts.len() || gts.ignore.len() != gts.len() {
        return Err(AssignError::DimensionMismatch(
            "ground-truth columns differ in length".into(),
        ));
    }
    let n = preds.num_classes();
    if let Some(&class) = gts.classes.iter().find(|c| **c >= n) {
        return Err(AssignError::ClassOutOfRange { class, num_classes: n });
    }
    Ok(())
}

/// `C = C_cls + lambda * C_reg` over every GT-anchor pair.
pub fn cost_matrix(
    preds: &Predictions,
    gts: &GroundTruthSet,
    anchors: &AnchorSet,
    cfg: &LlaConfig,
) -> Result<CostMatrix, AssignError> {
    build(preds, gts, anchors, cfg, false)
}

/// As [`cost_matrix`], keeping `C_cls` and `C_reg`.
pub fn cost_matrix_with_components(
    preds: &Predictions,
    gts: &GroundTruthSet,
    anchors: &AnchorSet,
    cfg: &LlaConfig,
) -> Result<CostMatrix, AssignError> {
    build(preds, gts, anchors, cfg, true)
}

fn build(
    preds: &Predictions,
    gts: &GroundTruthSet,
    anchors: &AnchorSet,
    cfg: &LlaConfig,
    keep: bool,
) -> Result<CostMatrix, AssignError> {
    check_dims(preds, gts, anchors)?;
    let (rows, cols) = (gts.len(), preds.len());

    // rows are independent; collecting in order keeps results identical
    // for any thread count
    let per_row: Vec<(Vec<f64>, Vec<f64>)> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let class = gts.classes[i];
            let gt_box = &gts.boxes[i];
            let cls: Vec<f64> = (0..cols)
                .map(|j| cfg.cls_loss.eval(preds.scores[[j, class]], true))
                .collect();
            let reg: Vec<f64> = preds.boxes.iter().map(|b| cfg.reg_loss.eval(b, gt_box)).collect();
            (cls, reg)
        })
        .collect();

    let mut values = Array2::zeros((rows, cols));
    let mut cls_m = keep.then(|| Array2::zeros((rows, cols)));
    let mut reg_m = keep.then(|| Array2::zeros((rows, cols)));
    for (i, (cls, reg)) in per_row.iter().enumerate() {
        for j in 0..cols {
            values[[i, j]] = cls[j] + cfg.lambda * reg[j];
        }
        if let (Some(c), Some(r)) = (cls_m.as_mut(), reg_m.as_mut()) {
            c.row_mut(i).assign(&ndarray::ArrayView1::from(cls));
            r.row_mut(i).assign(&ndarray::ArrayView1::from(reg));
        }
    }

    Ok(CostMatrix {
        values,
        row_active: gts.ignore.iter().map(|ig| !ig).collect(),
        restricted: false,
        components: cls_m
            .zip(reg_m)
            .map(|(cls, reg)| CostComponents { cls, reg, inbox: None }),
    })
}

/// `C_r = C + C_inbox`: adds `penalty` wherever the anchor center is outside
/// the GT box.
pub fn restrict(
    mut c: CostMatrix,
    gts: &GroundTruthSet,
    anchors: &AnchorSet,
    penalty: f64,
) -> Result<CostMatrix, AssignError> {
    if c.num_gts() != gts.len() || c.num_anchors() != anchors.len() {
        return Err(AssignError::DimensionMismatch(format!(
            "cost matrix is {}x{} but have {} GTs and {} anchors",
            c.num_gts(),
            c.num_anchors(),
            gts.len(),
            anchors.len()
        )));
    }
    let keep = c.components.is_some();
    let mut inbox = keep.then(|| Array2::zeros(c.values.raw_dim()));
    for (i, gt_box) in gts.boxes.iter().enumerate() {
        for (j, center) in anchors.centers.iter().enumerate() {
            if !gt_box.contains(*center) {
                c.values[[i, j]] += penalty;
                if let Some(m) = inbox.as_mut() {
                    m[[i, j]] = penalty;
                }
            }
        }
    }
    if let Some(comp) = c.components.as_mut() {
        comp.inbox = inbox;
    }
    c.restricted = true;
    Ok(c)
}

#[inline]
fn by_cost<'a>(row: ndarray::ArrayView1<'a, f64>) -> impl Fn(&usize, &usize) -> Ordering + 'a {
    move |a, b| row[*a].total_cmp(&row[*b]).then(a.cmp(b))
}

/// Stage 1: the `min(K, J)` cheapest anchors of every active row, in
/// ascending cost order.
pub fn top_k_matches(c: &CostMatrix, k: usize) -> Stage1Matches {
    let cols = c.num_anchors();
    let take = k.min(cols);
    let per_gt = (0..c.num_gts())
        .map(|i| {
            if !c.row_active[i] || take == 0 {
                return Vec::new();
            }
            let row = c.values.row(i);
            let cmp = by_cost(row);
            let mut idx: Vec<usize> = (0..cols).collect();
            if take < cols {
                idx.select_nth_unstable_by(take - 1, &cmp);
                idx.truncate(take);
            }
            idx.sort_unstable_by(&cmp);
            idx
        })
        .collect();
    Stage1Matches { per_gt }
}

/// Stage 2: an anchor claimed by several GTs keeps the cheapest one.
pub fn resolve_conflicts(c: &CostMatrix, matches: &Stage1Matches) -> Assignment {
    let mut best: Vec<Option<(f64, usize)>> = vec![None; c.num_anchors()];
    // ascending GT order with strict `<` keeps the lower index on ties
    for (i, set) in matches.per_gt.iter().enumerate() {
        for &j in set {
            let cost = c.values[[i, j]];
            match best[j] {
                Some((b, _)) if cost.total_cmp(&b) != Ordering::Less => {}
                _ => best[j] = Some((cost, i)),
            }
        }
    }
    Assignment {
        labels: best
            .into_iter()
            .map(|b| b.map_or(Label::Negative, |(_, i)| Label::Positive(i)))
            .collect(),
        num_gts: c.num_gts(),
    }
}

/// Top-K selection followed by min-cost conflict resolution. Never emits
/// `Ignore`.
pub fn lla_assign(c_r: &CostMatrix, cfg: &LlaConfig) -> AssignOutcome {
    let matches = top_k_matches(c_r, cfg.k);
    let assignment = resolve_conflicts(c_r, &matches);
    AssignOutcome { assignment, matches }
}

/// Full pipeline: cost matrix, optional in-box restriction, assignment.
pub fn lla(
    preds: &Predictions,
    gts: &GroundTruthSet,
    anchors: &AnchorSet,
    cfg: &LlaConfig,
) -> Result<AssignOutcome, AssignError> {
    let mut c = cost_matrix(preds, gts, anchors, cfg)?;
    if cfg.use_inbox {
        c = restrict(c, gts, anchors, cfg.inbox_penalty)?;
    }
    Ok(lla_assign(&c, cfg))
}
