//! Label assignment: loss-aware top-K matching plus the IoU, center-sampling
//! and adaptive-threshold baselines it is compared against.

mod baselines;
mod lla;

pub use baselines::{atss_assign, atss_threshold, fcos_assign, retinanet_assign, AtssConfig, FcosConfig, RetinaConfig};
pub use lla::{
    cost_matrix, cost_matrix_with_components, lla, lla_assign, resolve_conflicts, restrict, top_k_matches,
    CostComponents, CostMatrix, LlaConfig,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::AssignError;
use crate::geometry::BBox;

/// Per-anchor class probabilities (`J x N`) and regressed boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub scores: Array2<f64>,
    pub boxes: Vec<BBox>,
}

impl Predictions {
    pub fn new(scores: Array2<f64>, boxes: Vec<BBox>) -> Result<Self, AssignError> {
        if scores.nrows() != boxes.len() {
            return Err(AssignError::DimensionMismatch(format!(
                "{} score rows but {} boxes",
                scores.nrows(),
                boxes.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(AssignError::InvalidParameter(format!("score {s} outside [0, 1]")));
        }
        if let Some(b) = boxes.iter().find(|b| !b.is_valid()) {
            return Err(AssignError::InvalidParameter(format!("invalid predicted box {b:?}")));
        }
        Ok(Self { scores, boxes })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.scores.ncols()
    }
}

/// Ground-truth boxes for one image, stored column-wise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub boxes: Vec<BBox>,
    pub classes: Vec<usize>,
    /// Ignore regions: never positive sources, neutral during evaluation.
    pub ignore: Vec<bool>,
}

impl GroundTruthSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// All boxes as non-ignored class 0.
    pub fn from_boxes(boxes: Vec<BBox>) -> Self {
        let n = boxes.len();
        Self {
            boxes,
            classes: vec![0; n],
            ignore: vec![false; n],
        }
    }

    pub fn push(&mut self, bbox: BBox, class: usize, ignore: bool) {
        self.boxes.push(bbox);
        self.classes.push(class);
        self.ignore.push(ignore);
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Indices of GTs that may receive positives.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.ignore[i])
    }

    pub fn num_active(&self) -> usize {
        self.ignore.iter().filter(|i| !**i).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive(usize),
    Negative,
    Ignore,
}

/// One label per anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub labels: Vec<Label>,
    pub num_gts: usize,
}

impl Assignment {
    pub fn all_negative(num_anchors: usize, num_gts: usize) -> Self {
        Self {
            labels: vec![Label::Negative; num_anchors],
            num_gts,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `pi[i][j]` of the implied GT-by-anchor relation.
    pub fn is_match(&self, gt: usize, anchor: usize) -> bool {
        self.labels[anchor] == Label::Positive(gt)
    }

    /// Anchors assigned to `gt`, ascending.
    pub fn positives_of(&self, gt: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(j, l)| (*l == Label::Positive(gt)).then_some(j))
            .collect()
    }

    /// Positive anchors grouped by GT.
    pub fn positives_by_gt(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_gts];
        for (j, l) in self.labels.iter().enumerate() {
            if let Label::Positive(i) = l {
                out[*i].push(j);
            }
        }
        out
    }

    pub fn positive_counts(&self) -> Vec<usize> {
        self.positives_by_gt().iter().map(Vec::len).collect()
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|l| matches!(l, Label::Positive(_))).count()
    }

    pub fn num_negative(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Negative).count()
    }

    pub fn num_ignore(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Ignore).count()
    }
}

/// Candidate anchors each GT claimed before conflicts between GTs were
/// resolved. For loss-aware assignment these are the top-K sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Stage1Matches {
    pub per_gt: Vec<Vec<usize>>,
}

impl Stage1Matches {
    pub fn num_gts(&self) -> usize {
        self.per_gt.len()
    }

    /// How many GT sets each anchor appears in.
    pub fn multiplicity(&self, num_anchors: usize) -> Vec<u32> {
        let mut m = vec![0u32; num_anchors];
        for set in &self.per_gt {
            for &j in set {
                m[j] += 1;
            }
        }
        m
    }

    /// Number of distinct anchors claimed by at least one GT.
    pub fn unique_anchors(&self) -> usize {
        let n = self.per_gt.iter().flatten().map(|j| j + 1).max().unwrap_or(0);
        self.multiplicity(n).iter().filter(|m| **m > 0).count()
    }
}

/// Final labels together with the stage-1 candidate sets that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignOutcome {
    pub assignment: Assignment,
    pub matches: Stage1Matches,
}

/// Anchors claimed by two or more GTs before resolution.
pub fn ambiguous_count(matches: &Stage1Matches) -> usize {
    let n = matches.per_gt.iter().flatten().map(|j| j + 1).max().unwrap_or(0);
    matches.multiplicity(n).iter().filter(|m| **m >= 2).count()
}
