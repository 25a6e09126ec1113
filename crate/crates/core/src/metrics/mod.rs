//! Evaluation: greedy NMS, per-image detection matching, log-average miss
//! rate over FPPI, AP, recall, assignment ambiguity and pyramid-level
//! allocation.

mod curve;

pub use curve::{
    average_precision, evaluate, fppi_reference_points, log_average_miss_rate, miss_rate_curve, ApMode, CurvePoint,
    EvalResult, MetricsConfig,
};

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::assign::{ambiguous_count, Assignment, GroundTruthSet, Stage1Matches};
use crate::error::MetricsError;
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    pub image_id: String,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, image_id: impl Into<String>) -> Self {
        Self {
            bbox,
            score,
            image_id: image_id.into(),
        }
    }
}

/// Indices of `dets` in descending score order; equal scores keep input
/// order.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy suppression within each image: walk detections by descending
/// score and drop any whose IoU with an already kept box exceeds `iou_thr`.
pub fn nms(dets: &[Detection], iou_thr: f64) -> Vec<Detection> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|&k| dets[k].image_id == d.image_id && iou(&dets[k].bbox, &d.bbox) > iou_thr);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetOutcome {
    TruePositive,
    FalsePositive,
    /// Matched an ignore region; excluded from FPPI and precision.
    Ignored,
}

/// Matching result for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatch {
    /// `(score, outcome)` per detection, in input order.
    pub dets: Vec<(f64, DetOutcome)>,
    pub gt_matched: Vec<bool>,
    /// Non-ignored GT count.
    pub num_gt: usize,
}

impl ImageMatch {
    pub fn true_positives(&self) -> usize {
        self.dets.iter().filter(|d| d.1 == DetOutcome::TruePositive).count()
    }

    pub fn false_positives(&self) -> usize {
        self.dets.iter().filter(|d| d.1 == DetOutcome::FalsePositive).count()
    }

    pub fn misses(&self) -> usize {
        self.num_gt - self.true_positives()
    }
}

/// Caltech-style greedy matching for a single image. Detections, highest
/// score first, take the best-IoU unmatched non-ignored GT at or above
/// `iou_thr`; failing that, any ignore region at or above `iou_thr` absorbs
/// them.
pub fn match_detections(dets: &[Detection], gts: &GroundTruthSet, iou_thr: f64) -> ImageMatch {
    let mut outcome = vec![DetOutcome::FalsePositive; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for i in score_order(dets) {
        let d = &dets[i].bbox;
        let mut best: Option<(f64, usize)> = None;
        for g in gts.active() {
            if gt_matched[g] {
                continue;
            }
            let v = iou(d, &gts.boxes[g]);
            if v >= iou_thr && best.is_none_or(|(b, _)| v > b) {
                best = Some((v, g));
            }
        }
        if let Some((_, g)) = best {
            gt_matched[g] = true;
            outcome[i] = DetOutcome::TruePositive;
        } else if (0..gts.len()).any(|g| gts.ignore[g] && iou(d, &gts.boxes[g]) >= iou_thr) {
            outcome[i] = DetOutcome::Ignored;
        }
    }
    ImageMatch {
        dets: dets.iter().zip(outcome).map(|(d, o)| (d.score, o)).collect(),
        gt_matched,
        num_gt: gts.num_active(),
    }
}

/// Visibility/height band used to carve evaluation subsets. GTs outside the
/// band become ignore regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSubset {
    pub min_height: f64,
    pub min_visibility: f64,
    pub max_visibility: f64,
}

impl Default for EvalSubset {
    fn default() -> Self {
        Self::all()
    }
}

impl EvalSubset {
    pub fn all() -> Self {
        Self {
            min_height: 50.0,
            min_visibility: 0.0,
            max_visibility: 1.0,
        }
    }

    pub fn reasonable() -> Self {
        Self {
            min_visibility: 0.65,
            ..Self::all()
        }
    }

    pub fn heavy() -> Self {
        Self {
            min_visibility: 0.2,
            max_visibility: 0.65,
            ..Self::all()
        }
    }

    /// Marks GTs outside the band as ignored. A missing visible box counts as
    /// fully visible.
    pub fn apply(&self, gts: &GroundTruthSet, visible: &[Option<BBox>]) -> GroundTruthSet {
        let mut out = gts.clone();
        for (i, full) in gts.boxes.iter().enumerate() {
            let vis = match visible.get(i).copied().flatten() {
                Some(v) if full.area() > 0.0 => v.intersection_area(full) / full.area(),
                _ => 1.0,
            };
            let keep = full.height() >= self.min_height && vis >= self.min_visibility && vis <= self.max_visibility;
            out.ignore[i] |= !keep;
        }
        out
    }
}

/// Ambiguous anchors relative to positives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AarReport {
    /// Anchors claimed by two or more GTs before resolution.
    pub ambiguous: usize,
    /// Positive anchors after resolution (the denominator).
    pub positives: usize,
    /// Distinct anchors claimed by any GT before resolution.
    pub stage1_unique: usize,
    pub percent: f64,
}

pub fn aar(matches: &Stage1Matches, assignment: &Assignment) -> Result<AarReport, MetricsError> {
    let positives = assignment.num_positive();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let ambiguous = ambiguous_count(matches);
    Ok(AarReport {
        ambiguous,
        positives,
        stage1_unique: matches.unique_anchors(),
        percent: 100.0 * ambiguous as f64 / positives as f64,
    })
}

/// The pyramid stage holding most of a GT's positives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtAllocation {
    pub gt: usize,
    pub area: f64,
    pub positives: usize,
    /// `None` when the GT received no positives. Ties go to the lower stage.
    pub stage: Option<u8>,
}

pub fn fpn_allocation(assignment: &Assignment, anchors: &AnchorSet, gts: &GroundTruthSet) -> Vec<GtAllocation> {
    let levels = anchors.num_levels().max(1);
    let mut hist = vec![vec![0usize; levels]; gts.len()];
    for (j, l) in assignment.labels.iter().enumerate() {
        if let crate::assign::Label::Positive(i) = l {
            hist[*i][anchors.levels[j] as usize] += 1;
        }
    }
    hist.iter()
        .enumerate()
        .map(|(i, h)| {
            let positives: usize = h.iter().sum();
            let stage = (positives > 0).then(|| {
                // first maximum wins, i.e. the lower stage
                let mut best = 0;
                for (s, &c) in h.iter().enumerate() {
                    if c > h[best] {
                        best = s;
                    }
                }
                best as u8
            });
            GtAllocation {
                gt: i,
                area: gts.boxes[i].area(),
                positives,
                stage,
            }
        })
        .collect()
}

/// GT counts per modal stage; the final slot counts unassigned GTs.
pub fn stage_histogram(alloc: &[GtAllocation], levels: usize) -> Vec<usize> {
    let mut h = vec![0; levels + 1];
    for a in alloc {
        match a.stage {
            Some(s) => h[s as usize] += 1,
            None => h[levels] += 1,
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::{build_anchor_grid, AnchorConfig};
    use crate::assign::Label;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn det(x: f64, y: f64, s: f64) -> Detection {
        Detection::new(BBox::new(x, y, x + 10.0, y + 20.0), s, "img")
    }

    #[test]
    fn nms_keeps_best_of_duplicates() {
        let out = nms(&[det(0.0, 0.0, 0.8), det(0.0, 0.0, 0.9)], 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
        let out = nms(&[det(0.0, 0.0, 0.8), det(100.0, 0.0, 0.9)], 0.5);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].score, 0.9);
    }

    #[test]
    fn nms_is_per_image() {
        let a = det(0.0, 0.0, 0.9);
        let mut b = det(0.0, 0.0, 0.8);
        b.image_id = "other".into();
        assert_eq!(nms(&[a, b], 0.5).len(), 2);
    }

    fn naive_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
        // repeatedly take the global best survivor and delete its overlaps
        let mut pool: Vec<(usize, Detection)> = dets.iter().cloned().enumerate().collect();
        let mut out = Vec::new();
        while !pool.is_empty() {
            let mut bi = 0;
            for k in 1..pool.len() {
                let (a, b) = (&pool[k], &pool[bi]);
                if a.1.score > b.1.score || (a.1.score == b.1.score && a.0 < b.0) {
                    bi = k;
                }
            }
            let (_, best) = pool.remove(bi);
            pool.retain(|(_, d)| d.image_id != best.image_id || iou(&d.bbox, &best.bbox) <= thr);
            out.push(best);
        }
        out
    }

    #[test]
    fn nms_matches_naive_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let dets: Vec<Detection> = (0..50)
                .map(|_| {
                    let x = rng.random_range(0.0..100.0);
                    let y = rng.random_range(0.0..100.0);
                    let w = rng.random_range(5.0..40.0);
                    let h = rng.random_range(5.0..40.0);
                    let s = (rng.random_range(0..20) as f64) / 20.0;
                    Detection::new(BBox::new(x, y, x + w, y + h), s, "a")
                })
                .collect();
            assert_eq!(nms(&dets, 0.5), naive_nms(&dets, 0.5));
        }
    }

    #[test]
    fn matching_cases() {
        let gts = GroundTruthSet::from_boxes(vec![BBox::new(0.0, 0.0, 10.0, 20.0)]);
        let m = match_detections(&[det(0.0, 0.0, 0.9)], &gts, 0.5);
        assert_eq!((m.true_positives(), m.false_positives(), m.misses()), (1, 0, 0));

        let m = match_detections(&[det(0.0, 0.0, 0.9)], &GroundTruthSet::new(), 0.5);
        assert_eq!(m.false_positives(), 1);

        let mut ig = GroundTruthSet::new();
        ig.push(BBox::new(0.0, 0.0, 10.0, 20.0), 0, true);
        let m = match_detections(&[det(0.0, 0.0, 0.9), det(1.0, 0.0, 0.8)], &ig, 0.5);
        assert_eq!(m.dets[0].1, DetOutcome::Ignored);
        assert_eq!(m.dets[1].1, DetOutcome::Ignored);
        assert_eq!(m.num_gt, 0);
    }

    #[test]
    fn matching_never_double_counts_a_gt() {
        let gts = GroundTruthSet::from_boxes(vec![BBox::new(0.0, 0.0, 10.0, 20.0)]);
        let m = match_detections(&[det(0.0, 0.0, 0.7), det(0.0, 1.0, 0.9)], &gts, 0.5);
        assert_eq!(m.dets[1].1, DetOutcome::TruePositive);
        assert_eq!(m.dets[0].1, DetOutcome::FalsePositive);
    }

    #[test]
    fn subsets_ignore_short_and_out_of_band() {
        let mut gts = GroundTruthSet::new();
        gts.push(BBox::new(0.0, 0.0, 20.0, 40.0), 0, false); // too short
        gts.push(BBox::new(0.0, 0.0, 40.0, 100.0), 0, false); // fully visible
        gts.push(BBox::new(0.0, 0.0, 40.0, 100.0), 0, false); // 30% visible
        let vis = vec![None, None, Some(BBox::new(0.0, 0.0, 40.0, 30.0))];
        let r = EvalSubset::reasonable().apply(&gts, &vis);
        assert_eq!(r.ignore, vec![true, false, true]);
        let h = EvalSubset::heavy().apply(&gts, &vis);
        assert_eq!(h.ignore, vec![true, true, false]);
    }

    #[test]
    fn aar_ratios() {
        let disjoint = Stage1Matches {
            per_gt: vec![vec![0, 1], vec![2, 3]],
        };
        let a = Assignment {
            labels: vec![
                Label::Positive(0),
                Label::Positive(0),
                Label::Positive(1),
                Label::Positive(1),
            ],
            num_gts: 2,
        };
        assert_eq!(aar(&disjoint, &a).unwrap().percent, 0.0);

        let shared = Stage1Matches {
            per_gt: vec![(0..6).collect(), (4..10).collect()],
        };
        let labels = (0..10).map(|j| Label::Positive(if j < 5 { 0 } else { 1 })).collect();
        let a = Assignment { labels, num_gts: 2 };
        let r = aar(&shared, &a).unwrap();
        assert_eq!((r.ambiguous, r.positives, r.stage1_unique), (2, 10, 10));
        assert_eq!(r.percent, 20.0);

        assert!(matches!(
            aar(&shared, &Assignment::all_negative(10, 2)),
            Err(MetricsError::NoPositives)
        ));
    }

    #[test]
    fn allocation_modal_stage_and_ties() {
        let anchors = build_anchor_grid(64.0, 64.0, &AnchorConfig::single()).unwrap();
        let gts = GroundTruthSet::from_boxes(vec![
            BBox::new(0.0, 0.0, 10.0, 10.0),
            BBox::new(0.0, 0.0, 20.0, 20.0),
            BBox::new(0.0, 0.0, 5.0, 5.0),
        ]);
        let mut a = Assignment::all_negative(anchors.len(), 3);
        let l0 = anchors.level_range(0);
        let l1 = anchors.level_range(1);
        a.labels[l0.start] = Label::Positive(0);
        a.labels[l0.start + 1] = Label::Positive(0);
        a.labels[l0.start + 2] = Label::Positive(1);
        a.labels[l1.start] = Label::Positive(1);
        let alloc = fpn_allocation(&a, &anchors, &gts);
        assert_eq!(alloc[0].stage, Some(0));
        assert_eq!(alloc[1].stage, Some(0));
        assert_eq!(alloc[2].stage, None);
        assert_eq!(alloc[1].area, 400.0);
        assert_eq!(stage_histogram(&alloc, 5), vec![2, 0, 0, 0, 0, 1]);
    }

    proptest! {
        #[test]
        fn nms_output_is_sparse_subset_and_idempotent(
            raw in proptest::collection::vec((0.0..80.0f64, 0.0..80.0f64, 4.0..30.0f64, 4.0..30.0f64, 0.0..1.0f64), 0..40),
            thr in 0.1..0.9f64,
        ) {
            let dets: Vec<Detection> = raw.iter()
                .map(|(x, y, w, h, s)| Detection::new(BBox::new(*x, *y, x + w, y + h), *s, "i"))
                .collect();
            let once = nms(&dets, thr);
            for d in &once {
                prop_assert!(dets.contains(d));
            }
            for a in 0..once.len() {
                for b in a + 1..once.len() {
                    prop_assert!(iou(&once[a].bbox, &once[b].bbox) <= thr);
                }
            }
            prop_assert_eq!(nms(&once, thr), once);
        }
    }
}
