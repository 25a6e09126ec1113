//! Synthetic crowd scenes and a geometry-driven stand-in for a trained
//! detector's outputs.
//!
//! A scene is a set of pedestrian boxes with a total depth order. Each box's
//! visible part is what remains after subtracting every nearer box, reduced
//! to the largest axis-aligned rectangle of that remainder.
//!
//! The mock predictor answers, for every anchor, "which person does the
//! feature under this anchor's center belong to?": the nearest person whose
//! full box covers the center. Scores grow with how well the anchor sits on
//! that person's visible region, and regressed boxes move from the anchor
//! toward that person's full box as `maturity` goes from 0 to 1. Anchors on
//! the occluded part of a person therefore describe the occluder.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::assign::{lla, AssignOutcome, Assignment, GroundTruthSet, LlaConfig, Predictions};
use crate::error::{AssignError, SceneError};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub image_w: f64,
    pub image_h: f64,
    pub gts: GroundTruthSet,
    /// Largest unoccluded rectangle of each full box.
    pub visible: Vec<BBox>,
    /// Fraction of each full box covered by nearer boxes.
    pub occlusion: Vec<f64>,
    /// Depth rank per GT, 0 is nearest the camera.
    pub depth: Vec<usize>,
    /// Per GT, `(1 - occlusion) - visible_area / full_area`: the part of the
    /// unoccluded region the rectangle does not cover.
    pub rect_error: Vec<f64>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.gts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gts.is_empty()
    }

    pub fn rect_error_bound(&self) -> f64 {
        self.rect_error.iter().copied().fold(0.0, f64::max)
    }

    /// Builds a scene from explicit boxes, deriving depth from the bottom
    /// edge (lower in the image is nearer) and visibility by subtraction.
    pub fn from_boxes(image_w: f64, image_h: f64, gts: GroundTruthSet) -> Self {
        let depth = depth_by_bottom_edge(&gts.boxes);
        let mut scene = Scene {
            image_w,
            image_h,
            visible: Vec::new(),
            occlusion: Vec::new(),
            rect_error: Vec::new(),
            depth,
            gts,
        };
        scene.recompute_visibility();
        scene
    }

    /// Builds a scene from annotated boxes whose visible parts are known.
    /// Missing visible boxes fall back to the full box. Less occluded people
    /// are treated as nearer.
    pub fn from_annotations(image_w: f64, image_h: f64, gts: GroundTruthSet, visible: &[Option<BBox>]) -> Self {
        let visible: Vec<BBox> = gts
            .boxes
            .iter()
            .zip(visible)
            .map(|(full, v)| match v.and_then(|v| v.intersection(full)) {
                Some(v) => v,
                None if v.is_some() => BBox::degenerate(full.center()),
                None => *full,
            })
            .collect();
        let occlusion: Vec<f64> = gts
            .boxes
            .iter()
            .zip(&visible)
            .map(|(f, v)| if f.area() > 0.0 { 1.0 - v.area() / f.area() } else { 0.0 })
            .collect();
        let mut order: Vec<usize> = (0..gts.len()).collect();
        order.sort_by(|&a, &b| {
            occlusion[a]
                .total_cmp(&occlusion[b])
                .then(gts.boxes[b].y2.total_cmp(&gts.boxes[a].y2))
                .then(a.cmp(&b))
        });
        let mut depth = vec![0; gts.len()];
        for (rank, i) in order.into_iter().enumerate() {
            depth[i] = rank;
        }
        let n = gts.len();
        Scene {
            image_w,
            image_h,
            gts,
            visible,
            occlusion,
            depth,
            rect_error: vec![0.0; n],
        }
    }

    fn recompute_visibility(&mut self) {
        let n = self.gts.len();
        self.visible.clear();
        self.occlusion.clear();
        self.rect_error.clear();
        for i in 0..n {
            let full = self.gts.boxes[i];
            let occluders: Vec<BBox> = (0..n)
                .filter(|&k| self.depth[k] < self.depth[i])
                .filter_map(|k| self.gts.boxes[k].intersection(&full))
                .collect();
            let v = visible_region(&full, &occluders);
            self.visible.push(v.rect);
            self.occlusion.push(v.occlusion);
            let vis_ratio = if full.area() > 0.0 {
                v.rect.area() / full.area()
            } else {
                0.0
            };
            self.rect_error.push(((1.0 - v.occlusion) - vis_ratio).max(0.0));
        }
    }

    /// Mean over GTs of the largest IoU with any other GT.
    pub fn mean_max_neighbor_iou(&self) -> f64 {
        mean_max_neighbor_iou(&self.gts.boxes)
    }
}

pub fn mean_max_neighbor_iou(boxes: &[BBox]) -> f64 {
    if boxes.len() < 2 {
        return 0.0;
    }
    let total: f64 = (0..boxes.len())
        .map(|i| {
            (0..boxes.len())
                .filter(|&k| k != i)
                .map(|k| iou(&boxes[i], &boxes[k]))
                .fold(0.0, f64::max)
        })
        .sum();
    total / boxes.len() as f64
}

fn depth_by_bottom_edge(boxes: &[BBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].y2.total_cmp(&boxes[a].y2).then(a.cmp(&b)));
    let mut depth = vec![0; boxes.len()];
    for (rank, i) in order.into_iter().enumerate() {
        depth[i] = rank;
    }
    depth
}

struct Visibility {
    rect: BBox,
    occlusion: f64,
}

/// Exact covered fraction and largest free rectangle of `full` minus the
/// union of `occluders`, on the grid induced by all box edges.
fn visible_region(full: &BBox, occluders: &[BBox]) -> Visibility {
    if occluders.is_empty() || full.area() <= 0.0 {
        return Visibility {
            rect: *full,
            occlusion: 0.0,
        };
    }
    let edges = |lo: f64, hi: f64, f: fn(&BBox) -> [f64; 2]| {
        let mut v = vec![lo, hi];
        v.extend(occluders.iter().flat_map(f).filter(|x| *x > lo && *x < hi));
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let xs = edges(full.x1, full.x2, |b| [b.x1, b.x2]);
    let ys = edges(full.y1, full.y2, |b| [b.y1, b.y2]);
    let (cols, rows) = (xs.len() - 1, ys.len() - 1);

    let mut free = vec![true; rows * cols];
    let mut covered = 0.0;
    for r in 0..rows {
        let cy = 0.5 * (ys[r] + ys[r + 1]);
        for c in 0..cols {
            let cx = 0.5 * (xs[c] + xs[c + 1]);
            if occluders
                .iter()
                .any(|o| o.x1 < cx && cx < o.x2 && o.y1 < cy && cy < o.y2)
            {
                free[r * cols + c] = false;
                covered += (xs[c + 1] - xs[c]) * (ys[r + 1] - ys[r]);
            }
        }
    }
    let occlusion = (covered / full.area()).clamp(0.0, 1.0);

    // largest free rectangle by area; rows r0..=r1 with a column run
    let mut best: Option<(f64, BBox)> = None;
    for r0 in 0..rows {
        let mut col_free = vec![true; cols];
        for r1 in r0..rows {
            for c in 0..cols {
                col_free[c] &= free[r1 * cols + c];
            }
            let h = ys[r1 + 1] - ys[r0];
            let mut c = 0;
            while c < cols {
                if !col_free[c] {
                    c += 1;
                    continue;
                }
                let start = c;
                while c < cols && col_free[c] {
                    c += 1;
                }
                let w = xs[c] - xs[start];
                let area = w * h;
                if best.is_none_or(|(a, _)| area > a) {
                    best = Some((area, BBox::new(xs[start], ys[r0], xs[c], ys[r1 + 1])));
                }
            }
        }
    }
    Visibility {
        rect: best.map_or_else(|| BBox::degenerate(full.center()), |(_, b)| b),
        occlusion,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub image_w: f64,
    pub image_h: f64,
    pub min_height: f64,
    pub max_height: f64,
    /// Median height-over-width ratio.
    pub aspect: f64,
    /// Log-normal jitter on the aspect ratio.
    pub aspect_log_sigma: f64,
    /// Placement attempts per person before giving up.
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_w: 800.0,
            image_h: 600.0,
            min_height: 60.0,
            max_height: 280.0,
            aspect: 2.4,
            aspect_log_sigma: 0.1,
            max_attempts: 2000,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let ok = self.image_w > 0.0
            && self.image_h > 0.0
            && self.min_height > 0.0
            && self.min_height <= self.max_height
            && self.max_height <= self.image_h
            && self.aspect > 0.0
            && self.aspect_log_sigma >= 0.0
            && self.max_attempts > 0;
        if ok {
            Ok(())
        } else {
            Err(SceneError::InvalidParameter(format!(
                "inconsistent scene config {self:?}"
            )))
        }
    }
}

/// Slack above the target IoU tolerated for a new person's closest neighbor.
const IOU_SLACK: f64 = 0.05;

pub fn generate_scene(n_people: usize, crowd_iou: f64, seed: u64) -> Result<Scene, SceneError> {
    generate_scene_with(&SceneConfig::default(), n_people, crowd_iou, seed)
}

/// Places `n_people` pedestrians. With `crowd_iou = 0` boxes never overlap;
/// otherwise each new person is placed beside an existing one at the offset
/// giving IoU `crowd_iou` with it, and rejected if it overlaps anyone more
/// than that (plus a small slack).
pub fn generate_scene_with(cfg: &SceneConfig, n_people: usize, crowd_iou: f64, seed: u64) -> Result<Scene, SceneError> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&crowd_iou) {
        return Err(SceneError::InvalidParameter(format!(
            "crowd_iou must lie in [0, 1), got {crowd_iou}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, cfg.aspect_log_sigma).expect("sigma validated");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut boxes: Vec<BBox> = Vec::with_capacity(n_people);
    let mut attempts = 0usize;

    while boxes.len() < n_people {
        let mut placed = None;
        for _ in 0..cfg.max_attempts {
            attempts += 1;
            let candidate = if crowd_iou == 0.0 || boxes.is_empty() {
                let h = rng.random_range(cfg.min_height..=cfg.max_height);
                let w = h / (cfg.aspect * jitter.sample(&mut rng).exp());
                random_box_in_image(&mut rng, cfg, w, h)
            } else {
                let partner = boxes[rng.random_range(0..boxes.len())];
                let h =
                    (partner.height() * f64::exp(0.1 * unit.sample(&mut rng))).clamp(cfg.min_height, cfg.max_height);
                let w = h / (cfg.aspect * jitter.sample(&mut rng).exp());
                beside(&mut rng, &partner, w, h, crowd_iou, &unit)
            };
            let Some(b) = candidate else { continue };
            if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > cfg.image_w || b.y2 > cfg.image_h {
                continue;
            }
            let accept = if crowd_iou == 0.0 {
                boxes.iter().all(|o| o.intersection_area(&b) == 0.0)
            } else {
                boxes.iter().all(|o| iou(o, &b) <= crowd_iou + IOU_SLACK)
            };
            if accept {
                placed = Some(b);
                break;
            }
        }
        match placed {
            Some(b) => boxes.push(b),
            None => {
                return Err(SceneError::InfeasibleDensity {
                    requested: n_people,
                    placed: boxes.len(),
                    attempts,
                    width: cfg.image_w,
                    height: cfg.image_h,
                })
            }
        }
    }

    Ok(Scene::from_boxes(
        cfg.image_w,
        cfg.image_h,
        GroundTruthSet::from_boxes(boxes),
    ))
}

fn random_box_in_image(rng: &mut ChaCha8Rng, cfg: &SceneConfig, w: f64, h: f64) -> Option<BBox> {
    if w > cfg.image_w || h > cfg.image_h {
        return None;
    }
    let x = rng.random_range(0.0..=cfg.image_w - w);
    let y = rng.random_range(0.0..=cfg.image_h - h);
    Some(BBox::new(x, y, x + w, y + h))
}

/// A `w x h` box standing next to `partner` (bottoms roughly aligned) with
/// IoU `target` against it, found by bisection on the horizontal offset.
fn beside(rng: &mut ChaCha8Rng, partner: &BBox, w: f64, h: f64, target: f64, unit: &Normal<f64>) -> Option<BBox> {
    let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let bottom = partner.y2 + 0.08 * partner.height() * unit.sample(rng);
    let cx0 = partner.center().x;
    let at = |dx: f64| {
        let cx = cx0 + dir * dx;
        BBox::new(cx - 0.5 * w, bottom - h, cx + 0.5 * w, bottom)
    };
    if iou(&at(0.0), partner) < target {
        return None;
    }
    let (mut lo, mut hi) = (0.0, 0.5 * (w + partner.width()));
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if iou(&at(mid), partner) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(at(lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockPredictorConfig {
    /// Decay of the score away from the visible region's center.
    pub score_sharpness: f64,
    /// Logit-space score noise; box noise is `0.1 * noise_sigma` of the box
    /// size per coordinate.
    pub noise_sigma: f64,
    /// 0 is an untrained detector, 1 a converged one.
    pub maturity: f64,
    pub seed: u64,
}

impl Default for MockPredictorConfig {
    fn default() -> Self {
        Self {
            score_sharpness: 1.0,
            noise_sigma: 0.0,
            maturity: 1.0,
            seed: 0,
        }
    }
}

impl MockPredictorConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(0.0..=1.0).contains(&self.maturity) {
            return Err(SceneError::InvalidParameter(format!(
                "maturity must lie in [0, 1], got {}",
                self.maturity
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SceneError::InvalidParameter(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.score_sharpness >= 0.0 && self.score_sharpness.is_finite()) {
            return Err(SceneError::InvalidParameter(format!(
                "score_sharpness must be >= 0, got {}",
                self.score_sharpness
            )));
        }
        Ok(())
    }
}

/// Score of every anchor before any training.
pub const UNTRAINED_SCORE: f64 = 0.1;
/// Converged score on background.
pub const BACKGROUND_SCORE: f64 = 0.01;
/// Converged score at the heart of a visible region.
pub const PEAK_SCORE: f64 = 0.95;

/// For each anchor, the nearest GT whose full box covers the anchor center.
pub fn anchor_owners(scene: &Scene, anchors: &AnchorSet) -> Vec<Option<usize>> {
    let active: Vec<usize> = scene.gts.active().collect();
    anchors
        .centers
        .iter()
        .map(|c| {
            active
                .iter()
                .copied()
                .filter(|&i| scene.gts.boxes[i].contains(*c))
                .min_by_key(|&i| scene.depth[i])
        })
        .collect()
}

/// How well an anchor sits on a visible region, in `[0, 1]`.
fn visible_quality(anchor: &BBox, visible: &BBox, sharpness: f64) -> f64 {
    let a = anchor.area();
    if a <= 0.0 || visible.area() <= 0.0 {
        return 0.0;
    }
    let coverage = anchor.intersection_area(visible) / a;
    let (c, v) = (anchor.center(), visible.center());
    let rx = (c.x - v.x) / (0.5 * visible.width());
    let ry = (c.y - v.y) / (0.5 * visible.height());
    coverage * (-0.5 * sharpness * (rx * rx + ry * ry)).exp()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Single-class scores and regressed boxes for every anchor.
pub fn mock_predict(scene: &Scene, anchors: &AnchorSet, cfg: &MockPredictorConfig) -> Result<Predictions, SceneError> {
    cfg.validate()?;
    let owners = anchor_owners(scene, anchors);
    let m = cfg.maturity;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("sigma validated"));

    let mut scores = Array2::zeros((anchors.len(), 1));
    let mut boxes = Vec::with_capacity(anchors.len());
    for (j, owner) in owners.iter().enumerate() {
        let anchor = anchors.boxes[j];
        let (trained, target) = match owner {
            Some(g) => {
                let q = visible_quality(&anchor, &scene.visible[*g], cfg.score_sharpness);
                (
                    BACKGROUND_SCORE + (PEAK_SCORE - BACKGROUND_SCORE) * q,
                    scene.gts.boxes[*g],
                )
            }
            None => (BACKGROUND_SCORE, anchor),
        };
        let mut score = (1.0 - m) * UNTRAINED_SCORE + m * trained;
        let mut b = anchor.lerp(&target, m);
        if let Some(dist) = &noise {
            score = sigmoid(logit(score) + dist.sample(&mut rng));
            let (w, h) = (b.width().max(1.0), b.height().max(1.0));
            let d: [f64; 4] = std::array::from_fn(|_| 0.1 * dist.sample(&mut rng));
            let (x1, x2) = (b.x1 + d[0] * w, b.x2 + d[2] * w);
            let (y1, y2) = (b.y1 + d[1] * h, b.y2 + d[3] * h);
            b = BBox::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2));
        }
        scores[[j, 0]] = score.clamp(0.0, 1.0);
        boxes.push(b);
    }
    Ok(Predictions { scores, boxes })
}

/// Share of a GT's positives whose anchor centers lie in its visible box.
pub fn visible_fraction(scene: &Scene, anchors: &AnchorSet, assignment: &Assignment, gt: usize) -> Option<f64> {
    let pos = assignment.positives_of(gt);
    if pos.is_empty() {
        return None;
    }
    let inside = pos
        .iter()
        .filter(|&&j| scene.visible[gt].contains(anchors.centers[j]))
        .count();
    Some(inside as f64 / pos.len() as f64)
}

/// One loss-aware assignment per maturity step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub maturity: f64,
    pub outcome: AssignOutcome,
}

#[derive(Debug, thiserror::Error)]
pub enum EvolutionError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Assign(#[from] AssignError),
}

pub fn evolution_snapshots(
    scene: &Scene,
    anchors: &AnchorSet,
    predictor: &MockPredictorConfig,
    lla_cfg: &LlaConfig,
    schedule: &[f64],
) -> Result<Vec<Snapshot>, EvolutionError> {
    if schedule.windows(2).any(|w| w[1] < w[0]) {
        return Err(SceneError::InvalidParameter("maturity schedule must be nondecreasing".into()).into());
    }
    schedule
        .iter()
        .map(|&maturity| {
            let cfg = MockPredictorConfig { maturity, ..*predictor };
            let preds = mock_predict(scene, anchors, &cfg)?;
            let outcome = lla(&preds, &scene.gts, anchors, lla_cfg)?;
            Ok(Snapshot { maturity, outcome })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::{build_anchor_grid, AnchorConfig};
    use crate::assign::{retinanet_assign, RetinaConfig};
    use crate::geometry::Point;

    #[test]
    fn empty_scene() {
        let s = generate_scene(0, 0.4, 1).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.mean_max_neighbor_iou(), 0.0);
    }

    #[test]
    fn zero_crowd_is_disjoint() {
        let s = generate_scene(15, 0.0, 7).unwrap();
        for i in 0..s.len() {
            for k in 0..s.len() {
                if i != k {
                    assert_eq!(iou(&s.gts.boxes[i], &s.gts.boxes[k]), 0.0);
                }
            }
            assert_eq!(s.occlusion[i], 0.0);
            assert_eq!(s.visible[i], s.gts.boxes[i]);
        }
    }

    #[test]
    fn crowd_level_tracks_target() {
        for seed in 0..10 {
            let s = generate_scene(20, 0.4, seed).unwrap();
            let m = s.mean_max_neighbor_iou();
            assert!((m - 0.4).abs() <= 0.1, "seed {seed}: mean max-neighbor IoU {m}");
        }
    }

    #[test]
    fn seeded_determinism() {
        assert_eq!(
            generate_scene(12, 0.3, 99).unwrap(),
            generate_scene(12, 0.3, 99).unwrap()
        );
        assert_ne!(
            generate_scene(12, 0.3, 99).unwrap(),
            generate_scene(12, 0.3, 100).unwrap()
        );
    }

    #[test]
    fn infeasible_density_errors() {
        let cfg = SceneConfig {
            image_w: 100.0,
            image_h: 100.0,
            min_height: 80.0,
            max_height: 90.0,
            max_attempts: 200,
            ..SceneConfig::default()
        };
        assert!(matches!(
            generate_scene_with(&cfg, 10, 0.0, 0),
            Err(SceneError::InfeasibleDensity { .. })
        ));
        assert!(generate_scene(3, 1.0, 0).is_err());
    }

    #[test]
    fn visibility_invariants() {
        for seed in 0..10 {
            let s = generate_scene(20, 0.45, seed).unwrap();
            for i in 0..s.len() {
                let full = s.gts.boxes[i];
                assert!(full.contains_box(&s.visible[i]));
                assert!((0.0..=1.0).contains(&s.occlusion[i]));
                let ratio = s.visible[i].area() / full.area();
                let err = (1.0 - s.occlusion[i]) - ratio;
                assert!(err >= -1e-9 && err <= s.rect_error_bound() + 1e-9);
                for k in 0..s.len() {
                    if s.depth[k] < s.depth[i] {
                        assert!(s.visible[i].intersection_area(&s.gts.boxes[k]) < 1e-9 * full.area());
                    }
                }
            }
        }
    }

    #[test]
    fn visible_region_of_half_covered_box() {
        let full = BBox::new(0.0, 0.0, 10.0, 20.0);
        let v = visible_region(&full, &[BBox::new(5.0, -5.0, 20.0, 30.0)]);
        assert_eq!(v.rect, BBox::new(0.0, 0.0, 5.0, 20.0));
        assert!((v.occlusion - 0.5).abs() < 1e-12);
        let v = visible_region(&full, &[BBox::new(-1.0, -1.0, 11.0, 21.0)]);
        assert_eq!(v.occlusion, 1.0);
        assert_eq!(v.rect.area(), 0.0);
        // overlapping occluders are not double counted
        let v = visible_region(
            &full,
            &[BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(0.0, 5.0, 10.0, 15.0)],
        );
        assert!((v.occlusion - 0.75).abs() < 1e-12);
        assert_eq!(v.rect, BBox::new(0.0, 15.0, 10.0, 20.0));
    }

    fn two_person_scene() -> Scene {
        // `a` stands in front of `b` and hides its right half
        let a = BBox::new(140.0, 100.0, 220.0, 300.0);
        let b = BBox::new(100.0, 90.0, 180.0, 290.0);
        Scene::from_boxes(400.0, 400.0, GroundTruthSet::from_boxes(vec![a, b]))
    }

    #[test]
    fn mature_predictor_is_exact_on_visible_center() {
        let scene = two_person_scene();
        let anchors = build_anchor_grid(400.0, 400.0, &AnchorConfig::single()).unwrap();
        let preds = mock_predict(&scene, &anchors, &MockPredictorConfig::default()).unwrap();
        let vc = scene.visible[0].center();
        let j = (0..anchors.len())
            .filter(|&j| anchors.levels[j] == 0)
            .min_by(|&x, &y| {
                let d = |j: usize| (anchors.centers[j].x - vc.x).powi(2) + (anchors.centers[j].y - vc.y).powi(2);
                d(x).total_cmp(&d(y))
            })
            .unwrap();
        assert_eq!(preds.boxes[j], scene.gts.boxes[0]);
        assert!(preds.scores[[j, 0]] > 0.5);
    }

    #[test]
    fn occluded_anchor_describes_occluder() {
        let scene = two_person_scene();
        assert_eq!(scene.depth, vec![0, 1]);
        assert!(scene.occlusion[1] > 0.4);
        let anchors = build_anchor_grid(400.0, 400.0, &AnchorConfig::single()).unwrap();
        let preds = mock_predict(&scene, &anchors, &MockPredictorConfig::default()).unwrap();
        let j = anchors
            .centers
            .iter()
            .position(|c| *c == Point::new(164.0, 196.0))
            .unwrap();
        assert!(scene.gts.boxes[1].contains(anchors.centers[j]));
        assert_eq!(preds.boxes[j], scene.gts.boxes[0]);
        let cost_b = crate::losses::iou_loss(&preds.boxes[j], &scene.gts.boxes[1]);
        assert!(cost_b > 0.5);
    }

    #[test]
    fn untrained_scores_are_constant() {
        let scene = two_person_scene();
        let anchors = build_anchor_grid(400.0, 400.0, &AnchorConfig::single()).unwrap();
        let cfg = MockPredictorConfig {
            maturity: 0.0,
            ..MockPredictorConfig::default()
        };
        let preds = mock_predict(&scene, &anchors, &cfg).unwrap();
        assert!(preds.scores.iter().all(|s| (*s - UNTRAINED_SCORE).abs() < 1e-15));
        assert_eq!(preds.boxes, anchors.boxes);
    }

    #[test]
    fn predictions_are_seeded() {
        let scene = generate_scene(10, 0.4, 3).unwrap();
        let anchors = build_anchor_grid(scene.image_w, scene.image_h, &AnchorConfig::single()).unwrap();
        let cfg = MockPredictorConfig {
            noise_sigma: 0.3,
            seed: 11,
            ..MockPredictorConfig::default()
        };
        let a = mock_predict(&scene, &anchors, &cfg).unwrap();
        let b = mock_predict(&scene, &anchors, &cfg).unwrap();
        assert_eq!(a, b);
        let c = mock_predict(&scene, &anchors, &MockPredictorConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, c);
        assert!(a.boxes.iter().all(|b| b.is_valid()));
    }

    #[test]
    fn lla_prefers_visible_part_of_occluded_person() {
        let scene = two_person_scene();
        let anchors = build_anchor_grid(400.0, 400.0, &AnchorConfig::single()).unwrap();
        let preds = mock_predict(&scene, &anchors, &MockPredictorConfig::default()).unwrap();
        let out = lla(&preds, &scene.gts, &anchors, &LlaConfig::default()).unwrap();
        let lla_frac = visible_fraction(&scene, &anchors, &out.assignment, 1).unwrap();
        let retina_anchors = build_anchor_grid(400.0, 400.0, &AnchorConfig::retinanet9()).unwrap();
        let r = retinanet_assign(&retina_anchors, &scene.gts, &RetinaConfig::default());
        let r_frac = visible_fraction(&scene, &retina_anchors, &r.assignment, 1).unwrap_or(0.0);
        assert!(lla_frac > r_frac, "lla {lla_frac} retina {r_frac}");
        assert_eq!(lla_frac, 1.0);
    }

    #[test]
    fn evolution_schedule() {
        let scene = generate_scene(12, 0.45, 5).unwrap();
        let anchors = build_anchor_grid(scene.image_w, scene.image_h, &AnchorConfig::single()).unwrap();
        let p = MockPredictorConfig::default();
        let l = LlaConfig::default();
        assert!(evolution_snapshots(&scene, &anchors, &p, &l, &[]).unwrap().is_empty());
        assert_eq!(evolution_snapshots(&scene, &anchors, &p, &l, &[1.0]).unwrap().len(), 1);
        assert!(evolution_snapshots(&scene, &anchors, &p, &l, &[1.0, 0.5]).is_err());

        let snaps = evolution_snapshots(&scene, &anchors, &p, &l, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(snaps.len(), 3);
        let frac = |s: &Snapshot| {
            let a = &s.outcome.assignment;
            let (mut inside, mut total) = (0usize, 0usize);
            for (j, l) in a.labels.iter().enumerate() {
                if let crate::assign::Label::Positive(i) = l {
                    total += 1;
                    inside += scene.visible[*i].contains(anchors.centers[j]) as usize;
                }
            }
            inside as f64 / total as f64
        };
        let first = frac(&snaps[0]);
        assert!(frac(&snaps[1]) >= first);
        assert!(frac(&snaps[2]) >= first);
    }
}
