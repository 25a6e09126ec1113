//! Threshold sweeps over matched detections: the miss-rate/FPPI curve, its
//! log-average, and interpolated AP.

use serde::{Deserialize, Serialize};

use super::{DetOutcome, ImageMatch};
use crate::error::MetricsError;

const MISS_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Precision envelope sampled at recall 0, 0.01, ..., 1.
    #[default]
    Coco101,
    /// Exact area under the precision envelope.
    AllPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub match_iou: f64,
    pub nms_iou: f64,
    pub ap_mode: ApMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            match_iou: 0.5,
            nms_iou: 0.5,
            ap_mode: ApMode::Coco101,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for (name, v) in [("match_iou", self.match_iou), ("nms_iou", self.nms_iou)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(MetricsError::InvalidParameter(format!(
                    "{name} = {v} must lie in (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// One operating point: everything scoring at least `score` is kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub score: f64,
    pub fppi: f64,
    pub miss_rate: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mr: f64,
    pub ap: f64,
    pub recall: f64,
    pub num_images: usize,
    pub num_gt: usize,
    pub fppi_curve: Vec<CurvePoint>,
}

pub fn fppi_reference_points() -> [f64; 9] {
    std::array::from_fn(|k| 10f64.powf(-2.0 + 0.5 * k as f64))
}

/// Operating points from the strictest threshold (nothing kept, fppi 0,
/// miss rate 1) down to keeping every detection. Detections sharing a score
/// enter together.
pub fn miss_rate_curve(images: &[ImageMatch]) -> Result<Vec<CurvePoint>, MetricsError> {
    let num_gt: usize = images.iter().map(|m| m.num_gt).sum();
    if num_gt == 0 || images.is_empty() {
        return Err(MetricsError::MrUndefined);
    }
    let mut scored: Vec<(f64, bool)> = images
        .iter()
        .flat_map(|m| m.dets.iter())
        .filter(|(_, o)| *o != DetOutcome::Ignored)
        .map(|(s, o)| (*s, *o == DetOutcome::TruePositive))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let n_img = images.len() as f64;
    let point = |score: f64, tp: usize, fp: usize| CurvePoint {
        score,
        fppi: fp as f64 / n_img,
        miss_rate: 1.0 - tp as f64 / num_gt as f64,
        recall: tp as f64 / num_gt as f64,
        precision: if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        },
    };
    let mut curve = vec![point(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < scored.len() {
        let s = scored[i].0;
        while i < scored.len() && scored[i].0 == s {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(point(s, tp, fp));
    }
    Ok(curve)
}

/// Percent. Each reference FPPI takes the miss rate of the last operating
/// point whose FPPI does not exceed it; the curve always starts at FPPI 0 so
/// every reference point is covered.
pub fn log_average_miss_rate(images: &[ImageMatch]) -> Result<f64, MetricsError> {
    let curve = miss_rate_curve(images)?;
    Ok(lamr_from_curve(&curve))
}

fn lamr_from_curve(curve: &[CurvePoint]) -> f64 {
    let refs = fppi_reference_points();
    let mean_log = refs
        .iter()
        .map(|&r| {
            let idx = curve.partition_point(|p| p.fppi <= r);
            let m = curve[idx.max(1) - 1].miss_rate;
            m.max(MISS_FLOOR).ln()
        })
        .sum::<f64>()
        / refs.len() as f64;
    100.0 * mean_log.exp()
}

/// Percent; 0 when there are no detections.
pub fn average_precision(images: &[ImageMatch], mode: ApMode) -> Result<f64, MetricsError> {
    let curve = miss_rate_curve(images)?;
    Ok(ap_from_curve(&curve, mode))
}

fn ap_from_curve(curve: &[CurvePoint], mode: ApMode) -> f64 {
    let pts = &curve[1..];
    if pts.is_empty() {
        return 0.0;
    }
    let rec: Vec<f64> = pts.iter().map(|p| p.recall).collect();
    let mut env: Vec<f64> = pts.iter().map(|p| p.precision).collect();
    for k in (0..env.len().saturating_sub(1)).rev() {
        env[k] = env[k].max(env[k + 1]);
    }
    let area = match mode {
        ApMode::Coco101 => {
            (0..=100)
                .map(|t| {
                    let r = t as f64 / 100.0;
                    let k = rec.partition_point(|&x| x < r - 1e-12);
                    env.get(k).copied().unwrap_or(0.0)
                })
                .sum::<f64>()
                / 101.0
        }
        ApMode::AllPoints => {
            let mut prev = 0.0;
            let mut a = 0.0;
            for (r, p) in rec.iter().zip(&env) {
                a += (r - prev) * p;
                prev = *r;
            }
            a
        }
    };
    100.0 * area
}

pub fn evaluate(images: &[ImageMatch], mode: ApMode) -> Result<EvalResult, MetricsError> {
    let curve = miss_rate_curve(images)?;
    let num_gt = images.iter().map(|m| m.num_gt).sum();
    Ok(EvalResult {
        mr: lamr_from_curve(&curve),
        ap: ap_from_curve(&curve, mode),
        recall: 100.0 * curve.last().map_or(0.0, |p| p.recall),
        num_images: images.len(),
        num_gt,
        fppi_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::GroundTruthSet;
    use crate::geometry::BBox;
    use crate::metrics::{match_detections, Detection};
    use proptest::prelude::*;

    fn gt_box(k: usize) -> BBox {
        let x = 100.0 * k as f64;
        BBox::new(x, 0.0, x + 40.0, 100.0)
    }

    /// `(gt count, [(gt index or None for a stray box, score)])` per image.
    type Fixture = Vec<(usize, Vec<(Option<usize>, f64)>)>;

    fn build(fixture: &Fixture) -> Vec<(Vec<Detection>, GroundTruthSet)> {
        fixture
            .iter()
            .enumerate()
            .map(|(i, (n, dets))| {
                let gts = GroundTruthSet::from_boxes((0..*n).map(gt_box).collect());
                let dets = dets
                    .iter()
                    .map(|(g, s)| {
                        let b = match g {
                            Some(k) => gt_box(*k),
                            None => BBox::new(5000.0, 0.0, 5040.0, 100.0),
                        };
                        Detection::new(b, *s, i.to_string())
                    })
                    .collect();
                (dets, gts)
            })
            .collect()
    }

    fn matched(data: &[(Vec<Detection>, GroundTruthSet)]) -> Vec<ImageMatch> {
        data.iter().map(|(d, g)| match_detections(d, g, 0.5)).collect()
    }

    /// Re-matches every image at every distinct threshold and, per reference
    /// point, takes the smallest miss rate among operating points whose FPPI
    /// stays within it.
    fn mr_oracle(data: &[(Vec<Detection>, GroundTruthSet)]) -> f64 {
        let mut thresholds: Vec<f64> = data.iter().flat_map(|(d, _)| d.iter().map(|x| x.score)).collect();
        thresholds.push(f64::INFINITY);
        let n_gt: usize = data.iter().map(|(_, g)| g.num_active()).sum();
        let ops: Vec<(f64, f64)> = thresholds
            .iter()
            .map(|&t| {
                let (mut tp, mut fp) = (0, 0);
                for (d, g) in data {
                    let kept: Vec<Detection> = d.iter().filter(|x| x.score >= t).cloned().collect();
                    let m = match_detections(&kept, g, 0.5);
                    tp += m.true_positives();
                    fp += m.false_positives();
                }
                (fp as f64 / data.len() as f64, 1.0 - tp as f64 / n_gt as f64)
            })
            .collect();
        let logs: f64 = (0..9)
            .map(|k| {
                let r = 10f64.powf(-2.0 + 0.5 * k as f64);
                let m = ops
                    .iter()
                    .filter(|o| o.0 <= r)
                    .map(|o| o.1)
                    .fold(f64::INFINITY, f64::min);
                m.max(1e-10).ln()
            })
            .sum();
        100.0 * (logs / 9.0).exp()
    }

    #[test]
    fn reference_points_span_four_decades() {
        let r = fppi_reference_points();
        assert!((r[0] - 0.01).abs() < 1e-15);
        assert!((r[4] - 1.0).abs() < 1e-12);
        assert!((r[8] - 100.0).abs() < 1e-10);
    }

    #[test]
    fn empty_detections_give_full_miss_rate() {
        let data = build(&vec![(3, vec![]), (1, vec![])]);
        assert_eq!(log_average_miss_rate(&matched(&data)).unwrap(), 100.0);
        assert_eq!(average_precision(&matched(&data), ApMode::Coco101).unwrap(), 0.0);
    }

    #[test]
    fn perfect_detector() {
        let data = build(&vec![
            (2, vec![(Some(0), 0.9), (Some(1), 0.8)]),
            (1, vec![(Some(0), 0.7)]),
        ]);
        let r = evaluate(&matched(&data), ApMode::Coco101).unwrap();
        assert!((r.mr - 100.0 * MISS_FLOOR).abs() < 1e-15);
        assert!((r.ap - 100.0).abs() < 1e-12);
        assert_eq!(r.recall, 100.0);
    }

    #[test]
    fn no_ground_truth_is_an_error() {
        let data = build(&vec![(0, vec![(None, 0.5)])]);
        assert!(matches!(
            log_average_miss_rate(&matched(&data)),
            Err(MetricsError::MrUndefined)
        ));
    }

    #[test]
    fn hand_placed_three_image_set_matches_oracle() {
        let fixture: Fixture = vec![
            (2, vec![(Some(0), 0.95), (None, 0.9), (Some(1), 0.4)]),
            (1, vec![(None, 0.8), (None, 0.3), (Some(0), 0.6)]),
            (3, vec![(Some(2), 0.7), (Some(2), 0.65), (None, 0.2), (Some(0), 0.1)]),
        ];
        let data = build(&fixture);
        let got = log_average_miss_rate(&matched(&data)).unwrap();
        let want = mr_oracle(&data);
        assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    }

    #[test]
    fn ap_staircase_matches_riemann_sum() {
        // TP, FP, TP, FP, FP, TP over 4 GTs
        let fixture: Fixture = vec![(
            4,
            vec![
                (Some(0), 0.9),
                (None, 0.8),
                (Some(1), 0.7),
                (None, 0.6),
                (None, 0.5),
                (Some(2), 0.4),
            ],
        )];
        let m = matched(&build(&fixture));
        // recall steps of 0.25; envelope precisions 1, 2/3, 1/2 for the three
        // recall levels reached, 0 for the last quarter
        let env = |r: f64| {
            if r <= 0.25 {
                1.0
            } else if r <= 0.5 {
                2.0 / 3.0
            } else if r <= 0.75 {
                0.5
            } else {
                0.0
            }
        };
        let n = 200_000;
        let riemann: f64 = (1..=n).map(|i| env((i as f64 - 0.5) / n as f64)).sum::<f64>() / n as f64;
        let all = average_precision(&m, ApMode::AllPoints).unwrap();
        assert!((all - 100.0 * riemann).abs() < 1e-3, "{all} vs {}", 100.0 * riemann);
        let sampled: f64 = (0..=100).map(|t| env(t as f64 / 100.0)).sum::<f64>() / 101.0;
        let coco = average_precision(&m, ApMode::Coco101).unwrap();
        assert!((coco - 100.0 * sampled).abs() < 1e-9);
    }

    #[test]
    fn ignored_detections_do_not_count() {
        let mut gts = GroundTruthSet::from_boxes(vec![gt_box(0)]);
        gts.push(gt_box(1), 0, true);
        let dets = vec![Detection::new(gt_box(1), 0.9, "0"), Detection::new(gt_box(0), 0.5, "0")];
        let m = vec![match_detections(&dets, &gts, 0.5)];
        let curve = miss_rate_curve(&m).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[1].fppi, 0.0);
        assert_eq!(curve[1].miss_rate, 0.0);
    }

    fn fixture_strategy() -> impl Strategy<Value = Fixture> {
        proptest::collection::vec(
            (1usize..4).prop_flat_map(|n| {
                let det = (proptest::option::of(0..n), (0u32..10).prop_map(|s| s as f64 / 10.0));
                (Just(n), proptest::collection::vec(det, 0..6))
            }),
            1..4,
        )
    }

    proptest! {
        #[test]
        fn mr_matches_enumeration_oracle(fixture in fixture_strategy()) {
            let data = build(&fixture);
            let got = log_average_miss_rate(&matched(&data)).unwrap();
            let want = mr_oracle(&data);
            prop_assert!((got - want).abs() <= 1e-9 * want);
        }

        #[test]
        fn mr_monotone_under_added_detections(fixture in fixture_strategy(), img in 0usize..4, s in 0u32..10, tp in any::<bool>()) {
            let base = build(&fixture);
            let mr0 = log_average_miss_rate(&matched(&base)).unwrap();
            let img = img % fixture.len();
            let mut extended = fixture.clone();
            let n = fixture[img].0;
            // a fresh TP needs a GT no existing detection already hits
            let used: Vec<usize> = fixture[img].1.iter().filter_map(|d| d.0).collect();
            let free = (0..n).find(|k| !used.contains(k));
            let entry = if tp { free.map(Some) } else { Some(None) };
            prop_assume!(entry.is_some());
            extended[img].1.push((entry.unwrap(), s as f64 / 10.0));
            let mr1 = log_average_miss_rate(&matched(&build(&extended))).unwrap();
            if tp {
                prop_assert!(mr1 <= mr0 + 1e-12);
            } else {
                prop_assert!(mr1 >= mr0 - 1e-12);
            }
        }

        #[test]
        fn curve_and_scores_bounded(fixture in fixture_strategy()) {
            let r = evaluate(&matched(&build(&fixture)), ApMode::Coco101).unwrap();
            prop_assert!((0.0..=100.0).contains(&r.ap));
            prop_assert!((0.0..=100.0).contains(&r.recall));
            for w in r.fppi_curve.windows(2) {
                prop_assert!(w[1].miss_rate <= w[0].miss_rate);
                prop_assert!(w[1].fppi >= w[0].fppi);
            }
        }
    }
}
