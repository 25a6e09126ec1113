//! Per-pair classification and regression loss kernels.
//!
//! These are evaluated for every (ground truth, anchor) pair when building a
//! cost matrix, so they are plain scalar functions with no allocation.

use serde::{Deserialize, Serialize};

use crate::error::AssignError;
use crate::geometry::{giou, iou, BBox};

/// Probabilities are clamped into `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<(), AssignError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(AssignError::InvalidParameter(format!(
                "focal alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(AssignError::InvalidParameter(format!(
                "focal gamma must be a finite value >= 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    if p.is_nan() {
        return EPS;
    }
    p.clamp(EPS, 1.0 - EPS)
}

/// Sigmoid focal loss for a single score.
///
/// `-alpha (1-p)^gamma ln p` for a positive target and
/// `-(1-alpha) p^gamma ln(1-p)` for a negative one.
pub fn focal_loss(p: f64, positive: bool, params: FocalParams) -> f64 {
    let p = clamp_prob(p);
    if positive {
        -params.alpha * (1.0 - p).powf(params.gamma) * p.ln()
    } else {
        -(1.0 - params.alpha) * p.powf(params.gamma) * (1.0 - p).ln()
    }
}

/// Analytic `d focal_loss / dp`. Zero outside the clamp band, where the loss
/// is saturated.
pub fn focal_loss_grad(p: f64, positive: bool, params: FocalParams) -> f64 {
    if !(EPS..=1.0 - EPS).contains(&p) {
        return 0.0;
    }
    let FocalParams { alpha, gamma } = params;
    let focus_term = |base: f64, log: f64| {
        if gamma == 0.0 {
            0.0
        } else {
            gamma * base.powf(gamma - 1.0) * log
        }
    };
    if positive {
        let q = 1.0 - p;
        alpha * (focus_term(q, p.ln()) - q.powf(gamma) / p)
    } else {
        let q = 1.0 - p;
        (1.0 - alpha) * (-focus_term(p, q.ln()) + p.powf(gamma) / q)
    }
}

/// Binary cross entropy.
pub fn bce_loss(p: f64, positive: bool) -> f64 {
    let p = clamp_prob(p);
    if positive {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `1 - IoU`, in `[0, 1]`.
pub fn iou_loss(pred: &BBox, gt: &BBox) -> f64 {
    1.0 - iou(pred, gt)
}

/// `-ln IoU` with the IoU floored at [`EPS`].
pub fn log_iou_loss(pred: &BBox, gt: &BBox) -> f64 {
    -iou(pred, gt).max(EPS).ln()
}

/// `1 - GIoU`, in `[0, 2)`.
pub fn giou_loss(pred: &BBox, gt: &BBox) -> f64 {
    1.0 - giou(pred, gt)
}

/// Sum over coordinates of the Huber-style smooth L1 with breakpoint `beta`.
pub fn smooth_l1(pred: &[f64; 4], gt: &[f64; 4], beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    pred.iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = (p - g).abs();
            if d < beta {
                0.5 * d * d / beta
            } else {
                d - 0.5 * beta
            }
        })
        .sum()
}

/// Classification kernel used inside the cost matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ClsLoss {
    Focal(FocalParams),
    Bce,
}

impl Default for ClsLoss {
    fn default() -> Self {
        ClsLoss::Focal(FocalParams::default())
    }
}

impl ClsLoss {
    #[inline]
    pub fn eval(&self, p: f64, positive: bool) -> f64 {
        match self {
            ClsLoss::Focal(params) => focal_loss(p, positive, *params),
            ClsLoss::Bce => bce_loss(p, positive),
        }
    }

    pub fn validate(&self) -> Result<(), AssignError> {
        match self {
            ClsLoss::Focal(params) => params.validate(),
            ClsLoss::Bce => Ok(()),
        }
    }
}

/// Regression kernel used inside the cost matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegLoss {
    #[default]
    Iou,
    Giou,
    LogIou,
}

impl RegLoss {
    #[inline]
    pub fn eval(&self, pred: &BBox, gt: &BBox) -> f64 {
        match self {
            RegLoss::Iou => iou_loss(pred, gt),
            RegLoss::Giou => giou_loss(pred, gt),
            RegLoss::LogIou => log_iou_loss(pred, gt),
        }
    }

    /// Largest value the kernel can produce.
    pub fn upper_bound(&self) -> f64 {
        match self {
            RegLoss::Iou => 1.0,
            RegLoss::Giou => 2.0,
            RegLoss::LogIou => -EPS.ln(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn focal_closed_form() {
        let v = focal_loss(0.5, true, FocalParams::default());
        assert!((v - 0.25 * 0.25 * LN2).abs() < 1e-15);
        assert!((v - 0.0433).abs() < 1e-4);
        assert!(focal_loss(1.0, true, FocalParams::default()) < 1e-12);
    }

    #[test]
    fn focal_decreasing_in_p_for_positive() {
        let params = FocalParams::default();
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let v = focal_loss(k as f64 / 100.0, true, params);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn bce_closed_form() {
        assert!((bce_loss(0.5, true) - LN2).abs() < 1e-15);
        assert!((bce_loss(0.9, false) - 10f64.ln()).abs() < 1e-12);
        let bound = -(1.0 - EPS).ln();
        assert!(bce_loss(1.0, true) <= bound + 1e-18);
        assert!(bce_loss(0.0, false) <= bound + 1e-18);
    }

    #[test]
    fn clamp_keeps_losses_finite() {
        for p in [0.0, -1.0, 2.0, f64::NAN, 1.0] {
            for y in [true, false] {
                assert!(bce_loss(p, y).is_finite());
                assert!(focal_loss(p, y, FocalParams::default()).is_finite());
            }
        }
        assert!((bce_loss(0.0, true) + EPS.ln()).abs() < 1e-12);
    }

    #[test]
    fn box_losses() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BBox::new(1.0, 1.0, 3.0, 3.0);
        let far = BBox::new(100.0, 100.0, 101.0, 101.0);
        assert_eq!(iou_loss(&a, &a), 0.0);
        assert_eq!(iou_loss(&a, &far), 1.0);
        assert!((iou_loss(&a, &b) - 6.0 / 7.0).abs() < 1e-15);
        assert!((iou_loss(&a, &b) - 0.8571).abs() < 1e-4);
        assert_eq!(giou_loss(&a, &a), 0.0);
        assert!(giou_loss(&a, &far) > 1.0 && giou_loss(&a, &far) < 2.0);
        let inner = BBox::new(0.5, 0.5, 1.5, 1.5);
        assert!((giou_loss(&inner, &a) - iou_loss(&inner, &a)).abs() < 1e-15);
        assert_eq!(log_iou_loss(&a, &a), 0.0);
        assert!((log_iou_loss(&a, &far) + EPS.ln()).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_branches() {
        let z = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(smooth_l1(&z, &z, 0.5), 0.0);
        let beta = 0.5;
        assert!((smooth_l1(&[1.5, 2.0, 3.0, 4.0], &z, beta) - beta / 2.0).abs() < 1e-15);
        assert!((smooth_l1(&[2.0, 2.0, 3.0, 4.0], &z, beta) - 1.5 * beta).abs() < 1e-15);
    }

    #[test]
    fn focal_gradient_matches_central_differences() {
        let h = 1e-6;
        for params in [
            FocalParams::default(),
            FocalParams { alpha: 0.5, gamma: 0.0 },
            FocalParams {
                alpha: 0.75,
                gamma: 1.5,
            },
        ] {
            for k in 1..=9 {
                let p = k as f64 / 10.0;
                for y in [true, false] {
                    let fd = (focal_loss(p + h, y, params) - focal_loss(p - h, y, params)) / (2.0 * h);
                    let an = focal_loss_grad(p, y, params);
                    let rel = (fd - an).abs() / an.abs().max(1e-12);
                    assert!(rel < 1e-4, "p={p} y={y} {params:?}: fd={fd} analytic={an}");
                }
            }
        }
    }

    #[test]
    fn focal_params_validation() {
        assert!(FocalParams { alpha: 1.5, gamma: 2.0 }.validate().is_err());
        assert!(FocalParams {
            alpha: 0.5,
            gamma: -1.0
        }
        .validate()
        .is_err());
        assert!(FocalParams::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn focal_reduces_to_half_bce(p in 0.0..=1.0f64, y: bool) {
            let f = focal_loss(p, y, FocalParams { alpha: 0.5, gamma: 0.0 });
            prop_assert!((f - 0.5 * bce_loss(p, y)).abs() < 1e-12);
        }

        #[test]
        fn losses_nonnegative(p in -1.0..2.0f64, y: bool, alpha in 0.0..=1.0f64, gamma in 0.0..5.0f64) {
            let f = focal_loss(p, y, FocalParams { alpha, gamma });
            prop_assert!(f >= 0.0 && f.is_finite());
            prop_assert!(bce_loss(p, y) >= 0.0);
        }
    }
}
