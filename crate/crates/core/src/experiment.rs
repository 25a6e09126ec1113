//! Seeded synthetic batches: generate scenes, run assigners, and score the
//! outcome with ambiguity, visibility, allocation and proxy-detector metrics.
//!
//! The proxy detector stands in for a network trained with a given
//! assignment: every positive anchor emits its assigned GT's box at the
//! predictor's current maturity and score; every other anchor emits its own
//! predicted box at a damped score. Results go through NMS and the usual
//! miss-rate evaluation and are always labelled "proxy".

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{build_anchor_grid, AnchorSet};
use crate::assign::{
    atss_assign, fcos_assign, lla, retinanet_assign, AssignOutcome, Assignment, Label, LlaConfig, Predictions,
};
use crate::error::{Error, MetricsError};
use crate::geometry::BBox;
use crate::io::HarnessConfig;
use crate::losses::RegLoss;
use crate::metrics::{
    aar, evaluate, fpn_allocation, match_detections, nms, AarReport, Detection, EvalResult, GtAllocation, ImageMatch,
};
use crate::scene::{generate_scene_with, mock_predict, MockPredictorConfig, Scene};

/// Occlusion above which a GT counts as heavily occluded.
pub const HEAVY_OCCLUSION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignerKind {
    Lla,
    /// Loss-aware without the in-box penalty.
    LlaNoinbox,
    /// Loss-aware with the regression term switched off.
    LlaClsonly,
    /// Loss-aware with a GIoU regression cost.
    LlaGiou,
    Retinanet,
    Fcos,
    Atss,
}

impl AssignerKind {
    pub const ALL: [AssignerKind; 7] = [
        AssignerKind::Lla,
        AssignerKind::LlaNoinbox,
        AssignerKind::LlaClsonly,
        AssignerKind::LlaGiou,
        AssignerKind::Retinanet,
        AssignerKind::Fcos,
        AssignerKind::Atss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AssignerKind::Lla => "lla",
            AssignerKind::LlaNoinbox => "lla-noinbox",
            AssignerKind::LlaClsonly => "lla-clsonly",
            AssignerKind::LlaGiou => "lla-giou",
            AssignerKind::Retinanet => "retinanet",
            AssignerKind::Fcos => "fcos",
            AssignerKind::Atss => "atss",
        }
    }

    pub fn is_loss_aware(self) -> bool {
        matches!(
            self,
            AssignerKind::Lla | AssignerKind::LlaNoinbox | AssignerKind::LlaClsonly | AssignerKind::LlaGiou
        )
    }

    /// The loss-aware configuration this variant runs with.
    pub fn lla_config(self, base: &LlaConfig) -> LlaConfig {
        match self {
            AssignerKind::LlaNoinbox => LlaConfig {
                use_inbox: false,
                ..*base
            },
            AssignerKind::LlaClsonly => LlaConfig { lambda: 0.0, ..*base },
            AssignerKind::LlaGiou => LlaConfig {
                reg_loss: RegLoss::Giou,
                ..*base
            },
            _ => *base,
        }
    }
}

impl fmt::Display for AssignerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AssignerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            format!("unknown assigner `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// Everything needed to score one assigner on one scene.
#[derive(Debug, Clone)]
pub struct SceneRun {
    pub kind: AssignerKind,
    pub anchors: AnchorSet,
    pub predictions: Predictions,
    pub outcome: AssignOutcome,
}

/// Seed for scene `index` of a batch.
pub fn scene_seed(cfg: &HarnessConfig, index: usize) -> u64 {
    cfg.run.seed.wrapping_add(index as u64)
}

pub fn make_scene(cfg: &HarnessConfig, seed: u64) -> Result<Scene, Error> {
    let s = &cfg.scene;
    Ok(generate_scene_with(&s.generator, s.people, s.crowd_iou, seed)?)
}

fn predictor_for(cfg: &HarnessConfig, seed: u64) -> MockPredictorConfig {
    MockPredictorConfig {
        seed: cfg.predictor.seed.wrapping_add(seed),
        ..cfg.predictor
    }
}

/// Builds the assigner's anchors, predicts on them and assigns. `seed`
/// drives the predictor noise.
pub fn run_assigner(cfg: &HarnessConfig, kind: AssignerKind, scene: &Scene, seed: u64) -> Result<SceneRun, Error> {
    let anchors = build_anchor_grid(scene.image_w, scene.image_h, cfg.anchors.for_assigner(kind))?;
    let predictions = mock_predict(scene, &anchors, &predictor_for(cfg, seed))?;
    let a = &cfg.assigner;
    let outcome = match kind {
        AssignerKind::Retinanet => retinanet_assign(&anchors, &scene.gts, &a.retinanet),
        AssignerKind::Fcos => fcos_assign(&anchors, &scene.gts, &a.fcos)?,
        AssignerKind::Atss => atss_assign(&anchors, &scene.gts, &a.atss),
        k => lla(&predictions, &scene.gts, &anchors, &k.lla_config(&a.lla))?,
    };
    Ok(SceneRun {
        kind,
        anchors,
        predictions,
        outcome,
    })
}

/// Pooled share of positive anchor centers that land inside the visible box
/// of the GT they were given, over GTs at least `min_occlusion` occluded.
pub fn visible_share(scene: &Scene, anchors: &AnchorSet, assignment: &Assignment, min_occlusion: f64) -> Option<f64> {
    let (mut inside, mut total) = (0usize, 0usize);
    for (j, l) in assignment.labels.iter().enumerate() {
        if let Label::Positive(i) = *l {
            if scene.occlusion[i] >= min_occlusion {
                total += 1;
                inside += scene.visible[i].contains(anchors.centers[j]) as usize;
            }
        }
    }
    (total > 0).then(|| inside as f64 / total as f64)
}

/// Detections the proxy detector emits for one scene, before NMS.
pub fn proxy_detections(
    cfg: &HarnessConfig,
    scene: &Scene,
    run: &SceneRun,
    image_id: &str,
    seed: u64,
) -> Vec<Detection> {
    let m = cfg.predictor.maturity;
    let sigma = cfg.predictor.noise_sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, 0.1 * sigma).expect("sigma validated"));
    let mut out = Vec::new();
    for (j, l) in run.outcome.assignment.labels.iter().enumerate() {
        let p = run.predictions.scores[[j, 0]];
        let (mut b, score) = match *l {
            Label::Positive(i) => (run.anchors.boxes[j].lerp(&scene.gts.boxes[i], m), p),
            _ => (run.predictions.boxes[j], p * cfg.run.negative_damping),
        };
        if score < cfg.run.proxy_min_score {
            continue;
        }
        if let Some(n) = &noise {
            let (w, h) = (b.width().max(1.0), b.height().max(1.0));
            let x1 = b.x1 + n.sample(&mut rng) * w;
            let y1 = b.y1 + n.sample(&mut rng) * h;
            let x2 = b.x2 + n.sample(&mut rng) * w;
            let y2 = b.y2 + n.sample(&mut rng) * h;
            b = BBox::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2));
        }
        out.push(Detection::new(b, score, image_id));
    }
    out
}

/// Metrics for one assigner on one scene.
#[derive(Debug, Clone)]
pub struct SceneEval {
    pub seed: u64,
    pub kind: AssignerKind,
    pub num_gts: usize,
    pub positives: usize,
    pub aar: Option<AarReport>,
    pub visible_share: Option<f64>,
    pub allocation: Vec<GtAllocation>,
    pub proxy_match: ImageMatch,
}

pub fn evaluate_scene(cfg: &HarnessConfig, kind: AssignerKind, scene: &Scene, seed: u64) -> Result<SceneEval, Error> {
    let run = run_assigner(cfg, kind, scene, seed)?;
    let a = &run.outcome.assignment;
    let dets = nms(
        &proxy_detections(cfg, scene, &run, &seed.to_string(), seed),
        cfg.metrics.nms_iou,
    );
    Ok(SceneEval {
        seed,
        kind,
        num_gts: scene.len(),
        positives: a.num_positive(),
        aar: match aar(&run.outcome.matches, a) {
            Ok(r) => Some(r),
            Err(MetricsError::NoPositives) => None,
            Err(e) => return Err(e.into()),
        },
        visible_share: visible_share(scene, &run.anchors, a, HEAVY_OCCLUSION),
        allocation: fpn_allocation(a, &run.anchors, &scene.gts),
        proxy_match: match_detections(&dets, &scene.gts, cfg.metrics.match_iou),
    })
}

/// Evaluates every assigner on `cfg.run.scenes` seeded scenes. Scenes run in
/// parallel; output is indexed `[scene][assigner]` in input order.
pub fn run_batch(cfg: &HarnessConfig, kinds: &[AssignerKind]) -> Result<Vec<Vec<SceneEval>>, Error> {
    (0..cfg.run.scenes)
        .into_par_iter()
        .map(|i| {
            let seed = scene_seed(cfg, i);
            let scene = make_scene(cfg, seed)?;
            kinds.iter().map(|&k| evaluate_scene(cfg, k, &scene, seed)).collect()
        })
        .collect()
}

/// Batch-level figures for one assigner.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub assigner: AssignerKind,
    pub scenes: usize,
    /// Mean per-scene AAR percent over scenes with positives.
    pub aar_mean: Option<f64>,
    /// Pooled ambiguous / positive anchors, percent.
    pub aar_pooled: Option<f64>,
    pub ambiguous: usize,
    pub positives: usize,
    pub positives_per_gt: f64,
    pub visible_share_mean: Option<f64>,
    /// GT counts per modal stage, unassigned last.
    pub stage_histogram: Vec<usize>,
    pub proxy: Option<EvalResult>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Order-independent reduction of per-scene results for one assigner.
pub fn summarize(cfg: &HarnessConfig, kind: AssignerKind, evals: &[&SceneEval]) -> Result<Summary, Error> {
    let levels = cfg.anchors.for_assigner(kind).num_levels();
    let mut hist = vec![0usize; levels + 1];
    for a in evals.iter().flat_map(|e| e.allocation.iter()) {
        match a.stage {
            Some(s) => hist[s as usize] += 1,
            None => hist[levels] += 1,
        }
    }
    let ambiguous: usize = evals.iter().filter_map(|e| e.aar).map(|r| r.ambiguous).sum();
    let positives: usize = evals.iter().map(|e| e.positives).sum();
    let gts: usize = evals.iter().map(|e| e.num_gts).sum();
    let matches: Vec<ImageMatch> = evals.iter().map(|e| e.proxy_match.clone()).collect();
    let proxy = match evaluate(&matches, cfg.metrics.ap_mode) {
        Ok(r) => Some(r),
        Err(MetricsError::MrUndefined) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(Summary {
        assigner: kind,
        scenes: evals.len(),
        aar_mean: mean(evals.iter().filter_map(|e| e.aar).map(|r| r.percent)),
        aar_pooled: (positives > 0).then(|| 100.0 * ambiguous as f64 / positives as f64),
        ambiguous,
        positives,
        positives_per_gt: if gts == 0 { 0.0 } else { positives as f64 / gts as f64 },
        visible_share_mean: mean(evals.iter().filter_map(|e| e.visible_share)),
        stage_histogram: hist,
        proxy,
    })
}

/// Runs a batch and summarizes each assigner, in the order given.
pub fn compare(cfg: &HarnessConfig, kinds: &[AssignerKind]) -> Result<(Vec<Summary>, Vec<Vec<SceneEval>>), Error> {
    let batch = run_batch(cfg, kinds)?;
    let summaries = (0..kinds.len())
        .map(|k| {
            let col: Vec<&SceneEval> = batch.iter().map(|row| &row[k]).collect();
            summarize(cfg, kinds[k], &col)
        })
        .collect::<Result<_, _>>()?;
    Ok((summaries, batch))
}

/// Loss-aware summary for each K, on the same scenes.
pub fn sweep_k(cfg: &HarnessConfig, ks: &[usize]) -> Result<Vec<Summary>, Error> {
    ks.iter()
        .map(|&k| {
            let mut c = cfg.clone();
            c.assigner.lla.k = k;
            c.validate()?;
            let (mut s, _) = compare(&c, &[AssignerKind::Lla])?;
            Ok(s.remove(0))
        })
        .collect()
}
