//! Harness configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorConfig;
use crate::assign::{AtssConfig, FcosConfig, LlaConfig, RetinaConfig};
use crate::error::IoError;
use crate::experiment::AssignerKind;
use crate::metrics::MetricsConfig;
use crate::scene::{MockPredictorConfig, SceneConfig};

/// Every top-level section must be present; fields inside a section fall
/// back to their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub assigner: AssignerSection,
    pub anchors: AnchorSection,
    pub scene: SceneSection,
    pub predictor: MockPredictorConfig,
    pub metrics: MetricsConfig,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignerSection {
    pub name: AssignerKind,
    pub lla: LlaConfig,
    pub retinanet: RetinaConfig,
    pub fcos: FcosConfig,
    pub atss: AtssConfig,
}

impl Default for AssignerSection {
    fn default() -> Self {
        Self {
            name: AssignerKind::Lla,
            lla: LlaConfig::default(),
            retinanet: RetinaConfig::default(),
            fcos: FcosConfig::default(),
            atss: AtssConfig::default(),
        }
    }
}

/// Anchor layout used by each assigner family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorSection {
    pub lla: AnchorConfig,
    pub retinanet: AnchorConfig,
    pub fcos: AnchorConfig,
    pub atss: AnchorConfig,
}

impl Default for AnchorSection {
    fn default() -> Self {
        Self {
            lla: AnchorConfig::single(),
            retinanet: AnchorConfig::retinanet9(),
            fcos: AnchorConfig::points(),
            atss: AnchorConfig::single(),
        }
    }
}

impl AnchorSection {
    pub fn for_assigner(&self, kind: AssignerKind) -> &AnchorConfig {
        match kind {
            AssignerKind::Retinanet => &self.retinanet,
            AssignerKind::Fcos => &self.fcos,
            AssignerKind::Atss => &self.atss,
            _ => &self.lla,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub people: usize,
    /// Target IoU between neighbouring pedestrians.
    pub crowd_iou: f64,
    pub generator: SceneConfig,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            people: 12,
            crowd_iou: 0.5,
            generator: SceneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Scene `i` of a batch uses seed `seed + i`.
    pub seed: u64,
    pub scenes: usize,
    /// Score multiplier for detections emitted by negative anchors in the
    /// proxy detector.
    pub negative_damping: f64,
    /// Proxy detections scoring below this are dropped before NMS.
    pub proxy_min_score: f64,
    /// Predictor maturities for `evolve`.
    pub schedule: Vec<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 20,
            negative_damping: 0.3,
            proxy_min_score: 0.05,
            schedule: vec![0.0, 0.5, 1.0],
        }
    }
}

fn invalid(path: &str, e: impl ToString) -> IoError {
    IoError::Config {
        path: path.to_string(),
        message: e.to_string(),
    }
}

impl HarnessConfig {
    pub fn from_json(text: &str) -> Result<Self, IoError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let a = &self.assigner;
        a.lla.validate().map_err(|e| invalid("assigner.lla", e))?;
        a.retinanet.validate().map_err(|e| invalid("assigner.retinanet", e))?;
        for (name, cfg) in [
            ("lla", &self.anchors.lla),
            ("retinanet", &self.anchors.retinanet),
            ("fcos", &self.anchors.fcos),
            ("atss", &self.anchors.atss),
        ] {
            cfg.validate().map_err(|e| invalid(&format!("anchors.{name}"), e))?;
        }
        a.fcos
            .validate(self.anchors.fcos.num_levels())
            .map_err(|e| invalid("assigner.fcos", e))?;
        if a.atss.top_candidates == 0 {
            return Err(invalid("assigner.atss.top_candidates", "must be at least 1"));
        }
        self.scene
            .generator
            .validate()
            .map_err(|e| invalid("scene.generator", e))?;
        if !(0.0..1.0).contains(&self.scene.crowd_iou) {
            return Err(invalid("scene.crowd_iou", "must lie in [0, 1)"));
        }
        self.predictor.validate().map_err(|e| invalid("predictor", e))?;
        self.metrics.validate().map_err(|e| invalid("metrics", e))?;
        if !(0.0..=1.0).contains(&self.run.negative_damping) {
            return Err(invalid("run.negative_damping", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.run.proxy_min_score) {
            return Err(invalid("run.proxy_min_score", "must lie in [0, 1]"));
        }
        if let Some(m) = self.run.schedule.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(invalid("run.schedule", format!("maturity {m} outside [0, 1]")));
        }
        if self.run.schedule.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("run.schedule", "maturities must be nondecreasing"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"assigner": {}, "anchors": {}, "scene": {}, "predictor": {}, "metrics": {}, "run": {}}"#;

    #[test]
    fn minimal_config_takes_defaults() {
        assert_eq!(HarnessConfig::from_json(MINIMAL).unwrap(), HarnessConfig::default());
    }

    #[test]
    fn default_round_trips() {
        let cfg = HarnessConfig::default();
        assert_eq!(HarnessConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    fn err_path(text: &str) -> String {
        match HarnessConfig::from_json(text) {
            Err(IoError::Config { path, .. }) => path,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_carry_field_paths() {
        assert_eq!(err_path(r#"{"assigner": {}}"#), ".");
        let bad_k = MINIMAL.replace(r#""assigner": {}"#, r#""assigner": {"lla": {"k": "ten"}}"#);
        assert_eq!(err_path(&bad_k), "assigner.lla.k");
        let zero_k = MINIMAL.replace(r#""assigner": {}"#, r#""assigner": {"lla": {"k": 0}}"#);
        assert_eq!(err_path(&zero_k), "assigner.lla");
        let unknown = MINIMAL.replace(r#""run": {}"#, r#""run": {"sed": 1}"#);
        assert_eq!(err_path(&unknown), "run.sed");
        let name = MINIMAL.replace(r#""assigner": {}"#, r#""assigner": {"name": "yolo"}"#);
        assert_eq!(err_path(&name), "assigner.name");
    }

    #[test]
    fn missing_section_is_reported() {
        match HarnessConfig::from_json(r#"{"assigner": {}}"#) {
            Err(e @ IoError::Config { .. }) => {
                assert!(e.is_usage());
                assert!(e.to_string().contains("missing field"), "{e}");
            }
            other => panic!("{other:?}"),
        }
    }
}
