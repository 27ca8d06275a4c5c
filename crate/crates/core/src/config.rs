//! TOML engine configuration.
//!
//! Every section and key is optional; missing values take the defaults
//! printed by `attire-sentinel emit-defaults`. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::anomaly::{AdaptationParams, EngineParams, TemporalParams, ThresholdParams, ZonePolicies};
use crate::error::{Error, Result};
use crate::fuzzy::FuzzyRuleBase;
use crate::geometry::{Vocabulary, ZonePolicy};
use crate::loss::LossWeights;
use crate::pipeline::DecodeParams;
use crate::train::{SgdConfig, ToyFixtureParams};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub tensors: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

/// How `run` stamps alert lines. Timestamps come from the stream position,
/// not the wall clock, so repeated runs write identical logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// RFC 3339 time of frame 0.
    pub start_time: String,
    pub frame_interval_ms: u64,
    /// Write annotated copies of frames that have a PPM image.
    pub annotate_frames: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            start_time: "1970-01-01T00:00:00Z".into(),
            frame_interval_ms: 40,
            annotate_frames: true,
        }
    }
}

impl OutputConfig {
    pub fn start(&self) -> Result<DateTime<Utc>> {
        DateTime::parse_from_rfc3339(&self.start_time)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| Error::InvariantViolation(format!("output.start_time {:?}: {e}", self.start_time)))
    }

    /// ISO-8601 UTC time of `frame_id`, millisecond precision.
    pub fn timestamp(&self, frame_id: u64) -> Result<String> {
        let offset = frame_id
            .checked_mul(self.frame_interval_ms)
            .and_then(|ms| i64::try_from(ms).ok())
            .and_then(chrono::TimeDelta::try_milliseconds)
            .ok_or_else(|| Error::InvariantViolation(format!("frame {frame_id} is too far from start_time")))?;
        let t = self.start()? + offset;
        Ok(t.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub loss: LossWeights,
    pub fixture: ToyFixtureParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        Self {
            epochs: 500,
            learning_rate: 0.005,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            loss: LossWeights::default(),
            fixture: ToyFixtureParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Jittered variants written per input image.
    pub count: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { count: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub match_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_iou: crate::eval::DEFAULT_MATCH_IOU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub decode: DecodeParams,
    /// Zone id to authorized attire classes. Replaced wholesale by a policy
    /// file when one is given.
    pub zones: BTreeMap<String, Vec<String>>,
    pub threshold: ThresholdParams,
    pub temporal: TemporalParams,
    pub adaptation: AdaptationParams,
    pub fuzzy: FuzzyRuleBase,
    pub output: OutputConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub eval: EvalConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl EngineConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(text, s.start));
            Error::parse(source, line, e.message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.decode.validate()?;
        self.threshold.validate()?;
        self.temporal.validate()?;
        self.adaptation.validate()?;
        self.fuzzy.validate()?;
        self.output.start()?;
        self.train.sgd().validate()?;
        self.train.loss.validate()?;
        if !(0.0..=1.0).contains(&self.eval.match_iou) {
            return Err(Error::InvariantViolation(format!("eval.match_iou {} outside [0, 1]", self.eval.match_iou)));
        }
        self.inline_policies().map(|_| ())
    }

    fn inline_policies(&self) -> Result<ZonePolicies> {
        let vocab = Vocabulary::attire();
        let mut out = Vec::new();
        for (zone, names) in &self.zones {
            let mut labels = Vec::new();
            for name in names {
                labels.push(vocab.lookup(name).ok_or_else(|| Error::VocabularyViolation {
                    label: name.clone(),
                    stage: format!("zones.{zone}"),
                })?);
            }
            out.push(ZonePolicy::new(zone.clone(), labels));
        }
        Ok(ZonePolicies::new(out))
    }

    /// The policy file if `paths.policy` is set, otherwise `[zones]`.
    pub fn policies(&self) -> Result<ZonePolicies> {
        match &self.paths.policy {
            Some(path) => ZonePolicies::load(path),
            None => self.inline_policies(),
        }
    }

    pub fn engine_params(&self) -> Result<EngineParams> {
        Ok(EngineParams {
            rule_base: self.fuzzy.clone(),
            threshold: self.threshold,
            temporal: self.temporal,
            adaptation: self.adaptation.clone(),
            policies: self.policies()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = EngineConfig::parse("[paths]\nframes = \"frames\"\n", "cfg.toml").unwrap();
        assert_eq!(cfg.paths.frames.as_deref(), Some(Path::new("frames")));
        assert_eq!(
            EngineConfig {
                paths: PathsConfig::default(),
                ..cfg
            },
            EngineConfig::default()
        );
        assert_eq!(EngineConfig::parse("", "x").unwrap(), EngineConfig::default());
    }

    #[test]
    fn defaults_round_trip() {
        let text = EngineConfig::default().to_toml();
        assert_eq!(EngineConfig::parse(&text, "defaults").unwrap(), EngineConfig::default());

        let mut cfg = EngineConfig::default();
        cfg.zones.insert("lab".into(), vec!["Jacket".into(), "Top".into()]);
        cfg.paths.out = Some("out".into());
        cfg.seed = 7;
        assert_eq!(EngineConfig::parse(&cfg.to_toml(), "x").unwrap(), cfg);
    }

    #[test]
    fn unordered_triangle_is_rejected() {
        let text = "[fuzzy.illumination]\ndark = [0.0, 0.0, 0.4]\nnormal = [0.5, 0.2, 0.8]\nbright = [0.6, 1.0, 1.0]\n";
        assert!(matches!(EngineConfig::parse(text, "x"), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn errors_name_the_line() {
        let err = EngineConfig::parse("seed = 1\n\n[threshold]\nbase = 0.5\nbogus = 2\n", "cfg.toml").unwrap_err();
        match err {
            Error::Parse { source_name, line, message } => {
                assert_eq!((source_name.as_str(), line), ("cfg.toml", 5));
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other}"),
        }
        assert!(matches!(EngineConfig::parse("[decode]\nconf_floor = \"x\"\n", "c"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            EngineConfig::parse("[zones]\nlab = [\"Hat\"]\n", "c"),
            Err(Error::VocabularyViolation { .. })
        ));
        assert!(EngineConfig::parse("[temporal]\nwindow = 2\nrequired = 3\n", "c").is_err());
    }

    #[test]
    fn stream_timestamps() {
        let out = OutputConfig::default();
        assert_eq!(out.timestamp(0).unwrap(), "1970-01-01T00:00:00.000Z");
        assert_eq!(out.timestamp(26).unwrap(), "1970-01-01T00:00:01.040Z");
        let shifted = OutputConfig {
            start_time: "2026-03-01T12:00:00+02:00".into(),
            ..out
        };
        assert_eq!(shifted.timestamp(1).unwrap(), "2026-03-01T10:00:00.040Z");
    }
}
