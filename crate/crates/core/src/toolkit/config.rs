use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{ModelConfig, StagePlan};
use crate::error::{Error, Result};
use crate::toolkit::corpus::CorpusSpec;

fn default_seed() -> u64 {
    1
}
fn default_batch() -> usize {
    8
}
fn default_crop_seconds() -> f64 {
    1.0
}
fn default_steps() -> [u64; 3] {
    [2000, 2000, 1000]
}

/// Batch assembly and defaults for stages without an explicit plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_crop_seconds")]
    pub crop_seconds: f64,
    /// Trailing manifest entries withheld from training.
    #[serde(default)]
    pub heldout: usize,
    #[serde(default = "default_steps")]
    pub steps: [u64; 3],
    #[serde(default)]
    pub lr_max: Option<f64>,
    #[serde(default)]
    pub lr_min: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: default_seed(),
            batch: default_batch(),
            crop_seconds: default_crop_seconds(),
            heldout: 0,
            steps: default_steps(),
            lr_max: None,
            lr_min: None,
        }
    }
}

/// The single JSON document driving the CLI.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub corpus: CorpusSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Explicit plans override the defaults derived from `train`.
    #[serde(default)]
    pub stages: Vec<StagePlan>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.corpus.validate()?;
        let t = &self.train;
        if t.batch == 0 {
            return Err(Error::Config("train.batch must be positive".into()));
        }
        if self.crop_samples() == 0 || !self.crop_samples().is_multiple_of(self.model.r) {
            return Err(Error::Config(format!(
                "crop of {} samples is not a positive multiple of r = {}",
                self.crop_samples(),
                self.model.r
            )));
        }
        for p in &self.stages {
            p.validate()?;
        }
        for s in 1..=3u8 {
            if self.stages.iter().filter(|p| p.stage == s).count() > 1 {
                return Err(Error::Config(format!("stage {s} is planned twice")));
            }
        }
        Ok(())
    }

    pub fn crop_samples(&self) -> usize {
        (self.train.crop_seconds * self.model.sample_rate as f64).round() as usize
    }

    pub fn plan(&self, stage: u8) -> Result<StagePlan> {
        if let Some(p) = self.stages.iter().find(|p| p.stage == stage) {
            return Ok(p.clone());
        }
        let idx = usize::from(stage).checked_sub(1).filter(|&i| i < 3);
        let steps = idx
            .map(|i| self.train.steps[i])
            .ok_or_else(|| Error::Config(format!("stage must be 1, 2 or 3 (got {stage})")))?;
        let mut plan = StagePlan::new(stage, steps)?;
        if let Some(hi) = self.train.lr_max {
            plan = plan.with_lr(hi, self.train.lr_min.unwrap_or(hi / 10.0));
        }
        plan.validate()?;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_uses_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.crop_samples(), 16000);
        assert_eq!(cfg.plan(3).unwrap().steps, 1000);
    }

    #[test]
    fn unknown_keys_fail() {
        assert!(matches!(RunConfig::from_json(r#"{"modle": {}}"#), Err(Error::Json(_))));
        assert!(RunConfig::from_json(r#"{"train": {"batch": 2, "lr": 1}}"#).is_err());
    }

    #[test]
    fn lr_override_and_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.train.lr_max = Some(1e-3);
        let p = cfg.plan(2).unwrap();
        assert_eq!(p.schedule.lr_max, 1e-3);
        assert!((p.schedule.lr_min - 1e-4).abs() < 1e-18);
        cfg.stages.push(StagePlan::new(1, 5).unwrap());
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.plan(1).unwrap().steps, 5);
        assert!(back.plan(4).is_err());
    }

    #[test]
    fn crop_must_align_with_frames() {
        let mut cfg = RunConfig::default();
        cfg.train.crop_seconds = 0.01;
        assert!(cfg.validate().is_err());
    }
}
