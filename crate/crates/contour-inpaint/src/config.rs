//! Run configuration with named profiles. A TOML file (or the path in
//! `CONTOUR_INPAINT_CONFIG`) overrides profile defaults key by key; unknown
//! keys are rejected. Every artifact records the configuration hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contour::ContourLossConfig;
use crate::data::{BrushConfig, Regime, SampleConfig, SceneConfig};
use crate::error::{Error, Result};
use crate::trainer::{
    ContourTrainCfg, CurriculumSchedule, ImageTrainCfg, JointMode, JointTrainCfg, OptimConfig,
};

pub const CONFIG_ENV_VAR: &str = "CONTOUR_INPAINT_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub n_images: usize,
    pub regimes: Vec<Regime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub ckpt_dir: PathBuf,
    pub report_dir: PathBuf,
    pub scene: SceneConfig,
    pub brush: BrushConfig,
    pub sobel_threshold: f64,
    pub width_mult: f64,
    pub optim: OptimConfig,
    /// First steps of curriculum stages 2 and 3.
    pub stage_boundaries: (usize, usize),
    pub lambda: f64,
    pub bce_clamp_eps: f64,
    /// Number of ground-truth scenes in the training pool.
    pub n_scenes: usize,
    pub eval: EvalSection,
}

impl RunConfig {
    /// CI-sized profile: 64x64 crops, quarter-width networks, batch 8.
    pub fn desk() -> Self {
        RunConfig {
            profile: "desk".into(),
            seed: 0,
            data_dir: PathBuf::from("data"),
            ckpt_dir: PathBuf::from("checkpoints"),
            report_dir: PathBuf::from("reports"),
            scene: SceneConfig::default(),
            brush: BrushConfig::default(),
            sobel_threshold: 1.0,
            width_mult: 0.25,
            optim: OptimConfig {
                learning_rate: 2e-4,
                batch_size: 8,
                beta1: 0.5,
                beta2: 0.999,
                eps: 1e-8,
                steps: 10_000,
            },
            stage_boundaries: (3_000, 6_000),
            lambda: 5.0,
            bce_clamp_eps: 1e-6,
            n_scenes: 500,
            eval: EvalSection {
                n_images: 100,
                regimes: vec![Regime::Overlap, Regime::NonOverlap],
            },
        }
    }

    /// Full-scale profile: 256x256, full-width networks, batch 64.
    pub fn paper() -> Self {
        RunConfig {
            profile: "paper".into(),
            scene: SceneConfig {
                canvas: 256,
                ..SceneConfig::default()
            },
            width_mult: 1.0,
            optim: OptimConfig {
                learning_rate: 2e-4,
                batch_size: 64,
                beta1: 0.5,
                beta2: 0.999,
                eps: 1e-8,
                steps: 100_000,
            },
            stage_boundaries: (30_000, 60_000),
            n_scenes: 12_600,
            eval: EvalSection {
                n_images: 500,
                regimes: vec![Regime::Overlap, Regime::NonOverlap],
            },
            ..RunConfig::desk()
        }
    }

    pub fn by_profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "paper" => Ok(RunConfig::paper()),
            other => Err(Error::Config(format!(
                "unknown profile '{other}' (expected desk or paper)"
            ))),
        }
    }

    /// Load a TOML file over profile defaults: the file's `profile` key (or
    /// `flag_profile` when given) selects the base; every other present key
    /// overrides the default; unknown keys are rejected.
    pub fn load(path: &Path, flag_profile: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file_io(path, e))?;
        let file_val: toml::Value = toml::from_str(&text)?;
        let profile = match flag_profile {
            Some(p) => p.to_string(),
            None => file_val
                .get("profile")
                .and_then(|v| v.as_str())
                .unwrap_or("desk")
                .to_string(),
        };
        let base = RunConfig::by_profile(&profile)?;
        let mut merged = toml::Value::try_from(&base)
            .map_err(|e| Error::Config(format!("profile serialization failed: {e}")))?;
        deep_merge(&mut merged, &file_val);
        let cfg: RunConfig = merged
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolve from an explicit path, the environment variable, or the
    /// bare profile defaults, in that order.
    pub fn resolve(path: Option<&Path>, flag_profile: Option<&str>) -> Result<Self> {
        match path {
            Some(p) => RunConfig::load(p, flag_profile),
            None => match std::env::var_os(CONFIG_ENV_VAR) {
                Some(p) => RunConfig::load(Path::new(&p), flag_profile),
                None => RunConfig::by_profile(flag_profile.unwrap_or("desk")),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.brush.validate()?;
        self.optim.validate()?;
        if self.stage_boundaries.0 > self.stage_boundaries.1 {
            return Err(Error::Config("stage_boundaries must be ordered".into()));
        }
        if self.n_scenes == 0 {
            return Err(Error::Config("n_scenes must be >= 1".into()));
        }
        Ok(())
    }

    /// Short hash of the canonical JSON form; recorded in every artifact.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            scene: SceneConfig {
                seed: self.seed,
                ..self.scene.clone()
            },
            brush: self.brush,
            sobel_threshold: self.sobel_threshold,
        }
    }

    pub fn loss_config(&self) -> ContourLossConfig {
        ContourLossConfig {
            lambda: self.lambda,
            bce_clamp_eps: self.bce_clamp_eps,
            adversarial_weight: 0.0,
        }
    }

    pub fn curriculum(&self) -> CurriculumSchedule {
        CurriculumSchedule {
            boundaries: self.stage_boundaries,
        }
    }

    pub fn contour_train_cfg(&self) -> ContourTrainCfg {
        ContourTrainCfg {
            optim: self.optim,
            curriculum: self.curriculum(),
            loss: self.loss_config(),
            width_mult: self.width_mult,
            canvas: self.scene.canvas,
            seed: self.seed,
        }
    }

    pub fn image_train_cfg(&self, guided: bool) -> ImageTrainCfg {
        ImageTrainCfg {
            optim: self.optim,
            curriculum: self.curriculum(),
            width_mult: self.width_mult,
            canvas: self.scene.canvas,
            seed: self.seed,
            guided,
        }
    }

    pub fn joint_train_cfg(&self, mode: JointMode) -> JointTrainCfg {
        JointTrainCfg {
            optim: self.optim,
            curriculum: self.curriculum(),
            canvas: self.scene.canvas,
            seed: self.seed,
            mode,
        }
    }
}

fn deep_merge(base: &mut toml::Value, over: &toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_differ_and_hash_is_stable() {
        let desk = RunConfig::desk();
        let paper = RunConfig::paper();
        assert_ne!(desk.hash(), paper.hash());
        assert_eq!(desk.hash(), RunConfig::desk().hash());
        assert_eq!(desk.scene.canvas, 64);
        assert_eq!(paper.scene.canvas, 256);
        assert_eq!(paper.optim.batch_size, 64);
    }

    #[test]
    fn toml_overrides_profile_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "profile = \"desk\"\nseed = 42\n[optim]\nbatch_size = 2\n")
            .unwrap();
        let cfg = RunConfig::load(&path, None).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.optim.batch_size, 2);
        // untouched keys keep profile defaults
        assert_eq!(cfg.width_mult, 0.25);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "not_a_key = 1\n").unwrap();
        assert!(RunConfig::load(&path, None).is_err());
    }

    #[test]
    fn unknown_profile_rejected() {
        assert!(RunConfig::by_profile("laptop").is_err());
    }
}
