use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::Fusion;
use crate::objective::{Aggregation, LossWeights};
use crate::prototype_decoder::DecoderConfig;
use crate::relation_encoder::{EncoderConfig, RelationFlags};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Every hyperparameter of a run. Missing JSON fields take the defaults
/// below; unknown fields are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Classes per episode (C).
    pub ways: usize,
    /// Support videos per class (K).
    pub shots: usize,
    /// Queries per episode, spread round-robin over the classes.
    pub queries: usize,
    pub frames: usize,
    pub boxes: usize,
    pub dim: usize,
    pub heads: usize,
    pub depth: usize,
    /// FFN hidden width as a multiple of `dim`.
    pub ffn_multiplier: usize,
    pub global_prototypes: usize,
    pub focused_prototypes: usize,
    pub lambda_global: f64,
    pub lambda_focused: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub temperature: f64,
    pub aggregation: Aggregation,
    pub relations: RelationFlags,
    pub positional_encoding: bool,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub momentum: f64,
    /// Global gradient-norm cap; `null` disables clipping.
    pub grad_clip: Option<f64>,
    pub max_epochs: usize,
    pub episodes_per_epoch: usize,
    pub val_episodes: usize,
    pub early_stop_window: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            ways: 5,
            shots: 1,
            queries: 5,
            frames: 8,
            boxes: 3,
            dim: 64,
            heads: 4,
            depth: 1,
            ffn_multiplier: 4,
            global_prototypes: 8,
            focused_prototypes: 8,
            lambda_global: 0.5,
            lambda_focused: 0.5,
            w1: 1.0,
            w2: 0.1,
            w3: 0.1,
            temperature: 1.0,
            aggregation: Aggregation::Mean,
            relations: RelationFlags::default(),
            positional_encoding: true,
            lr: 0.001,
            lr_decay: 0.1,
            lr_decay_every: 20,
            momentum: 0.0,
            grad_clip: Some(5.0),
            max_epochs: 60,
            episodes_per_epoch: 200,
            val_episodes: 50,
            early_stop_window: 5,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.ways < 2 {
            return bad(format!("ways must be at least 2, got {}", self.ways));
        }
        if self.shots == 0 || self.queries == 0 {
            return bad("shots and queries must be positive".into());
        }
        if self.frames == 0 || self.dim == 0 || self.heads == 0 || self.ffn_multiplier == 0 {
            return bad("frames, dim, heads and ffn_multiplier must be positive".into());
        }
        if !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} is not divisible by {} heads", self.dim, self.heads));
        }
        if self.global_prototypes + self.focused_prototypes == 0 {
            return bad("at least one prototype is required".into());
        }
        if self.boxes == 0 && (self.relations.go || self.relations.oo) {
            return bad("go/oo relations need boxes ≥ 1".into());
        }
        let finite_nonneg = [
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
            ("lr", self.lr),
            ("momentum", self.momentum),
        ];
        for (name, v) in finite_nonneg {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !self.lambda_global.is_finite() || !self.lambda_focused.is_finite() {
            return bad("fusion weights must be finite".into());
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return bad("lr_decay must lie in (0, 1] and lr_decay_every be positive".into());
        }
        if self.momentum >= 1.0 {
            return bad(format!("momentum must be below 1, got {}", self.momentum));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if self.episodes_per_epoch == 0 || self.val_episodes == 0 || self.early_stop_window == 0 {
            return bad("episodes_per_epoch, val_episodes and early_stop_window must be positive".into());
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            heads: self.heads,
            ffn_hidden: self.ffn_multiplier * self.dim,
            depth: self.depth,
            relations: self.relations,
            positional_encoding: self.positional_encoding,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            dim: self.dim,
            heads: self.heads,
            ffn_hidden: self.ffn_multiplier * self.dim,
            global_prototypes: self.global_prototypes,
            focused_prototypes: self.focused_prototypes,
        }
    }

    pub fn fusion(&self) -> Fusion {
        Fusion {
            lambda_global: self.lambda_global,
            lambda_focused: self.lambda_focused,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            w1: self.w1,
            w2: self.w2,
            w3: self.w3,
        }
    }

    /// Learning rate for a 1-based epoch under the step schedule.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch.saturating_sub(1) / self.lr_decay_every) as i32;
        self.lr * self.lr_decay.powi(steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_json_fills_defaults_and_unknown_fields_fail() {
        let c: RunConfig = serde_json::from_str(r#"{"ways": 3, "seed": 9}"#).unwrap();
        assert_eq!((c.ways, c.seed, c.frames), (3, 9, 8));
        assert!(serde_json::from_str::<RunConfig>(r#"{"wayz": 3}"#).is_err());
    }

    #[test]
    fn schedule_decays_every_period() {
        let c = RunConfig::default();
        assert_eq!(c.lr_at(1), 0.001);
        assert_eq!(c.lr_at(20), 0.001);
        assert!((c.lr_at(21) - 1e-4).abs() < 1e-18);
        assert!((c.lr_at(41) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for c in [
            RunConfig {
                ways: 1,
                ..RunConfig::default()
            },
            RunConfig {
                heads: 5,
                ..RunConfig::default()
            },
            RunConfig {
                temperature: 0.0,
                ..RunConfig::default()
            },
            RunConfig {
                global_prototypes: 0,
                focused_prototypes: 0,
                ..RunConfig::default()
            },
            RunConfig {
                boxes: 0,
                ..RunConfig::default()
            },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }
}
