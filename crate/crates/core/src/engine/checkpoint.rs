//! Checkpoint directory: `meta.json` plus `params/<name>.fsar`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::tensor::{container, Scalar};

/// Position of a `ChaCha8Rng` stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Word position; serialized as a decimal string since it is 128-bit.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Validation(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint<F> {
    pub model: Model<F>,
    /// 1-based epoch the parameters come from; 0 for an untrained model.
    pub epoch: usize,
    pub rng: RngState,
    /// Class labels seen in training, for the overlap check at evaluation.
    pub train_classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: RunConfig,
    epoch: usize,
    rng: RngState,
    train_classes: Vec<String>,
    params: Vec<String>,
}

const META: &str = "meta.json";
const PARAM_DIR: &str = "params";

impl<F: Scalar> Checkpoint<F> {
    /// Untrained checkpoint for `config`.
    pub fn fresh(config: &RunConfig) -> Result<Self> {
        let model = Model::init(config)?;
        Ok(Checkpoint {
            model,
            epoch: 0,
            rng: RngState {
                seed: config.seed,
                stream: 0,
                word_pos: "0".into(),
            },
            train_classes: Vec::new(),
        })
    }

    pub fn cast<G: Scalar>(&self) -> Checkpoint<G> {
        Checkpoint {
            model: self.model.cast(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            train_classes: self.train_classes.clone(),
        }
    }

    /// Payloads are stored as `f32`; an `f64` model is rounded on save.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let pdir = dir.join(PARAM_DIR);
        fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        let mut names = Vec::with_capacity(self.model.params.len());
        for (_, name, value) in self.model.params.iter() {
            container::write(&pdir.join(format!("{name}.fsar")), &value.cast::<f32>())?;
            names.push(name.to_owned());
        }
        let meta = Meta {
            config: self.model.config.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            train_classes: self.train_classes.clone(),
            params: names,
        };
        let path = dir.join(META);
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let mut model = Model::<F>::init(&meta.config)?;
        let expected: BTreeSet<&str> = model.params.iter().map(|(_, n, _)| n).collect();
        let listed: BTreeSet<&str> = meta.params.iter().map(String::as_str).collect();
        if expected != listed {
            let missing: Vec<_> = expected.difference(&listed).collect();
            let extra: Vec<_> = listed.difference(&expected).collect();
            return Err(Error::Validation(format!(
                "checkpoint parameters do not match the configuration (missing {missing:?}, unexpected {extra:?})"
            )));
        }
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let file = dir.join(PARAM_DIR).join(format!("{}.fsar", model.params.name(id)));
            let value = container::read(&file)?.cast::<F>();
            model
                .params
                .set(id, value)
                .map_err(|e| Error::Validation(format!("{}: {e}", file.display())))?;
        }
        Ok(Checkpoint {
            model,
            epoch: meta.epoch,
            rng: meta.rng,
            train_classes: meta.train_classes,
        })
    }
}
