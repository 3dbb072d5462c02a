//! Accuracy over many sampled test episodes.
//!
//! Episode `i` is drawn from stream `i` of `ChaCha8Rng(seed)`, so each
//! episode is fixed by `(seed, i)` alone and the report does not depend on
//! how episodes are spread over workers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::EpisodeClassifier;
use crate::error::{Error, Result};
use crate::feature_io::{sample_episode, FeatureSet};
use crate::parallel::{map_indexed, Parallelism};

/// z-value of a two-sided 95% normal interval.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seed: u64,
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub parallelism: Parallelism,
    /// Skip the train/test class-overlap check (debugging only).
    pub allow_overlap: bool,
    pub keep_episodes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub index: usize,
    pub classes: Vec<String>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub queries: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Wald interval over queries, clipped to `[0, 1]`.
    pub ci95: [f64; 2],
    pub per_class: BTreeMap<String, ClassAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_episode: Option<Vec<EpisodeRecord>>,
}

impl EvalReport {
    pub fn ci_half_width(&self) -> f64 {
        (self.ci95[1] - self.ci95[0]) / 2.0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Normal-approximation 95% interval for `correct / total`.
pub fn wald_interval(correct: usize, total: usize) -> [f64; 2] {
    if total == 0 {
        return [0.0, 1.0];
    }
    let p = correct as f64 / total as f64;
    let half = Z95 * (p * (1.0 - p) / total as f64).sqrt();
    [(p - half).max(0.0), (p + half).min(1.0)]
}

/// Fails when the test set shares classes with `train_classes`, unless
/// overridden.
pub fn check_disjoint(train_classes: &[String], test_set: &FeatureSet, allow_overlap: bool) -> Result<()> {
    let shared: Vec<&str> = test_set
        .labels()
        .filter(|l| train_classes.iter().any(|t| t == l))
        .collect();
    if shared.is_empty() {
        return Ok(());
    }
    if allow_overlap {
        log::warn!("evaluating on {} training classes", shared.len());
        return Ok(());
    }
    Err(Error::Validation(format!(
        "test classes overlap training classes: {}",
        shared.join(", ")
    )))
}

pub fn evaluate<C: EpisodeClassifier>(
    classifier: &C,
    train_classes: &[String],
    test_set: &FeatureSet,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    check_disjoint(train_classes, test_set, opts.allow_overlap)?;
    if opts.episodes == 0 {
        return Err(Error::Config("episode count must be positive".into()));
    }
    let records = map_indexed(opts.episodes, opts.parallelism, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(i as u64);
        let episode = sample_episode(test_set, opts.ways, opts.shots, opts.queries, &mut rng)?;
        let predictions = classifier.predict(&episode)?;
        let labels = episode.labels();
        if predictions.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} queries",
                predictions.len(),
                labels.len()
            )));
        }
        let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
        Ok(EpisodeRecord {
            index: i,
            classes: episode.classes.iter().map(|s| s.to_string()).collect(),
            predictions,
            labels,
            correct,
        })
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut per_class: BTreeMap<String, ClassAccuracy> = BTreeMap::new();
    let (mut correct, mut total) = (0, 0);
    for r in &records {
        for (&p, &l) in r.predictions.iter().zip(&r.labels) {
            let entry = per_class.entry(r.classes[l].clone()).or_insert(ClassAccuracy {
                correct: 0,
                total: 0,
                accuracy: 0.0,
            });
            entry.total += 1;
            entry.correct += usize::from(p == l);
        }
        correct += r.correct;
        total += r.labels.len();
    }
    for c in per_class.values_mut() {
        c.accuracy = c.correct as f64 / c.total as f64;
    }
    Ok(EvalReport {
        episodes: records.len(),
        queries: total,
        correct,
        accuracy: correct as f64 / total as f64,
        ci95: wald_interval(correct, total),
        per_class,
        per_episode: opts.keep_episodes.then_some(records),
    })
}
