//! Precomputed per-video features, their on-disk manifest, synthetic
//! dataset generation, and episode sampling.

pub mod episode;
pub mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{container, Tensor};

pub use episode::{sample_episode, Episode};
pub use synth::{synth_dataset, SignalSource, SynthSpec};

/// One video's features.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    pub id: String,
    pub label: String,
    /// Frame features `[T × d]`.
    pub global: Tensor<f32>,
    /// Object features `[T × B × d]`; absent when `B = 0`.
    pub objects: Option<Tensor<f32>>,
    /// Normalized `(cx, cy, w, h)` boxes `[T × B × 4]`; absent when `B = 0`.
    pub boxes: Option<Tensor<f32>>,
}

impl VideoFeatures {
    pub fn frames(&self) -> usize {
        self.global.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.global.shape()[1]
    }

    pub fn boxes_per_frame(&self) -> usize {
        self.objects.as_ref().map_or(0, |o| o.shape()[1])
    }

    /// Checks extents against `(T, B, d)` and box coordinates against `[0, 1]`.
    pub fn validate(&self, frames: usize, boxes: usize, dim: usize) -> Result<()> {
        let fail = |what: String| Err(Error::Validation(format!("video {}: {what}", self.id)));
        if self.global.shape() != [frames, dim] {
            return fail(format!(
                "global features {:?}, expected [{frames}, {dim}]",
                self.global.shape()
            ));
        }
        match (&self.objects, &self.boxes, boxes) {
            (None, None, 0) => {}
            (Some(o), Some(b), nb) if nb > 0 => {
                if o.shape() != [frames, nb, dim] {
                    return fail(format!(
                        "object features {:?}, expected [{frames}, {nb}, {dim}]",
                        o.shape()
                    ));
                }
                if b.shape() != [frames, nb, 4] {
                    return fail(format!("boxes {:?}, expected [{frames}, {nb}, 4]", b.shape()));
                }
                if let Some(v) = b.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return fail(format!("box coordinate {v} outside [0, 1]"));
                }
            }
            _ => return fail(format!("object tensors inconsistent with boxes_per_frame = {boxes}")),
        }
        if !self.global.is_finite() || self.objects.as_ref().is_some_and(|o| !o.is_finite()) {
            return fail("non-finite feature value".into());
        }
        Ok(())
    }
}

/// A labeled collection of videos sharing `(T, B, d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub dim: usize,
    pub frames: usize,
    pub boxes_per_frame: usize,
    classes: BTreeMap<String, Vec<VideoFeatures>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    frames: usize,
    boxes_per_frame: usize,
    videos: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    label: String,
    global: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    objects: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boxes: Option<PathBuf>,
}

impl FeatureSet {
    pub fn new(dim: usize, frames: usize, boxes_per_frame: usize) -> Self {
        FeatureSet {
            dim,
            frames,
            boxes_per_frame,
            classes: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, video: VideoFeatures) -> Result<()> {
        video.validate(self.frames, self.boxes_per_frame, self.dim)?;
        if self.get(&video.id).is_some() {
            return Err(Error::Validation(format!("duplicate video id {}", video.id)));
        }
        self.classes.entry(video.label.clone()).or_default().push(video);
        Ok(())
    }

    /// Class names in sorted order.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_videos(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn class(&self, label: &str) -> Option<&[VideoFeatures]> {
        self.classes.get(label).map(Vec::as_slice)
    }

    pub fn classes(&self) -> impl Iterator<Item = (&str, &[VideoFeatures])> {
        self.classes.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn videos(&self) -> impl Iterator<Item = &VideoFeatures> {
        self.classes.values().flatten()
    }

    pub fn get(&self, id: &str) -> Option<&VideoFeatures> {
        self.videos().find(|v| v.id == id)
    }

    /// Splits classes, in label order, into consecutive groups of the given sizes.
    pub fn split_classes(&self, sizes: &[usize]) -> Result<Vec<FeatureSet>> {
        let needed: usize = sizes.iter().sum();
        if needed > self.num_classes() {
            return Err(Error::Config(format!(
                "split needs {needed} classes, set has {}",
                self.num_classes()
            )));
        }
        let mut iter = self.classes.iter();
        Ok(sizes
            .iter()
            .map(|&n| {
                let mut part = FeatureSet::new(self.dim, self.frames, self.boxes_per_frame);
                for (label, videos) in iter.by_ref().take(n) {
                    part.classes.insert(label.clone(), videos.clone());
                }
                part
            })
            .collect())
    }

    /// Labels present in both sets.
    pub fn shared_labels(&self, other: &FeatureSet) -> Vec<String> {
        let mine: HashSet<&str> = self.labels().collect();
        other.labels().filter(|l| mine.contains(l)).map(str::to_owned).collect()
    }

    /// Writes `manifest.json` plus one `FSAR1` container per tensor under `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let tensor_dir = dir.join("tensors");
        fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;
        let mut videos = Vec::with_capacity(self.num_videos());
        for v in self.videos() {
            let rel = |kind: &str| PathBuf::from("tensors").join(format!("{}.{kind}.fsar", v.id));
            let global = rel("global");
            container::write(&dir.join(&global), &v.global)?;
            let objects = match &v.objects {
                Some(o) => {
                    let p = rel("objects");
                    container::write(&dir.join(&p), o)?;
                    Some(p)
                }
                None => None,
            };
            let boxes = match &v.boxes {
                Some(b) => {
                    let p = rel("boxes");
                    container::write(&dir.join(&p), b)?;
                    Some(p)
                }
                None => None,
            };
            videos.push(ManifestEntry {
                id: v.id.clone(),
                label: v.label.clone(),
                global,
                objects,
                boxes,
            });
        }
        let manifest = Manifest {
            dim: self.dim,
            frames: self.frames,
            boxes_per_frame: self.boxes_per_frame,
            videos,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Loads and validates a feature set; tensor paths resolve relative to the
/// manifest's directory.
pub fn load_feature_set(manifest_path: &Path) -> Result<FeatureSet> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut set = FeatureSet::new(manifest.dim, manifest.frames, manifest.boxes_per_frame);
    for entry in manifest.videos {
        let global = container::read(&base.join(&entry.global))?;
        let objects = entry.objects.map(|p| container::read(&base.join(p))).transpose()?;
        let boxes = entry.boxes.map(|p| container::read(&base.join(p))).transpose()?;
        set.push(VideoFeatures {
            id: entry.id,
            label: entry.label,
            global,
            objects,
            boxes,
        })?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(id: &str, label: &str, t: usize, b: usize, d: usize) -> VideoFeatures {
        VideoFeatures {
            id: id.into(),
            label: label.into(),
            global: Tensor::from_fn(&[t, d], |i| i as f32 * 0.01),
            objects: Some(Tensor::from_fn(&[t, b, d], |i| -(i as f32) * 0.001)),
            boxes: Some(Tensor::full(&[t, b, 4], 0.5)),
        }
    }

    #[test]
    fn minimal_manifest_loads_one_video() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = FeatureSet::new(64, 8, 3);
        set.push(video("v0", "jump", 8, 3, 64)).unwrap();
        let manifest = set.save(dir.path()).unwrap();
        let back = load_feature_set(&manifest).unwrap();
        assert_eq!(back.num_videos(), 1);
        assert_eq!(back, set);
    }

    #[test]
    fn dimension_mismatch_names_the_video() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = FeatureSet::new(32, 8, 3);
        set.push(video("short_one", "jump", 8, 3, 32)).unwrap();
        let manifest = set.save(dir.path()).unwrap();
        let text = fs::read_to_string(&manifest)
            .unwrap()
            .replacen("\"dim\": 32", "\"dim\": 64", 1);
        fs::write(&manifest, text).unwrap();
        match load_feature_set(&manifest) {
            Err(Error::Validation(msg)) => assert!(msg.contains("short_one"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_tensor_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = FeatureSet::new(8, 2, 1);
        set.push(video("v0", "a", 2, 1, 8)).unwrap();
        let manifest = set.save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("tensors/v0.boxes.fsar")).unwrap();
        assert!(matches!(load_feature_set(&manifest), Err(Error::Io { .. })));
    }

    #[test]
    fn out_of_range_boxes_are_rejected() {
        let mut v = video("v0", "a", 2, 1, 8);
        v.boxes = Some(Tensor::full(&[2, 1, 4], 1.5));
        let mut set = FeatureSet::new(8, 2, 1);
        assert!(matches!(set.push(v), Err(Error::Validation(_))));
    }

    #[test]
    fn object_free_sets_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = FeatureSet::new(8, 2, 0);
        let mut v = video("v0", "a", 2, 1, 8);
        v.objects = None;
        v.boxes = None;
        set.push(v).unwrap();
        let back = load_feature_set(&set.save(dir.path()).unwrap()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn split_classes_partitions_in_label_order() {
        let mut set = FeatureSet::new(8, 2, 1);
        for c in ["a", "b", "c"] {
            set.push(video(&format!("{c}0"), c, 2, 1, 8)).unwrap();
        }
        let parts = set.split_classes(&[2, 1]).unwrap();
        assert_eq!(parts[0].labels().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(parts[1].labels().collect::<Vec<_>>(), ["c"]);
        assert!(parts[0].shared_labels(&parts[1]).is_empty());
        assert!(set.split_classes(&[4]).is_err());
    }
}
