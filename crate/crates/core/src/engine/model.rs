use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::feature_io::{Episode, VideoFeatures};
use crate::matching::video_similarity;
use crate::objective::{class_logits_var, total_loss_var};
use crate::params::ParamStore;
use crate::prototype_decoder::{CompoundPrototypes, PrototypeDecoder, PrototypeVars};
use crate::relation_encoder::{MultiRelationFeature, RelationEncoder};
use crate::tensor::Scalar;

/// Encoder + decoder structure and the parameter values they index.
#[derive(Clone, Debug)]
pub struct Model<F> {
    pub config: RunConfig,
    pub encoder: RelationEncoder,
    pub decoder: PrototypeDecoder,
    pub params: ParamStore<F>,
}

/// Anything that can label the queries of an episode.
pub trait EpisodeClassifier: Sync {
    /// Predicted episode class per query, in query order.
    fn predict(&self, episode: &Episode<'_>) -> Result<Vec<usize>>;
}

/// Graph of one episode's loss.
pub struct EpisodeGraph<F: Scalar> {
    pub graph: Graph<F>,
    pub loss: Var,
    pub logits: Var,
}

impl<F: Scalar> Model<F> {
    /// Fresh parameters drawn from stream 0 of `ChaCha8Rng(config.seed)`.
    pub fn init(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = RelationEncoder::init(&mut params, &config.encoder_config(), &mut rng)?;
        let decoder = PrototypeDecoder::init(&mut params, &config.decoder_config(), &mut rng)?;
        Ok(Model {
            config: config.clone(),
            encoder,
            decoder,
            params,
        })
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            params: self.params.cast(),
        }
    }

    fn check_video(&self, video: &VideoFeatures) -> Result<()> {
        let c = &self.config;
        video.validate(c.frames, video.boxes_per_frame(), c.dim)?;
        let needs_objects = c.relations.go || c.relations.oo;
        if needs_objects && video.boxes_per_frame() != c.boxes {
            return Err(Error::Validation(format!(
                "video {} has {} boxes per frame, model expects {}",
                video.id,
                video.boxes_per_frame(),
                c.boxes
            )));
        }
        Ok(())
    }

    pub fn prototypes_var(&self, g: &mut Graph<F>, video: &VideoFeatures) -> Result<PrototypeVars> {
        self.check_video(video)?;
        let encoded = self.encoder.encode_var(g, &self.params, video)?;
        self.decoder.decode_var(g, &self.params, &encoded)
    }

    pub fn encode(&self, video: &VideoFeatures) -> Result<MultiRelationFeature<F>> {
        self.check_video(video)?;
        self.encoder.encode(&self.params, video)
    }

    pub fn prototypes(&self, video: &VideoFeatures) -> Result<CompoundPrototypes<F>> {
        let mut g = Graph::new();
        let vars = self.prototypes_var(&mut g, video)?;
        Ok(vars.values(&g))
    }

    /// Builds the full loss graph of an episode.
    pub fn episode_graph(&self, episode: &Episode<'_>, mut graph: Graph<F>) -> Result<EpisodeGraph<F>> {
        let g = &mut graph;
        let mut all = Vec::new();
        let mut support = Vec::with_capacity(episode.ways());
        for shots in &episode.support {
            let vars = shots
                .iter()
                .map(|v| self.prototypes_var(g, v))
                .collect::<Result<Vec<_>>>()?;
            all.extend_from_slice(&vars);
            support.push(vars);
        }
        let queries = episode
            .queries
            .iter()
            .map(|(v, _)| self.prototypes_var(g, v))
            .collect::<Result<Vec<_>>>()?;
        all.extend_from_slice(&queries);
        let c = &self.config;
        let logits = class_logits_var(g, &queries, &support, c.fusion(), c.aggregation)?;
        let loss = total_loss_var(g, logits, &episode.labels(), &all, c.loss_weights(), c.temperature)?;
        Ok(EpisodeGraph { graph, loss, logits })
    }

    /// Fused similarity of each query (rows) to each support video in
    /// class-major order (columns).
    pub fn support_scores(&self, episode: &Episode<'_>) -> Result<Vec<Vec<f64>>> {
        let support = episode
            .support_flat()
            .into_iter()
            .map(|(v, _)| self.prototypes(v))
            .collect::<Result<Vec<_>>>()?;
        episode
            .queries
            .iter()
            .map(|(q, _)| {
                let qp = self.prototypes(q)?;
                support
                    .iter()
                    .map(|s| video_similarity(&qp, s, self.config.fusion()).map(|b| b.s))
                    .collect()
            })
            .collect()
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl<F: Scalar> EpisodeClassifier for Model<F> {
    /// Each query takes the class of its most similar support video.
    fn predict(&self, episode: &Episode<'_>) -> Result<Vec<usize>> {
        let flat = episode.support_flat();
        Ok(self
            .support_scores(episode)?
            .iter()
            .map(|row| flat[argmax_first(row)].1)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax_first(&[0.1, 0.9]), 1);
        assert_eq!(argmax_first(&[0.5, 0.5, 0.2]), 0);
        assert_eq!(argmax_first(&[0.2, 0.7, 0.7]), 1);
    }
}
