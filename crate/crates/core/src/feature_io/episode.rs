use rand::seq::index;
use rand::Rng;

use super::{FeatureSet, VideoFeatures};
use crate::error::{Error, Result};

/// One C-way K-shot task. Episode class `c` is `classes[c]`.
#[derive(Clone, Debug)]
pub struct Episode<'a> {
    pub classes: Vec<&'a str>,
    /// `support[c]` holds the K shots of episode class `c`.
    pub support: Vec<Vec<&'a VideoFeatures>>,
    /// Query videos with their ground-truth episode class.
    pub queries: Vec<(&'a VideoFeatures, usize)>,
}

impl<'a> Episode<'a> {
    pub fn ways(&self) -> usize {
        self.classes.len()
    }

    pub fn shots(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    /// Support videos in class-major order with their episode class. This
    /// order defines the support index used for tie-breaking.
    pub fn support_flat(&self) -> Vec<(&'a VideoFeatures, usize)> {
        self.support
            .iter()
            .enumerate()
            .flat_map(|(c, shots)| shots.iter().map(move |&v| (v, c)))
            .collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.queries.iter().map(|&(_, c)| c).collect()
    }
}

/// Samples classes uniformly without replacement, then videos uniformly
/// without replacement within each class. Query `i` belongs to episode class
/// `i mod C`.
pub fn sample_episode<'a, R: Rng>(
    set: &'a FeatureSet,
    ways: usize,
    shots: usize,
    queries: usize,
    rng: &mut R,
) -> Result<Episode<'a>> {
    if ways == 0 || shots == 0 {
        return Err(Error::Sampling("ways and shots must be positive".into()));
    }
    let all: Vec<(&str, &[VideoFeatures])> = set.classes().collect();
    if all.len() < ways {
        return Err(Error::Sampling(format!(
            "{ways}-way episode needs {ways} classes, set has {}",
            all.len()
        )));
    }
    let chosen = index::sample(rng, all.len(), ways).into_vec();

    let mut classes = Vec::with_capacity(ways);
    let mut support = Vec::with_capacity(ways);
    let mut per_class_queries = Vec::with_capacity(ways);
    for (c, &ci) in chosen.iter().enumerate() {
        let (label, videos) = all[ci];
        let n_queries = queries / ways + usize::from(c < queries % ways);
        let needed = shots + n_queries;
        if videos.len() < needed {
            return Err(Error::Sampling(format!(
                "class {label} has {} videos, episode needs {needed}",
                videos.len()
            )));
        }
        let picks = index::sample(rng, videos.len(), needed).into_vec();
        classes.push(label);
        support.push(picks[..shots].iter().map(|&i| &videos[i]).collect());
        per_class_queries.push(picks[shots..].iter().map(|&i| &videos[i]).collect::<Vec<_>>());
    }

    let mut query_list = Vec::with_capacity(queries);
    let mut cursors = vec![0usize; ways];
    for q in 0..queries {
        let c = q % ways;
        query_list.push((per_class_queries[c][cursors[c]], c));
        cursors[c] += 1;
    }
    Ok(Episode {
        classes,
        support,
        queries: query_list,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_io::{synth_dataset, SynthSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn small_set(classes: usize, per_class: usize) -> FeatureSet {
        synth_dataset(&SynthSpec {
            classes,
            videos_per_class: per_class,
            frames: 2,
            boxes: 1,
            dim: 8,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn five_way_one_shot_has_disjoint_support_and_query() {
        let set = small_set(8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = sample_episode(&set, 5, 1, 5, &mut rng).unwrap();
        assert_eq!(ep.support_flat().len(), 5);
        assert_eq!(ep.queries.len(), 5);
        let support: HashSet<&str> = ep.support_flat().iter().map(|(v, _)| v.id.as_str()).collect();
        assert!(ep.queries.iter().all(|(q, _)| !support.contains(q.id.as_str())));
        for (q, c) in &ep.queries {
            assert_eq!(q.label, ep.classes[*c]);
        }
    }

    #[test]
    fn too_few_videos_is_a_sampling_error() {
        let set = small_set(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_episode(&set, 2, 3, 2, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
        assert!(matches!(
            sample_episode(&set, 3, 1, 3, &mut rng),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn episode_stream_is_reproducible() {
        let set = small_set(10, 5);
        let stream = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| {
                    let ep = sample_episode(&set, 5, 2, 5, &mut rng).unwrap();
                    ep.support_flat()
                        .iter()
                        .map(|(v, _)| v.id.clone())
                        .chain(ep.queries.iter().map(|(v, _)| v.id.clone()))
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(stream(3), stream(3));
        assert_ne!(stream(3), stream(4));
    }

    proptest::proptest! {
        #[test]
        fn every_episode_satisfies_its_invariants(
            ways in 2usize..6, shots in 1usize..4, queries in 1usize..10, seed in 0u64..1000,
        ) {
            let set = small_set(6, 8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ep = sample_episode(&set, ways, shots, queries, &mut rng).unwrap();
            proptest::prop_assert_eq!(ep.support_flat().len(), ways * shots);
            proptest::prop_assert!(ep.support.iter().all(|s| s.len() == shots));
            let ids: HashSet<&str> = ep.support_flat().iter().map(|(v, _)| v.id.as_str())
                .chain(ep.queries.iter().map(|(v, _)| v.id.as_str()))
                .collect();
            proptest::prop_assert_eq!(ids.len(), ways * shots + queries);
        }
    }
}
