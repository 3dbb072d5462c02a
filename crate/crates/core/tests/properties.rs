mod common;

use common::random_video;
use proptest::prelude::*;
use protomatch::feature_io::{load_feature_set, FeatureSet};
use protomatch::matching::{focused_score, global_score, hungarian_max, video_similarity, Fusion};
use protomatch::objective::{attention_divergence_loss, diversity_loss};
use protomatch::prototype_decoder::CompoundPrototypes;
use protomatch::tensor::kernels::{cosine, softmax_rows};
use protomatch::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn square() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..7).prop_flat_map(|m| matrix(m, m))
}

fn shuffled_rows(t: &Tensor<f64>, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..t.rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let data: Vec<f64> = order.iter().flat_map(|&r| t.row(r).to_vec()).collect();
    (Tensor::new(t.shape().to_vec(), data).unwrap(), order)
}

fn transpose(t: &Tensor<f64>) -> Tensor<f64> {
    protomatch::tensor::kernels::transpose(t).unwrap()
}

fn prototypes(global: Tensor<f64>, focused: Tensor<f64>) -> CompoundPrototypes<f64> {
    CompoundPrototypes {
        global: Some(global),
        focused: Some(focused),
        global_attention: None,
        focused_attention: None,
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in (1usize..6, 1usize..9).prop_flat_map(|(r, c)| matrix(r, c)), shift in -50.0f64..50.0) {
        let p = softmax_rows(&x).unwrap();
        let shifted = softmax_rows(&x.map(|v| v + shift)).unwrap();
        for r in 0..p.rows() {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.row(r).iter().all(|&v| v >= 0.0));
        }
        prop_assert!(p.max_abs_diff(&shifted) < 1e-12);
    }

    #[test]
    fn cosine_is_symmetric_and_scale_invariant(
        u in proptest::collection::vec(-2.0f64..2.0, 8),
        v in proptest::collection::vec(-2.0f64..2.0, 8),
        a in 0.01f64..100.0,
        b in 0.01f64..100.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let s = cosine(&u, &v);
        prop_assert!((s - cosine(&v, &u)).abs() < 1e-12);
        let su: Vec<f64> = u.iter().map(|x| a * x).collect();
        let sv: Vec<f64> = v.iter().map(|x| b * x).collect();
        prop_assert!((s - cosine(&su, &sv)).abs() < 1e-6);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn assignment_total_ignores_row_and_column_order(s in square(), seed in any::<u64>()) {
        let (_, total) = hungarian_max(&s).unwrap();
        let (rows, _) = shuffled_rows(&s, seed);
        let (cols, _) = shuffled_rows(&transpose(&s), seed.wrapping_add(1));
        prop_assert!((hungarian_max(&rows).unwrap().1 - total).abs() < 1e-9);
        prop_assert!((hungarian_max(&cols).unwrap().1 - total).abs() < 1e-9);
    }

    #[test]
    fn assignment_beats_any_permutation(s in square(), seed in any::<u64>()) {
        let (sigma, total) = hungarian_max(&s).unwrap();
        let m = s.rows();
        let achieved: f64 = (0..m).map(|i| s.at(i, sigma.as_slice()[i])).sum();
        prop_assert!((achieved - total).abs() < 1e-12);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let other: f64 = (0..m).map(|i| s.at(i, perm[i])).sum();
        prop_assert!(other <= total + 1e-12);
    }

    #[test]
    fn focused_score_ignores_prototype_order(a in matrix(5, 8), b in matrix(5, 8), seed in any::<u64>()) {
        let (s, _, _) = focused_score(&a, &b).unwrap();
        let (a2, _) = shuffled_rows(&a, seed);
        let (b2, _) = shuffled_rows(&b, seed ^ 0x5a5a);
        prop_assert!((focused_score(&a2, &b).unwrap().0 - s).abs() < 1e-9);
        prop_assert!((focused_score(&a, &b2).unwrap().0 - s).abs() < 1e-9);
    }

    #[test]
    fn fused_similarity_is_symmetric(
        ga in matrix(4, 8), fa in matrix(3, 8), gb in matrix(4, 8), fb in matrix(3, 8),
        l1 in 0.0f64..1.0, l2 in 0.0f64..1.0,
    ) {
        let fusion = Fusion { lambda_global: l1, lambda_focused: l2 };
        let a = prototypes(ga, fa);
        let b = prototypes(gb, fb);
        let ab = video_similarity(&a, &b, fusion).unwrap();
        let ba = video_similarity(&b, &a, fusion).unwrap();
        prop_assert!((ab.s - ba.s).abs() < 1e-9);
        prop_assert!((ab.s - (l1 * ab.s_g + l2 * ab.s_f)).abs() < 1e-12);
        let aa = video_similarity(&a, &a, fusion).unwrap();
        prop_assert!((aa.s - (l1 + l2)).abs() < 1e-9);
        let (g, _) = global_score(a.global.as_ref().unwrap(), b.global.as_ref().unwrap()).unwrap();
        prop_assert!((g - ab.s_g).abs() < 1e-15);
    }

    #[test]
    fn regularizers_ignore_order_and_scale(p in matrix(6, 8), k in 0.1f64..10.0, seed in any::<u64>()) {
        let base = diversity_loss(&p).unwrap();
        let (shuffled, _) = shuffled_rows(&p, seed);
        prop_assert!((diversity_loss(&shuffled).unwrap() - base).abs() < 1e-9);
        prop_assert!((diversity_loss(&p.map(|x| k * x)).unwrap() - base).abs() < 1e-9);
        let attn = softmax_rows(&p).unwrap();
        let (attn_shuffled, _) = shuffled_rows(&attn, seed);
        prop_assert!(
            (attention_divergence_loss(&attn_shuffled).unwrap() - attention_divergence_loss(&attn).unwrap()).abs() < 1e-9
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn feature_sets_round_trip_bit_exactly(
        seed in any::<u64>(),
        classes in 1usize..4,
        per_class in 1usize..3,
        frames in 1usize..5,
        boxes in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = FeatureSet::new(8, frames, boxes);
        for c in 0..classes {
            for v in 0..per_class {
                set.push(random_video(&format!("c{c}_v{v}"), &format!("c{c}"), frames, boxes, 8, &mut rng)).unwrap();
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let manifest = set.save(dir.path()).unwrap();
        let back = load_feature_set(&manifest).unwrap();
        prop_assert_eq!(&back, &set);
        for (a, b) in set.videos().zip(back.videos()) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.global), bits(&b.global));
            prop_assert_eq!(bits(a.objects.as_ref().unwrap()), bits(b.objects.as_ref().unwrap()));
        }
    }
}
