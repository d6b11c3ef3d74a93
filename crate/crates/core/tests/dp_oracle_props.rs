//! Property tests: the dynamic programs against literal enumeration on
//! randomly drawn small instances.

use proptest::prelude::*;

use seqlab_core::ctc::{collapse, ctc_log_prob, ctc_min_frames, ctc_posteriors, CtcParams};
use seqlab_core::numerics::{mix_seed, seeded_init, seeded_rng, InitScheme};
use seqlab_core::oracle::{
    all_label_sequences, brute_force_ctc, brute_force_scrf, brute_force_scrf_viterbi,
    count_segmentations, enumerate_segmentations,
};
use seqlab_core::scrf::{
    build_score_table, log_numerator_from_table, log_partition_from_table, reachable,
    scrf_viterbi_decode, Activation, ScrfConfig, ScrfParams,
};
use rand::Rng;

fn scrf_setup(
    t: usize,
    k: usize,
    l: usize,
    seed: u64,
) -> (ndarray::Array2<f64>, ScrfParams, ScrfConfig) {
    let config = ScrfConfig {
        num_labels: k,
        embed_dim: 3,
        feature_dim: 4,
        max_seg_len: l,
        activation: Activation::Tanh,
        extra_layers: usize::from(seed.is_multiple_of(4)),
    };
    let params = ScrfParams::init(&config, 3, mix_seed(&[seed, 1])).unwrap();
    let h = seeded_init(t, 3, mix_seed(&[seed, 2]), InitScheme::UniformScaled);
    (h, params, config)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scrf_partition_matches_enumeration(t in 1usize..=6, k in 1usize..=3, l_off in 0usize..6, seed in 0u64..10_000) {
        let l = 1 + l_off % t;
        let (h, params, config) = scrf_setup(t, k, l, seed);
        let dp = log_partition_from_table(&build_score_table(&h, &params, &config).unwrap());
        let brute = brute_force_scrf(&h, &params, &config, None).unwrap();
        prop_assert!((dp - brute).abs() < 1e-10, "dp {dp} brute {brute}");
    }

    #[test]
    fn scrf_numerator_matches_enumeration(t in 1usize..=6, k in 1usize..=3, l_off in 0usize..6, seed in 0u64..10_000) {
        let l = 1 + l_off % t;
        let (h, params, config) = scrf_setup(t, k, l, seed);
        let mut rng = seeded_rng(mix_seed(&[seed, 3]));
        let j = rng.random_range(t.div_ceil(l)..=t);
        let y: Vec<usize> = (0..j).map(|_| rng.random_range(0..k)).collect();
        let table = build_score_table(&h, &params, &config).unwrap();
        let dp = log_numerator_from_table(&table, &y).unwrap();
        let brute = brute_force_scrf(&h, &params, &config, Some(&y)).unwrap();
        prop_assert!((dp - brute).abs() < 1e-10, "dp {dp} brute {brute}");
    }

    #[test]
    fn scrf_viterbi_matches_enumeration(t in 1usize..=5, k in 1usize..=3, l_off in 0usize..5, seed in 0u64..10_000) {
        let l = 1 + l_off % t;
        let (h, params, config) = scrf_setup(t, k, l, seed);
        let (labels, segs, score) = scrf_viterbi_decode(&h, &params, &config).unwrap();
        let (bf_labels, bf_segs, bf_score) = brute_force_scrf_viterbi(&h, &params, &config).unwrap();
        prop_assert_eq!(labels, bf_labels);
        prop_assert_eq!(segs, bf_segs);
        prop_assert!((score - bf_score).abs() < 1e-10);
    }

    #[test]
    fn ctc_forward_matches_path_enumeration(t in 1usize..=6, k in 1usize..=3, seed in 0u64..10_000) {
        let params = CtcParams::init(k, 3, mix_seed(&[seed, 4])).unwrap();
        let h = seeded_init(t, 3, mix_seed(&[seed, 5]), InitScheme::UniformScaled);
        let post = ctc_posteriors(&h, &params).unwrap();
        let mut rng = seeded_rng(mix_seed(&[seed, 6]));
        let y = loop {
            let j = rng.random_range(0..=t);
            let y: Vec<usize> = (0..j).map(|_| rng.random_range(0..k)).collect();
            if ctc_min_frames(&y) <= t {
                break y;
            }
        };
        let dp = ctc_log_prob(&post, &y).unwrap();
        let brute = brute_force_ctc(&post, &y).unwrap();
        prop_assert!((dp - brute).abs() < 1e-10, "dp {dp} brute {brute}");
    }

    #[test]
    fn segmentation_count_matches_enumeration(t in 1usize..=7, j in 1usize..=7, l in 1usize..=7) {
        let segs = enumerate_segmentations(t, j, l);
        prop_assert_eq!(segs.len() as u64, count_segmentations(t, j, l));
        for s in &segs {
            prop_assert_eq!(s.len(), j);
            prop_assert_eq!(s.iter().map(|seg| seg.duration()).sum::<usize>(), t);
            prop_assert!(s.iter().all(|seg| seg.duration() <= l));
        }
        prop_assert_eq!(!segs.is_empty(), reachable(j, t, l));
    }

    #[test]
    fn collapse_of_expanded_target_recovers_it(j in 0usize..=4, k in 1usize..=3, seed in 0u64..10_000) {
        let mut rng = seeded_rng(mix_seed(&[seed, 7]));
        let y: Vec<usize> = (0..j).map(|_| rng.random_range(0..k)).collect();
        // emit each label once, separating adjacent repeats with blanks
        let mut path = Vec::new();
        for (i, &label) in y.iter().enumerate() {
            if i > 0 && y[i - 1] == label {
                path.push(0);
            }
            path.push(label + 1);
        }
        prop_assert_eq!(collapse(&path), y.clone());
        prop_assert_eq!(path.len(), ctc_min_frames(&y));
    }

    #[test]
    fn label_sequence_enumeration_is_complete(k in 1usize..=3, j in 0usize..=4) {
        let seqs = all_label_sequences(k, j);
        prop_assert_eq!(seqs.len(), k.pow(j as u32));
        for s in &seqs {
            prop_assert_eq!(s.len(), j);
            prop_assert!(s.iter().all(|&y| y < k));
        }
    }
}
