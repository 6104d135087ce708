use std::collections::HashSet;

use litho_core::config::LithoConfig;
use litho_core::d4::D4;
use litho_core::dataset::{build_dataset, decode_dataset, save_dataset, split};
use litho_core::geometry::{enumerate_clips, gen_random_positions, gen_randomized_array, ClipMix, DesignRule};
use litho_core::nn::{decode_model, encode_model, lipschitz_bound, LayerSpec, ModelSpec, Network};
use litho_core::select::{coreset_objective, select_from_features, FeatureMatrix};
use proptest::prelude::*;

fn d4() -> impl Strategy<Value = D4> {
    (0u8..8).prop_map(|c| D4::from_code(c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_position_clips_are_valid(pitch in prop::sample::select(vec![45.0, 64.0, 80.0]), n in 1usize..60, seed: u64) {
        let rule = DesignRule::with_pitch_nm(pitch).unwrap();
        let clip = gen_random_positions(&rule, n, seed, 5_000);
        prop_assert!(clip.has_center_contact());
        prop_assert!(!clip.contacts.is_empty() && clip.contacts.len() <= n);
        prop_assert_eq!(clip.check_invariants(), Ok(()));
        prop_assert_eq!(clip, gen_random_positions(&rule, n, seed, 5_000));
    }

    #[test]
    fn randomized_arrays_are_valid(half_m in 0usize..6, half_n in 0usize..6, keep in 0.0f64..=1.0, seed: u64) {
        let rule = DesignRule::with_pitch_nm(64.0).unwrap();
        let clip = gen_randomized_array(&rule, 2 * half_m + 1, 2 * half_n + 1, rule.min_pitch(), keep, seed).unwrap();
        prop_assert!(clip.has_center_contact());
        prop_assert_eq!(clip.check_invariants(), Ok(()));
        prop_assert!(clip.contacts.len() <= (2 * half_m + 1) * (2 * half_n + 1));
    }

    #[test]
    fn clip_transforms_keep_invariants(seed: u64, g in d4()) {
        let rule = DesignRule::with_pitch_nm(45.0).unwrap();
        let clip = gen_random_positions(&rule, 25, seed, 2_000);
        let t = clip.transformed(g);
        prop_assert_eq!(t.check_invariants(), Ok(()));
        prop_assert_eq!(t.contacts.len(), clip.contacts.len());
        let mut back = t.transformed(g.inverse()).contacts;
        let mut orig = clip.contacts.clone();
        back.sort_by_key(|c| (c.cx, c.cy));
        orig.sort_by_key(|c| (c.cx, c.cy));
        prop_assert_eq!(back, orig);
    }

    #[test]
    fn raster_transforms_compose(a in d4(), b in d4(), side in 1usize..9, seed: u64) {
        let data: Vec<u64> = (0..side * side).map(|i| seed.wrapping_mul(i as u64 + 1)).collect();
        let two_step = b.transform_square(&a.transform_square(&data, side), side);
        prop_assert_eq!(&two_step, &a.then(b).transform_square(&data, side));
        prop_assert_eq!(a.inverse().transform_square(&a.transform_square(&data, side), side), data);
    }

    #[test]
    fn selection_is_sorted_distinct_and_sized(n in 1usize..40, dim in 1usize..5, k_frac in 0.0f64..1.0, seed: u64) {
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let mut rng = litho_core::rng::SplitMix64::new(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.uniform(-3.0, 3.0)).collect()).collect();
        let points = FeatureMatrix::new(&rows).unwrap();
        let picked = select_from_features(&points, k, seed).unwrap();
        prop_assert_eq!(picked.len(), k);
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*picked.last().unwrap() < n);
        prop_assert_eq!(&picked, &select_from_features(&points, k, seed).unwrap());
        prop_assert!(coreset_objective(&points, &picked).unwrap() >= 0.0);
    }

    #[test]
    fn fc_network_respects_its_bound(width in 1usize..6, depth in 1usize..4, seed: u64, pair_seed: u64) {
        let mut layers = vec![];
        for _ in 0..depth {
            layers.push(LayerSpec::Fc { units: width });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Fc { units: 1 });
        let net = Network::new(ModelSpec { input: (1, 3, 3), layers }).unwrap();
        let state = net.init(seed);
        let bound = lipschitz_bound(&net, &state);
        let mut rng = litho_core::rng::SplitMix64::new(pair_seed);
        let x: Vec<f32> = (0..9).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let y: Vec<f32> = (0..9).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let dist = x.iter().zip(&y).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
        let gap = (net.predict(&state, &x).unwrap() - net.predict(&state, &y).unwrap()).abs() as f64;
        prop_assert!(gap <= bound * dist * (1.0 + 1e-5) + 1e-6, "gap {gap} bound {bound} dist {dist}");
    }

    #[test]
    fn model_container_round_trips(seed: u64, channels in 1usize..4) {
        let spec = ModelSpec {
            input: (1, 8, 8),
            layers: vec![
                LayerSpec::Conv { filters: channels, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { factor: 2 },
                LayerSpec::Fc { units: 4 },
                LayerSpec::Dropout { rate: 0.25 },
                LayerSpec::Fc { units: 1 },
            ],
        };
        let state = Network::new(spec.clone()).unwrap().init(seed);
        let bytes = encode_model(&spec, &state);
        let (spec2, state2) = decode_model(&bytes).unwrap();
        prop_assert_eq!(&spec2, &spec);
        prop_assert_eq!(encode_model(&spec, &state2), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn splits_nest_and_partition(seed: u64, a in 0.01f64..0.5, b in 0.01f64..0.5) {
        let cfg = LithoConfig::n10();
        let clips = enumerate_clips(&cfg.rule, 30, ClipMix::default(), 0).unwrap();
        let ds = build_dataset(&clips, &cfg).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (small, test_s) = split(&ds, lo, seed).unwrap();
        let (large, test_l) = split(&ds, hi, seed).unwrap();
        let ids = |d: &litho_core::dataset::Dataset| d.clip_ids().into_iter().collect::<HashSet<_>>();
        prop_assert!(ids(&small).is_subset(&ids(&large)));
        prop_assert_eq!(ids(&test_s), ids(&test_l));
        prop_assert!(ids(&large).is_disjoint(&ids(&test_l)));
        prop_assert_eq!(test_s.len(), 4 * 15);
    }

    #[test]
    fn dataset_file_round_trips(clips in 1usize..6, seed: u64) {
        let cfg = LithoConfig::n7a();
        let set = enumerate_clips(&cfg.rule, clips, ClipMix::new(0.0, 0.0, 1.0), seed).unwrap();
        let ds = build_dataset(&set, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ds");
        save_dataset(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        // every prefix is rejected
        for cut in [0, 3, 4, bytes.len() / 2, bytes.len() - 1] {
            prop_assert!(decode_dataset(&bytes[..cut]).is_err());
        }
    }
}
