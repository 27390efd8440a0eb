mod common;

use pcanet_core::energy::record_ledger;
use pcanet_core::eval::{Classifier, LabeledFeatures, NearestNeighbor, SplitTag};
use pcanet_core::numcore::{correlate_same, extract_patches, Matrix};
use pcanet_core::pcanet::{self, block_positions, extract_features, train, NetConfig, Overlap};
use pcanet_core::Exec;
use proptest::prelude::*;

fn image(max_dim: usize) -> impl Strategy<Value = Matrix> {
    (5..=max_dim, 5..=max_dim).prop_flat_map(|(m, n)| {
        prop::collection::vec(-50.0f64..50.0, m * n).prop_map(move |v| Matrix::from_vec(m, n, v).unwrap())
    })
}

fn odd_window() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![1usize, 3, 5])
}

fn images(count: usize, m: usize, n: usize) -> impl Strategy<Value = Vec<Matrix>> {
    prop::collection::vec(
        prop::collection::vec(0.0f64..255.0, m * n).prop_map(move |v| Matrix::from_vec(m, n, v).unwrap()),
        count,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn patches_match_direct_windows(img in image(12), k1 in odd_window(), k2 in odd_window()) {
        let (m, n) = img.shape();
        let p = extract_patches(&img, k1, k2).unwrap();
        prop_assert_eq!(p.shape(), (k1 * k2, m * n));
        for r in 0..m {
            for c in 0..n {
                prop_assert_eq!(p.column(r * n + c), common::brute_patch(&img, r, c, k1, k2));
            }
        }
    }

    #[test]
    fn correlation_matches_direct_sum(img in image(12), k1 in odd_window(), k2 in odd_window(), seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let w = common::random_matrix(&mut rng, k1, k2, -1.0, 1.0);
        let got = correlate_same(&img, &w).unwrap();
        let want = common::brute_correlate(&img, &w);
        for (a, b) in got.as_slice().iter().zip(want.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn block_positions_match_enumeration(m in 1usize..40, n in 1usize..40, h1 in 1usize..40, h2 in 1usize..40, t in 0u8..10) {
        prop_assume!(h1 <= m && h2 <= n);
        let r = Overlap::from_tenths(t).unwrap();
        let got = block_positions(m, n, h1, h2, r).unwrap();
        let want = common::brute_block_positions(m, n, h1, h2, r.stride(h1), r.stride(h2));
        prop_assert_eq!(got, want);
    }

    #[test]
    fn oversized_blocks_are_infeasible(m in 1usize..20, n in 1usize..20, extra in 1usize..5) {
        prop_assert!(block_positions(m, n, m + extra, n, Overlap::default()).is_err());
        prop_assert!(block_positions(m, n, m, n + extra, Overlap::default()).is_err());
    }

    #[test]
    fn nearest_neighbor_matches_exhaustive_search(
        train in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..12),
        queries in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..6),
    ) {
        let labels: Vec<u32> = (0..train.len() as u32).collect();
        let set = LabeledFeatures::new(train.clone(), labels.clone(), SplitTag::Train).unwrap();
        let got = NearestNeighbor.predict(&set, &queries, Exec::Sequential).unwrap();
        for (q, g) in queries.iter().zip(got) {
            prop_assert_eq!(g, common::brute_nn(&train, &labels, q));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stage1_outputs_preserve_patch_energy(imgs in images(4, 10, 10)) {
        let cfg = NetConfig { l1: 9, l2: 1, h1: 4, h2: 4, ..NetConfig::default() };
        let net = train(&imgs, &cfg).unwrap();
        for img in &imgs {
            let patch = common::energy(&extract_patches(img, 3, 3).unwrap());
            let mut prev = 0.0;
            let mut acc = 0.0;
            for w in &net.stage1.filters {
                acc += common::energy(&correlate_same(img, w).unwrap());
                prop_assert!(acc >= prev);
                prev = acc;
            }
            prop_assert!((acc - patch).abs() <= 1e-9 * patch.max(1.0));
        }
    }

    #[test]
    fn retained_energy_grows_with_filter_count(imgs in images(4, 10, 10)) {
        let cfg = NetConfig { l1: 9, l2: 1, h1: 4, h2: 4, ..NetConfig::default() };
        let net = train(&imgs, &cfg).unwrap();
        let ratios: Vec<f64> = (1..=9).map(|l| net.stage1.eigenvalue_ratio(l)).collect();
        for w in ratios.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-12);
        }
        prop_assert!((ratios[8] - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn histograms_conserve_block_area(
        imgs in images(3, 12, 12),
        l in 1usize..5,
        h in 2usize..7,
        t in 0u8..10,
    ) {
        let r = Overlap::from_tenths(t).unwrap();
        let cfg = NetConfig { l1: l, l2: l, h1: h, h2: h, overlap: r, ..NetConfig::default() };
        let net = train(&imgs, &cfg).unwrap();
        let blocks = pcanet::block_count(12, 12, h, h, r).unwrap();
        for f in extract_features(&net, &imgs, Exec::Sequential).unwrap() {
            prop_assert_eq!(f.len(), (1 << l) * l * blocks);
            for ch in 0..l {
                for b in 0..blocks {
                    prop_assert_eq!(f.block_histogram(ch, b).iter().sum::<u32>() as usize, h * h);
                }
            }
        }
    }

    #[test]
    fn decimal_maps_stay_in_range(imgs in images(3, 9, 9), l in 1usize..6) {
        let cfg = NetConfig { l1: 2, l2: l, h1: 3, h2: 3, ..NetConfig::default() };
        let net = train(&imgs, &cfg).unwrap();
        let top = ((1u64 << l) - 1) as f64;
        for img in &imgs {
            for map in pcanet::decimal_maps(&net, img).unwrap() {
                for &v in map.as_slice() {
                    prop_assert!(v >= 0.0 && v <= top && v.fract() == 0.0);
                }
            }
        }
    }

    #[test]
    fn execution_mode_does_not_change_results(imgs in images(6, 10, 10), l in 1usize..4) {
        let cfg = NetConfig { l1: l, l2: l, h1: 4, h2: 4, ..NetConfig::default() };
        let net = train(&imgs, &cfg).unwrap();
        let seq = extract_features(&net, &imgs, Exec::Sequential).unwrap();
        let par = extract_features(&net, &imgs, Exec::Parallel).unwrap();
        prop_assert_eq!(seq, par);
        let a = record_ledger(&net, &imgs, Exec::Sequential).unwrap();
        let b = record_ledger(&net, &imgs, Exec::Parallel).unwrap();
        prop_assert_eq!(a.values().map(f64::to_bits), b.values().map(f64::to_bits));
    }
}
