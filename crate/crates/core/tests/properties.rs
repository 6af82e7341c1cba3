mod common;

use common::oracle::auroc_pairs;
use fedfbn::datagen::{concat_naive, Dataset};
use fedfbn::federation::{
    aggregate_representation, merge_heads, ParameterBundle, StrategyKind, Weighting,
};
use fedfbn::metrics::{auroc, paired_ttest};
use fedfbn::neural::{init_model, ModelSpec};
use fedfbn::numerics::{RngStream, Tensor};
use proptest::prelude::*;

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..20).prop_map(|v| f64::from(v) / 20.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 200,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn auroc_equals_pair_count((s, l) in scored()) {
        prop_assert_eq!(auroc(&s, &l).unwrap(), auroc_pairs(&s, &l));
    }

    #[test]
    fn auroc_is_rank_invariant((s, l) in scored()) {
        let stretched: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        prop_assert_eq!(auroc(&s, &l).unwrap(), auroc(&stretched, &l).unwrap());
    }

    #[test]
    fn flipped_labels_complement_auroc((s, l) in scored()) {
        let flipped: Vec<bool> = l.iter().map(|v| !v).collect();
        if let (Some(a), Some(b)) = (auroc(&s, &l).unwrap(), auroc(&s, &flipped).unwrap()) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn ttest_swaps_sign(a in prop::collection::vec(-5.0f64..5.0, 2..30), shift in -1.0f64..1.0) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + shift * (i % 3) as f64).collect();
        let ab = paired_ttest(&a, &b).unwrap();
        let ba = paired_ttest(&b, &a).unwrap();
        prop_assert_eq!(ab.t_statistic, -ba.t_statistic);
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn identical_bundles_are_a_fixed_point(seed in any::<u64>(), log_k in 0u32..3) {
        // x·2^j / 2^j is exact, so only power-of-two node counts are bit-exact
        let k = 1usize << log_k;
        let spec = ModelSpec::new(3, vec![4, 2], vec!["a".into(), "b".into()]);
        let m = init_model(&spec, &mut RngStream::new(seed)).unwrap();
        let bundles: Vec<ParameterBundle> = (0..k)
            .map(|id| ParameterBundle {
                node_id: id,
                round: 1,
                sample_count: id + 1,
                representation: m.representation.clone(),
                heads: m.heads.clone(),
            })
            .collect();
        for s in [StrategyKind::FedAvg, StrategyKind::FedBN, StrategyKind::FedFBN] {
            let agg = aggregate_representation(&bundles, s, Weighting::Uniform).unwrap();
            for id in 0..k {
                prop_assert_eq!(&agg.for_node(id).unwrap(), &m.representation);
            }
        }
        let merged = merge_heads(&bundles, &["a", "b"]).unwrap();
        prop_assert_eq!(&merged.heads["a"], &m.heads[0]);
    }

    #[test]
    fn concat_keeps_rows_and_masks(n in 1usize..20, m in 1usize..20) {
        let part = |rows: usize, names: &[&str], first: u64| {
            let l = names.len();
            Dataset::new(
                Tensor::filled(&[rows, 2], first as f64),
                Tensor::filled(&[rows, l], 1.0),
                Tensor::filled(&[rows, l], 1.0),
                (first..first + rows as u64).collect(),
                names.iter().map(|s| s.to_string()).collect(),
            )
            .unwrap()
        };
        let a = part(n, &["x", "y"], 0);
        let b = part(m, &["y", "z"], 1000);
        let c = concat_naive(&a, &b).unwrap();
        prop_assert_eq!(c.len(), n + m);
        let z = c.label_index("z").unwrap();
        let x = c.label_index("x").unwrap();
        prop_assert!((0..n).all(|i| c.mask.get(i, z) == 0.0 && c.mask.get(i, x) == 1.0));
        prop_assert!((n..n + m).all(|i| c.mask.get(i, x) == 0.0 && c.mask.get(i, z) == 1.0));
    }
}
