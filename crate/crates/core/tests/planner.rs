use mbunet_core::graph::{LayerLabel, PrecisionMap, UNetConfig};
use mbunet_core::planner::{
    cost_scores, count_ops, count_params, enumerate_configs, fewer_masked_than,
    marginal_contribution, scores_from_counts, select_mask_plan, unit_costs, Normalization,
    ResultsTable,
};
use proptest::prelude::*;

/// Counts multiply-accumulates by walking every output and every tap.
fn naive_macs(h_out: usize, w_out: usize, c_out: usize, taps_per_output: usize) -> u64 {
    let mut macs = 0u64;
    for _ in 0..h_out {
        for _ in 0..w_out {
            for _ in 0..c_out {
                macs += taps_per_output as u64;
            }
        }
    }
    macs
}

#[test]
fn ops_match_loop_counts() {
    let c = UNetConfig::with_base(16);
    let (h, w) = (64, 48);
    for label in LayerLabel::CONFIGURABLE {
        let expect = match label {
            LayerLabel::DownC(i) => {
                let (hh, ww) = (h >> i, w >> i);
                let (ci, co) = (c.encoder[i as usize - 1], c.encoder[i as usize]);
                naive_macs(hh, ww, co, ci * 9) + naive_macs(hh, ww, co, co * 9)
            }
            LayerLabel::UpCT(j) => {
                let (hh, ww) = (h >> (4 - j), w >> (4 - j));
                let ci = if j == 1 {
                    c.encoder[4]
                } else {
                    c.decoder[j as usize - 2]
                };
                naive_macs(hh, ww, c.upconv[j as usize - 1], ci)
            }
            LayerLabel::UpC(j) => {
                let (hh, ww) = (h >> (4 - j), w >> (4 - j));
                let ci = c.encoder[4 - j as usize] + c.upconv[j as usize - 1];
                let co = c.decoder[j as usize - 1];
                naive_macs(hh, ww, co, ci * 9) + naive_macs(hh, ww, co, co * 9)
            }
            _ => unreachable!(),
        };
        assert_eq!(count_ops(&c, label, (h, w)).unwrap(), 2 * expect, "{label}");
    }
}

#[test]
fn params_match_tensor_sizes() {
    let c = UNetConfig::default();
    assert_eq!(
        count_params(&c, LayerLabel::DownC(1)).unwrap(),
        (64 * 128 * 9 + 256) + (128 * 128 * 9 + 256)
    );
    assert_eq!(
        count_params(&c, LayerLabel::UpCT(4)).unwrap(),
        64 * 64 * 4 + 128
    );
    assert_eq!(
        count_params(&c, LayerLabel::UpC(1)).unwrap(),
        (1024 * 256 * 9 + 512) + (256 * 256 * 9 + 512)
    );
    let head = unit_costs(&c, (512, 512))
        .into_iter()
        .find(|u| u.name == "head")
        .unwrap();
    assert_eq!(head.params, 64 + 1);
}

#[test]
fn enumeration_respects_predicate() {
    let ids: Vec<u16> = enumerate_configs(fewer_masked_than(5))
        .map(|m| m.id())
        .collect();
    assert_eq!(ids.len(), 794);
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    for id in 0..4096u16 {
        let m = PrecisionMap::from_id(id).unwrap();
        assert_eq!(ids.binary_search(&id).is_ok(), m.masked_count() < 5);
    }
}

#[test]
fn planted_gains_recovered() {
    let gains: Vec<f64> = (0..12).map(|i| (i as f64 - 4.0) / 256.0).collect();
    let mut t = ResultsTable::default();
    for m in enumerate_configs(fewer_masked_than(5)) {
        let s: f64 = m.masked_labels().map(|l| gains[l.index().unwrap()]).sum();
        t.insert(m, 0.5 + s).unwrap();
    }
    for c in marginal_contribution(&t, 5) {
        assert_eq!(
            c.mean_gain,
            Some(gains[c.label.index().unwrap()]),
            "{}",
            c.label
        );
        assert_eq!(c.skipped, 0);
    }
}

#[test]
fn missing_pairs_are_reported() {
    let mut t = ResultsTable::default();
    t.insert(PrecisionMap::all_binary(), 0.5).unwrap();
    t.insert(
        PrecisionMap::from_masked([LayerLabel::UpC(2)]).unwrap(),
        0.75,
    )
    .unwrap();
    let c = marginal_contribution(&t, 5);
    let up_c2 = c.iter().find(|c| c.label == LayerLabel::UpC(2)).unwrap();
    assert_eq!(up_c2.mean_gain, Some(0.25));
    assert_eq!(up_c2.pairs, 1);
    assert!(up_c2.skipped > 0);
    assert!(c
        .iter()
        .filter(|c| c.label != LayerLabel::UpC(2))
        .all(|c| c.mean_gain.is_none()));
}

proptest! {
    #[test]
    fn ranking_invariant_to_rescaling(
        ops in prop::array::uniform12(1u64..1_000_000),
        params in prop::array::uniform12(1u64..1_000_000),
        k_op in 1u64..1000, k_param in 1u64..1000, w in 0.0f64..=1.0,
    ) {
        let a = scores_from_counts(&ops, &params, w, Normalization::Max, (1, 1)).unwrap();
        let so = ops.map(|x| x * k_op);
        let sp = params.map(|x| x * k_param);
        let b = scores_from_counts(&so, &sp, w, Normalization::Max, (1, 1)).unwrap();
        for (x, y) in a.layers.iter().zip(&b.layers) {
            prop_assert!((x.score - y.score).abs() < 1e-12);
        }
        let ranks_a: Vec<_> = a.layers.iter().map(|l| (l.label, l.rank)).collect();
        let ranks_b: Vec<_> = b.layers.iter().map(|l| (l.label, l.rank)).collect();
        // Exact ties may only reorder if the rescaled scores differ in the last ulp.
        if a.layers.windows(2).all(|p| p[1].score - p[0].score > 1e-9) {
            prop_assert_eq!(ranks_a, ranks_b);
        }
    }

    #[test]
    fn plans_are_nested(w in 0.0f64..=1.0, base in 1usize..65) {
        let r = cost_scores(&UNetConfig::with_base(base), w, Normalization::Max, (256, 256)).unwrap();
        for k in 0..12 {
            let a = select_mask_plan(&r, k).unwrap();
            let b = select_mask_plan(&r, k + 1).unwrap();
            prop_assert!(a.is_subset_of(b));
            prop_assert_eq!(b.masked_count(), k as u32 + 1);
        }
    }

    #[test]
    fn normalized_values_in_unit_interval(w in 0.0f64..=1.0, mm in any::<bool>()) {
        let n = if mm { Normalization::MinMax } else { Normalization::Max };
        let r = cost_scores(&UNetConfig::default(), w, n, (512, 512)).unwrap();
        for l in &r.layers {
            prop_assert!((0.0..=1.0).contains(&l.op_norm) && (0.0..=1.0).contains(&l.param_norm));
        }
    }
}
