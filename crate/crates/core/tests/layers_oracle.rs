mod common;

use common::*;
use mbunet_core::layers::WeightKind;

#[test]
fn conv_matches_oracle() {
    let mut r = rng(1);
    for &c in &[1usize, 64, 100, 128, 192, 256] {
        for k in 1..=3 {
            for stride in 1..=2 {
                for kind in [WeightKind::Binary, WeightKind::Masked] {
                    assert!(
                        conv_case(&mut r, c, 9, k, stride, kind),
                        "c={c} k={k} s={stride} {kind:?}"
                    );
                }
            }
        }
    }
}

#[test]
fn concat_conv_matches_oracle() {
    let mut r = rng(2);
    for (a, b) in [(64, 64), (1, 130), (128, 128), (200, 56)] {
        for kind in [WeightKind::Binary, WeightKind::Masked] {
            assert!(concat_conv_case(&mut r, a, b, 11, kind));
        }
    }
}

#[test]
fn tconv_matches_oracle() {
    let mut r = rng(3);
    for &c in &[1usize, 64, 129, 256] {
        for s in 1..=3 {
            for kind in [WeightKind::Binary, WeightKind::Masked] {
                assert!(tconv_case(&mut r, c, 13, s, kind));
            }
        }
    }
}

#[test]
fn pool_and_threshold_match_oracle() {
    let mut r = rng(4);
    for &c in &[1usize, 63, 64, 65, 128, 192, 256] {
        assert!(pool_case(&mut r, c));
        assert!(threshold_case(&mut r, c));
    }
}
