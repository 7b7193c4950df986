mod common;

use mbunet_core::graph::{PrecisionMap, Stem2Mode, UNetConfig};
use mbunet_core::io::{decode_model, encode_model, read_model, write_model};
use mbunet_core::layers::FloatTensor;
use mbunet_core::quantizer::{build, synthetic_bundle, QuantizeOptions, WeightBundle};
use mbunet_core::Parallelism;
use rand::Rng;

fn config(id: u16) -> UNetConfig {
    UNetConfig::with_base(8)
        .with_extent(16, 16)
        .with_precision(PrecisionMap::from_id(id).unwrap())
}

fn image(c: &UNetConfig, seed: u64) -> FloatTensor {
    let mut r = common::rng(seed);
    let n = c.height * c.width * c.in_channels;
    FloatTensor::new(
        1,
        c.height,
        c.width,
        c.in_channels,
        (0..n).map(|_| r.random()).collect(),
    )
    .unwrap()
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (i, id) in [0u16, 4095, 0x6c9].into_iter().enumerate() {
        let mut c = config(id);
        if i == 2 {
            c.stem2 = Stem2Mode::Float;
        }
        let m = build(
            &c,
            &synthetic_bundle(&c, i as u64),
            &QuantizeOptions::default(),
        )
        .unwrap();
        let path = dir.path().join("m.mbun");
        write_model(&path, &m).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(back, m);
        let img = image(&c, 5);
        assert_eq!(
            back.forward(&img, Parallelism::Parallel).unwrap(),
            m.forward(&img, Parallelism::Sequential).unwrap()
        );
    }
}

#[test]
fn quantize_is_deterministic() {
    let c = config(0x0f0);
    let b = synthetic_bundle(&c, 3);
    let a = encode_model(&build(&c, &b, &QuantizeOptions::default()).unwrap()).unwrap();
    let again = encode_model(&build(&c, &b, &QuantizeOptions::default()).unwrap()).unwrap();
    assert_eq!(a, again);
}

#[test]
fn corrupt_model_reports_offset() {
    let c = config(1);
    let bytes =
        encode_model(&build(&c, &synthetic_bundle(&c, 1), &QuantizeOptions::default()).unwrap())
            .unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_model(&bad)
        .unwrap_err()
        .to_string()
        .contains("byte offset 0"));

    let e = decode_model(&bytes[..bytes.len() - 3])
        .unwrap_err()
        .to_string();
    assert!(e.contains("byte offset") && e.contains("truncated"), "{e}");

    // 8 bytes of magic and version, 85 of config, 4 of record count.
    let mut bad = bytes.clone();
    let name_len = u16::from_le_bytes([bad[97], bad[98]]) as usize;
    let kind_at = 99 + name_len;
    bad[kind_at] = 9;
    let e = decode_model(&bad).unwrap_err().to_string();
    assert!(
        e.contains(&format!("byte offset {kind_at}")) && e.contains("unknown kind code 9"),
        "{e}"
    );

    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_model(&extra)
        .unwrap_err()
        .to_string()
        .contains("trailing"));
}

#[test]
fn bundle_dir_round_trip_builds_same_model() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(0x555);
    let b = synthetic_bundle(&c, 9);
    b.write_dir(dir.path()).unwrap();
    let back = WeightBundle::read_dir(dir.path()).unwrap();
    assert_eq!(back, b);
    let opts = QuantizeOptions::default();
    assert_eq!(
        build(&c, &back, &opts).unwrap(),
        build(&c, &b, &opts).unwrap()
    );
}
