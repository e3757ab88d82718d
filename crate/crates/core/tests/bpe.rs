use std::path::PathBuf;

use codeclm::bpe::{train_bpe, validate_sequence, BpeTrainConfig, BpeVocab, BOS, EOS, FIRST_MERGE};
use codeclm::jpeg::{canonicalize, CodecProfile, TableSet};
use proptest::prelude::*;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn fixture_streams() -> Vec<Vec<u8>> {
    ["grad16", "astro64", "noise32x48", "coffee256"]
        .iter()
        .map(|s| {
            let f = std::fs::read(data(&format!("pillow/{s}_q25.jpg"))).unwrap();
            canonicalize(&f).unwrap().0.bytes
        })
        .collect()
}

fn trained() -> BpeVocab {
    let streams = fixture_streams();
    train_bpe(
        streams.iter().map(Vec::as_slice),
        &BpeTrainConfig::default(),
        &CodecProfile::default().hash(),
    )
    .unwrap()
}

#[test]
fn vocab_file_matches_golden() {
    let golden = std::fs::read_to_string(data("vocab_golden.txt")).unwrap();
    let v = trained();
    assert_eq!(v.to_text(), golden);
    assert_eq!(BpeVocab::from_text(&golden).unwrap(), v);
    assert_eq!(v.size(), 322);
}

#[test]
fn table_sidecar_in_repo_matches_profile() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/tables/q25_420_ri1.tbl");
    let stored = TableSet::load(&path).unwrap();
    let built = TableSet::for_profile(&CodecProfile::default()).unwrap();
    assert_eq!(stored, built);
    assert_eq!(std::fs::read(&path).unwrap(), built.to_sidecar());
}

#[test]
fn corpus_streams_round_trip() {
    let v = trained();
    for s in fixture_streams() {
        let ids = v.encode(&s, true, true);
        assert!(ids.len() < s.len() + 2);
        assert_eq!(v.decode(&ids).unwrap(), s);
    }
}

#[test]
fn training_is_deterministic() {
    assert_eq!(trained(), trained());
}

#[test]
fn merges_favor_marker_bytes() {
    let v = trained();
    // restart markers FF D0..D7 recur once per MCU
    assert!(v.merges()[..8].iter().any(|&(a, _)| a == 0xFF));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn decode_inverts_encode(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let v = trained_cached();
        let ids = v.encode(&bytes, true, true);
        prop_assert_eq!(ids[0], BOS);
        prop_assert_eq!(*ids.last().unwrap(), EOS);
        prop_assert_eq!(v.decode(&ids).unwrap(), bytes);
    }

    #[test]
    fn any_valid_ids_decode(ids in prop::collection::vec(0u32..322, 0..200)) {
        let v = trained_cached();
        let body: Vec<u32> = ids.iter().copied().filter(|&i| i != BOS && i != EOS).collect();
        let mut framed = vec![BOS];
        framed.extend(&body);
        framed.push(EOS);
        prop_assert!(validate_sequence(&framed, v.size()).is_ok());
        prop_assert_eq!(v.decode(&framed).unwrap(), v.decode(&body).unwrap());
        let out = v.decode(&ids).unwrap();
        let expect: usize = ids.iter().map(|&i| v.expansion(i).unwrap().len()).sum();
        prop_assert_eq!(out.len(), expect);
    }

    #[test]
    fn prompt_covers_exactly_the_cut(bytes in prop::collection::vec(any::<u8>(), 1..300), frac in 0.0f64..=1.0) {
        let v = trained_cached();
        let cut = (frac * bytes.len() as f64) as usize;
        let p = v.encode_prompt(&bytes, cut);
        prop_assert_eq!(p[0], BOS);
        prop_assert_eq!(v.decode(&p).unwrap(), &bytes[..cut]);
    }

    #[test]
    fn out_of_range_ids_rejected(id in 322u32..10_000) {
        let v = trained_cached();
        prop_assert!(v.decode(&[id]).is_err());
        prop_assert!(validate_sequence(&[FIRST_MERGE, id], v.size()).is_err());
    }
}

fn trained_cached() -> &'static BpeVocab {
    static V: std::sync::OnceLock<BpeVocab> = std::sync::OnceLock::new();
    V.get_or_init(trained)
}
