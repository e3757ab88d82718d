mod common;

use std::path::PathBuf;

use codeclm::bpe::{train_bpe, BpeTrainConfig, BpeVocab, BOS, EOS};
use codeclm::corpus::{build_corpus, encode_directory, Chunking, TokenStore};
use codeclm::desk::{grid_crops, load_photos, write_images};
use codeclm::image::RgbImage;
use codeclm::jpeg::CodecProfile;
use codeclm::Error;
use common::*;
use proptest::prelude::*;

fn photos_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/photos")
}

fn profile() -> CodecProfile {
    CodecProfile::default()
}

fn bytes_vocab() -> BpeVocab {
    BpeVocab::bytes_only(profile().hash())
}

#[test]
fn empty_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        build_corpus(dir.path(), &profile(), &bytes_vocab(), 64),
        Err(Error::EmptyCorpus)
    ));
}

#[test]
fn identical_images_give_identical_documents() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = vec![RgbImage::filled(16, 16, [0, 0, 0]); 10];
    write_images(dir.path(), &imgs, "black").unwrap();
    let store = build_corpus(dir.path(), &profile(), &bytes_vocab(), 16).unwrap();
    assert_eq!(store.doc_count(), 10);
    let first = store.document(0).to_vec();
    assert!((0..10).all(|i| store.document(i) == first.as_slice()));
    assert_eq!(store.tokens().len(), 10 * first.len());
}

#[test]
fn bad_file_names_the_culprit() {
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), &[gradient_image(16, 16, 0)], "ok").unwrap();
    std::fs::write(dir.path().join("zz_broken.png"), b"not a png").unwrap();
    let err = build_corpus(dir.path(), &profile(), &bytes_vocab(), 16).unwrap_err();
    assert!(err.to_string().contains("zz_broken.png"), "{err}");

    let odd = tempfile::tempdir().unwrap();
    write_images(odd.path(), &[RgbImage::filled(20, 16, [1, 2, 3])], "odd").unwrap();
    let err = build_corpus(odd.path(), &profile(), &bytes_vocab(), 16).unwrap_err();
    assert!(err.to_string().contains("odd00000.png"), "{err}");
}

#[test]
fn vocab_from_other_profile_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), &[gradient_image(16, 16, 0)], "a").unwrap();
    let v = BpeVocab::bytes_only(CodecProfile::with_quality(50).hash());
    assert!(matches!(
        build_corpus(dir.path(), &profile(), &v, 16),
        Err(Error::Mismatch(_))
    ));
}

#[test]
fn documents_follow_file_name_order() {
    let dir = tempfile::tempdir().unwrap();
    let imgs: Vec<_> = (0..4).map(|i| gradient_image(16, 32, i * 40)).collect();
    write_images(dir.path(), &imgs, "img").unwrap();
    let store = build_corpus(dir.path(), &profile(), &bytes_vocab(), 32).unwrap();
    let streams = encode_directory(dir.path(), &profile()).unwrap();
    for (i, (path, s)) in streams.iter().enumerate() {
        assert!(path.ends_with(format!("img{i:05}.png")));
        assert_eq!(bytes_vocab().decode(store.document(i)).unwrap(), *s);
    }
}

#[test]
fn natural_crops_average_about_five_thousand_tokens() {
    let photos = load_photos(&photos_dir(), &["chelsea"]).unwrap();
    let crops: Vec<RgbImage> = photos
        .iter()
        .flat_map(|(_, p)| grid_crops(p, 256, 128).unwrap())
        .take(20)
        .collect();
    assert_eq!(crops.len(), 20);
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), &crops, "c").unwrap();
    let streams: Vec<Vec<u8>> = encode_directory(dir.path(), &profile())
        .unwrap()
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let vocab = train_bpe(
        streams.iter().map(Vec::as_slice),
        &BpeTrainConfig::default(),
        &profile().hash(),
    )
    .unwrap();
    let store = TokenStore::from_streams(&streams, &vocab, 1024).unwrap();
    let mean = store.manifest(&vocab).mean_doc_len;
    assert!((2500.0..=10000.0).contains(&mean), "{mean}");
}

#[test]
fn store_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let imgs: Vec<_> = (0..5).map(|i| gradient_image(32, 16, i * 9)).collect();
    write_images(dir.path(), &imgs, "g").unwrap();
    let streams: Vec<Vec<u8>> = encode_directory(dir.path(), &profile())
        .unwrap()
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let vocab = train_bpe(
        streams.iter().map(Vec::as_slice),
        &BpeTrainConfig::default(),
        &profile().hash(),
    )
    .unwrap();
    let store = TokenStore::from_streams(&streams, &vocab, 24).unwrap();
    let out = tempfile::tempdir().unwrap();
    let m = store.save(out.path(), &vocab).unwrap();
    assert_eq!(m.token_width, 2);
    assert_eq!(m.image_count, 5);
    assert_eq!(m.vocab_hash, vocab.hash());
    assert_eq!(m.profile_hash, profile().hash());
    let (back, m2) = TokenStore::load(out.path()).unwrap();
    assert_eq!(m, m2);
    assert_eq!(back.tokens(), store.tokens());
    assert_eq!(back.doc_lengths(), store.doc_lengths());

    let tokens = out.path().join("tokens.bin");
    let mut raw = std::fs::read(&tokens).unwrap();
    raw[3] ^= 0x40;
    std::fs::write(&tokens, raw).unwrap();
    assert!(TokenStore::load(out.path()).is_err());
}

#[test]
fn byte_vocab_uses_one_byte_ids_only_when_they_fit() {
    let store = TokenStore::from_documents([vec![BOS, 1, 2, EOS]], &bytes_vocab(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    // 258 ids do not fit one byte
    assert_eq!(store.save(dir.path(), &bytes_vocab()).unwrap().token_width, 2);
}

#[test]
fn aligned_windows_start_at_documents_and_wrap() {
    let v = bytes_vocab();
    let docs = vec![vec![BOS, 1, 2, 3, EOS], vec![BOS, 4, EOS], vec![BOS, 5, 6, 7, 8, 9, 10, EOS]];
    let store = TokenStore::from_documents(docs, &v, 4)
        .unwrap()
        .with_chunking(Chunking::Aligned);
    let chunks: Vec<&[u32]> = (0..store.chunk_count()).map(|i| store.chunk(i)).collect();
    assert_eq!(
        chunks,
        [
            &[BOS, 1, 2, 3][..],
            &[EOS, BOS, 4, EOS],
            &[BOS, 4, EOS, BOS],
            &[BOS, 5, 6, 7],
            &[8, 9, 10, EOS],
        ]
    );
    assert_eq!(store.tokens().len(), 16);

    // the last window runs off the end and wraps to the first document
    let store = TokenStore::from_documents([vec![BOS, 1, EOS], vec![BOS, 2, EOS]], &v, 5)
        .unwrap()
        .with_chunking(Chunking::Aligned);
    assert_eq!(store.chunk(1), &[BOS, 2, EOS, BOS, 1]);

    let dir = tempfile::tempdir().unwrap();
    let m = store.save(dir.path(), &v).unwrap();
    assert_eq!(m.chunking, Chunking::Aligned);
    assert_eq!(m.token_count, 6);
    let (back, _) = TokenStore::load(dir.path()).unwrap();
    assert_eq!(back, store);
    assert_eq!(back.clone().with_chunking(Chunking::Packed).chunk_count(), 1);
}

fn doc_strategy() -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(any::<u8>(), 1..60), 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aligned_chunks_cover_every_document_start(docs in doc_strategy(), l in 2usize..40) {
        let vocab = BpeVocab::bytes_only("p");
        let store = TokenStore::from_streams(&docs, &vocab, l).unwrap().with_chunking(Chunking::Aligned);
        let starts = (0..store.chunk_count()).filter(|&c| store.chunk(c)[0] == BOS).count();
        prop_assert_eq!(starts, docs.len());
        let want: usize = store.doc_lengths().iter().map(|d| d.div_ceil(l)).sum();
        prop_assert_eq!(store.chunk_count(), want);
        prop_assert!((0..store.chunk_count()).all(|c| store.chunk(c).len() == l));
    }

    #[test]
    fn chunks_are_substrings_and_tokens_conserved(docs in doc_strategy(), l in 2usize..40, seed in any::<u64>()) {
        let vocab = BpeVocab::bytes_only("p");
        let store = TokenStore::from_streams(&docs, &vocab, l).unwrap();
        prop_assert_eq!(store.doc_lengths().iter().sum::<usize>(), store.tokens().len());
        let all: Vec<u8> = docs.concat();
        for c in 0..store.chunk_count() {
            let bytes = vocab.decode(store.chunk(c)).unwrap();
            prop_assert!(bytes.is_empty() || all.windows(bytes.len()).any(|w| w == bytes.as_slice()));
        }
        let n = store.chunk_count();
        if n > 0 {
            let bs = 1 + (seed % 4) as usize;
            let mut it = store.batches(bs, seed);
            let sched = it.schedule();
            let per = it.epoch_len() as u64;
            let mut seen = Vec::new();
            for s in per..2 * per {
                let b = it.batch_at(s);
                let idx = sched.chunks_at(s);
                prop_assert_eq!(b.batch_size, idx.len());
                for (r, &c) in idx.iter().enumerate() {
                    prop_assert_eq!(b.input_row(r), store.chunk(c));
                    prop_assert_eq!(b.target_row(r), &b.input_row(r)[1..]);
                }
                seen.extend(idx);
            }
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
