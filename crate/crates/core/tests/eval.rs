mod common;

use codeclm::bpe::BpeVocab;
use codeclm::corpus::TokenStore;
use codeclm::eval::{
    bits_per_byte, decode_success_rate, frechet_distance, sqrtm_psd, DefaultExtractor,
    Embeddings, FeatureExtractor, FeatureStats, FloatType,
};
use codeclm::jpeg::{CodecProfile, TableSet};
use codeclm::lm::Params;
use codeclm::sample::SampleConfig;
use codeclm::Error;
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn byte_store(n: usize) -> (BpeVocab, TokenStore) {
    let vocab = BpeVocab::bytes_only("test");
    let streams: Vec<Vec<u8>> = (0..n)
        .map(|i| canonical_bytes(&gradient_image(16, 16, i as u32 * 11)))
        .collect();
    let store = TokenStore::from_streams(&streams, &vocab, 64).unwrap();
    (vocab, store)
}

#[test]
fn untrained_model_costs_about_eight_bits() {
    let (vocab, store) = byte_store(3);
    let p = Params::<f32>::init(&small_model(vocab.size(), 64)).unwrap();
    let bpb = bits_per_byte(&p, &store, &vocab).unwrap();
    assert!(bpb.is_finite() && bpb > 0.0);
    assert!((bpb - 8.0).abs() < 0.25, "{bpb}");
}

#[test]
fn memorized_store_scores_under_one_bit() {
    let (vocab, store) = byte_store(1);
    let doc = store.document(0).to_vec();
    let p = overfit(&doc, &vocab, &small_model(vocab.size(), doc.len()), 300);
    let bpb = bits_per_byte(&p, &store, &vocab).unwrap();
    assert!(bpb < 1.0, "{bpb}");

    let tables = TableSet::for_profile(&CodecProfile::default()).unwrap();
    let r = decode_success_rate(&p, &SampleConfig::argmax(doc.len()), 4, &vocab, &tables).unwrap();
    assert_eq!((r.clean, r.rate), (4, 1.0));
}

#[test]
fn long_documents_are_windowed() {
    let (vocab, store) = byte_store(2);
    assert!(store.document(0).len() > 40);
    let p = Params::<f32>::init(&small_model(vocab.size(), 16)).unwrap();
    let bpb = bits_per_byte(&p, &store, &vocab).unwrap();
    assert!(bpb.is_finite() && bpb > 0.0);
}

#[test]
fn foreign_vocab_rejected() {
    let (_, store) = byte_store(1);
    let other = BpeVocab::from_merges(vec![(0xFF, 0xD0)], "test".into()).unwrap();
    let p = Params::<f32>::init(&small_model(other.size(), 64)).unwrap();
    assert!(matches!(bits_per_byte(&p, &store, &other), Err(Error::Mismatch(_))));
}

#[test]
fn untrained_decode_rate_counts_add_up() {
    let vocab = BpeVocab::bytes_only("test");
    let tables = TableSet::for_profile(&CodecProfile::default()).unwrap();
    let p = Params::<f32>::init(&small_model(vocab.size(), 128)).unwrap();
    let cfg = SampleConfig {
        max_new_tokens: 127,
        ..SampleConfig::default()
    };
    let r = decode_success_rate(&p, &cfg, 100, &vocab, &tables).unwrap();
    assert_eq!(r.clean + r.salvaged + r.unrecoverable, 100);
    assert!((0.0..=1.0).contains(&r.rate));
    assert_eq!(r, decode_success_rate(&p, &cfg, 100, &vocab, &tables).unwrap());
}

fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(dim, dim) * 1e-3
}

fn random_stats(dim: usize, rng: &mut ChaCha8Rng) -> FeatureStats {
    let mean = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
    FeatureStats::new("x", 100, mean, random_spd(dim, rng)).unwrap()
}

#[test]
fn distance_to_self_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for dim in [1, 5, 40] {
        let a = random_stats(dim, &mut rng);
        let d = frechet_distance(&a, &a).unwrap();
        assert!(d.abs() < 1e-8 * a.cov.trace().max(1.0), "{dim}: {d}");
    }
}

#[test]
fn diagonal_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dim = 12;
    let va: Vec<f64> = (0..dim).map(|_| rng.random_range(0.01..3.0)).collect();
    let vb: Vec<f64> = (0..dim).map(|_| rng.random_range(0.01..3.0)).collect();
    let ma: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mb: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let want: f64 = (0..dim)
        .map(|i| (ma[i] - mb[i]).powi(2) + (va[i].sqrt() - vb[i].sqrt()).powi(2))
        .sum();
    let mk = |m: &[f64], v: &[f64]| {
        FeatureStats::new(
            "x",
            50,
            DVector::from_column_slice(m),
            DMatrix::from_diagonal(&DVector::from_column_slice(v)),
        )
        .unwrap()
    };
    let got = frechet_distance(&mk(&ma, &va), &mk(&mb, &vb)).unwrap();
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn mismatched_stats_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_stats(3, &mut rng);
    let b = random_stats(4, &mut rng);
    assert!(matches!(frechet_distance(&a, &b), Err(Error::Mismatch(_))));
    let mut c = random_stats(3, &mut rng);
    c.extractor = "y".into();
    assert!(matches!(frechet_distance(&a, &c), Err(Error::Mismatch(_))));
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    assert!(FeatureStats::new("x", 3, DVector::zeros(2), asym).is_err());
}

#[test]
fn image_statistics_need_enough_images() {
    let ex = DefaultExtractor;
    let imgs: Vec<_> = (0..10).map(|i| gradient_image(32, 32, i)).collect();
    assert!(FeatureStats::of_images(&ex, &imgs).is_err());
    let many: Vec<_> = (0..ex.dim() as u32 + 1)
        .map(|i| gradient_image(16, 16, i * 7))
        .collect();
    let s = FeatureStats::of_images(&ex, &many).unwrap();
    assert_eq!(s.n, ex.dim() + 1);
    assert!(frechet_distance(&s, &s).unwrap() < 1e-8);
}

#[test]
fn features_are_deterministic() {
    let img = gradient_image(48, 32, 9);
    let a = DefaultExtractor.extract(&img);
    assert_eq!(a, DefaultExtractor.extract(&img));
    assert_eq!(a.len(), DefaultExtractor.dim());
    assert!(a.iter().all(|x| x.is_finite()));
}

#[test]
fn embeddings_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let e = Embeddings {
        extractor: "inception-pool3".into(),
        rows: (0..5)
            .map(|_| (0..7).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.bin");
    e.save(&p, FloatType::F64).unwrap();
    assert_eq!(Embeddings::load(&p).unwrap(), e);
    let bytes = e.to_bytes(FloatType::F32);
    let back = Embeddings::from_bytes(&bytes).unwrap();
    for (a, b) in back.rows.iter().flatten().zip(e.rows.iter().flatten()) {
        assert_eq!(*a, f64::from(*b as f32));
    }
    assert!(Embeddings::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(std::str::from_utf8(&bytes[..20]).unwrap().contains("format"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn square_root_squares_back(dim in 1usize..=64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_spd(dim, &mut rng);
        let s = sqrtm_psd(&m);
        let err = (&s * &s - &m).norm() / m.norm();
        prop_assert!(err < 1e-6, "{}", err);
    }

    #[test]
    fn distance_is_symmetric(dim in 1usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_stats(dim, &mut rng);
        let b = random_stats(dim, &mut rng);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0), "{} {}", ab, ba);
    }
}
