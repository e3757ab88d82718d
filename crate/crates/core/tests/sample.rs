mod common;

use codeclm::bpe::{BpeVocab, BOS, EOS};
use codeclm::jpeg::{decode, encode_image, CodecProfile, TableSet};
use codeclm::lm::{LmError, Params};
use codeclm::sample::{
    complete_image, generate, generate_uncached, sample_next, truncated_distribution,
    DecodeOutcome, SampleConfig,
};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sampling(seed: u64, max_new: usize) -> SampleConfig {
    SampleConfig {
        max_new_tokens: max_new,
        seed,
        ..SampleConfig::default()
    }
}

#[test]
fn cached_and_uncached_generation_agree() {
    let p = Params::<f32>::init(&small_model(260, 64)).unwrap();
    for seed in 0..10 {
        for (k, tp) in [(40, 0.9), (0, 1.0), (5, 0.5)] {
            let cfg = SampleConfig {
                top_k: k,
                top_p: tp,
                ..sampling(seed, 50)
            };
            let prompt = [BOS, 7, 9];
            assert_eq!(
                generate(&p, &prompt, &cfg).unwrap(),
                generate_uncached(&p, &prompt, &cfg).unwrap()
            );
        }
    }
}

#[test]
fn top_k_one_is_argmax() {
    let p = Params::<f32>::init(&small_model(260, 64)).unwrap();
    let argmax = generate(&p, &[BOS], &SampleConfig::argmax(40)).unwrap();
    for seed in 0..5 {
        let cfg = SampleConfig {
            top_k: 1,
            ..sampling(seed, 40)
        };
        assert_eq!(generate(&p, &[BOS], &cfg).unwrap(), argmax);
    }
}

#[test]
fn prompt_and_length_contract() {
    let p = Params::<f32>::init(&small_model(260, 16)).unwrap();
    assert!(matches!(
        generate(&p, &[BOS], &sampling(0, 16)),
        Err(LmError::ContextOverflow { len: 17, max: 16 })
    ));
    assert!(generate(&p, &[3], &sampling(0, 4)).is_err());
    assert!(generate(&p, &[BOS, EOS], &sampling(0, 4)).is_err());
    let out = generate(&p, &[BOS, 1], &sampling(0, 14)).unwrap();
    assert_eq!(&out[..2], &[BOS, 1]);
    assert!(out.len() <= 16);
}

#[test]
fn overfit_model_reproduces_its_document() {
    let vocab = BpeVocab::bytes_only("test");
    let doc = vocab.encode(&canonical_bytes(&gradient_image(16, 16, 0)), true, true);
    let cfg = small_model(vocab.size(), doc.len());
    let p = overfit(&doc, &vocab, &cfg, 300);
    let out = generate(&p, &[BOS], &SampleConfig::argmax(doc.len() - 1)).unwrap();
    assert_eq!(out, doc);
}

/// Wilson-Hilferty approximation to the upper chi-square quantile at z.
fn chi2_quantile(df: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn untruncated_draws_follow_softmax() {
    let last: Vec<f32> = (0..24).map(|i| ((i * 7 % 24) as f32 / 5.0).sin() * 2.5).collect();
    let last = last.as_slice();
    let cfg = SampleConfig {
        top_k: 0,
        top_p: 1.0,
        ..sampling(0, 1)
    };
    let dist = truncated_distribution(last, &cfg);
    assert_eq!(dist.len(), 24);
    let mut probs = vec![0.0; 24];
    for (id, q) in dist {
        probs[id as usize] = q;
    }
    let n = 100_000usize;
    let mut counts = vec![0usize; 24];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..n {
        counts[sample_next(last, &cfg, &mut rng) as usize] += 1;
    }
    let mut chi2 = 0.0;
    for (c, q) in counts.iter().zip(&probs) {
        let expect = q * n as f64;
        let se = (n as f64 * q * (1.0 - q)).sqrt();
        assert!((*c as f64 - expect).abs() <= 3.0 * se.max(1e-9), "{c} vs {expect}");
        if expect > 0.0 {
            chi2 += (*c as f64 - expect).powi(2) / expect;
        }
    }
    assert!(chi2 < chi2_quantile(23.0, 3.09), "chi2 {chi2}");
}

#[test]
fn complete_full_ratio_round_trips() {
    let vocab = BpeVocab::bytes_only("test");
    let tables = TableSet::for_profile(&CodecProfile::default()).unwrap();
    let file = std::fs::read(fixture("astro64_q25.jpg")).unwrap();
    let p = Params::<f32>::init(&small_model(vocab.size(), 16)).unwrap();
    let c = complete_image(&p, &file, 1.0, &sampling(0, 8), &vocab, &tables).unwrap();
    assert_eq!(c.restored.outcome, DecodeOutcome::Clean);
    assert_eq!(c.restored.file.as_deref(), Some(file.as_slice()));
    assert_eq!(c.prompt_mcus, 16);
}

#[test]
fn complete_zero_ratio_is_unconditional() {
    let vocab = BpeVocab::bytes_only("test");
    let tables = TableSet::for_profile(&CodecProfile::default()).unwrap();
    let file = std::fs::read(fixture("astro64_q25.jpg")).unwrap();
    let p = Params::<f32>::init(&small_model(vocab.size(), 64)).unwrap();
    let cfg = sampling(3, 30);
    let c = complete_image(&p, &file, 0.0, &cfg, &vocab, &tables).unwrap();
    assert_eq!(c.prompt_tokens, 1);
    assert_eq!(c.prompt_mcus, 0);
    assert_eq!(c.tokens, generate(&p, &[BOS], &cfg).unwrap());
}

#[test]
fn completion_preserves_prompt_mcus() {
    let vocab = BpeVocab::bytes_only("test");
    let tables = TableSet::for_profile(&CodecProfile::default()).unwrap();
    let img = gradient_image(48, 32, 5);
    let file = encode_image(&img, &CodecProfile::default()).unwrap();
    let src = decode(&file).unwrap();
    let p = Params::<f32>::init(&small_model(vocab.size(), 512)).unwrap();
    for r in [0.25, 0.5, 0.75] {
        let c = complete_image(&p, &file, r, &sampling(1, 200), &vocab, &tables).unwrap();
        assert_eq!(c.prompt_mcus, (r * 6.0).floor() as u32);
        let out = decode(c.restored.file.as_ref().unwrap()).unwrap();
        assert!(c.restored.kept_mcus >= c.prompt_mcus);
        for m in 0..c.prompt_mcus {
            assert_eq!(out.mcu_pixels(m), src.mcu_pixels(m), "r={r} mcu {m}");
        }
    }
}

#[test]
fn completion_rejects_vocab_mismatch() {
    let vocab = BpeVocab::bytes_only("test");
    let tables = TableSet::for_profile(&CodecProfile::default()).unwrap();
    let file = std::fs::read(fixture("grad16_q25.jpg")).unwrap();
    let p = Params::<f32>::init(&small_model(300, 64)).unwrap();
    assert!(complete_image(&p, &file, 0.5, &sampling(0, 8), &vocab, &tables).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nothing_follows_eos(seed in any::<u64>(), temp in 0.5f64..3.0) {
        let p = Params::<f32>::init(&small_model(260, 40)).unwrap();
        let cfg = SampleConfig { temperature: temp, top_k: 0, top_p: 1.0, ..sampling(seed, 39) };
        let out = generate(&p, &[BOS], &cfg).unwrap();
        if let Some(i) = out.iter().position(|&t| t == EOS) {
            prop_assert_eq!(i, out.len() - 1);
        } else {
            prop_assert_eq!(out.len(), 40);
        }
        prop_assert_eq!(generate(&p, &[BOS], &cfg).unwrap(), out);
    }
}
