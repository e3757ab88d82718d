use std::path::PathBuf;

use codeclm::image::RgbImage;
use codeclm::jpeg::{
    canonicalize, decode, encode_image, parse_segments, prefix_at_ratio, restore,
    restore_generated, CodecProfile, JpegError, SalvageStatus, SegmentKind, TableSet,
};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/pillow").join(name)
}

fn zune_decode(bytes: &[u8]) -> Vec<u8> {
    use zune_core::bytestream::ZCursor;
    use zune_core::colorspace::ColorSpace;
    use zune_core::options::DecoderOptions;
    let opts = DecoderOptions::default().jpeg_set_out_colorspace(ColorSpace::RGB);
    let mut d = zune_jpeg::JpegDecoder::new_with_options(ZCursor::new(bytes), opts);
    d.decode().expect("zune-jpeg rejects the stream")
}

#[test]
fn matches_reference_encoder_bytes() {
    for stem in ["grad16", "astro64", "noise32x48", "coffee256"] {
        let img = RgbImage::load_png(&fixture(&format!("{stem}.png"))).unwrap();
        for q in [5u8, 25, 75] {
            let want = std::fs::read(fixture(&format!("{stem}_q{q}.jpg"))).unwrap();
            let got = encode_image(&img, &CodecProfile::with_quality(q)).unwrap();
            assert_eq!(got, want, "{stem} q{q}");
        }
    }
}

#[test]
fn reference_files_canonicalize_and_restore_exactly() {
    for stem in ["grad16", "astro64", "noise32x48", "coffee256"] {
        let file = std::fs::read(fixture(&format!("{stem}_q25.jpg"))).unwrap();
        let (stream, tables) = canonicalize(&file).unwrap();
        assert_eq!(tables, TableSet::for_profile(&CodecProfile::default()).unwrap());
        assert_eq!(restore(&stream, &tables).unwrap(), file, "{stem}");
    }
}

#[test]
fn own_decoder_agrees_with_external_decoder() {
    for stem in ["astro64", "noise32x48", "coffee256"] {
        let file = std::fs::read(fixture(&format!("{stem}_q25.jpg"))).unwrap();
        let ours = decode(&file).unwrap().rgb;
        let theirs = zune_decode(&file);
        assert_eq!(ours.data().len(), theirs.len());
        // different IDCT and upsampling filters: compare in aggregate
        let mad: f64 = ours
            .data()
            .iter()
            .zip(&theirs)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum::<f64>()
            / theirs.len() as f64;
        assert!(mad < 4.0, "{stem}: mean abs diff {mad}");
    }
}

#[test]
fn encoded_segments_in_reference_order() {
    let img = RgbImage::load_png(&fixture("astro64.png")).unwrap();
    let f = encode_image(&img, &CodecProfile::default()).unwrap();
    let kinds: Vec<SegmentKind> = parse_segments(&f)
        .unwrap()
        .iter()
        .map(|s| s.kind)
        .filter(|k| !matches!(k, SegmentKind::EntropyData | SegmentKind::Rst(_)))
        .collect();
    use SegmentKind::*;
    assert_eq!(
        kinds,
        vec![Soi, App(0), Dqt, Dqt, Sof0, Dht, Dht, Dht, Dht, Dri, Sos, Eoi]
    );
}

#[test]
fn dimension_errors() {
    for (w, h) in [(15, 16), (16, 17), (0, 16), (100, 64)] {
        let img = RgbImage::filled(w, h, [9, 9, 9]);
        assert!(matches!(
            encode_image(&img, &CodecProfile::default()),
            Err(JpegError::Dimension { .. })
        ));
    }
}

#[test]
fn non_420_is_unsupported() {
    // patch the luma sampling factor of a valid file to 1x1 (4:4:4 layout)
    let mut f = std::fs::read(fixture("grad16_q25.jpg")).unwrap();
    let sof = f.windows(2).position(|w| w == [0xFF, 0xC0]).unwrap();
    f[sof + 11] = 0x11;
    assert!(matches!(canonicalize(&f), Err(JpegError::Unsupported(_))));
}

#[test]
fn truncation_after_k_markers_keeps_k_mcus() {
    let img = RgbImage::load_png(&fixture("coffee256.png")).unwrap();
    let f = encode_image(&img, &CodecProfile::default()).unwrap();
    let (s, t) = canonicalize(&f).unwrap();
    let full = decode(&f).unwrap();
    for k in [1usize, 17, 100, 255] {
        let r = restore_generated(&s.bytes[..s.mcu_offsets[k - 1] + 2], &t).unwrap();
        assert_eq!(r.status, SalvageStatus::Salvaged);
        assert_eq!(r.kept_mcus as usize, k);
        let d = decode(&r.bytes).unwrap();
        zune_decode(&r.bytes);
        for m in 0..k as u32 {
            assert_eq!(d.mcu_pixels(m), full.mcu_pixels(m));
        }
        assert!(d.mcu_pixels(k as u32).iter().all(|&v| v == 128));
    }
}

#[test]
fn garbage_in_middle_keeps_prefix() {
    let img = RgbImage::load_png(&fixture("astro64.png")).unwrap();
    let f = encode_image(&img, &CodecProfile::default()).unwrap();
    let (s, t) = canonicalize(&f).unwrap();
    let mut g = s.bytes.clone();
    // overwrite the 6th interval with random-ish bytes
    let a = s.mcu_offsets[4] + 2;
    let b = s.mcu_offsets[5];
    for (i, x) in g[a..b].iter_mut().enumerate() {
        *x = (i as u8).wrapping_mul(37) | 1;
    }
    let r = restore_generated(&g, &t).unwrap();
    assert_eq!(r.status, SalvageStatus::Salvaged);
    assert_eq!(r.kept_mcus, 5);
    decode(&r.bytes).unwrap();
}

fn arb_image() -> impl Strategy<Value = RgbImage> {
    (1u32..4, 1u32..4, any::<u64>()).prop_map(|(cw, ch, seed)| {
        let (w, h) = (cw * 16, ch * 16);
        let mut state = seed | 1;
        RgbImage::from_fn(w, h, move |x, y| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let n = (state & 0x3F) as u32;
            [
                ((x * 9 + n) & 0xFF) as u8,
                ((y * 5 + 2 * n) & 0xFF) as u8,
                (((x + y) * 3 + n) & 0xFF) as u8,
            ]
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn restore_inverts_canonicalize(img in arb_image()) {
        let f = encode_image(&img, &CodecProfile::default()).unwrap();
        let (s, t) = canonicalize(&f).unwrap();
        prop_assert_eq!(restore(&s, &t).unwrap(), f);
    }

    #[test]
    fn restart_markers_count_and_cycle(img in arb_image()) {
        let f = encode_image(&img, &CodecProfile::default()).unwrap();
        let (s, _) = canonicalize(&f).unwrap();
        prop_assert_eq!(s.mcu_offsets.len() as u32 + 1, s.mcu_count());
        for (i, &o) in s.mcu_offsets.iter().enumerate() {
            prop_assert_eq!(s.bytes[o + 1], 0xD0 + (i % 8) as u8);
        }
    }

    #[test]
    fn encoding_is_deterministic(img in arb_image()) {
        let p = CodecProfile::default();
        prop_assert_eq!(encode_image(&img, &p).unwrap(), encode_image(&img, &p).unwrap());
    }

    #[test]
    fn prefix_is_monotone_and_on_marker_boundary(img in arb_image(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let f = encode_image(&img, &CodecProfile::default()).unwrap();
        let (s, _) = canonicalize(&f).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (pl, ph) = (prefix_at_ratio(&s, lo), prefix_at_ratio(&s, hi));
        prop_assert!(pl <= ph);
        if pl > 0 && pl < s.bytes.len() {
            prop_assert_eq!(s.bytes[pl - 2], 0xFF);
            prop_assert!((0xD0..=0xD7).contains(&s.bytes[pl - 1]));
        }
    }

    #[test]
    fn salvage_never_panics_and_output_decodes(img in arb_image(), cut in 0.0f64..1.0, noise in prop::collection::vec(any::<u8>(), 0..40)) {
        let f = encode_image(&img, &CodecProfile::default()).unwrap();
        let (s, t) = canonicalize(&f).unwrap();
        let at = (s.bytes.len() as f64 * cut) as usize;
        let mut g = s.bytes[..at].to_vec();
        g.extend_from_slice(&noise);
        match restore_generated(&g, &t) {
            Ok(r) => {
                prop_assert!(r.kept_mcus >= 1);
                decode(&r.bytes).unwrap();
            }
            Err(e) => prop_assert!(matches!(e, JpegError::Unrecoverable(_))),
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
        let t = TableSet::for_profile(&CodecProfile::default()).unwrap();
        let _ = restore_generated(&bytes, &t);
        let _ = canonicalize(&bytes);
        let _ = decode(&bytes);
    }
}
