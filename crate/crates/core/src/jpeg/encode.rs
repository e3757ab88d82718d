//! Baseline JPEG encoder.
//!
//! The pixel pipeline follows the IJG reference arithmetic exactly: fixed-point
//! RGB to YCbCr, 2x2 box downsampling with alternating rounding bias, the
//! integer "islow" forward DCT and rounded division quantization. Under the
//! standard Huffman tables this reproduces the byte stream the reference
//! library writes for the same settings.

use super::bits::BitWriter;
use super::huffman::{category, magnitude_bits, HuffmanEncoder};
use super::tables::{
    scale_quant_table, HuffmanSpec, CHROMA_QUANT_BASE, LUMA_QUANT_BASE, ZIGZAG,
};
use super::{CodecProfile, JpegError, Result, APP0, DHT, DQT, DRI, EOI, RST0, SOF0, SOI, SOS};
use crate::image::RgbImage;

/// Encodes `image` as a complete baseline JPEG file under `profile`.
///
/// Width and height must be positive multiples of 16; use
/// [`RgbImage::pad_to_multiple`] first to accept other sizes.
pub fn encode_image(image: &RgbImage, profile: &CodecProfile) -> Result<Vec<u8>> {
    profile.validate()?;
    let (w, h) = (image.width(), image.height());
    if w == 0 || h == 0 || w % 16 != 0 || h % 16 != 0 || w > 65535 || h > 65535 {
        return Err(JpegError::Dimension {
            width: w,
            height: h,
        });
    }
    if !profile.is_blessed() {
        log::warn!("encoding with non-default profile {profile:?}; untested path");
    }

    let luma_q = scale_quant_table(&LUMA_QUANT_BASE, profile.quality);
    let chroma_q = scale_quant_table(&CHROMA_QUANT_BASE, profile.quality);

    let mut out = Vec::with_capacity(1024);
    write_headers(&mut out, w, h, &luma_q, &chroma_q, profile.restart_interval_mcus);
    let entropy = encode_scan(image, &luma_q, &chroma_q, profile.restart_interval_mcus);
    out.extend_from_slice(&entropy);
    out.extend_from_slice(&[0xFF, EOI]);
    Ok(out)
}

pub(crate) fn segment(out: &mut Vec<u8>, marker: u8, payload: &[u8]) {
    out.extend_from_slice(&[0xFF, marker]);
    out.extend_from_slice(&((payload.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(payload);
}

pub(crate) fn app0_segment(out: &mut Vec<u8>) {
    segment(out, APP0, b"JFIF\0\x01\x01\x00\x00\x01\x00\x01\x00\x00");
}

pub(crate) fn dqt_segment(out: &mut Vec<u8>, id: u8, table: &[u16; 64]) {
    let mut p = Vec::with_capacity(65);
    p.push(id);
    p.extend(ZIGZAG.iter().map(|&n| table[n] as u8));
    segment(out, DQT, &p);
}

pub(crate) fn dht_segment(out: &mut Vec<u8>, class_id: u8, spec: &HuffmanSpec) {
    let mut p = Vec::with_capacity(17 + spec.symbols.len());
    p.push(class_id);
    p.extend_from_slice(&spec.counts);
    p.extend_from_slice(&spec.symbols);
    segment(out, DHT, &p);
}

pub(crate) fn dri_segment(out: &mut Vec<u8>, interval: u16) {
    segment(out, DRI, &interval.to_be_bytes());
}

pub(crate) fn sof0_segment(out: &mut Vec<u8>, w: u32, h: u32) {
    let mut p = vec![8];
    p.extend_from_slice(&(h as u16).to_be_bytes());
    p.extend_from_slice(&(w as u16).to_be_bytes());
    p.extend_from_slice(&[3, 1, 0x22, 0, 2, 0x11, 1, 3, 0x11, 1]);
    segment(out, SOF0, &p);
}

pub(crate) fn sos_segment(out: &mut Vec<u8>) {
    segment(out, SOS, &[3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0]);
}

fn write_headers(
    out: &mut Vec<u8>,
    w: u32,
    h: u32,
    luma_q: &[u16; 64],
    chroma_q: &[u16; 64],
    restart_interval: u16,
) {
    out.extend_from_slice(&[0xFF, SOI]);
    app0_segment(out);
    dqt_segment(out, 0, luma_q);
    dqt_segment(out, 1, chroma_q);
    sof0_segment(out, w, h);
    dht_segment(out, 0x00, &HuffmanSpec::luma_dc());
    dht_segment(out, 0x10, &HuffmanSpec::luma_ac());
    dht_segment(out, 0x01, &HuffmanSpec::chroma_dc());
    dht_segment(out, 0x11, &HuffmanSpec::chroma_ac());
    dri_segment(out, restart_interval);
    sos_segment(out);
}

// Fixed-point color conversion constants (16 fractional bits).
const SCALE_BITS: u32 = 16;
const ONE_HALF: i32 = 1 << (SCALE_BITS - 1);
const CBCR_OFFSET: i32 = 128 << SCALE_BITS;

const fn fix(x: f64) -> i32 {
    (x * (1 << SCALE_BITS) as f64 + 0.5) as i32
}

#[inline]
fn rgb_to_ycc(r: i32, g: i32, b: i32) -> (u8, u8, u8) {
    let y = (fix(0.29900) * r + fix(0.58700) * g + fix(0.11400) * b + ONE_HALF) >> SCALE_BITS;
    let cb = (-fix(0.16874) * r - fix(0.33126) * g + fix(0.5) * b + CBCR_OFFSET + ONE_HALF - 1)
        >> SCALE_BITS;
    let cr = (fix(0.5) * r - fix(0.41869) * g - fix(0.08131) * b + CBCR_OFFSET + ONE_HALF - 1)
        >> SCALE_BITS;
    (y as u8, cb as u8, cr as u8)
}

/// Full-resolution Y plane and 2x2-downsampled chroma planes.
struct Planes {
    y: Vec<u8>,
    cb: Vec<u8>,
    cr: Vec<u8>,
    width: usize,
}

fn to_planes(image: &RgbImage) -> Planes {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let n = w * h;
    let (mut y, mut cb, mut cr) = (vec![0u8; n], vec![0u8; n], vec![0u8; n]);
    for (i, px) in image.data().chunks_exact(3).enumerate() {
        let (a, b, c) = rgb_to_ycc(i32::from(px[0]), i32::from(px[1]), i32::from(px[2]));
        y[i] = a;
        cb[i] = b;
        cr[i] = c;
    }
    let downsample = |full: &[u8]| {
        let (cw, ch) = (w / 2, h / 2);
        let mut out = vec![0u8; cw * ch];
        for oy in 0..ch {
            let r0 = &full[2 * oy * w..];
            let r1 = &full[(2 * oy + 1) * w..];
            let mut bias = 1u32;
            for ox in 0..cw {
                let s = u32::from(r0[2 * ox])
                    + u32::from(r0[2 * ox + 1])
                    + u32::from(r1[2 * ox])
                    + u32::from(r1[2 * ox + 1]);
                out[oy * cw + ox] = ((s + bias) >> 2) as u8;
                bias ^= 3;
            }
        }
        out
    };
    Planes {
        cb: downsample(&cb),
        cr: downsample(&cr),
        y,
        width: w,
    }
}

const CONST_BITS: i32 = 13;
const PASS1_BITS: i32 = 2;
const FIX_0_298631336: i32 = 2446;
const FIX_0_390180644: i32 = 3196;
const FIX_0_541196100: i32 = 4433;
const FIX_0_765366865: i32 = 6270;
const FIX_0_899976223: i32 = 7373;
const FIX_1_175875602: i32 = 9633;
const FIX_1_501321110: i32 = 12299;
const FIX_1_847759065: i32 = 15137;
const FIX_1_961570560: i32 = 16069;
const FIX_2_053119869: i32 = 16819;
const FIX_2_562915447: i32 = 20995;
const FIX_3_072711026: i32 = 25172;

#[inline]
fn descale(x: i32, n: i32) -> i32 {
    (x + (1 << (n - 1))) >> n
}

/// Integer forward DCT; output is scaled up by 8 relative to the orthonormal
/// transform.
fn fdct_islow(data: &mut [i32; 64]) {
    for pass in 0..2 {
        for i in 0..8 {
            // pass 0 walks rows, pass 1 walks columns
            let idx = |k: usize| if pass == 0 { i * 8 + k } else { k * 8 + i };
            let d = |k: usize| data[idx(k)];
            let tmp0 = d(0) + d(7);
            let tmp7 = d(0) - d(7);
            let tmp1 = d(1) + d(6);
            let tmp6 = d(1) - d(6);
            let tmp2 = d(2) + d(5);
            let tmp5 = d(2) - d(5);
            let tmp3 = d(3) + d(4);
            let tmp4 = d(3) - d(4);

            let tmp10 = tmp0 + tmp3;
            let tmp13 = tmp0 - tmp3;
            let tmp11 = tmp1 + tmp2;
            let tmp12 = tmp1 - tmp2;

            let (out0, out4, shift) = if pass == 0 {
                (
                    (tmp10 + tmp11) << PASS1_BITS,
                    (tmp10 - tmp11) << PASS1_BITS,
                    CONST_BITS - PASS1_BITS,
                )
            } else {
                (
                    descale(tmp10 + tmp11, PASS1_BITS),
                    descale(tmp10 - tmp11, PASS1_BITS),
                    CONST_BITS + PASS1_BITS,
                )
            };

            let z1 = (tmp12 + tmp13) * FIX_0_541196100;
            let out2 = descale(z1 + tmp13 * FIX_0_765366865, shift);
            let out6 = descale(z1 + tmp12 * -FIX_1_847759065, shift);

            let z1 = tmp4 + tmp7;
            let z2 = tmp5 + tmp6;
            let z3 = tmp4 + tmp6;
            let z4 = tmp5 + tmp7;
            let z5 = (z3 + z4) * FIX_1_175875602;
            let tmp4 = tmp4 * FIX_0_298631336;
            let tmp5 = tmp5 * FIX_2_053119869;
            let tmp6 = tmp6 * FIX_3_072711026;
            let tmp7 = tmp7 * FIX_1_501321110;
            let z1 = z1 * -FIX_0_899976223;
            let z2 = z2 * -FIX_2_562915447;
            let z3 = z3 * -FIX_1_961570560 + z5;
            let z4 = z4 * -FIX_0_390180644 + z5;

            let out7 = descale(tmp4 + z1 + z3, shift);
            let out5 = descale(tmp5 + z2 + z4, shift);
            let out3 = descale(tmp6 + z2 + z3, shift);
            let out1 = descale(tmp7 + z1 + z4, shift);

            for (k, v) in [out0, out1, out2, out3, out4, out5, out6, out7]
                .into_iter()
                .enumerate()
            {
                data[idx(k)] = v;
            }
        }
    }
}

/// Forward-transforms and quantizes one block; output in natural order.
fn quantize_block(samples: &[i32; 64], qtable: &[u16; 64]) -> [i32; 64] {
    let mut ws = *samples;
    fdct_islow(&mut ws);
    let mut out = [0i32; 64];
    for i in 0..64 {
        let q = i32::from(qtable[i]) << 3;
        let t = ws[i];
        out[i] = if t < 0 {
            -((-t + (q >> 1)) / q)
        } else {
            (t + (q >> 1)) / q
        };
    }
    out
}

struct Tables {
    dc: [HuffmanEncoder; 2],
    ac: [HuffmanEncoder; 2],
}

impl Tables {
    fn standard() -> Self {
        Self {
            dc: [
                HuffmanEncoder::new(&HuffmanSpec::luma_dc()),
                HuffmanEncoder::new(&HuffmanSpec::chroma_dc()),
            ],
            ac: [
                HuffmanEncoder::new(&HuffmanSpec::luma_ac()),
                HuffmanEncoder::new(&HuffmanSpec::chroma_ac()),
            ],
        }
    }
}

/// Huffman-codes one quantized block (natural order) given the DC predictor.
pub(crate) fn encode_block(
    w: &mut BitWriter,
    coefs: &[i32; 64],
    pred: &mut i32,
    dc: &HuffmanEncoder,
    ac: &HuffmanEncoder,
) {
    let diff = coefs[0] - *pred;
    *pred = coefs[0];
    let cat = category(diff);
    dc.emit(w, cat as u8);
    w.put(magnitude_bits(diff, cat), cat);

    let mut run = 0u32;
    for &zz in &ZIGZAG[1..] {
        let v = coefs[zz];
        if v == 0 {
            run += 1;
            continue;
        }
        while run > 15 {
            ac.emit(w, 0xF0);
            run -= 16;
        }
        let cat = category(v);
        ac.emit(w, ((run << 4) | cat) as u8);
        w.put(magnitude_bits(v, cat), cat);
        run = 0;
    }
    if run > 0 {
        ac.emit(w, 0x00);
    }
}

fn load_block(plane: &[u8], stride: usize, x0: usize, y0: usize) -> [i32; 64] {
    let mut b = [0i32; 64];
    for r in 0..8 {
        let row = &plane[(y0 + r) * stride + x0..];
        for c in 0..8 {
            b[r * 8 + c] = i32::from(row[c]) - 128;
        }
    }
    b
}

fn encode_scan(
    image: &RgbImage,
    luma_q: &[u16; 64],
    chroma_q: &[u16; 64],
    restart_interval: u16,
) -> Vec<u8> {
    let planes = to_planes(image);
    let tables = Tables::standard();
    let (mcu_cols, mcu_rows) = super::mcu_grid(image.width(), image.height());
    let cw = planes.width / 2;
    let mut w = BitWriter::new();
    let mut preds = [0i32; 3];
    let mut restart_index = 0u8;
    let mut mcu = 0u32;
    for my in 0..mcu_rows as usize {
        for mx in 0..mcu_cols as usize {
            if mcu > 0 && mcu % u32::from(restart_interval) == 0 {
                w.flush();
                w.marker(RST0 + restart_index);
                restart_index = (restart_index + 1) & 7;
                preds = [0; 3];
            }
            for (by, bx) in [(0, 0), (0, 8), (8, 0), (8, 8)] {
                let s = load_block(&planes.y, planes.width, mx * 16 + bx, my * 16 + by);
                let q = quantize_block(&s, luma_q);
                encode_block(&mut w, &q, &mut preds[0], &tables.dc[0], &tables.ac[0]);
            }
            for (ci, plane) in [(1, &planes.cb), (2, &planes.cr)] {
                let s = load_block(plane, cw, mx * 8, my * 8);
                let q = quantize_block(&s, chroma_q);
                encode_block(&mut w, &q, &mut preds[ci], &tables.dc[1], &tables.ac[1]);
            }
            mcu += 1;
        }
    }
    w.flush();
    w.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_16x16_matches_reference_bytes() {
        // Entropy data of a black 16x16 frame: luma DC -1024/(32*8) = -32
        // (category 6) followed by three zero diffs and neutral chroma.
        let img = RgbImage::filled(16, 16, [0, 0, 0]);
        let f = encode_image(&img, &CodecProfile::default()).unwrap();
        assert_eq!(&f[..2], &[0xFF, 0xD8]);
        assert_eq!(&f[f.len() - 7..], &[0xE7, 0xE8, 0xA2, 0x8A, 0x00, 0xFF, 0xD9]);
        assert_eq!(f.len(), 636);
    }

    #[test]
    fn rejects_unaligned_dimensions() {
        let img = RgbImage::filled(24, 16, [1, 2, 3]);
        assert_eq!(
            encode_image(&img, &CodecProfile::default()),
            Err(JpegError::Dimension {
                width: 24,
                height: 16
            })
        );
    }

    #[test]
    fn ycc_of_primaries() {
        assert_eq!(rgb_to_ycc(0, 0, 0), (0, 128, 128));
        assert_eq!(rgb_to_ycc(255, 255, 255), (255, 128, 128));
        assert_eq!(rgb_to_ycc(255, 0, 0), (76, 85, 255));
    }

    #[test]
    fn fdct_of_flat_block_is_dc_only() {
        let mut b = [10i32; 64];
        fdct_islow(&mut b);
        assert_eq!(b[0], 10 * 64);
        assert!(b[1..].iter().all(|&v| v == 0));
    }

    #[test]
    fn restart_markers_cycle() {
        let img = RgbImage::from_fn(160, 16, |x, _| [(x * 3) as u8, 0, 0]);
        let f = encode_image(&img, &CodecProfile::default()).unwrap();
        let markers: Vec<u8> = f
            .windows(2)
            .filter(|w| w[0] == 0xFF && (0xD0..=0xD7).contains(&w[1]))
            .map(|w| w[1] - 0xD0)
            .collect();
        assert_eq!(markers, vec![0, 1, 2, 3, 4, 5, 6, 7, 0]);
    }
}
