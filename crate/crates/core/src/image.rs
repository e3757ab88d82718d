//! Interleaved 8-bit RGB images and their file formats (PNG, raw RGB with a
//! dimensions sidecar).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("pixel buffer has {got} bytes, expected {expected} for {width}x{height} RGB")]
    BufferSize {
        width: u32,
        height: u32,
        expected: usize,
        got: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: png: {reason}")]
    Png { path: PathBuf, reason: String },
    #[error("{path}: raw sidecar: {reason}")]
    Sidecar { path: PathBuf, reason: String },
    #[error("{path}: unsupported image format")]
    Format { path: PathBuf },
    #[error("crop {x},{y} {w}x{h} exceeds {width}x{height}")]
    Crop {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(ImageError::BufferSize {
                width,
                height,
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Self, ImageError> {
        if x.checked_add(w).is_none_or(|r| r > self.width)
            || y.checked_add(h).is_none_or(|b| b > self.height)
        {
            return Err(ImageError::Crop {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        Ok(Self::from_fn(w, h, |cx, cy| self.pixel(x + cx, y + cy)))
    }

    /// Box-filter downscale by an integer factor (trailing partial boxes dropped).
    pub fn downscale(&self, factor: u32) -> Self {
        let factor = factor.max(1);
        let (w, h) = (self.width / factor, self.height / factor);
        let area = factor * factor;
        Self::from_fn(w, h, |x, y| {
            let mut acc = [0u32; 3];
            for dy in 0..factor {
                for dx in 0..factor {
                    let p = self.pixel(x * factor + dx, y * factor + dy);
                    for c in 0..3 {
                        acc[c] += u32::from(p[c]);
                    }
                }
            }
            acc.map(|v| ((v + area / 2) / area) as u8)
        })
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.pixel(self.width - 1 - x, y)
        })
    }

    /// Centers the image on a canvas whose sides are multiples of `multiple`,
    /// replicating edge pixels into the margin.
    pub fn pad_to_multiple(&self, multiple: u32) -> Self {
        let w = self.width.max(1).div_ceil(multiple) * multiple;
        let h = self.height.max(1).div_ceil(multiple) * multiple;
        if w == self.width && h == self.height {
            return self.clone();
        }
        let ox = (w - self.width) / 2;
        let oy = (h - self.height) / 2;
        Self::from_fn(w, h, |x, y| {
            let sx = x.saturating_sub(ox).min(self.width - 1);
            let sy = y.saturating_sub(oy).min(self.height - 1);
            self.pixel(sx, sy)
        })
    }

    /// Tiles images of equal size into a grid `cols` wide.
    pub fn tile(images: &[RgbImage], cols: usize) -> Option<Self> {
        let first = images.first()?;
        let (tw, th) = (first.width, first.height);
        if images.iter().any(|i| i.width != tw || i.height != th) {
            return None;
        }
        let cols = cols.clamp(1, images.len());
        let rows = images.len().div_ceil(cols);
        let mut out = Self::filled(tw * cols as u32, th * rows as u32, [0, 0, 0]);
        for (k, img) in images.iter().enumerate() {
            let (ox, oy) = ((k % cols) as u32 * tw, (k / cols) as u32 * th);
            for y in 0..th {
                for x in 0..tw {
                    out.put_pixel(ox + x, oy + y, img.pixel(x, y));
                }
            }
        }
        Some(out)
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let png_err = |reason: String| ImageError::Png {
            path: path.to_path_buf(),
            reason,
        };
        let file = File::open(path).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| png_err(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| png_err("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| png_err(e.to_string()))?;
        buf.truncate(info.buffer_size());
        let n = info.width as usize * info.height as usize;
        let data = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => {
                buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect()
            }
            png::ColorType::Indexed => return Err(png_err("palette not expanded".into())),
        };
        debug_assert_eq!(data.len(), n * 3);
        Self::new(info.width, info.height, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let io = |source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        };
        let png_err = |e: png::EncodingError| ImageError::Png {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let file = File::create(path).map_err(io)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width, self.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&self.data).map_err(png_err)?;
        writer.finish().map_err(png_err)
    }

    /// Sidecar path holding `"<width> <height>"` for a raw RGB file.
    pub fn raw_sidecar(path: &Path) -> PathBuf {
        path.with_extension("dims")
    }

    pub fn load_raw(path: &Path) -> Result<Self, ImageError> {
        let sidecar = Self::raw_sidecar(path);
        let text = std::fs::read_to_string(&sidecar).map_err(|source| ImageError::Io {
            path: sidecar.clone(),
            source,
        })?;
        let dims: Vec<u32> = text
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e: std::num::ParseIntError| ImageError::Sidecar {
                path: sidecar.clone(),
                reason: e.to_string(),
            })?;
        let [width, height] = dims[..] else {
            return Err(ImageError::Sidecar {
                path: sidecar,
                reason: "expected \"<width> <height>\"".into(),
            });
        };
        let data = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::new(width, height, data)
    }

    pub fn save_raw(&self, path: &Path) -> Result<(), ImageError> {
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |source| ImageError::Io { path: p, source }
        };
        std::fs::write(path, &self.data).map_err(io(path))?;
        let sidecar = Self::raw_sidecar(path);
        std::fs::write(&sidecar, format!("{} {}\n", self.width, self.height))
            .map_err(io(&sidecar))
    }

    /// Loads `.png` or `.rgb` (raw with `.dims` sidecar).
    pub fn load(path: &Path) -> Result<Self, ImageError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("png") => Self::load_png(path),
            Some("rgb") | Some("raw") => Self::load_raw(path),
            _ => Err(ImageError::Format {
                path: path.to_path_buf(),
            }),
        }
    }

    /// True for file names this module can load.
    pub fn is_supported(path: &Path) -> bool {
        matches!(
            path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
            Some("png") | Some("rgb") | Some("raw")
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| [x as u8, y as u8, (x + y) as u8])
    }

    #[test]
    fn buffer_size_checked() {
        assert!(RgbImage::new(2, 2, vec![0; 11]).is_err());
        assert!(RgbImage::new(2, 2, vec![0; 12]).is_ok());
    }

    #[test]
    fn pad_centers_and_replicates() {
        let img = gradient(10, 20);
        let p = img.pad_to_multiple(16);
        assert_eq!((p.width(), p.height()), (16, 32));
        // offset (3, 6)
        assert_eq!(p.pixel(3, 6), img.pixel(0, 0));
        assert_eq!(p.pixel(0, 0), img.pixel(0, 0));
        assert_eq!(p.pixel(15, 31), img.pixel(9, 19));
        assert_eq!(p.pixel(5, 10), img.pixel(2, 4));
    }

    #[test]
    fn crop_bounds() {
        let img = gradient(8, 8);
        assert_eq!(img.crop(2, 3, 4, 4).unwrap().pixel(0, 0), img.pixel(2, 3));
        assert!(img.crop(5, 0, 4, 4).is_err());
    }

    #[test]
    fn downscale_averages() {
        let img = RgbImage::from_fn(4, 2, |x, _| [if x % 2 == 0 { 0 } else { 255 }, 10, 20]);
        let d = img.downscale(2);
        assert_eq!((d.width(), d.height()), (2, 1));
        assert_eq!(d.pixel(0, 0), [128, 10, 20]);
    }

    #[test]
    fn png_and_raw_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient(17, 9);
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(RgbImage::load(&p).unwrap(), img);
        let r = dir.path().join("a.rgb");
        img.save_raw(&r).unwrap();
        assert_eq!(RgbImage::load(&r).unwrap(), img);
        assert!(RgbImage::load(&dir.path().join("a.gif")).is_err());
    }

    #[test]
    fn tiling() {
        let a = RgbImage::filled(2, 2, [1, 1, 1]);
        let b = RgbImage::filled(2, 2, [2, 2, 2]);
        let t = RgbImage::tile(&[a.clone(), b, a], 2).unwrap();
        assert_eq!((t.width(), t.height()), (4, 4));
        assert_eq!(t.pixel(3, 0), [2, 2, 2]);
        assert_eq!(t.pixel(0, 3), [1, 1, 1]);
        assert_eq!(t.pixel(3, 3), [0, 0, 0]);
    }
}
