use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Image::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ImageSize(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    /// Rounds to 8 bits and back, as if saved and reloaded.
    pub fn quantized(&self) -> Image {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|&v| to_u8(v) as f64 / 255.0).collect() }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.data.iter().map(|&v| to_u8(v)).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Image> {
        let rgb = image::open(path)?.to_rgb8();
        Ok(Image {
            width: rgb.width() as usize,
            height: rgb.height() as usize,
            data: rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect(),
        })
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major single-channel map (depth, accumulated alpha, error).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        ScalarMap { width, height, data: vec![fill; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// `.npy` (version 1.0) little-endian float32 array of shape `(H, W)`.
    pub fn write_npy<W: Write>(&self, w: &mut W) -> Result<()> {
        let dict = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}), }}", self.height, self.width);
        let unpadded = 10 + dict.len() + 1;
        let pad = (64 - unpadded % 64) % 64;
        let header_len = (dict.len() + pad + 1) as u16;
        w.write_all(b"\x93NUMPY\x01\x00")?;
        w.write_all(&header_len.to_le_bytes())?;
        w.write_all(dict.as_bytes())?;
        w.write_all(&vec![b' '; pad])?;
        w.write_all(b"\n")?;
        for v in &self.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_npy(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_npy(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads what [`ScalarMap::write_npy`] writes.
    pub fn read_npy(bytes: &[u8]) -> Result<ScalarMap> {
        if bytes.len() < 10 || &bytes[..8] != b"\x93NUMPY\x01\x00" {
            return Err(Error::Format("not an npy v1.0 file".into()));
        }
        let hl = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let header = std::str::from_utf8(bytes.get(10..10 + hl).ok_or_else(|| Error::Format("truncated npy header".into()))?)
            .map_err(|_| Error::Format("npy header is not UTF-8".into()))?;
        if !header.contains("'<f4'") {
            return Err(Error::Format("npy dtype must be <f4".into()));
        }
        let shape = header
            .split("'shape': (")
            .nth(1)
            .and_then(|s| s.split(')').next())
            .ok_or_else(|| Error::Format("npy header lacks a shape".into()))?;
        let dims: Vec<usize> = shape
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Format(format!("bad npy dimension `{s}`"))))
            .collect::<Result<_>>()?;
        let [h, w] = dims[..] else {
            return Err(Error::Format("npy array must be 2-D".into()));
        };
        let body = &bytes[10 + hl..];
        if body.len() != h * w * 4 {
            return Err(Error::Format("npy payload size mismatch".into()));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        Ok(ScalarMap { width: w, height: h, data })
    }

    /// Grayscale visualization, finite values scaled to `[0, 1]` by the
    /// finite range; NaN maps to black.
    pub fn to_gray_image(&self) -> Image {
        let finite = self.data.iter().copied().filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut img = Image::new(self.width, self.height);
        for (i, v) in self.data.iter().enumerate() {
            let g = if v.is_finite() { 1.0 - (v - lo) / span } else { 0.0 };
            img.data[i * 3..i * 3 + 3].copy_from_slice(&[g; 3]);
        }
        img
    }
}
