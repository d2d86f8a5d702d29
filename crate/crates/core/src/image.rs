//! Grayscale images: in-memory representation and PGM / PNG files.
//!
//! Pixel values are stored as `f64` in `[0, 1]` (noisy images may leave that
//! range). Files are quantised to 8 bits on save after clipping.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape(format!(
                "{} pixels do not fill a {height}×{width} image",
                pixels.len()
            )));
        }
        Ok(GrayImage { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        GrayImage {
            height,
            width,
            pixels: vec![v; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let pixels = (0..height * width).map(|i| f(i / width, i % width)).collect();
        GrayImage { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// The `[1, H, W, 1]` map fed to the network.
    pub fn to_tensor<T: crate::Real>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, self.height, self.width, 1], |i| T::from_f64_lossy(self.pixels[i]))
    }

    /// Inverse of [`GrayImage::to_tensor`] for one batch item of a
    /// single-channel map.
    pub fn from_tensor<T: crate::Real>(t: &Tensor<T>, item: usize) -> Result<Self> {
        let d = t.map_dims()?;
        if d.channels != 1 || item >= d.batch {
            return Err(Error::shape(format!(
                "cannot take image {item} from a {:?} map",
                t.shape()
            )));
        }
        let n = d.pixels();
        let pixels = t.data()[item * n..(item + 1) * n].iter().map(|v| v.as_f64()).collect();
        GrayImage::new(d.height, d.width, pixels)
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::invalid(format!(
                "crop {h}×{w} at ({y0}, {x0}) exceeds {}×{}",
                self.height, self.width
            )));
        }
        Ok(GrayImage::from_fn(h, w, |y, x| self.get(y0 + y, x0 + x)))
    }

    /// Clip to `[0, 1]` and quantise to 8 bits.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        GrayImage::new(height, width, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "pgm",
        msg: msg.into(),
    }
}

/// Parse a binary (P5) PGM with maxval up to 65535.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(format_err("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(format_err("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text
            .parse()
            .map_err(|_| format_err(format!("bad header field at byte {start}")))?;
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err("header not terminated by whitespace")),
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width * height;
    let raster = &bytes[pos..];
    let scale = maxval as f64;
    let pixels: Vec<f64> = if maxval < 256 {
        if raster.len() < n {
            return Err(format_err("raster shorter than width × height"));
        }
        raster[..n].iter().map(|&b| b as f64 / scale).collect()
    } else {
        if raster.len() < 2 * n {
            return Err(format_err("raster shorter than width × height"));
        }
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    GrayImage::new(height, width, pixels)
}

/// Encode as an 8-bit P5 PGM.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_u8());
    out
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let err = |msg: String| Error::Format { kind: "png", msg };
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| err("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| err(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => return Err(err(format!("{other:?} images are not grayscale"))),
    };
    let pixels: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2 * channels)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        _ => buf[..info.buffer_size()]
            .chunks_exact(channels)
            .map(|c| c[0] as f64 / 255.0)
            .collect(),
    };
    GrayImage::new(h, w, pixels)
}

#[cfg(feature = "png")]
fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let err = |e: png::EncodingError| Error::Format {
        kind: "png",
        msg: e.to_string(),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(err)?;
        writer.write_image_data(&img.to_u8()).map_err(err)?;
    }
    Ok(out)
}

fn is_png_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Load a PGM (or, with the `png` feature, a grayscale PNG) file.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        #[cfg(feature = "png")]
        return decode_png(&bytes);
        #[cfg(not(feature = "png"))]
        return Err(Error::Format {
            kind: "png",
            msg: "built without PNG support".into(),
        });
    }
    decode_pgm(&bytes)
}

/// Save as 8-bit PGM, or PNG when the path ends in `.png`.
pub fn save_image(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_png_path(path) {
        #[cfg(feature = "png")]
        {
            encode_png(img)?
        }
        #[cfg(not(feature = "png"))]
        return Err(Error::Format {
            kind: "png",
            msg: "built without PNG support".into(),
        });
    } else {
        encode_pgm(img)
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
