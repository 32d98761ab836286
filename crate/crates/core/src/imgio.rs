//! PNG ingestion and emission plus contact sheets for sweep results.
//!
//! Pixel values map linearly between `u8` and `[-1, 1]`: `v ↔ v / 127.5 - 1`.
//! Encoding clamps to `[-1, 1]` and rounds half away from zero.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::Mask;
use crate::tensor::{ImageTensor, Shape};

/// Mask pixels with luminance at or above this are scene, below are hole.
pub const MASK_THRESHOLD: u8 = 128;
/// Separator thickness between montage cells, in pixels.
pub const MONTAGE_GAP: usize = 2;
/// Separator value; encodes to 128.
pub const MONTAGE_FILL: f32 = 0.0;

pub fn decode_u8(v: u8) -> f32 {
    (v as f64 / 127.5 - 1.0) as f32
}

pub fn encode_u8(x: f32) -> u8 {
    let x = (x as f64).clamp(-1.0, 1.0);
    ((x + 1.0) * 127.5).round() as u8
}

/// Decoded 8-bit PNG: interleaved samples plus layout.
struct RawImage {
    channels: usize,
    height: usize,
    width: usize,
    samples: Vec<u8>,
}

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_raw(path: &Path) -> Result<RawImage> {
    let file = File::open(path).map_err(|e| image_err(path, e.to_string()))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| image_err(path, e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(image_err(path, format!("unsupported bit depth {depth:?}; need 8-bit")));
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::GrayscaleAlpha | png::ColorType::Rgba => {
            return Err(image_err(path, "images with an alpha channel are not supported"))
        }
        png::ColorType::Indexed => {
            return Err(image_err(path, "palette images are not supported"))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| image_err(path, e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let mut samples = Vec::with_capacity(width * height * channels);
    for row in buf.chunks(info.line_size).take(height) {
        samples.extend_from_slice(&row[..width * channels]);
    }
    Ok(RawImage {
        channels,
        height,
        width,
        samples,
    })
}

fn write_raw(path: &Path, channels: usize, height: usize, width: usize, samples: &[u8]) -> Result<()> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        n => return Err(image_err(path, format!("cannot write a {n}-channel PNG"))),
    };
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| image_err(path, e.to_string()))?;
    writer
        .write_image_data(samples)
        .map_err(|e| image_err(path, e.to_string()))?;
    writer.finish().map_err(|e| image_err(path, e.to_string()))?;
    Ok(())
}

/// Loads an 8-bit grayscale or RGB PNG as a `[-1, 1]` tensor.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let shape = Shape::new(raw.channels, raw.height, raw.width);
    let plane = shape.plane();
    let mut data = vec![0.0f32; shape.len()];
    for (i, px) in raw.samples.chunks_exact(raw.channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * plane + i] = decode_u8(v);
        }
    }
    ImageTensor::from_vec(shape, data)
}

pub fn save_png(image: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let shape = image.shape();
    let plane = shape.plane();
    let mut samples = Vec::with_capacity(shape.len());
    for i in 0..plane {
        for c in 0..shape.channels {
            samples.push(encode_u8(image.data()[c * plane + i]));
        }
    }
    write_raw(path.as_ref(), shape.channels, shape.height, shape.width, &samples)
}

/// Writes raw grayscale bytes, row-major.
pub fn save_gray(path: impl AsRef<Path>, height: usize, width: usize, values: &[u8]) -> Result<()> {
    assert_eq!(values.len(), height * width);
    write_raw(path.as_ref(), 1, height, width, values)
}

/// Integer Rec. 601 luma, rounded to nearest.
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Loads a mask PNG: luminance `>= 128` is scene, `< 128` is hole.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let scene = raw
        .samples
        .chunks_exact(raw.channels)
        .map(|px| {
            let luma = match px {
                [v] => *v,
                [r, g, b] => luminance(*r, *g, *b),
                _ => unreachable!("read_raw only yields 1 or 3 channels"),
            };
            luma >= MASK_THRESHOLD
        })
        .collect();
    Mask::new(raw.height, raw.width, scene)
}

/// Writes a mask as black hole on white scene.
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let values: Vec<u8> = mask
        .scene_pixels()
        .iter()
        .map(|&s| if s { 255 } else { 0 })
        .collect();
    save_gray(path, mask.height(), mask.width(), &values)
}

/// Grid position of every cell in a montage with `columns` columns.
pub fn montage_layout(count: usize, columns: usize) -> Vec<(usize, usize)> {
    (0..count).map(|i| (i / columns, i % columns)).collect()
}

/// Tiles equally shaped images row-major with mid-gray separators. Trailing
/// empty cells are filled with the separator value.
pub fn montage(images: &[ImageTensor], columns: usize) -> Result<ImageTensor> {
    if images.is_empty() {
        return Err(Error::invalid("montage needs at least one image"));
    }
    if columns == 0 {
        return Err(Error::invalid("montage needs at least one column"));
    }
    let cell = images[0].shape();
    for img in images {
        img.ensure_shape(cell)?;
    }
    let cols = columns.min(images.len());
    let rows = images.len().div_ceil(cols);
    let out_shape = Shape::new(
        cell.channels,
        rows * cell.height + (rows - 1) * MONTAGE_GAP,
        cols * cell.width + (cols - 1) * MONTAGE_GAP,
    );
    let mut out = ImageTensor::filled(out_shape, MONTAGE_FILL);
    for (img, (row, col)) in images.iter().zip(montage_layout(images.len(), cols)) {
        let y0 = row * (cell.height + MONTAGE_GAP);
        let x0 = col * (cell.width + MONTAGE_GAP);
        for c in 0..cell.channels {
            for y in 0..cell.height {
                for x in 0..cell.width {
                    out.set(c, y0 + y, x0 + x, img.get(c, y, x));
                }
            }
        }
    }
    Ok(out)
}

/// Sidecar that maps montage cells back to the parameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MontageIndex {
    pub cells: Vec<MontageCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MontageCell {
    pub row: usize,
    pub col: usize,
    pub params: serde_json::Value,
    pub output: String,
}
