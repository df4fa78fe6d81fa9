//! Image files: 8-bit PNG and raw float32 planes.
//!
//! Raw plane layout: `width: u32, height: u32, channels: u32`, then one
//! little-endian `f32` plane per channel, row-major.

use std::io::Cursor;
use std::path::Path;

use ndarray::Array2;

use super::container::read_u32;
use crate::render::RenderedImage;
use crate::{Error, Result};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_png(img: &RenderedImage) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(img.width * img.height * 3);
    for row in img.color.rows() {
        data.extend(row.iter().map(|&v| quantize(v)));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        w.write_image_data(&data)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    Ok(out)
}

/// Decodes 8-bit gray, gray-alpha, RGB or RGBA PNG data; alpha is dropped.
pub fn decode_png(bytes: &[u8]) -> Result<RenderedImage> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::Format(format!("png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let ch = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::Format(format!("png: unsupported color type {other:?}"))),
    };
    let stride = info.line_size;
    let mut color = Array2::zeros((w * h, 3));
    for y in 0..h {
        for x in 0..w {
            let px = &buf[y * stride + x * ch..];
            let rgb = if ch < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
            for k in 0..3 {
                color[[y * w + x, k]] = rgb[k] as f64 / 255.0;
            }
        }
    }
    Ok(RenderedImage {
        width: w,
        height: h,
        color,
        alpha: vec![1.0; w * h],
    })
}

pub fn save_png(path: impl AsRef<Path>, img: &RenderedImage) -> Result<()> {
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}

pub fn load_png(path: impl AsRef<Path>) -> Result<RenderedImage> {
    decode_png(&std::fs::read(path)?)
}

pub fn encode_raw(img: &RenderedImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + img.color.len() * 4);
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    for k in 0..3 {
        for v in img.color.column(k) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_raw(mut bytes: &[u8]) -> Result<RenderedImage> {
    let w = read_u32(&mut bytes)? as usize;
    let h = read_u32(&mut bytes)? as usize;
    let ch = read_u32(&mut bytes)? as usize;
    if ch != 3 || bytes.len() != w * h * ch * 4 {
        return Err(Error::Format("raw image size mismatch".into()));
    }
    let mut color = Array2::zeros((w * h, 3));
    for (i, c) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        color[[i % (w * h), i / (w * h)]] = v;
    }
    Ok(RenderedImage {
        width: w,
        height: h,
        color,
        alpha: vec![1.0; w * h],
    })
}
