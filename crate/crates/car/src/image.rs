//! Normal maps as 16-bit RGBA PNG: `c = round((n + 1) / 2 · 65535)` per
//! channel and alpha 65535 on the mask, 0 elsewhere.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use car_core::encoder::NormalImage;
use car_core::geometry::Facing;
use car_core::Vec3;

use crate::error::{CarError, IoContext, Result};

pub fn encode_channel(n: f64) -> u16 {
    ((n.clamp(-1.0, 1.0) + 1.0) * 0.5 * 65535.0).round() as u16
}

pub fn decode_channel(c: u16) -> f64 {
    c as f64 / 65535.0 * 2.0 - 1.0
}

/// Big-endian RGBA16 samples, row-major.
pub fn to_rgba16(img: &NormalImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.height * img.width * 8);
    for (n, m) in img.normals.iter().zip(&img.mask) {
        let px = if *m {
            [encode_channel(n.x), encode_channel(n.y), encode_channel(n.z), u16::MAX]
        } else {
            [encode_channel(0.0), encode_channel(0.0), encode_channel(0.0), 0]
        };
        for c in px {
            out.extend_from_slice(&c.to_be_bytes());
        }
    }
    out
}

pub fn from_rgba16(data: &[u8], height: usize, width: usize, side: Facing) -> NormalImage {
    let mut img = NormalImage::empty(height, width, side);
    for (i, px) in data.chunks_exact(8).enumerate().take(height * width) {
        let c = |k: usize| u16::from_be_bytes([px[2 * k], px[2 * k + 1]]);
        if c(3) != 0 {
            img.mask[i] = true;
            img.normals[i] = Vec3::new(decode_channel(c(0)), decode_channel(c(1)), decode_channel(c(2)));
        }
    }
    img
}

pub fn write_normal_png(path: &Path, img: &NormalImage) -> Result<()> {
    let file = File::create(path).at(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgba);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut w = enc
        .write_header()
        .map_err(|e| CarError::format(path, e.to_string()))?;
    w.write_image_data(&to_rgba16(img))
        .map_err(|e| CarError::format(path, e.to_string()))?;
    w.finish().map_err(|e| CarError::format(path, e.to_string()))
}

pub fn read_normal_png(path: &Path, side: Facing) -> Result<NormalImage> {
    let file = File::open(path).at(path)?;
    let dec = png::Decoder::new(BufReader::new(file));
    let mut reader = dec.read_info().map_err(|e| CarError::format(path, e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Sixteen {
        return Err(CarError::format(path, "expected a 16-bit RGBA normal map"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| CarError::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    reader
        .next_frame(&mut buf)
        .map_err(|e| CarError::format(path, e.to_string()))?;
    let img = from_rgba16(&buf, h, w, side);
    img.validate()?;
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_extremes() {
        assert_eq!(encode_channel(-1.0), 0);
        assert_eq!(encode_channel(1.0), 65535);
        assert_eq!(decode_channel(0), -1.0);
        assert_eq!(decode_channel(65535), 1.0);
        for c in [0u16, 1, 12345, 32767, 32768, 65534, 65535] {
            assert_eq!(encode_channel(decode_channel(c)), c);
        }
    }

    #[test]
    fn png_roundtrip() {
        let mut img = NormalImage::empty(3, 4, Facing::Back);
        img.set(1, 2, Some(Vec3::new(0.6, 0.0, -0.8)));
        img.set(3, 0, Some(Vec3::Z));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.png");
        write_normal_png(&p, &img).unwrap();
        let back = read_normal_png(&p, Facing::Back).unwrap();
        assert_eq!(back.mask, img.mask);
        for (a, b) in back.normals.iter().zip(&img.normals) {
            // half a quantisation step per channel
            assert!((*a - *b).norm() <= 3f64.sqrt() / 65535.0);
        }
        assert!((back.get(1, 2).unwrap().norm() - 1.0).abs() < 1e-3);
    }
}
