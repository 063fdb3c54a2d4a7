//! Image reading and writing. Intensities are held in `[0, 1]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::grid::{GrayImage, Grid};
use crate::watershed::{BasinLabel, BasinLabelMap};

/// Reads any PNG or PNM image as grayscale. 16-bit images keep their full
/// precision; color images are converted to luma.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect(),
        other => other.to_luma8().into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
    };
    if w == 0 || h == 0 {
        return Err(Error::Config(format!("{} is empty", path.display())));
    }
    Ok(Grid::from_vec(w, h, data))
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit grayscale image; the format follows the extension
/// (`.png`, `.pgm`).
pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let raw: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw).expect("buffer size matches");
    buf.save(path)?;
    Ok(())
}

/// Binary 8-bit PGM (`P5`, maxval 255).
pub fn write_pgm8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Binary 16-bit PGM (`P5`, maxval 65535, big-endian samples).
pub fn write_pgm16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Reads a binary 16-bit PGM written by [`write_pgm16`].
pub fn read_pgm16(path: &Path) -> Result<Grid<u16>> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Grid::from_vec(w, h, img.into_luma16().into_raw()))
}

/// Label-map code: 0 unassigned, 65535 barrier/background, `i + 1` for
/// instance `i`.
pub fn basin_code(l: BasinLabel) -> u16 {
    match l {
        BasinLabel::Unassigned => 0,
        BasinLabel::Barrier => u16::MAX,
        BasinLabel::Instance(i) => (i + 1).min(u32::from(u16::MAX) - 1) as u16,
    }
}

pub fn write_label_map(path: &Path, labels: &BasinLabelMap) -> Result<()> {
    let codes: Vec<u16> = labels.data().iter().map(|&l| basin_code(l)).collect();
    write_pgm16(path, labels.width(), labels.height(), &codes)
}

fn label_color(i: u32) -> [u8; 3] {
    let mut x = i.wrapping_mul(0x9E37_79B9).wrapping_add(0x7F4A_7C15);
    x ^= x >> 15;
    x = x.wrapping_mul(0x2C1B_3C6D);
    x ^= x >> 12;
    [(x & 0xFF) as u8 | 0x40, ((x >> 8) & 0xFF) as u8 | 0x40, ((x >> 16) & 0xFF) as u8 | 0x40]
}

/// Color rendering of a label map: black unassigned, white barrier,
/// pseudo-random colors per instance.
pub fn save_label_png(path: &Path, labels: &BasinLabelMap) -> Result<()> {
    let mut raw = Vec::with_capacity(labels.len() * 3);
    for &l in labels.data() {
        raw.extend_from_slice(&match l {
            BasinLabel::Unassigned => [0, 0, 0],
            BasinLabel::Barrier => [255, 255, 255],
            BasinLabel::Instance(i) => label_color(i),
        });
    }
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(labels.width() as u32, labels.height() as u32, raw).expect("buffer size matches");
    buf.save(path)?;
    Ok(())
}
