//! PNG raster I/O and small CSV helpers.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use cellseg_core::plane::{LabeledMask, Plane};

use crate::error::CliError;

/// Fixed scale of 16-bit probability maps: 65535 is 1.0.
pub const MAP_SCALE: f64 = 65535.0;

/// A decoded single-channel raster with its bit depth.
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub bits: u8,
    pub values: Vec<u16>,
}

pub fn read_gray(path: &Path) -> Result<Gray, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let bad = |e: png::DecodingError| CliError::Data(format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| CliError::Data(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(CliError::Data(format!("{}: expected single-channel grayscale, found {:?}", path.display(), info.color_type)));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let (bits, values) = match info.bit_depth {
        png::BitDepth::Sixteen => (16, data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()),
        png::BitDepth::Eight => (8, data.iter().map(|&v| v as u16).collect()),
        other => return Err(CliError::Data(format!("{}: unsupported bit depth {other:?}", path.display()))),
    };
    Ok(Gray { width, height, bits, values })
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let bad = |e: png::EncodingError| CliError::Data(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(bad)?;
    writer.write_image_data(data).map_err(bad)?;
    writer.finish().map_err(bad)
}

pub fn write_gray16(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<(), CliError> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_png(path, width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

pub fn write_rgb8(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), CliError> {
    write_png(path, width, height, png::ColorType::Rgb, png::BitDepth::Eight, rgb)
}

/// Intensity image scaled to [0,1] by its bit depth.
pub fn read_image(path: &Path) -> Result<Plane<f64>, CliError> {
    let g = read_gray(path)?;
    let max = ((1u32 << g.bits) - 1) as f64;
    Ok(Plane::new(g.width, g.height, g.values.iter().map(|&v| v as f64 / max).collect())?)
}

pub fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * MAP_SCALE).round() as u16
}

pub fn dequantize(q: u16) -> f64 {
    q as f64 / MAP_SCALE
}

/// Writes values in [0,1] as 16-bit with 65535 = 1.0.
pub fn write_unit_plane(path: &Path, plane: &Plane<f64>) -> Result<(), CliError> {
    let q: Vec<u16> = plane.data().iter().map(|&v| quantize(v)).collect();
    write_gray16(path, plane.width(), plane.height(), &q)
}

/// Reads a 16-bit map back into [0,1].
pub fn read_unit_plane(path: &Path) -> Result<Plane<f64>, CliError> {
    let g = read_gray(path)?;
    if g.bits != 16 {
        return Err(CliError::Data(format!("{}: probability maps must be 16-bit", path.display())));
    }
    Ok(Plane::new(g.width, g.height, g.values.iter().map(|&q| dequantize(q)).collect())?)
}

/// Reads a label raster. Non-contiguous labels are renumbered.
pub fn read_labels(path: &Path) -> Result<LabeledMask, CliError> {
    let g = read_gray(path)?;
    let raw = Plane::new(g.width, g.height, g.values.iter().map(|&v| v as u32).collect())?;
    Ok(LabeledMask::new(raw.clone()).unwrap_or_else(|_| LabeledMask::relabel(&raw, 0)))
}

pub fn write_labels(path: &Path, labels: &LabeledMask) -> Result<(), CliError> {
    let p = labels.labels();
    if labels.count() > u16::MAX as usize {
        return Err(CliError::Data(format!("{}: more than 65535 instances", path.display())));
    }
    let v: Vec<u16> = p.data().iter().map(|&l| l as u16).collect();
    write_gray16(path, p.width(), p.height(), &v)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// File stem as an identifier.
pub fn stem(path: &Path) -> Result<String, CliError> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| CliError::Data(format!("{}: no usable file name", path.display())))
}
