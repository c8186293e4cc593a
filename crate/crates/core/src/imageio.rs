//! PGM and PNG helpers for masks, depth maps and overlays.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Writes a binary (P5) PGM with maxval 65535.
pub fn write_pgm16(path: impl AsRef<Path>, grid: &Grid<u16>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n65535\n", grid.width(), grid.height()).into_bytes();
    for v in grid.as_slice() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a binary PGM (8- or 16-bit) into `u16` values.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Grid<u16>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_pgm(bytes: &[u8]) -> Result<Grid<u16>> {
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if tokens[0] != "P5" {
        return Err(Error::Format(format!("unsupported PGM magic {}", tokens[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header value {s}")))
    };
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad PGM maxval {maxval}")));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < w * h * bpp {
        return Err(Error::Format("truncated PGM raster".into()));
    }
    let data = if bpp == 1 {
        raster[..w * h].iter().map(|&b| b as u16).collect()
    } else {
        raster[..w * h * 2]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Grid::from_vec(w, h, data)
}

/// Linearly maps `values` in `[lo, hi]` onto the 16-bit range; `None` maps to 0.
pub fn quantize_u16(grid: &Grid<Option<f64>>, lo: f64, hi: f64) -> Grid<u16> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    grid.map(|v| match v {
        Some(v) => (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16,
        None => 0,
    })
}

pub fn write_png_rgb(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != width * height * 3 {
        return Err(Error::ShapeMismatch("rgb buffer does not match image size".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| Error::Format(format!("png: {e}")))
}

/// Reads a single-channel 8- or 16-bit PNG (used for ingested masks).
pub fn read_png_gray(path: impl AsRef<Path>) -> Result<Grid<u16>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png {}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png {}: {e}", path.display())))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::Format(format!(
            "{}: mask png must be single-channel",
            path.display()
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = match info.bit_depth {
        png::BitDepth::Eight => buf[..w * h].iter().map(|&b| b as u16).collect(),
        png::BitDepth::Sixteen => buf[..w * h * 2]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
        other => {
            return Err(Error::Format(format!("unsupported png bit depth {other:?}")));
        }
    };
    Grid::from_vec(w, h, data)
}

/// Reads a mask from either PGM or PNG, chosen by file extension.
pub fn read_mask_image(path: impl AsRef<Path>) -> Result<Grid<u16>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_png_gray(path),
        _ => read_pgm(path),
    }
}

/// Blue→red heatmap colouring for values in `[0, 1]`; `None` is black.
pub fn heatmap_rgb(grid: &Grid<Option<f64>>) -> Vec<u8> {
    let mut out = Vec::with_capacity(grid.len() * 3);
    for v in grid.as_slice() {
        match v {
            Some(v) => {
                let t = v.clamp(0.0, 1.0);
                out.push((255.0 * t).round() as u8);
                out.push((255.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8);
                out.push((255.0 * (1.0 - t)).round() as u8);
            }
            None => out.extend_from_slice(&[0, 0, 0]),
        }
    }
    out
}
