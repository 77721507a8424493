//! Binary PGM rasters with a JSON spacing sidecar.
//!
//! Images are 16-bit big-endian P5 storing `HU − hu_offset` (offset −1024),
//! rounded to the nearest integer. Masks are 8-bit P5 with 0/255.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ImageGrid, MaskGrid};

pub const HU_OFFSET: f64 = -1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub spacing_mm: f64,
    pub hu_offset: f64,
}

/// `slice.pgm` → `slice.json`.
pub fn sidecar_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("json")
}

fn header(width: usize, height: usize, maxval: u32) -> Vec<u8> {
    format!("P5\n{width} {height}\n{maxval}\n").into_bytes()
}

pub fn encode_image(img: &ImageGrid) -> Vec<u8> {
    let mut out = header(img.width(), img.height(), 65535);
    out.reserve(img.values().len() * 2);
    for &v in img.values() {
        let raw = (v - HU_OFFSET).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&raw.to_be_bytes());
    }
    out
}

pub fn encode_mask(mask: &MaskGrid) -> Vec<u8> {
    let mut out = header(mask.width(), mask.height(), 255);
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

struct Pgm<'a> {
    width: usize,
    height: usize,
    maxval: u32,
    data: &'a [u8],
}

fn parse(bytes: &[u8]) -> Result<Pgm<'_>> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (missing P5 magic)".into()));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad PGM header number".into()))?;
    }
    // exactly one whitespace byte before the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("missing separator after PGM header".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad PGM geometry {width}x{height} max {maxval}")));
    }
    let bpp = if maxval > 255 { 2 } else { 1 };
    let need = (width * height) as usize * bpp;
    let data = &bytes[pos..];
    if data.len() != need {
        return Err(Error::Format(format!("PGM raster has {} bytes, expected {need}", data.len())));
    }
    Ok(Pgm { width: width as usize, height: height as usize, maxval: maxval as u32, data })
}

impl Pgm<'_> {
    fn samples(&self) -> Vec<u32> {
        if self.maxval > 255 {
            self.data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32).collect()
        } else {
            self.data.iter().map(|&b| b as u32).collect()
        }
    }
}

pub fn decode_image(bytes: &[u8], sidecar: &Sidecar) -> Result<ImageGrid> {
    let pgm = parse(bytes)?;
    let values = pgm.samples().into_iter().map(|s| s as f64 + sidecar.hu_offset).collect();
    ImageGrid::new(pgm.width, pgm.height, sidecar.spacing_mm, values)
}

pub fn decode_mask(bytes: &[u8]) -> Result<MaskGrid> {
    let pgm = parse(bytes)?;
    MaskGrid::new(pgm.width, pgm.height, pgm.samples().into_iter().map(|s| s > 0).collect())
}

/// Writes the image and its sidecar.
pub fn write_image(path: &Path, img: &ImageGrid) -> Result<()> {
    write_atomic(path, &encode_image(img))?;
    let sidecar = Sidecar { spacing_mm: img.spacing(), hu_offset: HU_OFFSET };
    write_atomic(&sidecar_path(path), &serde_json::to_vec_pretty(&sidecar)?)
}

pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    decode_image(&fs::read(path)?, &sidecar)
}

pub fn write_mask(path: &Path, mask: &MaskGrid) -> Result<()> {
    write_atomic(path, &encode_mask(mask))
}

pub fn read_mask(path: &Path) -> Result<MaskGrid> {
    decode_mask(&fs::read(path)?)
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".into(),
    });
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
