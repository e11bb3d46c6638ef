//! Raster and tensor file formats plus small JSON helpers.
//!
//! Masks are single-channel PNGs whose pixel value is the class index (8-bit
//! grayscale, 16-bit grayscale or palette-indexed). Probability maps use the
//! SAPM container: a 20-byte little-endian header followed by the row-major
//! `(height, width, classes)` float32 payload.

use std::fs;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use segaudit_core::{DepthMap, ProbMap, SegMask};

use crate::error::{Error, Result};

pub const SAPM_MAGIC: &[u8; 4] = b"SAPM";
pub const SAPM_VERSION: u16 = 1;
pub const SAPM_DTYPE_F32: u16 = 0;
const SAPM_HEADER_LEN: usize = 20;

/// Writes `bytes`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn png_encoder<W: Write>(w: W, width: usize, height: usize) -> png::Encoder<'static, W> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    // fixed settings keep output byte-identical across runs
    enc.set_compression(png::Compression::Balanced);
    enc.set_filter(png::Filter::Up);
    enc
}

fn encode_png(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = png_encoder(&mut out, width, height);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().expect("in-memory PNG header");
    writer.write_image_data(data).expect("buffer sized to the image");
    writer.finish().expect("in-memory PNG trailer");
    out
}

/// 8-bit grayscale when the class count fits, 16-bit otherwise.
pub fn encode_mask(mask: &SegMask) -> Vec<u8> {
    let (w, h) = mask.dims();
    if mask.classes() <= u8::MAX as u16 {
        let data: Vec<u8> = mask.data().iter().map(|&v| v as u8).collect();
        encode_png(w, h, png::ColorType::Grayscale, png::BitDepth::Eight, &data)
    } else {
        let data: Vec<u8> = mask.data().iter().flat_map(|v| v.to_be_bytes()).collect();
        encode_png(w, h, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
    }
}

struct RawPng {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    line: usize,
    data: Vec<u8>,
}

fn decode_png(bytes: &[u8], transform: png::Transformations) -> std::result::Result<RawPng, String> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(transform);
    let mut reader = dec.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("image too large")?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(|e| e.to_string())?;
    data.truncate(info.buffer_size());
    Ok(RawPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        line: info.line_size,
        data,
    })
}

/// Sample values of a single-channel image, unpacking sub-byte depths.
fn samples(raw: &RawPng) -> Vec<u16> {
    let bits = raw.depth as usize;
    let mut out = Vec::with_capacity(raw.width * raw.height);
    for row in raw.data.chunks(raw.line).take(raw.height) {
        match bits {
            16 => out.extend(
                row.chunks_exact(2)
                    .take(raw.width)
                    .map(|b| u16::from_be_bytes([b[0], b[1]])),
            ),
            8 => out.extend(row.iter().take(raw.width).map(|&b| b as u16)),
            _ => {
                let per_byte = 8 / bits;
                let mask = (1u16 << bits) - 1;
                out.extend((0..raw.width).map(|i| {
                    let byte = row[i / per_byte] as u16;
                    let shift = 8 - bits * (i % per_byte + 1);
                    (byte >> shift) & mask
                }));
            }
        }
    }
    out
}

pub fn decode_mask(bytes: &[u8], classes: u16, path: &Path) -> Result<SegMask> {
    let raw = decode_png(bytes, png::Transformations::IDENTITY).map_err(|m| Error::format(path, m))?;
    match raw.color {
        png::ColorType::Grayscale | png::ColorType::Indexed => {}
        other => {
            return Err(Error::format(
                path,
                format!("mask must be single-channel (grayscale or indexed), found {other:?}"),
            ))
        }
    }
    let data = samples(&raw);
    if let Some(v) = data.iter().find(|&&v| v > classes) {
        return Err(Error::format(
            path,
            format!("class index {v} exceeds class count {classes}"),
        ));
    }
    Ok(SegMask::new(raw.width, raw.height, classes, data)?)
}

pub fn read_mask(path: &Path, classes: u16) -> Result<SegMask> {
    decode_mask(&read_file(path)?, classes, path)
}

pub fn write_mask(path: &Path, mask: &SegMask) -> Result<()> {
    write_file(path, &encode_mask(mask))
}

/// Depth as raw grayscale sample values (8 or 16 bit); only their order matters.
pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let raw = decode_png(&read_file(path)?, png::Transformations::IDENTITY).map_err(|m| Error::format(path, m))?;
    if raw.color != png::ColorType::Grayscale {
        return Err(Error::format(path, "depth must be a grayscale PNG"));
    }
    let data = samples(&raw).into_iter().map(f32::from).collect();
    Ok(DepthMap::new(raw.width, raw.height, data)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, px: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    pub fn encode_png(&self) -> Vec<u8> {
        encode_png(
            self.width,
            self.height,
            png::ColorType::Rgb,
            png::BitDepth::Eight,
            &self.data,
        )
    }
}

/// Any 8/16-bit PNG converted to RGB8.
pub fn decode_rgb(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let raw = decode_png(bytes, png::Transformations::EXPAND | png::Transformations::STRIP_16)
        .map_err(|m| Error::format(path, m))?;
    let channels = match raw.color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::format(path, "palette was not expanded")),
    };
    let mut img = RgbImage::new(raw.width, raw.height);
    for (r, row) in raw.data.chunks(raw.line).take(raw.height).enumerate() {
        for c in 0..raw.width {
            let px = &row[c * channels..(c + 1) * channels];
            let rgb = if channels < 3 {
                [px[0]; 3]
            } else {
                [px[0], px[1], px[2]]
            };
            img.set(r, c, rgb);
        }
    }
    Ok(img)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    decode_rgb(&read_file(path)?, path)
}

pub fn write_probmap<W: Write>(mut w: W, probs: &ProbMap) -> std::io::Result<()> {
    let mut header = Vec::with_capacity(SAPM_HEADER_LEN);
    header.extend_from_slice(SAPM_MAGIC);
    header.extend_from_slice(&SAPM_VERSION.to_le_bytes());
    header.extend_from_slice(&(probs.height() as u32).to_le_bytes());
    header.extend_from_slice(&(probs.width() as u32).to_le_bytes());
    header.extend_from_slice(&(probs.classes() as u32).to_le_bytes());
    header.extend_from_slice(&SAPM_DTYPE_F32.to_le_bytes());
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(probs.data().len() * 4);
    for v in probs.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

/// Parses a SAPM stream. `validate` checks the simplex constraints.
pub fn read_probmap<R: Read>(mut r: R, validate: bool) -> std::result::Result<ProbMap, String> {
    let mut header = [0u8; SAPM_HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| "truncated SAPM header".to_string())?;
    if &header[0..4] != SAPM_MAGIC {
        return Err("not a SAPM file (bad magic)".into());
    }
    let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes([header[i], header[i + 1], header[i + 2], header[i + 3]]);
    let version = u16_at(4);
    if version != SAPM_VERSION {
        return Err(format!("unsupported SAPM version {version}"));
    }
    let (h, w, c) = (u32_at(6) as usize, u32_at(10) as usize, u32_at(14));
    let dtype = u16_at(18);
    if dtype != SAPM_DTYPE_F32 {
        return Err(format!("unsupported SAPM dtype code {dtype}"));
    }
    let classes = u16::try_from(c).map_err(|_| format!("class count {c} out of range"))?;
    let n = h
        .checked_mul(w)
        .and_then(|p| p.checked_mul(c as usize))
        .ok_or("SAPM dimensions overflow")?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| e.to_string())?;
    if payload.len() != n * 4 {
        return Err(format!("SAPM payload has {} bytes, expected {}", payload.len(), n * 4));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let probs = if validate {
        ProbMap::new(w, h, classes, data)
    } else {
        ProbMap::new_unchecked(w, h, classes, data)
    };
    probs.map_err(|e| e.to_string())
}

pub fn save_probmap(path: &Path, probs: &ProbMap) -> Result<()> {
    let mut buf = Vec::new();
    write_probmap(&mut buf, probs).map_err(|e| Error::io(path, e))?;
    write_file(path, &buf)
}

pub fn load_probmap(path: &Path) -> Result<ProbMap> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_probmap(BufReader::new(file), true).map_err(|m| Error::format(path, m))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &to_json_bytes(value))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::format(path, "not UTF-8"))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn jsonl_bytes<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = BufWriter::new(Vec::new());
    for item in items {
        serde_json::to_writer(&mut out, item).expect("serializable value");
        out.write_all(b"\n").expect("in-memory write");
    }
    out.into_inner().expect("in-memory buffer")
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_file(path, &jsonl_bytes(items))
}
