//! Binary PPM (P6, 8-bit) images and PGM (P5) maps, 8-bit for masks and
//! 16-bit big-endian with a x256 scale for depth and disparity.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    /// Offset of the first payload byte.
    data_start: usize,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

/// Skips whitespace and `#` comments.
fn skip_space(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        match bytes[pos] {
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => pos += 1,
            _ => break,
        }
    }
    pos
}

fn read_uint(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let start = skip_space(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(parse_err(start, format!("expected {what}")));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text
        .parse::<usize>()
        .map_err(|_| parse_err(start, format!("{what} `{text}` out of range")))?;
    Ok((value, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(parse_err(0, "file too short for a magic number"));
    }
    let magic = [bytes[0], bytes[1]];
    if magic[0] != b'P' {
        return Err(parse_err(0, "missing `P` magic"));
    }
    let (width, pos) = read_uint(bytes, 2, "width")?;
    let (height, pos) = read_uint(bytes, pos, "height")?;
    let (maxval, pos) = read_uint(bytes, pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(2, format!("empty image {width}x{height}")));
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => {}
        Some(_) => return Err(parse_err(pos, "expected whitespace after maxval")),
        None => return Err(parse_err(pos, "truncated header")),
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, bytes_per_sample: usize, channels: usize) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels * bytes_per_sample;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: need {need} bytes, have {have}"),
        ));
    }
    if have > need {
        return Err(parse_err(
            h.data_start + need,
            format!("{} trailing bytes after payload", have - need),
        ));
    }
    Ok(&bytes[h.data_start..])
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes a P6 image with maxval 255 into `[0, 1]` intensities.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(parse_err(0, "expected P6 magic"));
    }
    if h.maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PPM maxval {} (only 255 is supported)",
            h.maxval
        )));
    }
    let data = payload(bytes, &h, 1, 3)?;
    Image::new(h.width, h.height, 3, data.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Encodes an image with 1 or 3 channels as P6; values are clamped to
/// `[0, 1]` and rounded half up.
pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    let c = img.channels();
    if c != 3 && c != 1 {
        return Err(Error::dims("1 or 3 channels", c));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.reserve(img.pixel_count() * 3);
    for px in img.data().chunks(c) {
        for k in 0..3 {
            out.push(to_u8(px[if c == 3 { k } else { 0 }]));
        }
    }
    Ok(out)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_ppm(&read(path)?).map_err(|e| with_path(e, path))
}

pub fn save_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_ppm(img)?)
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { offset, message } => Error::Parse {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

/// A 16-bit map: `values` in the stored unit, `valid[i]` false where the
/// raw sample is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Map16 {
    pub values: Image,
    pub valid: Vec<bool>,
}

/// Encodes a single-channel map as P5 16-bit, `round(v * 256)`; non-finite
/// or non-positive values and pixels with `valid[i] == false` are stored
/// as 0.
pub fn encode_pgm16(map: &Image, valid: Option<&[bool]>) -> Result<Vec<u8>> {
    if map.channels() != 1 {
        return Err(Error::dims("1 channel", map.channels()));
    }
    if let Some(v) = valid {
        if v.len() != map.pixel_count() {
            return Err(Error::dims(map.pixel_count(), v.len()));
        }
    }
    let mut out = format!("P5\n{} {}\n65535\n", map.width(), map.height()).into_bytes();
    out.reserve(map.pixel_count() * 2);
    for (i, &value) in map.data().iter().enumerate() {
        let keep = valid.is_none_or(|v| v[i]) && value.is_finite() && value > 0.0;
        let raw = if keep {
            let r = (value * 256.0 + 0.5).floor();
            if r > 65535.0 {
                return Err(Error::Overflow { index: i, value });
            }
            r as u16
        } else {
            if value < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "negative value {value} at index {i}"
                )));
            }
            0
        };
        out.extend_from_slice(&raw.to_be_bytes());
    }
    Ok(out)
}

pub fn decode_pgm16(bytes: &[u8]) -> Result<Map16> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(parse_err(0, "expected P5 magic"));
    }
    if h.maxval != 65535 {
        return Err(Error::UnsupportedFormat(format!(
            "PGM maxval {} (16-bit maps need 65535)",
            h.maxval
        )));
    }
    let data = payload(bytes, &h, 2, 1)?;
    let raw: Vec<u16> = data
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    let valid = raw.iter().map(|&r| r != 0).collect();
    let values = Image::new(h.width, h.height, 1, raw.iter().map(|&r| r as f64 / 256.0).collect())?;
    Ok(Map16 { values, valid })
}

pub fn save_depth_pgm16(map: &Image, valid: Option<&[bool]>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_pgm16(map, valid)?)
}

pub fn load_depth_pgm16(path: impl AsRef<Path>) -> Result<Map16> {
    let path = path.as_ref();
    decode_pgm16(&read(path)?).map_err(|e| with_path(e, path))
}

/// Encodes a single-channel `[0, 1]` map as P5 8-bit.
pub fn encode_pgm8(map: &Image) -> Result<Vec<u8>> {
    if map.channels() != 1 {
        return Err(Error::dims("1 channel", map.channels()));
    }
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend(map.data().iter().map(|&v| to_u8(v)));
    Ok(out)
}

pub fn decode_pgm8(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(parse_err(0, "expected P5 magic"));
    }
    if h.maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PGM maxval {} (8-bit maps need 255)",
            h.maxval
        )));
    }
    let data = payload(bytes, &h, 1, 1)?;
    Image::new(h.width, h.height, 1, data.iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn save_pgm8(map: &Image, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_pgm8(map)?)
}

pub fn load_pgm8(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_pgm8(&read(path)?).map_err(|e| with_path(e, path))
}
