//! Binary PGM (P5) and PPM (P6) reading and writing, 8-bit only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ImageTensor, Shape};

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(start, format!("{what} out of range")))
    }
}

/// Decodes an in-memory P5/P6 file.
pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<ImageTensor<S>> {
    if bytes.len() < 2 {
        return Err(format_err(0, "missing magic number"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(format_err(0, "magic must be P5 or P6")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_space_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(format_err(maxval_at, format!("maxval must be 255, got {maxval}")));
    }
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(format_err(cur.pos, "expected single whitespace after maxval"));
    }
    let start = cur.pos + 1;
    let shape = Shape::new(height, width, channels).map_err(|e| format_err(2, e.to_string()))?;
    let need = shape.len();
    if bytes.len() < start + need {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: need {need} bytes from offset {start}"),
        ));
    }
    let data = bytes[start..start + need].iter().map(|&b| S::of(b as f64 / 255.0)).collect();
    Ok(ImageTensor::from_raw(shape, data))
}

/// Encodes to P5 (one channel) or P6 (three channels); values are clamped
/// and rounded to the 8-bit grid.
pub fn encode<S: Scalar>(t: &ImageTensor<S>) -> Vec<u8> {
    let magic = if t.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", t.width(), t.height()).into_bytes();
    out.extend(t.data().iter().map(|&v| to_byte(v)));
    out
}

pub fn to_byte<S: Scalar>(v: S) -> u8 {
    (v.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Snaps a tensor onto the 8-bit grid (the effect of a write/read cycle).
pub fn quantize8<S: Scalar>(t: &ImageTensor<S>) -> ImageTensor<S> {
    t.map(|v| S::of(to_byte(v) as f64 / 255.0))
}

pub fn read_image<S: Scalar>(path: impl AsRef<Path>) -> Result<ImageTensor<S>> {
    decode(&fs::read(path)?)
}

pub fn write_image<S: Scalar>(t: &ImageTensor<S>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}
