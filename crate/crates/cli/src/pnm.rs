//! Binary netpbm images: P5 (grey, one channel) and P6 (RGB, three channels),
//! 8 bits per sample. Pixels map to `value / 255` in a planar `[C,H,W]` tensor.

use std::path::Path;

use gradleak_core::Tensor;

use crate::error::CliError;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize, CliError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| invalid("malformed image header"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, CliError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(invalid("unsupported image format (expected binary PGM P5 or PPM P6)")),
    };
    let mut h = Header { bytes, pos: 2 };
    let (width, height, maxval) = (h.number()?, h.number()?, h.number()?);
    if maxval != 255 {
        return Err(invalid(format!("unsupported maxval {maxval}; only 8-bit images (255) are read")));
    }
    if width == 0 || height == 0 {
        return Err(invalid("image has a zero dimension"));
    }
    // exactly one whitespace byte separates the header from the samples
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(invalid("malformed image header"));
    }
    let pixels = &bytes[h.pos + 1..];
    let n = width * height * channels;
    if pixels.len() < n {
        return Err(invalid(format!("image data truncated: {} of {n} bytes", pixels.len())));
    }
    let plane = width * height;
    Ok(Tensor::from_fn(&[channels, height, width], |i| {
        let (c, p) = (i / plane, i % plane);
        f64::from(pixels[p * channels + c]) / 255.0
    }))
}

fn quantize(v: f64) -> u8 {
    // f64::round rounds half away from zero
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode(t: &Tensor) -> Result<Vec<u8>, CliError> {
    let &[channels, height, width] = t.shape() else {
        return Err(invalid(format!("image tensors are [C,H,W], got shape {:?}", t.shape())));
    };
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        c => return Err(invalid(format!("images need 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    let plane = width * height;
    let d = t.data();
    for p in 0..plane {
        for c in 0..channels {
            out.push(quantize(d[c * plane + p]));
        }
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Tensor, CliError> {
    decode(&std::fs::read(path).map_err(|e| CliError::io(path, e))?)
}

pub fn write(path: &Path, t: &Tensor) -> Result<(), CliError> {
    std::fs::write(path, encode(t)?).map_err(|e| CliError::io(path, e))
}
