//! Serialized token stream.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `DQTK`                            |
//! | 4      | 2    | format version (`1`)                    |
//! | 6      | 2    | quantizer stages `S`                    |
//! | 8      | 4    | codebook size `K` (shared by all stages)|
//! | 12     | 4    | latent dimension                        |
//! | 16     | 8    | frame rate in Hz, IEEE-754 `f64`        |
//! | 24     | 4    | frame count `F`                         |
//! | 28     | ...  | payload                                 |
//!
//! The payload packs the `S × F` indices stage-major, each in
//! `ceil(log2 K)` bits, most significant bit first, zero-padded to a byte.

use std::io::{Read, Write};

use super::{bits_for, TokenSequence};
use crate::error::{Error, Result};

pub const TOKEN_FILE_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"DQTK";
const HEADER_LEN: usize = 28;

/// Tokens plus the stream parameters needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFile {
    pub tokens: TokenSequence,
    pub frame_rate_hz: f64,
    pub dim: usize,
}

impl TokenFile {
    /// Uniform codebook size across stages.
    pub fn codebook_size(&self) -> usize {
        self.tokens.codebook_sizes().first().copied().unwrap_or(0)
    }

    /// Payload bits per second.
    pub fn bitrate(&self) -> f64 {
        self.frame_rate_hz * f64::from(bits_for(self.codebook_size())) * self.tokens.stages() as f64
    }
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "token file",
        detail: detail.into(),
    }
}

pub fn write_token_file<W: Write>(mut w: W, file: &TokenFile) -> Result<()> {
    let t = &file.tokens;
    let k = file.codebook_size();
    if t.codebook_sizes().iter().any(|&x| x != k) {
        return Err(format_err("all stages must share one codebook size"));
    }
    let stages = u16::try_from(t.stages()).map_err(|_| format_err("too many stages"))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + payload_len(t.stages(), t.frames(), k));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&TOKEN_FILE_VERSION.to_le_bytes());
    buf.extend_from_slice(&stages.to_le_bytes());
    buf.extend_from_slice(&(k as u32).to_le_bytes());
    buf.extend_from_slice(&(file.dim as u32).to_le_bytes());
    buf.extend_from_slice(&file.frame_rate_hz.to_le_bytes());
    buf.extend_from_slice(&(t.frames() as u32).to_le_bytes());

    let width = bits_for(k);
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    for &ix in t.indices() {
        acc = (acc << width) | u64::from(ix);
        filled += width;
        while filled >= 8 {
            filled -= 8;
            buf.push((acc >> filled) as u8);
        }
        acc &= (1u64 << filled) - 1;
    }
    if filled > 0 {
        buf.push((acc << (8 - filled)) as u8);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn payload_len(stages: usize, frames: usize, k: usize) -> usize {
    (stages * frames * bits_for(k) as usize).div_ceil(8)
}

pub fn read_token_file<R: Read>(mut r: R) -> Result<TokenFile> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(format_err(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(format_err("bad magic"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u16_at(4);
    if version != TOKEN_FILE_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let stages = u16_at(6) as usize;
    let k = u32_at(8) as usize;
    let dim = u32_at(12) as usize;
    let frame_rate_hz = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let frames = u32_at(24) as usize;
    if stages == 0 || k == 0 {
        return Err(format_err("stage count and codebook size must be positive"));
    }
    if !(frame_rate_hz > 0.0 && frame_rate_hz.is_finite()) {
        return Err(format_err("frame rate must be positive"));
    }
    let expected = payload_len(stages, frames, k);
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(format_err(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let width = bits_for(k);
    let mut indices = Vec::with_capacity(stages * frames);
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    let mut bytes_iter = payload.iter();
    for _ in 0..stages * frames {
        while filled < width {
            let b = bytes_iter.next().expect("length checked above");
            acc = (acc << 8) | u64::from(*b);
            filled += 8;
        }
        filled -= width;
        indices.push((acc >> filled) as u32 & ((1u64 << width) - 1) as u32);
        acc &= (1u64 << filled) - 1;
    }
    let tokens = TokenSequence::new(vec![k; stages], frames, indices)
        .map_err(|e| format_err(e.to_string()))?;
    Ok(TokenFile {
        tokens,
        frame_rate_hz,
        dim,
    })
}
