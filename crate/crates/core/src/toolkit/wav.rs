//! Minimal RIFF/WAVE PCM16 mono reader and writer.

use std::path::Path;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;

fn io_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Io {
        offset: offset as u64,
        detail: detail.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(io_err(self.pos, format!("truncated {what}"))),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Maps `v` to `round(clamp(v, -1, 1) · 32767)`.
pub fn to_pcm16(v: f32) -> i16 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    (v * 32767.0).round() as i16
}

/// Inverse of [`to_pcm16`] on every code it produces, so rewriting a file
/// that was read back is byte-stable.
pub fn from_pcm16(s: i16) -> f32 {
    s as f32 / 32767.0
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "RIFF tag")? != b"RIFF" {
        return Err(io_err(0, "missing RIFF tag"));
    }
    let riff_len = c.u32("RIFF size")? as usize;
    if riff_len + 8 > bytes.len() {
        return Err(io_err(4, format!("RIFF size {riff_len} exceeds file length {}", bytes.len())));
    }
    if c.take(4, "WAVE tag")? != b"WAVE" {
        return Err(io_err(8, "missing WAVE tag"));
    }
    let mut rate = None;
    loop {
        let at = c.pos;
        let id = c.take(4, "chunk id")?;
        let len = c.u32("chunk size")? as usize;
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(io_err(at, format!("fmt chunk too short ({len} bytes)")));
                }
                let body_at = c.pos;
                let format = c.u16("format tag")?;
                let channels = c.u16("channel count")?;
                let sr = c.u32("sample rate")?;
                let byte_rate = c.u32("byte rate")?;
                let align = c.u16("block align")?;
                let bits = c.u16("bits per sample")?;
                if format != FORMAT_PCM {
                    return Err(io_err(body_at, format!("unsupported format tag {format}")));
                }
                if channels != 1 {
                    return Err(io_err(body_at + 2, format!("expected mono, found {channels} channels")));
                }
                if bits != 16 {
                    return Err(io_err(body_at + 14, format!("expected 16-bit samples, found {bits}")));
                }
                if align != 2 || byte_rate != sr * 2 || sr == 0 {
                    return Err(io_err(body_at + 4, "inconsistent rate/alignment fields"));
                }
                c.take(len - 16 + (len & 1), "fmt padding")?;
                rate = Some(sr);
            }
            b"data" => {
                let sr = rate.ok_or_else(|| io_err(at, "data chunk before fmt chunk"))?;
                if !len.is_multiple_of(2) {
                    return Err(io_err(at + 4, format!("odd data size {len}")));
                }
                let body = c.take(len, "sample data")?;
                let samples = body
                    .chunks_exact(2)
                    .map(|b| from_pcm16(i16::from_le_bytes([b[0], b[1]])))
                    .collect();
                return Ok(AudioBuffer::new(samples, sr));
            }
            _ => {
                c.take(len + (len & 1), "chunk body")?;
            }
        }
    }
}

pub fn encode_wav(buf: &AudioBuffer) -> Vec<u8> {
    let data_len = buf.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &v in &buf.samples {
        out.extend_from_slice(&to_pcm16(v).to_le_bytes());
    }
    out
}

pub fn wav_read(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    decode_wav(&std::fs::read(path)?)
}

pub fn wav_write(buf: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_wav(buf))?;
    Ok(())
}
