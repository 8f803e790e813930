//! RIFF/WAVE reading (mono PCM16 or float32) and writing.

use super::Reader;
use crate::dsp::{resample_samples, Waveform};
use crate::error::{FormatError, Result};
use std::path::Path;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, PartialEq)]
pub struct WavInput {
    pub waveform: Waveform,
    /// Rate found in the file; differs from the waveform's when resampled.
    pub original_rate: u32,
}

impl WavInput {
    pub fn resampled(&self) -> bool {
        self.original_rate != self.waveform.sample_rate()
    }
}

fn wav_err(msg: impl Into<String>, offset: usize) -> FormatError {
    FormatError::Wav { msg: msg.into(), offset }
}

struct Fmt {
    format: u16,
    rate: u32,
    bits: u16,
    offset: usize,
}

/// Parses a WAV image and resamples it to `target_rate` if needed.
pub fn decode_wav(bytes: &[u8], target_rate: u32) -> Result<WavInput> {
    let mut r = Reader::new(bytes);
    let riff = r.take(4, "RIFF header").map_err(|_| wav_err("missing RIFF header", 0))?;
    if riff != b"RIFF" {
        return Err(wav_err(format!("expected RIFF, found {:?}", String::from_utf8_lossy(riff)), 0).into());
    }
    r.u32("RIFF size").map_err(|_| wav_err("missing RIFF size", 4))?;
    let wave = r.take(4, "WAVE tag").map_err(|_| wav_err("missing WAVE tag", 8))?;
    if wave != b"WAVE" {
        return Err(wav_err(format!("expected WAVE, found {:?}", String::from_utf8_lossy(wave)), 8).into());
    }

    let mut fmt: Option<Fmt> = None;
    let mut data: Option<(&[u8], usize)> = None;
    while r.remaining() > 0 && data.is_none() {
        let at = r.offset();
        if r.remaining() < 8 {
            return Err(wav_err(format!("truncated chunk header ({} bytes)", r.remaining()), at).into());
        }
        let id: [u8; 4] = r.array("chunk id")?;
        let size = r.u32("chunk size")? as usize;
        match &id {
            b"fmt " => {
                let body = r.take(size, "fmt chunk").map_err(|_| {
                    wav_err(format!("fmt chunk declares {size} bytes, {} remain", bytes.len() - at - 8), at)
                })?;
                fmt = Some(parse_fmt(body, at + 8)?);
            }
            b"data" => {
                let start = r.offset();
                let body = r.take(size, "data chunk").map_err(|_| {
                    wav_err(format!("data chunk declares {size} bytes, {} remain", bytes.len() - start), at)
                })?;
                data = Some((body, start));
            }
            _ => {
                r.take(size, "chunk body")
                    .map_err(|_| wav_err(format!("chunk {:?} runs past end of file", String::from_utf8_lossy(&id)), at))?;
            }
        }
        if size % 2 == 1 && r.remaining() > 0 {
            r.take(1, "pad byte")?;
        }
    }
    let fmt = fmt.ok_or_else(|| wav_err("missing fmt chunk", r.offset()))?;
    let (body, data_at) = data.ok_or_else(|| wav_err("missing data chunk", r.offset()))?;

    let samples: Vec<f64> = match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 16) => {
            check_whole(body.len(), 2, data_at)?;
            body.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0).collect()
        }
        (FORMAT_FLOAT, 32) => {
            check_whole(body.len(), 4, data_at)?;
            let mut out = Vec::with_capacity(body.len() / 4);
            for (i, c) in body.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
                if !v.is_finite() {
                    return Err(wav_err("non-finite float sample", data_at + 4 * i).into());
                }
                out.push(v);
            }
            out
        }
        (format, bits) => {
            return Err(wav_err(format!("unsupported encoding: format {format}, {bits} bits"), fmt.offset).into());
        }
    };
    let original_rate = fmt.rate;
    let samples = if original_rate == target_rate || samples.len() < 2 {
        samples
    } else {
        let m = (samples.len() as f64 * target_rate as f64 / original_rate as f64).round() as usize;
        resample_samples(&samples, m.max(2))
    };
    Ok(WavInput { waveform: Waveform::new(samples, target_rate)?, original_rate })
}

fn check_whole(len: usize, width: usize, offset: usize) -> Result<(), FormatError> {
    if len.is_multiple_of(width) {
        Ok(())
    } else {
        Err(wav_err(format!("data length {len} is not a multiple of {width}"), offset))
    }
}

fn parse_fmt(body: &[u8], offset: usize) -> Result<Fmt, FormatError> {
    if body.len() < 16 {
        return Err(wav_err(format!("fmt chunk too short ({} bytes)", body.len()), offset));
    }
    let mut r = Reader::new(body);
    let mut format = r.u16("format")?;
    let channels = r.u16("channels")?;
    let rate = r.u32("sample rate")?;
    r.u32("byte rate")?;
    r.u16("block align")?;
    let bits = r.u16("bits per sample")?;
    if format == FORMAT_EXTENSIBLE {
        if body.len() < 26 {
            return Err(wav_err("extensible fmt chunk too short", offset));
        }
        format = u16::from_le_bytes([body[24], body[25]]);
    }
    if channels != 1 {
        return Err(wav_err(format!("{channels} channels; only mono is supported"), offset + 2));
    }
    if rate == 0 {
        return Err(wav_err("zero sample rate", offset + 4));
    }
    Ok(Fmt { format, rate, bits, offset })
}

pub fn read_wav(path: impl AsRef<Path>, target_rate: u32) -> Result<WavInput> {
    decode_wav(&std::fs::read(path)?, target_rate)
}

fn header(out: &mut Vec<u8>, format: u16, bits: u16, rate: u32, data_len: usize) {
    let block = bits / 8;
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * block as u32).to_le_bytes());
    out.extend_from_slice(&block.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
}

/// PCM16 image and the number of samples clipped to full scale.
pub fn encode_wav_pcm16(w: &Waveform) -> (Vec<u8>, usize) {
    let mut out = Vec::with_capacity(44 + 2 * w.len());
    header(&mut out, FORMAT_PCM, 16, w.sample_rate(), 2 * w.len());
    let mut clipped = 0;
    for &x in w.samples() {
        let v = (x * 32768.0).round();
        if !(-32768.0..=32767.0).contains(&v) {
            clipped += 1;
        }
        out.extend_from_slice(&(v.clamp(-32768.0, 32767.0) as i16).to_le_bytes());
    }
    (out, clipped)
}

pub fn encode_wav_f32(w: &Waveform) -> Vec<u8> {
    let mut out = Vec::with_capacity(44 + 4 * w.len());
    header(&mut out, FORMAT_FLOAT, 32, w.sample_rate(), 4 * w.len());
    for &x in w.samples() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

/// Writes PCM16 and returns the clipped-sample count.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<usize> {
    let (bytes, clipped) = encode_wav_pcm16(w);
    std::fs::write(path, bytes)?;
    Ok(clipped)
}
