//! TRK target-track format.
//!
//! A text part of tab-separated lines followed by an optional binary
//! envelope section:
//!
//! ```text
//! TRK 1
//! sample_rate 16000
//! total_length 48000
//! polarity 1
//! events 2
//! 812\t1\t133\t2.5e-2\t<20 RN values>
//! 1000\t0\t0\t1.0e-5
//! envelope <order> <count> <bytes>
//! <count x (position u64, gain f64, order x f64)>
//! ```
//!
//! Floats are written with 17 significant digits, so parsing restores them
//! exactly.

use super::Reader;
use crate::codebook::{RnFrame, RN_LEN};
use crate::envelope::EnvelopeTrack;
use crate::error::{Error, FormatError, Result};
use crate::excitation::{Event, Polarity, TargetTrack};
use std::fmt::Write as _;
use std::path::Path;

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFile {
    pub track: TargetTrack,
    pub envelope: Option<EnvelopeTrack>,
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn encode_track(track: &TargetTrack, envelope: Option<&EnvelopeTrack>) -> Vec<u8> {
    let mut s = String::new();
    let sign = match track.polarity() {
        Polarity::Positive => 1,
        Polarity::Negative => -1,
    };
    let _ = writeln!(s, "TRK {VERSION}");
    let _ = writeln!(s, "sample_rate {}", track.sample_rate());
    let _ = writeln!(s, "total_length {}", track.total_length());
    let _ = writeln!(s, "polarity {sign}");
    let _ = writeln!(s, "events {}", track.events().len());
    for e in track.events() {
        match e {
            Event::Voiced { position, period, energy, target } => {
                let _ = write!(s, "{position}\t1\t{period}\t{}", float(*energy));
                for v in target.coeffs() {
                    let _ = write!(s, "\t{}", float(*v));
                }
                s.push('\n');
            }
            Event::Unvoiced { position, energy } => {
                let _ = writeln!(s, "{position}\t0\t0\t{}", float(*energy));
            }
        }
    }
    let mut out = s.into_bytes();
    if let Some(env) = envelope {
        let per = 16 + 8 * env.order();
        out.extend_from_slice(format!("envelope {} {} {}\n", env.order(), env.len(), per * env.len()).as_bytes());
        for ((p, g), a) in env.positions().iter().zip(env.gains()).zip(env.coeffs()) {
            out.extend_from_slice(&(*p as u64).to_le_bytes());
            out.extend_from_slice(&g.to_le_bytes());
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn line_err(msg: impl Into<String>, line: usize) -> Error {
    FormatError::Track { msg: msg.into(), line }.into()
}

fn parse<T: std::str::FromStr>(field: &str, what: &str, line: usize) -> Result<T> {
    field.parse().map_err(|_| line_err(format!("cannot parse {what} from {field:?}"), line))
}

/// Splits off one newline-terminated text line starting at `at`.
fn next_line(bytes: &[u8], at: &mut usize, line: usize, what: &str) -> Result<String> {
    let rest = &bytes[*at..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::from(FormatError::Truncated { what: format!("{what} (line {line})"), offset: *at }))?;
    let text = std::str::from_utf8(&rest[..end]).map_err(|_| line_err("not valid UTF-8", line))?;
    *at += end + 1;
    Ok(text.trim_end_matches('\r').to_string())
}

fn header_value<T: std::str::FromStr>(text: &str, key: &str, line: usize) -> Result<T> {
    let mut parts = text.split_whitespace();
    if parts.next() != Some(key) {
        return Err(line_err(format!("expected {key:?} header"), line));
    }
    let value = parts.next().ok_or_else(|| line_err(format!("{key} has no value"), line))?;
    if parts.next().is_some() {
        return Err(line_err(format!("trailing fields after {key}"), line));
    }
    parse(value, key, line)
}

pub fn decode_track(bytes: &[u8]) -> Result<TrackFile> {
    let mut at = 0;
    let first = next_line(bytes, &mut at, 1, "magic line")?;
    let mut parts = first.split_whitespace();
    let magic = parts.next().unwrap_or("");
    if magic != "TRK" {
        return Err(FormatError::BadMagic { expected: "TRK".into(), found: magic.into() }.into());
    }
    let version: u32 = parse(parts.next().unwrap_or(""), "version", 1)?;
    if version != VERSION {
        return Err(FormatError::Version { format: "TRK", found: version, expected: VERSION }.into());
    }
    let sample_rate: u32 = header_value(&next_line(bytes, &mut at, 2, "sample_rate")?, "sample_rate", 2)?;
    let total_length: usize = header_value(&next_line(bytes, &mut at, 3, "total_length")?, "total_length", 3)?;
    let polarity = match header_value::<i32>(&next_line(bytes, &mut at, 4, "polarity")?, "polarity", 4)? {
        1 => Polarity::Positive,
        -1 => Polarity::Negative,
        other => return Err(line_err(format!("polarity must be 1 or -1, got {other}"), 4)),
    };
    let count: usize = header_value(&next_line(bytes, &mut at, 5, "events")?, "events", 5)?;

    let mut events = Vec::with_capacity(count.min(bytes.len() / 8));
    for i in 0..count {
        let line = 6 + i;
        let text = next_line(bytes, &mut at, line, "event record")?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() < 4 {
            return Err(line_err(format!("expected at least 4 fields, found {}", fields.len()), line));
        }
        let position: usize = parse(fields[0], "position", line)?;
        let period: usize = parse(fields[2], "period", line)?;
        let energy: f64 = parse(fields[3], "energy", line)?;
        match fields[1] {
            "1" => {
                if fields.len() != 4 + RN_LEN {
                    return Err(line_err(
                        format!("voiced record needs {} fields, found {}", 4 + RN_LEN, fields.len()),
                        line,
                    ));
                }
                let mut coeffs = [0.0; RN_LEN];
                for (c, f) in coeffs.iter_mut().zip(&fields[4..]) {
                    *c = parse(f, "RN value", line)?;
                }
                let target = RnFrame::new(coeffs).map_err(|e| line_err(e.to_string(), line))?;
                events.push(Event::Voiced { position, period, energy, target });
            }
            "0" => {
                if fields.len() != 4 {
                    return Err(line_err("unvoiced record takes exactly 4 fields", line));
                }
                events.push(Event::Unvoiced { position, energy });
            }
            other => return Err(line_err(format!("voiced flag must be 0 or 1, got {other:?}"), line)),
        }
    }
    let track = TargetTrack::new(events, total_length, sample_rate, polarity)
        .map_err(|e| line_err(e.to_string(), 6 + count))?;

    if at == bytes.len() {
        return Ok(TrackFile { track, envelope: None });
    }
    let line = 6 + count;
    let text = next_line(bytes, &mut at, line, "envelope header")?;
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "envelope" {
        return Err(line_err("expected \"envelope <order> <count> <bytes>\"", line));
    }
    let order: usize = parse(fields[1], "envelope order", line)?;
    let n: usize = parse(fields[2], "envelope count", line)?;
    let size: usize = parse(fields[3], "envelope size", line)?;
    if Some(size) != n.checked_mul(16 + 8 * order) {
        return Err(line_err("envelope size does not match order and count", line));
    }
    let mut r = Reader::new(&bytes[at..]);
    let mut positions = Vec::with_capacity(n.min(bytes.len() / 16));
    let mut gains = Vec::with_capacity(positions.capacity());
    let mut coeffs = Vec::with_capacity(positions.capacity());
    let shifted = |e: FormatError| match e {
        FormatError::Truncated { what, offset } => FormatError::Truncated { what, offset: offset + at },
        other => other,
    };
    for _ in 0..n {
        positions.push(r.u64("envelope position").map_err(shifted)? as usize);
        gains.push(r.f64("envelope gain").map_err(shifted)?);
        let mut a = Vec::with_capacity(order);
        for _ in 0..order {
            a.push(r.f64("envelope coefficient").map_err(shifted)?);
        }
        coeffs.push(a);
    }
    if r.remaining() != 0 {
        return Err(FormatError::Invalid { msg: format!("{} trailing bytes", r.remaining()), offset: at + r.offset() }.into());
    }
    let envelope = EnvelopeTrack::new(order, positions, coeffs, gains).map_err(|e| line_err(e.to_string(), line))?;
    Ok(TrackFile { track, envelope: Some(envelope) })
}

pub fn save_track(path: impl AsRef<Path>, track: &TargetTrack, envelope: Option<&EnvelopeTrack>) -> Result<()> {
    std::fs::write(path, encode_track(track, envelope))?;
    Ok(())
}

pub fn load_track(path: impl AsRef<Path>) -> Result<TrackFile> {
    decode_track(&std::fs::read(path)?)
}
