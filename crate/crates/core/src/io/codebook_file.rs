//! RSCB codebook container.
//!
//! ```text
//! "RSCB" | version u16 | sample_rate u32 | kind u8 | k u32 | n u32
//!        | entry_count u32 | digest [32]
//! entry*: period u16 | energy f64 | key 20 x f64 | len u32 | len x f32
//! has_pca u8 [ mean 20 x f64 | basis 400 x f64 | eigenvalues 20 x f64 ]
//! crc32 u32 (over everything before it)
//! ```
//!
//! All integers and floats are little-endian. Source ids are not stored;
//! loaded frames are numbered by entry index.

use super::Reader;
use crate::codebook::{Codebook, CodebookEntry, CodebookKind, CodebookMeta, ResidualFrame, RnFrame, SourceId, RN_LEN};
use crate::error::{Error, FormatError, Result};
use crate::pca::PcaModel;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"RSCB";
pub const VERSION: u16 = 1;

pub fn encode_codebook(cb: &Codebook) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let meta = cb.meta();
    out.extend_from_slice(&meta.sample_rate.to_le_bytes());
    out.push(match cb.kind() {
        CodebookKind::Full => 0,
        CodebookKind::Compressed => 1,
    });
    out.extend_from_slice(&meta.k.to_le_bytes());
    out.extend_from_slice(&meta.n.to_le_bytes());
    out.extend_from_slice(&(cb.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta.digest);
    for (i, e) in cb.entries().iter().enumerate() {
        let period = u16::try_from(e.frame.period())
            .map_err(|_| Error::invalid(format!("entry {i}: period {} exceeds u16", e.frame.period())))?;
        out.extend_from_slice(&period.to_le_bytes());
        out.extend_from_slice(&e.frame.energy().to_le_bytes());
        for v in e.key.coeffs() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(e.frame.len() as u32).to_le_bytes());
        for &v in e.frame.samples() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    match cb.pca() {
        None => out.push(0),
        Some(p) => {
            out.push(1);
            let values = p.mean().iter().chain(p.basis().iter().flatten()).chain(p.eigenvalues());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn invalid(msg: impl Into<String>, offset: usize) -> Error {
    FormatError::Invalid { msg: msg.into(), offset }.into()
}

pub fn decode_codebook(bytes: &[u8]) -> Result<Codebook> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: "RSCB".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        }
        .into());
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(FormatError::Version { format: "RSCB", found: version as u32, expected: VERSION as u32 }.into());
    }
    if bytes.len() < 4 + 2 + 4 {
        return Err(FormatError::Truncated { what: "header".into(), offset: bytes.len() }.into());
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body_len]);
    // Truncation shows up as a checksum failure unless the structure is short
    // first, so parse before comparing.
    let parsed = parse_body(&mut Reader::new(&bytes[..body_len]), body_len);
    if stored != computed {
        return match parsed {
            Err(Error::Format(e @ FormatError::Truncated { .. })) => Err(e.into()),
            _ => Err(FormatError::Checksum { stored, computed }.into()),
        };
    }
    parsed
}

fn parse_body(r: &mut Reader, body_len: usize) -> Result<Codebook> {
    r.take(6, "magic and version")?;
    let sample_rate = r.u32("sample rate")?;
    let kind_at = r.offset();
    let kind = match r.u8("kind")? {
        0 => CodebookKind::Full,
        1 => CodebookKind::Compressed,
        other => return Err(invalid(format!("unknown codebook kind {other}"), kind_at)),
    };
    let k = r.u32("k")?;
    let n = r.u32("N")?;
    let count = r.u32("entry count")? as usize;
    let digest: [u8; 32] = r.array("corpus digest")?;
    let mut entries = Vec::with_capacity(count.min(body_len / 180));
    for i in 0..count {
        let at = r.offset();
        let period = r.u16(&format!("entry {i} period"))? as usize;
        let energy = r.f64(&format!("entry {i} energy"))?;
        let mut key = [0.0; RN_LEN];
        for v in key.iter_mut() {
            *v = r.f64(&format!("entry {i} key"))?;
        }
        let len = r.u32(&format!("entry {i} payload length"))? as usize;
        if len != 2 * period {
            return Err(invalid(format!("entry {i}: payload length {len} != 2 x period {period}"), at));
        }
        let mut samples = Vec::with_capacity(len);
        for _ in 0..len {
            samples.push(r.f32(&format!("entry {i} payload"))? as f64);
        }
        let source = SourceId { utterance: 0, gci: i as u32 };
        let frame = ResidualFrame::new(samples, period, energy, source).map_err(|e| invalid(e.to_string(), at))?;
        let key = RnFrame::new(key).map_err(|e| invalid(e.to_string(), at))?;
        entries.push(CodebookEntry { key, frame });
    }
    let pca_at = r.offset();
    let pca = match r.u8("PCA flag")? {
        0 => None,
        1 => {
            let mut read = |what: &str| -> Result<f64> { Ok(r.f64(what)?) };
            let mut mean = [0.0; RN_LEN];
            for v in mean.iter_mut() {
                *v = read("PCA mean")?;
            }
            let mut basis = [[0.0; RN_LEN]; RN_LEN];
            for v in basis.iter_mut().flatten() {
                *v = read("PCA basis")?;
            }
            let mut eigenvalues = [0.0; RN_LEN];
            for v in eigenvalues.iter_mut() {
                *v = read("PCA eigenvalues")?;
            }
            Some(PcaModel::from_parts(mean, basis, eigenvalues).map_err(|e| invalid(e.to_string(), pca_at))?)
        }
        other => return Err(invalid(format!("unknown PCA flag {other}"), pca_at)),
    };
    if r.remaining() != 0 {
        return Err(invalid(format!("{} trailing bytes", r.remaining()), r.offset()));
    }
    let meta = CodebookMeta { sample_rate, k, n, digest };
    Ok(Codebook::new(entries, kind, meta).map_err(|e| invalid(e.to_string(), 0))?.with_pca(pca))
}

pub fn save_codebook(path: impl AsRef<Path>, cb: &Codebook) -> Result<()> {
    std::fs::write(path, encode_codebook(cb)?)?;
    Ok(())
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    decode_codebook(&std::fs::read(path)?)
}
