//! Pitch-synchronous residual frames, their RN signatures and the codebooks
//! built from them.
//!
//! An RN ("resampled and normalized") frame is a residual frame resampled to
//! [`RN_LEN`] samples and scaled to unit energy. It keeps the low-frequency
//! shape of the excitation and discards pitch and level, which makes it the
//! key for clustering and for selecting frames at synthesis time.

use crate::dsp::{energy, hann_values, resample_samples, scale_samples_to_energy, Waveform};
use crate::error::{Error, Result};
use crate::kmeans::{self, KMeans};
use crate::pca::PcaModel;
use crate::pitch::{F0Track, GciList};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub const RN_LEN: usize = 20;

/// Default number of centroids kept by compression.
pub const DEFAULT_K: usize = 100;
/// Default number of nearest frames examined per centroid.
pub const DEFAULT_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SourceId {
    pub utterance: u32,
    pub gci: u32,
}

/// GCI-centred, two-period, Hann-windowed residual segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFrame {
    samples: Vec<f64>,
    period: usize,
    energy: f64,
    source: SourceId,
}

impl ResidualFrame {
    pub fn new(samples: Vec<f64>, period: usize, energy: f64, source: SourceId) -> Result<Self> {
        if period == 0 || samples.len() != 2 * period {
            return Err(Error::invalid(format!(
                "residual frame of length {} does not span two periods of {period}",
                samples.len()
            )));
        }
        let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ends = samples[0].abs().max(samples[samples.len() - 1].abs());
        if ends > 1e-9 * peak.max(f64::MIN_POSITIVE) {
            return Err(Error::invalid("residual frame does not taper to zero at its ends"));
        }
        if !(energy.is_finite() && energy >= 0.0) {
            return Err(Error::invalid(format!("invalid frame energy {energy}")));
        }
        Ok(ResidualFrame { samples, period, energy, source })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// Sum of squares of the windowed samples.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn source(&self) -> SourceId {
        self.source
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Unit-energy 20-coefficient signature of a residual frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RnFrame {
    coeffs: [f64; RN_LEN],
}

impl RnFrame {
    /// Accepts coefficients that already have unit energy (within 1e-9).
    pub fn new(coeffs: [f64; RN_LEN]) -> Result<Self> {
        let e: f64 = coeffs.iter().map(|v| v * v).sum();
        if !e.is_finite() || (e - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("RN frame energy {e} is not 1")));
        }
        Ok(RnFrame { coeffs })
    }

    /// Scales `v` to unit energy.
    pub fn normalized(v: [f64; RN_LEN]) -> Result<Self> {
        let scaled = scale_samples_to_energy(&v, 1.0)?;
        let mut coeffs = [0.0; RN_LEN];
        coeffs.copy_from_slice(&scaled);
        Ok(RnFrame { coeffs })
    }

    pub fn coeffs(&self) -> &[f64; RN_LEN] {
        &self.coeffs
    }
}

/// RN signature: resample to [`RN_LEN`] samples, then normalize energy.
pub fn rn(frame: &ResidualFrame) -> Result<RnFrame> {
    rn_of(frame.samples())
}

pub(crate) fn rn_of(samples: &[f64]) -> Result<RnFrame> {
    if samples.len() < 2 || energy(samples) == 0.0 {
        return Err(Error::DegenerateFrame("zero-energy residual frame has no RN signature".into()));
    }
    let resampled = resample_samples(samples, RN_LEN);
    let mut v = [0.0; RN_LEN];
    v.copy_from_slice(&resampled);
    RnFrame::normalized(v)
}

/// Mean squared difference between two RN frames.
pub fn rn_distance(a: &RnFrame, b: &RnFrame) -> f64 {
    mean_square(a.coeffs(), b.coeffs())
}

pub(crate) fn mean_square(a: &[f64; RN_LEN], b: &[f64; RN_LEN]) -> f64 {
    kmeans::squared_distance(a, b) / RN_LEN as f64
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub frames: Vec<ResidualFrame>,
    /// Index into the GCI list for each extracted frame.
    pub gci_indices: Vec<usize>,
    /// GCIs whose two-period span ran past either signal edge.
    pub skipped: usize,
}

/// Cuts a Hann-windowed, two-period frame around every GCI. The local
/// period comes from the F0 track, rounded to whole samples.
pub fn extract_frames(residual: &Waveform, gcis: &GciList, f0t: &F0Track, utterance: u32) -> Result<Extraction> {
    if !f0t.covers(residual.len()) {
        return Err(Error::invalid("F0 track does not cover the residual"));
    }
    let x = residual.samples();
    let mut out = Extraction::default();
    for (idx, &g) in gcis.positions().iter().enumerate() {
        let period = f0t
            .period_at(g)
            .unwrap_or_else(|| crate::pitch::nearest_period(f0t, g))
            .round()
            .max(1.0) as usize;
        if g < period || g + period > x.len() {
            out.skipped += 1;
            continue;
        }
        let window = hann_values(2 * period);
        let samples: Vec<f64> = x[g - period..g + period]
            .iter()
            .zip(&window)
            .map(|(v, w)| v * w)
            .collect();
        let e = energy(&samples);
        let source = SourceId { utterance, gci: idx as u32 };
        out.frames.push(ResidualFrame::new(samples, period, e, source)?);
        out.gci_indices.push(idx);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookKind {
    Full,
    Compressed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodebookMeta {
    pub sample_rate: u32,
    /// Number of centroids (0 for a full codebook).
    pub k: u32,
    /// Candidates examined per centroid (0 for a full codebook).
    pub n: u32,
    /// SHA-256 of the training corpus, see [`corpus_digest`].
    pub digest: [u8; 32],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookEntry {
    pub key: RnFrame,
    pub frame: ResidualFrame,
}

/// Immutable set of residual frames keyed by their RN signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    entries: Vec<CodebookEntry>,
    kind: CodebookKind,
    meta: CodebookMeta,
    pca: Option<PcaModel>,
}

impl Codebook {
    pub fn new(entries: Vec<CodebookEntry>, kind: CodebookKind, meta: CodebookMeta) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("codebook must not be empty"));
        }
        if kind == CodebookKind::Compressed && entries.len() != meta.k as usize {
            return Err(Error::invalid(format!(
                "compressed codebook has {} entries but k = {}",
                entries.len(),
                meta.k
            )));
        }
        Ok(Codebook { entries, kind, meta, pca: None })
    }

    pub fn with_pca(mut self, pca: Option<PcaModel>) -> Self {
        self.pca = pca;
        self
    }

    pub fn entries(&self) -> &[CodebookEntry] {
        &self.entries
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    pub fn meta(&self) -> &CodebookMeta {
        &self.meta
    }

    pub fn pca(&self) -> Option<&PcaModel> {
        self.pca.as_ref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.meta.sample_rate
    }
}

/// SHA-256 over every waveform in order: sample rate (u32 LE), length
/// (u64 LE), then the samples as f64 LE.
pub fn corpus_digest(corpus: &[Waveform]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for w in corpus {
        hasher.update(w.sample_rate().to_le_bytes());
        hasher.update((w.len() as u64).to_le_bytes());
        for s in w.samples() {
            hasher.update(s.to_le_bytes());
        }
    }
    hasher.finalize().into()
}

/// One entry per frame.
pub fn full_codebook(frames: &[ResidualFrame], sample_rate: u32, digest: [u8; 32]) -> Result<Codebook> {
    if frames.is_empty() {
        return Err(Error::invalid("cannot build a codebook from zero frames"));
    }
    let keys = rn_all(frames)?;
    let entries = keys
        .into_iter()
        .zip(frames)
        .map(|(key, frame)| CodebookEntry { key, frame: frame.clone() })
        .collect();
    Codebook::new(entries, CodebookKind::Full, CodebookMeta { sample_rate, k: 0, n: 0, digest })
}

pub(crate) fn rn_all(frames: &[ResidualFrame]) -> Result<Vec<RnFrame>> {
    frames.par_iter().map(rn).collect()
}

/// Clusters RN signatures; see [`kmeans::kmeans`].
pub fn cluster(keys: &[RnFrame], k: usize, seed: u64) -> Result<KMeans<RN_LEN>> {
    let points: Vec<[f64; RN_LEN]> = keys.iter().map(|r| *r.coeffs()).collect();
    kmeans::kmeans(&points, k, seed)
}

/// For every centroid, takes its `n` nearest frames by RN distance and keeps
/// the one with the longest period. Ties on period go to the nearer frame,
/// then to the lower source id.
pub fn compress(
    centroids: &[[f64; RN_LEN]],
    frames: &[ResidualFrame],
    n: usize,
    sample_rate: u32,
    digest: [u8; 32],
) -> Result<Codebook> {
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    if frames.len() < n {
        return Err(Error::TooFewFrames { found: frames.len(), needed: n });
    }
    if centroids.is_empty() {
        return Err(Error::invalid("no centroids to compress against"));
    }
    let keys = rn_all(frames)?;
    let picks: Vec<usize> = centroids
        .par_iter()
        .map(|c| {
            let mut ranked: Vec<(f64, usize)> =
                keys.iter().enumerate().map(|(i, k)| (mean_square(k.coeffs(), c), i)).collect();
            let by_distance = |a: &(f64, usize), b: &(f64, usize)| {
                a.0.total_cmp(&b.0).then_with(|| frames[a.1].source.cmp(&frames[b.1].source))
            };
            if ranked.len() > n {
                ranked.select_nth_unstable_by(n - 1, by_distance);
                ranked.truncate(n);
            }
            ranked
                .iter()
                .min_by(|a, b| {
                    frames[b.1]
                        .period
                        .cmp(&frames[a.1].period)
                        .then_with(|| by_distance(a, b))
                })
                .map(|&(_, i)| i)
                .expect("n >= 1 candidates")
        })
        .collect();
    let entries = picks
        .into_iter()
        .map(|i| CodebookEntry { key: keys[i], frame: frames[i].clone() })
        .collect();
    let meta = CodebookMeta { sample_rate, k: centroids.len() as u32, n: n as u32, digest };
    Codebook::new(entries, CodebookKind::Compressed, meta)
}
