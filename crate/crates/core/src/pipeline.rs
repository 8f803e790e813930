//! Analysis, codebook training, copy-synthesis and objective metrics.

use crate::codebook::{
    cluster, compress, corpus_digest, extract_frames, full_codebook, rn, rn_all, Codebook, CodebookKind,
    ResidualFrame, RnFrame,
};
use crate::dsp::{energy, hann_values, Waveform};
use crate::envelope::{estimate_envelope, inverse_filter, synth_filter, EnvelopeTrack};
use crate::error::{Error, Result};
use crate::excitation::{build_excitation, Event, ExcitationMode, Polarity, SelectionReport, TargetTrack};
use crate::pca::{fit_pca, PcaModel};
use crate::pitch::{detect_gci, estimate_f0_with, F0Config, F0Track, GciList};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Config {
    pub sample_rate: u32,
    pub f0: F0Config,
    pub lpc_order: usize,
    /// Envelope analysis window, samples.
    pub lpc_window: usize,
    /// Spacing of unvoiced analysis points, samples.
    pub unvoiced_hop: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            sample_rate: 16000,
            f0: F0Config::default(),
            lpc_order: 24,
            lpc_window: 400,
            unvoiced_hop: 80,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub track: TargetTrack,
    pub envelope: EnvelopeTrack,
    /// Canonical-polarity residual (dominant GCI peaks negative).
    pub residual: Waveform,
    pub gcis: GciList,
    pub f0: F0Track,
    /// One per voiced event, in order.
    pub frames: Vec<ResidualFrame>,
}

/// Two passes: a fixed-grid envelope yields a residual for pitch marking;
/// the final envelope is then estimated at the event positions themselves
/// so that analysis and synthesis switch filters at the same instants.
pub fn analyze(w: &Waveform, cfg: &Config) -> Result<Analysis> {
    analyze_utterance(w, cfg, 0)
}

fn analyze_utterance(w: &Waveform, cfg: &Config, utterance: u32) -> Result<Analysis> {
    if w.sample_rate() != cfg.sample_rate {
        return Err(Error::invalid(format!(
            "waveform sample rate {} differs from configured {}",
            w.sample_rate(),
            cfg.sample_rate
        )));
    }
    if w.is_empty() {
        return Err(Error::invalid("cannot analyze an empty waveform"));
    }
    if cfg.unvoiced_hop == 0 {
        return Err(Error::invalid("unvoiced hop must be positive"));
    }
    let len = w.len();
    let f0 = estimate_f0_with(w, &cfg.f0)?;
    let grid: Vec<usize> = (0..len).step_by(cfg.unvoiced_hop).collect();
    let coarse = estimate_envelope(w, &grid, cfg.lpc_order, cfg.lpc_window)?;
    let coarse_residual = inverse_filter(w, &coarse)?;
    let gcis = detect_gci(&coarse_residual, w, &f0)?;

    let probe = extract_frames(&coarse_residual, &gcis, &f0, utterance)?;
    let voiced: Vec<(usize, usize)> = probe
        .frames
        .iter()
        .zip(&probe.gci_indices)
        .map(|(f, &i)| (gcis.positions()[i], f.period()))
        .collect();
    let polarity = polarity_of(coarse_residual.samples(), voiced.iter().map(|v| v.0));

    let positions = event_positions(&voiced, len, cfg.unvoiced_hop);
    let envelope = estimate_envelope(w, &positions, cfg.lpc_order, cfg.lpc_window)?;
    let residual = inverse_filter(w, &envelope)?.scaled(polarity.sign())?;
    let extraction = extract_frames(&residual, &gcis, &f0, utterance)?;
    debug_assert_eq!(extraction.gci_indices, probe.gci_indices);

    let mut frames_by_pos = extraction
        .frames
        .into_iter()
        .zip(&extraction.gci_indices)
        .map(|(f, &i)| (gcis.positions()[i], f))
        .peekable();
    let mut events = Vec::with_capacity(positions.len());
    let mut frames = Vec::new();
    for &p in &positions {
        match frames_by_pos.next_if(|(g, _)| *g == p) {
            Some((_, frame)) => match rn(&frame) {
                Ok(target) => {
                    events.push(Event::Voiced { position: p, period: frame.period(), energy: frame.energy(), target });
                    frames.push(frame);
                }
                Err(Error::DegenerateFrame(_)) => events.push(Event::Unvoiced { position: p, energy: 0.0 }),
                Err(e) => return Err(e),
            },
            None => events.push(Event::Unvoiced { position: p, energy: 0.0 }),
        }
    }
    let skeleton = TargetTrack::new(events, len, w.sample_rate(), polarity)?;
    let x = residual.samples();
    let events = skeleton
        .events()
        .iter()
        .zip(skeleton.event_intervals())
        .map(|(e, span)| match e {
            Event::Unvoiced { position, .. } => Event::Unvoiced { position: *position, energy: energy(&x[span]) },
            voiced => voiced.clone(),
        })
        .collect();
    let track = TargetTrack::new(events, len, w.sample_rate(), polarity)?;
    Ok(Analysis { track, envelope, residual, gcis, f0, frames })
}

/// Sign that makes the majority of residual peaks at `marks` negative.
fn polarity_of(residual: &[f64], marks: impl Iterator<Item = usize>) -> Polarity {
    let balance: i64 = marks.map(|g| if residual[g] > 0.0 { 1 } else if residual[g] < 0.0 { -1 } else { 0 }).sum();
    if balance > 0 {
        Polarity::Negative
    } else {
        Polarity::Positive
    }
}

/// Voiced GCIs plus the grid points not covered by any voiced frame.
fn event_positions(voiced: &[(usize, usize)], len: usize, hop: usize) -> Vec<usize> {
    let covered = |n: usize| {
        let i = voiced.partition_point(|v| v.0 < n);
        voiced[i.saturating_sub(3)..(i + 3).min(voiced.len())]
            .iter()
            .any(|&(g, t)| g.abs_diff(n) <= t)
    };
    let mut out: Vec<usize> = voiced.iter().map(|v| v.0).collect();
    out.extend((0..len).step_by(hop).filter(|&n| !covered(n)));
    out.sort_unstable();
    out
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub full: Codebook,
    pub compressed: Codebook,
    pub pca: Option<PcaModel>,
    /// Frames pooled after the energy floor.
    pub frame_count: usize,
}

/// Frames quieter than this fraction of the median frame energy are dropped.
pub const TRAINING_ENERGY_FLOOR: f64 = 1e-6;

pub fn train(corpus: &[Waveform], k: usize, n: usize, seed: u64, cfg: &Config) -> Result<Trained> {
    let analyses: Vec<Vec<ResidualFrame>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, w)| analyze_utterance(w, cfg, i as u32).map(|a| a.frames))
        .collect::<Result<_>>()?;
    let mut frames: Vec<ResidualFrame> = analyses.into_iter().flatten().collect();
    if !frames.is_empty() {
        let mut energies: Vec<f64> = frames.iter().map(|f| f.energy()).collect();
        energies.sort_by(f64::total_cmp);
        let floor = energies[energies.len() / 2] * TRAINING_ENERGY_FLOOR;
        frames.retain(|f| f.energy() > floor);
    }
    let needed = k.max(n).max(1);
    if frames.len() < needed {
        return Err(Error::TooFewFrames { found: frames.len(), needed });
    }
    let digest = corpus_digest(corpus);
    let keys = rn_all(&frames)?;
    let pca = if keys.len() > crate::codebook::RN_LEN { Some(fit_pca(&keys)?) } else { None };
    let km = cluster(&keys, k, seed)?;
    let compressed = compress(&km.centroids, &frames, n, cfg.sample_rate, digest)?.with_pca(pca.clone());
    let full = full_codebook(&frames, cfg.sample_rate, digest)?.with_pca(pca.clone());
    Ok(Trained { full, compressed, pca, frame_count: frames.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisMode {
    Full,
    Compressed,
    Pulse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub segmental_snr_db: f64,
    /// Segmental SNR over frames inside voiced runs only.
    pub voiced_segmental_snr_db: f64,
    pub log_spectral_distortion_db: f64,
    pub mean_rn_selection_error: f64,
    pub energy_hole_count: usize,
    pub voiced_frame_count: usize,
    pub unvoiced_span_count: usize,
}

impl MetricsReport {
    /// `name\tvalue` lines.
    pub fn to_text(&self) -> String {
        format!(
            "segmental_snr_db\t{:?}\nvoiced_segmental_snr_db\t{:?}\nlog_spectral_distortion_db\t{:?}\n\
             mean_rn_selection_error\t{:?}\nenergy_hole_count\t{}\nvoiced_frame_count\t{}\nunvoiced_span_count\t{}\n",
            self.segmental_snr_db,
            self.voiced_segmental_snr_db,
            self.log_spectral_distortion_db,
            self.mean_rn_selection_error,
            self.energy_hole_count,
            self.voiced_frame_count,
            self.unvoiced_span_count
        )
    }
}

/// Turns a track and envelope into speech.
pub fn synthesize(
    track: &TargetTrack,
    envelope: &EnvelopeTrack,
    cb: Option<&Codebook>,
    mode: ExcitationMode,
    seed: u64,
) -> Result<(Waveform, SelectionReport)> {
    let (excitation, report) = build_excitation(track, cb, mode, seed)?;
    let excitation = excitation.scaled(track.polarity().sign())?;
    Ok((synth_filter(&excitation, envelope)?, report))
}

pub fn copy_synthesis(
    w: &Waveform,
    cb: Option<&Codebook>,
    mode: SynthesisMode,
    seed: u64,
    cfg: &Config,
) -> Result<(Waveform, MetricsReport)> {
    let excitation_mode = match (mode, cb.map(Codebook::kind)) {
        (SynthesisMode::Full, Some(CodebookKind::Full)) | (SynthesisMode::Compressed, Some(CodebookKind::Compressed)) => {
            ExcitationMode::Codebook
        }
        (SynthesisMode::Pulse, None) => ExcitationMode::Pulse,
        (mode, kind) => {
            return Err(Error::invalid(format!("mode {mode:?} cannot use codebook kind {kind:?}")));
        }
    };
    let a = analyze(w, cfg)?;
    let (out, selection) = synthesize(&a.track, &a.envelope, cb, excitation_mode, seed)?;
    let regions: Vec<Range<usize>> = a
        .track
        .spans()
        .iter()
        .filter(|s| s.voiced)
        .map(|s| a.track.events()[s.events.start].position()..a.track.events()[s.events.end - 1].position() + 1)
        .collect();
    let base = compare_metrics(w, &out)?;
    let report = MetricsReport {
        segmental_snr_db: base.segmental_snr_db,
        voiced_segmental_snr_db: segmental_snr_in(w.samples(), out.samples(), &regions),
        log_spectral_distortion_db: base.log_spectral_distortion_db,
        mean_rn_selection_error: selection.mean_distance(),
        energy_hole_count: selection.energy_hole_count,
        voiced_frame_count: a.track.voiced_count(),
        unvoiced_span_count: a.track.spans().iter().filter(|s| !s.voiced).count(),
    };
    Ok((out, report))
}

/// Frame length for segmental SNR and spectral distortion (20 ms at 16 kHz).
pub const METRIC_FRAME: usize = 320;
pub const METRIC_FFT: usize = 512;
/// Per-frame SNR ceiling, dB.
pub const SNR_CEILING_DB: f64 = 80.0;
/// Frames below this level relative to the reference peak are skipped.
pub const SILENCE_DB: f64 = -60.0;
/// Magnitude floor of the spectra, -80 dB.
pub const SPECTRUM_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub segmental_snr_db: f64,
    pub log_spectral_distortion_db: f64,
}

pub fn compare_metrics(reference: &Waveform, test: &Waveform) -> Result<Comparison> {
    if reference.len() != test.len() || reference.sample_rate() != test.sample_rate() {
        return Err(Error::invalid(format!(
            "cannot compare {} samples at {} Hz with {} samples at {} Hz",
            reference.len(),
            reference.sample_rate(),
            test.len(),
            test.sample_rate()
        )));
    }
    let (r, t) = (reference.samples(), test.samples());
    Ok(Comparison {
        segmental_snr_db: segmental_snr_in(r, t, &[0..r.len()]),
        log_spectral_distortion_db: log_spectral_distortion(r, t),
    })
}

/// Mean per-frame SNR over the whole frames inside `regions`, skipping frames
/// of the reference below [`SILENCE_DB`] of its peak. Zero when no frame
/// qualifies.
pub fn segmental_snr_in(r: &[f64], t: &[f64], regions: &[Range<usize>]) -> f64 {
    let peak = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let silence = peak * peak * 10f64.powf(SILENCE_DB / 10.0);
    let mut sum = 0.0;
    let mut count = 0usize;
    for region in regions {
        let mut start = region.start;
        while start + METRIC_FRAME <= region.end.min(r.len()) {
            let span = start..start + METRIC_FRAME;
            let signal = energy(&r[span.clone()]);
            if signal / METRIC_FRAME as f64 > silence && signal > 0.0 {
                let noise: f64 = r[span.clone()].iter().zip(&t[span]).map(|(a, b)| (a - b) * (a - b)).sum();
                let snr = if noise == 0.0 { SNR_CEILING_DB } else { (10.0 * (signal / noise).log10()).min(SNR_CEILING_DB) };
                sum += snr;
                count += 1;
            }
            start += METRIC_FRAME;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean over frames of the RMS difference of the dB magnitude spectra.
pub fn log_spectral_distortion(r: &[f64], t: &[f64]) -> f64 {
    let frames = r.len() / METRIC_FRAME;
    if frames == 0 {
        return 0.0;
    }
    let window = hann_values(METRIC_FRAME);
    let fft = FftPlanner::new().plan_fft_forward(METRIC_FFT);
    let bins = METRIC_FFT / 2 + 1;
    let spectrum = |x: &[f64]| -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); METRIC_FFT];
        for (b, (v, w)) in buf.iter_mut().zip(x.iter().zip(&window)) {
            b.re = v * w;
        }
        fft.process(&mut buf);
        buf[..bins].iter().map(|c| 20.0 * c.norm().max(SPECTRUM_FLOOR).log10()).collect()
    };
    let total: f64 = (0..frames)
        .map(|f| {
            let span = f * METRIC_FRAME..(f + 1) * METRIC_FRAME;
            let (a, b) = (spectrum(&r[span.clone()]), spectrum(&t[span]));
            let ms = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / bins as f64;
            ms.sqrt()
        })
        .sum();
    total / frames as f64
}

/// RN signatures of a set of frames, for callers outside the crate.
pub fn rn_keys(frames: &[ResidualFrame]) -> Result<Vec<RnFrame>> {
    rn_all(frames)
}
