//! Source signal construction from target parameters.
//!
//! Voiced events pick the codebook frame whose RN key is nearest to the
//! target, stretch it to the target period, rescale it to the target energy
//! and overlap-add it at the event position. Unvoiced spans receive white
//! noise of matching energy. The pulse baseline replaces each voiced frame
//! by one energy-matched impulse.
//!
//! The track's events partition the time axis: event `i` owns the samples
//! between the midpoints to its neighbours. Runs of voiced events form
//! voiced spans (overlap-added frames are confined to them), runs of
//! unvoiced events form unvoiced spans (noise only).

use crate::codebook::{rn_distance, Codebook, CodebookEntry, ResidualFrame, RnFrame};
use crate::dsp::{energy, hann_values, resample_samples, scale_samples_to_energy, Frame, Waveform};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::ops::Range;

/// Sign applied to the canonical-polarity excitation to match the source
/// recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    #[default]
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Voiced {
        position: usize,
        /// Samples.
        period: usize,
        /// Hann-weighted sum of squares over the two periods around `position`.
        energy: f64,
        target: RnFrame,
    },
    Unvoiced {
        position: usize,
        /// Sum of squares over the samples this event owns.
        energy: f64,
    },
}

impl Event {
    pub fn position(&self) -> usize {
        match self {
            Event::Voiced { position, .. } | Event::Unvoiced { position, .. } => *position,
        }
    }

    pub fn energy(&self) -> f64 {
        match self {
            Event::Voiced { energy, .. } | Event::Unvoiced { energy, .. } => *energy,
        }
    }

    pub fn is_voiced(&self) -> bool {
        matches!(self, Event::Voiced { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetTrack {
    events: Vec<Event>,
    total_length: usize,
    sample_rate: u32,
    polarity: Polarity,
}

impl TargetTrack {
    pub fn new(events: Vec<Event>, total_length: usize, sample_rate: u32, polarity: Polarity) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if events.windows(2).any(|w| w[0].position() >= w[1].position()) {
            return Err(Error::invalid("event positions must be strictly increasing"));
        }
        if let Some(e) = events.last() {
            if e.position() >= total_length {
                return Err(Error::invalid(format!(
                    "event at {} beyond track length {total_length}",
                    e.position()
                )));
            }
        }
        for e in &events {
            if !(e.energy().is_finite() && e.energy() >= 0.0) {
                return Err(Error::invalid(format!("event at {} has invalid energy", e.position())));
            }
            if let Event::Voiced { period, position, .. } = e {
                if *period == 0 {
                    return Err(Error::invalid(format!("voiced event at {position} has zero period")));
                }
            }
        }
        Ok(TargetTrack { events, total_length, sample_rate, polarity })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn total_length(&self) -> usize {
        self.total_length
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn voiced_count(&self) -> usize {
        self.events.iter().filter(|e| e.is_voiced()).count()
    }

    /// Samples owned by each event.
    pub fn event_intervals(&self) -> Vec<Range<usize>> {
        let n = self.events.len();
        (0..n)
            .map(|i| {
                let start = if i == 0 {
                    0
                } else {
                    (self.events[i - 1].position() + self.events[i].position()).div_ceil(2)
                };
                let end = if i + 1 == n {
                    self.total_length
                } else {
                    (self.events[i].position() + self.events[i + 1].position()).div_ceil(2)
                };
                start..end
            })
            .collect()
    }

    /// Maximal runs of equally voiced events: `(voiced, event indices, samples)`.
    pub fn spans(&self) -> Vec<Span> {
        let intervals = self.event_intervals();
        let mut spans: Vec<Span> = Vec::new();
        for (i, e) in self.events.iter().enumerate() {
            match spans.last_mut() {
                Some(s) if s.voiced == e.is_voiced() => {
                    s.events.end = i + 1;
                    s.samples.end = intervals[i].end;
                }
                _ => spans.push(Span {
                    voiced: e.is_voiced(),
                    events: i..i + 1,
                    samples: intervals[i].clone(),
                }),
            }
        }
        spans
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub voiced: bool,
    pub events: Range<usize>,
    pub samples: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionRecord {
    pub event: usize,
    pub entry: usize,
    pub distance: f64,
    /// Target period over payload period; above 1 the payload is stretched.
    pub upsampling_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionReport {
    pub records: Vec<SelectionRecord>,
    /// Selections with an upsampling ratio above 1.
    pub energy_hole_count: usize,
    /// Samples dropped because a frame ran past the output buffer.
    pub clipped_samples: usize,
}

impl SelectionReport {
    pub fn mean_distance(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.records.iter().map(|r| r.distance).sum::<f64>() / self.records.len() as f64
        }
    }
}

/// Index of the entry nearest to `target`; the lowest index wins ties.
pub fn select<'a>(cb: &'a Codebook, target: &RnFrame) -> (usize, &'a CodebookEntry) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, e) in cb.entries().iter().enumerate() {
        let d = rn_distance(&e.key, target);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, &cb.entries()[best])
}

/// Stretches `f` to `2 * period` samples and rescales it to `energy`. The
/// anchor sits at `period`, i.e. the GCI stays centred.
pub fn adapt(f: &ResidualFrame, period: usize, energy: f64) -> Result<Frame> {
    if period < 2 {
        return Err(Error::invalid(format!("target period must be >= 2, got {period}")));
    }
    let stretched = resample_samples(f.samples(), 2 * period);
    let scaled = scale_samples_to_energy(&stretched, energy)?;
    Frame::new(scaled, period)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapAdd {
    pub samples: Vec<f64>,
    pub clipped: usize,
}

/// Sums frames into a buffer of `len` samples with each frame's anchor at
/// its position. Parts falling outside the buffer are dropped and counted.
pub fn overlap_add(frames: &[(Frame, usize)], len: usize) -> Result<OverlapAdd> {
    if frames.windows(2).any(|w| w[0].1 > w[1].1) {
        return Err(Error::invalid("overlap-add positions must be non-decreasing"));
    }
    let mut out = vec![0.0; len];
    let mut clipped = 0;
    for (frame, pos) in frames {
        let start = *pos as i64 - frame.anchor() as i64;
        for (j, v) in frame.samples().iter().enumerate() {
            let n = start + j as i64;
            if n >= 0 && (n as usize) < len {
                out[n as usize] += v;
            } else {
                clipped += 1;
            }
        }
    }
    Ok(OverlapAdd { samples: out, clipped })
}

/// Uniform white noise scaled to the requested sum of squares.
pub fn noise_fill(len: usize, energy: f64, seed: u64) -> Result<Vec<f64>> {
    if !(energy.is_finite() && energy >= 0.0) {
        return Err(Error::invalid(format!("noise energy must be >= 0, got {energy}")));
    }
    if len == 0 || energy == 0.0 {
        return Ok(vec![0.0; len]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    scale_samples_to_energy(&raw, energy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcitationMode {
    Codebook,
    Pulse,
}

/// Hann-weighted energy over the two periods centred on `position`, the
/// measure carried by voiced events.
pub fn local_energy(x: &[f64], position: usize, period: usize) -> f64 {
    let w = hann_values(2 * period);
    let start = position as i64 - period as i64;
    w.iter()
        .enumerate()
        .map(|(j, h)| {
            let n = start + j as i64;
            if n >= 0 && (n as usize) < x.len() {
                let v = h * x[n as usize];
                v * v
            } else {
                0.0
            }
        })
        .sum()
}

pub fn build_excitation(
    t: &TargetTrack,
    cb: Option<&Codebook>,
    mode: ExcitationMode,
    seed: u64,
) -> Result<(Waveform, SelectionReport)> {
    let voiced: Vec<(usize, &Event)> = t.events.iter().enumerate().filter(|(_, e)| e.is_voiced()).collect();
    let cb = match (mode, cb) {
        (ExcitationMode::Codebook, None) if !voiced.is_empty() => {
            return Err(Error::invalid("codebook excitation requires a codebook"));
        }
        (_, cb) => cb,
    };
    if let Some(cb) = cb {
        if mode == ExcitationMode::Codebook && cb.sample_rate() != t.sample_rate {
            return Err(Error::invalid(format!(
                "codebook sample rate {} differs from track sample rate {}",
                cb.sample_rate(),
                t.sample_rate
            )));
        }
    }

    let mut report = SelectionReport::default();
    let placed: Vec<(Frame, usize)> = match mode {
        ExcitationMode::Codebook if voiced.is_empty() => Vec::new(),
        ExcitationMode::Codebook => {
            let cb = cb.expect("checked above");
            let picks: Vec<Result<((Frame, usize), SelectionRecord)>> = voiced
                .par_iter()
                .map(|&(idx, e)| {
                    let Event::Voiced { position, period, energy, target } = e else { unreachable!() };
                    let (entry, chosen) = select(cb, target);
                    let frame = adapt(&chosen.frame, *period, *energy)?;
                    let record = SelectionRecord {
                        event: idx,
                        entry,
                        distance: rn_distance(&chosen.key, target),
                        upsampling_ratio: *period as f64 / chosen.frame.period() as f64,
                    };
                    Ok(((frame, *position), record))
                })
                .collect();
            let mut placed = Vec::with_capacity(picks.len());
            for p in picks {
                let (frame, record) = p?;
                placed.push(frame);
                report.records.push(record);
            }
            report.energy_hole_count = report.records.iter().filter(|r| r.upsampling_ratio > 1.0).count();
            placed
        }
        ExcitationMode::Pulse => voiced
            .iter()
            .map(|&(_, e)| {
                let Event::Voiced { position, period, energy, .. } = e else { unreachable!() };
                let p = (*period).max(2);
                let centre = hann_values(2 * p)[p];
                let mut samples = vec![0.0; 2 * p];
                samples[p] = energy.sqrt() / centre;
                Ok((Frame::new(samples, p)?, *position))
            })
            .collect::<Result<_>>()?,
    };

    let ola = overlap_add(&placed, t.total_length)?;
    report.clipped_samples = ola.clipped;
    let mut out = vec![0.0; t.total_length];
    for (k, span) in t.spans().iter().enumerate() {
        let range = span.samples.clone();
        if span.voiced {
            out[range.clone()].copy_from_slice(&ola.samples[range]);
        } else {
            let target: f64 = t.events[span.events.clone()].iter().map(Event::energy).sum();
            let noise = noise_fill(range.len(), target, seed.wrapping_add(k as u64))?;
            out[range].copy_from_slice(&noise);
        }
    }
    Ok((Waveform::new(out, t.sample_rate)?, report))
}

/// Realized energy of every unvoiced span of `x`, paired with its target.
pub fn unvoiced_span_energies(t: &TargetTrack, x: &[f64]) -> Vec<(f64, f64)> {
    t.spans()
        .iter()
        .filter(|s| !s.voiced)
        .map(|s| {
            let target: f64 = t.events[s.events.clone()].iter().map(Event::energy).sum();
            (energy(&x[s.samples.clone()]), target)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{full_codebook, rn, SourceId, RN_LEN};
    use rand::Rng;
    use std::f64::consts::PI;

    fn pulse_frame(period: usize, skew: f64, id: u32) -> ResidualFrame {
        let n = 2 * period;
        let w = hann_values(n);
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                (-(-((t - 0.5) / 0.08).powi(2)).exp() + skew * (2.0 * PI * t).sin()) * w[i]
            })
            .collect();
        let e = energy(&samples);
        ResidualFrame::new(samples, period, e, SourceId { utterance: 0, gci: id }).unwrap()
    }

    fn codebook(frames: &[ResidualFrame]) -> Codebook {
        full_codebook(frames, 16000, [0; 32]).unwrap()
    }

    fn random_rn(rng: &mut ChaCha8Rng) -> RnFrame {
        RnFrame::normalized(std::array::from_fn(|_| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn select_single_and_exact() {
        let frames: Vec<ResidualFrame> = (0..5).map(|i| pulse_frame(40 + 10 * i, 0.1 * i as f64, i as u32)).collect();
        let cb = codebook(&frames[..1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select(&cb, &random_rn(&mut rng)).0, 0);
        let cb = codebook(&frames);
        let key = cb.entries()[3].key;
        let (i, e) = select(&cb, &key);
        assert_eq!(i, 3);
        assert_eq!(rn_distance(&e.key, &key), 0.0);
    }

    #[test]
    fn select_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frames: Vec<ResidualFrame> = (0..1000)
            .map(|i| pulse_frame(30 + i % 50, rng.random_range(-1.0..1.0), i as u32))
            .collect();
        let cb = codebook(&frames);
        for _ in 0..50 {
            let target = random_rn(&mut rng);
            let mut best = (f64::INFINITY, 0);
            for (i, e) in cb.entries().iter().enumerate() {
                let mut d = 0.0;
                for j in 0..RN_LEN {
                    d += (e.key.coeffs()[j] - target.coeffs()[j]).powi(2);
                }
                if d / 20.0 < best.0 {
                    best = (d / 20.0, i);
                }
            }
            assert_eq!(select(&cb, &target).0, best.1);
        }
    }

    #[test]
    fn adapt_identity_and_lengths() {
        let f = pulse_frame(60, 0.2, 0);
        let same = adapt(&f, 60, f.energy()).unwrap();
        let dev = same.samples().iter().zip(f.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev <= 1e-6);
        assert_eq!(same.anchor(), 60);
        let half = adapt(&f, 30, 2.0).unwrap();
        assert_eq!(half.len(), 60);
        assert!((energy(half.samples()) - 2.0).abs() <= 1e-9 * 2.0);
        assert!(adapt(&f, 1, 1.0).is_err());
    }

    #[test]
    fn adapt_preserves_shape() {
        let f = pulse_frame(80, 0.4, 0);
        let reference = rn(&f).unwrap();
        for period in [40, 55, 80, 100, 160] {
            let g = adapt(&f, period, 1.0).unwrap();
            let r = crate::codebook::rn_of(g.samples()).unwrap();
            assert!(rn_distance(&r, &reference) <= 0.05, "period {period}");
        }
    }

    #[test]
    fn overlap_add_cases() {
        let f = Frame::new(vec![1.0, 2.0, 3.0, 2.0], 2).unwrap();
        let one = overlap_add(&[(f.clone(), 5)], 10).unwrap();
        assert_eq!(one.samples, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!(overlap_add(&[], 4).unwrap().samples, vec![0.0; 4]);
        let edge = overlap_add(&[(f, 0)], 10).unwrap();
        assert_eq!(edge.clipped, 2);
    }

    #[test]
    fn periodic_frames_sum_periodically() {
        let t = 50;
        let f = adapt(&pulse_frame(t, 0.3, 0), t, 1.0).unwrap();
        let frames: Vec<(Frame, usize)> = (0..6).map(|i| (f.clone(), 100 + i * t)).collect();
        let out = overlap_add(&frames, 600).unwrap().samples;
        // Direct summation oracle.
        let mut direct = vec![0.0; 600];
        for i in 0..6 {
            for j in 0..2 * t {
                direct[100 + i * t + j - t] += f.samples()[j];
            }
        }
        assert_eq!(out, direct);
        for n in 150..300 {
            assert!((out[n] - out[n + t]).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_energy_and_seeding() {
        assert_eq!(noise_fill(100, 0.0, 1).unwrap(), vec![0.0; 100]);
        let a = noise_fill(1000, 1.0, 5).unwrap();
        assert!((energy(&a) - 1.0).abs() <= 1e-9);
        assert_eq!(a, noise_fill(1000, 1.0, 5).unwrap());
        let b = noise_fill(1000, 1.0, 6).unwrap();
        let corr: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!(corr.abs() < 0.1, "{corr}");
        assert!(noise_fill(10, -1.0, 0).is_err());
    }

    fn voiced(position: usize, period: usize, energy: f64, target: RnFrame) -> Event {
        Event::Voiced { position, period, energy, target }
    }

    #[test]
    fn all_unvoiced_is_one_noise_span() {
        let events = vec![
            Event::Unvoiced { position: 100, energy: 0.5 },
            Event::Unvoiced { position: 300, energy: 1.5 },
        ];
        let t = TargetTrack::new(events, 1000, 16000, Polarity::Positive).unwrap();
        let (w, report) = build_excitation(&t, None, ExcitationMode::Codebook, 9).unwrap();
        assert_eq!(w.samples(), &noise_fill(1000, 2.0, 9).unwrap()[..]);
        assert!(report.records.is_empty());
    }

    #[test]
    fn single_voiced_event_places_adapted_entry() {
        let f = pulse_frame(50, 0.1, 0);
        let cb = codebook(std::slice::from_ref(&f));
        let target = cb.entries()[0].key;
        let t = TargetTrack::new(vec![voiced(400, 70, 3.0, target)], 1000, 16000, Polarity::Positive).unwrap();
        let (w, report) = build_excitation(&t, Some(&cb), ExcitationMode::Codebook, 0).unwrap();
        let adapted = adapt(&f, 70, 3.0).unwrap();
        let mut expect = vec![0.0; 1000];
        expect[330..470].copy_from_slice(adapted.samples());
        assert_eq!(w.samples(), &expect[..]);
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.energy_hole_count, 1);
        assert!((report.records[0].upsampling_ratio - 1.4).abs() < 1e-12);
    }

    #[test]
    fn codebook_mode_needs_codebook() {
        let key = rn(&pulse_frame(50, 0.0, 0)).unwrap();
        let t = TargetTrack::new(vec![voiced(400, 50, 1.0, key)], 1000, 16000, Polarity::Positive).unwrap();
        assert!(build_excitation(&t, None, ExcitationMode::Codebook, 0).is_err());
        assert!(build_excitation(&t, None, ExcitationMode::Pulse, 0).is_ok());
    }

    #[test]
    fn pulse_mode_matches_local_energy() {
        let key = rn(&pulse_frame(50, 0.0, 0)).unwrap();
        let events: Vec<Event> = (0..10).map(|i| voiced(200 + i * 80, 80, 2.0 + i as f64, key)).collect();
        let t = TargetTrack::new(events, 1400, 16000, Polarity::Positive).unwrap();
        let (w, report) = build_excitation(&t, None, ExcitationMode::Pulse, 0).unwrap();
        assert!(report.records.is_empty());
        for (i, e) in t.events().iter().enumerate() {
            let got = local_energy(w.samples(), e.position(), 80);
            assert!((got - (2.0 + i as f64)).abs() <= 1e-9 * got);
        }
    }

    #[test]
    fn track_validation() {
        let ev = |p| Event::Unvoiced { position: p, energy: 1.0 };
        assert!(TargetTrack::new(vec![ev(5), ev(5)], 10, 16000, Polarity::Positive).is_err());
        assert!(TargetTrack::new(vec![ev(10)], 10, 16000, Polarity::Positive).is_err());
        assert!(TargetTrack::new(vec![Event::Unvoiced { position: 1, energy: -1.0 }], 10, 16000, Polarity::Positive).is_err());
    }

    #[test]
    fn spans_partition_the_track() {
        let key = rn(&pulse_frame(50, 0.0, 0)).unwrap();
        let events = vec![
            Event::Unvoiced { position: 0, energy: 1.0 },
            Event::Unvoiced { position: 80, energy: 1.0 },
            voiced(200, 50, 1.0, key),
            voiced(250, 50, 1.0, key),
            Event::Unvoiced { position: 400, energy: 1.0 },
        ];
        let t = TargetTrack::new(events, 500, 16000, Polarity::Positive).unwrap();
        let spans = t.spans();
        assert_eq!(spans.len(), 3);
        assert_eq!(spans[0].samples, 0..140);
        assert_eq!(spans[1].samples, 140..325);
        assert_eq!(spans[2].samples, 325..500);
        assert_eq!(spans[1].events, 2..4);
    }
}
