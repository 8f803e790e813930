//! Synthetic voiced speech with known glottal closure instants.
//!
//! A glottal flow derivative (raised-cosine opening, quarter-cosine closing,
//! exponential return phase) drives a cascade of formant resonators whose
//! targets glide between vowels. Fricative noise and pauses break the voiced
//! stretches. Every pulse's closure instant is returned as ground truth.

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::ops::Range;

/// Formant frequencies (Hz) of a few reference vowels.
const VOWELS: [[f64; 5]; 5] = [
    [730.0, 1090.0, 2440.0, 3400.0, 4200.0],
    [270.0, 2290.0, 3010.0, 3500.0, 4300.0],
    [300.0, 870.0, 2240.0, 3300.0, 4200.0],
    [530.0, 1840.0, 2480.0, 3400.0, 4200.0],
    [570.0, 840.0, 2410.0, 3300.0, 4200.0],
];
const BANDWIDTHS: [f64; 5] = [60.0, 90.0, 120.0, 175.0, 250.0];
/// Resonator coefficient update interval, in seconds.
const CONTROL_STEP: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voice {
    /// Mean fundamental frequency, Hz.
    pub f0: f64,
    /// Open phase duration over the period.
    pub open_quotient: f64,
    /// Opening over closing duration.
    pub speed_quotient: f64,
    /// Return phase time constant over the period.
    pub return_quotient: f64,
    /// Vocal tract scaling of all formants.
    pub formant_scale: f64,
    /// Relative period perturbation (uniform, +/-).
    pub jitter: f64,
    /// Relative amplitude perturbation (uniform, +/-).
    pub shimmer: f64,
    /// Aspiration noise level relative to the pulse peak.
    pub aspiration: f64,
}

impl Default for Voice {
    fn default() -> Self {
        Voice {
            f0: 120.0,
            open_quotient: 0.6,
            speed_quotient: 2.5,
            return_quotient: 0.02,
            formant_scale: 1.0,
            jitter: 0.01,
            shimmer: 0.04,
            aspiration: 0.02,
        }
    }
}

impl Voice {
    pub fn random(rng: &mut impl Rng) -> Self {
        Voice {
            f0: rng.random_range(85.0..230.0),
            open_quotient: rng.random_range(0.45..0.75),
            speed_quotient: rng.random_range(1.5..3.5),
            return_quotient: rng.random_range(0.01..0.04),
            formant_scale: rng.random_range(0.9..1.2),
            ..Voice::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.f0 > 0.0
            && (0.1..0.95).contains(&self.open_quotient)
            && self.speed_quotient > 0.0
            && self.return_quotient > 0.0
            && self.formant_scale > 0.0
            && (0.0..0.5).contains(&self.jitter)
            && (0.0..1.0).contains(&self.shimmer)
            && self.aspiration >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid voice parameters: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub waveform: Waveform,
    /// Closure instant of every glottal pulse, rounded to samples.
    pub gcis: Vec<usize>,
    /// Sample ranges of the voiced stretches.
    pub voiced: Vec<Range<usize>>,
}

/// Glottal flow derivative at time `t` (samples since pulse onset) of a pulse
/// with period `period`. The minimum, -1, falls on the closure instant.
pub fn glottal_pulse(t: f64, period: f64, voice: &Voice) -> f64 {
    let te = voice.open_quotient * period;
    let tp = te * voice.speed_quotient / (1.0 + voice.speed_quotient);
    let tc = te - tp;
    let ta = voice.return_quotient * period;
    if t < 0.0 || t >= period {
        0.0
    } else if t < tp {
        // Scaled so the closing phase reaches -1.
        (tc / tp) * (PI * t / tp).sin()
    } else if t < te {
        -(PI * (t - tp) / (2.0 * tc)).sin()
    } else {
        -(-(t - te) / ta).exp()
    }
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Silence,
    Voiced,
    Fricative,
}

fn plan(duration: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<(Segment, Range<usize>)> {
    let secs = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.random_range(lo..hi) * fs) as usize;
    let mut out = Vec::new();
    let mut at = 0;
    let mut push = |kind, len: usize, at: &mut usize| {
        out.push((kind, *at..*at + len));
        *at += len;
    };
    push(Segment::Silence, secs(rng, 0.08, 0.2), &mut at);
    while at < duration {
        push(Segment::Voiced, secs(rng, 0.15, 0.45), &mut at);
        let r: f64 = rng.random();
        if r < 0.5 {
            push(Segment::Fricative, secs(rng, 0.05, 0.15), &mut at);
        } else if r < 0.8 {
            push(Segment::Silence, secs(rng, 0.04, 0.1), &mut at);
        }
    }
    push(Segment::Silence, secs(rng, 0.08, 0.2), &mut at);
    out
}

struct Resonator {
    y1: f64,
    y2: f64,
    a1: f64,
    a2: f64,
    b0: f64,
}

impl Resonator {
    fn new() -> Self {
        Resonator { y1: 0.0, y2: 0.0, a1: 0.0, a2: 0.0, b0: 1.0 }
    }

    fn tune(&mut self, freq: f64, bandwidth: f64, fs: f64) {
        let r = (-PI * bandwidth / fs).exp();
        self.a1 = 2.0 * r * (2.0 * PI * freq / fs).cos();
        self.a2 = r * r;
        self.b0 = 1.0 - self.a1 + self.a2;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.a1 * self.y1 - self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn ramp(n: usize, range: &Range<usize>, fade: usize) -> f64 {
    let from_start = n.saturating_sub(range.start) as f64;
    let to_end = range.end.saturating_sub(n + 1) as f64;
    let edge = from_start.min(to_end) / fade as f64;
    if edge >= 1.0 {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge).cos()
    }
}

/// One utterance of roughly `duration_secs` of speech framed by silence.
pub fn utterance(voice: &Voice, duration_secs: f64, sample_rate: u32, seed: u64) -> Result<Utterance> {
    voice.validate()?;
    if !(duration_secs > 0.0) || sample_rate == 0 {
        return Err(Error::invalid("duration and sample rate must be positive"));
    }
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segments = plan((duration_secs * fs) as usize, fs, &mut rng);
    let len = segments.last().map_or(0, |s| s.1.end);
    let fade = (0.015 * fs) as usize;
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut source = vec![0.0; len];
    let mut frication = vec![0.0; len];
    let mut gcis = Vec::new();
    let mut voiced = Vec::new();
    let step = (CONTROL_STEP * fs) as usize;
    let mut vowel = rng.random_range(0..VOWELS.len());
    let mut formants = vec![VOWELS[vowel]; len.div_ceil(step) + 1];

    for (kind, range) in &segments {
        match kind {
            Segment::Silence => {}
            Segment::Fricative => {
                let mut res = Resonator::new();
                res.tune(rng.random_range(3500.0f64..5500.0).min(0.45 * fs), 1500.0, fs);
                let level = rng.random_range(0.02..0.06);
                let mut prev = 0.0;
                for n in range.clone() {
                    let e = res.step(gauss(&mut rng));
                    frication[n] = level * ramp(n, range, fade) * (e - prev);
                    prev = e;
                }
            }
            Segment::Voiced => {
                voiced.push(range.clone());
                // Vowel targets spread over the segment, linear glides between.
                let targets: Vec<usize> = (0..rng.random_range(1..4))
                    .map(|_| {
                        vowel = (vowel + rng.random_range(1..VOWELS.len())) % VOWELS.len();
                        vowel
                    })
                    .collect();
                let first = range.start / step;
                let last = (range.end / step).min(formants.len() - 1);
                for (k, slot) in formants.iter_mut().enumerate().take(last + 1).skip(first) {
                    let pos = (k - first) as f64 / (last - first).max(1) as f64 * (targets.len() - 1) as f64;
                    let i = (pos.floor() as usize).min(targets.len() - 1);
                    let j = (i + 1).min(targets.len() - 1);
                    let frac = pos - i as f64;
                    for f in 0..5 {
                        slot[f] = VOWELS[targets[i]][f] * (1.0 - frac) + VOWELS[targets[j]][f] * frac;
                    }
                }
                let phase = rng.random_range(0.0..2.0 * PI);
                let level = rng.random_range(0.5..1.0);
                let mut onset = range.start as f64 + rng.random_range(0.0..1.0);
                loop {
                    let t = (onset - range.start as f64) / fs;
                    let rel = (onset - range.start as f64) / (range.end - range.start) as f64;
                    let f0 = voice.f0 * (1.0 + 0.08 * (2.0 * PI * 2.5 * t + phase).sin()) * (1.0 - 0.1 * rel);
                    let period = fs / f0 * (1.0 + voice.jitter * rng.random_range(-1.0..1.0));
                    if onset + period >= range.end as f64 {
                        break;
                    }
                    // Slow drift of the pulse shape within the segment.
                    let mut v = *voice;
                    v.open_quotient = (voice.open_quotient + 0.05 * (2.0 * PI * 1.3 * t + phase).cos()).clamp(0.2, 0.9);
                    let amp = level * (1.0 + voice.shimmer * rng.random_range(-1.0..1.0));
                    let start = onset.ceil() as usize;
                    let end = ((onset + period).ceil() as usize).min(range.end);
                    for n in start..end {
                        let g = glottal_pulse(n as f64 - onset, period, &v);
                        source[n] += amp * ramp(n, range, fade) * (g + voice.aspiration * gauss(&mut rng));
                    }
                    gcis.push((onset + v.open_quotient * period).round() as usize);
                    onset += period;
                }
            }
        }
    }

    let mut tract: Vec<Resonator> = (0..5).map(|_| Resonator::new()).collect();
    let mut speech = vec![0.0; len];
    for n in 0..len {
        if n % step == 0 {
            let f = formants[n / step];
            for (i, r) in tract.iter_mut().enumerate() {
                let freq = (f[i] * voice.formant_scale).min(0.45 * fs);
                r.tune(freq, BANDWIDTHS[i], fs);
            }
        }
        let mut y = source[n];
        for r in tract.iter_mut() {
            y = r.step(y);
        }
        speech[n] = y + frication[n] + 1e-5 * gauss(&mut rng);
    }
    let peak = speech.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        speech.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    Ok(Utterance { waveform: Waveform::new(speech, sample_rate)?, gcis, voiced })
}

/// `count` utterances from randomly drawn voices, generated in parallel.
pub fn corpus(count: usize, duration_secs: f64, sample_rate: u32, seed: u64) -> Result<Vec<Utterance>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let voice = Voice::random(&mut rng);
            utterance(&voice, duration_secs, sample_rate, rng.random())
        })
        .collect()
}

/// Impulse train with uniformly jittered periods driving a random stable
/// all-pole filter. The impulses are the ground-truth closure instants.
pub fn pulse_train_ar(len: usize, sample_rate: u32, period: f64, jitter: f64, seed: u64) -> Result<Utterance> {
    if period < 2.0 || !(0.0..0.5).contains(&jitter) || sample_rate == 0 {
        return Err(Error::invalid("invalid pulse train parameters"));
    }
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tract: Vec<Resonator> = (0..4)
        .map(|i| {
            let mut r = Resonator::new();
            let lo = 300.0 + 900.0 * i as f64;
            r.tune(rng.random_range(lo..lo + 800.0f64).min(0.45 * fs), rng.random_range(60.0..250.0), fs);
            r
        })
        .collect();
    let mut excitation = vec![0.0; len];
    let mut gcis = Vec::new();
    let mut at = rng.random_range(0.0..period);
    while (at.round() as usize) < len {
        let n = at.round() as usize;
        excitation[n] = -1.0;
        gcis.push(n);
        at += period * (1.0 + jitter * rng.random_range(-1.0..1.0));
    }
    let speech: Vec<f64> = excitation
        .iter()
        .map(|&x| tract.iter_mut().fold(x, |y, r| r.step(y)))
        .collect();
    let peak = speech.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let speech = speech.into_iter().map(|v| v * 0.5 / peak.max(f64::MIN_POSITIVE)).collect();
    Ok(Utterance { waveform: Waveform::new(speech, sample_rate)?, gcis, voiced: vec![0..len] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pulse_minimum_at_closure() {
        let v = Voice::default();
        let period = 133.0;
        let te = v.open_quotient * period;
        let (argmin, min) = (0..1330)
            .map(|i| i as f64 * 0.1)
            .map(|t| (t, glottal_pulse(t, period, &v)))
            .fold((0.0, f64::MAX), |a, b| if b.1 < a.1 { b } else { a });
        assert!((argmin - te).abs() <= 0.1 && (min + 1.0).abs() < 1e-9);
        assert_eq!(glottal_pulse(-1.0, period, &v), 0.0);
    }

    #[test]
    fn utterance_is_deterministic_and_bounded() {
        let v = Voice::default();
        let a = utterance(&v, 1.0, 16000, 3).unwrap();
        let b = utterance(&v, 1.0, 16000, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.waveform.duration_secs() >= 1.0);
        assert!(a.waveform.samples().iter().all(|x| x.abs() <= 0.5 + 1e-12));
        assert!(a.gcis.windows(2).all(|w| w[0] < w[1]));
        for g in &a.gcis {
            assert!(a.voiced.iter().any(|r| r.contains(g)));
        }
        let expected = 16000.0 / v.f0;
        let spacing: Vec<f64> = a.gcis.windows(2).map(|w| (w[1] - w[0]) as f64).filter(|d| *d < 2.0 * expected).collect();
        let mean = spacing.iter().sum::<f64>() / spacing.len() as f64;
        assert!((mean - expected).abs() < 0.15 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn pulse_train_positions() {
        let u = pulse_train_ar(16000, 16000, 100.0, 0.05, 1).unwrap();
        assert!(u.gcis.windows(2).all(|w| (94..=106).contains(&(w[1] - w[0]))));
        assert_eq!(u.waveform.len(), 16000);
    }
}
