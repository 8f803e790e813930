//! Pitch tracking and glottal closure instant (GCI) detection.
//!
//! GCIs are located with the energy centre-of-gravity (CoG) of the speech
//! over a two-period window: the CoG swings from positive to negative as the
//! window centre passes an excitation burst, and the residual peak nearest to
//! each such crossing is taken as the GCI.

use crate::dsp::{hann_values, Waveform};
use crate::envelope::{autocorrelation, levinson, NOISE_FLOOR};
use crate::error::{Error, Result};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use std::f64::consts::PI;
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Config {
    pub f_min: f64,
    pub f_max: f64,
    /// Frame hop in seconds.
    pub hop_secs: f64,
    /// Analysis window in seconds.
    pub window_secs: f64,
    /// Minimum normalized autocorrelation peak that starts a voiced run.
    pub voicing_threshold: f64,
    /// Lower peak accepted next to a voiced frame when the lag stays within
    /// 10% of the neighbour's.
    pub continuation_threshold: f64,
    /// Frames quieter than this (dB relative to the loudest frame) are unvoiced.
    pub silence_db: f64,
    /// Voiced runs shorter than this many frames are discarded.
    pub min_voiced_frames: usize,
    /// Order of the per-frame inverse filter that flattens formants before
    /// lag selection; 0 selects lags on the raw signal.
    pub flatten_order: usize,
    /// Low-pass cutoff applied to the flattened frame, Hz.
    pub flatten_cutoff: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        F0Config {
            f_min: 60.0,
            f_max: 400.0,
            hop_secs: 0.010,
            window_secs: 0.040,
            voicing_threshold: 0.3,
            continuation_threshold: 0.15,
            silence_db: -40.0,
            min_voiced_frames: 3,
            flatten_order: 12,
            flatten_cutoff: 700.0,
        }
    }
}

impl F0Config {
    pub fn with_range(f_min: f64, f_max: f64) -> Self {
        F0Config { f_min, f_max, ..F0Config::default() }
    }
}

/// Frame-wise F0 with voicing. Frame `i` is centred on sample `i * hop`.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    hop: usize,
    sample_rate: u32,
    f0: Vec<f64>,
}

impl F0Track {
    /// `f0[i] == 0` marks an unvoiced frame.
    pub fn new(hop: usize, sample_rate: u32, f0: Vec<f64>) -> Result<Self> {
        if hop == 0 || sample_rate == 0 {
            return Err(Error::invalid("hop and sample rate must be positive"));
        }
        if f0.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("f0 values must be finite and non-negative"));
        }
        Ok(F0Track { hop, sample_rate, f0 })
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn f0(&self) -> &[f64] {
        &self.f0
    }

    pub fn voiced(&self) -> Vec<bool> {
        self.f0.iter().map(|&f| f > 0.0).collect()
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    fn frame_of(&self, n: usize) -> usize {
        ((n + self.hop / 2) / self.hop).min(self.f0.len().saturating_sub(1))
    }

    /// Period in samples at sample `n`, if the frame covering `n` is voiced.
    pub fn period_at(&self, n: usize) -> Option<f64> {
        let f = *self.f0.get(self.frame_of(n))?;
        (f > 0.0).then(|| self.sample_rate as f64 / f)
    }

    pub fn covers(&self, len: usize) -> bool {
        len == 0 || (len - 1 + self.hop / 2) / self.hop < self.f0.len()
    }

    /// Voiced stretches as sample ranges, clipped to `len`.
    pub fn voiced_regions(&self, len: usize) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.f0.len() {
            if self.f0[i] > 0.0 {
                let first = i;
                while i < self.f0.len() && self.f0[i] > 0.0 {
                    i += 1;
                }
                let start = (first * self.hop).saturating_sub(self.hop / 2);
                let end = ((i - 1) * self.hop + self.hop.div_ceil(2)).min(len);
                if start < end {
                    out.push(start..end);
                }
            } else {
                i += 1;
            }
        }
        out
    }
}

pub fn estimate_f0(w: &Waveform, f_min: f64, f_max: f64) -> Result<F0Track> {
    estimate_f0_with(w, &F0Config::with_range(f_min, f_max))
}

/// Normalized-autocorrelation pitch tracker.
pub fn estimate_f0_with(w: &Waveform, cfg: &F0Config) -> Result<F0Track> {
    if !(20.0 <= cfg.f_min && cfg.f_min < cfg.f_max && cfg.f_max <= 500.0) {
        return Err(Error::invalid(format!(
            "f0 range [{}, {}] outside 20 <= f_min < f_max <= 500",
            cfg.f_min, cfg.f_max
        )));
    }
    let fs = w.sample_rate() as f64;
    let hop = ((cfg.hop_secs * fs).round() as usize).max(1);
    let win = ((cfg.window_secs * fs).round() as usize).max(4);
    if w.len() < hop {
        return Err(Error::invalid(format!(
            "signal of {} samples shorter than one hop ({hop})",
            w.len()
        )));
    }
    let lag_min = ((fs / cfg.f_max).floor() as usize).max(2);
    let lag_max = ((fs / cfg.f_min).ceil() as usize).min(win / 2);
    if lag_min + 2 > lag_max {
        return Err(Error::invalid("analysis window too short for the requested f0 range"));
    }

    // Enough frames that every sample has a nearest frame centre.
    let n_frames = (w.len() - 1 + hop / 2) / hop + 1;
    let x = w.samples();
    let frame_at = |i: usize| -> Vec<f64> {
        let start = (i * hop) as i64 - (win / 2) as i64;
        (0..win)
            .map(|k| {
                let n = start + k as i64;
                if n >= 0 && (n as usize) < x.len() {
                    x[n as usize]
                } else {
                    0.0
                }
            })
            .collect()
    };
    let rms: Vec<f64> = (0..n_frames)
        .map(|i| {
            let f = frame_at(i);
            (f.iter().map(|v| v * v).sum::<f64>() / win as f64).sqrt()
        })
        .collect();
    let loudest = rms.iter().cloned().fold(0.0, f64::max);
    let floor = (loudest * 10f64.powf(cfg.silence_db / 20.0)).max(1e-7);

    let nfft = (2 * win).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);

    let in_range = |lag: f64| (cfg.f_min..=cfg.f_max).contains(&(fs / lag));
    let lowpass = Biquads::butterworth4(cfg.flatten_cutoff.min(0.45 * fs), fs);
    let curve = |frame: &[f64]| -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(nfft, Complex::new(0.0, 0.0));
        fwd.process(&mut buf);
        for c in buf.iter_mut() {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        inv.process(&mut buf);
        let scale = 1.0 / nfft as f64;

        // Energies of the leading and trailing parts overlapping at lag tau.
        let mut prefix = vec![0.0; win + 1];
        for (k, v) in frame.iter().enumerate() {
            prefix[k + 1] = prefix[k] + v * v;
        }
        let total = prefix[win];
        (lag_min - 1..=lag_max + 1)
            .map(|tau| {
                let head = prefix[win - tau];
                let tail = total - prefix[tau];
                let denom = (head * tail).sqrt();
                if denom > 0.0 {
                    buf[tau].re * scale / denom
                } else {
                    0.0
                }
            })
            .collect()
    };
    // Per frame: normalized autocorrelation of the raw frame (voicing) and of
    // its formant-flattened, low-passed version (lag choice).
    let curves: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..n_frames)
        .into_par_iter()
        .map(|i| {
            if rms[i] <= floor {
                return None;
            }
            let frame = frame_at(i);
            let raw = curve(&frame);
            let flat = match flatten(&frame, cfg.flatten_order).filter(|_| cfg.flatten_order > 0) {
                Some(f) => curve(&lowpass.apply(&f)),
                None => raw.clone(),
            };
            Some((raw, flat))
        })
        .collect();

    let offset = lag_min - 1;
    let mut lags: Vec<Option<f64>> = curves
        .iter()
        .map(|c| {
            let (raw, flat) = c.as_ref()?;
            let fallback = pick_period(raw, offset, cfg.voicing_threshold)?;
            pick_period(flat, offset, cfg.continuation_threshold)
                .filter(|&lag| in_range(lag))
                .or_else(|| Some(fallback).filter(|&lag| in_range(lag)))
        })
        .collect();
    // Hysteresis: grow voiced runs into weaker frames that continue the
    // neighbouring lag, first forwards then backwards.
    let peak_near = |r: &[f64], lag: f64, min: f64| -> Option<f64> {
        let lo = ((0.9 * lag).ceil() as usize).max(offset + 1) - offset;
        let hi = ((1.1 * lag).floor() as usize).min(offset + r.len() - 2) - offset;
        (lo..=hi)
            .filter(|&j| r[j] >= r[j - 1] && r[j] > r[j + 1] && r[j] >= min)
            .max_by(|&a, &b| r[a].total_cmp(&r[b]))
            .map(|j| refine(r, j, offset))
            .filter(|&l| in_range(l))
    };
    let continue_from = |(raw, flat): &(Vec<f64>, Vec<f64>), lag: f64| -> Option<f64> {
        let found = peak_near(raw, lag, cfg.continuation_threshold)?;
        Some(peak_near(flat, lag, cfg.continuation_threshold).unwrap_or(found))
    };
    for order in [false, true] {
        for step in 0..n_frames.saturating_sub(1) {
            let (i, prev) = if order { (n_frames - 2 - step, n_frames - 1 - step) } else { (step + 1, step) };
            if lags[i].is_some() {
                continue;
            }
            if let (Some(c), Some(lag)) = (&curves[i], lags[prev]) {
                lags[i] = continue_from(c, lag);
            }
        }
    }
    let mut f0: Vec<f64> = lags.iter().map(|l| l.map_or(0.0, |lag| fs / lag)).collect();
    drop_short_runs(&mut f0, cfg.min_voiced_frames);
    F0Track::new(hop, w.sample_rate(), f0)
}

/// Chooses the first local maximum within 90% of the best one, refined by
/// parabolic interpolation. `r[j]` holds lag `offset + j`; the two end
/// entries are guards.
fn pick_period(r: &[f64], offset: usize, threshold: f64) -> Option<f64> {
    let peaks: Vec<usize> = (1..r.len() - 1)
        .filter(|&j| r[j] >= r[j - 1] && r[j] > r[j + 1])
        .collect();
    let best = peaks.iter().map(|&j| r[j]).fold(f64::MIN, f64::max);
    if best < threshold {
        return None;
    }
    let j = *peaks.iter().find(|&&j| r[j] >= 0.9 * best)?;
    // Period jitter can make a multiple of the period score higher than the
    // period itself; prefer a strong enough peak at a submultiple.
    let lag = (offset + j) as f64;
    for k in [3.0, 2.0] {
        let lo = ((lag / k * 0.95).ceil() as usize).saturating_sub(offset).max(1);
        let hi = ((lag / k * 1.05).floor() as usize).saturating_sub(offset).min(r.len() - 2);
        let sub = (lo..=hi)
            .filter(|&i| peaks.contains(&i) && r[i] >= SUBMULTIPLE_RATIO * r[j] && r[i] >= threshold)
            .max_by(|&a, &b| r[a].total_cmp(&r[b]));
        if let Some(i) = sub {
            return Some(refine(r, i, offset));
        }
    }
    Some(refine(r, j, offset))
}

/// Relative strength a submultiple-lag peak needs to replace the chosen one.
const SUBMULTIPLE_RATIO: f64 = 0.6;

/// Prediction gains above this leave too little residual to correlate; the
/// frame is treated as a near-sinusoid and its raw curve is used.
const MAX_FLATTEN_GAIN: f64 = 1e3;

/// Residual of a Hann-windowed linear predictor run over the whole frame.
fn flatten(frame: &[f64], order: usize) -> Option<Vec<f64>> {
    let window = hann_values(frame.len());
    let weighted: Vec<f64> = frame.iter().zip(&window).map(|(x, w)| x * w).collect();
    let mut r = autocorrelation(&weighted, order);
    if r[0] <= 0.0 {
        return None;
    }
    r[0] *= 1.0 + NOISE_FLOOR;
    let lpc = levinson(&r, order);
    if r[0] > MAX_FLATTEN_GAIN * lpc.error {
        return None;
    }
    let a = lpc.coeffs;
    let residual = (0..frame.len())
        .map(|n| {
            let past: f64 = a.iter().enumerate().take(n).map(|(i, c)| c * frame[n - 1 - i]).sum();
            frame[n] - past
        })
        .collect();
    Some(residual)
}

/// Cascade of second-order sections.
struct Biquads(Vec<[f64; 5]>);

impl Biquads {
    /// Fourth-order Butterworth low-pass via the bilinear transform.
    fn butterworth4(cutoff: f64, fs: f64) -> Self {
        let k = (PI * cutoff / fs).tan();
        let sections = [0.541_196_100_146_197, 1.306_562_964_876_377]
            .iter()
            .map(|q| {
                let norm = 1.0 / (1.0 + k / q + k * k);
                let b0 = k * k * norm;
                [b0, 2.0 * b0, b0, 2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm]
            })
            .collect();
        Biquads(sections)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for [b0, b1, b2, a1, a2] in &self.0 {
            let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
            for v in y.iter_mut() {
                let out = b0 * *v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
                x2 = x1;
                x1 = *v;
                y2 = y1;
                y1 = out;
                *v = out;
            }
        }
        y
    }
}

/// Parabolic interpolation of the peak at `r[j]`, as a lag.
fn refine(r: &[f64], j: usize, offset: usize) -> f64 {
    let (a, b, c) = (r[j - 1], r[j], r[j + 1]);
    let denom = a - 2.0 * b + c;
    let delta = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    (offset + j) as f64 + delta
}

fn drop_short_runs(f0: &mut [f64], min_len: usize) {
    let mut i = 0;
    while i < f0.len() {
        if f0[i] > 0.0 {
            let start = i;
            while i < f0.len() && f0[i] > 0.0 {
                i += 1;
            }
            if i - start < min_len {
                f0[start..i].iter_mut().for_each(|v| *v = 0.0);
            }
        } else {
            i += 1;
        }
    }
}

/// Strictly increasing sample positions of glottal closure instants.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GciList {
    positions: Vec<usize>,
}

impl GciList {
    pub fn new(positions: Vec<usize>) -> Result<Self> {
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("GCI positions must be strictly increasing"));
        }
        Ok(GciList { positions })
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Hann taper over `[-period, period]`, zero at both ends.
fn cog_weights(period: usize) -> Vec<f64> {
    (0..=2 * period)
        .map(|i| {
            let m = i as f64 - period as f64;
            0.5 + 0.5 * (PI * m / period as f64).cos()
        })
        .collect()
}

/// Energy centre of gravity around every sample, in samples relative to it:
/// `sum m h(m) x[n+m]^2 / sum h(m) x[n+m]^2` over `|m| <= T`, where `T` is
/// the local period and `h` a Hann taper across the two-period span. Zero in
/// unvoiced regions and wherever the window holds no energy.
pub fn cog_track(w: &Waveform, f0t: &F0Track) -> Result<Waveform> {
    let mut out = vec![0.0; w.len()];
    for region in f0t.voiced_regions(w.len()) {
        let values = cog_region(w.samples(), f0t, region.clone());
        out[region].copy_from_slice(&values);
    }
    Waveform::new(out, w.sample_rate())
}

fn cog_region(x: &[f64], f0t: &F0Track, region: Range<usize>) -> Vec<f64> {
    let mut cache: Vec<(usize, Vec<f64>)> = Vec::new();
    region
        .map(|n| {
            let Some(t) = f0t.period_at(n) else { return 0.0 };
            let t = (t.round() as usize).max(1);
            let idx = match cache.iter().position(|(p, _)| *p == t) {
                Some(i) => i,
                None => {
                    cache.push((t, cog_weights(t)));
                    cache.len() - 1
                }
            };
            let h = &cache[idx].1;
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, hw) in h.iter().enumerate() {
                let k = n as i64 + i as i64 - t as i64;
                if k < 0 || k as usize >= x.len() {
                    continue;
                }
                let e = hw * x[k as usize] * x[k as usize];
                num += (i as f64 - t as f64) * e;
                den += e;
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect()
}

/// Half-width of the residual peak search around a CoG crossing, in periods.
pub const GCI_SEARCH_RADIUS: f64 = 0.3;

pub fn detect_gci(residual: &Waveform, speech: &Waveform, f0t: &F0Track) -> Result<GciList> {
    if residual.len() != speech.len() {
        return Err(Error::invalid(format!(
            "residual ({}) and speech ({}) differ in length",
            residual.len(),
            speech.len()
        )));
    }
    let res = residual.samples();
    let regions = f0t.voiced_regions(speech.len());
    let per_region: Vec<Vec<usize>> = regions
        .par_iter()
        .map(|region| gcis_in_region(res, speech.samples(), f0t, region.clone()))
        .collect();
    GciList::new(per_region.into_iter().flatten().collect())
}

fn gcis_in_region(res: &[f64], speech: &[f64], f0t: &F0Track, region: Range<usize>) -> Vec<usize> {
    let period = |n: usize| f0t.period_at(n).unwrap_or_else(|| nearest_period(f0t, n));
    let shortest = region.clone().step_by(f0t.hop()).map(period).fold(f64::MAX, f64::min);
    if ((region.end - region.start) as f64) < shortest {
        return Vec::new();
    }
    let cog = cog_region(speech, f0t, region.clone());
    let peak_near = |centre: f64, radius: f64| -> Option<usize> {
        let lo = ((centre - radius).ceil().max(region.start as f64)) as usize;
        let hi = ((centre + radius).floor().min((region.end - 1) as f64)) as usize;
        (lo <= hi).then(|| {
            let mut best = lo;
            for n in lo..=hi {
                if res[n].abs() > res[best].abs() {
                    best = n;
                }
            }
            best
        })
    };

    let mut candidates: Vec<usize> = Vec::new();
    for i in 0..cog.len().saturating_sub(1) {
        if cog[i] > 0.0 && cog[i + 1] <= 0.0 {
            let n = region.start + i;
            let crossing = if cog[i] < -cog[i + 1] { n } else { n + 1 };
            if let Some(g) = peak_near(crossing as f64, GCI_SEARCH_RADIUS * period(crossing)) {
                candidates.push(g);
            }
        }
    }
    candidates.sort_unstable();
    candidates.dedup();

    let mut gcis = merge_close(candidates, res, &period);
    // Fill gaps left by missed crossings by predicting one period ahead.
    let mut filled = Vec::with_capacity(gcis.len());
    for (i, &g) in gcis.iter().enumerate() {
        filled.push(g);
        if let Some(&next) = gcis.get(i + 1) {
            let mut prev = g;
            let mut guard = 0;
            while (next - prev) as f64 > 1.5 * period(prev) && guard < 64 {
                let t = period(prev);
                match peak_near(prev as f64 + t, GCI_SEARCH_RADIUS * t) {
                    Some(p) if p > prev && p < next => {
                        filled.push(p);
                        prev = p;
                    }
                    _ => break,
                }
                guard += 1;
            }
        }
    }
    gcis = merge_close(filled, res, &period);
    gcis
}

/// Collapses GCIs closer than half a period, keeping the stronger residual peak.
fn merge_close(sorted: Vec<usize>, res: &[f64], period: &impl Fn(usize) -> f64) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(sorted.len());
    for g in sorted {
        match out.last_mut() {
            Some(last) if ((g - *last) as f64) < 0.5 * period(*last) => {
                if res[g].abs() > res[*last].abs() {
                    *last = g;
                }
            }
            _ => out.push(g),
        }
    }
    out
}

pub(crate) fn nearest_period(f0t: &F0Track, n: usize) -> f64 {
    let f0 = f0t.f0();
    let i = f0t.frame_of(n);
    let found = (0..f0.len()).find_map(|d| {
        let lo = i.checked_sub(d).map(|j| f0[j]).filter(|f| *f > 0.0);
        let hi = f0.get(i + d).copied().filter(|f| *f > 0.0);
        lo.or(hi)
    });
    found.map_or(f0t.sample_rate() as f64 / 100.0, |f| f0t.sample_rate() as f64 / f)
}
