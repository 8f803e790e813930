//! Elementary signal operations shared by every stage: windows, whole-frame
//! resampling and sum-of-squares energy.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Mono signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Waveform::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Waveform::new(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate)
    }
}

/// A finite block of samples with a distinguished center sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    samples: Vec<f64>,
    anchor: usize,
}

impl Frame {
    pub fn new(samples: Vec<f64>, anchor: usize) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid(format!(
                "frame needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if anchor >= samples.len() {
            return Err(Error::invalid(format!(
                "anchor {anchor} outside frame of length {}",
                samples.len()
            )));
        }
        Ok(Frame { samples, anchor })
    }

    /// Frame anchored at its middle sample (`len / 2`).
    pub fn centered(samples: Vec<f64>) -> Result<Self> {
        let anchor = samples.len() / 2;
        Frame::new(samples, anchor)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn with_anchor(mut self, anchor: usize) -> Result<Self> {
        if anchor >= self.samples.len() {
            return Err(Error::invalid(format!(
                "anchor {anchor} outside frame of length {}",
                self.samples.len()
            )));
        }
        self.anchor = anchor;
        Ok(self)
    }
}

/// Symmetric `n`-point Hann window, `w[i] = 0.5 - 0.5 cos(2 pi i / (n - 1))`.
pub fn hanning(n: usize) -> Result<Frame> {
    if n < 2 {
        return Err(Error::invalid(format!("hanning length must be >= 2, got {n}")));
    }
    Frame::centered(hann_values(n))
}

pub(crate) fn hann_values(n: usize) -> Vec<f64> {
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                0.0
            } else {
                let k = i.min(n - 1 - i);
                0.5 - 0.5 * (2.0 * PI * k as f64 / denom).cos()
            }
        })
        .collect()
}

/// Sum of squares.
pub fn frame_energy(f: &Frame) -> f64 {
    energy(f.samples())
}

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Scales `f` so that its sum of squares equals `target`.
pub fn scale_to_energy(f: &Frame, target: f64) -> Result<Frame> {
    let samples = scale_samples_to_energy(f.samples(), target)?;
    Frame::new(samples, f.anchor())
}

pub(crate) fn scale_samples_to_energy(x: &[f64], target: f64) -> Result<Vec<f64>> {
    if !(target >= 0.0) || !target.is_finite() {
        return Err(Error::invalid(format!("target energy must be finite and >= 0, got {target}")));
    }
    let e = energy(x);
    if e == 0.0 {
        if target == 0.0 {
            return Ok(x.to_vec());
        }
        return Err(Error::DegenerateFrame(format!(
            "cannot scale a zero-energy frame to energy {target}"
        )));
    }
    let gain = (target / e).sqrt();
    Ok(x.iter().map(|v| v * gain).collect())
}

/// Taps of the interpolation kernel, counted at the output rate.
pub const RESAMPLER_TAPS: usize = 16;

/// Resamples a whole frame to `m` samples.
///
/// Both endpoints map onto each other, so sample `i` of the output sits at
/// input position `i * (len - 1) / (m - 1)`. The straight line through the
/// two endpoints is carried over exactly; the remainder (zero at both ends)
/// is extended by point reflection about the endpoints and interpolated with
/// a Hann-windowed sinc of [`RESAMPLER_TAPS`] taps, widened by the decimation
/// factor when shrinking so the kernel also acts as the anti-alias filter.
pub fn resample_frame(f: &Frame, m: usize) -> Result<Frame> {
    if m < 2 {
        return Err(Error::invalid(format!("target length must be >= 2, got {m}")));
    }
    let len = f.len();
    let anchor = ((f.anchor() * (m - 1)) as f64 / (len - 1) as f64).round() as usize;
    Frame::new(resample_samples(f.samples(), m), anchor.min(m - 1))
}

pub(crate) fn resample_samples(x: &[f64], m: usize) -> Vec<f64> {
    let len = x.len();
    debug_assert!(len >= 2 && m >= 2);
    let span = (len - 1) as f64;
    let step = span / (m - 1) as f64;
    let stretch = step.max(1.0);
    let half_width = (RESAMPLER_TAPS / 2) as f64 * stretch;

    let first = x[0];
    let slope = (x[len - 1] - first) / span;
    let detrended: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| v - (first + slope * i as f64))
        .collect();
    let period = 2 * (len as i64 - 1);
    let extended = |j: i64| -> f64 {
        let j = j.rem_euclid(period);
        if j < len as i64 {
            detrended[j as usize]
        } else {
            -detrended[(period - j) as usize]
        }
    };

    (0..m)
        .map(|i| {
            let pos = if i == m - 1 { span } else { i as f64 * step };
            let lo = (pos - half_width).ceil() as i64;
            let hi = (pos + half_width).floor() as i64;
            let mut acc = 0.0;
            let mut weight_sum = 0.0;
            for j in lo..=hi {
                let d = pos - j as f64;
                let w = sinc(d / stretch) * (0.5 + 0.5 * (PI * d / half_width).cos());
                acc += w * extended(j);
                weight_sum += w;
            }
            let rest = if weight_sum.abs() > f64::EPSILON { acc / weight_sum } else { 0.0 };
            first + slope * pos + rest
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}
