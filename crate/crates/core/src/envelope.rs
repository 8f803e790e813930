//! Spectral envelope: all-pole envelope estimation, inverse filtering of
//! speech to a residual and the matching synthesis filter.
//!
//! Filters use the convention `A(z) = 1 - sum_i a_i z^-i`. Coefficient sets
//! are switched hard at the midpoint between consecutive analysis positions,
//! identically in both directions, so [`synth_filter`] undoes
//! [`inverse_filter`] up to rounding.

use crate::dsp::{hann_values, Waveform};
use crate::error::{Error, Result};
use rayon::prelude::*;

/// Largest reflection coefficient magnitude allowed by the estimator.
pub const MAX_REFLECTION: f64 = 0.999;

/// Per-sample mean-square level under which an analysis frame counts as silent.
pub const ENERGY_FLOOR: f64 = 1e-12;

/// Relative white-noise floor added to the zero-lag autocorrelation (-40 dB).
/// Keeps the normal equations well conditioned on very clean input.
pub const NOISE_FLOOR: f64 = 1e-4;

/// Per-position all-pole filters.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeTrack {
    order: usize,
    positions: Vec<usize>,
    coeffs: Vec<Vec<f64>>,
    gains: Vec<f64>,
}

impl EnvelopeTrack {
    /// Validates ordering, shapes and stability of every coefficient set.
    pub fn new(
        order: usize,
        positions: Vec<usize>,
        coeffs: Vec<Vec<f64>>,
        gains: Vec<f64>,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("envelope order must be positive"));
        }
        if positions.len() != coeffs.len() || positions.len() != gains.len() {
            return Err(Error::invalid("positions, coefficients and gains differ in length"));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("envelope positions must be strictly increasing"));
        }
        for (i, a) in coeffs.iter().enumerate() {
            if a.len() != order {
                return Err(Error::invalid(format!(
                    "coefficient set {i} has {} values, expected {order}",
                    a.len()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) || reflection_coefficients(a).is_none() {
                return Err(Error::invalid(format!("coefficient set {i} is not a stable filter")));
            }
        }
        if gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::invalid("envelope gains must be positive"));
        }
        Ok(EnvelopeTrack { order, positions, coeffs, gains })
    }

    /// `A(z) = 1` at every position.
    pub fn identity(order: usize, positions: Vec<usize>) -> Result<Self> {
        let n = positions.len();
        EnvelopeTrack::new(order, positions, vec![vec![0.0; order]; n], vec![1.0; n])
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// First sample governed by each coefficient set.
    fn switch_points(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.positions.len());
        starts.push(0);
        for w in self.positions.windows(2) {
            starts.push((w[0] + w[1]).div_ceil(2));
        }
        starts
    }
}

/// Pluggable envelope estimator.
pub trait EnvelopeEstimator {
    fn estimate(&self, w: &Waveform, positions: &[usize]) -> Result<EnvelopeTrack>;
}

/// Autocorrelation-method linear prediction on Hann-windowed segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LpcEstimator {
    pub order: usize,
    pub window_len: usize,
}

impl Default for LpcEstimator {
    /// Order 24 with a 25 ms window at 16 kHz.
    fn default() -> Self {
        LpcEstimator { order: 24, window_len: 400 }
    }
}

impl EnvelopeEstimator for LpcEstimator {
    fn estimate(&self, w: &Waveform, positions: &[usize]) -> Result<EnvelopeTrack> {
        estimate_envelope(w, positions, self.order, self.window_len)
    }
}

pub fn estimate_envelope(
    w: &Waveform,
    positions: &[usize],
    order: usize,
    window_len: usize,
) -> Result<EnvelopeTrack> {
    if order < 2 {
        return Err(Error::invalid(format!("envelope order must be >= 2, got {order}")));
    }
    if window_len < 2 * order {
        return Err(Error::invalid(format!(
            "window length {window_len} shorter than twice the order {order}"
        )));
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= w.len()) {
        return Err(Error::invalid(format!(
            "analysis position {p} outside signal of length {}",
            w.len()
        )));
    }
    let window = hann_values(window_len);
    let x = w.samples();
    let half = window_len / 2;
    let frames: Vec<(Vec<f64>, f64)> = positions
        .par_iter()
        .map(|&p| {
            let segment: Vec<f64> = (0..window_len)
                .map(|i| {
                    let n = (p + i).checked_sub(half);
                    n.and_then(|n| x.get(n)).map_or(0.0, |v| v * window[i])
                })
                .collect();
            let mut r = autocorrelation(&segment, order);
            if r[0] <= ENERGY_FLOOR * window_len as f64 {
                return (vec![0.0; order], ENERGY_FLOOR.sqrt());
            }
            r[0] *= 1.0 + NOISE_FLOOR;
            let lpc = levinson(&r, order);
            let gain = (lpc.error / window_len as f64).max(ENERGY_FLOOR).sqrt();
            (lpc.coeffs, gain)
        })
        .collect();
    let (coeffs, gains) = frames.into_iter().unzip();
    EnvelopeTrack::new(order, positions.to_vec(), coeffs, gains)
}

pub(crate) fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|lag| {
            x.iter()
                .zip(x.iter().skip(lag))
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Lpc {
    /// Predictor coefficients `a_1..a_p`.
    pub coeffs: Vec<f64>,
    pub reflection: Vec<f64>,
    /// Final prediction error energy.
    pub error: f64,
}

/// Levinson-Durbin recursion with reflection coefficients clamped to
/// `|k| <= MAX_REFLECTION`, which keeps the synthesis filter stable.
pub fn levinson(r: &[f64], order: usize) -> Lpc {
    assert!(r.len() > order, "autocorrelation too short for order {order}");
    let mut a = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);
    let mut err = r[0];
    let mut prev = vec![0.0; order];
    for i in 0..order {
        let mut acc = r[i + 1];
        for j in 0..i {
            acc -= a[j] * r[i - j];
        }
        let k = if err > 0.0 { (acc / err).clamp(-MAX_REFLECTION, MAX_REFLECTION) } else { 0.0 };
        prev[..i].copy_from_slice(&a[..i]);
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        err *= 1.0 - k * k;
        reflection.push(k);
    }
    Lpc { coeffs: a, reflection, error: err }
}

/// Step-down recursion. `None` when some reflection coefficient has
/// magnitude >= 1, i.e. the all-pole filter is unstable.
pub fn reflection_coefficients(a: &[f64]) -> Option<Vec<f64>> {
    let mut cur = a.to_vec();
    let mut ks = vec![0.0; a.len()];
    for i in (0..a.len()).rev() {
        let k = cur[i];
        if k.abs() >= 1.0 {
            return None;
        }
        ks[i] = k;
        let denom = 1.0 - k * k;
        let next: Vec<f64> = (0..i).map(|j| (cur[j] + k * cur[i - 1 - j]) / denom).collect();
        cur.truncate(i);
        cur.copy_from_slice(&next);
    }
    Some(ks)
}

fn check_coverage(len: usize, env: &EnvelopeTrack) -> Result<()> {
    if env.is_empty() {
        return Err(Error::invalid("envelope track is empty"));
    }
    if len > 0 && env.positions[0] >= len {
        return Err(Error::invalid("envelope track starts after the end of the signal"));
    }
    Ok(())
}

/// Runs `A(z)` over `w`, giving the prediction residual.
pub fn inverse_filter(w: &Waveform, env: &EnvelopeTrack) -> Result<Waveform> {
    check_coverage(w.len(), env)?;
    let x = w.samples();
    let mut out = vec![0.0; x.len()];
    for_each_segment(env, x.len(), |range, a| {
        for n in range {
            let mut pred = 0.0;
            for (i, ai) in a.iter().enumerate() {
                if let Some(m) = n.checked_sub(i + 1) {
                    pred += ai * x[m];
                }
            }
            out[n] = x[n] - pred;
        }
    });
    Waveform::new(out, w.sample_rate())
}

/// Runs `1 / A(z)` over `excitation`.
pub fn synth_filter(excitation: &Waveform, env: &EnvelopeTrack) -> Result<Waveform> {
    check_coverage(excitation.len(), env)?;
    let e = excitation.samples();
    let mut out = vec![0.0; e.len()];
    for_each_segment(env, e.len(), |range, a| {
        for n in range {
            let mut acc = e[n];
            for (i, ai) in a.iter().enumerate() {
                if let Some(m) = n.checked_sub(i + 1) {
                    acc += ai * out[m];
                }
            }
            out[n] = acc;
        }
    });
    Waveform::new(out, excitation.sample_rate())
}

fn for_each_segment(
    env: &EnvelopeTrack,
    len: usize,
    mut f: impl FnMut(std::ops::Range<usize>, &[f64]),
) {
    let starts = env.switch_points();
    for (i, &start) in starts.iter().enumerate() {
        let end = starts.get(i + 1).copied().unwrap_or(len).min(len);
        if start < end {
            f(start..end, &env.coeffs[i]);
        }
    }
}
