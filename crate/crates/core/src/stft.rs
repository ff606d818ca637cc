//! Multichannel STFT with square-root Hann windows at 50% overlap.

use ndarray::{s, Array3, ArrayView1};
use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::numerics::{CVector, C64};

/// Complex spectra indexed `[channel, bin, frame]`, one-sided (`frame_len / 2 + 1` bins).
#[derive(Debug, Clone, PartialEq)]
pub struct StftTensor {
    pub values: Array3<C64>,
    pub sample_rate: f64,
    pub frame_len: usize,
    pub hop: usize,
    /// Length of the analysed signals, used to trim the synthesis output.
    pub signal_len: usize,
}

impl StftTensor {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.frame_len as f64
    }

    /// All channels at one time-frequency bin, i.e. `y(k, l)`.
    pub fn snapshot(&self, k: usize, l: usize) -> CVector {
        CVector::from_iterator(self.channels(), self.values.slice(s![.., k, l]).iter().copied())
    }

    /// One channel's spectrum at frame `l`.
    pub fn frame(&self, channel: usize, l: usize) -> ArrayView1<'_, C64> {
        self.values.slice(s![channel, .., l])
    }
}

/// Periodic square-root Hann window; its square sums to one at 50% overlap.
pub fn sqrt_hann(frame_len: usize) -> Vec<f64> {
    (0..frame_len)
        .map(|n| {
            let h = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / frame_len as f64).cos());
            h.sqrt()
        })
        .collect()
}

/// Frame length in samples for a duration, rounded to an even count.
pub fn frame_len_for(duration_s: f64, sample_rate: f64) -> usize {
    let n = (duration_s * sample_rate).round() as usize;
    n + n % 2
}

fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    if len <= frame_len {
        1
    } else {
        (len - frame_len).div_ceil(hop) + 1
    }
}

/// Forward STFT of equal-length channels; the trailing partial frame is zero-padded.
pub fn analyze(
    signals: &[Vec<f64>],
    sample_rate: f64,
    frame_len: usize,
    hop: usize,
) -> Result<StftTensor> {
    if signals.is_empty() {
        return Err(Error::invalid("no channels to analyse"));
    }
    if frame_len == 0 || frame_len % 2 != 0 {
        return Err(Error::invalid(format!("frame length {frame_len} must be even and positive")));
    }
    if hop != frame_len / 2 {
        return Err(Error::invalid(format!(
            "hop {hop} must be half the frame length {frame_len}"
        )));
    }
    let len = signals[0].len();
    if let Some(bad) = signals.iter().position(|s| s.len() != len) {
        return Err(Error::invalid(format!(
            "channel {bad} has {} samples, expected {len}",
            signals[bad].len()
        )));
    }

    let window = sqrt_hann(frame_len);
    let bins = frame_len / 2 + 1;
    let frames = frame_count(len, frame_len, hop);
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frame_len);
    let mut input = fft.make_input_vec();
    let mut output = fft.make_output_vec();
    let mut values = Array3::<C64>::zeros((signals.len(), bins, frames));

    for (m, sig) in signals.iter().enumerate() {
        for l in 0..frames {
            let start = l * hop;
            for (n, x) in input.iter_mut().enumerate() {
                *x = sig.get(start + n).copied().unwrap_or(0.0) * window[n];
            }
            fft.process(&mut input, &mut output)
                .map_err(|e| Error::NumericalFailure(format!("fft: {e}")))?;
            values.slice_mut(s![m, .., l]).iter_mut().zip(&output).for_each(|(d, s)| *d = *s);
        }
    }

    Ok(StftTensor {
        values,
        sample_rate,
        frame_len,
        hop,
        signal_len: len,
    })
}

/// Weighted overlap-add inverse of [`analyze`].
pub fn synthesize(t: &StftTensor) -> Result<Vec<Vec<f64>>> {
    let window = sqrt_hann(t.frame_len);
    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(t.frame_len);
    let mut spectrum = ifft.make_input_vec();
    let mut frame = ifft.make_output_vec();
    let total = (t.frames() - 1) * t.hop + t.frame_len;
    let norm = 1.0 / t.frame_len as f64;

    let mut out = Vec::with_capacity(t.channels());
    for m in 0..t.channels() {
        let mut y = vec![0.0; total.max(t.signal_len)];
        for l in 0..t.frames() {
            spectrum.iter_mut().zip(t.frame(m, l)).for_each(|(d, s)| *d = *s);
            // c2r requires real DC and Nyquist bins.
            spectrum[0].im = 0.0;
            let last = spectrum.len() - 1;
            spectrum[last].im = 0.0;
            ifft.process(&mut spectrum, &mut frame)
                .map_err(|e| Error::NumericalFailure(format!("ifft: {e}")))?;
            let start = l * t.hop;
            for n in 0..t.frame_len {
                y[start + n] += frame[n] * norm * window[n];
            }
        }
        y.truncate(t.signal_len);
        out.push(y);
    }
    Ok(out)
}
