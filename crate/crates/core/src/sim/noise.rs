//! Diffuse babble-like noise and SNR scaling.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::numerics::C64;

pub const DEFAULT_DIRECTIONS: usize = 128;

/// Long-term speech-like magnitude response: high-pass at 100 Hz, roll-off above 800 Hz.
pub fn speech_shape(f: f64) -> f64 {
    let hp = f / (f * f + 100.0 * 100.0).sqrt();
    hp / (1.0 + (f / 800.0).powi(2)).sqrt()
}

/// Fibonacci lattice on the unit sphere.
pub fn sphere_directions(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Superposition of independent speech-shaped plane waves arriving from
/// `n_directions` points spread uniformly over the sphere. Output is `[mic, sample]`.
pub fn diffuse_noise(
    mics: &[[f64; 3]],
    len: usize,
    sample_rate: f64,
    speed_of_sound: f64,
    seed: u64,
    n_directions: usize,
) -> Result<Array2<f64>> {
    if n_directions == 0 || mics.is_empty() {
        return Err(Error::invalid("need at least one direction and one microphone"));
    }
    if len == 0 {
        return Ok(Array2::zeros((mics.len(), 0)));
    }
    let n = len + len % 2;
    let bins = n / 2 + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let shape: Vec<f64> = (0..bins).map(|k| speech_shape(k as f64 * sample_rate / n as f64)).collect();
    let mut spectra = vec![vec![C64::new(0.0, 0.0); bins]; mics.len()];
    for u in sphere_directions(n_directions) {
        let delays: Vec<f64> = mics
            .iter()
            .map(|p| -(u[0] * p[0] + u[1] * p[1] + u[2] * p[2]) / speed_of_sound)
            .collect();
        // phase factors advance by a fixed rotation per bin; resynchronise
        // periodically to bound the accumulated rounding
        let dw = 2.0 * PI * sample_rate / n as f64;
        let steps: Vec<C64> = delays.iter().map(|&tau| C64::from_polar(1.0, -dw * tau)).collect();
        let mut phase = vec![C64::new(1.0, 0.0); mics.len()];
        for k in 0..bins {
            if k % 512 == 0 {
                for (ph, &tau) in phase.iter_mut().zip(&delays) {
                    *ph = C64::from_polar(1.0, -dw * k as f64 * tau);
                }
            }
            let s = C64::new(normal.sample(&mut rng), normal.sample(&mut rng)) * shape[k];
            for m in 0..mics.len() {
                spectra[m][k] += s * phase[m];
                phase[m] *= steps[m];
            }
        }
    }
    let mut planner = RealFftPlanner::<f64>::new();
    let inv = planner.plan_fft_inverse(n);
    let mut out = Array2::zeros((mics.len(), len));
    let norm = 1.0 / (n_directions as f64 * n as f64).sqrt();
    for (m, spec) in spectra.iter_mut().enumerate() {
        spec[0].im = 0.0;
        spec[bins - 1].im = 0.0;
        let mut buf = vec![0.0; n];
        inv.process(spec, &mut buf).expect("fft length");
        for (t, v) in buf.iter().take(len).enumerate() {
            out[[m, t]] = v * norm;
        }
    }
    Ok(out)
}

/// Independent white Gaussian noise per channel with unit variance.
pub fn sensor_noise(channels: usize, len: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Array2::from_shape_simple_fn((channels, len), || normal.sample(&mut rng))
}

/// Mean power over the first `channels` rows.
pub fn broadband_power(x: ArrayView2<'_, f64>, channels: usize) -> f64 {
    let rows = x.slice(ndarray::s![..channels, ..]);
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|v| v * v).sum::<f64>() / rows.len() as f64
}

/// Amplitude factor that brings `noise` to `snr_db` below `speech`, measured
/// over the first `ha_channels` channels only.
pub fn snr_scale(speech: ArrayView2<'_, f64>, noise: ArrayView2<'_, f64>, ha_channels: usize, snr_db: f64) -> Result<f64> {
    let ps = broadband_power(speech, ha_channels);
    let pn = broadband_power(noise, ha_channels);
    if !(pn > 0.0) {
        return Err(Error::invalid("noise has zero power on the hearing-aid channels"));
    }
    if !(ps > 0.0) {
        return Err(Error::invalid("speech has zero power on the hearing-aid channels"));
    }
    Ok((ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

pub fn scale_to_snr(speech: ArrayView2<'_, f64>, noise: ArrayView2<'_, f64>, ha_channels: usize, snr_db: f64) -> Result<Array2<f64>> {
    let s = snr_scale(speech, noise, ha_channels, snr_db)?;
    Ok(noise.mapv(|v| v * s))
}

/// Real part of the measured complex coherence between two channels per bin.
pub fn measured_coherence(x: &Array2<f64>, a: usize, b: usize, frame_len: usize) -> Vec<f64> {
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(frame_len);
    let bins = frame_len / 2 + 1;
    let mut sab = vec![C64::new(0.0, 0.0); bins];
    let mut saa = vec![0.0; bins];
    let mut sbb = vec![0.0; bins];
    let frames = x.len_of(Axis(1)) / frame_len;
    let window = crate::stft::sqrt_hann(frame_len);
    for f in 0..frames {
        let spec = |ch: usize| {
            let mut buf: Vec<f64> = (0..frame_len).map(|i| x[[ch, f * frame_len + i]] * window[i] * window[i]).collect();
            let mut out = fwd.make_output_vec();
            fwd.process(&mut buf, &mut out).expect("fft length");
            out
        };
        let (xa, xb) = (spec(a), spec(b));
        for k in 0..bins {
            sab[k] += xa[k] * xb[k].conj();
            saa[k] += xa[k].norm_sqr();
            sbb[k] += xb[k].norm_sqr();
        }
    }
    (0..bins).map(|k| sab[k].re / (saa[k] * sbb[k]).sqrt().max(1e-300)).collect()
}

/// `sin(x) / x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coherence_follows_spherical_model() {
        let mics = [[0.0, 0.085, 0.0], [0.0, -0.085, 0.0]];
        let fs = 16000.0;
        let x = diffuse_noise(&mics, 16000 * 20, fs, 343.0, 7, DEFAULT_DIRECTIONS).unwrap();
        let coh = measured_coherence(&x, 0, 1, 512);
        let mut worst: f64 = 0.0;
        for (k, g) in coh.iter().enumerate() {
            let f = k as f64 * fs / 512.0;
            if !(100.0..4000.0).contains(&f) {
                continue;
            }
            worst = worst.max((g - sinc(2.0 * PI * f * 0.17 / 343.0)).abs());
        }
        assert!(worst < 0.1, "max deviation {worst}");
    }

    #[test]
    fn deterministic_per_seed() {
        let mics = [[0.0, 0.0, 0.0], [1.0, 0.5, 0.2]];
        let a = diffuse_noise(&mics, 5000, 16000.0, 343.0, 3, 32).unwrap();
        let b = diffuse_noise(&mics, 5000, 16000.0, 343.0, 3, 32).unwrap();
        let c = diffuse_noise(&mics, 5000, 16000.0, 343.0, 4, 32).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn single_direction_is_coherent() {
        let mics = [[0.0, 0.05, 0.0], [0.0, -0.05, 0.0]];
        let x = diffuse_noise(&mics, 16000 * 4, 16000.0, 343.0, 5, 1).unwrap();
        // the lone lattice point lies on the x axis, broadside to this pair
        assert_eq!(sphere_directions(1)[0], [1.0, 0.0, 0.0]);
        let coh = measured_coherence(&x, 0, 1, 512);
        assert!(coh[4..250].iter().all(|&g| g > 0.999));
    }

    #[test]
    fn sphere_lattice_is_balanced() {
        let d = sphere_directions(128);
        let mean: Vec<f64> = (0..3).map(|a| d.iter().map(|u| u[a]).sum::<f64>() / 128.0).collect();
        assert!(mean.iter().all(|m| m.abs() < 0.02));
        assert!(d.iter().all(|u| ((u[0] * u[0] + u[1] * u[1] + u[2] * u[2]) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn snr_scaling_arithmetic() {
        let s = Array2::from_elem((5, 100), 1.0);
        let n = Array2::from_elem((5, 100), -1.0);
        assert!((snr_scale(s.view(), n.view(), 4, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((snr_scale(s.view(), n.view(), 4, 20.0).unwrap() - 0.1).abs() < 1e-15);
        for snr in [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0] {
            let scaled = scale_to_snr(s.view(), n.view(), 4, snr).unwrap();
            let got = 10.0 * (broadband_power(s.view(), 4) / broadband_power(scaled.view(), 4)).log10();
            assert!((got - snr).abs() < 1e-9);
        }
        // only the hearing-aid rows count
        let mut n2 = n.clone();
        n2.row_mut(4).fill(100.0);
        assert_eq!(snr_scale(s.view(), n2.view(), 4, 0.0).unwrap(), 1.0);
        assert!(snr_scale(s.view(), Array2::zeros((5, 100)).view(), 4, 0.0).is_err());
    }

    #[test]
    fn noise_power_scales_quadratically() {
        let n = sensor_noise(4, 1000, 9);
        let p = broadband_power(n.view(), 4);
        let scaled = n.mapv(|v| v * 3.0);
        assert!((broadband_power(scaled.view(), 4) - 9.0 * p).abs() < 1e-12 * p);
    }
}
