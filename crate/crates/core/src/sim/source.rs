//! Speech-like source signals: voiced harmonic syllables with formant
//! envelopes, unvoiced noise bursts, and pauses.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoiceProfile {
    pub f0_range: (f64, f64),
    pub upper_frequency: f64,
}

impl VoiceProfile {
    pub fn female() -> Self {
        Self {
            f0_range: (180.0, 260.0),
            upper_frequency: 7000.0,
        }
    }

    pub fn male() -> Self {
        Self {
            f0_range: (95.0, 140.0),
            upper_frequency: 7000.0,
        }
    }

    /// Alternates female and male voices by speaker index.
    pub fn for_speaker(j: usize) -> Self {
        if j % 2 == 0 {
            Self::female()
        } else {
            Self::male()
        }
    }
}

fn formant_gain(f: f64, formants: &[(f64, f64)]) -> f64 {
    let peaks: f64 = formants
        .iter()
        .map(|&(fc, bw)| 1.0 / (1.0 + ((f - fc) / bw).powi(2)))
        .sum();
    (peaks + 0.03) / (1.0 + f / 1500.0)
}

/// Raised-cosine attack and release over `ramp` samples.
fn syllable_envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    if i < ramp {
        0.5 * (1.0 - (PI * i as f64 / ramp as f64).cos())
    } else if i >= len - ramp {
        0.5 * (1.0 - (PI * (len - i) as f64 / ramp as f64).cos())
    } else {
        1.0
    }
}

/// `len` samples of a speech-like signal with unit average power over active samples.
pub fn speech_like(len: usize, sample_rate: f64, voice: VoiceProfile, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let white = Normal::new(0.0, 1.0).expect("unit normal");
    let mut t = (rng.gen_range(0.0..0.08) * sample_rate) as usize;
    let mut since_pause = 0.0;
    while t < len {
        let dur = rng.gen_range(0.12..0.32);
        let n = ((dur * sample_rate) as usize).min(len - t);
        let ramp = (0.015 * sample_rate) as usize;
        if rng.gen_bool(0.8) {
            let f0_start = rng.gen_range(voice.f0_range.0..voice.f0_range.1);
            let f0_end = f0_start * rng.gen_range(0.85..1.15);
            let formants = [
                (rng.gen_range(300.0..850.0), rng.gen_range(80.0..160.0)),
                (rng.gen_range(900.0..2400.0), rng.gen_range(100.0..200.0)),
                (rng.gen_range(2400.0..3400.0), rng.gen_range(150.0..300.0)),
            ];
            let harmonics = (voice.upper_frequency / voice.f0_range.0) as usize;
            let mut phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            for i in 0..n {
                let f0 = f0_start + (f0_end - f0_start) * i as f64 / n as f64;
                let env = syllable_envelope(i, n, ramp);
                let mut s = 0.0;
                for (h, ph) in phases.iter_mut().enumerate() {
                    let f = f0 * (h + 1) as f64;
                    if f >= voice.upper_frequency {
                        break;
                    }
                    *ph += 2.0 * PI * f / sample_rate;
                    s += formant_gain(f, &formants) * ph.sin();
                }
                out[t + i] = env * s;
            }
        } else {
            // fricative: pre-emphasized white noise
            let mut prev = 0.0;
            let gain = rng.gen_range(0.2..0.5);
            for i in 0..n {
                let w: f64 = white.sample(rng);
                out[t + i] = gain * syllable_envelope(i, n, ramp) * (w - 0.9 * prev);
                prev = w;
            }
        }
        t += n;
        since_pause += dur;
        let gap = if since_pause > rng.gen_range(0.8..1.8) {
            since_pause = 0.0;
            rng.gen_range(0.15..0.4)
        } else {
            rng.gen_range(0.02..0.1)
        };
        t += (gap * sample_rate) as usize;
    }
    let active: Vec<f64> = out.iter().filter(|v| v.abs() > 0.0).map(|v| v * v).collect();
    if !active.is_empty() {
        let p = active.iter().sum::<f64>() / active.len() as f64;
        let g = 1.0 / p.sqrt();
        out.iter_mut().for_each(|v| *v *= g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_and_normalized() {
        let a = speech_like(32000, 16000.0, VoiceProfile::female(), &mut ChaCha8Rng::seed_from_u64(1));
        let b = speech_like(32000, 16000.0, VoiceProfile::female(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
        let active: Vec<f64> = a.iter().filter(|v| v.abs() > 0.0).copied().collect();
        let p = active.iter().map(|v| v * v).sum::<f64>() / active.len() as f64;
        assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn contains_pauses() {
        let a = speech_like(48000, 16000.0, VoiceProfile::male(), &mut ChaCha8Rng::seed_from_u64(2));
        let silent = a.iter().filter(|v| **v == 0.0).count() as f64 / a.len() as f64;
        assert!(silent > 0.05 && silent < 0.6, "{silent}");
    }
}
