//! Scene assembly: speakers around a head-worn array in a shoebox room, one
//! external microphone, diffuse noise, and the ground truth needed for oracle runs.

use std::f64::consts::PI;
use std::path::PathBuf;

use ndarray::{s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::{broadband_power, diffuse_noise, sensor_noise, sinc, snr_scale};
use super::rir::{add_fractional_impulse, distance, fft_convolve, image_source_rir, RirParams, Room};
use super::source::{speech_like, VoiceProfile};
use crate::covariance::smoothing_factor;
use crate::error::{Error, Result};
use crate::numerics::{CVector, HermitianMatrix, C64};
use crate::prototypes::{circular_distance_deg, plane_wave_delay};
use crate::stft::analyze;

/// Mean power per hearing-aid channel of each speaker's reverberant image.
pub const SPEAKER_POWER: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reverb {
    Anechoic,
    T60 { seconds: f64 },
    Reflection { coefficient: f64, max_order: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceModel {
    /// Point sources with spherical spreading.
    #[default]
    Spherical,
    /// Far-field plane waves from the speaker azimuths (anechoic only).
    PlaneWave,
}

/// Default hearing-aid geometry relative to the head centre: two front/rear
/// pairs 12 mm apart, left and right clusters 17 cm apart. x points forward, y left.
pub fn default_ha_mics() -> Vec<[f64; 3]> {
    vec![
        [0.006, 0.085, 0.0],
        [-0.006, 0.085, 0.0],
        [0.006, -0.085, 0.0],
        [-0.006, -0.085, 0.0],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub room_dims: [f64; 3],
    pub reverb: Reverb,
    pub source_model: SourceModel,
    pub head_position: [f64; 3],
    /// Hearing-aid microphones relative to the head centre.
    pub ha_mics: Vec<[f64; 3]>,
    /// External microphone in room coordinates.
    pub emic_position: [f64; 3],
    pub speaker_doas_deg: Vec<f64>,
    pub speaker_distance: f64,
    /// `None` disables all noise.
    pub snr_db: Option<f64>,
    /// Sensor self-noise relative to the diffuse noise power.
    pub sensor_noise_db: f64,
    /// Total duration in seconds, including the leading noise-only segment.
    pub duration: f64,
    pub leading_noise: f64,
    pub sample_rate: u32,
    pub speed_of_sound: f64,
    pub seed: u64,
    pub diffuse_directions: usize,
    /// Optional mono WAV files used instead of generated speech.
    pub source_files: Vec<PathBuf>,
    pub frame_len: usize,
    pub smoothing_time: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            room_dims: [7.0, 6.0, 2.7],
            reverb: Reverb::T60 { seconds: 0.31 },
            source_model: SourceModel::Spherical,
            head_position: [3.2, 3.0, 1.3],
            ha_mics: default_ha_mics(),
            emic_position: [1.0, 1.0, 1.0],
            speaker_doas_deg: vec![-30.0, 60.0],
            speaker_distance: 2.0,
            snr_db: Some(5.0),
            sensor_noise_db: -30.0,
            duration: 2.5,
            leading_noise: 0.5,
            sample_rate: 16000,
            speed_of_sound: 343.0,
            seed: 0,
            diffuse_directions: super::noise::DEFAULT_DIRECTIONS,
            source_files: Vec::new(),
            frame_len: 512,
            smoothing_time: 0.25,
        }
    }
}

impl ScenarioConfig {
    pub fn channels(&self) -> usize {
        self.ha_mics.len() + 1
    }

    pub fn mic_positions(&self) -> Vec<[f64; 3]> {
        let h = self.head_position;
        let mut out: Vec<[f64; 3]> = self.ha_mics.iter().map(|p| [h[0] + p[0], h[1] + p[1], h[2] + p[2]]).collect();
        out.push(self.emic_position);
        out
    }

    pub fn speaker_position(&self, doa_deg: f64) -> [f64; 3] {
        let t = doa_deg.to_radians();
        let h = self.head_position;
        [h[0] + self.speaker_distance * t.cos(), h[1] + self.speaker_distance * t.sin(), h[2]]
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(Error::Config(m.to_string()));
        if self.ha_mics.len() < 2 {
            return cfg("at least two hearing-aid microphones are required");
        }
        if !(self.duration > 0.0) || self.leading_noise < 0.0 || self.duration < self.leading_noise {
            return cfg("duration must be positive and cover the leading noise segment");
        }
        if self.sample_rate == 0 || !(self.speed_of_sound > 0.0) || !(self.speaker_distance > 0.0) {
            return cfg("sample rate, speed of sound and speaker distance must be positive");
        }
        if self.frame_len == 0 || self.frame_len % 2 != 0 {
            return cfg("frame length must be even");
        }
        for (i, a) in self.speaker_doas_deg.iter().enumerate() {
            for b in &self.speaker_doas_deg[i + 1..] {
                if circular_distance_deg(*a, *b) < 1e-9 {
                    return cfg("co-located speakers are not allowed");
                }
            }
        }
        if !self.source_files.is_empty() && self.source_files.len() < self.speaker_doas_deg.len() {
            return cfg("fewer source files than speakers");
        }
        if let Reverb::T60 { seconds } = self.reverb {
            if !(seconds > 0.0) {
                return cfg("T60 must be positive");
            }
        }
        if let Reverb::Reflection { coefficient, .. } = self.reverb {
            if !(0.0..=1.0).contains(&coefficient) {
                return cfg("reflection coefficient must lie in [0, 1]");
            }
        }
        if self.source_model == SourceModel::PlaneWave && self.reverb != Reverb::Anechoic {
            return cfg("plane-wave sources require an anechoic scene");
        }
        let room = Room::new(self.room_dims).map_err(|e| Error::Config(e.to_string()))?;
        if self.source_model == SourceModel::Spherical {
            for p in self.mic_positions() {
                if !room.contains(&p) {
                    return cfg("microphone outside the room");
                }
            }
            for &d in &self.speaker_doas_deg {
                if !room.contains(&self.speaker_position(d)) {
                    return cfg("speaker outside the room");
                }
            }
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        self.frame_len / 2
    }
}

/// Undesired-component model: diffuse noise with spherical-isotropic
/// coherence plus uncorrelated sensor noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub diffuse_psd: Vec<f64>,
    pub sensor_psd: Vec<f64>,
}

/// Recursively smoothed per-bin powers at the reference microphone, `[k, l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTracks {
    pub frame_len: usize,
    pub hop: usize,
    /// Source PSD per speaker (direct-path power over the squared reference ATF).
    pub speaker_psd: Vec<Array2<f64>>,
    /// Direct-path power per speaker.
    pub direct_psd: Vec<Array2<f64>>,
    /// Power of reverberation plus noise.
    pub residual_psd: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct SceneTruth {
    pub doas_deg: Vec<f64>,
    pub mic_positions: Vec<[f64; 3]>,
    pub ha_channels: usize,
    pub sample_rate: f64,
    pub speed_of_sound: f64,
    pub leading_samples: usize,
    /// Per speaker, `[channel, sample]`.
    pub direct: Vec<Array2<f64>>,
    pub reverberant: Vec<Array2<f64>>,
    pub noise: Array2<f64>,
    /// Per speaker and frame.
    pub activity: Vec<Vec<bool>>,
    /// Direct-path transfer vectors per speaker and bin, all channels.
    pub atfs: Vec<Vec<CVector>>,
    /// Delay of channel `ha_channels / 2` relative to channel 0, per speaker.
    pub itds: Vec<f64>,
    pub noise_model: NoiseModel,
    pub tracks: OracleTracks,
}

impl SceneTruth {
    pub fn speakers(&self) -> usize {
        self.doas_deg.len()
    }

    pub fn channels(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn frames(&self) -> usize {
        self.tracks.residual_psd.ncols()
    }

    /// Speaker with the strongest direct path at `(k, l)`.
    pub fn dominant_speaker(&self, k: usize, l: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (j, p) in self.tracks.direct_psd.iter().enumerate() {
            let v = p[[k, l]];
            if v > 0.0 && best.map_or(true, |(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        best.map(|(j, _)| j)
    }

    /// Dominant direct power over all other power at the reference microphone (linear).
    pub fn oracle_cdr(&self, k: usize, l: usize) -> f64 {
        let Some(j) = self.dominant_speaker(k, l) else {
            return 0.0;
        };
        let direct = self.tracks.direct_psd[j][[k, l]];
        let others: f64 = self
            .tracks
            .direct_psd
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, p)| p[[k, l]])
            .sum::<f64>()
            + self.tracks.residual_psd[[k, l]];
        if others > 0.0 {
            direct / others
        } else {
            f64::INFINITY
        }
    }

    /// Undesired covariance of bin `k` under the noise model.
    pub fn oracle_phi_u(&self, k: usize) -> HermitianMatrix {
        let f = k as f64 * self.sample_rate / self.tracks.frame_len as f64;
        let n = self.channels();
        let pd = self.noise_model.diffuse_psd[k];
        let ps = self.noise_model.sensor_psd[k];
        let pos = &self.mic_positions;
        HermitianMatrix::from_lower_fn(n, |i, j| {
            let gamma = sinc(2.0 * PI * f * distance(&pos[i], &pos[j]) / self.speed_of_sound);
            let v = pd * gamma + if i == j { ps } else { 0.0 };
            C64::new(v, 0.0)
        })
    }
}

/// Exact model covariances `phi_y = phi_s a a^H + phi_u` for the dominant speaker at `(k, l)`.
pub fn build_oracle_covariances(truth: &SceneTruth, k: usize, l: usize) -> (HermitianMatrix, HermitianMatrix) {
    let phi_u = truth.oracle_phi_u(k);
    let phi_y = match truth.dominant_speaker(k, l) {
        Some(j) => {
            let phi_s = truth.tracks.speaker_psd[j][[k, l]];
            HermitianMatrix::outer(&truth.atfs[j][k]).scale(phi_s).add(&phi_u)
        }
        None => phi_u.clone(),
    };
    (phi_y, phi_u)
}

#[derive(Debug, Clone)]
pub struct Scene {
    /// `[channel, sample]`; the last channel is the external microphone.
    pub mixture: Array2<f64>,
    pub truth: SceneTruth,
}

/// Decorrelated child seed.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Renders the scene. `sources` overrides both generated speech and configured files.
pub fn simulate_scene(cfg: &ScenarioConfig, sources: Option<&[Vec<f64>]>) -> Result<Scene> {
    cfg.validate()?;
    let fs = cfg.sample_rate as f64;
    let c = cfg.speed_of_sound;
    let total = (cfg.duration * fs).round() as usize;
    let lead = ((cfg.leading_noise * fs).round() as usize).min(total);
    let speech_len = total - lead;
    let n_ch = cfg.channels();
    let m_ha = cfg.ha_mics.len();
    let mics = cfg.mic_positions();
    let j_count = cfg.speaker_doas_deg.len();

    let signals: Vec<Vec<f64>> = match sources {
        Some(s) => {
            if s.len() < j_count {
                return Err(Error::invalid("fewer source signals than speakers"));
            }
            s[..j_count].to_vec()
        }
        None if !cfg.source_files.is_empty() => cfg.source_files[..j_count]
            .iter()
            .map(crate::wav::read_mono)
            .collect::<Result<_>>()?,
        None => (0..j_count)
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 100 + j as u64));
                speech_like(speech_len, fs, VoiceProfile::for_speaker(j), &mut rng)
            })
            .collect(),
    };

    let room = Room::new(cfg.room_dims)?;
    let (beta, max_order, rir_tail) = match cfg.reverb {
        Reverb::Anechoic => (0.0, Some(0), 0.0),
        Reverb::T60 { seconds } => (room.eyring_reflection(seconds)?, None, seconds),
        Reverb::Reflection { coefficient, max_order } => (coefficient, Some(max_order), 0.5),
    };
    let bins = cfg.frame_len / 2 + 1;
    let freq = |k: usize| k as f64 * fs / cfg.frame_len as f64;

    let mut direct = Vec::with_capacity(j_count);
    let mut reverberant = Vec::with_capacity(j_count);
    let mut atfs = Vec::with_capacity(j_count);
    let mut itds = Vec::with_capacity(j_count);
    for (j, &doa) in cfg.speaker_doas_deg.iter().enumerate() {
        let mut placed = vec![0.0; total];
        let n = signals[j].len().min(speech_len);
        placed[lead..lead + n].copy_from_slice(&signals[j][..n]);

        // per-microphone delays in seconds and direct-path gains
        let (delays, gains): (Vec<f64>, Vec<f64>) = match cfg.source_model {
            SourceModel::Spherical => {
                let src = cfg.speaker_position(doa);
                mics.iter()
                    .map(|p| {
                        let r = distance(&src, p);
                        (r / c, 1.0 / (4.0 * PI * r))
                    })
                    .unzip()
            }
            SourceModel::PlaneWave => {
                let rel: Vec<f64> = mics
                    .iter()
                    .map(|p| {
                        let q = [p[0] - cfg.head_position[0], p[1] - cfg.head_position[1], p[2] - cfg.head_position[2]];
                        plane_wave_delay(doa, &q, c)
                    })
                    .collect();
                let earliest = rel.iter().copied().fold(f64::INFINITY, f64::min);
                let offset = (cfg.speaker_distance / c).max(-earliest + 8.0 / fs);
                rel.iter().map(|t| (t + offset, 1.0)).unzip()
            }
        };

        let mut d = Array2::zeros((n_ch, total));
        let mut r = Array2::zeros((n_ch, total));
        for m in 0..n_ch {
            let (hd, hr) = match cfg.source_model {
                SourceModel::PlaneWave => {
                    let mut h = vec![0.0; (delays[m] * fs).ceil() as usize + 16];
                    add_fractional_impulse(&mut h, delays[m] * fs, gains[m]);
                    (h, Vec::new())
                }
                SourceModel::Spherical => {
                    let length = ((delays[m] + rir_tail) * fs).ceil() as usize + 16;
                    let params = RirParams {
                        max_order,
                        reflection_coeff: beta,
                        length,
                        sample_rate: fs,
                        speed_of_sound: c,
                    };
                    let h = image_source_rir(&room, &cfg.speaker_position(doa), &mics[m], &params)?;
                    (h.direct, h.reverberant)
                }
            };
            d.row_mut(m).assign(&ndarray::Array1::from(fft_convolve(&placed, &hd)));
            if hr.iter().any(|&v| v != 0.0) {
                r.row_mut(m).assign(&ndarray::Array1::from(fft_convolve(&placed, &hr)));
            }
        }
        let image = &d + &r;
        let p = broadband_power(image.slice(s![.., lead..]), m_ha);
        let g = if p > 0.0 { (SPEAKER_POWER / p).sqrt() } else { 1.0 };
        d.mapv_inplace(|v| v * g);
        r.mapv_inplace(|v| v * g);

        atfs.push(
            (0..bins)
                .map(|k| {
                    CVector::from_iterator(
                        n_ch,
                        (0..n_ch).map(|m| C64::from_polar(g * gains[m], -2.0 * PI * freq(k) * delays[m])),
                    )
                })
                .collect::<Vec<_>>(),
        );
        itds.push(delays[m_ha / 2] - delays[0]);
        direct.push(d);
        reverberant.push(r);
    }

    let speech_sum = direct
        .iter()
        .chain(&reverberant)
        .fold(Array2::<f64>::zeros((n_ch, total)), |acc, x| acc + x);

    let window_power = cfg.frame_len as f64 / 2.0;
    let (noise, diffuse_psd, sensor_psd) = match cfg.snr_db {
        None => (Array2::zeros((n_ch, total)), vec![0.0; bins], vec![0.0; bins]),
        Some(snr) => {
            let diffuse = diffuse_noise(&mics, total, fs, c, sub_seed(cfg.seed, 1), cfg.diffuse_directions)?;
            let sensor_var = broadband_power(diffuse.view(), m_ha) * 10f64.powf(cfg.sensor_noise_db / 10.0);
            let sensor = sensor_noise(n_ch, total, sub_seed(cfg.seed, 2)).mapv(|v| v * sensor_var.sqrt());
            let raw = &diffuse + &sensor;
            let speech_ref = if speech_sum.iter().any(|&v| v != 0.0) { speech_sum.view() } else { raw.view() };
            let scale = snr_scale(speech_ref.slice(s![.., lead..]), raw.slice(s![.., lead..]), m_ha, snr)?;
            let noise = raw.mapv(|v| v * scale);
            let diffuse_stft = analyze(&rows(&diffuse.mapv(|v| v * scale)), fs, cfg.frame_len, cfg.hop())?;
            let frames = diffuse_stft.frames() as f64;
            let dpsd: Vec<f64> = (0..bins)
                .map(|k| {
                    let mut acc = 0.0;
                    for m in 0..m_ha {
                        acc += diffuse_stft.values.slice(s![m, k, ..]).iter().map(|z| z.norm_sqr()).sum::<f64>();
                    }
                    acc / (frames * m_ha as f64)
                })
                .collect();
            let spsd = vec![sensor_var * scale * scale * window_power; bins];
            (noise, dpsd, spsd)
        }
    };

    let mut mixture = Array2::zeros((n_ch, total));
    for x in direct.iter().chain(&reverberant) {
        mixture += x;
    }
    mixture += &noise;

    let tracks = oracle_tracks(cfg, &direct, &reverberant, &noise, &atfs)?;
    let activity = tracks
        .direct_energy
        .iter()
        .map(|e| {
            let max = e.iter().copied().fold(0.0, f64::max);
            e.iter().map(|&v| max > 0.0 && v > 1e-3 * max).collect()
        })
        .collect();

    Ok(Scene {
        mixture,
        truth: SceneTruth {
            doas_deg: cfg.speaker_doas_deg.clone(),
            mic_positions: mics,
            ha_channels: m_ha,
            sample_rate: fs,
            speed_of_sound: c,
            leading_samples: lead,
            direct,
            reverberant,
            noise,
            activity,
            atfs,
            itds,
            noise_model: NoiseModel {
                diffuse_psd,
                sensor_psd,
            },
            tracks: tracks.tracks,
        },
    })
}

struct TrackBuild {
    tracks: OracleTracks,
    direct_energy: Vec<Vec<f64>>,
}

fn oracle_tracks(
    cfg: &ScenarioConfig,
    direct: &[Array2<f64>],
    reverberant: &[Array2<f64>],
    noise: &Array2<f64>,
    atfs: &[Vec<CVector>],
) -> Result<TrackBuild> {
    let fs = cfg.sample_rate as f64;
    let hop = cfg.hop();
    let alpha = smoothing_factor(cfg.smoothing_time, hop, fs);
    let mut residual = noise.row(0).to_vec();
    for r in reverberant {
        for (acc, v) in residual.iter_mut().zip(r.row(0)) {
            *acc += v;
        }
    }
    let mut channels: Vec<Vec<f64>> = direct.iter().map(|d| d.row(0).to_vec()).collect();
    channels.push(residual);
    let t = analyze(&channels, fs, cfg.frame_len, hop)?;
    let (bins, frames) = (t.bins(), t.frames());
    let smooth = |ch: usize| -> Array2<f64> {
        let mut out = Array2::zeros((bins, frames));
        for k in 0..bins {
            let mut acc = 0.0;
            for l in 0..frames {
                acc = alpha * acc + (1.0 - alpha) * t.values[[ch, k, l]].norm_sqr();
                out[[k, l]] = acc;
            }
        }
        out
    };
    let direct_psd: Vec<Array2<f64>> = (0..direct.len()).map(smooth).collect();
    let speaker_psd = direct_psd
        .iter()
        .zip(atfs)
        .map(|(p, a)| {
            let mut out = p.clone();
            for (k, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                let g = a[k][0].norm_sqr();
                row.mapv_inplace(|v| if g > 0.0 { v / g } else { 0.0 });
            }
            out
        })
        .collect();
    let direct_energy = (0..direct.len())
        .map(|j| (0..frames).map(|l| t.values.slice(s![j, .., l]).iter().map(|z| z.norm_sqr()).sum()).collect())
        .collect();
    Ok(TrackBuild {
        tracks: OracleTracks {
            frame_len: cfg.frame_len,
            hop,
            speaker_psd,
            direct_psd,
            residual_psd: smooth(direct.len()),
        },
        direct_energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::whiten;
    use crate::numerics::{hermitian_evd, LoadingPolicy};

    fn short(reverb: Reverb) -> ScenarioConfig {
        ScenarioConfig {
            reverb,
            duration: 1.0,
            leading_noise: 0.25,
            ..Default::default()
        }
    }

    #[test]
    fn components_sum_to_mixture() {
        let s = simulate_scene(&short(Reverb::T60 { seconds: 0.31 }), None).unwrap();
        let mut sum = s.truth.noise.clone();
        for j in 0..s.truth.speakers() {
            sum = sum + &s.truth.direct[j] + &s.truth.reverberant[j];
        }
        let err = (&s.mixture - &sum).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12, "{err}");
        assert!(s.truth.reverberant[0].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn deterministic_scene() {
        let cfg = short(Reverb::Anechoic);
        let a = simulate_scene(&cfg, None).unwrap();
        let b = simulate_scene(&cfg, None).unwrap();
        assert_eq!(a.mixture, b.mixture);
        let c = simulate_scene(&ScenarioConfig { seed: 5, ..cfg }, None).unwrap();
        assert_ne!(a.mixture, c.mixture);
    }

    #[test]
    fn leading_segment_is_noise_only_and_snr_holds() {
        let cfg = short(Reverb::Anechoic);
        let s = simulate_scene(&cfg, None).unwrap();
        let lead = s.truth.leading_samples;
        for d in &s.truth.direct {
            assert!(d.slice(s![.., ..lead]).iter().all(|&v| v.abs() < 1e-15));
        }
        let speech: Array2<f64> = s.truth.direct.iter().fold(Array2::zeros(s.mixture.dim()), |a, d| a + d);
        let ps = broadband_power(speech.slice(s![.., lead..]), 4);
        let pn = broadband_power(s.truth.noise.slice(s![.., lead..]), 4);
        assert!((10.0 * (ps / pn).log10() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn speakers_have_equal_power() {
        let cfg = short(Reverb::T60 { seconds: 0.31 });
        let s = simulate_scene(&cfg, None).unwrap();
        let lead = s.truth.leading_samples;
        for j in 0..2 {
            let img = &s.truth.direct[j] + &s.truth.reverberant[j];
            let p = broadband_power(img.slice(s![.., lead..]), 4);
            assert!((p - SPEAKER_POWER).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_only_scene() {
        let cfg = ScenarioConfig {
            speaker_doas_deg: vec![],
            ..short(Reverb::Anechoic)
        };
        let s = simulate_scene(&cfg, None).unwrap();
        assert!(s.truth.direct.is_empty());
        assert_eq!(s.mixture, s.truth.noise);
        let (py, pu) = build_oracle_covariances(&s.truth, 40, 10);
        assert_eq!(py, pu);
    }

    #[test]
    fn colocated_speakers_rejected() {
        let cfg = ScenarioConfig {
            speaker_doas_deg: vec![30.0, 390.0],
            ..Default::default()
        };
        assert!(matches!(simulate_scene(&cfg, None), Err(Error::Config(_))));
    }

    #[test]
    fn itds_match_geometry() {
        let cfg = ScenarioConfig {
            speaker_doas_deg: vec![90.0, 0.0],
            source_model: SourceModel::PlaneWave,
            ..short(Reverb::Anechoic)
        };
        let s = simulate_scene(&cfg, None).unwrap();
        assert!((s.truth.itds[0] - 0.17 / 343.0).abs() < 1e-12);
        assert!(s.truth.itds[1].abs() < 1e-12);
    }

    #[test]
    fn oracle_covariance_structure() {
        let cfg = ScenarioConfig {
            speaker_doas_deg: vec![45.0],
            ..short(Reverb::Anechoic)
        };
        let s = simulate_scene(&cfg, None).unwrap();
        let l = s.truth.frames() - 5;
        let (py, pu) = build_oracle_covariances(&s.truth, 60, l);
        let diff = HermitianMatrix::symmetrized(&(py.as_matrix() - pu.as_matrix()));
        let e = hermitian_evd(&diff).unwrap();
        assert!(e.eigenvalues[0] > 0.0);
        assert!(e.eigenvalues[1..].iter().all(|v| v.abs() < 1e-9 * e.eigenvalues[0]));
        let (w, _) = whiten(&py, &pu, &LoadingPolicy::default()).unwrap();
        let ev = hermitian_evd(&w).unwrap().eigenvalues;
        assert!(ev[1..].iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn oracle_identity_noise_eigenvalues() {
        let cfg = ScenarioConfig {
            speaker_doas_deg: vec![45.0],
            ..short(Reverb::Anechoic)
        };
        let mut s = simulate_scene(&cfg, None).unwrap();
        // unit sensor noise and no diffuse part gives phi_u = I
        s.truth.noise_model.diffuse_psd.fill(0.0);
        s.truth.noise_model.sensor_psd.fill(1.0);
        let (k, l) = (80, s.truth.frames() - 3);
        let (py, pu) = build_oracle_covariances(&s.truth, k, l);
        assert_eq!(pu, HermitianMatrix::identity(5));
        let a = &s.truth.atfs[0][k];
        let phi_s = s.truth.tracks.speaker_psd[0][[k, l]];
        let ev = hermitian_evd(&py).unwrap().eigenvalues;
        assert!((ev[0] - (phi_s * a.norm_squared() + 1.0)).abs() < 1e-10 * ev[0]);
        assert!(ev[1..].iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn plane_wave_direct_path_matches_atf() {
        let cfg = ScenarioConfig {
            speaker_doas_deg: vec![-60.0],
            source_model: SourceModel::PlaneWave,
            snr_db: None,
            ..short(Reverb::Anechoic)
        };
        let s = simulate_scene(&cfg, None).unwrap();
        let t = analyze(&rows(&s.truth.direct[0]), 16000.0, 512, 256).unwrap();
        // averaged cross-spectrum between HA channels follows the ATF ratio
        let k = 40;
        let (mut cross, mut auto) = (C64::new(0.0, 0.0), 0.0);
        for l in 0..t.frames() {
            cross += t.values[[2, k, l]] * t.values[[0, k, l]].conj();
            auto += t.values[[0, k, l]].norm_sqr();
        }
        let a = &s.truth.atfs[0][k];
        let measured = cross / auto;
        assert!((measured - a[2] / a[0]).norm() < 0.02, "{measured} vs {}", a[2] / a[0]);
    }
}
