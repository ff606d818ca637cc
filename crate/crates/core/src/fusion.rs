//! Frequency selection by coherent-to-diffuse ratio, ITD-based speaker
//! association of bins, and speaker-grouped fusion of spatial spectra.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::C64;
use crate::prototypes::DirectionGrid;
use crate::sim::noise::sinc;

pub const MUSIC_CDR_THRESHOLD_DB: f64 = -3.0;
pub const RTF_CDR_THRESHOLD_DB: f64 = -5.0;

/// Largest coherence magnitude fed into the CDR estimator.
pub const MAX_COHERENCE: f64 = 1.0 - 1e-6;

/// Coherence of an isotropic diffuse field between two points `spacing` metres apart.
pub fn diffuse_coherence(f: f64, spacing: f64, speed_of_sound: f64) -> f64 {
    sinc(2.0 * PI * f * spacing / speed_of_sound)
}

/// DOA-independent CDR estimate (linear) from a measured complex coherence
/// and the diffuse-field coherence model.
pub fn cdr_from_coherence(gamma: C64, gamma_d: f64) -> f64 {
    let mut g = gamma;
    if g.norm() >= MAX_COHERENCE {
        g = C64::from_polar(MAX_COHERENCE, g.arg());
    }
    let mag2 = g.norm_sqr();
    let re = g.re;
    let gd2 = gamma_d * gamma_d;
    let root = (gd2 * re * re - gd2 * mag2 + gd2 - 2.0 * gamma_d * re + mag2).max(0.0).sqrt();
    let cdr = (gamma_d * re - mag2 - root) / (mag2 - 1.0);
    cdr.max(0.0)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Recursively smoothed auto- and cross-PSDs of the two reference channels.
#[derive(Debug, Clone)]
pub struct PsdTracker {
    pub alpha: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub cross: Vec<C64>,
    initialized: bool,
}

impl PsdTracker {
    pub fn new(bins: usize, alpha: f64) -> Self {
        Self {
            alpha,
            left: vec![0.0; bins],
            right: vec![0.0; bins],
            cross: vec![C64::new(0.0, 0.0); bins],
            initialized: false,
        }
    }

    /// The first frame initializes the tracks directly.
    pub fn update(&mut self, left: &[C64], right: &[C64]) {
        let a = if self.initialized { self.alpha } else { 0.0 };
        for k in 0..self.left.len() {
            self.left[k] = a * self.left[k] + (1.0 - a) * left[k].norm_sqr();
            self.right[k] = a * self.right[k] + (1.0 - a) * right[k].norm_sqr();
            self.cross[k] = self.cross[k] * a + left[k] * right[k].conj() * (1.0 - a);
        }
        self.initialized = true;
    }

    pub fn coherence(&self, k: usize) -> C64 {
        let den = (self.left[k] * self.right[k]).sqrt();
        if den > 0.0 {
            self.cross[k] / den
        } else {
            C64::new(0.0, 0.0)
        }
    }
}

/// Per-bin CDR in dB from the tracked PSDs.
pub fn cdr_estimate(tracker: &PsdTracker, freqs: &[f64], spacing: f64, speed_of_sound: f64) -> Vec<f64> {
    freqs
        .iter()
        .enumerate()
        .map(|(k, &f)| to_db(cdr_from_coherence(tracker.coherence(k), diffuse_coherence(f, spacing, speed_of_sound))))
        .collect()
}

pub fn select_frequency_subset(cdr_db: &[f64], threshold_db: f64) -> Vec<bool> {
    cdr_db.iter().map(|&c| c >= threshold_db).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ItdConfig {
    /// Search range `[-max_itd, max_itd]` in seconds.
    pub max_itd: f64,
    /// Lag grid step in samples.
    pub step_samples: f64,
    /// Minimum distance between accepted peaks, in samples.
    pub min_separation_samples: f64,
}

impl Default for ItdConfig {
    fn default() -> Self {
        Self {
            max_itd: 0.6e-3,
            step_samples: 0.25,
            min_separation_samples: 2.0,
        }
    }
}

/// GCC-PHAT correlation of a cross-spectrum evaluated on a lag grid (seconds).
pub fn gcc_phat(cross: &[C64], freqs: &[f64], lags: &[f64]) -> Vec<f64> {
    let weighted: Vec<(C64, f64)> = cross
        .iter()
        .zip(freqs)
        .skip(1)
        .filter(|(c, _)| c.norm() > 0.0)
        .map(|(c, &f)| (c / c.norm(), 2.0 * PI * f))
        .collect();
    lags.iter()
        .map(|&tau| weighted.iter().map(|(g, w)| (g * C64::from_polar(1.0, -w * tau)).re).sum())
        .collect()
}

/// The `j` strongest GCC-PHAT peaks of the cross-spectrum, in ascending order.
/// Missing peaks are filled with copies of the strongest.
pub fn estimate_itds(cross: &[C64], freqs: &[f64], j: usize, sample_rate: f64, cfg: &ItdConfig) -> Result<Vec<f64>> {
    if j == 0 {
        return Err(Error::invalid("at least one speaker is required"));
    }
    let step = cfg.step_samples / sample_rate;
    let n = (cfg.max_itd / step).floor() as i64;
    let lags: Vec<f64> = (-n..=n).map(|i| i as f64 * step).collect();
    let r = gcc_phat(cross, freqs, &lags);
    let mut peaks: Vec<usize> = (0..r.len())
        .filter(|&i| (i == 0 || r[i] > r[i - 1]) && (i + 1 == r.len() || r[i] >= r[i + 1]))
        .collect();
    peaks.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    let min_sep = cfg.min_separation_samples / sample_rate;
    let mut chosen: Vec<f64> = Vec::with_capacity(j);
    for i in peaks {
        if chosen.len() == j {
            break;
        }
        if chosen.iter().all(|&t| (t - lags[i]).abs() >= min_sep - 1e-15) {
            chosen.push(lags[i]);
        }
    }
    if chosen.is_empty() {
        chosen.push(0.0);
    }
    if chosen.len() < j {
        log::debug!("found {} of {j} ITD peaks; duplicating the strongest", chosen.len());
        let strongest = chosen[0];
        chosen.resize(j, strongest);
    }
    chosen.sort_by(f64::total_cmp);
    Ok(chosen)
}

/// Speaker index per bin maximizing `cos(ipd - 2 pi f tau_j)`; ties go to the smaller index.
pub fn associate_bins(ipd: &[f64], itds: &[f64], freqs: &[f64]) -> Result<Vec<usize>> {
    if itds.is_empty() {
        return Err(Error::invalid("at least one ITD is required"));
    }
    Ok(ipd
        .iter()
        .zip(freqs)
        .map(|(&phi, &f)| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (j, &tau) in itds.iter().enumerate() {
                let score = (phi - 2.0 * PI * f * tau).cos();
                if score > best_score {
                    best = j;
                    best_score = score;
                }
            }
            best
        })
        .collect())
}

/// Which bins enter the fusion, and for which speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct BinAssociation {
    /// Speaker index per bin (a one-hot indicator in index form).
    pub speaker: Vec<usize>,
    pub subset_mask: Vec<bool>,
    pub itds: Vec<f64>,
}

impl BinAssociation {
    pub fn indicator(&self, k: usize, j: usize) -> bool {
        self.speaker[k] == j
    }

    pub fn bins(&self) -> usize {
        self.speaker.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub frame_index: usize,
    /// Per speaker; `None` when no bin was assigned to that speaker.
    pub angles: Vec<Option<f64>>,
}

impl DoaEstimate {
    pub fn is_empty(&self) -> bool {
        self.angles.iter().all(Option::is_none)
    }
}

/// Per speaker, sums the spectra of its selected bins and picks the best grid
/// direction. Equal sums resolve to the smaller angle.
pub fn fuse_and_argmax(
    spectra: &[Option<Vec<f64>>],
    assoc: &BinAssociation,
    speakers: usize,
    grid: &DirectionGrid,
    frame_index: usize,
) -> DoaEstimate {
    let mut sums = vec![vec![0.0; grid.len()]; speakers];
    let mut counts = vec![0usize; speakers];
    for (k, s) in spectra.iter().enumerate() {
        let Some(s) = s else { continue };
        if !assoc.subset_mask[k] {
            continue;
        }
        let j = assoc.speaker[k];
        if j >= speakers {
            continue;
        }
        for (acc, v) in sums[j].iter_mut().zip(s) {
            *acc += v;
        }
        counts[j] += 1;
    }
    let angles = sums
        .iter()
        .zip(&counts)
        .map(|(sum, &n)| {
            if n == 0 {
                return None;
            }
            let angles = grid.angles();
            let mut best = 0;
            for i in 1..sum.len() {
                if sum[i] > sum[best] || (sum[i] == sum[best] && angles[i] < angles[best]) {
                    best = i;
                }
            }
            Some(angles[best])
        })
        .collect();
    DoaEstimate { frame_index, angles }
}
