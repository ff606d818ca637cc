//! Frame-by-frame DOA pipeline: STFT, covariance tracking, spectra for every
//! requested method/condition pair, and speaker-grouped fusion.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::covariance::{smoothing_factor, CovarianceState, PresenceDecision, PresenceDetector, SppConfig};
use crate::error::{Error, Result};
use crate::fusion::{
    associate_bins, cdr_estimate, estimate_itds, fuse_and_argmax, select_frequency_subset, to_db, BinAssociation,
    DoaEstimate, ItdConfig, PsdTracker, MUSIC_CDR_THRESHOLD_DB, RTF_CDR_THRESHOLD_DB,
};
use crate::numerics::{CVector, LoadingPolicy, C64};
use crate::prototypes::{generate_freefield_set, DirectionGrid, PrototypeSet};
use crate::sim::scene::{build_oracle_covariances, SceneTruth};
use crate::sim::rir::distance;
use crate::spectra::{bin_spectra, Condition, Method, PrototypeBank, RtfIncompleteMode, SpectraConfig, SpectraDiagnostics};
use crate::stft::{analyze, StftTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    /// SPP-routed covariances, CDR from coherence, GCC-PHAT ITDs.
    #[default]
    Estimated,
    /// Ground-truth voice activity; CDR and ITDs still estimated.
    OracleVad,
    /// Voice activity, CDR and bin association taken from the scene truth.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSource {
    #[default]
    Estimated,
    /// Exact model covariances of the dominant speaker.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleAssociation {
    /// Phase test against the geometric ITDs.
    #[default]
    GeometricItd,
    /// Speaker with the strongest direct-path power in the bin.
    DirectPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub frame_len: usize,
    pub smoothing_y: f64,
    pub smoothing_u: f64,
    pub reference_index: usize,
    /// Channels of the left and right reference microphones.
    pub left_channel: usize,
    pub right_channel: usize,
    pub speed_of_sound: f64,
    pub grid_step_deg: f64,
    pub music_cdr_db: f64,
    pub rtf_cdr_db: f64,
    pub itd: ItdConfig,
    pub spp: SppConfig,
    /// Speech and noise updates required before frames are evaluated.
    pub warmup_updates: usize,
    pub rtf_incomplete: RtfIncompleteMode,
    pub oracle_association: OracleAssociation,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            smoothing_y: 0.25,
            smoothing_u: 0.5,
            reference_index: 0,
            left_channel: 0,
            right_channel: 2,
            speed_of_sound: 343.0,
            grid_step_deg: 5.0,
            music_cdr_db: MUSIC_CDR_THRESHOLD_DB,
            rtf_cdr_db: RTF_CDR_THRESHOLD_DB,
            itd: ItdConfig::default(),
            spp: SppConfig::default(),
            warmup_updates: 3,
            rtf_incomplete: RtfIncompleteMode::HaSubvector,
            oracle_association: OracleAssociation::GeometricItd,
        }
    }
}

impl PipelineConfig {
    pub fn hop(&self) -> usize {
        self.frame_len / 2
    }

    pub fn cdr_threshold(&self, method: Method) -> f64 {
        match method {
            Method::Music => self.music_cdr_db,
            Method::RtfMatch => self.rtf_cdr_db,
        }
    }
}

/// Array description shared by prototypes and the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Hearing-aid microphones relative to the head centre.
    pub ha_mics: Vec<[f64; 3]>,
    pub sample_rate: u32,
}

impl ArrayGeometry {
    pub fn prototype_bank(&self, cfg: &PipelineConfig) -> Result<(PrototypeBank, DirectionGrid)> {
        let grid = DirectionGrid::uniform(cfg.grid_step_deg)?;
        let set = generate_freefield_set(&self.ha_mics, &grid, cfg.frame_len / 2 + 1, self.sample_rate, cfg.speed_of_sound)?;
        Ok((PrototypeBank::new(set, cfg.reference_index)?, grid))
    }

    pub fn reference_spacing(&self, cfg: &PipelineConfig) -> f64 {
        distance(&self.ha_mics[cfg.left_channel], &self.ha_mics[cfg.right_channel])
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub gating: Gating,
    pub covariance: CovarianceSource,
    pub requests: Vec<(Method, Condition)>,
    /// First frame that may be evaluated.
    pub eval_start_frame: usize,
    /// Hearing-aid ATF set to use instead of free-field prototypes.
    pub prototypes: Option<PrototypeSet>,
}

impl RunOptions {
    pub fn all_requests() -> Vec<(Method, Condition)> {
        Method::ALL
            .iter()
            .flat_map(|&m| Condition::ALL.iter().map(move |&c| (m, c)))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub spectra: SpectraDiagnostics,
    pub evaluated_frames: usize,
    /// Bins that entered spectrum computation.
    pub computed_bins: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub requests: Vec<(Method, Condition)>,
    /// Per request, one estimate per evaluated frame.
    pub estimates: Vec<Vec<DoaEstimate>>,
    pub diagnostics: RunDiagnostics,
}

impl RunOutput {
    pub fn estimates_for(&self, method: Method, condition: Condition) -> Option<&[DoaEstimate]> {
        self.requests
            .iter()
            .position(|&r| r == (method, condition))
            .map(|i| self.estimates[i].as_slice())
    }
}

fn rows(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.outer_iter().map(|r| r.to_vec()).collect()
}

/// Runs every requested method/condition pair over the mixture in a single pass.
pub fn run_pipeline(
    mixture: &Array2<f64>,
    geometry: &ArrayGeometry,
    speakers: usize,
    cfg: &PipelineConfig,
    opts: &RunOptions,
    truth: Option<&SceneTruth>,
) -> Result<RunOutput> {
    let m = geometry.ha_mics.len();
    if mixture.nrows() != m + 1 {
        return Err(Error::invalid(format!("mixture has {} channels, expected {}", mixture.nrows(), m + 1)));
    }
    if speakers == 0 {
        return Err(Error::invalid("at least one speaker is required"));
    }
    let needs_truth = opts.gating != Gating::Estimated || opts.covariance == CovarianceSource::Oracle;
    let truth = match (needs_truth, truth) {
        (true, None) => return Err(Error::invalid("oracle mode requires the scene truth")),
        (_, t) => t,
    };
    if let Some(t) = truth {
        if needs_truth && (t.tracks.frame_len != cfg.frame_len || t.speakers() != speakers) {
            return Err(Error::invalid("scene truth does not match the pipeline framing or speaker count"));
        }
    }
    let requests = if opts.requests.is_empty() { RunOptions::all_requests() } else { opts.requests.clone() };
    let fs = geometry.sample_rate as f64;
    let stft = analyze(&rows(mixture), fs, cfg.frame_len, cfg.hop())?;
    let (bank, grid) = match &opts.prototypes {
        Some(set) => {
            if set.channels != m || set.bins != cfg.frame_len / 2 + 1 || set.sample_rate != geometry.sample_rate {
                return Err(Error::invalid("prototype set does not match the array geometry or framing"));
            }
            (PrototypeBank::new(set.clone(), cfg.reference_index)?, set.grid.clone())
        }
        None => geometry.prototype_bank(cfg)?,
    };
    let spectra_cfg = SpectraConfig {
        reference_index: cfg.reference_index,
        rtf_incomplete: cfg.rtf_incomplete,
        loading: LoadingPolicy::default(),
    };
    let bins = stft.bins();
    let freqs: Vec<f64> = (0..bins).map(|k| stft.bin_frequency(k)).collect();
    let spacing = geometry.reference_spacing(cfg);
    let alpha_y = smoothing_factor(cfg.smoothing_y, cfg.hop(), fs);
    let alpha_u = smoothing_factor(cfg.smoothing_u, cfg.hop(), fs);

    let mut state = CovarianceState::new(bins, m + 1, alpha_y, alpha_u);
    let mut detector = PresenceDetector::new(m, bins, cfg.spp);
    let mut psd = PsdTracker::new(bins, alpha_y);
    let methods: Vec<Method> = Method::ALL.iter().copied().filter(|me| requests.iter().any(|r| r.0 == *me)).collect();

    let mut estimates = vec![Vec::new(); requests.len()];
    let mut diagnostics = RunDiagnostics::default();
    for l in 0..stft.frames() {
        let left: Vec<C64> = stft.frame(cfg.left_channel, l).to_vec();
        let right: Vec<C64> = stft.frame(cfg.right_channel, l).to_vec();
        psd.update(&left, &right);
        if opts.covariance == CovarianceSource::Estimated {
            let decision = match (opts.gating, truth) {
                (Gating::Oracle | Gating::OracleVad, Some(t)) => PresenceDecision::oracle(t.activity.iter().any(|a| a.get(l).copied().unwrap_or(false))),
                _ => {
                    let ha: Vec<_> = (0..m).map(|ch| stft.frame(ch, l)).collect();
                    detector.classify_frame(&ha)
                }
            };
            let snapshots: Vec<CVector> = (0..bins).map(|k| stft.snapshot(k, l)).collect();
            state.update(&snapshots, decision);
            if !state.is_warmed_up(cfg.warmup_updates) {
                continue;
            }
        }
        if l < opts.eval_start_frame {
            continue;
        }
        diagnostics.evaluated_frames += 1;

        let cdr_db: Vec<f64> = match (opts.gating, truth) {
            (Gating::Oracle, Some(t)) => (0..bins).map(|k| to_db(t.oracle_cdr(k, l))).collect(),
            _ => cdr_estimate(&psd, &freqs, spacing, cfg.speed_of_sound),
        };
        let masks: Vec<Vec<bool>> = methods
            .iter()
            .map(|&me| select_frequency_subset(&cdr_db, cfg.cdr_threshold(me)))
            .collect();
        let speaker = associate(&stft, l, &left, &right, &psd, &freqs, speakers, cfg, opts.gating, truth)?;

        let mut frame_spectra: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; bins]; requests.len()];
        for k in 0..bins {
            let active: Vec<usize> = (0..requests.len())
                .filter(|&r| {
                    let mi = methods.iter().position(|&me| me == requests[r].0).unwrap();
                    masks[mi][k]
                })
                .collect();
            if active.is_empty() {
                continue;
            }
            let sub: Vec<(Method, Condition)> = active.iter().map(|&r| requests[r]).collect();
            let out = match opts.covariance {
                CovarianceSource::Estimated => bin_spectra(&state.phi_y[k], &state.phi_u[k], &bank, k, &sub, &spectra_cfg),
                CovarianceSource::Oracle => {
                    let (py, pu) = build_oracle_covariances(truth.expect("checked above"), k, l);
                    bin_spectra(&py, &pu, &bank, k, &sub, &spectra_cfg)
                }
            };
            let out = match out {
                Ok(o) => o,
                Err(Error::NumericalFailure(msg)) => {
                    log::debug!("frame {l} bin {k} skipped: {msg}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            diagnostics.computed_bins += 1;
            diagnostics.spectra.merge(&out.diagnostics);
            for (&r, s) in active.iter().zip(out.spectra) {
                frame_spectra[r][k] = s;
            }
        }
        for (r, &(method, _)) in requests.iter().enumerate() {
            let mi = methods.iter().position(|&me| me == method).unwrap();
            let assoc = BinAssociation {
                speaker: speaker.clone(),
                subset_mask: masks[mi].clone(),
                itds: Vec::new(),
            };
            estimates[r].push(fuse_and_argmax(&frame_spectra[r], &assoc, speakers, &grid, l));
        }
    }
    Ok(RunOutput {
        requests,
        estimates,
        diagnostics,
    })
}

#[allow(clippy::too_many_arguments)]
fn associate(
    stft: &StftTensor,
    l: usize,
    left: &[C64],
    right: &[C64],
    psd: &PsdTracker,
    freqs: &[f64],
    speakers: usize,
    cfg: &PipelineConfig,
    gating: Gating,
    truth: Option<&SceneTruth>,
) -> Result<Vec<usize>> {
    let bins = freqs.len();
    if speakers == 1 {
        return Ok(vec![0; bins]);
    }
    let ipd: Vec<f64> = left.iter().zip(right).map(|(a, b)| (a * b.conj()).arg()).collect();
    match (gating, truth) {
        (Gating::Oracle, Some(t)) => match cfg.oracle_association {
            OracleAssociation::GeometricItd => associate_bins(&ipd, &t.itds, freqs),
            OracleAssociation::DirectPower => Ok((0..bins).map(|k| t.dominant_speaker(k, l).unwrap_or(0)).collect()),
        },
        _ => {
            let itds = estimate_itds(&psd.cross, freqs, speakers, stft.sample_rate, &cfg.itd)?;
            associate_bins(&ipd, &itds, freqs)
        }
    }
}
