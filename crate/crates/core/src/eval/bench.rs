//! Benchmark sweep over DOA pairs, SNRs, reverberation and eMic positions.

use std::collections::BTreeMap;

use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::accuracy::{accuracy, AccuracyResult, DEFAULT_TOLERANCE_DEG};
use super::pipeline::{run_pipeline, ArrayGeometry, CovarianceSource, Gating, PipelineConfig, RunDiagnostics, RunOptions};
use crate::error::{Error, Result};
use crate::sim::rir::T60_PRESETS;
use crate::sim::scene::{simulate_scene, sub_seed, Reverb, ScenarioConfig};
use crate::spectra::{Condition, Method};

pub const THREADS_ENV: &str = "SUBDOA_THREADS";

/// Candidate speaker azimuths: -150 to 180 in 30 degree steps.
pub fn candidate_doas() -> Vec<f64> {
    (0..12).map(|i| -150.0 + 30.0 * i as f64).collect()
}

/// All ordered pairs of distinct candidate azimuths.
pub fn all_doa_pairs() -> Vec<[f64; 2]> {
    let d = candidate_doas();
    let mut out = Vec::with_capacity(d.len() * (d.len() - 1));
    for &a in &d {
        for &b in &d {
            if a != b {
                out.push([a, b]);
            }
        }
    }
    out
}

/// `count` distinct ordered pairs drawn by seed, in sampling order.
pub fn sample_doa_pairs(count: usize, seed: u64) -> Vec<[f64; 2]> {
    let all = all_doa_pairs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, all.len(), count.min(all.len())).into_iter().map(|i| all[i]).collect()
}

pub fn desk_emic_positions() -> Vec<[f64; 3]> {
    vec![
        [1.0, 1.0, 1.0],
        [6.0, 1.2, 1.2],
        [5.5, 5.0, 1.4],
        [1.5, 5.2, 0.9],
        [3.2, 4.3, 1.1],
        [4.6, 2.2, 1.3],
    ]
}

/// 6 x 6 grid of positions at 1.2 m height spanning the room floor.
pub fn grid_emic_positions(room: [f64; 3]) -> Vec<[f64; 3]> {
    let margin = 0.75;
    let axis = |len: f64, i: usize| margin + (len - 2.0 * margin) * i as f64 / 5.0;
    let mut out = Vec::with_capacity(36);
    for ix in 0..6 {
        for iy in 0..6 {
            out.push([axis(room[0], ix), axis(room[1], iy), 1.2f64.min(room[2] - 0.3)]);
        }
    }
    out
}

pub fn reverb_label(r: &Reverb) -> String {
    match r {
        Reverb::Anechoic => "order0".into(),
        Reverb::T60 { seconds } => format!("t60_{:.0}ms", seconds * 1000.0),
        Reverb::Reflection { coefficient, max_order } => format!("beta{coefficient:.2}_order{max_order}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Template for every scenario; DOAs, SNR, reverb, eMic and seed are overwritten.
    pub scenario: ScenarioConfig,
    pub pipeline: PipelineConfig,
    /// Explicit DOA pairs; sampled from all ordered pairs when empty.
    pub doa_pairs: Vec<[f64; 2]>,
    pub pair_count: usize,
    pub snrs_db: Vec<f64>,
    pub reverbs: Vec<Reverb>,
    pub emic_positions: Vec<[f64; 3]>,
    pub gating: Gating,
    pub covariance: CovarianceSource,
    pub tolerance_deg: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            pipeline: PipelineConfig::default(),
            doa_pairs: Vec::new(),
            pair_count: 12,
            snrs_db: vec![-5.0, 5.0, 15.0],
            reverbs: vec![Reverb::Anechoic, Reverb::T60 { seconds: 0.31 }],
            emic_positions: desk_emic_positions(),
            gating: Gating::OracleVad,
            covariance: CovarianceSource::Estimated,
            tolerance_deg: DEFAULT_TOLERANCE_DEG,
            seed: 2024,
        }
    }
}

impl BenchmarkConfig {
    /// Replaces the grid by all 132 pairs, SNRs -5..20 dB, three T60 presets
    /// and 36 eMic positions.
    pub fn with_full_grid(mut self) -> Self {
        self.doa_pairs = all_doa_pairs();
        self.snrs_db = (0..6).map(|i| -5.0 + 5.0 * i as f64).collect();
        self.reverbs = T60_PRESETS.iter().map(|&seconds| Reverb::T60 { seconds }).collect();
        self.emic_positions = grid_emic_positions(self.scenario.room_dims);
        self
    }

    pub fn pairs(&self) -> Vec<[f64; 2]> {
        if self.doa_pairs.is_empty() {
            sample_doa_pairs(self.pair_count, self.seed)
        } else {
            self.doa_pairs.clone()
        }
    }

    pub fn scenarios(&self) -> Vec<ScenarioKey> {
        let pairs = self.pairs();
        let mut out = Vec::new();
        for (p, pair) in pairs.iter().enumerate() {
            for (s, &snr) in self.snrs_db.iter().enumerate() {
                for (r, reverb) in self.reverbs.iter().enumerate() {
                    for (e, &emic) in self.emic_positions.iter().enumerate() {
                        out.push(ScenarioKey {
                            id: out.len(),
                            pair_index: p,
                            doas_deg: *pair,
                            snr_db: snr,
                            snr_index: s,
                            reverb: *reverb,
                            reverb_index: r,
                            emic_index: e,
                            emic_position: emic,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.pipeline.frame_len != self.scenario.frame_len {
            return Err(Error::Config("pipeline and scenario frame lengths differ".into()));
        }
        if self.snrs_db.is_empty() || self.reverbs.is_empty() || self.emic_positions.is_empty() {
            return Err(Error::Config("benchmark grid has an empty axis".into()));
        }
        if self.doa_pairs.is_empty() && self.pair_count == 0 {
            return Err(Error::Config("no DOA pairs requested".into()));
        }
        if !(self.tolerance_deg > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        self.scenario.validate()
    }

    /// Scenario configuration for one grid point. The seed ignores the eMic
    /// index so that all eMic positions share sources and HA-channel noise.
    pub fn scenario_config(&self, key: &ScenarioKey) -> ScenarioConfig {
        let mut cfg = self.scenario.clone();
        cfg.speaker_doas_deg = key.doas_deg.to_vec();
        cfg.snr_db = Some(key.snr_db);
        cfg.reverb = key.reverb;
        cfg.emic_position = key.emic_position;
        let tag = ((key.pair_index as u64) << 32) | ((key.snr_index as u64) << 16) | key.reverb_index as u64;
        cfg.seed = sub_seed(self.seed, tag);
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioKey {
    pub id: usize,
    pub pair_index: usize,
    pub doas_deg: [f64; 2],
    pub snr_db: f64,
    pub snr_index: usize,
    pub reverb: Reverb,
    pub reverb_index: usize,
    pub emic_index: usize,
    pub emic_position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAccuracy {
    pub method: Method,
    pub condition: Condition,
    pub result: AccuracyResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub key: ScenarioKey,
    pub accuracies: Vec<ConditionAccuracy>,
    pub diagnostics: RunDiagnostics,
}

impl ScenarioResult {
    pub fn acc(&self, method: Method, condition: Condition) -> Option<f64> {
        self.accuracies
            .iter()
            .find(|a| a.method == method && a.condition == condition)
            .map(|a| a.result.acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFailure {
    pub key: ScenarioKey,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub method: Method,
    pub condition: Condition,
    pub mean_acc: f64,
    pub per_emic_mean: Vec<f64>,
    pub min_emic_mean: f64,
    pub per_snr_mean: BTreeMap<String, f64>,
    pub per_reverb_mean: BTreeMap<String, f64>,
    pub no_estimate_frames: usize,
    pub evaluated_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub scenarios: usize,
    pub failed: usize,
    pub conditions: Vec<ConditionSummary>,
    pub ill_conditioned_bins: usize,
    pub degenerate_rtf_prototypes: usize,
    pub degenerate_estimates: usize,
    pub failures: Vec<ScenarioFailure>,
}

impl BenchmarkSummary {
    pub fn get(&self, method: Method, condition: Condition) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|c| c.method == method && c.condition == condition)
    }

    pub fn mean(&self, method: Method, condition: Condition) -> f64 {
        self.get(method, condition).map_or(f64::NAN, |c| c.mean_acc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    /// Sorted by scenario id.
    pub results: Vec<ScenarioResult>,
    pub failures: Vec<ScenarioFailure>,
    pub summary: BenchmarkSummary,
    pub emic_positions: Vec<[f64; 3]>,
}

fn run_one(
    cfg: &BenchmarkConfig,
    geometry: &ArrayGeometry,
    key: &ScenarioKey,
    requests: Vec<(Method, Condition)>,
) -> Result<ScenarioResult> {
    let scfg = cfg.scenario_config(key);
    let scene = simulate_scene(&scfg, None)?;
    let hop = cfg.pipeline.hop();
    let opts = RunOptions {
        gating: cfg.gating,
        covariance: cfg.covariance,
        requests,
        eval_start_frame: scene.truth.leading_samples.div_ceil(hop),
        prototypes: None,
    };
    let out = run_pipeline(&scene.mixture, geometry, scfg.speaker_doas_deg.len(), &cfg.pipeline, &opts, Some(&scene.truth))?;
    let accuracies = out
        .requests
        .iter()
        .zip(&out.estimates)
        .map(|(&(method, condition), est)| ConditionAccuracy {
            method,
            condition,
            result: accuracy(est, &scfg.speaker_doas_deg, cfg.tolerance_deg),
        })
        .collect();
    Ok(ScenarioResult {
        key: *key,
        accuracies,
        diagnostics: out.diagnostics,
    })
}

/// Runs the eMic positions of one (pair, SNR, reverb) group. All positions
/// share sources and hearing-aid signals, so the H/H results of the first
/// successful position are reused for the others.
fn run_group(cfg: &BenchmarkConfig, geometry: &ArrayGeometry, keys: &[ScenarioKey]) -> Vec<(ScenarioKey, Result<ScenarioResult>)> {
    let all = RunOptions::all_requests();
    let mut hh: Option<Vec<ConditionAccuracy>> = None;
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let requests = match hh {
            Some(_) => all.iter().copied().filter(|r| r.1 != Condition::HH).collect(),
            None => all.clone(),
        };
        let result = run_one(cfg, geometry, key, requests).map(|mut r| {
            match &hh {
                Some(shared) => {
                    r.accuracies.extend(shared.iter().cloned());
                    r.accuracies.sort_by_key(|a| all.iter().position(|&x| x == (a.method, a.condition)));
                }
                None => hh = Some(r.accuracies.iter().filter(|a| a.condition == Condition::HH).cloned().collect()),
            }
            r
        });
        out.push((*key, result));
    }
    out
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs the whole grid. Failed scenarios are logged and reported, never fatal.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let geometry = ArrayGeometry {
        ha_mics: cfg.scenario.ha_mics.clone(),
        sample_rate: cfg.scenario.sample_rate,
    };
    let keys = cfg.scenarios();
    info!("benchmark: {} scenarios", keys.len());
    let pool = thread_pool()?;
    let groups: Vec<&[ScenarioKey]> = keys.chunk_by(|a, b| (a.pair_index, a.snr_index, a.reverb_index) == (b.pair_index, b.snr_index, b.reverb_index)).collect();
    let outcomes: Vec<(ScenarioKey, Result<ScenarioResult>)> = pool.install(|| {
        groups
            .par_iter()
            .flat_map_iter(|g| run_group(cfg, &geometry, g))
            .collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (key, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => {
                warn!("scenario {} failed: {e}", key.id);
                failures.push(ScenarioFailure { key, error: e.to_string() });
            }
        }
    }
    results.sort_by_key(|r| r.key.id);
    failures.sort_by_key(|f| f.key.id);
    let summary = summarize(&results, &failures, cfg);
    Ok(BenchmarkReport {
        results,
        failures,
        summary,
        emic_positions: cfg.emic_positions.clone(),
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn summarize(results: &[ScenarioResult], failures: &[ScenarioFailure], cfg: &BenchmarkConfig) -> BenchmarkSummary {
    let mut conditions = Vec::new();
    for method in Method::ALL {
        for condition in Condition::ALL {
            let find = |r: &ScenarioResult| {
                r.accuracies
                    .iter()
                    .find(|a| a.method == method && a.condition == condition)
                    .map(|a| a.result)
            };
            let all: Vec<AccuracyResult> = results.iter().filter_map(find).collect();
            let accs: Vec<f64> = all.iter().map(|a| a.acc).collect();
            let per_emic_mean: Vec<f64> = (0..cfg.emic_positions.len())
                .map(|e| {
                    let v: Vec<f64> = results
                        .iter()
                        .filter(|r| r.key.emic_index == e)
                        .filter_map(|r| find(r).map(|a| a.acc))
                        .collect();
                    mean(&v)
                })
                .collect();
            let min_emic_mean = per_emic_mean.iter().copied().filter(|v| v.is_finite()).fold(f64::NAN, f64::min);
            let group = |label: &dyn Fn(&ScenarioResult) -> String| {
                let mut m: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                for r in results {
                    if let Some(a) = find(r) {
                        m.entry(label(r)).or_default().push(a.acc);
                    }
                }
                m.into_iter().map(|(k, v)| (k, mean(&v))).collect::<BTreeMap<_, _>>()
            };
            conditions.push(ConditionSummary {
                method,
                condition,
                mean_acc: mean(&accs),
                per_emic_mean,
                min_emic_mean,
                per_snr_mean: group(&|r| format!("{}", r.key.snr_db)),
                per_reverb_mean: group(&|r| reverb_label(&r.key.reverb)),
                no_estimate_frames: all.iter().map(|a| a.no_estimate_frames).sum(),
                evaluated_frames: all.iter().map(|a| a.frames).sum(),
            });
        }
    }
    BenchmarkSummary {
        scenarios: results.len(),
        failed: failures.len(),
        conditions,
        ill_conditioned_bins: results.iter().map(|r| r.diagnostics.spectra.ill_conditioned_bins).sum(),
        degenerate_rtf_prototypes: results.iter().map(|r| r.diagnostics.spectra.degenerate_rtf_prototypes).sum(),
        degenerate_estimates: results.iter().map(|r| r.diagnostics.spectra.degenerate_estimates).sum(),
        failures: failures.to_vec(),
    }
}
