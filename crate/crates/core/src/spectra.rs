//! Frequency-dependent spatial spectra: MUSIC and RTF-vector matching under
//! the three array/prototype conditions.
//!
//! * `HH`: eigen-decomposition of the hearing-aid block only, matched against
//!   hearing-aid prototypes.
//! * `HeH`: eigen-decomposition with the external microphone, matched against
//!   hearing-aid prototypes (MUSIC zero-pads the missing element, RTF
//!   matching compares hearing-aid sub-vectors).
//! * `HeHe`: eigen-decomposition with the external microphone, matched against
//!   prototypes completed per bin by [`crate::completion`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use nalgebra::{Dyn, Matrix, RawStorage, Storage};

use crate::completion::{partition_noise_subspace, MIN_ALPHA};
use crate::covariance::{whiten, CovarianceState};
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector, HermitianMatrix, LoadingPolicy, C64};
use crate::prototypes::{atf_to_rtf, PrototypeScope, PrototypeSet, TransferKind};
use crate::subspace::{decompose, estimate_rtf_cw, WhitenedDecomposition};

/// Smallest MUSIC denominator; exact orthogonality produces a finite peak.
pub const MUSIC_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Music,
    #[serde(rename = "rtf")]
    RtfMatch,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Music, Method::RtfMatch];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Music => "music",
            Method::RtfMatch => "rtf",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "music" => Ok(Method::Music),
            "rtf" | "rtf_match" => Ok(Method::RtfMatch),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "hh")]
    HH,
    #[serde(rename = "heh")]
    HeH,
    #[serde(rename = "hehe")]
    HeHe,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::HH, Condition::HeH, Condition::HeHe];

    /// Label in the `H/H`, `H+E/H`, `H+E/H+E` notation.
    pub fn label(&self) -> &'static str {
        match self {
            Condition::HH => "H/H",
            Condition::HeH => "H+E/H",
            Condition::HeHe => "H+E/H+E",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::HH => "hh",
            Condition::HeH => "heh",
            Condition::HeHe => "hehe",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hh" | "h/h" => Ok(Condition::HH),
            "heh" | "h+e/h" => Ok(Condition::HeH),
            "hehe" | "h+e/h+e" => Ok(Condition::HeHe),
            other => Err(Error::Config(format!("unknown condition '{other}'"))),
        }
    }
}

/// How RTF matching compares a full estimate against hearing-aid-only prototypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtfIncompleteMode {
    /// Compare the hearing-aid sub-vector of the estimate.
    #[default]
    HaSubvector,
    /// Compare the full estimate with the prototype zero-padded.
    ZeroPadded,
}

/// Spatial spectrum of one frame: `values[k]` is `None` where no spectrum was built.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSpectrum {
    pub values: Vec<Option<Vec<f64>>>,
    pub method: Method,
    pub condition: Condition,
}

/// MUSIC pseudo-spectrum `1 / ||Q_n^H a||^2` for each candidate.
pub fn music_sps(noise_basis: &CMatrix, candidates: &[CVector]) -> Result<Vec<f64>> {
    candidates
        .iter()
        .map(|a| {
            if a.len() != noise_basis.nrows() {
                return Err(Error::invalid(format!(
                    "candidate has {} elements, noise basis {} rows",
                    a.len(),
                    noise_basis.nrows()
                )));
            }
            let proj = noise_basis.ad_mul(a);
            Ok(1.0 / proj.norm_squared().max(MUSIC_FLOOR))
        })
        .collect()
}

/// Divides by the maximum over directions.
pub fn normalize_sps(raw: &[f64]) -> Result<Vec<f64>> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::invalid("spectrum maximum must be positive and finite"));
    }
    Ok(raw.iter().map(|&x| x / max).collect())
}

/// Negative Hermitian angle `-acos(|a^H b| / (||a|| ||b||))`, in `[-pi/2, 0]`.
pub fn neg_hermitian_angle(a: &CVector, b: &CVector) -> Result<f64> {
    let na = a.norm();
    let nb = b.norm();
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::invalid("zero-norm vector in Hermitian angle"));
    }
    if a.len() != b.len() {
        return Err(Error::invalid("vectors differ in length"));
    }
    let ua = a / C64::new(na, 0.0);
    let ub = b / C64::new(nb, 0.0);
    let inner = ua.dotc(&ub);
    let cos = inner.norm().clamp(0.0, 1.0);
    // residual norm keeps small angles accurate where acos loses half the digits
    let sin = (&ub - &ua * inner).norm().clamp(0.0, 1.0);
    Ok(-sin.atan2(cos))
}

/// RTF-matching spectrum of an estimated RTF vector against candidate RTF vectors.
pub fn rtf_match_sps(g_hat: &CVector, candidates: &[CVector]) -> Result<Vec<f64>> {
    candidates.iter().map(|g| neg_hermitian_angle(g, g_hat)).collect()
}

/// Hearing-aid prototypes in both representations.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    pub atf: PrototypeSet,
    pub rtf: PrototypeSet,
    pub reference_index: usize,
}

impl PrototypeBank {
    pub fn new(atf: PrototypeSet, reference_index: usize) -> Result<Self> {
        if atf.kind != TransferKind::Atf || atf.scope != PrototypeScope::HaOnly {
            return Err(Error::invalid("prototype bank needs a hearing-aid-only ATF set"));
        }
        let rtf = atf_to_rtf(&atf, reference_index)?;
        Ok(Self {
            atf,
            rtf,
            reference_index,
        })
    }

    pub fn channels(&self) -> usize {
        self.atf.channels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraConfig {
    pub reference_index: usize,
    pub rtf_incomplete: RtfIncompleteMode,
    #[serde(skip, default)]
    pub loading: LoadingPolicy,
}

impl Default for SpectraConfig {
    fn default() -> Self {
        Self {
            reference_index: 0,
            rtf_incomplete: RtfIncompleteMode::HaSubvector,
            loading: LoadingPolicy::default(),
        }
    }
}

/// Counters for the completion fallbacks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectraDiagnostics {
    /// Bins where `Q_ha` was ill-conditioned and incomplete matching was used.
    pub ill_conditioned_bins: usize,
    /// Directions with a degenerate completion coefficient (zero element appended).
    pub degenerate_directions: usize,
    /// Completed RTF prototypes with a vanishing reference element.
    pub degenerate_rtf_prototypes: usize,
    /// Bins where the estimated RTF had a vanishing reference element.
    pub degenerate_estimates: usize,
}

impl SpectraDiagnostics {
    pub fn merge(&mut self, o: &Self) {
        self.ill_conditioned_bins += o.ill_conditioned_bins;
        self.degenerate_directions += o.degenerate_directions;
        self.degenerate_rtf_prototypes += o.degenerate_rtf_prototypes;
        self.degenerate_estimates += o.degenerate_estimates;
    }
}

/// Spectra for one bin, in the order of the requested `(method, condition)` pairs.
#[derive(Debug, Clone)]
pub struct BinSpectra {
    pub spectra: Vec<Option<Vec<f64>>>,
    pub diagnostics: SpectraDiagnostics,
}

/// MUSIC spectrum for candidates stored as matrix columns. A candidate with
/// fewer rows than the noise basis is implicitly zero-padded.
fn music_columns<S>(noise_basis: &CMatrix, cands: &Matrix<C64, Dyn, Dyn, S>) -> Vec<f64>
where
    S: Storage<C64, Dyn, Dyn>,
{
    let proj = noise_basis.rows(0, cands.nrows()).ad_mul(cands);
    proj.column_iter()
        .map(|c| 1.0 / c.norm_squared().max(MUSIC_FLOOR))
        .collect()
}

/// Negative Hermitian angle between each column and `g`, computed as in
/// [`neg_hermitian_angle`]. Columns shorter than `g` are implicitly zero-padded.
fn angle_columns<S>(cands: &Matrix<C64, Dyn, Dyn, S>, g: &[C64]) -> Result<Vec<f64>>
where
    S: RawStorage<C64, Dyn, Dyn>,
{
    let n = cands.nrows();
    let nb = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !(nb > 0.0) {
        return Err(Error::invalid("zero-norm vector in Hermitian angle"));
    }
    let gu: Vec<C64> = g.iter().map(|z| z / nb).collect();
    let tail: f64 = gu[n..].iter().map(|z| z.norm_sqr()).sum();
    cands
        .column_iter()
        .map(|a| {
            let na = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if !(na > 0.0) {
                return Err(Error::invalid("zero-norm vector in Hermitian angle"));
            }
            let inv = 1.0 / na;
            let mut inner = C64::new(0.0, 0.0);
            for i in 0..n {
                inner += a[i].conj() * gu[i];
            }
            inner *= inv;
            let scaled = inner * inv;
            let mut res = tail;
            for i in 0..n {
                res += (gu[i] - a[i] * scaled).norm_sqr();
            }
            let cos = inner.norm_sqr().sqrt().clamp(0.0, 1.0);
            Ok(-res.sqrt().clamp(0.0, 1.0).atan2(cos))
        })
        .collect()
}

/// Lazily computed per-bin quantities shared between requests. Candidate
/// sets are `channels x directions` matrices.
struct BinContext<'a> {
    bank: &'a PrototypeBank,
    cfg: &'a SpectraConfig,
    k: usize,
    phi_y: &'a HermitianMatrix,
    phi_u: &'a HermitianMatrix,
    ha: Option<WhitenedDecomposition>,
    full: Option<WhitenedDecomposition>,
    ha_candidates: Option<CMatrix>,
    full_sub_candidates: Option<CMatrix>,
    completed: Option<Option<CMatrix>>,
    diagnostics: SpectraDiagnostics,
}

impl<'a> BinContext<'a> {
    fn m(&self) -> usize {
        self.bank.channels()
    }

    fn ha(&mut self) -> Result<&WhitenedDecomposition> {
        if self.ha.is_none() {
            let m = self.m();
            let (w, l) = whiten(
                &self.phi_y.leading_block(m),
                &self.phi_u.leading_block(m),
                &self.cfg.loading,
            )?;
            self.ha = Some(decompose(&w, l)?);
        }
        Ok(self.ha.as_ref().unwrap())
    }

    fn full(&mut self) -> Result<&WhitenedDecomposition> {
        if self.full.is_none() {
            if self.phi_y.dim() != self.m() + 1 {
                return Err(Error::invalid(format!(
                    "covariance has {} channels, expected {}",
                    self.phi_y.dim(),
                    self.m() + 1
                )));
            }
            let (w, l) = whiten(self.phi_y, self.phi_u, &self.cfg.loading)?;
            self.full = Some(decompose(&w, l)?);
        }
        Ok(self.full.as_ref().unwrap())
    }

    fn ha_candidates(&mut self) -> Result<&CMatrix> {
        if self.ha_candidates.is_none() {
            let (bank, k) = (self.bank, self.k);
            let w = self.ha()?.factor.solve_lower_columns(&bank.atf.bin_matrix(k));
            self.ha_candidates = Some(w);
        }
        Ok(self.ha_candidates.as_ref().unwrap())
    }

    /// Hearing-aid prototypes whitened with the leading block of the full factor.
    fn full_sub_candidates(&mut self) -> Result<&CMatrix> {
        if self.full_sub_candidates.is_none() {
            let m = self.m();
            let f = self.full()?.factor.leading_block(m);
            self.full_sub_candidates = Some(f.solve_lower_columns(&self.bank.atf.bin_matrix(self.k)));
        }
        Ok(self.full_sub_candidates.as_ref().unwrap())
    }

    /// Completed whitened prototypes `(M+1) x D`, or `None` when the bin falls back.
    fn completed(&mut self) -> Result<Option<&CMatrix>> {
        if self.completed.is_none() {
            self.full_sub_candidates()?;
            let p = partition_noise_subspace(self.full()?)?;
            let out = match p.completion_vector() {
                Ok(r) => {
                    let cands = self.full_sub_candidates.as_ref().unwrap();
                    let m = cands.nrows();
                    let proj = cands.ad_mul(&r);
                    let mut full = CMatrix::zeros(m + 1, cands.ncols());
                    full.rows_mut(0, m).copy_from(cands);
                    for (i, a) in cands.column_iter().enumerate() {
                        let norm = a.norm_squared();
                        if !(norm > 0.0) {
                            return Err(Error::invalid("zero-norm hearing-aid prototype"));
                        }
                        let alpha = proj[i] / norm;
                        if alpha.norm() < MIN_ALPHA {
                            self.diagnostics.degenerate_directions += 1;
                        } else {
                            full[(m, i)] = -1.0 / alpha;
                        }
                    }
                    Some(full)
                }
                Err(Error::IllConditioned { .. }) => {
                    self.diagnostics.ill_conditioned_bins += 1;
                    None
                }
                Err(e) => return Err(e),
            };
            self.completed = Some(out);
        }
        Ok(self.completed.as_ref().unwrap().as_ref())
    }

    fn music(&mut self, condition: Condition) -> Result<Option<Vec<f64>>> {
        let raw = match condition {
            Condition::HH => {
                self.ha_candidates()?;
                music_columns(&self.ha.as_ref().unwrap().noise_basis, self.ha_candidates.as_ref().unwrap())
            }
            Condition::HeH => self.music_zero_padded()?,
            Condition::HeHe => {
                if self.completed()?.is_some() {
                    let c = self.completed.as_ref().unwrap().as_ref().unwrap();
                    music_columns(&self.full.as_ref().unwrap().noise_basis, c)
                } else {
                    self.music_zero_padded()?
                }
            }
        };
        Ok(Some(normalize_sps(&raw)?))
    }

    fn music_zero_padded(&mut self) -> Result<Vec<f64>> {
        self.full_sub_candidates()?;
        Ok(music_columns(
            &self.full.as_ref().unwrap().noise_basis,
            self.full_sub_candidates.as_ref().unwrap(),
        ))
    }

    fn rtf(&mut self, condition: Condition) -> Result<Option<Vec<f64>>> {
        let reference = self.cfg.reference_index;
        let m = self.m();
        let estimate = match condition {
            Condition::HH => estimate_rtf_cw(self.ha()?, reference),
            Condition::HeH | Condition::HeHe => estimate_rtf_cw(self.full()?, reference),
        };
        let g_hat = match estimate {
            Ok(g) => g.values,
            Err(Error::DegenerateReference) => {
                self.diagnostics.degenerate_estimates += 1;
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let protos = self.bank.rtf.bin_matrix(self.k);
        let incomplete = |cfg: &SpectraConfig| -> Result<Vec<f64>> {
            match cfg.rtf_incomplete {
                RtfIncompleteMode::HaSubvector => angle_columns(&protos, &g_hat.as_slice()[..m]),
                RtfIncompleteMode::ZeroPadded => angle_columns(&protos, g_hat.as_slice()),
            }
        };
        let values = match condition {
            Condition::HH => angle_columns(&protos, g_hat.as_slice())?,
            Condition::HeH => incomplete(self.cfg)?,
            Condition::HeHe => {
                if self.completed()?.is_some() {
                    let c = self.completed.as_ref().unwrap().as_ref().unwrap();
                    let dewhitened = &self.full.as_ref().unwrap().factor.lower * c;
                    let mut out = angle_columns(&dewhitened, g_hat.as_slice())?;
                    for (v, col) in out.iter_mut().zip(dewhitened.column_iter()) {
                        if !(col[reference].norm() > 1e-12 * col.norm()) {
                            self.diagnostics.degenerate_rtf_prototypes += 1;
                            *v = -std::f64::consts::FRAC_PI_2;
                        }
                    }
                    out
                } else {
                    incomplete(self.cfg)?
                }
            }
        };
        Ok(Some(values))
    }
}

/// Builds the requested spectra for one bin from its covariance pair.
pub fn bin_spectra(
    phi_y: &HermitianMatrix,
    phi_u: &HermitianMatrix,
    bank: &PrototypeBank,
    k: usize,
    requests: &[(Method, Condition)],
    cfg: &SpectraConfig,
) -> Result<BinSpectra> {
    let mut ctx = BinContext {
        bank,
        cfg,
        k,
        phi_y,
        phi_u,
        ha: None,
        full: None,
        ha_candidates: None,
        full_sub_candidates: None,
        completed: None,
        diagnostics: SpectraDiagnostics::default(),
    };
    let mut spectra = Vec::with_capacity(requests.len());
    for &(method, condition) in requests {
        spectra.push(match method {
            Method::Music => ctx.music(condition)?,
            Method::RtfMatch => ctx.rtf(condition)?,
        });
    }
    Ok(BinSpectra {
        spectra,
        diagnostics: ctx.diagnostics,
    })
}

/// Spectra of every bin of the frame currently held in `state`.
pub fn build_frame_spectra(
    state: &CovarianceState,
    bank: &PrototypeBank,
    method: Method,
    condition: Condition,
    cfg: &SpectraConfig,
) -> Result<(SpatialSpectrum, SpectraDiagnostics)> {
    let mut diagnostics = SpectraDiagnostics::default();
    let mut values = Vec::with_capacity(state.bins());
    for k in 0..state.bins() {
        let b = bin_spectra(&state.phi_y[k], &state.phi_u[k], bank, k, &[(method, condition)], cfg)?;
        diagnostics.merge(&b.diagnostics);
        values.push(b.spectra.into_iter().next().unwrap());
    }
    Ok((
        SpatialSpectrum {
            values,
            method,
            condition,
        },
        diagnostics,
    ))
}
