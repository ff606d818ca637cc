//! Recursive per-bin covariance tracking with speech-presence gating, and
//! pre-whitening of the noisy covariance by the undesired one.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{cholesky, CVector, CholeskyFactor, HermitianMatrix, LoadingPolicy, C64};

/// Initial value of both tracked matrices, as a multiple of the identity.
pub const INITIAL_DIAGONAL: f64 = 1e-6;

/// Exponential-decay smoothing factor `exp(-hop / (fs * tau))`.
pub fn smoothing_factor(time_constant: f64, hop: usize, sample_rate: f64) -> f64 {
    assert!(time_constant > 0.0, "time constant must be positive");
    (-(hop as f64) / (sample_rate * time_constant)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameClass {
    SpeechAndNoise,
    NoiseOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresenceDecision {
    pub class: FrameClass,
    pub spp: f64,
}

impl PresenceDecision {
    pub fn from_spp(spp: f64, threshold: f64) -> Self {
        let class = if spp >= threshold {
            FrameClass::SpeechAndNoise
        } else {
            FrameClass::NoiseOnly
        };
        Self { class, spp }
    }

    /// Ground-truth routing: any active speaker makes the frame a speech frame.
    pub fn oracle(active: bool) -> Self {
        if active {
            Self { class: FrameClass::SpeechAndNoise, spp: 1.0 }
        } else {
            Self { class: FrameClass::NoiseOnly, spp: 0.0 }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SppConfig {
    pub threshold: f64,
    /// Decision-directed weight on the previous clean-speech estimate.
    pub decision_directed: f64,
    /// Smoothing of the noise floor during noise-only frames.
    pub floor_smoothing: f64,
    /// Leading frames assumed noise-only; they initialise the floor.
    pub warmup_frames: usize,
}

impl Default for SppConfig {
    fn default() -> Self {
        Self {
            threshold: 0.03,
            decision_directed: 0.98,
            floor_smoothing: smoothing_factor(0.5, 256, 16000.0),
            warmup_frames: 10,
        }
    }
}

/// Frame-level speech-presence detector over the hearing-aid channels.
///
/// Per channel and bin, the a-priori SNR is tracked with the decision-directed
/// rule against a noise floor learnt during the warm-up frames; the frame
/// SPP is the mean of `xi / (1 + xi)` over all channels and bins.
#[derive(Debug, Clone)]
pub struct PresenceDetector {
    config: SppConfig,
    floor: Vec<Vec<f64>>,
    prev_clean: Vec<Vec<f64>>,
    frames_seen: usize,
}

impl PresenceDetector {
    pub fn new(channels: usize, bins: usize, config: SppConfig) -> Self {
        Self {
            config,
            floor: vec![vec![0.0; bins]; channels],
            prev_clean: vec![vec![0.0; bins]; channels],
            frames_seen: 0,
        }
    }

    pub fn classify_frame(&mut self, frame: &[ArrayView1<'_, C64>]) -> PresenceDecision {
        let cfg = self.config;
        if self.frames_seen < cfg.warmup_frames {
            // running mean over the warm-up segment
            let n = self.frames_seen as f64;
            for (floor, spec) in self.floor.iter_mut().zip(frame) {
                for (f, y) in floor.iter_mut().zip(spec.iter()) {
                    *f = (*f * n + y.norm_sqr()) / (n + 1.0);
                }
            }
            self.frames_seen += 1;
            return PresenceDecision::from_spp(0.0, cfg.threshold);
        }
        self.frames_seen += 1;

        let mut acc = 0.0;
        let mut count = 0usize;
        for (c, spec) in frame.iter().enumerate() {
            for (k, y) in spec.iter().enumerate() {
                let power = y.norm_sqr();
                let floor = self.floor[c][k].max(f64::MIN_POSITIVE);
                let gamma = power / floor;
                let xi = cfg.decision_directed * self.prev_clean[c][k] / floor
                    + (1.0 - cfg.decision_directed) * (gamma - 1.0).max(0.0);
                let gain = xi / (1.0 + xi);
                self.prev_clean[c][k] = gain * gain * power;
                acc += gain;
                count += 1;
            }
        }
        let spp = if count > 0 { acc / count as f64 } else { 0.0 };
        let decision = PresenceDecision::from_spp(spp, cfg.threshold);
        if decision.class == FrameClass::NoiseOnly {
            let a = cfg.floor_smoothing;
            for (floor, spec) in self.floor.iter_mut().zip(frame) {
                for (f, y) in floor.iter_mut().zip(spec.iter()) {
                    *f = a * *f + (1.0 - a) * y.norm_sqr();
                }
            }
        }
        decision
    }
}

/// Per-bin noisy (`phi_y`) and undesired (`phi_u`) covariance estimates.
#[derive(Debug, Clone)]
pub struct CovarianceState {
    pub phi_y: Vec<HermitianMatrix>,
    pub phi_u: Vec<HermitianMatrix>,
    pub frame_index: usize,
    pub alpha_y: f64,
    pub alpha_u: f64,
    pub speech_updates: usize,
    pub noise_updates: usize,
}

impl CovarianceState {
    pub fn new(bins: usize, dim: usize, alpha_y: f64, alpha_u: f64) -> Self {
        let init = HermitianMatrix::scaled_identity(dim, INITIAL_DIAGONAL);
        Self {
            phi_y: vec![init.clone(); bins],
            phi_u: vec![init; bins],
            frame_index: 0,
            alpha_y,
            alpha_u,
            speech_updates: 0,
            noise_updates: 0,
        }
    }

    pub fn bins(&self) -> usize {
        self.phi_y.len()
    }

    /// First-order recursion on whichever matrix the decision selects; the
    /// other is carried unchanged.
    pub fn update(&mut self, snapshots: &[CVector], decision: PresenceDecision) {
        debug_assert_eq!(snapshots.len(), self.bins());
        match decision.class {
            FrameClass::SpeechAndNoise => {
                for (phi, y) in self.phi_y.iter_mut().zip(snapshots) {
                    *phi = phi.recursive_update(self.alpha_y, y);
                }
                self.speech_updates += 1;
            }
            FrameClass::NoiseOnly => {
                for (phi, y) in self.phi_u.iter_mut().zip(snapshots) {
                    *phi = phi.recursive_update(self.alpha_u, y);
                }
                self.noise_updates += 1;
            }
        }
        self.frame_index += 1;
    }

    /// Both classes have received at least `min_updates` frames.
    pub fn is_warmed_up(&self, min_updates: usize) -> bool {
        self.speech_updates >= min_updates && self.noise_updates >= min_updates
    }
}

/// `L^{-1} phi_y L^{-H}` with `phi_u = L L^H`; returns the factor for de-whitening.
pub fn whiten(
    phi_y: &HermitianMatrix,
    phi_u: &HermitianMatrix,
    policy: &LoadingPolicy,
) -> Result<(HermitianMatrix, CholeskyFactor)> {
    let l = cholesky(phi_u, policy)?;
    Ok((l.whiten(phi_y), l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{hermitian_evd, CMatrix};
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_spd(rng: &mut impl Rng, n: usize) -> HermitianMatrix {
        let b = CMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        HermitianMatrix::symmetrized(&(&b * b.adjoint() + CMatrix::identity(n, n) * c(0.1, 0.0)))
    }

    #[test]
    fn smoothing_factor_values() {
        let a = smoothing_factor(0.25, 256, 16000.0);
        assert!((a - (-256.0f64 / 4000.0).exp()).abs() < 1e-15);
        assert!((a - 0.938005).abs() < 1e-6);
        assert!((smoothing_factor(256.0 / 16000.0, 256, 16000.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(smoothing_factor(1e12, 256, 16000.0) > 1.0 - 1e-12);
        assert!((SppConfig::default().floor_smoothing - smoothing_factor(0.5, 256, 16000.0)).abs() < 1e-15);
    }

    #[test]
    fn update_without_smoothing_is_outer_product() {
        let y = CVector::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.0)]);
        let mut st = CovarianceState::new(1, 2, 0.0, 0.5);
        st.update(std::slice::from_ref(&y), PresenceDecision::oracle(true));
        assert_eq!(st.phi_y[0], HermitianMatrix::outer(&y));
        assert_eq!(st.phi_u[0], HermitianMatrix::scaled_identity(2, INITIAL_DIAGONAL));
    }

    #[test]
    fn full_smoothing_leaves_state() {
        let y = CVector::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.0)]);
        let mut st = CovarianceState::new(1, 2, 1.0, 1.0);
        st.update(std::slice::from_ref(&y), PresenceDecision::oracle(true));
        st.update(std::slice::from_ref(&y), PresenceDecision::oracle(false));
        assert_eq!(st.phi_y[0], HermitianMatrix::scaled_identity(2, INITIAL_DIAGONAL));
        assert_eq!(st.phi_u[0], HermitianMatrix::scaled_identity(2, INITIAL_DIAGONAL));
    }

    #[test]
    fn two_step_recursion_unrolls() {
        let y1 = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let y2 = CVector::from_vec(vec![c(2.0, -1.0), c(0.5, 0.5)]);
        let mut st = CovarianceState::new(1, 2, 0.5, 0.5);
        st.update(std::slice::from_ref(&y1), PresenceDecision::oracle(true));
        st.update(std::slice::from_ref(&y2), PresenceDecision::oracle(true));
        let init = HermitianMatrix::scaled_identity(2, INITIAL_DIAGONAL);
        let expected = HermitianMatrix::outer(&y1)
            .scale(0.25)
            .add(&HermitianMatrix::outer(&y2).scale(0.5))
            .add(&init.scale(0.25));
        assert!((st.phi_y[0].as_matrix() - expected.as_matrix()).norm() < 1e-15);
        assert!(!st.is_warmed_up(1));
    }

    #[test]
    fn whiten_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pu = random_spd(&mut rng, 5);
        let (w, _) = whiten(&pu, &pu, &LoadingPolicy::default()).unwrap();
        assert!((w.as_matrix() - CMatrix::identity(5, 5)).norm() < 1e-10);

        let py = random_spd(&mut rng, 5);
        let (w, _) = whiten(&py, &HermitianMatrix::identity(5), &LoadingPolicy::default()).unwrap();
        assert!((w.as_matrix() - py.as_matrix()).norm() < 1e-14);
    }

    #[test]
    fn whiten_rank_one_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pu = random_spd(&mut rng, 5);
        let a = CVector::from_fn(5, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let phi_s = 3.7;
        let py = HermitianMatrix::outer(&a).scale(phi_s).add(&pu);
        let (w, l) = whiten(&py, &pu, &LoadingPolicy::default()).unwrap();
        let aw = l.solve_lower(&a);
        let expected = HermitianMatrix::outer(&aw).scale(phi_s).add(&HermitianMatrix::identity(5));
        assert!((w.as_matrix() - expected.as_matrix()).norm() / expected.frobenius_norm() < 1e-10);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(w[(i, j)], w[(j, i)].conj());
            }
        }
    }

    #[test]
    fn detector_noise_floor_and_speech() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bins = 65;
        let mut det = PresenceDetector::new(2, bins, SppConfig::default());
        let noise = |rng: &mut ChaCha8Rng, gain: f64| -> Array1<C64> {
            Array1::from_iter((0..bins).map(|_| {
                c(rng.gen_range(-1.0..1.0) * gain, rng.gen_range(-1.0..1.0) * gain)
            }))
        };
        for _ in 0..10 {
            let a = noise(&mut rng, 1.0);
            let b = noise(&mut rng, 1.0);
            let d = det.classify_frame(&[a.view(), b.view()]);
            assert_eq!(d.class, FrameClass::NoiseOnly);
        }
        for _ in 0..5 {
            let a = noise(&mut rng, 1.0);
            let b = noise(&mut rng, 1.0);
            let d = det.classify_frame(&[a.view(), b.view()]);
            assert!(d.spp < 0.5);
            assert_eq!(d.class, FrameClass::NoiseOnly);
        }
        // +20 dB in-band: amplitude x10 on every bin
        let a = noise(&mut rng, 10.0);
        let b = noise(&mut rng, 10.0);
        let d = det.classify_frame(&[a.view(), b.view()]);
        assert_eq!(d.class, FrameClass::SpeechAndNoise, "spp {}", d.spp);
    }

    #[test]
    fn oracle_decision_passthrough() {
        let d = PresenceDecision::oracle(true);
        assert_eq!(d.class, FrameClass::SpeechAndNoise);
        assert_eq!(PresenceDecision::from_spp(0.5, 0.5).class, FrameClass::SpeechAndNoise);
        assert_eq!(PresenceDecision::from_spp(0.49, 0.5).class, FrameClass::NoiseOnly);
    }

    proptest! {
        #[test]
        fn whitened_spectrum_is_above_one_when_phi_y_dominates(seed in 0u64..500, phi_s in 0.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pu = random_spd(&mut rng, 5);
            let a = CVector::from_fn(5, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let py = HermitianMatrix::outer(&a).scale(phi_s).add(&pu);
            let (w, l) = whiten(&py, &pu, &LoadingPolicy::default()).unwrap();
            let e = hermitian_evd(&w).unwrap();
            prop_assert!(e.eigenvalues.iter().all(|&x| x >= 1.0 - 1e-8));
            let aw = l.solve_lower(&a);
            prop_assert!((e.eigenvalues[0] - (phi_s * aw.norm_squared() + 1.0)).abs() < 1e-8 * e.eigenvalues[0]);
        }
    }
}
