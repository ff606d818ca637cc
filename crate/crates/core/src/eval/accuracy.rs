//! Localization accuracy: fraction of speaker-frames estimated within a
//! tolerance, with speakers matched to estimates by optimal assignment.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::fusion::DoaEstimate;
use crate::prototypes::circular_distance_deg;

pub const DEFAULT_TOLERANCE_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyResult {
    pub acc: f64,
    /// Frames counted in the denominator.
    pub frames: usize,
    /// Frames dropped because no speaker had an estimate.
    pub no_estimate_frames: usize,
    pub correct: usize,
}

/// Largest number of speakers placed within `tol` under any one-to-one matching.
pub fn matched_correct(estimates: &[Option<f64>], truth: &[f64], tol: f64) -> usize {
    let j = truth.len().min(estimates.len());
    if j == 0 {
        return 0;
    }
    let hit = |e: Option<f64>, t: f64| e.is_some_and(|e| circular_distance_deg(e, t) <= tol + 1e-9);
    (0..estimates.len())
        .permutations(j)
        .map(|perm| perm.iter().zip(truth).filter(|(&i, &t)| hit(estimates[i], t)).count())
        .max()
        .unwrap_or(0)
}

/// `sum_l correct(l) / (J * L)` over frames with at least one estimate.
pub fn accuracy(estimates: &[DoaEstimate], truth: &[f64], tol: f64) -> AccuracyResult {
    let mut res = AccuracyResult::default();
    for e in estimates {
        if e.is_empty() {
            res.no_estimate_frames += 1;
            continue;
        }
        res.frames += 1;
        res.correct += matched_correct(&e.angles, truth, tol);
    }
    res.acc = if res.frames == 0 || truth.is_empty() {
        0.0
    } else {
        res.correct as f64 / (truth.len() * res.frames) as f64
    };
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(angles: &[Option<f64>]) -> DoaEstimate {
        DoaEstimate {
            frame_index: 0,
            angles: angles.to_vec(),
        }
    }

    #[test]
    fn hand_computed_values() {
        let truth = [30.0, -60.0];
        let perfect = vec![est(&[Some(30.0), Some(-60.0)]); 4];
        assert_eq!(accuracy(&perfect, &truth, 5.0).acc, 1.0);

        let half = vec![est(&[Some(30.0), Some(100.0)]), est(&[Some(0.0), Some(-60.0)])];
        assert_eq!(accuracy(&half, &truth, 5.0).acc, 0.5);

        let swapped = vec![est(&[Some(-57.0), Some(34.0)])];
        assert_eq!(accuracy(&swapped, &truth, 5.0).acc, 1.0);
    }

    #[test]
    fn circular_wrap() {
        assert_eq!(accuracy(&[est(&[Some(-180.0)])], &[175.0], 5.0).acc, 1.0);
        assert_eq!(accuracy(&[est(&[Some(-175.0)])], &[175.0], 5.0).acc, 0.0);
        assert_eq!(accuracy(&[est(&[Some(-180.0)])], &[180.0], 5.0).acc, 1.0);
    }

    #[test]
    fn no_estimate_handling() {
        let truth = [10.0, 50.0];
        let frames = vec![est(&[None, None]), est(&[Some(10.0), None]), est(&[Some(10.0), Some(50.0)])];
        let r = accuracy(&frames, &truth, 5.0);
        assert_eq!(r.frames, 2);
        assert_eq!(r.no_estimate_frames, 1);
        assert_eq!(r.correct, 3);
        assert_eq!(r.acc, 0.75);
        assert_eq!(accuracy(&[est(&[None])], &[0.0], 5.0).acc, 0.0);
    }

    #[test]
    fn one_estimate_cannot_serve_two_speakers() {
        // both truths lie near the same estimate, but only one can be matched
        assert_eq!(matched_correct(&[Some(0.0), Some(90.0)], &[2.0, -2.0], 5.0), 1);
        assert_eq!(matched_correct(&[Some(0.0), Some(0.0)], &[2.0, -2.0], 5.0), 2);
    }

    #[test]
    fn bounds() {
        let truth = [0.0, 120.0, -120.0];
        let frames: Vec<DoaEstimate> = (0..20)
            .map(|i| est(&[Some(i as f64 * 17.0 - 170.0), Some(120.0), None]))
            .collect();
        let r = accuracy(&frames, &truth, 5.0);
        assert!((0.0..=1.0).contains(&r.acc));
    }
}
