//! Per-detector rewards against the same-seed baseline.

use crate::microsim::EpisodeStepObservation;

/// Reward scale α.
pub const REWARD_ALPHA: f64 = 1.0 / REWARD_DENOMINATOR;
const REWARD_DENOMINATOR: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("observation has {observed} detectors, baseline has {baseline}")]
pub struct DetectorMismatch {
    pub observed: usize,
    pub baseline: usize,
}

/// `α · count_i · (score_i − baseline_i)` for every detector.
///
/// Evaluated as `(count·score − count·baseline) / 50`; it is algebraically
/// the same and is exactly zero whenever the two scores agree.
pub fn reward(
    observation: &EpisodeStepObservation,
    baseline: &EpisodeStepObservation,
) -> Result<Vec<f64>, DetectorMismatch> {
    if observation.detectors.len() != baseline.detectors.len() {
        return Err(DetectorMismatch {
            observed: observation.detectors.len(),
            baseline: baseline.detectors.len(),
        });
    }
    Ok(observation
        .detectors
        .iter()
        .zip(&baseline.detectors)
        .map(|(o, b)| {
            let count = f64::from(o.count);
            (count * o.speed_score - count * b.speed_score) / REWARD_DENOMINATOR
        })
        .collect())
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microsim::DetectorObservation;

    fn obs(readings: &[(u32, f64)]) -> EpisodeStepObservation {
        EpisodeStepObservation {
            clock: 120.0,
            detectors: readings
                .iter()
                .map(|&(count, speed_score)| DetectorObservation {
                    count,
                    speed_score,
                    occupancy: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn hand_computed_reward() {
        let r = reward(&obs(&[(10, 0.6)]), &obs(&[(7, 0.5)])).unwrap();
        assert_eq!(r, vec![0.02]);
        assert_eq!(REWARD_ALPHA, 1.0 / 50.0);
    }

    #[test]
    fn equal_scores_give_zero() {
        let o = obs(&[(3, 0.25), (0, 1.0), (12, 0.9)]);
        assert!(reward(&o, &o).unwrap().iter().all(|r| *r == 0.0));
    }

    #[test]
    fn zero_count_gives_zero() {
        let r = reward(&obs(&[(0, 1.0)]), &obs(&[(4, 0.3)])).unwrap();
        assert_eq!(r, vec![0.0]);
    }

    #[test]
    fn improvement_is_positive_and_not_normalized() {
        let r = reward(&obs(&[(20, 0.8), (2, 0.8)]), &obs(&[(20, 0.7), (2, 0.7)])).unwrap();
        assert!(r[0] > 0.0 && r[1] > 0.0);
        // Weighted by raw count, not by the share of total vehicles.
        assert!((r[0] / r[1] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_detectors() {
        assert!(reward(&obs(&[(1, 0.5)]), &obs(&[])).is_err());
    }
}
