//! Task-completion oracles.

use serde::{Deserialize, Serialize};

use crate::codec::RelevancyKernel;
use crate::splat::{CameraModel, Frame};

/// Per-pixel relevancy of a frame; pixels with invalid or out-of-range depth
/// are masked out as `None`.
pub fn masked_relevancy(frame: &Frame, cam: &CameraModel, kernel: &RelevancyKernel) -> Vec<Option<f64>> {
    frame
        .depth
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d > 0.0 && d <= cam.max_depth {
                kernel.eval(frame.feature_at(i))
            } else {
                None
            }
        })
        .collect()
}

/// Summary statistics the oracles decide on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevancyStats {
    pub max: f64,
    /// Fraction of all pixels whose relevancy exceeds the threshold.
    pub fraction: f64,
}

pub fn relevancy_stats(relevancy: &[Option<f64>], threshold: f64) -> RelevancyStats {
    let mut max = f64::NEG_INFINITY;
    let mut hits = 0usize;
    for r in relevancy.iter().flatten() {
        max = max.max(*r);
        if *r > threshold {
            hits += 1;
        }
    }
    RelevancyStats {
        max: if max.is_finite() { max } else { 0.0 },
        fraction: if relevancy.is_empty() {
            0.0
        } else {
            hits as f64 / relevancy.len() as f64
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub step: usize,
    pub stats: RelevancyStats,
    pub done: bool,
}

/// Decides whether the task is complete given the current observation.
pub trait TerminationOracle {
    fn decide(&mut self, step: usize, stats: RelevancyStats) -> bool;
    fn log(&self) -> &[Decision];
}

/// Declares completion when enough of the view is relevant.
#[derive(Debug, Clone, Default)]
pub struct ThresholdOracle {
    pub min_fraction: f64,
    log: Vec<Decision>,
}

impl ThresholdOracle {
    pub fn new(min_fraction: f64) -> Self {
        Self {
            min_fraction,
            log: Vec::new(),
        }
    }
}

impl TerminationOracle for ThresholdOracle {
    fn decide(&mut self, step: usize, stats: RelevancyStats) -> bool {
        let done = stats.fraction >= self.min_fraction;
        self.log.push(Decision { step, stats, done });
        done
    }

    fn log(&self) -> &[Decision] {
        &self.log
    }
}

/// Replays scripted answers in order; answers `false` once exhausted.
#[derive(Debug, Clone, Default)]
pub struct RecordedOracle {
    answers: Vec<bool>,
    log: Vec<Decision>,
}

impl RecordedOracle {
    pub fn new(answers: Vec<bool>) -> Self {
        Self {
            answers,
            log: Vec::new(),
        }
    }
}

impl TerminationOracle for RecordedOracle {
    fn decide(&mut self, step: usize, stats: RelevancyStats) -> bool {
        let done = self.answers.get(self.log.len()).copied().unwrap_or(false);
        self.log.push(Decision { step, stats, done });
        done
    }

    fn log(&self) -> &[Decision] {
        &self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_ignore_masked_pixels() {
        let r = [Some(0.9), None, Some(0.1), Some(0.7)];
        let s = relevancy_stats(&r, 0.55);
        assert_eq!(s.max, 0.9);
        assert_eq!(s.fraction, 0.5);
        let empty = relevancy_stats(&[None, None], 0.55);
        assert_eq!(empty.fraction, 0.0);
    }

    #[test]
    fn oracles_log_decisions() {
        let s = RelevancyStats { max: 0.9, fraction: 0.1 };
        let mut t = ThresholdOracle::new(0.05);
        assert!(t.decide(3, s));
        assert_eq!(t.log()[0].step, 3);
        let mut r = RecordedOracle::new(vec![false, true]);
        assert!(!r.decide(0, s));
        assert!(r.decide(1, s));
        assert!(!r.decide(2, s));
        assert_eq!(r.log().len(), 3);
    }
}
