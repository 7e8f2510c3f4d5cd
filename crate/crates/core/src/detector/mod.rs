//! Grasp detection: the detector interface, a small trainable parametric
//! head, a geometric heuristic and a ground-truth oracle.

mod features;
mod heuristic;
mod parametric;

pub use features::{cell_features, height_map, CellFeatures, CellGrid, FEATURE_DIM, FEATURE_SET};
pub use heuristic::{GroundTruthDetector, HeuristicDetector};
pub use parametric::{
    DetectorCheckpoint, ParametricDetector, PreparedSample, PretrainOptions, CHECKPOINT_VERSION,
    DEFAULT_WIDTH_UNIT_PX, HEADS,
};

use serde::{Deserialize, Serialize};

use crate::error::{EtaError, Result};
use crate::geometry::GraspRect;
use crate::scene::Observation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspSet {
    pub candidates: Vec<GraspRect>,
    pub source_viewpoint: usize,
}

impl GraspSet {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    /// Index of the highest-quality candidate; ties go to the lowest index.
    pub fn top_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, c) in self.candidates.iter().enumerate() {
            if best.is_none_or(|b| c.q > self.candidates[b].q) {
                best = Some(i);
            }
        }
        best
    }

    /// The `n` best candidates by quality, stable with respect to index.
    pub fn top_n(&self, n: usize) -> GraspSet {
        let mut idx: Vec<usize> = (0..self.candidates.len()).collect();
        idx.sort_by(|&a, &b| self.candidates[b].q.total_cmp(&self.candidates[a].q));
        GraspSet {
            candidates: idx
                .into_iter()
                .take(n)
                .map(|i| self.candidates[i])
                .collect(),
            source_viewpoint: self.source_viewpoint,
        }
    }
}

/// `g* = argmax_q G`.
pub fn top_candidate(set: &GraspSet) -> Result<GraspRect> {
    set.top_index()
        .map(|i| set.candidates[i])
        .ok_or(EtaError::NoCandidates)
}

/// A grasp detector. Prediction must not change the detector.
pub trait GraspDetector: Send + Sync {
    fn predict(&self, obs: &Observation) -> GraspSet;
}

/// An observation paired with grasp labels (pseudo-labels at test time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub observation: Observation,
    pub targets: Vec<GraspRect>,
}

impl TrainingSample {
    pub fn new(observation: Observation, targets: Vec<GraspRect>) -> Result<Self> {
        if targets.is_empty() {
            return Err(EtaError::EmptyDataset);
        }
        Ok(Self {
            observation,
            targets,
        })
    }
}

/// Smooth-L1 penalty: quadratic inside `|e| < 1`, linear outside.
#[inline]
pub fn smooth_l1(e: f64) -> f64 {
    if e.abs() < 1.0 {
        0.5 * e * e
    } else {
        e.abs() - 0.5
    }
}

#[inline]
pub fn smooth_l1_grad(e: f64) -> f64 {
    if e.abs() < 1.0 {
        e
    } else {
        e.signum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(qs: &[f64]) -> GraspSet {
        GraspSet {
            candidates: qs
                .iter()
                .map(|&q| GraspRect {
                    x: 0.0,
                    y: 0.0,
                    w: 1.0,
                    phi: 0.0,
                    q,
                })
                .collect(),
            source_viewpoint: 0,
        }
    }

    #[test]
    fn top_candidate_examples() {
        assert_eq!(set(&[0.1, 0.9, 0.3]).top_index(), Some(1));
        assert_eq!(set(&[0.7, 0.7]).top_index(), Some(0));
        assert_eq!(top_candidate(&set(&[0.2])).unwrap().q, 0.2);
        assert!(matches!(
            top_candidate(&set(&[])),
            Err(EtaError::NoCandidates)
        ));
    }

    #[test]
    fn top_n_is_stable() {
        let s = set(&[0.5, 0.9, 0.5, 0.1]);
        let qs: Vec<f64> = s.top_n(3).candidates.iter().map(|c| c.q).collect();
        assert_eq!(qs, vec![0.9, 0.5, 0.5]);
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
        // Continuous with matching slope at the kink.
        assert!((smooth_l1(1.0 - 1e-12) - 0.5).abs() < 1e-9 && smooth_l1(1.0) == 0.5);
        assert!((smooth_l1_grad(1.0 - 1e-12) - 1.0).abs() < 1e-9);
    }
}
