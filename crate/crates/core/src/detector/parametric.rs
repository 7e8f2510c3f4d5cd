use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{cell_features, CellFeatures, CellGrid, FEATURE_DIM, FEATURE_SET};
use super::{smooth_l1, smooth_l1_grad, GraspDetector, GraspSet, TrainingSample};
use crate::error::{EtaError, Result};
use crate::geometry::{wrap_half_pi, GraspRect};
use crate::scene::Observation;

/// Quality, width and angle.
pub const HEADS: usize = 3;
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_WIDTH_UNIT_PX: f64 = 10.0;

const Q: usize = 0;
const W: usize = 1;
const PHI: usize = 2;

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear heads over per-cell descriptors, shared by every cell:
/// `q = sigmoid(a.f)`, `w = w_max * sigmoid(b.f)`, `phi = pi/2 * tanh(c.f)`.
/// Each cell emits one candidate centered on the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricDetector {
    weights: Vec<f64>,
    grid: CellGrid,
    w_max_px: f64,
    /// Weight of the quality term on cells without a target.
    negative_weight: f64,
    /// Width errors enter the loss in units of this many pixels.
    width_unit_px: f64,
}

/// Per-cell head outputs.
#[derive(Debug, Clone, Copy)]
struct CellOut {
    q: f64,
    w: f64,
    phi: f64,
    /// Derivatives of each output with respect to its pre-activation.
    dq: f64,
    dw: f64,
    dphi: f64,
}

/// Features and cell assignment of a training sample, computed once.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    feats: Vec<CellFeatures>,
    /// Targets grouped by the cell nearest to their center.
    positives: Vec<(usize, Vec<GraspRect>)>,
    negatives: Vec<usize>,
}

impl PreparedSample {
    pub fn num_positive_cells(&self) -> usize {
        self.positives.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub lr: f64,
    /// Samples per step; `None` is full-batch descent.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            epochs: 600,
            lr: 2.0,
            batch_size: None,
            seed: 0,
        }
    }
}

impl ParametricDetector {
    pub fn zeros(grid: CellGrid, w_max_px: f64) -> Self {
        Self {
            weights: vec![0.0; HEADS * FEATURE_DIM],
            grid,
            w_max_px,
            negative_weight: 1.0,
            width_unit_px: DEFAULT_WIDTH_UNIT_PX,
        }
    }

    pub fn random(grid: CellGrid, w_max_px: f64, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            weights: (0..HEADS * FEATURE_DIM)
                .map(|_| rng.random_range(-scale..scale))
                .collect(),
            grid,
            w_max_px,
            negative_weight: 1.0,
            width_unit_px: DEFAULT_WIDTH_UNIT_PX,
        }
    }

    pub fn from_weights(grid: CellGrid, w_max_px: f64, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != HEADS * FEATURE_DIM {
            return Err(EtaError::DimensionMismatch {
                expected: HEADS * FEATURE_DIM,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(EtaError::DivergentUpdate);
        }
        Ok(Self {
            weights,
            grid,
            w_max_px,
            negative_weight: 1.0,
            width_unit_px: DEFAULT_WIDTH_UNIT_PX,
        })
    }

    pub fn with_negative_weight(mut self, negative_weight: f64) -> Self {
        self.negative_weight = negative_weight;
        self
    }

    pub fn with_width_unit(mut self, width_unit_px: f64) -> Self {
        self.width_unit_px = width_unit_px;
        self
    }

    pub fn width_unit_px(&self) -> f64 {
        self.width_unit_px
    }

    pub fn negative_weight(&self) -> f64 {
        self.negative_weight
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn w_max_px(&self) -> f64 {
        self.w_max_px
    }

    fn head(&self, h: usize) -> &[f64] {
        &self.weights[h * FEATURE_DIM..(h + 1) * FEATURE_DIM]
    }

    fn cell_out(&self, f: &CellFeatures) -> CellOut {
        let q = sigmoid(dot(self.head(Q), f));
        let sw = sigmoid(dot(self.head(W), f));
        let t = dot(self.head(PHI), f).tanh();
        CellOut {
            q,
            w: self.w_max_px * sw,
            phi: FRAC_PI_2 * t,
            dq: q * (1.0 - q),
            dw: self.w_max_px * sw * (1.0 - sw),
            dphi: FRAC_PI_2 * (1.0 - t * t),
        }
    }

    /// Candidates for precomputed cell descriptors.
    pub fn predict_features(&self, feats: &[CellFeatures], viewpoint: usize) -> GraspSet {
        let candidates = feats
            .iter()
            .enumerate()
            .map(|(cell, f)| {
                let o = self.cell_out(f);
                let c = self.grid.center(cell);
                GraspRect {
                    x: c.x,
                    y: c.y,
                    w: o.w,
                    phi: o.phi,
                    q: o.q,
                }
            })
            .collect();
        GraspSet {
            candidates,
            source_viewpoint: viewpoint,
        }
    }

    /// Assign each target to its nearest cell; every other cell is a
    /// negative for the quality head.
    pub fn prepare(&self, sample: &TrainingSample) -> Result<PreparedSample> {
        self.prepare_parts(&sample.observation, &sample.targets)
    }

    pub fn prepare_parts(
        &self,
        obs: &Observation,
        targets: &[GraspRect],
    ) -> Result<PreparedSample> {
        if targets.is_empty() {
            return Err(EtaError::EmptyDataset);
        }
        let mut by_cell: Vec<Option<Vec<GraspRect>>> = vec![None; self.grid.len()];
        for t in targets {
            let cell = self
                .grid
                .nearest(t.center())
                .filter(|_| t.x < obs.depth.width() as f64 && t.y < obs.depth.height() as f64)
                .ok_or(EtaError::TargetOutOfBounds { x: t.x, y: t.y })?;
            by_cell[cell].get_or_insert_with(Vec::new).push(*t);
        }
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for (cell, ts) in by_cell.into_iter().enumerate() {
            match ts {
                Some(ts) => positives.push((cell, ts)),
                None => negatives.push(cell),
            }
        }
        Ok(PreparedSample {
            feats: cell_features(obs, &self.grid),
            positives,
            negatives,
        })
    }

    fn sample_loss_grad(&self, s: &PreparedSample, grad: &mut [f64]) -> f64 {
        let mut loss = 0.0;
        let (gq, rest) = grad.split_at_mut(FEATURE_DIM);
        let (gw, gphi) = rest.split_at_mut(FEATURE_DIM);

        let np = s.positives.len() as f64;
        for (cell, targets) in &s.positives {
            let f = &s.feats[*cell];
            let o = self.cell_out(f);
            let q_star = targets
                .iter()
                .map(|t| t.q)
                .fold(f64::NEG_INFINITY, f64::max);
            let eq = o.q - q_star;
            loss += smooth_l1(eq) / np;
            let kq = smooth_l1_grad(eq) * o.dq / np;

            // Width/angle regress onto the closest of the targets in the cell.
            let (mut best, mut ew, mut ephi) = (f64::INFINITY, 0.0, 0.0);
            for t in targets {
                let e_w = (o.w - t.w) / self.width_unit_px;
                let e_phi = wrap_half_pi(o.phi - t.phi);
                let l = smooth_l1(e_w) + smooth_l1(e_phi);
                if l < best {
                    (best, ew, ephi) = (l, e_w, e_phi);
                }
            }
            loss += best / np;
            let kw = smooth_l1_grad(ew) / self.width_unit_px * o.dw / np;
            let kphi = smooth_l1_grad(ephi) * o.dphi / np;
            for i in 0..FEATURE_DIM {
                gq[i] += kq * f[i];
                gw[i] += kw * f[i];
                gphi[i] += kphi * f[i];
            }
        }

        if self.negative_weight == 0.0 {
            return loss;
        }
        let nn = s.negatives.len() as f64 / self.negative_weight;
        for cell in &s.negatives {
            let f = &s.feats[*cell];
            let q = sigmoid(dot(self.head(Q), f));
            loss += smooth_l1(q) / nn;
            let kq = smooth_l1_grad(q) * q * (1.0 - q) / nn;
            for i in 0..FEATURE_DIM {
                gq[i] += kq * f[i];
            }
        }
        loss
    }

    /// Mean smooth-L1 loss over the batch and its exact gradient.
    ///
    /// Per sample: quality error averaged over target cells, plus the
    /// weighted quality error averaged over the remaining cells, plus width
    /// (in units of `width_unit_px`) and wrapped angle error averaged over target
    /// cells.
    pub fn loss_and_grad_prepared(&self, batch: &[PreparedSample]) -> (f64, Vec<f64>) {
        let parts: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .map(|s| {
                let mut g = vec![0.0; self.weights.len()];
                let l = self.sample_loss_grad(s, &mut g);
                (l, g)
            })
            .collect();
        let m = batch.len().max(1) as f64;
        let mut grad = vec![0.0; self.weights.len()];
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        grad.iter_mut().for_each(|v| *v /= m);
        (loss / m, grad)
    }

    pub fn loss_prepared(&self, batch: &[PreparedSample]) -> f64 {
        self.loss_and_grad_prepared(batch).0
    }

    pub fn loss_and_grad(&self, batch: &[TrainingSample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(EtaError::EmptyDataset);
        }
        let prepared = batch
            .iter()
            .map(|s| self.prepare(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.loss_and_grad_prepared(&prepared))
    }

    /// One plain gradient-descent step.
    pub fn apply_update(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.weights.len() {
            return Err(EtaError::DimensionMismatch {
                expected: self.weights.len(),
                got: grad.len(),
            });
        }
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(EtaError::Config(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(EtaError::DivergentUpdate);
        }
        let next: Vec<f64> = self
            .weights
            .iter()
            .zip(grad)
            .map(|(w, g)| w - lr * g)
            .collect();
        if next.iter().any(|w| !w.is_finite()) {
            return Err(EtaError::DivergentUpdate);
        }
        self.weights = next;
        Ok(())
    }

    /// Supervised fitting. Returns the loss measured before each step.
    pub fn pretrain(
        &mut self,
        dataset: &[TrainingSample],
        opts: &PretrainOptions,
    ) -> Result<Vec<f64>> {
        if dataset.is_empty() {
            return Err(EtaError::EmptyDataset);
        }
        let prepared = dataset
            .iter()
            .map(|s| self.prepare(s))
            .collect::<Result<Vec<_>>>()?;
        self.pretrain_prepared(&prepared, opts)
    }

    pub fn pretrain_prepared(
        &mut self,
        dataset: &[PreparedSample],
        opts: &PretrainOptions,
    ) -> Result<Vec<f64>> {
        if dataset.is_empty() {
            return Err(EtaError::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let bs = opts
            .batch_size
            .unwrap_or(dataset.len())
            .clamp(1, dataset.len());
        let mut history = Vec::with_capacity(opts.epochs);
        for _ in 0..opts.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(bs) {
                let batch: Vec<PreparedSample> =
                    chunk.iter().map(|&i| dataset[i].clone()).collect();
                let (loss, grad) = self.loss_and_grad_prepared(&batch);
                if !loss.is_finite() {
                    return Err(EtaError::DivergentUpdate);
                }
                history.push(loss);
                self.apply_update(&grad, opts.lr)?;
            }
        }
        Ok(history)
    }

    pub fn to_checkpoint(&self) -> DetectorCheckpoint {
        DetectorCheckpoint {
            version: CHECKPOINT_VERSION,
            kind: "parametric".into(),
            feature_set: FEATURE_SET.into(),
            feature_dim: FEATURE_DIM,
            heads: HEADS,
            grid: self.grid,
            w_max_px: self.w_max_px,
            negative_weight: self.negative_weight,
            width_unit_px: self.width_unit_px,
            weights: self.weights.clone(),
        }
    }

    pub fn from_checkpoint(c: DetectorCheckpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(EtaError::Version {
                found: c.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if c.kind != "parametric" || c.feature_set != FEATURE_SET {
            return Err(EtaError::Config(format!(
                "unsupported checkpoint {} / {}",
                c.kind, c.feature_set
            )));
        }
        if c.feature_dim != FEATURE_DIM || c.heads != HEADS {
            return Err(EtaError::DimensionMismatch {
                expected: HEADS * FEATURE_DIM,
                got: c.heads * c.feature_dim,
            });
        }
        if !(c.width_unit_px > 0.0) {
            return Err(EtaError::Config("width_unit_px must be positive".into()));
        }
        Ok(Self::from_weights(c.grid, c.w_max_px, c.weights)?
            .with_negative_weight(c.negative_weight)
            .with_width_unit(c.width_unit_px))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint())?;
        std::fs::write(path.as_ref(), text).map_err(|e| EtaError::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| EtaError::io(path.as_ref(), e))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

impl GraspDetector for ParametricDetector {
    fn predict(&self, obs: &Observation) -> GraspSet {
        self.predict_features(&cell_features(obs, &self.grid), obs.viewpoint_index)
    }
}

/// Versioned weight file with grid and feature metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorCheckpoint {
    pub version: u32,
    pub kind: String,
    pub feature_set: String,
    pub feature_dim: usize,
    pub heads: usize,
    pub grid: CellGrid,
    pub w_max_px: f64,
    pub negative_weight: f64,
    pub width_unit_px: f64,
    pub weights: Vec<f64>,
}
