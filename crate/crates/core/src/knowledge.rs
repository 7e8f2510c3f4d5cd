//! Knowledge pool of viewpoint experience: a deterministic shape/depth
//! descriptor, cosine retrieval with a novelty threshold, and OPNet, the
//! two-layer observation predictor.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::height_map;
use crate::error::{EtaError, Result};
use crate::scene::Observation;

pub const FEATURE_DIM: usize = 64;
pub const NOVELTY_THRESHOLD: f64 = 0.95;
pub const POOL_VERSION: u32 = 1;

const RADIAL_BINS: usize = 32;
const HEIGHT_BINS: usize = 16;
const HEIGHT_RANGE_MM: f64 = 64.0;
const RADIAL_SIGMA: f64 = 1.5;
const HEIGHT_SIGMA: f64 = 2.0;
const RADIAL_WEIGHT: f64 = 1.0;
const STATS_WEIGHT: f64 = 0.5;
const HEIGHT_WEIGHT: f64 = 0.35;

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    /// Normalizes `values` to unit length.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(EtaError::NoObjectFeatures);
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &FeatureVector) -> f64 {
        cosine_similarity(&self.values, &other.values)
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = EtaError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(EtaError::Config(format!("embedding norm {norm} is not 1")));
        }
        Ok(Self { values })
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.values
    }
}

/// `a.b / (|a| |b|)`, or 0 when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Adds `weight` spread over the bins with a Gaussian kernel of `sigma`
/// bins centred at the fractional position `t * (n - 1)`.
fn soft_bin(hist: &mut [f64], t: f64, weight: f64, sigma: f64) {
    let n = hist.len();
    let pos = t.clamp(0.0, 1.0) * (n - 1) as f64;
    let kernel: Vec<f64> = (0..n)
        .map(|i| (-0.5 * ((i as f64 - pos) / sigma).powi(2)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    for (h, k) in hist.iter_mut().zip(kernel) {
        *h += weight * k / total;
    }
}

/// Perimeter of the boundary points taken in angular order about `(cx, cy)`.
fn boundary_length(boundary: &[(f64, f64)], cx: f64, cy: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = boundary.to_vec();
    pts.sort_by(|a, b| {
        let ta = (a.1 - cy).atan2(a.0 - cx);
        let tb = (b.1 - cy).atan2(b.0 - cx);
        ta.total_cmp(&tb)
    });
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            (a.0 - b.0).hypot(a.1 - b.1)
        })
        .sum::<f64>()
        .max(1.0)
}

fn unit(v: &mut [f64], weight: f64) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x *= weight / n);
    }
}

/// Descriptor of the target silhouette: a soft histogram of boundary
/// distances from the centroid (scaled by the largest), fill, compactness
/// and elongation statistics, and a histogram of surface heights under the
/// mask. Blocks are weighted, concatenated, zero-padded and normalized.
pub fn extract_features(obs: &Observation) -> Result<FeatureVector> {
    let mask = &obs.mask;
    let (w, h) = (mask.width(), mask.height());
    let on = |c: isize, r: isize| {
        c >= 0
            && r >= 0
            && (c as usize) < w
            && (r as usize) < h
            && *mask.get(c as usize, r as usize)
    };
    // Rows are foreshortened by the camera tilt; stretching them back gives
    // a top-down silhouette whose descriptor does not depend on azimuth.
    let stretch = 1.0 / obs.camera.elevation.sin();
    let pixels: Vec<(usize, usize)> = mask
        .iter_indexed()
        .filter(|(_, _, &m)| m)
        .map(|(c, r, _)| (c, r))
        .collect();
    if pixels.is_empty() {
        return Err(EtaError::NoObjectFeatures);
    }
    let n = pixels.len() as f64;
    let top = |&(c, r): &(usize, usize)| (c as f64, r as f64 * stretch);
    let cx = pixels.iter().map(|p| top(p).0).sum::<f64>() / n;
    let cy = pixels.iter().map(|p| top(p).1).sum::<f64>() / n;

    let boundary: Vec<(f64, f64)> = pixels
        .iter()
        .filter(|&&(c, r)| {
            let (c, r) = (c as isize, r as isize);
            !(on(c - 1, r) && on(c + 1, r) && on(c, r - 1) && on(c, r + 1))
        })
        .map(top)
        .collect();
    let dists: Vec<f64> = boundary
        .iter()
        .map(|&(c, r)| (c - cx).hypot(r - cy))
        .collect();
    let r_max = dists.iter().copied().fold(0.0, f64::max).max(0.5);

    let mut radial = vec![0.0; RADIAL_BINS];
    for d in &dists {
        soft_bin(
            &mut radial,
            d / r_max,
            1.0 / dists.len() as f64,
            RADIAL_SIGMA,
        );
    }
    unit(&mut radial, RADIAL_WEIGHT);

    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    for (c, r) in pixels.iter().map(top) {
        mu20 += (c - cx).powi(2);
        mu02 += (r - cy).powi(2);
        mu11 += (c - cx) * (r - cy);
    }
    let (mu20, mu02, mu11) = (mu20 / n, mu02 / n, mu11 / n);
    let half_tr = (mu20 + mu02) / 2.0;
    let disc = ((mu20 - mu02) / 2.0).hypot(mu11);
    let (l1, l2) = (half_tr + disc, (half_tr - disc).max(0.0));
    let eccentricity = if l1 > 0.0 {
        (1.0 - l2 / l1).sqrt()
    } else {
        0.0
    };
    let area = n * stretch;
    let perimeter: f64 = boundary_length(&boundary, cx, cy);
    let fill = area / (std::f64::consts::PI * r_max * r_max);
    let compactness = (4.0 * std::f64::consts::PI * area / perimeter.powi(2)).min(1.0);
    let mut stats = vec![fill.min(1.0), compactness, eccentricity, 1.0 - eccentricity];
    unit(&mut stats, STATS_WEIGHT);

    let heights = height_map(&obs.depth);
    let mut hist = vec![0.0; HEIGHT_BINS];
    for &(c, r) in &pixels {
        let z = *heights.get(c, r);
        soft_bin(&mut hist, z / HEIGHT_RANGE_MM, 1.0 / n, HEIGHT_SIGMA);
    }
    unit(&mut hist, HEIGHT_WEIGHT);

    let mut values = Vec::with_capacity(FEATURE_DIM);
    values.extend(radial);
    values.extend(stats);
    values.extend(hist);
    values.resize(FEATURE_DIM, 0.0);
    FeatureVector::new(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeEntry {
    pub embedding: FeatureVector,
    pub best_observation: usize,
    pub object_tag: Option<String>,
    pub created_episode: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Retrieval {
    Known { index: usize, similarity: f64 },
    Novel,
}

/// Top-1 cosine match, or `Novel` when the best similarity is below
/// `threshold`. Ties go to the earliest entry.
pub fn retrieve(query: &FeatureVector, entries: &[KnowledgeEntry], threshold: f64) -> Retrieval {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in entries.iter().enumerate() {
        let s = query.cosine(&e.embedding);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    match best {
        Some((index, similarity)) if similarity >= threshold => {
            Retrieval::Known { index, similarity }
        }
        _ => Retrieval::Novel,
    }
}

/// Embedding store keyed to `groups` observation groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgePool {
    pub dim: usize,
    pub groups: usize,
    pub entries: Vec<KnowledgeEntry>,
}

impl KnowledgePool {
    pub fn new(dim: usize, groups: usize) -> Self {
        Self {
            dim,
            groups,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn retrieve(&self, query: &FeatureVector, threshold: f64) -> Retrieval {
        retrieve(query, &self.entries, threshold)
    }

    pub fn insert_entry(
        &mut self,
        embedding: FeatureVector,
        best_observation: usize,
        episode: u64,
        object_tag: Option<String>,
    ) -> Result<()> {
        if best_observation >= self.groups {
            return Err(EtaError::InvalidGroup {
                group: best_observation,
                groups: self.groups,
            });
        }
        if embedding.dim() != self.dim {
            return Err(EtaError::DimensionMismatch {
                expected: self.dim,
                got: embedding.dim(),
            });
        }
        self.entries.push(KnowledgeEntry {
            embedding,
            best_observation,
            object_tag,
            created_episode: episode,
        });
        Ok(())
    }
}

/// `P = W2 relu(W1 x + b1) + b2`, one logit per observation group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpNet {
    pub input: usize,
    pub hidden: usize,
    pub outputs: usize,
    /// Row-major `hidden x input`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `outputs x hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Parameter-shaped gradient of [`OpNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct OpNetGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl OpNet {
    pub fn zeros(input: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            input,
            hidden,
            outputs,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; outputs * hidden],
            b2: vec![0.0; outputs],
        }
    }

    /// Uniform `+-1/sqrt(fan_in)` initialization.
    pub fn seeded(input: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(input, hidden, outputs);
        let a1 = 1.0 / (input as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        net.w1
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-a1..a1));
        net.w2
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-a2..a2));
        net
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input {
            return Err(EtaError::DimensionMismatch {
                expected: self.input,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.input..(j + 1) * self.input];
                self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn output(&self, hidden: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                self.b2[k] + row.iter().zip(hidden).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let h: Vec<f64> = self.hidden_pre(x).into_iter().map(|z| z.max(0.0)).collect();
        Ok(self.output(&h))
    }

    pub fn predict_observation(&self, know: &FeatureVector) -> Result<usize> {
        Ok(argmax(&self.logits(know.values())?))
    }

    /// Mean cross-entropy over `(embedding, label)` pairs and its gradient.
    pub fn loss_and_grad(&self, data: &[(&[f64], usize)]) -> Result<(f64, OpNetGrad)> {
        let mut g = OpNetGrad {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        };
        if data.is_empty() {
            return Err(EtaError::EmptyDataset);
        }
        let m = data.len() as f64;
        let mut loss = 0.0;
        for &(x, label) in data {
            self.check_input(x)?;
            if label >= self.outputs {
                return Err(EtaError::InvalidGroup {
                    group: label,
                    groups: self.outputs,
                });
            }
            let pre = self.hidden_pre(x);
            let h: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
            let p = softmax(&self.output(&h));
            loss -= p[label].max(f64::MIN_POSITIVE).ln() / m;

            let dz: Vec<f64> = (0..self.outputs)
                .map(|k| (p[k] - if k == label { 1.0 } else { 0.0 }) / m)
                .collect();
            let mut dh = vec![0.0; self.hidden];
            for k in 0..self.outputs {
                g.b2[k] += dz[k];
                for j in 0..self.hidden {
                    g.w2[k * self.hidden + j] += dz[k] * h[j];
                    dh[j] += dz[k] * self.w2[k * self.hidden + j];
                }
            }
            for j in 0..self.hidden {
                if pre[j] <= 0.0 {
                    continue;
                }
                g.b1[j] += dh[j];
                for i in 0..self.input {
                    g.w1[j * self.input + i] += dh[j] * x[i];
                }
            }
        }
        Ok((loss, g))
    }

    fn step(&mut self, g: &OpNetGrad, lr: f64) {
        let upd = |w: &mut Vec<f64>, d: &Vec<f64>| {
            w.iter_mut().zip(d).for_each(|(w, d)| *w -= lr * d);
        };
        upd(&mut self.w1, &g.w1);
        upd(&mut self.b1, &g.b1);
        upd(&mut self.w2, &g.w2);
        upd(&mut self.b2, &g.b2);
    }

    fn is_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Plain gradient descent on the pool's cross-entropy. Returns the loss
    /// after the last step (the initial loss when `epochs` is 0).
    pub fn train(&mut self, pool: &KnowledgePool, epochs: usize, lr: f64) -> Result<f64> {
        if pool.is_empty() {
            return Err(EtaError::EmptyDataset);
        }
        let data: Vec<(&[f64], usize)> = pool
            .entries
            .iter()
            .map(|e| (e.embedding.values(), e.best_observation))
            .collect();
        let mut next = self.clone();
        let (mut loss, mut grad) = next.loss_and_grad(&data)?;
        for _ in 0..epochs {
            next.step(&grad, lr);
            (loss, grad) = next.loss_and_grad(&data)?;
            if !loss.is_finite() || !next.is_finite() {
                return Err(EtaError::DivergentTraining);
            }
        }
        *self = next;
        Ok(loss)
    }

    pub fn accuracy(&self, pool: &KnowledgePool) -> Result<f64> {
        if pool.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0;
        for e in &pool.entries {
            if self.predict_observation(&e.embedding)? == e.best_observation {
                hits += 1;
            }
        }
        Ok(hits as f64 / pool.len() as f64)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// On-disk pool plus predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeSnapshot {
    pub version: u32,
    pub pool: KnowledgePool,
    pub opnet: OpNet,
}

impl KnowledgeSnapshot {
    pub fn new(pool: KnowledgePool, opnet: OpNet) -> Self {
        Self {
            version: POOL_VERSION,
            pool,
            opnet,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), text).map_err(|e| EtaError::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| EtaError::io(path.as_ref(), e))?;
        let snap: Self = serde_json::from_str(&text)?;
        if snap.version != POOL_VERSION {
            return Err(EtaError::Version {
                found: snap.version,
                expected: POOL_VERSION,
            });
        }
        if snap.opnet.input != snap.pool.dim || snap.opnet.outputs != snap.pool.groups {
            return Err(EtaError::DimensionMismatch {
                expected: snap.pool.dim * snap.pool.groups,
                got: snap.opnet.input * snap.opnet.outputs,
            });
        }
        Ok(snap)
    }
}
