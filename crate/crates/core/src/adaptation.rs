//! Test-time optimization. The detector is tuned on pseudo-labelled
//! samples retained during exploration; the knowledge pool receives one
//! entry per labelled episode and OPNet is refit on the whole pool.

use serde::{Deserialize, Serialize};

use crate::detector::{ParametricDetector, PreparedSample, TrainingSample};
use crate::error::{EtaError, Result};
use crate::exploration::EpisodeResult;
use crate::knowledge::{FeatureVector, KnowledgePool, OpNet};

/// Pseudo-labelled samples for one detector update. There is no field for
/// ground truth: targets come from the assessment stage only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdaptationBatch {
    pub samples: Vec<TrainingSample>,
    pub source_episodes: Vec<u64>,
}

impl AdaptationBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push_episode(&mut self, episode: u64, result: &EpisodeResult) {
        if !result.retained.is_empty() {
            self.samples.extend(result.retained.iter().cloned());
            self.source_episodes.push(episode);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptationConfig {
    pub steps: usize,
    pub lr: f64,
    pub opnet_epochs: usize,
    pub opnet_lr: f64,
    /// Adapt the detector after every `every` episodes.
    pub every: usize,
    /// Keep all retained samples across rounds instead of only the latest
    /// batch.
    pub replay: bool,
    pub adapt_detector: bool,
    pub adapt_knowledge: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 1e-2,
            opnet_epochs: 200,
            opnet_lr: 1e-2,
            every: 1,
            replay: false,
            adapt_detector: true,
            adapt_knowledge: true,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0)
            || !(self.opnet_lr.is_finite() && self.opnet_lr > 0.0)
        {
            return Err(EtaError::Config(
                "adaptation learning rates must be positive".into(),
            ));
        }
        if self.every == 0 {
            return Err(EtaError::Config(
                "adaptation cadence must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Losses of one detector update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorAdaptation {
    pub pre_loss: f64,
    pub post_loss: f64,
    /// Steps whose trial update lowered the loss and was kept.
    pub accepted_steps: usize,
    /// Learning rate in effect after the last step.
    pub final_lr: f64,
}

/// Gradient descent on the batch with step halving: a step that would
/// raise the loss is discarded and the rate halved, so the returned loss
/// never exceeds the starting one. On a non-finite loss the detector is
/// left as it was and `DivergentUpdate` is returned.
pub fn adapt_detector(
    detector: &mut ParametricDetector,
    batch: &[TrainingSample],
    steps: usize,
    lr: f64,
) -> Result<DetectorAdaptation> {
    if batch.is_empty() {
        return Err(EtaError::EmptyDataset);
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(EtaError::Config("learning rate must be positive".into()));
    }
    let prepared = batch
        .iter()
        .map(|s| detector.prepare(s))
        .collect::<Result<Vec<PreparedSample>>>()?;
    let mut current = detector.clone();
    let (pre_loss, mut grad) = current.loss_and_grad_prepared(&prepared);
    if !pre_loss.is_finite() {
        return Err(EtaError::DivergentUpdate);
    }
    let mut loss = pre_loss;
    let mut rate = lr;
    let mut accepted = 0;
    for _ in 0..steps {
        if loss == 0.0 {
            break;
        }
        let mut trial = current.clone();
        trial.apply_update(&grad, rate)?;
        let (trial_loss, trial_grad) = trial.loss_and_grad_prepared(&prepared);
        if trial_loss.is_nan() {
            return Err(EtaError::DivergentUpdate);
        }
        if trial_loss <= loss {
            current = trial;
            loss = trial_loss;
            grad = trial_grad;
            accepted += 1;
        } else {
            rate *= 0.5;
        }
    }
    *detector = current;
    Ok(DetectorAdaptation {
        pre_loss,
        post_loss: loss,
        accepted_steps: accepted,
        final_lr: rate,
    })
}

/// Add an episode's knowledge and refit OPNet. Returns the cross-entropy
/// after training, or 0 when the episode carries no label.
pub fn adapt_knowledge(
    pool: &mut KnowledgePool,
    opnet: &mut OpNet,
    episode_index: u64,
    result: &EpisodeResult,
    epochs: usize,
    lr: f64,
) -> Result<f64> {
    let (Some(label), Some(features)) =
        (result.knowledge_label, result.first_view_features.as_ref())
    else {
        return Ok(0.0);
    };
    insert_and_train(
        pool,
        opnet,
        features.clone(),
        label,
        episode_index,
        Some(result.object_id.clone()),
        epochs,
        lr,
    )
}

#[allow(clippy::too_many_arguments)]
fn insert_and_train(
    pool: &mut KnowledgePool,
    opnet: &mut OpNet,
    features: FeatureVector,
    label: usize,
    episode_index: u64,
    tag: Option<String>,
    epochs: usize,
    lr: f64,
) -> Result<f64> {
    let mut next_pool = pool.clone();
    next_pool.insert_entry(features, label, episode_index, tag)?;
    let mut next_net = opnet.clone();
    let loss = next_net.train(&next_pool, epochs, lr)?;
    *pool = next_pool;
    *opnet = next_net;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub pre_loss: f64,
    pub post_loss: f64,
    pub opnet_loss: f64,
    /// `post_loss + opnet_loss`.
    pub total: f64,
    pub samples: usize,
    pub pool_growth: usize,
    pub steps: usize,
    pub lr: f64,
}

/// Merge the retained samples of `episodes`, tune the detector on them and
/// fold each episode into the knowledge pool. An empty batch skips the
/// detector and reports zero detector loss. `first_episode` numbers the
/// pool entries.
pub fn adaptation_round(
    detector: &mut ParametricDetector,
    pool: &mut KnowledgePool,
    opnet: &mut OpNet,
    episodes: &[EpisodeResult],
    first_episode: u64,
    cfg: &AdaptationConfig,
) -> Result<AdaptationReport> {
    if episodes.is_empty() {
        return Err(EtaError::EmptyDataset);
    }
    let mut batch = AdaptationBatch::default();
    for (i, r) in episodes.iter().enumerate() {
        batch.push_episode(first_episode + i as u64, r);
    }
    let act = if batch.is_empty() || !cfg.adapt_detector {
        None
    } else {
        Some(adapt_detector(detector, &batch.samples, cfg.steps, cfg.lr)?)
    };
    let (know, growth) = fold_knowledge(pool, opnet, episodes, first_episode, cfg)?;
    let (pre, post) = act.map_or((0.0, 0.0), |a| (a.pre_loss, a.post_loss));
    Ok(AdaptationReport {
        pre_loss: pre,
        post_loss: post,
        opnet_loss: know,
        total: post + know,
        samples: batch.len(),
        pool_growth: growth,
        steps: cfg.steps,
        lr: cfg.lr,
    })
}

fn fold_knowledge(
    pool: &mut KnowledgePool,
    opnet: &mut OpNet,
    episodes: &[EpisodeResult],
    first_episode: u64,
    cfg: &AdaptationConfig,
) -> Result<(f64, usize)> {
    if !cfg.adapt_knowledge {
        return Ok((0.0, 0));
    }
    let before = pool.len();
    let mut loss = 0.0;
    for (i, r) in episodes.iter().enumerate() {
        let l = adapt_knowledge(
            pool,
            opnet,
            first_episode + i as u64,
            r,
            cfg.opnet_epochs,
            cfg.opnet_lr,
        )?;
        if r.knowledge_label.is_some() && r.first_view_features.is_some() {
            loss = l;
        }
    }
    Ok((loss, pool.len() - before))
}

/// Online adaptation over a stream of episodes: knowledge after every
/// episode, detector every `cfg.every` episodes, optionally replaying all
/// earlier samples.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub cfg: AdaptationConfig,
    history: Vec<TrainingSample>,
    pending: Vec<TrainingSample>,
    since_update: usize,
    episodes_seen: u64,
}

impl Adapter {
    pub fn new(cfg: AdaptationConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            history: Vec::new(),
            pending: Vec::new(),
            since_update: 0,
            episodes_seen: 0,
        })
    }

    /// Samples the next detector update would train on.
    pub fn batch(&self) -> Vec<TrainingSample> {
        if self.cfg.replay {
            self.history.iter().chain(&self.pending).cloned().collect()
        } else {
            self.pending.clone()
        }
    }

    pub fn observe(
        &mut self,
        detector: &mut ParametricDetector,
        pool: &mut KnowledgePool,
        opnet: &mut OpNet,
        result: &EpisodeResult,
    ) -> Result<AdaptationReport> {
        let episode = self.episodes_seen;
        self.episodes_seen += 1;
        self.pending.extend(result.retained.iter().cloned());
        self.since_update += 1;

        let mut act = None;
        let mut samples = 0;
        if self.cfg.adapt_detector && self.since_update >= self.cfg.every {
            self.since_update = 0;
            let batch = self.batch();
            samples = batch.len();
            if !batch.is_empty() {
                act = Some(adapt_detector(
                    detector,
                    &batch,
                    self.cfg.steps,
                    self.cfg.lr,
                )?);
            }
            self.history.append(&mut self.pending);
        }
        let (know, growth) = fold_knowledge(
            pool,
            opnet,
            std::slice::from_ref(result),
            episode,
            &self.cfg,
        )?;
        let (pre, post) = act.map_or((0.0, 0.0), |a| (a.pre_loss, a.post_loss));
        Ok(AdaptationReport {
            pre_loss: pre,
            post_loss: post,
            opnet_loss: know,
            total: post + know,
            samples,
            pool_growth: growth,
            steps: if act.is_some() { self.cfg.steps } else { 0 },
            lr: self.cfg.lr,
        })
    }
}
