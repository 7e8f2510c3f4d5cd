//! The active exploration loop: pick a starting observation group from
//! experience, then visit viewpoints in order, detecting, assessing and
//! either grasping or moving on, until a confident grasp is found or the
//! trajectory runs out.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assessment::{
    best_passing, decide, filter_embodied, qa_score, Action, EmbodiedParams, QaParams,
    ScoredCandidate,
};
use crate::detector::{top_candidate, GraspDetector, TrainingSample};
use crate::error::{EtaError, Result};
use crate::geometry::GraspRect;
use crate::harness::metrics::{ee, judge, SuccessJudgment};
use crate::knowledge::{extract_features, FeatureVector, KnowledgePool, OpNet, Retrieval};
use crate::scene::{render, Family, Scene, Segmenter, Trajectory};

/// Viewpoint ordering policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Knowledge retrieval chooses the starting group.
    Kr,
    /// Sequential groups and viewpoints.
    Se,
    /// Random order over all viewpoints.
    Rv,
    /// Random group order, sequential viewpoints within a group.
    Ro,
    /// Sequential groups, random viewpoints within a group.
    So,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Kr,
        Strategy::Se,
        Strategy::Rv,
        Strategy::Ro,
        Strategy::So,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Kr => "KR",
            Strategy::Se => "SE",
            Strategy::Rv => "RV",
            Strategy::Ro => "RO",
            Strategy::So => "SO",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = EtaError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EtaError::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorationConfig {
    pub epsilon: f64,
    pub qa: QaParams,
    pub embodied: EmbodiedParams,
    /// Only the `top_n` highest-quality candidates of a view are assessed;
    /// 0 assesses all of them.
    pub top_n: usize,
    pub novelty_threshold: f64,
    /// An exhausted episode still labels the knowledge pool when its best
    /// score reached this fraction of epsilon.
    pub knowledge_floor: f64,
    /// Restrict every episode to viewpoint 0.
    pub single_view: bool,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            epsilon: 4.0,
            qa: QaParams::default(),
            embodied: EmbodiedParams::default(),
            top_n: 10,
            novelty_threshold: crate::knowledge::NOVELTY_THRESHOLD,
            knowledge_floor: 0.5,
            single_view: false,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(EtaError::Config("epsilon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.novelty_threshold) {
            return Err(EtaError::Config(
                "novelty_threshold must lie in [0, 1]".into(),
            ));
        }
        if !(self.knowledge_floor >= 0.0) {
            return Err(EtaError::Config("knowledge_floor must be >= 0".into()));
        }
        if !(self.qa.lambda1 > 0.0 && self.qa.lambda2 > 0.0) {
            return Err(EtaError::Config(
                "lambda1 and lambda2 must be positive".into(),
            ));
        }
        self.embodied.validate()
    }
}

/// Where exploration starts and why.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialChoice {
    pub group: usize,
    pub retrieval: Retrieval,
    pub features: Option<FeatureVector>,
}

/// Retrieve experience for the survey view; a known object starts at the
/// group OPNet predicts for the retrieved embedding, a novel one at group 0.
pub fn initial_observation(
    obs0: &crate::scene::Observation,
    pool: &KnowledgePool,
    opnet: &OpNet,
    novelty_threshold: f64,
) -> InitialChoice {
    let Ok(features) = extract_features(obs0) else {
        return InitialChoice {
            group: 0,
            retrieval: Retrieval::Novel,
            features: None,
        };
    };
    initial_group(&features, pool, opnet, novelty_threshold)
}

pub fn initial_group(
    features: &FeatureVector,
    pool: &KnowledgePool,
    opnet: &OpNet,
    novelty_threshold: f64,
) -> InitialChoice {
    let retrieval = pool.retrieve(features, novelty_threshold);
    let group = match retrieval {
        Retrieval::Known { index, .. } => opnet
            .predict_observation(&pool.entries[index].embedding)
            .unwrap_or(0),
        Retrieval::Novel => 0,
    };
    InitialChoice {
        group,
        retrieval,
        features: Some(features.clone()),
    }
}

/// All viewpoints of `start_group`, then the following groups cyclically,
/// each group in trajectory order.
pub fn visit_order(start_group: usize, traj: &Trajectory) -> Result<Vec<usize>> {
    let k = traj.num_groups();
    if start_group >= k {
        return Err(EtaError::InvalidGroup {
            group: start_group,
            groups: k,
        });
    }
    Ok((0..k)
        .flat_map(|i| traj.groups[(start_group + i) % k].clone())
        .collect())
}

/// Viewpoint order for a strategy. Only the random strategies use `seed`.
pub fn strategy_order(
    strategy: Strategy,
    start_group: usize,
    traj: &Trajectory,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match strategy {
        Strategy::Kr => visit_order(start_group, traj)?,
        Strategy::Se => visit_order(0, traj)?,
        Strategy::Rv => {
            let mut v: Vec<usize> = (0..traj.len()).collect();
            v.shuffle(&mut rng);
            v
        }
        Strategy::Ro => {
            let mut groups = traj.groups.clone();
            groups.shuffle(&mut rng);
            groups.into_iter().flatten().collect()
        }
        Strategy::So => traj
            .groups
            .iter()
            .flat_map(|g| {
                let mut v: Vec<usize> = g.clone().collect();
                v.shuffle(&mut rng);
                v
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Exploring,
    Grasped,
    Exhausted,
}

/// One visited viewpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub viewpoint: usize,
    pub group: usize,
    pub candidates: usize,
    pub feasible: usize,
    pub passing: usize,
    pub max_score: Option<f64>,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChosenGrasp {
    pub grasp: GraspRect,
    pub viewpoint: usize,
}

/// Exploration in progress over one scene.
#[derive(Debug)]
pub struct ExplorationState<'a> {
    scene: &'a Scene,
    order: Vec<usize>,
    pub visited: Vec<usize>,
    pub retained: Vec<TrainingSample>,
    pub status: Status,
    pub trace: Vec<TraceRow>,
    pub chosen: Option<ChosenGrasp>,
    best_seen: Option<(ScoredCandidate, usize)>,
    first_top: Option<ChosenGrasp>,
}

impl<'a> ExplorationState<'a> {
    pub fn new(scene: &'a Scene, order: Vec<usize>) -> Result<Self> {
        let v = scene.trajectory.len();
        let mut seen = vec![false; v];
        for &t in &order {
            if t >= v {
                return Err(EtaError::ViewpointOutOfRange(t));
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(EtaError::Config(format!(
                    "viewpoint {t} repeated in visit order"
                )));
            }
        }
        if order.is_empty() {
            return Err(EtaError::Config("empty visit order".into()));
        }
        Ok(Self {
            scene,
            order,
            visited: Vec::new(),
            retained: Vec::new(),
            status: Status::Exploring,
            trace: Vec::new(),
            chosen: None,
            best_seen: None,
            first_top: None,
        })
    }

    pub fn current_viewpoint(&self) -> Option<usize> {
        match self.status {
            Status::Exploring => self.order.get(self.visited.len()).copied(),
            _ => None,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.visited.len()
    }

    /// Highest-scoring candidate that passed both gates so far.
    pub fn best_seen(&self) -> Option<(ScoredCandidate, usize)> {
        self.best_seen
    }

    /// Visit the next viewpoint.
    pub fn step(
        &mut self,
        detector: &dyn GraspDetector,
        segmenter: &dyn Segmenter,
        cfg: &ExplorationConfig,
    ) -> Result<()> {
        let t = self.current_viewpoint().ok_or(EtaError::NotExploring)?;
        self.visit(t, detector, segmenter, cfg)
            .map_err(|e| e.at_viewpoint(t))?;
        if self.status == Status::Exploring && self.visited.len() == self.order.len() {
            self.status = Status::Exhausted;
        }
        Ok(())
    }

    fn visit(
        &mut self,
        t: usize,
        detector: &dyn GraspDetector,
        segmenter: &dyn Segmenter,
        cfg: &ExplorationConfig,
    ) -> Result<()> {
        self.visited.push(t);
        let obs = render(self.scene, t)?;
        let set = detector.predict(&obs);
        if self.first_top.is_none() {
            if let Ok(g) = top_candidate(&set) {
                self.first_top = Some(ChosenGrasp {
                    grasp: g,
                    viewpoint: t,
                });
            }
        }
        let considered = if cfg.top_n > 0 {
            set.top_n(cfg.top_n)
        } else {
            set.clone()
        };
        let feasible = filter_embodied(&considered, &obs.depth, &obs.camera, &cfg.embodied);
        let mut row = TraceRow {
            viewpoint: t,
            group: self.scene.trajectory.group_of(t),
            candidates: set.len(),
            feasible: feasible.len(),
            passing: 0,
            max_score: None,
            action: Action::Explore,
        };
        if !feasible.is_empty() {
            let hull = match segmenter.segment(&obs) {
                Ok(h) => Some(h),
                Err(EtaError::ObjectNotVisible) => None,
                Err(e) => return Err(e),
            };
            if let Some(hull) = hull {
                let scored = qa_score(&feasible, &obs.mask, &hull, &cfg.qa)?;
                row.passing = scored.iter().filter(|c| c.passed_primary).count();
                let best = best_passing(&scored);
                if let Some(b) = best {
                    row.max_score = b.score;
                    let better = self.best_seen.is_none_or(|(s, _)| {
                        b.score.unwrap_or(f64::NEG_INFINITY) > s.score.unwrap_or(f64::NEG_INFINITY)
                    });
                    if better {
                        self.best_seen = Some((*b, t));
                    }
                }
                row.action = decide(best, cfg.epsilon);
                if row.action == Action::Grasp {
                    let b = best.expect("grasp decision implies a passing candidate");
                    self.chosen = Some(ChosenGrasp {
                        grasp: b.grasp,
                        viewpoint: t,
                    });
                    self.status = Status::Grasped;
                    let targets: Vec<GraspRect> = scored
                        .iter()
                        .filter(|c| c.score.is_some_and(|s| s >= cfg.epsilon))
                        .map(|c| c.grasp.with_quality(1.0))
                        .collect();
                    self.retained.push(TrainingSample::new(obs, targets)?);
                }
            }
        }
        self.trace.push(row);
        Ok(())
    }
}

/// Summary of one finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub object_id: String,
    pub family: Family,
    pub optimal_observation: usize,
    pub strategy: Strategy,
    pub start_group: usize,
    pub retrieval: Retrieval,
    pub status: Status,
    /// Executed grasp: the confident one, or for an exhausted episode the
    /// best-scoring passing candidate seen, else the top candidate of the
    /// first view.
    pub chosen: Option<ChosenGrasp>,
    pub judgment: Option<SuccessJudgment>,
    pub success: bool,
    pub sg: usize,
    pub ee: f64,
    pub max_score: Option<f64>,
    pub best_observation: Option<usize>,
    /// Group written to the knowledge pool, if the episode earns one.
    pub knowledge_label: Option<usize>,
    pub retained: Vec<TrainingSample>,
    pub trace: Vec<TraceRow>,
    pub first_view_features: Option<FeatureVector>,
}

/// Knowledge, detector and segmenter used by an episode. All read-only.
pub struct EpisodeContext<'a> {
    pub detector: &'a dyn GraspDetector,
    pub segmenter: &'a dyn Segmenter,
    pub pool: &'a KnowledgePool,
    pub opnet: &'a OpNet,
}

pub fn run_episode(
    scene: &Scene,
    ctx: &EpisodeContext<'_>,
    cfg: &ExplorationConfig,
    strategy: Strategy,
    seed: u64,
) -> Result<EpisodeResult> {
    let traj = &scene.trajectory;
    let obs0 = render(scene, 0)?;
    let choice = initial_observation(&obs0, ctx.pool, ctx.opnet, cfg.novelty_threshold);
    let start_group = if strategy == Strategy::Kr {
        choice.group
    } else {
        0
    };
    let order = if cfg.single_view {
        vec![0]
    } else {
        strategy_order(strategy, start_group, traj, seed)?
    };

    let mut state = ExplorationState::new(scene, order)?;
    while state.status == Status::Exploring {
        state.step(ctx.detector, ctx.segmenter, cfg)?;
    }

    let best_seen = state.best_seen();
    let chosen = state.chosen.or_else(|| {
        best_seen
            .map(|(c, t)| ChosenGrasp {
                grasp: c.grasp,
                viewpoint: t,
            })
            .or(state.first_top)
    });
    let judgment = match chosen {
        Some(c) => {
            let gts = scene.target().gt_in_view(&scene.camera_for(c.viewpoint)?);
            Some(judge(&c.grasp, &gts)?)
        }
        None => None,
    };
    let max_score = best_seen.and_then(|(c, _)| c.score);
    let (best_observation, knowledge_label) = match (state.status, state.chosen) {
        (Status::Grasped, Some(c)) => {
            let g = traj.group_of(c.viewpoint);
            (Some(g), Some(g))
        }
        _ => match best_seen {
            Some((c, t)) => {
                let g = traj.group_of(t);
                let eligible = c.score.unwrap_or(0.0) >= cfg.knowledge_floor * cfg.epsilon;
                (Some(g), eligible.then_some(g))
            }
            None => (None, None),
        },
    };
    let sg = state.steps_taken();
    let target = scene.target();
    Ok(EpisodeResult {
        object_id: target.id.clone(),
        family: target.category,
        optimal_observation: target.optimal_observation,
        strategy,
        start_group,
        retrieval: choice.retrieval,
        status: state.status,
        chosen,
        success: judgment.is_some_and(|j| j.success),
        judgment,
        sg,
        ee: ee(sg)?,
        max_score,
        best_observation,
        knowledge_label,
        retained: state.retained,
        trace: state.trace,
        first_view_features: choice.features,
    })
}
