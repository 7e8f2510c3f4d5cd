use super::config::{BenchmarkConfig, Method};
use crate::adaptation::{AdaptationReport, Adapter};
use crate::detector::ParametricDetector;
use crate::error::Result;
use crate::exploration::{
    initial_observation, run_episode, EpisodeContext, EpisodeResult, ExplorationConfig,
    InitialChoice, Strategy,
};
use crate::knowledge::{self, KnowledgePool, OpNet};
use crate::scene::{render, OracleSegmenter, Scene};

/// The models one method carries from episode to episode.
#[derive(Debug, Clone)]
pub struct Agent {
    pub detector: ParametricDetector,
    pub pool: KnowledgePool,
    pub opnet: OpNet,
    pub exploration: ExplorationConfig,
    pub strategy: Strategy,
    adapter: Option<Adapter>,
}

impl Agent {
    /// Fresh knowledge, the given detector, and an adapter when `method`
    /// adapts.
    pub fn new(
        cfg: &BenchmarkConfig,
        method: Method,
        detector: ParametricDetector,
    ) -> Result<Self> {
        let groups = cfg.camera.groups;
        let adapter = if method.adapts() {
            Some(Adapter::new(cfg.adaptation.clone())?)
        } else {
            None
        };
        Ok(Self {
            detector,
            pool: KnowledgePool::new(knowledge::FEATURE_DIM, groups),
            opnet: OpNet::seeded(
                knowledge::FEATURE_DIM,
                cfg.knowledge.hidden,
                groups,
                cfg.knowledge.init_seed,
            ),
            exploration: ExplorationConfig {
                single_view: method.single_view(),
                ..cfg.exploration.clone()
            },
            strategy: cfg.strategy,
            adapter,
        })
    }

    pub fn adapts(&self) -> bool {
        self.adapter.is_some()
    }

    /// Where the next episode on `scene` would start.
    pub fn initial_observation(&self, scene: &Scene) -> Result<InitialChoice> {
        let obs0 = render(scene, 0)?;
        Ok(initial_observation(
            &obs0,
            &self.pool,
            &self.opnet,
            self.exploration.novelty_threshold,
        ))
    }

    /// Run one episode, then adapt if this agent adapts.
    pub fn episode(
        &mut self,
        scene: &Scene,
        seed: u64,
    ) -> Result<(EpisodeResult, Option<AdaptationReport>)> {
        let result = {
            let ctx = EpisodeContext {
                detector: &self.detector,
                segmenter: &OracleSegmenter,
                pool: &self.pool,
                opnet: &self.opnet,
            };
            run_episode(scene, &ctx, &self.exploration, self.strategy, seed)?
        };
        let report = match &mut self.adapter {
            Some(a) => {
                Some(a.observe(&mut self.detector, &mut self.pool, &mut self.opnet, &result)?)
            }
            None => None,
        };
        Ok((result, report))
    }
}
