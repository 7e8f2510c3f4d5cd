use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agent::Agent;
use super::config::{BenchmarkConfig, Domain, Method};
use super::metrics::judge;
use crate::assessment::Action;
use crate::detector::{top_candidate, GraspDetector, ParametricDetector, TrainingSample};
use crate::error::{EtaError, Result};
use crate::exploration::{EpisodeResult, ExplorationConfig, Status};
use crate::knowledge::Retrieval;
use crate::scene::{derive_seed, generate_scene, render, Appearance, Family, Scene, SceneSpec};

const PRETRAIN_STREAM: u64 = 0xB0;
const FINETUNE_STREAM: u64 = 0xF1;
const HELDOUT_STREAM: u64 = 0x4E;
const ORDER_STREAM: u64 = 1;
const SCENE_STREAM: u64 = 1_000;
const EPISODE_STREAM: u64 = 2_000;

fn spec_for(cfg: &BenchmarkConfig, family: Family, appearance: Appearance) -> SceneSpec {
    SceneSpec {
        camera: cfg.camera.clone(),
        appearance,
        embodied: cfg.exploration.embodied.clone(),
        ..SceneSpec::single(family)
    }
}

/// One target-domain scene of `family` under the benchmark camera.
pub fn target_scene(cfg: &BenchmarkConfig, family: Family, seed: u64) -> Result<Scene> {
    generate_scene(&spec_for(cfg, family, Appearance::target()), seed)
}

/// Test scenes shown in one seed, in presentation order.
pub fn suite_scenes(cfg: &BenchmarkConfig, seed: u64) -> Result<Vec<Scene>> {
    let mut families: Vec<Family> = cfg
        .families
        .iter()
        .flat_map(|&f| std::iter::repeat_n(f, cfg.objects_per_family))
        .collect();
    families.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        ORDER_STREAM,
    )));
    families
        .iter()
        .enumerate()
        .map(|(i, &f)| target_scene(cfg, f, derive_seed(seed, SCENE_STREAM + i as u64)))
        .collect()
}

/// Held-out target scenes, disjoint from every seed's suite.
pub fn heldout_scenes(cfg: &BenchmarkConfig) -> Result<Vec<Scene>> {
    labelled_scenes(
        cfg,
        &cfg.families,
        Appearance::target(),
        cfg.heldout_per_family * cfg.families.len(),
        HELDOUT_STREAM,
    )
}

fn labelled_scenes(
    cfg: &BenchmarkConfig,
    families: &[Family],
    appearance: Appearance,
    n: usize,
    stream: u64,
) -> Result<Vec<Scene>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            generate_scene(
                &spec_for(cfg, families[i % families.len()], appearance.clone()),
                derive_seed(stream, i as u64),
            )
        })
        .collect()
}

fn labelled_samples(scenes: &[Scene], views: &[usize]) -> Result<Vec<TrainingSample>> {
    let per_scene: Vec<Vec<TrainingSample>> = scenes
        .par_iter()
        .map(|s| {
            views
                .iter()
                .map(|&t| {
                    let obs = render(s, t)?;
                    let gts = s.target().gt_in_view(&obs.camera);
                    TrainingSample::new(obs, gts)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_scene.into_iter().flatten().collect())
}

fn train_on(
    det: &mut ParametricDetector,
    samples: &[TrainingSample],
    opts: &crate::detector::PretrainOptions,
) -> Result<Vec<f64>> {
    let prepared = samples
        .par_iter()
        .map(|s| det.prepare(s))
        .collect::<Result<Vec<_>>>()?;
    det.pretrain_prepared(&prepared, opts)
}

/// Supervised pretraining: on the test families for the same-domain mode,
/// on the disjoint source families with the source appearance otherwise.
pub fn pretrain_detector(cfg: &BenchmarkConfig) -> Result<(ParametricDetector, Vec<f64>)> {
    let d = &cfg.detector;
    if let Some(path) = &d.checkpoint {
        return Ok((ParametricDetector::load(path)?, Vec::new()));
    }
    let (families, appearance) = match cfg.domain {
        Domain::SameDomain => (cfg.families.clone(), Appearance::target()),
        Domain::CrossDomain => (Family::SOURCE.to_vec(), Appearance::source()),
    };
    let scenes = labelled_scenes(
        cfg,
        &families,
        appearance,
        d.pretrain_scenes,
        PRETRAIN_STREAM,
    )?;
    let samples = labelled_samples(&scenes, &d.pretrain_views)?;
    let mut det = ParametricDetector::zeros(cfg.grid(), d.w_max_px)
        .with_negative_weight(d.negative_weight)
        .with_width_unit(d.width_unit_px);
    let history = train_on(&mut det, &samples, &d.pretrain)?;
    Ok((det, history))
}

/// Supervised fine-tuning of `base` on labelled target-domain scenes.
pub fn finetune_detector(
    cfg: &BenchmarkConfig,
    base: &ParametricDetector,
) -> Result<ParametricDetector> {
    let f = &cfg.finetune;
    let scenes = labelled_scenes(
        cfg,
        &cfg.families,
        Appearance::target(),
        f.scenes,
        FINETUNE_STREAM,
    )?;
    let samples = labelled_samples(&scenes, &f.views)?;
    let mut det = base.clone();
    let opts = crate::detector::PretrainOptions {
        epochs: f.epochs,
        lr: f.lr,
        batch_size: None,
        seed: 0,
    };
    train_on(&mut det, &samples, &opts)?;
    Ok(det)
}

/// Fraction of (scene, viewpoint) pairs whose top candidate succeeds.
pub fn detector_accuracy(det: &dyn GraspDetector, scenes: &[Scene]) -> Result<f64> {
    let hits: Vec<(usize, usize)> = scenes
        .par_iter()
        .map(|s| {
            let mut ok = 0;
            for t in 0..s.trajectory.len() {
                let obs = render(s, t)?;
                if let Ok(g) = top_candidate(&det.predict(&obs)) {
                    if judge(&g, &s.target().gt_in_view(&obs.camera))?.success {
                        ok += 1;
                    }
                }
            }
            Ok((ok, s.trajectory.len()))
        })
        .collect::<Result<_>>()?;
    let (ok, n) = hits.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(if n == 0 { 0.0 } else { ok as f64 / n as f64 })
}

/// One CSV row per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub method: Method,
    pub episode: usize,
    pub scene_seed: u64,
    pub object: String,
    pub family: Family,
    pub strategy: String,
    pub epsilon: f64,
    pub start_group: usize,
    pub optimal_observation: usize,
    pub known: bool,
    pub status: String,
    pub sg: usize,
    pub ee: f64,
    pub max_score: Option<f64>,
    pub success: bool,
    pub iou: Option<f64>,
    pub angle_deg: Option<f64>,
    pub retained: usize,
    pub pool_size: usize,
    pub l_act_pre: f64,
    pub l_act_post: f64,
    pub l_know: f64,
    pub l_total: f64,
}

/// One CSV row per visited viewpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCsvRow {
    pub seed: u64,
    pub method: Method,
    pub episode: usize,
    pub step: usize,
    pub viewpoint: usize,
    pub group: usize,
    pub candidates: usize,
    pub feasible: usize,
    pub passing: usize,
    pub max_score: Option<f64>,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub episodes: usize,
    pub successes: usize,
    /// Percent.
    pub accuracy: f64,
    /// Percentage points over the baseline, when the baseline ran.
    pub delta_vs_baseline: Option<f64>,
    pub mean_sg: f64,
    pub mean_ee: f64,
    pub retained_samples: usize,
    /// Top-candidate accuracy on held-out scenes, percent, before the
    /// episode stream and (averaged over seeds) after it.
    pub heldout_pre: Option<f64>,
    pub heldout_post: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    pub strategy: String,
    pub domain: Domain,
    pub summaries: Vec<MethodSummary>,
    #[serde(skip)]
    pub rows: Vec<EpisodeRow>,
    #[serde(skip)]
    pub traces: Vec<TraceCsvRow>,
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| EtaError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| EtaError::io(path, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| EtaError::io(path, e))
}

impl RunReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn accuracy(&self, method: Method) -> Option<f64> {
        self.summary(method).map(|s| s.accuracy)
    }

    pub fn episodes_csv(&self) -> Result<String> {
        csv_string(&self.rows)
    }

    pub fn traces_csv(&self) -> Result<String> {
        csv_string(&self.traces)
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `episodes.csv`, `traces.csv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| EtaError::io(dir, e))?;
        write_file(&dir.join("episodes.csv"), &self.episodes_csv()?)?;
        write_file(&dir.join("traces.csv"), &self.traces_csv()?)?;
        write_file(&dir.join("summary.json"), &self.summary_json()?)
    }
}

/// Pretrained (and optionally fine-tuned) detectors shared by every seed,
/// method and epsilon of a study.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub base: ParametricDetector,
    pub finetuned: Option<ParametricDetector>,
    pub pretrain_history: Vec<f64>,
    pub heldout: Vec<Scene>,
}

struct StreamOutcome {
    rows: Vec<EpisodeRow>,
    traces: Vec<TraceCsvRow>,
    heldout_post: Option<f64>,
}

impl Benchmark {
    pub fn prepare(cfg: &BenchmarkConfig) -> Result<Self> {
        cfg.validate()?;
        let (base, pretrain_history) = pretrain_detector(cfg)?;
        let finetuned = if cfg.methods.contains(&Method::FinetuneGt) {
            Some(finetune_detector(cfg, &base)?)
        } else {
            None
        };
        Ok(Self {
            base,
            finetuned,
            pretrain_history,
            heldout: heldout_scenes(cfg)?,
        })
    }

    fn start_detector(&self, method: Method) -> Result<&ParametricDetector> {
        match method {
            Method::FinetuneGt => self
                .finetuned
                .as_ref()
                .ok_or_else(|| EtaError::Config("finetune_gt was not prepared".into())),
            _ => Ok(&self.base),
        }
    }

    /// Run every (seed, method) stream of `cfg`. Streams run in parallel;
    /// episodes inside a stream run in order because each one may adapt the
    /// models the next one uses.
    pub fn run(&self, cfg: &BenchmarkConfig) -> Result<RunReport> {
        cfg.validate()?;
        let jobs: Vec<(u64, Method)> = cfg
            .seeds
            .iter()
            .flat_map(|&s| cfg.methods.iter().map(move |&m| (s, m)))
            .collect();
        let outcomes = jobs
            .par_iter()
            .map(|&(seed, method)| self.run_stream(cfg, seed, method))
            .collect::<Result<Vec<StreamOutcome>>>()?;

        let mut rows = Vec::new();
        let mut traces = Vec::new();
        let mut post: Vec<(Method, f64)> = Vec::new();
        for (o, &(_, m)) in outcomes.into_iter().zip(&jobs) {
            rows.extend(o.rows);
            traces.extend(o.traces);
            if let Some(h) = o.heldout_post {
                post.push((m, h));
            }
        }

        let mut summaries: Vec<MethodSummary> = Vec::new();
        for &m in &cfg.methods {
            let rs: Vec<&EpisodeRow> = rows.iter().filter(|r| r.method == m).collect();
            let n = rs.len();
            let successes = rs.iter().filter(|r| r.success).count();
            let posts: Vec<f64> = post.iter().filter(|p| p.0 == m).map(|p| p.1).collect();
            let heldout_pre = if self.heldout.is_empty() {
                None
            } else {
                Some(100.0 * detector_accuracy(self.start_detector(m)?, &self.heldout)?)
            };
            summaries.push(MethodSummary {
                method: m,
                episodes: n,
                successes,
                accuracy: 100.0 * (successes as f64 / n as f64),
                delta_vs_baseline: None,
                mean_sg: rs.iter().map(|r| r.sg as f64).sum::<f64>() / n as f64,
                mean_ee: rs.iter().map(|r| r.ee).sum::<f64>() / n as f64,
                retained_samples: rs.iter().map(|r| r.retained).sum(),
                heldout_pre,
                heldout_post: if posts.is_empty() {
                    heldout_pre
                } else {
                    Some(100.0 * posts.iter().sum::<f64>() / posts.len() as f64)
                },
            });
        }
        if let Some(base) = summaries
            .iter()
            .find(|s| s.method == Method::Baseline)
            .map(|s| s.accuracy)
        {
            for s in &mut summaries {
                s.delta_vs_baseline = Some(s.accuracy - base);
            }
        }
        Ok(RunReport {
            config_hash: cfg.hash(),
            seeds: cfg.seeds.clone(),
            epsilon: cfg.exploration.epsilon,
            strategy: cfg.strategy.name().into(),
            domain: cfg.domain,
            summaries,
            rows,
            traces,
        })
    }

    fn run_stream(
        &self,
        cfg: &BenchmarkConfig,
        seed: u64,
        method: Method,
    ) -> Result<StreamOutcome> {
        let scenes = suite_scenes(cfg, seed)?;
        let mut agent = Agent::new(cfg, method, self.start_detector(method)?.clone())?;
        let mut rows = Vec::with_capacity(scenes.len());
        let mut traces = Vec::new();
        for (i, scene) in scenes.iter().enumerate() {
            let (result, report) =
                agent.episode(scene, derive_seed(seed, EPISODE_STREAM + i as u64))?;
            traces.extend(trace_rows(seed, method, i, &result));
            let mut row = episode_row(
                seed,
                method,
                i,
                &agent.exploration,
                &result,
                agent.pool.len(),
                report,
            );
            row.scene_seed = scene.seed;
            rows.push(row);
        }
        let heldout_post = if method.adapts() && !self.heldout.is_empty() {
            Some(detector_accuracy(&agent.detector, &self.heldout)?)
        } else {
            None
        };
        Ok(StreamOutcome {
            rows,
            traces,
            heldout_post,
        })
    }
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Exploring => "exploring",
        Status::Grasped => "grasped",
        Status::Exhausted => "exhausted",
    }
}

fn action_name(a: Action) -> &'static str {
    match a {
        Action::Grasp => "grasp",
        Action::Explore => "explore",
    }
}

fn episode_row(
    seed: u64,
    method: Method,
    episode: usize,
    cfg: &ExplorationConfig,
    r: &EpisodeResult,
    pool_size: usize,
    report: Option<crate::adaptation::AdaptationReport>,
) -> EpisodeRow {
    let rep = report.unwrap_or(crate::adaptation::AdaptationReport {
        pre_loss: 0.0,
        post_loss: 0.0,
        opnet_loss: 0.0,
        total: 0.0,
        samples: 0,
        pool_growth: 0,
        steps: 0,
        lr: 0.0,
    });
    EpisodeRow {
        seed,
        method,
        episode,
        scene_seed: 0,
        object: r.object_id.clone(),
        family: r.family,
        strategy: r.strategy.name().into(),
        epsilon: cfg.epsilon,
        start_group: r.start_group,
        optimal_observation: r.optimal_observation,
        known: matches!(r.retrieval, Retrieval::Known { .. }),
        status: status_name(r.status).into(),
        sg: r.sg,
        ee: r.ee,
        max_score: r.max_score,
        success: r.success,
        iou: r.judgment.map(|j| j.iou),
        angle_deg: r.judgment.map(|j| j.angle_deg),
        retained: r.retained.len(),
        pool_size,
        l_act_pre: rep.pre_loss,
        l_act_post: rep.post_loss,
        l_know: rep.opnet_loss,
        l_total: rep.total,
    }
}

fn trace_rows(seed: u64, method: Method, episode: usize, r: &EpisodeResult) -> Vec<TraceCsvRow> {
    r.trace
        .iter()
        .enumerate()
        .map(|(step, t)| TraceCsvRow {
            seed,
            method,
            episode,
            step: step + 1,
            viewpoint: t.viewpoint,
            group: t.group,
            candidates: t.candidates,
            feasible: t.feasible,
            passing: t.passing,
            max_score: t.max_score,
            action: action_name(t.action).into(),
        })
        .collect()
}

/// Pretrain once and run the configured benchmark.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<RunReport> {
    Benchmark::prepare(cfg)?.run(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub epsilon: f64,
    pub report: RunReport,
}

/// Repeat the benchmark for each epsilon, changing nothing else. The
/// detectors are trained once and shared.
pub fn sweep_epsilon(cfg: &BenchmarkConfig, values: &[f64]) -> Result<Vec<SweepEntry>> {
    if values.is_empty() {
        return Err(EtaError::Config(
            "epsilon sweep needs at least one value".into(),
        ));
    }
    let bench = Benchmark::prepare(cfg)?;
    values
        .iter()
        .map(|&eps| {
            let mut c = cfg.clone();
            c.exploration.epsilon = eps;
            Ok(SweepEntry {
                epsilon: eps,
                report: bench.run(&c)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub method: Method,
    pub accuracy: f64,
    pub mean_sg: f64,
    pub mean_ee: f64,
    pub retained_samples: usize,
}

pub fn sweep_table(entries: &[SweepEntry]) -> Vec<SweepRow> {
    entries
        .iter()
        .flat_map(|e| {
            e.report.summaries.iter().map(move |s| SweepRow {
                epsilon: e.epsilon,
                method: s.method,
                accuracy: s.accuracy,
                mean_sg: s.mean_sg,
                mean_ee: s.mean_ee,
                retained_samples: s.retained_samples,
            })
        })
        .collect()
}

pub fn sweep_csv(entries: &[SweepEntry]) -> Result<String> {
    csv_string(&sweep_table(entries))
}

/// Per-family success rates for bar charts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub family: Family,
    pub method: Method,
    pub episodes: usize,
    pub successes: usize,
    pub accuracy: f64,
    pub mean_ee: f64,
}

pub fn plot_data(report: &RunReport) -> Vec<PlotRow> {
    plot_rows(&report.rows)
}

/// Group episode rows by family and method, in sorted order of both.
pub fn plot_rows(rows: &[EpisodeRow]) -> Vec<PlotRow> {
    let mut keys: Vec<(Family, Method)> = rows.iter().map(|r| (r.family, r.method)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(family, method)| {
            let rs: Vec<&EpisodeRow> = rows
                .iter()
                .filter(|r| r.family == family && r.method == method)
                .collect();
            let successes = rs.iter().filter(|r| r.success).count();
            PlotRow {
                family,
                method,
                episodes: rs.len(),
                successes,
                accuracy: 100.0 * (successes as f64 / rs.len() as f64),
                mean_ee: rs.iter().map(|r| r.ee).sum::<f64>() / rs.len() as f64,
            }
        })
        .collect()
}

pub fn plot_csv(rows: &[PlotRow]) -> Result<String> {
    csv_string(rows)
}

/// Read per-episode rows back from an `episodes.csv`.
pub fn read_episode_rows(path: impl AsRef<Path>) -> Result<Vec<EpisodeRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<EpisodeRow>, _>>()?)
}
