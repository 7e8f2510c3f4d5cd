//! Python bindings: geometry, scoring, scenes, the learned detector, an
//! adapting agent and the benchmark harness.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use eta_core::assessment::{decide as core_decide, Action, QaParams, ScoredCandidate};
use eta_core::detector::{top_candidate, GraspDetector, ParametricDetector};
use eta_core::geometry::{self, GraspRect, Point2};
use eta_core::harness::{self, BenchmarkConfig, Method};
use eta_core::scene::{render, Family, Scene};
use eta_core::EtaError;

fn py_err(e: EtaError) -> PyErr {
    match e {
        EtaError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPyErr<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPyErr<T> for eta_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(name = "GraspRect", module = "eta_grasp", from_py_object)]
#[derive(Clone, Copy)]
struct PyGraspRect {
    inner: GraspRect,
}

#[pymethods]
impl PyGraspRect {
    #[new]
    #[pyo3(signature = (x, y, w, phi, q = 1.0))]
    fn new(x: f64, y: f64, w: f64, phi: f64, q: f64) -> PyResult<Self> {
        Ok(Self {
            inner: GraspRect::new(x, y, w, phi, q).py()?,
        })
    }

    #[getter]
    fn x(&self) -> f64 {
        self.inner.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.inner.y
    }

    #[getter]
    fn w(&self) -> f64 {
        self.inner.w
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.inner.phi
    }

    #[getter]
    fn q(&self) -> f64 {
        self.inner.q
    }

    /// Corners, counterclockwise.
    fn vertices(&self) -> Vec<(f64, f64)> {
        geometry::rect_vertices(&self.inner)
            .iter()
            .map(|p| (p.x, p.y))
            .collect()
    }

    fn iou(&self, other: &PyGraspRect) -> PyResult<f64> {
        geometry::rect_iou(&self.inner, &other.inner).py()
    }

    fn __repr__(&self) -> String {
        let g = &self.inner;
        format!(
            "GraspRect(x={:.3}, y={:.3}, w={:.3}, phi={:.4}, q={:.3})",
            g.x, g.y, g.w, g.phi, g.q
        )
    }
}

fn rects(v: Vec<GraspRect>) -> Vec<PyGraspRect> {
    v.into_iter().map(|inner| PyGraspRect { inner }).collect()
}

fn unwrap_rects(v: &[PyGraspRect]) -> Vec<GraspRect> {
    v.iter().map(|r| r.inner).collect()
}

#[pyfunction]
fn rect_iou(a: &PyGraspRect, b: &PyGraspRect) -> PyResult<f64> {
    geometry::rect_iou(&a.inner, &b.inner).py()
}

/// Angle between two grasp axes in radians, modulo a half turn.
#[pyfunction]
fn angle_diff(phi_a: f64, phi_b: f64) -> PyResult<f64> {
    geometry::angle_diff(phi_a, phi_b).py()
}

#[pyfunction]
fn convex_hull(points: Vec<(f64, f64)>) -> PyResult<Vec<(f64, f64)>> {
    let pts: Vec<Point2> = points.iter().map(|&(x, y)| Point2::new(x, y)).collect();
    let hull = geometry::convex_hull(&pts).py()?;
    Ok(hull.vertices.iter().map(|p| (p.x, p.y)).collect())
}

#[pyfunction]
#[pyo3(signature = (center_dist_px, w, lambda1 = 90.0, lambda2 = 122.0))]
fn qa_score(center_dist_px: f64, w: f64, lambda1: f64, lambda2: f64) -> f64 {
    QaParams {
        lambda1,
        lambda2,
        ..QaParams::default()
    }
    .score(center_dist_px, w)
}

/// `"grasp"` when `score >= epsilon`, else `"explore"`.
#[pyfunction]
#[pyo3(signature = (score, epsilon = 4.0))]
fn decide(score: Option<f64>, epsilon: f64) -> &'static str {
    let best = score.map(|s| ScoredCandidate {
        grasp: GraspRect {
            x: 0.0,
            y: 0.0,
            w: 0.0,
            phi: 0.0,
            q: 0.0,
        },
        center_dist_px: 0.0,
        score: Some(s),
        passed_primary: true,
    });
    match core_decide(best.as_ref(), epsilon) {
        Action::Grasp => "grasp",
        Action::Explore => "explore",
    }
}

#[pyfunction]
fn ee(sg: usize) -> PyResult<f64> {
    harness::ee(sg).py()
}

/// `(iou, angle_deg, success)` against the best-matching ground truth.
#[pyfunction]
fn judge(pred: &PyGraspRect, gts: Vec<PyGraspRect>) -> PyResult<(f64, f64, bool)> {
    let j = harness::judge(&pred.inner, &unwrap_rects(&gts)).py()?;
    Ok((j.iou, j.angle_deg, j.success))
}

/// Rectangles and warnings from Cornell-format text.
#[pyfunction]
fn parse_cornell(text: &str) -> (Vec<PyGraspRect>, Vec<String>) {
    let p = harness::parse_cornell_str(text);
    (rects(p.rects), p.warnings)
}

#[pyfunction]
fn read_cornell(path: &str) -> PyResult<(Vec<PyGraspRect>, Vec<String>)> {
    let p = harness::parse_cornell_rects(path).py()?;
    Ok((rects(p.rects), p.warnings))
}

#[pyfunction]
fn format_cornell(rects: Vec<PyGraspRect>) -> String {
    harness::format_cornell_rects(&unwrap_rects(&rects))
}

/// Benchmark configuration. Construct from TOML text or use the defaults.
#[pyclass(name = "Config", module = "eta_grasp", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: BenchmarkConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => BenchmarkConfig::from_toml_str(t).py()?,
            None => BenchmarkConfig::default(),
        };
        Ok(Self { inner })
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[setter]
    fn set_seeds(&mut self, seeds: Vec<u64>) {
        self.inner.seeds = seeds;
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.exploration.epsilon
    }

    #[setter]
    fn set_epsilon(&mut self, eps: f64) {
        self.inner.exploration.epsilon = eps;
    }

    #[getter]
    fn methods(&self) -> Vec<&'static str> {
        self.inner.methods.iter().map(|m| m.name()).collect()
    }

    #[setter]
    fn set_methods(&mut self, names: Vec<String>) -> PyResult<()> {
        self.inner.methods = names
            .iter()
            .map(|n| n.parse::<Method>())
            .collect::<eta_core::Result<_>>()
            .py()?;
        Ok(())
    }

    #[getter]
    fn objects_per_family(&self) -> usize {
        self.inner.objects_per_family
    }

    #[setter]
    fn set_objects_per_family(&mut self, n: usize) {
        self.inner.objects_per_family = n;
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().py()
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().py()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }
}

fn config_or_default(cfg: Option<&PyConfig>) -> BenchmarkConfig {
    cfg.map_or_else(BenchmarkConfig::default, |c| c.inner.clone())
}

#[pyclass(name = "Scene", module = "eta_grasp", from_py_object)]
#[derive(Clone)]
struct PyScene {
    inner: Scene,
}

#[pymethods]
impl PyScene {
    /// A single target-domain object of `family` under the benchmark camera.
    #[staticmethod]
    #[pyo3(signature = (family, seed, config = None))]
    fn generate(family: &str, seed: u64, config: Option<&PyConfig>) -> PyResult<Self> {
        let fam: Family = family.parse().py()?;
        let inner = harness::target_scene(&config_or_default(config), fam, seed).py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Scene::from_json(text).py()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.target().category.name()
    }

    #[getter]
    fn object_id(&self) -> String {
        self.inner.target().id.clone()
    }

    #[getter]
    fn optimal_observation(&self) -> usize {
        self.inner.target().optimal_observation
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn num_viewpoints(&self) -> usize {
        self.inner.trajectory.len()
    }

    fn group_of(&self, t: usize) -> PyResult<usize> {
        if t >= self.inner.trajectory.len() {
            return Err(PyValueError::new_err(format!("viewpoint {t} out of range")));
        }
        Ok(self.inner.trajectory.group_of(t))
    }

    /// Ground-truth grasps in the pixel frame of viewpoint `t`.
    fn gt_grasps(&self, t: usize) -> PyResult<Vec<PyGraspRect>> {
        let cam = self.inner.camera_for(t).py()?;
        Ok(rects(self.inner.target().gt_in_view(&cam)))
    }

    /// Rendered depth image of viewpoint `t`, row-major, millimetres.
    fn depth(&self, t: usize) -> PyResult<Vec<Vec<f64>>> {
        let obs = render(&self.inner, t).py()?;
        Ok((0..obs.depth.height())
            .map(|r| obs.depth.row(r).to_vec())
            .collect())
    }
}

#[pyclass(name = "Detector", module = "eta_grasp", from_py_object)]
#[derive(Clone)]
struct PyDetector {
    inner: ParametricDetector,
}

#[pymethods]
impl PyDetector {
    /// Pretrain as the benchmark would for `config`.
    #[staticmethod]
    #[pyo3(signature = (config = None))]
    fn pretrained(config: Option<&PyConfig>) -> PyResult<Self> {
        let (inner, _) = harness::pretrain_detector(&config_or_default(config)).py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ParametricDetector::load(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).py()
    }

    #[getter]
    fn num_weights(&self) -> usize {
        self.inner.weights().len()
    }

    /// The `top_n` highest-quality candidates of viewpoint `t`, best first.
    #[pyo3(signature = (scene, t, top_n = 10))]
    fn predict(&self, scene: &PyScene, t: usize, top_n: usize) -> PyResult<Vec<PyGraspRect>> {
        let obs = render(&scene.inner, t).py()?;
        let mut set = self.inner.predict(&obs).top_n(top_n);
        set.candidates.sort_by(|a, b| b.q.total_cmp(&a.q));
        Ok(rects(set.candidates))
    }

    fn top_candidate(&self, scene: &PyScene, t: usize) -> PyResult<PyGraspRect> {
        let obs = render(&scene.inner, t).py()?;
        Ok(PyGraspRect {
            inner: top_candidate(&self.inner.predict(&obs)).py()?,
        })
    }

    /// Fraction of viewpoints whose top candidate is a success.
    fn accuracy(&self, scenes: Vec<PyScene>) -> PyResult<f64> {
        let s: Vec<Scene> = scenes.into_iter().map(|s| s.inner).collect();
        harness::detector_accuracy(&self.inner, &s).py()
    }
}

/// Detector, knowledge pool and OPNet carried across episodes.
#[pyclass(name = "Agent", module = "eta_grasp")]
struct PyAgent {
    inner: harness::Agent,
}

#[pymethods]
impl PyAgent {
    #[new]
    #[pyo3(signature = (detector, config = None, method = "eta_multi"))]
    fn new(detector: &PyDetector, config: Option<&PyConfig>, method: &str) -> PyResult<Self> {
        let m: Method = method.parse().py()?;
        let cfg = config_or_default(config);
        Ok(Self {
            inner: harness::Agent::new(&cfg, m, detector.inner.clone()).py()?,
        })
    }

    #[getter]
    fn pool_size(&self) -> usize {
        self.inner.pool.len()
    }

    #[getter]
    fn detector(&self) -> PyDetector {
        PyDetector {
            inner: self.inner.detector.clone(),
        }
    }

    /// Observation group the next episode on `scene` would start from.
    fn initial_observation(&self, scene: &PyScene) -> PyResult<usize> {
        Ok(self.inner.initial_observation(&scene.inner).py()?.group)
    }

    /// Run one episode (and adapt, for adapting methods).
    fn episode<'py>(
        &mut self,
        py: Python<'py>,
        scene: &PyScene,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let (r, report) = self.inner.episode(&scene.inner, seed).py()?;
        let d = PyDict::new(py);
        d.set_item("object", r.object_id)?;
        d.set_item("family", r.family.name())?;
        d.set_item("start_group", r.start_group)?;
        d.set_item("optimal_observation", r.optimal_observation)?;
        d.set_item("status", format!("{:?}", r.status).to_lowercase())?;
        d.set_item("success", r.success)?;
        d.set_item("sg", r.sg)?;
        d.set_item("ee", r.ee)?;
        d.set_item("max_score", r.max_score)?;
        d.set_item("retained", r.retained.len())?;
        d.set_item("grasp", r.chosen.map(|c| PyGraspRect { inner: c.grasp }))?;
        d.set_item("viewpoint", r.chosen.map(|c| c.viewpoint))?;
        d.set_item("iou", r.judgment.map(|j| j.iou))?;
        d.set_item("angle_deg", r.judgment.map(|j| j.angle_deg))?;
        if let Some(rep) = report {
            d.set_item("l_act_pre", rep.pre_loss)?;
            d.set_item("l_act_post", rep.post_loss)?;
            d.set_item("l_know", rep.opnet_loss)?;
        }
        Ok(d)
    }
}

#[pyclass(name = "Report", module = "eta_grasp")]
struct PyReport {
    inner: harness::RunReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn config_hash(&self) -> String {
        self.inner.config_hash.clone()
    }

    fn accuracy(&self, method: &str) -> PyResult<Option<f64>> {
        let m: Method = method.parse().py()?;
        Ok(self.inner.accuracy(m))
    }

    fn summary_json(&self) -> PyResult<String> {
        self.inner.summary_json().py()
    }

    fn episodes_csv(&self) -> PyResult<String> {
        self.inner.episodes_csv().py()
    }

    fn plot_csv(&self) -> PyResult<String> {
        harness::plot_csv(&harness::plot_data(&self.inner)).py()
    }

    /// Write episodes.csv, traces.csv and summary.json into `dir`.
    fn write(&self, dir: &str) -> PyResult<()> {
        self.inner.write_to(dir).py()
    }
}

#[pyfunction]
#[pyo3(signature = (config = None))]
fn run_benchmark(py: Python<'_>, config: Option<&PyConfig>) -> PyResult<PyReport> {
    let cfg = config_or_default(config);
    let inner = py.detach(|| harness::run_benchmark(&cfg)).py()?;
    Ok(PyReport { inner })
}

/// Comparison table (CSV) of a sweep over `values`.
#[pyfunction]
#[pyo3(signature = (config = None, values = vec![3.0, 4.0, 5.0]))]
fn sweep_epsilon(py: Python<'_>, config: Option<&PyConfig>, values: Vec<f64>) -> PyResult<String> {
    let cfg = config_or_default(config);
    let entries = py.detach(|| harness::sweep_epsilon(&cfg, &values)).py()?;
    harness::sweep_csv(&entries).py()
}

#[pymodule]
fn eta_grasp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraspRect>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyDetector>()?;
    m.add_class::<PyAgent>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(rect_iou, m)?)?;
    m.add_function(wrap_pyfunction!(angle_diff, m)?)?;
    m.add_function(wrap_pyfunction!(convex_hull, m)?)?;
    m.add_function(wrap_pyfunction!(qa_score, m)?)?;
    m.add_function(wrap_pyfunction!(decide, m)?)?;
    m.add_function(wrap_pyfunction!(ee, m)?)?;
    m.add_function(wrap_pyfunction!(judge, m)?)?;
    m.add_function(wrap_pyfunction!(parse_cornell, m)?)?;
    m.add_function(wrap_pyfunction!(read_cornell, m)?)?;
    m.add_function(wrap_pyfunction!(format_cornell, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_epsilon, m)?)?;
    Ok(())
}
