//! Embodied self-assessment of grasp candidates: the gripper/camera/
//! workspace filter, the two hard geometric gates, the quality score and
//! the grasp-or-explore decision.

use serde::{Deserialize, Serialize};

use crate::detector::GraspSet;
use crate::error::{EtaError, Result};
use crate::geometry::{point_in_polygon, polygon_centroid, rect_vertices, GraspRect, Polygon};
use crate::grid::Grid;
use crate::scene::CameraModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbodiedParams {
    /// Maximum opening of the physical gripper.
    pub w_max_mm: f64,
    /// Image scale used to convert gripper limits to pixels.
    pub scale_px_per_mm: f64,
    pub cl_min_mm: f64,
    pub cl_max_mm: f64,
    pub workspace_center_mm: [f64; 3],
    pub workspace_radius_mm: f64,
}

impl Default for EmbodiedParams {
    fn default() -> Self {
        Self {
            w_max_mm: 140.0,
            scale_px_per_mm: 2.0,
            cl_min_mm: 300.0,
            cl_max_mm: 1000.0,
            workspace_center_mm: [0.0, 0.0, 0.0],
            workspace_radius_mm: 250.0,
        }
    }
}

impl EmbodiedParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_max_mm > 0.0 && self.scale_px_per_mm > 0.0) {
            return Err(EtaError::Config(
                "gripper width and scale must be positive".into(),
            ));
        }
        if !(0.0 < self.cl_min_mm && self.cl_min_mm < self.cl_max_mm) {
            return Err(EtaError::Config("need 0 < cl_min_mm < cl_max_mm".into()));
        }
        if !(self.workspace_radius_mm > 0.0) {
            return Err(EtaError::Config("workspace radius must be positive".into()));
        }
        Ok(())
    }

    pub fn w_max_px(&self) -> f64 {
        self.w_max_mm * self.scale_px_per_mm
    }

    /// Admissible image-frame opening widths: a tenth to a quarter of the
    /// gripper's maximum.
    pub fn width_range_px(&self) -> (f64, f64) {
        (self.w_max_px() / 10.0, self.w_max_px() / 4.0)
    }
}

/// Gripper width, camera depth range and reachability of the back-projected
/// grasp center.
pub fn passes_embodied(
    g: &GraspRect,
    depth: &Grid<f64>,
    camera: &CameraModel,
    params: &EmbodiedParams,
) -> bool {
    let (lo, hi) = params.width_range_px();
    if !(lo..=hi).contains(&g.w) {
        return false;
    }
    let Some(&z) = depth.at(g.x, g.y) else {
        return false;
    };
    if !(params.cl_min_mm..=params.cl_max_mm).contains(&z) {
        return false;
    }
    let p = camera.back_project(g.center(), z);
    let c = params.workspace_center_mm;
    let d2 = (0..3).map(|i| (p[i] - c[i]).powi(2)).sum::<f64>();
    d2 <= params.workspace_radius_mm.powi(2)
}

/// Candidates meeting the robot's embodied limits. May be empty.
pub fn filter_embodied(
    set: &GraspSet,
    depth: &Grid<f64>,
    camera: &CameraModel,
    params: &EmbodiedParams,
) -> GraspSet {
    GraspSet {
        candidates: set
            .candidates
            .iter()
            .filter(|g| passes_embodied(g, depth, camera, params))
            .copied()
            .collect(),
        source_viewpoint: set.source_viewpoint,
    }
}

/// The two hard gates: the center lands on the object mask, and no corner
/// of the rectangle lands on the object's convex hull.
pub fn passes_primary(g: &GraspRect, mask: &Grid<bool>, hull: &Polygon) -> bool {
    center_in_mask(g, mask) && vertices_clear(g, hull)
}

pub fn center_in_mask(g: &GraspRect, mask: &Grid<bool>) -> bool {
    mask.at(g.x, g.y).copied().unwrap_or(false)
}

pub fn vertices_clear(g: &GraspRect, hull: &Polygon) -> bool {
    rect_vertices(g).iter().all(|&v| !point_in_polygon(v, hull))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QaParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub dist_floor_px: f64,
    pub width_floor_px: f64,
}

impl Default for QaParams {
    fn default() -> Self {
        Self {
            lambda1: 90.0,
            lambda2: 122.0,
            dist_floor_px: 1.0,
            width_floor_px: 1.0,
        }
    }
}

impl QaParams {
    /// `lambda1 / dist + lambda2 / |w|` with both denominators floored.
    pub fn score(&self, center_dist_px: f64, w: f64) -> f64 {
        self.lambda1 / center_dist_px.max(self.dist_floor_px)
            + self.lambda2 / w.abs().max(self.width_floor_px)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub grasp: GraspRect,
    pub center_dist_px: f64,
    /// Present only when both gates passed.
    pub score: Option<f64>,
    pub passed_primary: bool,
}

/// Score every candidate against the object region.
pub fn qa_score(
    set: &GraspSet,
    mask: &Grid<bool>,
    hull: &Polygon,
    params: &QaParams,
) -> Result<Vec<ScoredCandidate>> {
    let centroid = polygon_centroid(hull)?;
    Ok(set
        .candidates
        .iter()
        .map(|g| {
            let center_dist_px = g.center().dist(centroid);
            let passed = passes_primary(g, mask, hull);
            ScoredCandidate {
                grasp: *g,
                center_dist_px,
                score: passed.then(|| params.score(center_dist_px, g.w)),
                passed_primary: passed,
            }
        })
        .collect())
}

/// Highest-scoring passing candidate; ties resolve to the earliest.
pub fn best_passing(scored: &[ScoredCandidate]) -> Option<&ScoredCandidate> {
    let mut best: Option<&ScoredCandidate> = None;
    for c in scored {
        if let Some(s) = c.score {
            if best.is_none_or(|b| s > b.score.unwrap_or(f64::NEG_INFINITY)) {
                best = Some(c);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Grasp,
    Explore,
}

pub fn decide(best: Option<&ScoredCandidate>, epsilon: f64) -> Action {
    match best.and_then(|b| b.score) {
        Some(s) if s >= epsilon => Action::Grasp,
        _ => Action::Explore,
    }
}
