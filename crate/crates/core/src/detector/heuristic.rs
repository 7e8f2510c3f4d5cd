use std::collections::VecDeque;

use super::features::height_map;
use super::{GraspDetector, GraspSet};
use crate::geometry::{convex_hull, min_width, polygon_centroid, wrap_half_pi, GraspRect, Point2};
use crate::grid::Grid;
use crate::scene::{ObjectInstance, Observation};

/// Geometric baseline: one grasp across the narrowest direction of the
/// raised blob nearest the image center.
#[derive(Debug, Clone, Copy)]
pub struct HeuristicDetector {
    pub height_threshold_mm: f64,
    pub margin_px: f64,
}

impl Default for HeuristicDetector {
    fn default() -> Self {
        Self {
            height_threshold_mm: 4.0,
            margin_px: 8.0,
        }
    }
}

fn component_near_center(occ: &Grid<bool>) -> Vec<Point2> {
    let (w, h) = (occ.width(), occ.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let Some((sc, sr, _)) = occ.iter_indexed().filter(|(_, _, &o)| o).min_by(|a, b| {
        let da = (a.0 as f64 - cx).hypot(a.1 as f64 - cy);
        let db = (b.0 as f64 - cx).hypot(b.1 as f64 - cy);
        da.total_cmp(&db)
    }) else {
        return Vec::new();
    };
    let mut seen = Grid::filled(w, h, false);
    let mut queue = VecDeque::from([(sc, sr)]);
    *seen.get_mut(sc, sr) = true;
    let mut pts = Vec::new();
    while let Some((c, r)) = queue.pop_front() {
        pts.push(Point2::new(c as f64, r as f64));
        let next = [
            (c.wrapping_sub(1), r),
            (c + 1, r),
            (c, r.wrapping_sub(1)),
            (c, r + 1),
        ];
        for (nc, nr) in next {
            if nc < w && nr < h && *occ.get(nc, nr) && !*seen.get(nc, nr) {
                *seen.get_mut(nc, nr) = true;
                queue.push_back((nc, nr));
            }
        }
    }
    pts
}

impl GraspDetector for HeuristicDetector {
    fn predict(&self, obs: &Observation) -> GraspSet {
        let hm = height_map(&obs.depth);
        let occ = Grid::from_vec(
            hm.width(),
            hm.height(),
            hm.as_slice()
                .iter()
                .map(|&z| z > self.height_threshold_mm)
                .collect(),
        )
        .expect("shape preserved");
        let pts = component_near_center(&occ);
        let candidates = convex_hull(&pts)
            .ok()
            .and_then(|hull| {
                let c = polygon_centroid(&hull).ok()?;
                let (width, dir) = min_width(&hull);
                Some(GraspRect {
                    x: c.x,
                    y: c.y,
                    w: width + self.margin_px,
                    phi: wrap_half_pi(dir.y.atan2(dir.x)),
                    q: 1.0,
                })
            })
            .into_iter()
            .collect();
        GraspSet {
            candidates,
            source_viewpoint: obs.viewpoint_index,
        }
    }
}

/// Returns the labelled grasps of one object as seen from each viewpoint.
#[derive(Debug, Clone)]
pub struct GroundTruthDetector {
    object: ObjectInstance,
}

impl GroundTruthDetector {
    pub fn new(object: ObjectInstance) -> Self {
        Self { object }
    }
}

impl GraspDetector for GroundTruthDetector {
    fn predict(&self, obs: &Observation) -> GraspSet {
        GraspSet {
            candidates: self.object.gt_in_view(&obs.camera),
            source_viewpoint: obs.viewpoint_index,
        }
    }
}
