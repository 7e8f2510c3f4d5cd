//! Hand-crafted per-cell descriptors computed from the depth and intensity
//! images only (the detector never sees the segmentation mask).

use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::grid::{Grid, Integral};
use crate::scene::Observation;

pub const FEATURE_DIM: usize = 16;
pub const FEATURE_SET: &str = "eta-cell-v1";

/// Heights above this count as object surface, millimetres.
const OCCUPANCY_MM: f64 = 4.0;
const R_SMALL: i64 = 4;
const R_MEDIUM: i64 = 16;
const R_LARGE: i64 = 32;

pub type CellFeatures = [f64; FEATURE_DIM];

/// Coarse layout of prediction cells over the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGrid {
    pub rows: usize,
    pub cols: usize,
    pub cell_px: usize,
}

impl CellGrid {
    pub fn for_resolution(resolution: usize, cell_px: usize) -> Self {
        Self {
            rows: resolution / cell_px,
            cols: resolution / cell_px,
            cell_px,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extent(&self) -> (f64, f64) {
        (
            (self.cols * self.cell_px) as f64,
            (self.rows * self.cell_px) as f64,
        )
    }

    pub fn center(&self, cell: usize) -> Point2 {
        let (r, c) = (cell / self.cols, cell % self.cols);
        let half = (self.cell_px as f64 - 1.0) / 2.0;
        Point2::new(
            (c * self.cell_px) as f64 + half,
            (r * self.cell_px) as f64 + half,
        )
    }

    /// Cell whose center is closest to `p`, or `None` outside the covered area.
    pub fn nearest(&self, p: Point2) -> Option<usize> {
        let (wx, wy) = self.extent();
        if !(p.x >= -0.5 && p.y >= -0.5 && p.x < wx - 0.5 && p.y < wy - 0.5) {
            return None;
        }
        let c = (((p.x + 0.5) / self.cell_px as f64).floor() as usize).min(self.cols - 1);
        let r = (((p.y + 0.5) / self.cell_px as f64).floor() as usize).min(self.rows - 1);
        Some(r * self.cols + c)
    }
}

/// Depth relative to the farthest point of the same image row. The table
/// plane has constant depth along a row, so this is the height above it.
pub fn height_map(depth: &Grid<f64>) -> Grid<f64> {
    let (w, h) = (depth.width(), depth.height());
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        let row = depth.row(r);
        let far = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.extend(row.iter().map(|&d| (far - d).max(0.0)));
    }
    Grid::from_vec(w, h, out).expect("shape preserved")
}

struct Tables {
    occ: Integral,
    ox: Integral,
    oy: Integral,
    oxx: Integral,
    oyy: Integral,
    oxy: Integral,
    height: Integral,
    grad: Integral,
    int: Integral,
    int2: Integral,
}

impl Tables {
    fn new(obs: &Observation) -> Self {
        let hm = height_map(&obs.depth);
        let (w, h) = (hm.width(), hm.height());
        let occ = |c: usize, r: usize| {
            if *hm.get(c, r) > OCCUPANCY_MM {
                1.0
            } else {
                0.0
            }
        };
        let grad = |c: usize, r: usize| {
            let gx = *hm.get((c + 1).min(w - 1), r) - *hm.get(c.saturating_sub(1), r);
            let gy = *hm.get(c, (r + 1).min(h - 1)) - *hm.get(c, r.saturating_sub(1));
            0.5 * gx.hypot(gy)
        };
        let i = &obs.intensity;
        Self {
            occ: Integral::new(w, h, occ),
            ox: Integral::new(w, h, |c, r| occ(c, r) * c as f64),
            oy: Integral::new(w, h, |c, r| occ(c, r) * r as f64),
            oxx: Integral::new(w, h, |c, r| occ(c, r) * (c * c) as f64),
            oyy: Integral::new(w, h, |c, r| occ(c, r) * (r * r) as f64),
            oxy: Integral::new(w, h, |c, r| occ(c, r) * (c * r) as f64),
            height: Integral::new(w, h, |c, r| *hm.get(c, r)),
            grad: Integral::new(w, h, grad),
            int: Integral::new(w, h, |c, r| *i.get(c, r)),
            int2: Integral::new(w, h, |c, r| i.get(c, r).powi(2)),
        }
    }

    fn sum(t: &Integral, c: i64, r: i64, rad: i64) -> (f64, usize) {
        t.box_sum(c - rad, r - rad, c + rad, r + rad)
    }

    fn mean(t: &Integral, c: i64, r: i64, rad: i64) -> f64 {
        let (s, n) = Self::sum(t, c, r, rad);
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }

    /// Occupancy, centrality, doubled-angle orientation and relative
    /// minor-axis extent of the occupied pixels in a square window.
    fn shape(&self, c: i64, r: i64, rad: i64) -> (f64, f64, f64, f64, f64) {
        let (n, area) = Self::sum(&self.occ, c, r, rad);
        if n < 1.0 || area == 0 {
            return (0.0, 0.0, 0.0, 0.0, 0.0);
        }
        let mx = Self::sum(&self.ox, c, r, rad).0 / n;
        let my = Self::sum(&self.oy, c, r, rad).0 / n;
        let mu20 = Self::sum(&self.oxx, c, r, rad).0 / n - mx * mx;
        let mu02 = Self::sum(&self.oyy, c, r, rad).0 / n - my * my;
        let mu11 = Self::sum(&self.oxy, c, r, rad).0 / n - mx * my;
        let off = (mx - c as f64).hypot(my - r as f64) / rad as f64;
        let centrality = 1.0 - off.min(1.0);
        let tr = mu20 + mu02;
        let (c2, s2) = if tr > 1e-9 {
            ((mu20 - mu02) / tr, 2.0 * mu11 / tr)
        } else {
            (0.0, 0.0)
        };
        // A uniform strip of thickness t has variance t^2 / 12 across it.
        let minor = (tr / 2.0 - ((mu20 - mu02) / 2.0).hypot(mu11)).max(0.0);
        let extent = ((12.0 * minor).sqrt() / (2 * rad + 1) as f64).min(1.0);
        (n / area as f64, centrality, c2, s2, extent)
    }
}

/// One descriptor per cell, in cell order.
pub fn cell_features(obs: &Observation, grid: &CellGrid) -> Vec<CellFeatures> {
    let t = Tables::new(obs);
    (0..grid.len())
        .map(|cell| {
            let p = grid.center(cell);
            let (c, r) = (p.x.round() as i64, p.y.round() as i64);
            let (occ_s, _, _, _, _) = t.shape(c, r, R_SMALL);
            let (occ_m, cen_m, c2_m, s2_m, ext_m) = t.shape(c, r, R_MEDIUM);
            let (occ_l, cen_l, c2_l, s2_l, ext_l) = t.shape(c, r, R_LARGE);
            let mean_i = Tables::mean(&t.int, c, r, R_SMALL);
            let var_i = Tables::mean(&t.int2, c, r, R_MEDIUM)
                - Tables::mean(&t.int, c, r, R_MEDIUM).powi(2);
            [
                1.0,
                occ_s,
                occ_m,
                occ_l,
                Tables::mean(&t.height, c, r, R_SMALL) / 50.0,
                cen_m,
                cen_l,
                c2_m,
                s2_m,
                c2_l,
                s2_l,
                (Tables::mean(&t.grad, c, r, R_SMALL) / 10.0).min(1.0),
                mean_i,
                var_i.max(0.0).sqrt(),
                ext_m,
                ext_l,
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_trajectory, CameraConfig, CameraModel};

    fn flat_obs() -> Observation {
        let cfg = CameraConfig::default();
        let traj = build_trajectory(16, 4, 500.0, cfg.elevation, cfg.group_spread).unwrap();
        Observation {
            intensity: Grid::filled(224, 224, 0.3),
            depth: Grid::filled(224, 224, 500.0),
            mask: Grid::filled(224, 224, false),
            viewpoint_index: 0,
            camera: CameraModel::new(&traj.viewpoints[0], &cfg),
        }
    }

    #[test]
    fn flat_image_gives_identical_cells() {
        let grid = CellGrid::for_resolution(224, 8);
        let f = cell_features(&flat_obs(), &grid);
        assert_eq!(f.len(), 28 * 28);
        for x in &f {
            for (i, (a, b)) in x.iter().zip(&f[0]).enumerate() {
                assert!((a - b).abs() < 1e-6, "feature {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn nearest_cell_assignment() {
        let grid = CellGrid::for_resolution(224, 8);
        assert_eq!(grid.nearest(grid.center(37)), Some(37));
        assert_eq!(grid.nearest(Point2::new(0.0, 0.0)), Some(0));
        assert_eq!(
            grid.nearest(Point2::new(223.0, 223.0)),
            Some(grid.len() - 1)
        );
        assert_eq!(grid.nearest(Point2::new(-3.0, 10.0)), None);
        assert_eq!(grid.nearest(Point2::new(10.0, 224.0)), None);
    }

    #[test]
    fn orientation_features_follow_a_bar() {
        let mut obs = flat_obs();
        // Horizontal bar, 16 rows thick, raised 20 mm.
        for r in 100..116 {
            for c in 40..180 {
                *obs.depth.get_mut(c, r) = 480.0;
            }
        }
        let grid = CellGrid::for_resolution(224, 8);
        let cell = grid.nearest(Point2::new(111.5, 107.5)).unwrap();
        let f = cell_features(&obs, &grid)[cell];
        assert!(f[1] > 0.9, "small window fully occupied");
        assert!(f[9] > 0.8, "principal axis along columns: {}", f[9]);
        assert!(f[10].abs() < 0.05);
    }
}
