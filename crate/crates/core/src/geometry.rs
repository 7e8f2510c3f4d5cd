//! Oriented grasp rectangles and the small amount of planar polygon
//! geometry the rest of the pipeline needs: convex hulls, centroids,
//! closed point-in-polygon tests and exact convex clipping for IoU.
//!
//! Everything here is expressed in pixel coordinates `(x = column, y = row)`.
//! "Counterclockwise" means positive shoelace area in that frame.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{EtaError, Result};

const ANGLE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// z-component of `(a - o) x (b - o)`.
#[inline]
pub fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// A parallel-jaw grasp: center `(x, y)`, opening width `w` along the
/// closing axis at angle `phi`, and a quality score `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub phi: f64,
    pub q: f64,
}

impl GraspRect {
    pub fn new(x: f64, y: f64, w: f64, phi: f64, q: f64) -> Result<Self> {
        let g = Self { x, y, w, phi, q };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.w, self.phi, self.q]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(EtaError::InvalidGrasp("non-finite field".into()));
        }
        if self.w < 0.0 {
            return Err(EtaError::InvalidGrasp(format!("negative width {}", self.w)));
        }
        if self.phi.abs() > FRAC_PI_2 + ANGLE_SLACK {
            return Err(EtaError::InvalidGrasp(format!(
                "phi {} out of range",
                self.phi
            )));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(EtaError::InvalidGrasp(format!(
                "quality {} out of range",
                self.q
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Extent along the jaw axis. Fixed at half the opening width.
    pub fn height(&self) -> f64 {
        self.w / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.height()
    }

    pub fn with_quality(mut self, q: f64) -> Self {
        self.q = q;
        self
    }
}

/// Wrap an angle onto the grasp-angle interval `[-pi/2, pi/2]`.
pub fn wrap_half_pi(mut a: f64) -> f64 {
    a %= PI;
    if a > FRAC_PI_2 {
        a -= PI;
    } else if a < -FRAC_PI_2 {
        a += PI;
    }
    a
}

/// Corners of the grasp rectangle, counterclockwise, starting at
/// `center - (w/2) u - (h/2) v` where `u` is the closing axis.
pub fn rect_vertices(g: &GraspRect) -> [Point2; 4] {
    let (s, c) = g.phi.sin_cos();
    let u = Point2::new(c, s) * (g.w / 2.0);
    let v = Point2::new(-s, c) * (g.height() / 2.0);
    let o = g.center();
    [o - u - v, o + u - v, o + u + v, o - u + v]
}

/// A simple polygon, vertices in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        if vertices.len() < 3 || vertices.iter().any(|p| !p.is_finite()) {
            return Err(EtaError::DegeneratePolygon);
        }
        Ok(Self { vertices })
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| self.vertices[i].dist(self.vertices[(i + 1) % n]))
            .sum()
    }

    /// Copy with counterclockwise orientation.
    pub fn to_ccw(&self) -> Polygon {
        let mut vertices = self.vertices.clone();
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        Polygon { vertices }
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn bbox(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }
}

pub fn signed_area(pts: &[Point2]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    a / 2.0
}

/// Minimum angular distance between two grasp angles. Grasps are symmetric
/// under a half turn, so the difference is taken modulo pi.
pub fn angle_diff(phi_a: f64, phi_b: f64) -> Result<f64> {
    for a in [phi_a, phi_b] {
        if !a.is_finite() || a.abs() > FRAC_PI_2 + ANGLE_SLACK {
            return Err(EtaError::AngleOutOfRange(a));
        }
    }
    let d = phi_a - phi_b;
    Ok([d - PI, d, d + PI]
        .into_iter()
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min)
        .min(FRAC_PI_2))
}

/// Andrew's monotone chain. Collinear boundary points are dropped, so the
/// result holds only strict corners, counterclockwise.
pub fn convex_hull(points: &[Point2]) -> Result<Polygon> {
    let mut pts: Vec<Point2> = points.iter().copied().filter(|p| p.is_finite()).collect();
    if pts.len() < 3 {
        return Err(EtaError::DegeneratePointSet);
    }
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Err(EtaError::DegeneratePointSet);
    }

    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();

    if hull.len() < 3 {
        return Err(EtaError::DegeneratePointSet);
    }
    Ok(Polygon { vertices: hull })
}

/// Area-weighted centroid.
pub fn polygon_centroid(p: &Polygon) -> Result<Point2> {
    let n = p.vertices.len();
    let a = p.signed_area();
    let (lo, hi) = p.bbox();
    let scale = (hi.x - lo.x).max(hi.y - lo.y).max(1.0);
    if n < 3 || a.abs() <= 1e-12 * scale * scale {
        return Err(EtaError::DegeneratePolygon);
    }
    // Shift to the first vertex to limit cancellation.
    let o = p.vertices[0];
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let pi = p.vertices[i] - o;
        let pj = p.vertices[(i + 1) % n] - o;
        let c = pi.x * pj.y - pj.x * pi.y;
        cx += (pi.x + pj.x) * c;
        cy += (pi.y + pj.y) * c;
    }
    Ok(Point2::new(o.x + cx / (6.0 * a), o.y + cy / (6.0 * a)))
}

fn on_segment(pt: Point2, a: Point2, b: Point2) -> bool {
    let len = a.dist(b);
    let tol = 1e-9 * len.max(1.0);
    if cross(a, b, pt).abs() > tol * len.max(1.0) {
        return false;
    }
    let dot = (pt.x - a.x) * (b.x - a.x) + (pt.y - a.y) * (b.y - a.y);
    dot >= -tol && dot <= len * len + tol
}

/// Closed containment test: boundary points count as inside.
pub fn point_in_polygon(pt: Point2, p: &Polygon) -> bool {
    if p.edges().any(|(a, b)| on_segment(pt, a, b)) {
        return true;
    }
    let mut inside = false;
    for (a, b) in p.edges() {
        if (a.y > pt.y) != (b.y > pt.y) {
            let x = a.x + (pt.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if pt.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Clip `subject` by the convex, counterclockwise `clip` polygon.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut out = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut out);
        let m = input.len();
        for j in 0..m {
            let s = input[j];
            let e = input[(j + 1) % m];
            let ds = cross(a, b, s);
            let de = cross(a, b, e);
            let s_in = ds >= 0.0;
            let e_in = de >= 0.0;
            if s_in != e_in {
                let t = ds / (ds - de);
                out.push(s + (e - s) * t);
            }
            if e_in {
                out.push(e);
            }
        }
    }
    out
}

/// Jaccard index of two grasp rectangles by exact convex clipping.
pub fn rect_iou(a: &GraspRect, b: &GraspRect) -> Result<f64> {
    let area_a = a.area();
    let area_b = b.area();
    if area_a <= 0.0 || area_b <= 0.0 {
        if area_a <= 0.0 && area_b <= 0.0 && rect_vertices(a) == rect_vertices(b) {
            return Err(EtaError::DegenerateRectangles);
        }
        return Ok(0.0);
    }
    let va = rect_vertices(a);
    let vb = rect_vertices(b);
    if va == vb {
        return Ok(1.0);
    }
    let inter = signed_area(&clip_convex(&va, &vb)).abs();
    let union = area_a + area_b - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Minimum caliper width of a convex polygon. Returns the width and the
/// unit direction along which it is measured (the normal of the supporting
/// edge), i.e. the closing direction of the narrowest parallel-jaw grip.
pub fn min_width(hull: &Polygon) -> (f64, Point2) {
    let mut best = (f64::INFINITY, Point2::new(1.0, 0.0));
    for (a, b) in hull.edges() {
        let len = a.dist(b);
        if len <= 0.0 {
            continue;
        }
        let w = hull
            .vertices
            .iter()
            .map(|&p| cross(a, b, p).abs() / len)
            .fold(0.0, f64::max);
        if w < best.0 {
            let d = b - a;
            best = (w, Point2::new(-d.y / len, d.x / len));
        }
    }
    best
}

/// Parameter intervals where the line `origin + t * dir` lies inside `p`.
pub fn line_intervals(p: &Polygon, origin: Point2, dir: Point2) -> Vec<(f64, f64)> {
    let mut ts = Vec::new();
    let normal = Point2::new(-dir.y, dir.x);
    for (a, b) in p.edges() {
        let da = (a.x - origin.x) * normal.x + (a.y - origin.y) * normal.y;
        let db = (b.x - origin.x) * normal.x + (b.y - origin.y) * normal.y;
        if (da > 0.0) != (db > 0.0) {
            let s = da / (da - db);
            let hit = a + (b - a) * s;
            ts.push((hit.x - origin.x) * dir.x + (hit.y - origin.y) * dir.y);
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn same_cycle(a: &[Point2], b: &[Point2], tol: f64) -> bool {
        a.len() == b.len()
            && (0..b.len()).any(|shift| {
                a.iter()
                    .enumerate()
                    .all(|(i, p)| p.dist(b[(i + shift) % b.len()]) < tol)
            })
    }

    #[test]
    fn vertices_axis_aligned() {
        let g = GraspRect::new(0.0, 0.0, 10.0, 0.0, 1.0).unwrap();
        let v = rect_vertices(&g);
        let want = [pt(-5.0, -2.5), pt(5.0, -2.5), pt(5.0, 2.5), pt(-5.0, 2.5)];
        assert!(same_cycle(&v, &want, 1e-12));
        assert!(signed_area(&v) > 0.0);
    }

    #[test]
    fn vertices_quarter_turn() {
        let g = GraspRect::new(0.0, 0.0, 10.0, FRAC_PI_2, 1.0).unwrap();
        let v = rect_vertices(&g);
        let want = [pt(-2.5, -5.0), pt(2.5, -5.0), pt(2.5, 5.0), pt(-2.5, 5.0)];
        assert!(same_cycle(&v, &want, 1e-12), "{v:?}");
    }

    #[test]
    fn vertices_zero_width_collapse() {
        let g = GraspRect::new(3.0, 4.0, 0.0, 0.7, 0.5).unwrap();
        for p in rect_vertices(&g) {
            assert!(p.dist(pt(3.0, 4.0)) < 1e-12);
        }
    }

    #[test]
    fn grasp_invariants_enforced() {
        assert!(GraspRect::new(0.0, 0.0, -1.0, 0.0, 0.5).is_err());
        assert!(GraspRect::new(0.0, 0.0, 1.0, 2.0, 0.5).is_err());
        assert!(GraspRect::new(0.0, 0.0, 1.0, 0.0, 1.5).is_err());
        assert!(GraspRect::new(f64::NAN, 0.0, 1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = GraspRect::new(0.0, 0.0, 20.0, 0.0, 1.0).unwrap();
        let b = GraspRect::new(10.0, 0.0, 20.0, 0.0, 1.0).unwrap();
        assert!((rect_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(rect_iou(&a, &a).unwrap(), 1.0);
        let far = GraspRect::new(1000.0, 0.0, 10.0, 0.0, 1.0).unwrap();
        assert_eq!(rect_iou(&a, &far).unwrap(), 0.0);
    }

    #[test]
    fn iou_degenerate_inputs() {
        let z = GraspRect::new(1.0, 1.0, 0.0, 0.0, 1.0).unwrap();
        let a = GraspRect::new(1.0, 1.0, 10.0, 0.0, 1.0).unwrap();
        assert_eq!(rect_iou(&z, &a).unwrap(), 0.0);
        let z2 = GraspRect::new(5.0, 1.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(rect_iou(&z, &z2).unwrap(), 0.0);
        assert!(matches!(
            rect_iou(&z, &z),
            Err(EtaError::DegenerateRectangles)
        ));
    }

    #[test]
    fn angle_diff_examples() {
        assert_eq!(angle_diff(0.4, 0.4).unwrap(), 0.0);
        let d = angle_diff(FRAC_PI_2 - 0.01, -FRAC_PI_2 + 0.01).unwrap();
        assert!((d - 0.02).abs() < 1e-12);
        let d = angle_diff(0.0, 0.6).unwrap();
        assert!((d - 0.6).abs() < 1e-15 && d > PI / 6.0);
        assert!(matches!(
            angle_diff(2.0, 0.0),
            Err(EtaError::AngleOutOfRange(_))
        ));
    }

    #[test]
    fn hull_drops_interior_and_keeps_corners() {
        let sq = [pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.0, 1.0)];
        let mut with_center = sq.to_vec();
        with_center.push(pt(0.5, 0.5));
        let h = convex_hull(&with_center).unwrap();
        assert!(same_cycle(&h.vertices, &sq, 1e-12));
        let h = convex_hull(&sq).unwrap();
        assert!(same_cycle(&h.vertices, &sq, 1e-12));
    }

    #[test]
    fn hull_rejects_degenerate_sets() {
        assert!(matches!(
            convex_hull(&[pt(0.0, 0.0), pt(1.0, 1.0)]),
            Err(EtaError::DegeneratePointSet)
        ));
        let line: Vec<_> = (0..10).map(|i| pt(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(
            convex_hull(&line),
            Err(EtaError::DegeneratePointSet)
        ));
    }

    #[test]
    fn centroid_examples() {
        let sq =
            Polygon::new(vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.0, 1.0)]).unwrap();
        let c = polygon_centroid(&sq).unwrap();
        assert!(c.dist(pt(0.5, 0.5)) < 1e-12);
        let tri = Polygon::new(vec![pt(0.0, 0.0), pt(3.0, 0.0), pt(0.0, 3.0)]).unwrap();
        assert!(polygon_centroid(&tri).unwrap().dist(pt(1.0, 1.0)) < 1e-12);
        let flat = Polygon::new(vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(2.0, 0.0)]).unwrap();
        assert!(matches!(
            polygon_centroid(&flat),
            Err(EtaError::DegeneratePolygon)
        ));
    }

    #[test]
    fn point_in_polygon_examples() {
        let poly =
            Polygon::new(vec![pt(0.0, 0.0), pt(4.0, 0.0), pt(5.0, 3.0), pt(1.0, 4.0)]).unwrap();
        let c = polygon_centroid(&poly).unwrap();
        assert!(point_in_polygon(c, &poly));
        let r = poly.vertices.iter().map(|v| v.dist(c)).fold(0.0, f64::max);
        assert!(!point_in_polygon(c + pt(2.0 * r, 0.0), &poly));
        for (a, b) in poly.edges() {
            assert!(point_in_polygon((a + b) * 0.5, &poly));
        }
        for &v in &poly.vertices {
            assert!(point_in_polygon(v, &poly));
        }
    }

    #[test]
    fn min_width_of_rectangle() {
        let g = GraspRect::new(0.0, 0.0, 10.0, 0.3, 1.0).unwrap();
        let p = Polygon::new(rect_vertices(&g).to_vec()).unwrap();
        let (w, dir) = min_width(&p);
        assert!((w - 5.0).abs() < 1e-9);
        // Narrowest direction is the jaw axis of the rectangle.
        assert!((dir.x * -(0.3f64).sin() + dir.y * 0.3f64.cos()).abs() > 1.0 - 1e-9);
    }

    #[test]
    fn line_intervals_through_square() {
        let sq =
            Polygon::new(vec![pt(0.0, 0.0), pt(2.0, 0.0), pt(2.0, 2.0), pt(0.0, 2.0)]).unwrap();
        let iv = line_intervals(&sq, pt(-1.0, 1.0), pt(1.0, 0.0));
        assert_eq!(iv.len(), 1);
        assert!((iv[0].0 - 1.0).abs() < 1e-12 && (iv[0].1 - 3.0).abs() < 1e-12);
    }

    fn arb_rect() -> impl Strategy<Value = GraspRect> {
        (
            -50.0..50.0f64,
            -50.0..50.0f64,
            1.0..40.0f64,
            -FRAC_PI_2..FRAC_PI_2,
        )
            .prop_map(|(x, y, w, phi)| GraspRect {
                x,
                y,
                w,
                phi,
                q: 1.0,
            })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_rect(), b in arb_rect()) {
            let ab = rect_iou(&a, &b).unwrap();
            let ba = rect_iou(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((rect_iou(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn iou_rigid_invariance(a in arb_rect(), b in arb_rect(),
                                tx in -100.0..100.0f64, ty in -100.0..100.0f64,
                                rot in -PI..PI) {
            let (s, c) = rot.sin_cos();
            let move_rect = |g: &GraspRect| {
                let x = c * g.x - s * g.y + tx;
                let y = s * g.x + c * g.y + ty;
                GraspRect { x, y, w: g.w, phi: wrap_half_pi(g.phi + rot), q: g.q }
            };
            let before = rect_iou(&a, &b).unwrap();
            let after = rect_iou(&move_rect(&a), &move_rect(&b)).unwrap();
            prop_assert!((before - after).abs() < 1e-7);
        }

        #[test]
        fn angle_diff_properties(a in -FRAC_PI_2..FRAC_PI_2, b in -FRAC_PI_2..FRAC_PI_2) {
            let ab = angle_diff(a, b).unwrap();
            prop_assert_eq!(ab, angle_diff(b, a).unwrap());
            prop_assert_eq!(angle_diff(a, a).unwrap(), 0.0);
            prop_assert!(ab <= FRAC_PI_2);
        }

        #[test]
        fn hull_contains_inputs(pts in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..60)) {
            let pts: Vec<Point2> = pts.into_iter().map(|(x, y)| pt(x, y)).collect();
            if let Ok(h) = convex_hull(&pts) {
                for p in &pts {
                    prop_assert!(point_in_polygon(*p, &h));
                }
                let n = h.vertices.len();
                for i in 0..n {
                    prop_assert!(cross(h.vertices[i], h.vertices[(i + 1) % n], h.vertices[(i + 2) % n]) > 0.0);
                }
            }
        }

        #[test]
        fn vertex_mean_is_center(g in arb_rect()) {
            let v = rect_vertices(&g);
            let mx = v.iter().map(|p| p.x).sum::<f64>() / 4.0;
            let my = v.iter().map(|p| p.y).sum::<f64>() / 4.0;
            prop_assert!((mx - g.x).abs() < 1e-9 && (my - g.y).abs() < 1e-9);
        }
    }
}
