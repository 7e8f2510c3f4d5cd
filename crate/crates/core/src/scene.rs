//! Synthetic desk-scale world: procedurally generated objects with
//! ground-truth grasps, the pre-distributed viewpoint trajectory, an
//! orthographic renderer and the oracle segmenter.
//!
//! World frame: millimetres, table plane at `z = 0`, scene center at the
//! origin. A viewpoint at azimuth `a` sees the world rotated by `-a` about
//! the vertical axis, then tilted by the elevation, which foreshortens the
//! image rows by `sin(elevation)`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assessment::{self, EmbodiedParams};
use crate::error::{EtaError, Result};
use crate::geometry::{
    convex_hull, line_intervals, min_width, point_in_polygon, polygon_centroid, rect_vertices,
    wrap_half_pi, GraspRect, Point2, Polygon,
};
use crate::grid::Grid;

pub const SCENE_FILE_VERSION: u32 = 1;

/// Parameterized object families. The first three make up the standard
/// test suite; the rest only appear as a disjoint pretraining domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Handle,
    Disk,
    Box,
    Wedge,
    Hexagon,
    Block,
}

impl Family {
    pub const TARGET: [Family; 3] = [Family::Handle, Family::Disk, Family::Box];
    pub const SOURCE: [Family; 3] = [Family::Wedge, Family::Hexagon, Family::Block];

    pub fn name(self) -> &'static str {
        match self {
            Family::Handle => "handle",
            Family::Disk => "disk",
            Family::Box => "box",
            Family::Wedge => "wedge",
            Family::Hexagon => "hexagon",
            Family::Block => "block",
        }
    }

    /// Families whose grasps are valid at any closing angle through the centroid.
    fn is_round(self) -> bool {
        matches!(self, Family::Disk | Family::Hexagon | Family::Block)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = EtaError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "handle" => Family::Handle,
            "disk" => Family::Disk,
            "box" => Family::Box,
            "wedge" => Family::Wedge,
            "hexagon" => Family::Hexagon,
            "block" => Family::Block,
            other => return Err(EtaError::UnknownFamily(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub viewpoints: Vec<Viewpoint>,
    pub groups: Vec<Range<usize>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.viewpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viewpoints.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_of(&self, t: usize) -> usize {
        self.groups
            .iter()
            .position(|g| g.contains(&t))
            .expect("viewpoint index outside trajectory")
    }
}

/// `groups` coarse observation positions evenly spaced in azimuth, each
/// holding `views / groups` fine viewpoints spread over an arc of
/// `group_spread` radians centred on the group position.
pub fn build_trajectory(
    views: usize,
    groups: usize,
    radius_mm: f64,
    elevation: f64,
    group_spread: f64,
) -> Result<Trajectory> {
    if groups == 0 || views == 0 || !views.is_multiple_of(groups) {
        return Err(EtaError::GroupSizeMismatch { views, groups });
    }
    let m = views / groups;
    let viewpoints = (0..views)
        .map(|i| {
            let (g, j) = (i / m, i % m);
            let offset = if m > 1 {
                group_spread * (j as f64 / (m - 1) as f64 - 0.5)
            } else {
                0.0
            };
            Viewpoint {
                azimuth: 2.0 * PI * g as f64 / groups as f64 + offset,
                elevation,
                radius_mm,
            }
        })
        .collect();
    let groups = (0..groups).map(|g| g * m..(g + 1) * m).collect();
    Ok(Trajectory { viewpoints, groups })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub resolution: usize,
    pub scale_px_per_mm: f64,
    pub radius_mm: f64,
    pub elevation: f64,
    pub views: usize,
    pub groups: usize,
    /// Azimuth arc covered by the viewpoints of one group, radians.
    pub group_spread: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            resolution: 224,
            scale_px_per_mm: 2.0,
            radius_mm: 500.0,
            elevation: PI / 4.0,
            views: 16,
            groups: 4,
            group_spread: PI / 6.0,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 16 {
            return Err(EtaError::Config("camera.resolution must be >= 16".into()));
        }
        if !(self.scale_px_per_mm > 0.0) || !(self.radius_mm > 0.0) {
            return Err(EtaError::Config(
                "camera scale and radius must be positive".into(),
            ));
        }
        if !(self.elevation > 0.1 && self.elevation <= FRAC_PI_2) {
            return Err(EtaError::Config(
                "camera.elevation must lie in (0.1, pi/2]".into(),
            ));
        }
        if !(self.group_spread >= 0.0 && self.group_spread < 2.0 * PI / self.groups.max(1) as f64) {
            return Err(EtaError::Config(
                "camera.group_spread must lie in [0, 2 pi / groups)".into(),
            ));
        }
        build_trajectory(
            self.views,
            self.groups,
            self.radius_mm,
            self.elevation,
            self.group_spread,
        )
        .map(|_| ())
    }

    pub fn trajectory(&self) -> Result<Trajectory> {
        build_trajectory(
            self.views,
            self.groups,
            self.radius_mm,
            self.elevation,
            self.group_spread,
        )
    }
}

/// Orthographic camera for one viewpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius_mm: f64,
    pub scale: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(vp: &Viewpoint, cfg: &CameraConfig) -> Self {
        Self {
            azimuth: vp.azimuth,
            elevation: vp.elevation,
            radius_mm: vp.radius_mm,
            scale: cfg.scale_px_per_mm,
            width: cfg.resolution,
            height: cfg.resolution,
        }
    }

    fn cx(&self) -> f64 {
        (self.width as f64 - 1.0) / 2.0
    }

    fn cy(&self) -> f64 {
        (self.height as f64 - 1.0) / 2.0
    }

    fn rotate(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.azimuth.sin_cos();
        (c * x + s * y, -s * x + c * y)
    }

    fn unrotate(&self, xr: f64, yr: f64) -> (f64, f64) {
        let (s, c) = self.azimuth.sin_cos();
        (c * xr - s * yr, s * xr + c * yr)
    }

    /// Pixel position and camera depth of a world point.
    pub fn project(&self, x: f64, y: f64, z: f64) -> (Point2, f64) {
        let (xr, yr) = self.rotate(x, y);
        let (se, ce) = self.elevation.sin_cos();
        let col = self.cx() + self.scale * xr;
        let row = self.cy() - self.scale * (yr * se + z * ce);
        (Point2::new(col, row), self.radius_mm + yr * ce - z * se)
    }

    /// World point seen at pixel `p` with camera depth `depth`.
    pub fn back_project(&self, p: Point2, depth: f64) -> [f64; 3] {
        let (se, ce) = self.elevation.sin_cos();
        let xr = (p.x - self.cx()) / self.scale;
        let v = (self.cy() - p.y) / self.scale;
        let d = depth - self.radius_mm;
        let yr = v * se + d * ce;
        let z = v * ce - d * se;
        let (x, y) = self.unrotate(xr, yr);
        [x, y, z]
    }

    /// Image-frame foreshortening of a world direction at angle `beta`.
    pub fn image_direction(&self, beta: f64) -> (f64, f64) {
        let se = self.elevation.sin();
        let th = beta - self.azimuth;
        (th.cos(), -se * th.sin())
    }

    /// Map a world-frame grasp lying on a surface at height `z` into pixels.
    pub fn project_grasp(&self, g: &GraspRect, z: f64) -> GraspRect {
        let (center, _) = self.project(g.x, g.y, z);
        let (dx, dy) = self.image_direction(g.phi);
        let stretch = dx.hypot(dy);
        GraspRect {
            x: center.x,
            y: center.y,
            w: g.w * self.scale * stretch,
            phi: wrap_half_pi(dy.atan2(dx)),
            q: g.q,
        }
    }
}

/// Rendering style of a domain: the pretraining domain and the test domain
/// differ in palette and sensor noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Appearance {
    pub table_intensity: f64,
    pub albedo_min: f64,
    pub albedo_max: f64,
    pub intensity_noise: f64,
    pub depth_noise_mm: f64,
}

impl Default for Appearance {
    fn default() -> Self {
        Self::target()
    }
}

impl Appearance {
    pub fn target() -> Self {
        Self {
            table_intensity: 0.3,
            albedo_min: 0.55,
            albedo_max: 0.9,
            intensity_noise: 0.03,
            depth_noise_mm: 0.3,
        }
    }

    pub fn source() -> Self {
        Self {
            table_intensity: 0.85,
            albedo_min: 0.1,
            albedo_max: 0.35,
            intensity_noise: 0.01,
            depth_noise_mm: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: String,
    pub category: Family,
    /// Footprint in world millimetres.
    pub shape: Polygon,
    pub height_mm: f64,
    pub albedo: f64,
    /// World-frame closing direction of the canonical grasp, if the family
    /// has one.
    pub grasp_axis: Option<f64>,
    /// Evaluation only: world-frame grasps, millimetres.
    pub gt_grasps: Vec<GraspRect>,
    /// Evaluation only: observation group with the least foreshortened
    /// grasp axis.
    pub optimal_observation: usize,
}

impl ObjectInstance {
    /// Ground-truth grasps expressed in the pixel frame of a viewpoint.
    pub fn gt_in_view(&self, camera: &CameraModel) -> Vec<GraspRect> {
        self.gt_grasps
            .iter()
            .map(|g| camera.project_grasp(g, self.height_mm))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableExtent {
    pub width_mm: f64,
    pub depth_mm: f64,
}

impl Default for TableExtent {
    fn default() -> Self {
        Self {
            width_mm: 400.0,
            depth_mm: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// The first object is the episode target.
    pub objects: Vec<ObjectInstance>,
    pub table: TableExtent,
    pub seed: u64,
    pub camera: CameraConfig,
    pub trajectory: Trajectory,
    pub appearance: Appearance,
}

impl Scene {
    pub fn target(&self) -> &ObjectInstance {
        &self.objects[0]
    }

    pub fn camera_for(&self, t: usize) -> Result<CameraModel> {
        let vp = self
            .trajectory
            .viewpoints
            .get(t)
            .ok_or(EtaError::ViewpointOutOfRange(t))?;
        Ok(CameraModel::new(vp, &self.camera))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path.as_ref(), text).map_err(|e| EtaError::io(path.as_ref(), e))
    }

    /// Versioned JSON, the inverse of [`Scene::from_json`].
    pub fn to_json(&self) -> Result<String> {
        let file = SceneFile {
            version: SCENE_FILE_VERSION,
            scene: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scene> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| EtaError::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Scene> {
        let file: SceneFile = serde_json::from_str(text)?;
        if file.version != SCENE_FILE_VERSION {
            return Err(EtaError::Version {
                found: file.version,
                expected: SCENE_FILE_VERSION,
            });
        }
        Ok(file.scene)
    }
}

/// On-disk scene layout.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: u32,
    pub scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyCount {
    pub family: String,
    pub count: usize,
}

/// Everything `generate_scene` needs besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub objects: Vec<FamilyCount>,
    pub camera: CameraConfig,
    pub table: TableExtent,
    pub appearance: Appearance,
    /// Gripper opening margin added to ground-truth widths, millimetres.
    pub grasp_margin_mm: f64,
    /// Scenes must admit at least one ground-truth grasp that passes these.
    pub embodied: EmbodiedParams,
    pub max_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            objects: vec![FamilyCount {
                family: "disk".into(),
                count: 1,
            }],
            camera: CameraConfig::default(),
            table: TableExtent::default(),
            appearance: Appearance::target(),
            grasp_margin_mm: 6.0,
            embodied: EmbodiedParams::default(),
            max_attempts: 64,
        }
    }
}

impl SceneSpec {
    pub fn single(family: Family) -> Self {
        Self {
            objects: vec![FamilyCount {
                family: family.name().into(),
                count: 1,
            }],
            ..Self::default()
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed derivation for independent streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix(splitmix(seed) ^ stream.wrapping_mul(0xA24B_AED4_963E_E407))
}

fn rotate_pts(pts: &[(f64, f64)], angle: f64, offset: Point2) -> Vec<Point2> {
    let (s, c) = angle.sin_cos();
    pts.iter()
        .map(|&(x, y)| Point2::new(c * x - s * y + offset.x, s * x + c * y + offset.y))
        .collect()
}

fn regular(n: usize, r: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

/// Footprint (long axis along local x), height and in-plane rotation.
fn family_shape(family: Family, rng: &mut ChaCha8Rng) -> (Vec<(f64, f64)>, f64, f64) {
    let uniform_angle = |rng: &mut ChaCha8Rng| rng.random_range(-PI..PI);
    match family {
        Family::Handle => {
            let len = rng.random_range(70.0..90.0);
            let d = rng.random_range(9.5..11.5);
            let blade = 0.6 * d;
            let (a, b, m) = (-len / 2.0, len / 2.0, len / 2.0 - 0.35 * len);
            let pts = vec![
                (a, -d / 2.0),
                (m, -d / 2.0),
                (m, -blade / 2.0),
                (b - 5.0, -blade / 2.0),
                (b, 0.0),
                (b - 5.0, blade / 2.0),
                (m, blade / 2.0),
                (m, d / 2.0),
                (a, d / 2.0),
            ];
            // Handles lie roughly along the x axis: closing axis near 90 deg.
            let beta = (90.0 + rng.random_range(-8.0..8.0)) * PI / 180.0;
            (pts, rng.random_range(18.0..22.0), beta - FRAC_PI_2)
        }
        Family::Disk => (
            regular(24, rng.random_range(10.0..13.0)),
            rng.random_range(20.0..30.0),
            uniform_angle(rng),
        ),
        Family::Box => {
            let a = rng.random_range(36.0..46.0) / 2.0;
            let b = rng.random_range(18.0..24.0) / 2.0;
            (
                vec![(-a, -b), (a, -b), (a, b), (-a, b)],
                rng.random_range(25.0..35.0),
                uniform_angle(rng),
            )
        }
        Family::Wedge => {
            let len = rng.random_range(55.0..70.0);
            let base = rng.random_range(14.0..20.0);
            (
                vec![
                    (-len / 2.0, -base / 2.0),
                    (len / 2.0, 0.0),
                    (-len / 2.0, base / 2.0),
                ],
                rng.random_range(15.0..25.0),
                uniform_angle(rng),
            )
        }
        Family::Hexagon => (
            regular(6, rng.random_range(12.0..15.0)),
            rng.random_range(15.0..25.0),
            uniform_angle(rng),
        ),
        Family::Block => {
            let a = rng.random_range(22.0..28.0) / 2.0;
            (
                vec![(-a, -a), (a, -a), (a, a), (-a, a)],
                rng.random_range(20.0..35.0),
                uniform_angle(rng),
            )
        }
    }
}

/// Antipodal grasps across the local minimum-width axis (or through the
/// centroid at many angles for round families), widened by `margin`.
fn ground_truth_grasps(
    family: Family,
    shape: &Polygon,
    margin: f64,
) -> Result<(Vec<GraspRect>, Option<f64>)> {
    let hull = convex_hull(&shape.vertices)?;
    let centroid = polygon_centroid(&hull)?;
    let chord_grasp = |center: Point2, dir: Point2| -> Option<GraspRect> {
        let iv = line_intervals(shape, center, dir);
        let (lo, hi) = iv.into_iter().find(|&(lo, hi)| lo <= 0.0 && hi >= 0.0)?;
        let mid = center + dir * ((lo + hi) / 2.0);
        let g = GraspRect {
            x: mid.x,
            y: mid.y,
            w: hi - lo + margin,
            phi: wrap_half_pi(dir.y.atan2(dir.x)),
            q: 1.0,
        };
        let clear = rect_vertices(&g)
            .iter()
            .all(|&v| !point_in_polygon(v, &hull));
        clear.then_some(g)
    };

    if family.is_round() {
        let grasps = (0..12)
            .filter_map(|k| {
                let a = PI * k as f64 / 12.0 - FRAC_PI_2;
                chord_grasp(centroid, Point2::new(a.cos(), a.sin()))
            })
            .collect();
        return Ok((grasps, None));
    }

    let (_, n) = min_width(&hull);
    let m = Point2::new(-n.y, n.x);
    let proj = |p: Point2| p.x * m.x + p.y * m.y;
    let (tmin, tmax) = hull
        .vertices
        .iter()
        .map(|&p| proj(p))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| {
            (a.min(t), b.max(t))
        });
    let tc = proj(centroid);
    let grasps = (0..9)
        .filter_map(|k| {
            let t = tmin + (0.1 + 0.8 * k as f64 / 8.0) * (tmax - tmin);
            chord_grasp(centroid + m * (t - tc), n)
        })
        .collect();
    Ok((grasps, Some(n.y.atan2(n.x))))
}

/// Observation group whose viewpoints foreshorten `axis` the least, on
/// average. Ties go to the lowest index.
pub fn least_foreshortened_group(axis: Option<f64>, traj: &Trajectory) -> usize {
    let Some(beta) = axis else { return 0 };
    let mut best = (0, f64::NEG_INFINITY);
    for (gi, g) in traj.groups.iter().enumerate() {
        let score = g
            .clone()
            .map(|t| {
                let vp = &traj.viewpoints[t];
                let th = beta - vp.azimuth;
                th.cos().hypot(vp.elevation.sin() * th.sin())
            })
            .sum::<f64>()
            / g.len() as f64;
        if score > best.1 + 1e-9 {
            best = (gi, score);
        }
    }
    best.0
}

fn make_object(
    family: Family,
    index: usize,
    offset: Point2,
    spec: &SceneSpec,
    traj: &Trajectory,
    rng: &mut ChaCha8Rng,
) -> Result<ObjectInstance> {
    let (pts, height, rot) = family_shape(family, rng);
    let shape = Polygon::new(rotate_pts(&pts, rot, offset))?.to_ccw();
    let (gt_grasps, grasp_axis) = ground_truth_grasps(family, &shape, spec.grasp_margin_mm)?;
    let albedo = rng.random_range(spec.appearance.albedo_min..=spec.appearance.albedo_max);
    Ok(ObjectInstance {
        id: format!("{}-{index}", family.name()),
        category: family,
        optimal_observation: least_foreshortened_group(grasp_axis, traj),
        shape,
        height_mm: height,
        albedo,
        grasp_axis,
        gt_grasps,
    })
}

/// Build a deterministic scene for `(spec, seed)`. The target object sits
/// near the table center; any further objects are laid out beside it.
/// Candidate worlds that admit no embodied-feasible ground-truth grasp are
/// discarded and regenerated from a derived seed.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.camera.validate()?;
    let families = spec
        .objects
        .iter()
        .map(|fc| Ok((fc.family.parse::<Family>()?, fc.count)))
        .collect::<Result<Vec<_>>>()?;
    let traj = spec.camera.trajectory()?;

    for attempt in 0..spec.max_attempts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt as u64));
        let mut objects = Vec::new();
        for &(family, count) in &families {
            for _ in 0..count {
                let i = objects.len();
                let offset = if i == 0 {
                    Point2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0))
                } else {
                    let side = if i % 2 == 1 { 1.0 } else { -1.0 };
                    Point2::new(side * 120.0 * i.div_ceil(2) as f64, 0.0)
                };
                let obj = make_object(family, i, offset, spec, &traj, &mut rng);
                match obj {
                    Ok(o) if !o.gt_grasps.is_empty() => objects.push(o),
                    _ => break,
                }
            }
        }
        if objects.len() != families.iter().map(|f| f.1).sum::<usize>() || objects.is_empty() {
            continue;
        }
        let scene = Scene {
            objects,
            table: spec.table.clone(),
            seed,
            camera: spec.camera.clone(),
            trajectory: traj.clone(),
            appearance: spec.appearance.clone(),
        };
        if is_solvable(&scene, &spec.embodied)? {
            return Ok(scene);
        }
    }
    Err(EtaError::Unsolvable(spec.max_attempts))
}

/// True when some viewpoint shows some ground-truth grasp of the target
/// that passes the embodied filter and both primary assessment gates.
pub fn is_solvable(scene: &Scene, params: &EmbodiedParams) -> Result<bool> {
    let target = scene.target();
    for t in 0..scene.trajectory.len() {
        let obs = render(scene, t)?;
        let Ok(hull) = OracleSegmenter.segment(&obs) else {
            continue;
        };
        let gts = target.gt_in_view(&obs.camera);
        if gts.iter().any(|g| {
            assessment::passes_embodied(g, &obs.depth, &obs.camera, params)
                && assessment::passes_primary(g, &obs.mask, &hull)
        }) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Per-viewpoint rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Grayscale stand-in for the color image, in [0, 1].
    pub intensity: Grid<f64>,
    /// Camera depth, millimetres.
    pub depth: Grid<f64>,
    /// Silhouette of the target object.
    pub mask: Grid<bool>,
    pub viewpoint_index: usize,
    pub camera: CameraModel,
}

impl Observation {
    pub fn mask_pixels(&self) -> usize {
        self.mask.as_slice().iter().filter(|&&m| m).count()
    }
}

/// Orthographic rendering of every object's top face. Pure in `(scene, t)`.
pub fn render(scene: &Scene, t: usize) -> Result<Observation> {
    let cam = scene.camera_for(t)?;
    let (w, h) = (cam.width, cam.height);
    let (se, ce) = cam.elevation.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;

    let mut top = Grid::filled(w, h, 0.0f64);
    let mut owner: Grid<Option<usize>> = Grid::filled(w, h, None);
    for (oi, obj) in scene.objects.iter().enumerate() {
        let img = obj.shape.map(|p| cam.project(p.x, p.y, obj.height_mm).0);
        let (lo, hi) = img.bbox();
        let r0 = lo.y.ceil().max(0.0) as usize;
        let r1 = hi.y.floor().min(h as f64 - 1.0);
        if r1 < 0.0 {
            continue;
        }
        for r in r0..=(r1 as usize) {
            for (a, b) in line_intervals(&img, Point2::new(0.0, r as f64), Point2::new(1.0, 0.0)) {
                let c0 = a.ceil().max(0.0) as usize;
                let c1 = b.floor().min(w as f64 - 1.0);
                if c1 < 0.0 {
                    continue;
                }
                for c in c0..=(c1 as usize) {
                    if owner.get(c, r).is_none() || *top.get(c, r) < obj.height_mm {
                        *top.get_mut(c, r) = obj.height_mm;
                        *owner.get_mut(c, r) = Some(oi);
                    }
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scene.seed, 0x5EED_0000 + t as u64));
    let app = &scene.appearance;
    let mut intensity = Grid::filled(w, h, 0.0);
    let mut depth = Grid::filled(w, h, 0.0);
    let mut mask = Grid::filled(w, h, false);
    for r in 0..h {
        let v = (cy - r as f64) / cam.scale;
        for c in 0..w {
            let z = *top.get(c, r);
            let yr = (v - z * ce) / se;
            let d = cam.radius_mm + yr * ce - z * se;
            let base = match owner.get(c, r) {
                Some(oi) => {
                    if *oi == 0 {
                        *mask.get_mut(c, r) = true;
                    }
                    scene.objects[*oi].albedo
                }
                None => app.table_intensity,
            };
            let n_i = rng.random_range(-1.0..1.0) * app.intensity_noise;
            let n_d = rng.random_range(-1.0..1.0) * app.depth_noise_mm;
            *intensity.get_mut(c, r) = (base + n_i).clamp(0.0, 1.0);
            *depth.get_mut(c, r) = (d + n_d).max(0.0);
        }
    }

    Ok(Observation {
        intensity,
        depth,
        mask,
        viewpoint_index: t,
        camera: cam,
    })
}

/// Produces the object region `M^v` used by the assessment gates.
pub trait Segmenter {
    fn segment(&self, obs: &Observation) -> Result<Polygon>;
}

/// Convex hull of the exact target silhouette.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSegmenter;

impl Segmenter for OracleSegmenter {
    fn segment(&self, obs: &Observation) -> Result<Polygon> {
        oracle_segment(obs)
    }
}

pub fn oracle_segment(obs: &Observation) -> Result<Polygon> {
    hull_of_mask(&obs.mask)
}

/// Hull over the boundary pixels of a mask.
pub fn hull_of_mask(mask: &Grid<bool>) -> Result<Polygon> {
    let (w, h) = (mask.width(), mask.height());
    let on = |c: isize, r: isize| {
        c >= 0
            && r >= 0
            && (c as usize) < w
            && (r as usize) < h
            && *mask.get(c as usize, r as usize)
    };
    let boundary: Vec<Point2> = mask
        .iter_indexed()
        .filter(|(_, _, &m)| m)
        .filter(|&(c, r, _)| {
            let (c, r) = (c as isize, r as isize);
            !(on(c - 1, r) && on(c + 1, r) && on(c, r - 1) && on(c, r + 1))
        })
        .map(|(c, r, _)| Point2::new(c as f64, r as f64))
        .collect();
    if boundary.is_empty() {
        return Err(EtaError::ObjectNotVisible);
    }
    convex_hull(&boundary).map_err(|_| EtaError::ObjectNotVisible)
}

/// Oracle silhouette grown (positive radius) or shrunk (negative radius) by
/// a square structuring element before the hull, for robustness studies.
#[derive(Debug, Clone, Copy)]
pub struct MorphSegmenter {
    pub radius: i32,
}

impl Segmenter for MorphSegmenter {
    fn segment(&self, obs: &Observation) -> Result<Polygon> {
        let m = &obs.mask;
        let (w, h) = (m.width() as i32, m.height() as i32);
        let k = self.radius.abs();
        let dilate = self.radius > 0;
        let mut out = Grid::filled(m.width(), m.height(), false);
        for r in 0..h {
            for c in 0..w {
                let mut hit = !dilate;
                'win: for dr in -k..=k {
                    for dc in -k..=k {
                        let (cc, rr) = (c + dc, r + dr);
                        let v = cc >= 0
                            && rr >= 0
                            && cc < w
                            && rr < h
                            && *m.get(cc as usize, rr as usize);
                        if dilate && v {
                            hit = true;
                            break 'win;
                        }
                        if !dilate && !v {
                            hit = false;
                            break 'win;
                        }
                    }
                }
                *out.get_mut(c as usize, r as usize) = hit;
            }
        }
        hull_of_mask(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angle_diff, rect_iou};

    fn scene_of(family: Family, seed: u64) -> Scene {
        generate_scene(&SceneSpec::single(family), seed).unwrap()
    }

    #[test]
    fn trajectory_grouping() {
        let t = build_trajectory(16, 4, 500.0, 0.8, 0.5).unwrap();
        assert_eq!(t.len(), 16);
        assert_eq!(t.groups, vec![0..4, 4..8, 8..12, 12..16]);
        let step = t.viewpoints[1].azimuth - t.viewpoints[0].azimuth;
        assert!((step - 0.5 / 3.0).abs() < 1e-12);
        // Each group is centred on its coarse position.
        for (g, r) in t.groups.iter().enumerate() {
            let mean: f64 = r.clone().map(|i| t.viewpoints[i].azimuth).sum::<f64>() / 4.0;
            assert!((mean - FRAC_PI_2 * g as f64).abs() < 1e-12);
        }
        let t = build_trajectory(4, 4, 500.0, 0.8, 0.5).unwrap();
        assert!(t.groups.iter().all(|g| g.len() == 1));
        assert!(matches!(
            build_trajectory(6, 4, 500.0, 0.8, 0.5),
            Err(EtaError::GroupSizeMismatch { .. })
        ));
    }

    #[test]
    fn projection_round_trips() {
        let cfg = CameraConfig::default();
        let traj = cfg.trajectory().unwrap();
        for vp in &traj.viewpoints {
            let cam = CameraModel::new(vp, &cfg);
            for p in [[3.0, -7.0, 0.0], [-20.0, 11.0, 25.0]] {
                let (px, d) = cam.project(p[0], p[1], p[2]);
                let q = cam.back_project(px, d);
                for i in 0..3 {
                    assert!((p[i] - q[i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = scene_of(Family::Disk, 7);
        let b = scene_of(Family::Disk, 7);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_ne!(a, scene_of(Family::Disk, 8));
    }

    #[test]
    fn unknown_family_rejected() {
        let mut spec = SceneSpec::default();
        spec.objects[0].family = "teapot".into();
        assert!(matches!(
            generate_scene(&spec, 0),
            Err(EtaError::UnknownFamily(_))
        ));
    }

    #[test]
    fn disk_grasps_span_diameter() {
        let s = scene_of(Family::Disk, 3);
        let obj = s.target();
        let c = polygon_centroid(&obj.shape).unwrap();
        let r = obj
            .shape
            .vertices
            .iter()
            .map(|v| v.dist(c))
            .fold(0.0, f64::max);
        assert!(obj.gt_grasps.len() >= 6);
        let mut angles: Vec<f64> = obj.gt_grasps.iter().map(|g| g.phi).collect();
        angles.dedup();
        assert!(angles.len() >= 6, "disk grasps should cover many angles");
        for g in &obj.gt_grasps {
            // 24-gon chord lies between inradius and circumradius.
            let inr = r * (PI / 24.0).cos();
            assert!(
                g.w >= 2.0 * inr + 6.0 - 1e-9 && g.w <= 2.0 * r + 6.0 + 1e-9,
                "{}",
                g.w
            );
            assert!(Point2::new(g.x, g.y).dist(c) < 1e-6);
        }
        assert_eq!(obj.optimal_observation, 0);
    }

    #[test]
    fn handle_optimal_group_faces_broadside() {
        for seed in 0..10 {
            let s = scene_of(Family::Handle, seed);
            let obj = s.target();
            // Brute force: group whose viewpoints render the gt grasp widest.
            let mut best = (0, f64::NEG_INFINITY);
            for (gi, g) in s.trajectory.groups.iter().enumerate() {
                let mean = g
                    .clone()
                    .map(|t| {
                        s.camera_for(t)
                            .unwrap()
                            .project_grasp(&obj.gt_grasps[0], 0.0)
                            .w
                    })
                    .sum::<f64>();
                if mean > best.1 + 1e-9 {
                    best = (gi, mean);
                }
            }
            assert_eq!(obj.optimal_observation, best.0);
            assert_eq!(obj.optimal_observation, 1);
        }
    }

    #[test]
    fn rendering_is_pure_and_masks_nonempty() {
        for fam in Family::TARGET.iter().chain(Family::SOURCE.iter()) {
            let s = scene_of(*fam, 11);
            for t in 0..s.trajectory.len() {
                let o = render(&s, t).unwrap();
                assert!(o.mask_pixels() > 0, "{fam} view {t}");
                assert!(o.depth.as_slice().iter().all(|&d| d >= 0.0));
                if t % 5 == 0 {
                    assert_eq!(o, render(&s, t).unwrap());
                }
            }
        }
    }

    #[test]
    fn disk_masks_congruent_across_azimuth() {
        let s = scene_of(Family::Disk, 5);
        let areas: Vec<usize> = (0..16)
            .map(|t| render(&s, t).unwrap().mask_pixels())
            .collect();
        let (lo, hi) = (areas.iter().min().unwrap(), areas.iter().max().unwrap());
        assert!((*hi - *lo) as f64 / *hi as f64 <= 0.03, "{areas:?}");
    }

    #[test]
    fn half_turn_gives_point_mirrored_mask() {
        let mut s = scene_of(Family::Handle, 2);
        s.appearance.depth_noise_mm = 0.0;
        s.objects[0].height_mm = 0.0; // keep the height shift out of the mirror
        let a = render(&s, 0).unwrap();
        let b = render(&s, 8).unwrap();
        let n = a.mask.width();
        let mut mismatch = 0;
        for (c, r, &m) in a.mask.iter_indexed() {
            if m != *b.mask.get(n - 1 - c, n - 1 - r) {
                mismatch += 1;
            }
        }
        assert!(
            mismatch as f64 <= 0.02 * a.mask_pixels() as f64,
            "{mismatch}"
        );
        assert_ne!(a.mask, b.mask);
    }

    #[test]
    fn gt_grasps_judge_themselves_successful() {
        for fam in Family::TARGET {
            let s = scene_of(fam, 4);
            let cam = s.camera_for(3).unwrap();
            for g in s.target().gt_in_view(&cam) {
                assert_eq!(rect_iou(&g, &g).unwrap(), 1.0);
                assert_eq!(angle_diff(g.phi, g.phi).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn scenes_are_solvable() {
        for fam in Family::TARGET {
            for seed in 0..5 {
                let s = scene_of(fam, seed);
                assert!(is_solvable(&s, &EmbodiedParams::default()).unwrap());
            }
        }
    }

    fn mask_from(width: usize, f: impl Fn(usize, usize) -> bool) -> Observation {
        let cfg = CameraConfig {
            resolution: width,
            ..CameraConfig::default()
        };
        let traj = cfg.trajectory().unwrap();
        let mut mask = Grid::filled(width, width, false);
        for r in 0..width {
            for c in 0..width {
                *mask.get_mut(c, r) = f(c, r);
            }
        }
        Observation {
            intensity: Grid::filled(width, width, 0.0),
            depth: Grid::filled(width, width, 500.0),
            mask,
            viewpoint_index: 0,
            camera: CameraModel::new(&traj.viewpoints[0], &cfg),
        }
    }

    #[test]
    fn oracle_segment_square_and_l_shape() {
        let sq = mask_from(32, |c, r| (5..=20).contains(&c) && (8..=15).contains(&r));
        let hull = oracle_segment(&sq).unwrap();
        assert_eq!(hull.vertices.len(), 4);
        for (c, r, &m) in sq.mask.iter_indexed() {
            if m {
                assert!(point_in_polygon(Point2::new(c as f64, r as f64), &hull));
            }
        }

        let l = mask_from(40, |c, r| {
            ((5..=30).contains(&c) && (5..=10).contains(&r))
                || ((5..=10).contains(&c) && (5..=30).contains(&r))
        });
        let hull = oracle_segment(&l).unwrap();
        let count = |o: &Observation| o.mask_pixels() as f64;
        let hull_pixels = (0..40)
            .flat_map(|r| (0..40).map(move |c| (c, r)))
            .filter(|&(c, r)| point_in_polygon(Point2::new(c as f64, r as f64), &hull))
            .count() as f64;
        assert!(hull_pixels > count(&l) * 1.3);

        let empty = mask_from(16, |_, _| false);
        assert!(matches!(
            oracle_segment(&empty),
            Err(EtaError::ObjectNotVisible)
        ));
    }

    #[test]
    fn morph_segmenter_grows_and_shrinks() {
        let s = scene_of(Family::Box, 1);
        let o = render(&s, 0).unwrap();
        let base = oracle_segment(&o).unwrap().area();
        let grown = MorphSegmenter { radius: 2 }.segment(&o).unwrap().area();
        let shrunk = MorphSegmenter { radius: -2 }.segment(&o).unwrap().area();
        assert!(grown > base && base > shrunk);
    }

    #[test]
    fn scene_file_round_trip() {
        let s = scene_of(Family::Handle, 9);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene.json");
        s.save(&p).unwrap();
        assert_eq!(Scene::load(&p).unwrap(), s);
        let bumped =
            std::fs::read_to_string(&p)
                .unwrap()
                .replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(matches!(
            Scene::from_json(&bumped),
            Err(EtaError::Version { .. })
        ));
    }
}
