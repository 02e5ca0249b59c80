//! Ellipsoid reconstruction from canonical highlight contours seen through
//! virtual (mirrored) cameras, and highlight prediction for new views.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{
    backproject_to_tangent, fan_from_tangent_ellipse, forward_warp, inverse_warp, limit_angle_at, CanonicalContour,
    LightModel, TangentFrame, WarpConfig, WarpError,
};
use crate::detect::SpecularObservation;
use crate::geom::{
    fit_ellipse, mirror_camera, normalize_homogeneous, project_dual_quadric, CameraView, Conic, DualQuadric, Ellipse,
    EllipsoidShape, GeomError, PlaneH, ProjectionMap, Vec2, Vec3,
};
use crate::surfaces::{SurfaceError, SurfaceModel, SurfacePoint};


#[derive(Debug, Error)]
pub enum ModelError {
    #[error("degenerate view configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("reconstruction is not a real ellipsoid")]
    NotAnEllipsoid,
    #[error("conic is not a real ellipse")]
    NotAnEllipse,
    #[error("no visible reflection (smallest incident angle {0:.3} rad)")]
    NoVisibleReflection(f64),
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Geom(GeomError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<GeomError> for ModelError {
    fn from(e: GeomError) -> Self {
        match e {
            GeomError::NotAnEllipse => Self::NotAnEllipse,
            GeomError::NotAnEllipsoid => Self::NotAnEllipsoid,
            e => Self::Geom(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Canonical,
    DualBaseline,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Canonical => "canonical",
            Self::DualBaseline => "dual-baseline",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A contour on the tangent plane as seen by the mirrored camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalView {
    pub virtual_camera: ProjectionMap,
    pub conic: Conic,
    pub source_view: String,
    pub plane: PlaneH,
}

impl CanonicalView {
    pub fn center(&self) -> Vec3 {
        self.virtual_camera.center().unwrap_or_else(Vec3::zeros)
    }
}

pub fn make_canonical_view(
    obs: &SpecularObservation,
    contour: &CanonicalContour,
    view: &CameraView,
) -> Result<CanonicalView, ModelError> {
    let plane = contour.plane();
    let virtual_camera = mirror_camera(view, &plane);
    let pts: Vec<Vec2> = contour.surviving().iter().filter_map(|p| virtual_camera.project(p)).collect();
    let ellipse = fit_ellipse(&pts)?;
    Ok(CanonicalView {
        virtual_camera,
        conic: ellipse.to_conic(),
        source_view: obs.view_id.clone(),
        plane,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JolimasModel {
    /// Unit Frobenius norm, largest-magnitude entry positive.
    pub q_star: DualQuadric,
    pub shape: EllipsoidShape,
    pub mode: Mode,
    pub source_view_ids: Vec<String>,
    /// Smallest over second-smallest singular value of the joint system.
    pub residual: f64,
}

impl JolimasModel {
    pub fn from_dual_quadric(
        q: &Matrix4<f64>,
        mode: Mode,
        source_view_ids: Vec<String>,
        residual: f64,
    ) -> Result<Self, ModelError> {
        let q_star = DualQuadric::new(normalize_homogeneous(q));
        let shape = q_star.decode()?;
        Ok(Self {
            q_star,
            shape,
            mode,
            source_view_ids,
            residual,
        })
    }

    pub fn light(&self) -> LightModel {
        LightModel::Point(self.shape.center)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructConfig {
    /// Minimum distance between any two virtual camera centers.
    pub min_view_separation: f64,
    /// Smallest accepted ratio of the two smallest singular values.
    pub min_singular_gap: f64,
    pub warp: WarpConfig,
    /// Second reconstruction with the provisional center as point light.
    pub two_pass: bool,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            min_view_separation: 1e-3,
            min_singular_gap: 10.0,
            warp: WarpConfig::default(),
            two_pass: true,
        }
    }
}

const Q_INDEX: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];
const C_INDEX: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Linear map `vech(Q*) → vech(P Q* Pᵀ)`.
fn vech_map(p: &Matrix3x4<f64>) -> SMatrix<f64, 6, 10> {
    SMatrix::from_fn(|r, c| {
        let (a, b) = C_INDEX[r];
        let (j, k) = Q_INDEX[c];
        if j == k {
            p[(a, j)] * p[(b, j)]
        } else {
            p[(a, j)] * p[(b, k)] + p[(a, k)] * p[(b, j)]
        }
    })
}

fn similarity(center: &Vec3, scale: f64) -> Matrix4<f64> {
    let mut t = Matrix4::identity() * scale;
    t[(3, 3)] = 1.0;
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-center * scale));
    t
}

struct Solution {
    q: Matrix4<f64>,
    sigma_min: f64,
    sigma_second: f64,
}

/// Null vector of the stacked system in world coordinates `X' = T·X`.
fn solve(views: &[CanonicalView], t: &Matrix4<f64>) -> Result<Solution, ModelError> {
    let m = views.len();
    let t_inv = t.try_inverse().ok_or_else(|| ModelError::DegenerateConfiguration("singular normalization".into()))?;
    let mut a = DMatrix::<f64>::zeros(6 * m, 10 + m);
    for (i, v) in views.iter().enumerate() {
        let e = v.conic.to_ellipse()?;
        let (c, s) = (e.center(), 1.0 / e.semi_major);
        let h = Matrix3::new(s, 0.0, -c.x * s, 0.0, s, -c.y * s, 0.0, 0.0, 1.0);
        let p = h * v.virtual_camera.0 * t_inv;
        let p = p / p.norm();
        let cd = h * v.conic.dual().0 * h.transpose();
        let cd = cd / cd.norm();
        a.view_mut((6 * i, 0), (6, 10)).copy_from(&vech_map(&p));
        for (r, &(x, y)) in C_INDEX.iter().enumerate() {
            a[(6 * i + r, 10 + i)] = -cd[(x, y)];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| ModelError::DegenerateConfiguration("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
    let k = order[0];
    let mut q = Matrix4::zeros();
    for (c, &(j, l)) in Q_INDEX.iter().enumerate() {
        q[(j, l)] = v_t[(k, c)];
        q[(l, j)] = v_t[(k, c)];
    }
    Ok(Solution {
        q: t_inv * q * t_inv.transpose(),
        sigma_min: svd.singular_values[order[0]],
        sigma_second: svd.singular_values[order[1]],
    })
}

/// Least-squares meeting point of the rays through the conic centers.
fn triangulate_centers(views: &[CanonicalView]) -> Option<Vec3> {
    let mut a = Matrix3::zeros();
    let mut b = Vec3::zeros();
    for v in views {
        let m = v.virtual_camera.0.fixed_view::<3, 3>(0, 0).into_owned();
        let c = v.conic.to_ellipse().ok()?.center();
        let d = (m.try_inverse()? * Vector3::new(c.x, c.y, 1.0)).normalize();
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * v.center();
    }
    a.try_inverse().map(|inv| inv * b)
}

/// Solves `P_i Q* P_iᵀ = λ_i C*_i` jointly for `vech(Q*)` and the scales.
pub fn reconstruct(views: &[CanonicalView], mode: Mode, config: &ReconstructConfig) -> Result<JolimasModel, ModelError> {
    let m = views.len();
    if m < 3 {
        return Err(ModelError::DegenerateConfiguration(format!("{m} views, need at least 3")));
    }
    let centers: Vec<Vec3> = views.iter().map(CanonicalView::center).collect();
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[i + 1..] {
            if (a - b).norm() < config.min_view_separation {
                return Err(ModelError::DegenerateConfiguration("virtual cameras coincide".into()));
            }
        }
    }
    // Solve centered on the ellipsoid with the cameras at rms distance √3;
    // the center guess is refined once from the first solution.
    let scaled = |c: &Vec3| {
        let rms = (centers.iter().map(|x| (x - c).norm_squared()).sum::<f64>() / m as f64).sqrt();
        similarity(c, 3f64.sqrt() / rms.max(1e-12))
    };
    let guess = triangulate_centers(views).unwrap_or_else(|| centers.iter().sum::<Vec3>() / m as f64);
    let mut sol = solve(views, &scaled(&guess))?;
    if let Ok(shape) = DualQuadric::new(sol.q).decode() {
        sol = solve(views, &scaled(&shape.center))?;
    }
    if !(sol.sigma_second > config.min_singular_gap * sol.sigma_min) {
        return Err(ModelError::DegenerateConfiguration(format!(
            "null space is not one-dimensional (singular values {:.3e}, {:.3e})",
            sol.sigma_min, sol.sigma_second
        )));
    }
    let ids = views.iter().map(|v| v.source_view.clone()).collect();
    JolimasModel::from_dual_quadric(&sol.q, mode, ids, sol.sigma_min / sol.sigma_second)
}

/// Canonical views in the given mode. Views whose warp fails are skipped
/// and reported by index.
pub fn canonical_views(
    observations: &[(&SpecularObservation, &CameraView)],
    surface: &SurfaceModel,
    mode: Mode,
    light: Option<&LightModel>,
    warp: &WarpConfig,
) -> (Vec<CanonicalView>, Vec<(usize, ModelError)>) {
    let mut views = Vec::new();
    let mut failed = Vec::new();
    for (i, (obs, view)) in observations.iter().enumerate() {
        let contour = match mode {
            Mode::Canonical => {
                let l = light.copied().unwrap_or_else(|| LightModel::mirror_of_view(&obs.p_b, &view.center()));
                forward_warp(obs, surface, &l, view, warp).map(|(_, c)| c)
            }
            Mode::DualBaseline => backproject_to_tangent(obs, view, warp.directions),
        };
        match contour.map_err(ModelError::from).and_then(|c| make_canonical_view(obs, &c, view)) {
            Ok(v) => views.push(v),
            Err(e) => failed.push((i, e)),
        }
    }
    (views, failed)
}

/// Observations to model. In canonical mode the first pass lights each view
/// by the mirror of its view ray; the second uses the provisional center.
pub fn reconstruct_from_observations(
    observations: &[(&SpecularObservation, &CameraView)],
    surface: &SurfaceModel,
    mode: Mode,
    config: &ReconstructConfig,
) -> Result<JolimasModel, ModelError> {
    let (views, failed) = canonical_views(observations, surface, mode, None, &config.warp);
    for (i, e) in &failed {
        log::warn!("view {} dropped: {e}", observations[*i].0.view_id);
    }
    let model = reconstruct(&views, mode, config)?;
    if mode == Mode::DualBaseline || !config.two_pass {
        return Ok(model);
    }
    let (views, _) = canonical_views(observations, surface, mode, Some(&model.light()), &config.warp);
    reconstruct(&views, mode, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    pub warp: WarpConfig,
    /// Seeds per side of the brightest-point search grid.
    pub seed_grid: usize,
    pub max_iterations: usize,
    pub alpha_tolerance: f64,
    /// Largest seed angle still counted as a visible reflection.
    pub max_seed_angle: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            warp: WarpConfig::default(),
            seed_grid: 64,
            max_iterations: 100,
            alpha_tolerance: 1e-4,
            max_seed_angle: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedSpecularity {
    pub view_id: String,
    pub p_b: SurfacePoint,
    pub contour_img: Vec<Vec2>,
    pub ellipse_img: Ellipse,
    pub n_failed_directions: usize,
}

fn visible(surface: &SurfaceModel, view: &CameraView, p: &SurfacePoint) -> bool {
    let eye = view.center();
    let Some(px) = view.project(&p.position) else {
        return false;
    };
    if !view.contains_pixel(&px, 0.0) || p.normal.dot(&(eye - p.position)) <= 0.0 {
        return false;
    }
    let d = p.position - eye;
    let dist = d.norm();
    surface
        .intersect_ray(&eye, &(d / dist))
        .is_some_and(|hit| (hit.position - p.position).norm() < 1e-6 * dist.max(1.0))
}

fn visible_seeds(surface: &SurfaceModel, view: &CameraView, n: usize) -> Vec<SurfacePoint> {
    match surface.seeds(n) {
        Some(seeds) => seeds.into_iter().filter(|s| visible(surface, view, s)).collect(),
        None => {
            let eye = view.center();
            let (w, h) = (f64::from(view.width), f64::from(view.height));
            (0..n * n)
                .filter_map(|k| {
                    let (i, j) = ((k % n) as f64, (k / n) as f64);
                    let ray = view.pixel_ray((i + 0.5) * w / n as f64 - 0.5, (j + 0.5) * h / n as f64 - 0.5);
                    surface.intersect_ray(&eye, &ray)
                })
                .collect()
        }
    }
}

/// Surface point of smallest incident angle for the light at `light`.
pub fn predict_brightest_point(
    surface: &SurfaceModel,
    view: &CameraView,
    light: &Vec3,
    config: &PredictConfig,
) -> Result<SurfacePoint, ModelError> {
    let eye = view.center();
    let l = LightModel::Point(*light);
    let angle = |p: &SurfacePoint| limit_angle_at(p, &l, &eye).unwrap_or(f64::INFINITY);
    let seeds = visible_seeds(surface, view, config.seed_grid);
    let (mut best, mut a_best) = seeds
        .iter()
        .map(|s| (*s, angle(s)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(ModelError::NoVisibleReflection(f64::INFINITY))?;
    if a_best > config.max_seed_angle {
        return Err(ModelError::NoVisibleReflection(a_best));
    }
    let mut h = seeds
        .iter()
        .map(|s| (s.position - best.position).norm())
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !h.is_finite() {
        h = 1e-2 * (best.position - eye).norm();
    }
    let min_h = 1e-12 * (best.position - eye).norm();
    for _ in 0..config.max_iterations {
        if a_best < config.alpha_tolerance || h < min_h {
            break;
        }
        let frame = TangentFrame::new(&best, view);
        let step = (0..8)
            .filter_map(|i| surface.walk(&best, &frame.direction(i, 8), h).ok())
            .map(|(q, _)| (q, angle(&q)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match step {
            Some((q, a)) if a < a_best => {
                best = q;
                a_best = a;
            }
            _ => h *= 0.5,
        }
    }
    Ok(best)
}

fn fit_projected(view: &CameraView, pts: &[Option<Vec3>]) -> Result<(Vec<Vec2>, usize, Ellipse), ModelError> {
    let contour: Vec<Vec2> = pts.iter().flatten().filter_map(|p| view.project(p)).collect();
    let failed = pts.len() - contour.len();
    let ellipse = fit_ellipse(&contour)?;
    Ok((contour, failed, ellipse))
}

/// Ellipse of the model's highlight on the tangent plane at `p_b`, in frame
/// coordinates.
fn tangent_ellipse(model: &JolimasModel, view: &CameraView, frame: &TangentFrame) -> Result<Ellipse, ModelError> {
    let virtual_camera = mirror_camera(view, &frame.plane());
    let conic = project_dual_quadric(&virtual_camera, &model.q_star).dual();
    let mut lift = SMatrix::<f64, 4, 3>::zeros();
    lift.fixed_view_mut::<3, 1>(0, 0).copy_from(&frame.e1);
    lift.fixed_view_mut::<3, 1>(0, 1).copy_from(&frame.e2);
    lift.fixed_view_mut::<3, 1>(0, 2).copy_from(&frame.origin);
    lift[(3, 2)] = 1.0;
    let m = virtual_camera.0 * lift;
    Ok(Conic::new(m.transpose() * conic.0 * m).to_ellipse()?)
}

/// Highlight prediction in the given mode, whatever the model was built with.
pub fn predict_in_mode(
    model: &JolimasModel,
    view: &CameraView,
    surface: &SurfaceModel,
    mode: Mode,
    config: &PredictConfig,
) -> Result<PredictedSpecularity, ModelError> {
    let light = model.light();
    let p_b = predict_brightest_point(surface, view, &model.shape.center, config)?;
    let frame = TangentFrame::new(&p_b, view);
    let ellipse_t = tangent_ellipse(model, view, &frame)?;
    if !ellipse_t.contains(&Vec2::zeros()) {
        return Err(WarpError::BrightestOutsideContour.into());
    }
    let n = config.warp.directions;
    let pts = match mode {
        Mode::Canonical => {
            let fan = fan_from_tangent_ellipse(&p_b, &frame, &ellipse_t, &light, view, n);
            let step = 2.0 * ellipse_t.semi_major / config.warp.steps_per_diameter;
            inverse_warp(&fan, surface, &light, view, step, &config.warp)?
        }
        Mode::DualBaseline => (0..n)
            .map(|i| {
                let d = frame.direction(i, n);
                let d2 = Vec2::new(d.dot(&frame.e1), d.dot(&frame.e2));
                ellipse_t.ray_exit(&Vec2::zeros(), &d2).map(|s| frame.to_world(&(d2 * s)))
            })
            .collect(),
    };
    let (contour_img, n_failed_directions, ellipse_img) = fit_projected(view, &pts)?;
    Ok(PredictedSpecularity {
        view_id: view.id.clone(),
        p_b,
        contour_img,
        ellipse_img,
        n_failed_directions,
    })
}

/// Highlight prediction through the canonical representation.
pub fn predict(
    model: &JolimasModel,
    view: &CameraView,
    surface: &SurfaceModel,
    config: &PredictConfig,
) -> Result<PredictedSpecularity, ModelError> {
    predict_in_mode(model, view, surface, Mode::Canonical, config)
}

/// Prediction without limit-angle warps: the tangent-plane contour is
/// projected straight into the camera.
pub fn predict_dual_baseline(
    model: &JolimasModel,
    view: &CameraView,
    surface: &SurfaceModel,
    config: &PredictConfig,
) -> Result<PredictedSpecularity, ModelError> {
    predict_in_mode(model, view, surface, Mode::DualBaseline, config)
}

/// Prediction in the model's own mode.
pub fn predict_with_model_mode(
    model: &JolimasModel,
    view: &CameraView,
    surface: &SurfaceModel,
    config: &PredictConfig,
) -> Result<PredictedSpecularity, ModelError> {
    predict_in_mode(model, view, surface, model.mode, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    #[serde(rename = "Q_star")]
    pub q_star: [f64; 16],
    pub center: [f64; 3],
    pub axes: [f64; 3],
    /// Row-major; columns are the principal directions.
    pub rotation: [f64; 9],
    pub source_view_ids: Vec<String>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub residual: f64,
}

fn default_mode() -> Mode {
    Mode::Canonical
}

impl From<&JolimasModel> for ModelRecord {
    fn from(m: &JolimasModel) -> Self {
        let q = &m.q_star.0;
        let mut q_star = [0.0; 16];
        let mut rotation = [0.0; 9];
        for r in 0..4 {
            for c in 0..4 {
                q_star[4 * r + c] = q[(r, c)];
            }
        }
        for r in 0..3 {
            for c in 0..3 {
                rotation[3 * r + c] = m.shape.rotation[(r, c)];
            }
        }
        Self {
            q_star,
            center: m.shape.center.into(),
            axes: m.shape.axes.into(),
            rotation,
            source_view_ids: m.source_view_ids.clone(),
            mode: m.mode,
            residual: m.residual,
        }
    }
}

impl TryFrom<ModelRecord> for JolimasModel {
    type Error = ModelError;

    fn try_from(r: ModelRecord) -> Result<Self, ModelError> {
        let q = Matrix4::from_row_slice(&r.q_star);
        let q_star = DualQuadric::new(q);
        q_star.decode()?;
        Ok(Self {
            q_star,
            shape: EllipsoidShape {
                center: Vector3::from(r.center),
                axes: Vector3::from(r.axes),
                rotation: Matrix3::from_row_slice(&r.rotation),
            },
            mode: r.mode,
            source_view_ids: r.source_view_ids,
            residual: r.residual,
        })
    }
}

pub fn model_to_json(model: &JolimasModel) -> String {
    let mut s = serde_json::to_string_pretty(&ModelRecord::from(model)).expect("model records serialize");
    s.push('\n');
    s
}

pub fn model_from_json(text: &str, origin: &str) -> Result<JolimasModel, ModelError> {
    let rec: ModelRecord = serde_json::from_str(text).map_err(|e| ModelError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    JolimasModel::try_from(rec)
}

pub fn save_model(model: &JolimasModel, path: &Path) -> Result<(), ModelError> {
    fs::write(path, model_to_json(model)).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<JolimasModel, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_json(&text, &path.display().to_string())
}
