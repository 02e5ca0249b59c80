//! Limit angles and the warp between highlight contours on a curved surface
//! and the tangent plane at the brightest point.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::SpecularObservation;
use crate::geom::{fit_ellipse, CameraView, Ellipse, GeomError, PlaneH, Vec2, Vec3};
use crate::shading::{halfway_from_directions, incident_angle, ShadingError};
use crate::surfaces::{any_perpendicular, tangent_plane, SurfaceError, SurfaceModel, SurfacePoint};

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("only {0} warp directions survived")]
    WarpFailed(usize),
    #[error("brightest point lies outside the highlight contour")]
    BrightestOutsideContour,
    #[error(transparent)]
    Shading(#[from] ShadingError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Light used for half-way vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LightModel {
    Point(Vec3),
    /// Unit direction toward the light.
    Directional(Vec3),
}

impl LightModel {
    pub fn direction_from(&self, p: &Vec3) -> Vec3 {
        match self {
            Self::Point(l) => (l - p).normalize(),
            Self::Directional(d) => *d,
        }
    }

    /// Directional light whose mirror direction about `sp.normal` is the
    /// view ray from `eye`, so that `α = 0` at `sp`.
    pub fn mirror_of_view(sp: &SurfacePoint, eye: &Vec3) -> Self {
        let v = (eye - sp.position).normalize();
        let n = sp.normal;
        Self::Directional((n * (2.0 * n.dot(&v)) - v).normalize())
    }
}

/// Incident angle at a surface point for a given light and viewer.
pub fn limit_angle_at(p: &SurfacePoint, light: &LightModel, eye: &Vec3) -> Result<f64, ShadingError> {
    angle_with_normal(&p.position, &p.normal, light, eye)
}

fn angle_with_normal(p: &Vec3, n: &Vec3, light: &LightModel, eye: &Vec3) -> Result<f64, ShadingError> {
    let v = (eye - p).try_normalize(1e-300).ok_or(ShadingError::Degenerate)?;
    let h = halfway_from_directions(&light.direction_from(p), &v)?;
    Ok(incident_angle(n, &h))
}

/// Orthonormal frame of the tangent plane at the brightest point. `e1` is
/// the camera's x axis projected onto the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame {
    pub origin: Vec3,
    pub normal: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl TangentFrame {
    pub fn new(p_b: &SurfacePoint, view: &CameraView) -> Self {
        let n = p_b.normal;
        let r = view.right();
        let e1 = (r - n * n.dot(&r)).try_normalize(1e-9).unwrap_or_else(|| any_perpendicular(&n));
        Self {
            origin: p_b.position,
            normal: n,
            e1,
            e2: n.cross(&e1),
        }
    }

    pub fn plane(&self) -> PlaneH {
        tangent_plane(&SurfacePoint::new(self.origin, self.normal))
    }

    pub fn to_local(&self, p: &Vec3) -> Vec2 {
        let d = p - self.origin;
        Vec2::new(d.dot(&self.e1), d.dot(&self.e2))
    }

    pub fn to_world(&self, q: &Vec2) -> Vec3 {
        self.origin + self.e1 * q.x + self.e2 * q.y
    }

    pub fn direction(&self, i: usize, n: usize) -> Vec3 {
        let t = 2.0 * PI * i as f64 / n as f64;
        self.e1 * t.cos() + self.e2 * t.sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpConfig {
    pub directions: usize,
    /// Base march step as a fraction of the highlight's major diameter.
    pub steps_per_diameter: f64,
    pub max_steps: usize,
    /// Step halvings allowed while closing in on a crossing.
    pub refinements: u32,
    pub min_directions: usize,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            directions: 36,
            steps_per_diameter: 50.0,
            max_steps: 10_000,
            refinements: 4,
            min_directions: 8,
        }
    }
}

/// Per-direction limit angles around a brightest point. `None` marks a
/// dropped direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitAngleFan {
    pub p_b: SurfacePoint,
    pub frame: TangentFrame,
    pub alpha_max: Vec<Option<f64>>,
}

impl LimitAngleFan {
    pub fn n(&self) -> usize {
        self.alpha_max.len()
    }

    pub fn directions(&self) -> Vec<Vec3> {
        (0..self.n()).map(|i| self.frame.direction(i, self.n())).collect()
    }

    pub fn survivors(&self) -> usize {
        self.alpha_max.iter().flatten().count()
    }
}

/// Highlight contour on the tangent plane.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalContour {
    pub frame: TangentFrame,
    /// Per-direction points (`None` when dropped).
    pub points: Vec<Option<Vec3>>,
    /// Ellipse fitted to the surviving points in `(e1, e2)` coordinates.
    pub ellipse_t: Ellipse,
}

impl CanonicalContour {
    pub fn plane(&self) -> PlaneH {
        self.frame.plane()
    }

    pub fn surviving(&self) -> Vec<Vec3> {
        self.points.iter().flatten().copied().collect()
    }

    fn from_points(frame: TangentFrame, points: Vec<Option<Vec3>>) -> Result<Self, WarpError> {
        let local: Vec<Vec2> = points.iter().flatten().map(|p| frame.to_local(p)).collect();
        let ellipse_t = fit_ellipse(&local)?;
        Ok(Self {
            frame,
            points,
            ellipse_t,
        })
    }
}

/// Largest pairwise distance in a point set.
pub fn major_diameter(points: &[Vec3]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Smallest parameter `t ∈ [0, 1]` where segment `a→b` crosses the closed
/// polygon.
fn polygon_crossing(a: &Vec2, b: &Vec2, poly: &[Vec2]) -> Option<f64> {
    let d = b - a;
    let mut best: Option<f64> = None;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let e = q - p;
        let den = d.x * e.y - d.y * e.x;
        if den.abs() < 1e-300 {
            continue;
        }
        let w = p - a;
        let t = (w.x * e.y - w.y * e.x) / den;
        let s = (w.x * d.y - w.y * d.x) / den;
        if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&s) && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    best
}

fn point_in_polygon(p: &Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + n - 1) % n]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
    }
    inside
}

/// Walks on `surface` from `start` along `dir` until `crossed` reports an
/// event within the last step, halving the step near it. `finish` turns the
/// bracketing pair and the event fraction into the result.
fn march_on_surface<F, G, T>(
    surface: &SurfaceModel,
    start: &SurfacePoint,
    dir: &Vec3,
    base_step: f64,
    config: &WarpConfig,
    mut crossed: F,
    finish: G,
) -> Option<T>
where
    F: FnMut(&SurfacePoint, &SurfacePoint) -> Option<f64>,
    G: Fn(&SurfacePoint, &SurfacePoint, f64) -> Option<T>,
{
    let mut cur = *start;
    let mut d = *dir;
    let mut h = base_step;
    let min_h = base_step / f64::from(1u32 << config.refinements);
    for _ in 0..config.max_steps {
        let (q, dq) = surface.walk(&cur, &d, h).ok()?;
        match crossed(&cur, &q) {
            Some(_) if h > min_h => h *= 0.5,
            Some(t) => return finish(&cur, &q, t),
            None => {
                cur = q;
                d = dq;
            }
        }
    }
    None
}

/// Marches the straight tangent-plane ray from the frame origin along `dir`
/// until the incident angle (fixed plane normal) reaches `target`.
fn march_on_plane(
    frame: &TangentFrame,
    dir: &Vec3,
    target: f64,
    light: &LightModel,
    eye: &Vec3,
    base_step: f64,
    config: &WarpConfig,
) -> Option<Vec3> {
    let alpha = |s: f64| angle_with_normal(&(frame.origin + dir * s), &frame.normal, light, eye).ok();
    let mut s0 = 0.0;
    for _ in 0..config.max_steps {
        let s1 = s0 + base_step;
        if alpha(s1)? >= target {
            let (mut lo, mut hi) = (s0, s1);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if alpha(mid)? >= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(frame.origin + dir * (0.5 * (lo + hi)));
        }
        s0 = s1;
    }
    None
}

/// Limit angles along `n` tangent directions, measured where a walk on the
/// surface leaves the observed contour, and the matching points on the
/// tangent plane.
pub fn forward_warp(
    obs: &SpecularObservation,
    surface: &SurfaceModel,
    light: &LightModel,
    view: &CameraView,
    config: &WarpConfig,
) -> Result<(LimitAngleFan, CanonicalContour), WarpError> {
    let eye = view.center();
    let frame = TangentFrame::new(&obs.p_b, view);
    let poly: Vec<Vec2> = obs.contour_s.iter().map(|p| frame.to_local(p)).collect();
    if !point_in_polygon(&Vec2::zeros(), &poly) {
        return Err(WarpError::BrightestOutsideContour);
    }
    let step = major_diameter(&obs.contour_s) / config.steps_per_diameter;
    let n = config.directions;
    let mut alpha_max = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let dir = frame.direction(i, n);
        let a = march_on_surface(
            surface,
            &obs.p_b,
            &dir,
            step,
            config,
            |p, q| polygon_crossing(&frame.to_local(&p.position), &frame.to_local(&q.position), &poly),
            |p, q, t| {
                let guess = p.position + (q.position - p.position) * t;
                let at = surface.closest_point(&guess, &p.position).ok()?;
                limit_angle_at(&at, light, &eye).ok()
            },
        );
        let pt = a.and_then(|a| march_on_plane(&frame, &dir, a, light, &eye, step, config));
        alpha_max.push(a.filter(|_| pt.is_some()));
        points.push(pt);
    }
    let survivors = points.iter().flatten().count();
    if survivors < config.min_directions.max(5) {
        return Err(WarpError::WarpFailed(survivors));
    }
    let fan = LimitAngleFan {
        p_b: obs.p_b,
        frame,
        alpha_max,
    };
    let contour = CanonicalContour::from_points(frame, points)?;
    Ok((fan, contour))
}

/// Marches on the surface from `fan.p_b` along each direction until the
/// incident angle reaches that direction's limit angle. `step` is the base
/// arc-length step.
pub fn inverse_warp(
    fan: &LimitAngleFan,
    surface: &SurfaceModel,
    light: &LightModel,
    view: &CameraView,
    step: f64,
    config: &WarpConfig,
) -> Result<Vec<Option<Vec3>>, WarpError> {
    let eye = view.center();
    let n = fan.n();
    let mut out = Vec::with_capacity(n);
    for (i, target) in fan.alpha_max.iter().enumerate() {
        let Some(target) = *target else {
            out.push(None);
            continue;
        };
        let dir = fan.frame.direction(i, n);
        let angle = |p: &SurfacePoint| limit_angle_at(p, light, &eye).ok();
        let p = march_on_surface(
            surface,
            &fan.p_b,
            &dir,
            step,
            config,
            |_, q| {
                let a = angle(q)?;
                (a >= target).then_some(1.0)
            },
            |p, q, _| {
                let at = |t: f64| surface.closest_point(&(p.position + (q.position - p.position) * t), &p.position).ok();
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if angle(&at(mid)?)? >= target {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                at(0.5 * (lo + hi)).map(|s| s.position)
            },
        );
        out.push(p);
    }
    let survivors = out.iter().flatten().count();
    if survivors < config.min_directions.max(5) {
        return Err(WarpError::WarpFailed(survivors));
    }
    Ok(out)
}

/// Tangent-plane limit angles of a canonical contour (one per direction,
/// measured where the direction ray leaves `ellipse_t`).
pub fn fan_from_tangent_ellipse(
    p_b: &SurfacePoint,
    frame: &TangentFrame,
    ellipse_t: &Ellipse,
    light: &LightModel,
    view: &CameraView,
    n: usize,
) -> LimitAngleFan {
    let eye = view.center();
    let alpha_max = (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            let d = Vec2::new(t.cos(), t.sin());
            let s = ellipse_t.ray_exit(&Vec2::zeros(), &d)?;
            let p = frame.to_world(&(d * s));
            angle_with_normal(&p, &frame.normal, light, &eye).ok()
        })
        .collect();
    LimitAngleFan {
        p_b: *p_b,
        frame: *frame,
        alpha_max,
    }
}

/// Dual-baseline canonical contour: the image contour back-projected onto
/// the tangent plane, no limit angles involved.
pub fn backproject_to_tangent(
    obs: &SpecularObservation,
    view: &CameraView,
    directions: usize,
) -> Result<CanonicalContour, WarpError> {
    let frame = TangentFrame::new(&obs.p_b, view);
    let plane = frame.plane();
    let eye = view.center();
    let poly: Vec<Vec2> = obs
        .contour_px
        .iter()
        .filter_map(|q| {
            let d = view.pixel_ray(q.x, q.y);
            plane.intersect_ray(&eye, &d).filter(|&t| t > 0.0).map(|t| frame.to_local(&(eye + d * t)))
        })
        .collect();
    if poly.len() < 5 || !point_in_polygon(&Vec2::zeros(), &poly) {
        return Err(WarpError::BrightestOutsideContour);
    }
    let reach = 2.0 * poly.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let points: Vec<Option<Vec3>> = (0..directions)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / directions as f64;
            let end = Vec2::new(t.cos(), t.sin()) * reach;
            polygon_crossing(&Vec2::zeros(), &end, &poly).map(|s| frame.to_world(&(end * s)))
        })
        .collect();
    let survivors = points.iter().flatten().count();
    if survivors < 5 {
        return Err(WarpError::WarpFailed(survivors));
    }
    CanonicalContour::from_points(frame, points)
}

/// Serializable fan for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanRecord {
    pub p_b: [f64; 3],
    pub normal: [f64; 3],
    pub directions: Vec<[f64; 3]>,
    pub alpha_max: Vec<Option<f64>>,
}

impl From<&LimitAngleFan> for FanRecord {
    fn from(f: &LimitAngleFan) -> Self {
        let arr = |v: &Vec3| [v.x, v.y, v.z];
        Self {
            p_b: arr(&f.p_b.position),
            normal: arr(&f.p_b.normal),
            directions: f.directions().iter().map(arr).collect(),
            alpha_max: f.alpha_max.clone(),
        }
    }
}
