//! Surface models and the geometric queries on them.

mod analytic;
mod grid;
mod mesh;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analytic::{CylinderSurface, EllipsoidSurface, PlaneSurface, SphereSurface};
pub use grid::{decode_grids, encode_grids, GridOptions, GridSurface, DEFAULT_DEPTH_SCALE};
pub use mesh::TriangleMesh;

use crate::geom::{CameraRecord, CameraView, EllipsoidRecord, EllipsoidShape, PlaneH, Vec3};

#[allow(unused_imports)]
pub(crate) use analytic::any_perpendicular;

/// Tolerance on `|implicit(p)|` for normal queries on parametric variants.
pub const ON_SURFACE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurfaceError {
    #[error("point is not on the surface")]
    OffSurface,
    #[error("closest point is ambiguous and the hint does not resolve it")]
    Ambiguous,
    #[error("surface walk stalled")]
    StalledWalk,
    #[error("walk direction is not tangent to the surface")]
    NotTangent,
    #[error("invalid surface: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("mesh has faceted normals")]
    Faceted,
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub position: Vec3,
    pub normal: Vec3,
}

impl SurfacePoint {
    /// Renormalizes `normal`.
    pub fn new(position: Vec3, normal: Vec3) -> Self {
        Self {
            position,
            normal: normal.normalize(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SurfaceModel {
    Plane(PlaneSurface),
    Cylinder(CylinderSurface),
    Sphere(SphereSurface),
    Ellipsoid(EllipsoidSurface),
    Mesh(Arc<TriangleMesh>),
    Grid(Arc<GridSurface>),
}

impl SurfaceModel {
    pub fn plane(plane: PlaneH) -> Self {
        Self::Plane(PlaneSurface::unbounded(plane))
    }

    pub fn sphere(center: Vec3, radius: f64) -> Result<Self, SurfaceError> {
        SphereSurface::new(center, radius).map(Self::Sphere)
    }

    pub fn cylinder(axis_point: Vec3, axis_dir: Vec3, radius: f64) -> Result<Self, SurfaceError> {
        CylinderSurface::new(axis_point, axis_dir, radius).map(Self::Cylinder)
    }

    pub fn ellipsoid(shape: EllipsoidShape) -> Result<Self, SurfaceError> {
        EllipsoidSurface::new(shape).map(Self::Ellipsoid)
    }

    /// Signed implicit residual for parametric variants (`None` for sampled
    /// surfaces).
    pub fn implicit(&self, p: &Vec3) -> Option<f64> {
        match self {
            Self::Plane(s) => Some(s.plane.signed_distance(p)),
            Self::Cylinder(s) => Some(s.implicit(p)),
            Self::Sphere(s) => Some(s.implicit(p)),
            Self::Ellipsoid(s) => Some(s.implicit(p)),
            Self::Mesh(_) | Self::Grid(_) => None,
        }
    }

    pub fn normal_at(&self, p: &Vec3) -> Result<Vec3, SurfaceError> {
        if let Some(r) = self.implicit(p) {
            if !(r.abs() <= ON_SURFACE_TOLERANCE) {
                return Err(SurfaceError::OffSurface);
            }
        }
        match self {
            Self::Plane(s) => Ok(s.plane.normal()),
            Self::Cylinder(s) => s.normal_at(p).ok_or(SurfaceError::OffSurface),
            Self::Sphere(s) => s.normal_at(p).ok_or(SurfaceError::OffSurface),
            Self::Ellipsoid(s) => s.normal_at(p).ok_or(SurfaceError::OffSurface),
            Self::Mesh(m) => m.normal_at(p),
            Self::Grid(g) => g.normal_at(p),
        }
    }

    /// Nearest hit with positive ray parameter.
    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<SurfacePoint> {
        match self {
            Self::Plane(s) => s.intersect_ray(origin, dir),
            Self::Cylinder(s) => s.intersect_ray(origin, dir),
            Self::Sphere(s) => s.intersect_ray(origin, dir),
            Self::Ellipsoid(s) => s.intersect_ray(origin, dir),
            Self::Mesh(m) => m.intersect_ray(origin, dir),
            Self::Grid(g) => g.intersect_ray(origin, dir),
        }
    }

    /// Orthogonal projection of `p` onto the surface. `hint` selects the
    /// minimizer when several are equidistant.
    pub fn closest_point(&self, p: &Vec3, hint: &Vec3) -> Result<SurfacePoint, SurfaceError> {
        match self {
            Self::Plane(s) => Ok(s.closest_point(p)),
            Self::Cylinder(s) => s.closest_point(p, hint),
            Self::Sphere(s) => s.closest_point(p, hint),
            Self::Ellipsoid(s) => s.closest_point(p, hint),
            Self::Mesh(m) => Ok(m.closest_point(p)),
            Self::Grid(g) => g.closest_point(p),
        }
    }

    /// One step-and-project move of arc length `step` along `dir`. Returns
    /// the new point and `dir` re-projected onto its tangent plane.
    pub fn walk(&self, start: &SurfacePoint, dir: &Vec3, step: f64) -> Result<(SurfacePoint, Vec3), SurfaceError> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(SurfaceError::Invalid(format!("walk step must be positive, got {step}")));
        }
        if dir.dot(&start.normal).abs() > 1e-6 {
            return Err(SurfaceError::NotTangent);
        }
        let target = start.position + dir * step;
        let q = self.closest_point(&target, &start.position)?;
        if (q.position - start.position).norm() < 0.1 * step {
            return Err(SurfaceError::StalledWalk);
        }
        let t = (dir - q.normal * dir.dot(&q.normal))
            .try_normalize(1e-12)
            .ok_or(SurfaceError::StalledWalk)?;
        Ok((q, t))
    }

    /// Surface samples for seeding searches (`None` for unbounded variants).
    pub fn seeds(&self, n: usize) -> Option<Vec<SurfacePoint>> {
        match self {
            Self::Plane(s) => s.seeds(n),
            Self::Cylinder(s) => s.seeds(n),
            Self::Sphere(s) => Some(s.seeds(n)),
            Self::Ellipsoid(s) => Some(s.seeds(n)),
            Self::Mesh(m) => {
                let step = (m.vertices().len() / (n * n).max(1)).max(1);
                Some(
                    (0..m.vertices().len())
                        .step_by(step)
                        .map(|i| SurfacePoint::new(m.vertices()[i], m.normals()[i]))
                        .collect(),
                )
            }
            Self::Grid(g) => Some(g.seeds(n)),
        }
    }
}

pub fn tangent_plane(sp: &SurfacePoint) -> PlaneH {
    PlaneH::new(sp.normal, -sp.normal.dot(&sp.position)).expect("surface normals are unit length")
}

/// Flat sheet dimensions: `width` across the bending direction (x),
/// `length` along the bending axis (y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorphExtent {
    pub width: f64,
    pub length: f64,
}

/// The sheet `z = 0` bent with curvature `kappa` about an axis parallel to
/// y. The center line `x = 0` stays fixed and sheet width is kept as arc
/// length.
pub fn morph_surface(kappa: f64, extent: MorphExtent) -> Result<SurfaceModel, SurfaceError> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(SurfaceError::Invalid(format!("curvature must be non-negative, got {kappa}")));
    }
    if kappa == 0.0 {
        return Ok(SurfaceModel::Plane(PlaneSurface {
            plane: PlaneH::new(Vec3::z(), 0.0).expect("unit normal"),
            origin: Vec3::zeros(),
            u_axis: Vec3::x(),
            half_extent: Some([extent.width / 2.0, extent.length / 2.0]),
        }));
    }
    let r = 1.0 / kappa;
    Ok(SurfaceModel::Cylinder(CylinderSurface {
        axis_point: Vec3::new(0.0, 0.0, -r),
        axis_dir: Vec3::y(),
        radius: r,
        ref_dir: Vec3::z(),
        half_angle: Some(kappa * extent.width / 2.0),
        half_length: Some(extent.length / 2.0),
    }))
}

/// JSON description of a surface. Paths are relative to the scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SurfaceSpec {
    Plane {
        normal: [f64; 3],
        offset: f64,
    },
    Cylinder {
        axis_point: [f64; 3],
        axis_dir: [f64; 3],
        radius: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Ellipsoid(EllipsoidRecord),
    Morph {
        kappa: f64,
        #[serde(flatten)]
        extent: MorphExtent,
    },
    Mesh {
        path: String,
    },
    Grid {
        depth: String,
        normals: String,
        camera: CameraRecord,
        #[serde(default)]
        normal_smoothing: f64,
    },
}

impl SurfaceSpec {
    pub fn build(&self, base_dir: &Path) -> Result<SurfaceModel, SurfaceError> {
        match self {
            Self::Plane { normal, offset } => PlaneH::new(Vec3::from(*normal), *offset)
                .map(SurfaceModel::plane)
                .map_err(|e| SurfaceError::Invalid(e.to_string())),
            Self::Cylinder {
                axis_point,
                axis_dir,
                radius,
            } => SurfaceModel::cylinder(Vec3::from(*axis_point), Vec3::from(*axis_dir), *radius),
            Self::Sphere { center, radius } => SurfaceModel::sphere(Vec3::from(*center), *radius),
            Self::Ellipsoid(rec) => SurfaceModel::ellipsoid(EllipsoidShape::from(rec)),
            Self::Morph { kappa, extent } => morph_surface(*kappa, *extent),
            Self::Mesh { path } => {
                let p = base_dir.join(path);
                let f = std::fs::File::open(&p).map_err(|e| SurfaceError::Io(format!("{}: {e}", p.display())))?;
                TriangleMesh::read_off(f).map(|m| SurfaceModel::Mesh(Arc::new(m)))
            }
            Self::Grid {
                depth,
                normals,
                camera,
                normal_smoothing,
            } => {
                let camera = CameraView::try_from(camera.clone()).map_err(|e| SurfaceError::Invalid(e.to_string()))?;
                GridSurface::read_files(
                    &base_dir.join(depth),
                    &base_dir.join(normals),
                    camera,
                    GridOptions {
                        normal_smoothing: *normal_smoothing,
                    },
                )
                .map(|g| SurfaceModel::Grid(Arc::new(g)))
            }
        }
    }
}
