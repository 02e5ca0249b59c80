//! Homogeneous geometry: cameras, mirror reflections, conics, dual quadrics
//! and ellipse fitting.

mod camera;
mod conic;
mod fit;
mod quadric;

pub use camera::{
    mirror_camera, reflect_across_plane, reflect_point, CameraRecord, CameraView, PlaneH,
    ProjectionMap, Vec2, Vec3,
};
pub use conic::{adjugate3, adjugate4, Conic, DualConic, Ellipse, SIGNATURE_TOLERANCE};
pub use fit::{fit_conic, fit_ellipse};
pub use quadric::{
    project_dual_quadric, project_dual_quadric_checked, DualQuadric, EllipsoidRecord,
    EllipsoidShape, Quadric,
};

use nalgebra::{allocator::Allocator, DefaultAllocator, Dim, OMatrix};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("conic is not a real ellipse")]
    NotAnEllipse,
    #[error("dual quadric is not a real ellipsoid")]
    NotAnEllipsoid,
    #[error("degenerate input for ellipse fit (need ≥ 5 non-collinear points)")]
    DegenerateInput,
    #[error("projection of the quadric is degenerate")]
    DegenerateProjection,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("plane normal must be nonzero")]
    InvalidPlane,
}

/// Scales a homogeneous quantity to unit Frobenius norm with its
/// largest-magnitude entry positive.
pub fn normalize_homogeneous<R: Dim, C: Dim>(m: &OMatrix<f64, R, C>) -> OMatrix<f64, R, C>
where
    DefaultAllocator: Allocator<R, C>,
{
    let norm = m.norm();
    if norm == 0.0 {
        return m.clone();
    }
    let pivot = m
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(1.0);
    m / (norm * pivot.signum())
}

/// Frobenius distance between two homogeneous quantities after
/// [`normalize_homogeneous`].
pub fn normalized_difference<R: Dim, C: Dim>(a: &OMatrix<f64, R, C>, b: &OMatrix<f64, R, C>) -> f64
where
    DefaultAllocator: Allocator<R, C>,
{
    let na = normalize_homogeneous(a);
    let nb = normalize_homogeneous(b);
    // The pivot sign can flip between near-equal entries; compare both signs.
    (&na - &nb).norm().min((&na + &nb).norm())
}
