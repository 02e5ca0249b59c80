//! Dual quadrics and their projections.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::conic::{adjugate4, DualConic};
use super::{GeomError, ProjectionMap, Vec3};

/// Dual (tangent-plane) quadric `πᵀ Q* π = 0`, homogeneous 4×4 symmetric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuadric(pub Matrix4<f64>);

/// Point quadric `Xᵀ Q X = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadric(pub Matrix4<f64>);

impl DualQuadric {
    pub fn new(m: Matrix4<f64>) -> Self {
        Self(0.5 * (m + m.transpose()))
    }

    pub fn normalized(&self) -> Self {
        Self(super::normalize_homogeneous(&self.0))
    }

    pub fn adjoint(&self) -> Quadric {
        Quadric(adjugate4(&self.0))
    }

    /// Applies a point transform `X' = T·X` to the quadric: `T Q* Tᵀ`.
    pub fn transformed(&self, t: &Matrix4<f64>) -> Self {
        Self(t * self.0 * t.transpose())
    }

    /// Decodes center, semi-axes and orientation of a real ellipsoid.
    pub fn decode(&self) -> Result<EllipsoidShape, GeomError> {
        let q = self.0 / self.0.norm();
        let w = q[(3, 3)];
        if !(w.abs() > 1e-12) || !w.is_finite() {
            return Err(GeomError::NotAnEllipsoid);
        }
        let q = q / -w;
        let center = Vec3::new(q[(0, 3)], q[(1, 3)], q[(2, 3)]) / q[(3, 3)];
        let shape = q.fixed_view::<3, 3>(0, 0).into_owned() + center * center.transpose();
        let eig = SymmetricEigen::new(0.5 * (shape + shape.transpose()));
        let max = eig.eigenvalues.amax();
        if eig.eigenvalues.iter().any(|&l| l <= 1e-12 * max) {
            return Err(GeomError::NotAnEllipsoid);
        }
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let axes = Vec3::from_fn(|i, _| eig.eigenvalues[order[i]].sqrt());
        let mut rotation =
            Matrix3::from_fn(|r, c| eig.eigenvectors[(r, order[c])]);
        if rotation.determinant() < 0.0 {
            rotation.column_mut(2).neg_mut();
        }
        Ok(EllipsoidShape {
            center,
            axes,
            rotation,
        })
    }
}

/// `C* = P·Q*·Pᵀ`.
pub fn project_dual_quadric(p: &ProjectionMap, q: &DualQuadric) -> DualConic {
    DualConic::new(p.0 * q.0 * p.0.transpose())
}

/// As [`project_dual_quadric`], but flags projections that cannot be an
/// image ellipse: rank-deficient `C*`, or a quadric center on the camera's
/// principal plane.
pub fn project_dual_quadric_checked(
    p: &ProjectionMap,
    q: &DualQuadric,
) -> Result<DualConic, GeomError> {
    let c = project_dual_quadric(p, q);
    if c.rank() < 3 {
        return Err(GeomError::DegenerateProjection);
    }
    if let Ok(shape) = q.decode() {
        let h = p.apply(&shape.center);
        let scale = p.0.fixed_view::<3, 3>(0, 0).norm() * shape.center.norm().max(1.0) + p.0.column(3).norm();
        if h.z.abs() < 1e-12 * scale {
            return Err(GeomError::DegenerateProjection);
        }
    }
    Ok(c)
}

/// Ellipsoid `(x − c)ᵀ R diag(axes)⁻² Rᵀ (x − c) = 1`; columns of `rotation`
/// are the principal directions, `axes` sorted descending after decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidShape {
    pub center: Vec3,
    pub axes: Vec3,
    pub rotation: Matrix3<f64>,
}

impl EllipsoidShape {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Self {
            center,
            axes: Vec3::repeat(radius),
            rotation: Matrix3::identity(),
        }
    }

    pub fn to_dual_quadric(&self) -> DualQuadric {
        let s = self.rotation
            * Matrix3::from_diagonal(&self.axes.component_mul(&self.axes))
            * self.rotation.transpose();
        let c = self.center;
        let mut q = Matrix4::zeros();
        q.fixed_view_mut::<3, 3>(0, 0).copy_from(&(s - c * c.transpose()));
        q.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-c));
        q.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-c.transpose()));
        q[(3, 3)] = -1.0;
        DualQuadric(q)
    }
}

/// Serialized form of a [`EllipsoidShape`] (rotation row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidRecord {
    pub center: [f64; 3],
    pub axes: [f64; 3],
    pub rotation: [f64; 9],
}

impl From<&EllipsoidShape> for EllipsoidRecord {
    fn from(s: &EllipsoidShape) -> Self {
        let mut rotation = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rotation[3 * r + c] = s.rotation[(r, c)];
            }
        }
        Self {
            center: [s.center.x, s.center.y, s.center.z],
            axes: [s.axes.x, s.axes.y, s.axes.z],
            rotation,
        }
    }
}

impl From<&EllipsoidRecord> for EllipsoidShape {
    fn from(r: &EllipsoidRecord) -> Self {
        Self {
            center: Vec3::from(r.center),
            axes: Vec3::from(r.axes),
            rotation: Matrix3::from_row_slice(&r.rotation),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{normalized_difference, CameraView};
    use approx::assert_relative_eq;
    use nalgebra::Vector4;

    fn translation(t: Vec3) -> Matrix4<f64> {
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        h
    }

    #[test]
    fn unit_sphere_decodes() {
        let q = DualQuadric(Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, -1.0)));
        let s = q.decode().unwrap();
        assert_relative_eq!(s.center, Vec3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(s.axes, Vec3::repeat(1.0), epsilon = 1e-12);

        let moved = q.transformed(&translation(Vec3::new(1.0, 2.0, 3.0)));
        let s = moved.decode().unwrap();
        assert_relative_eq!(s.center, Vec3::new(1.0, 2.0, 3.0), epsilon = 1e-12);
        assert_relative_eq!(s.axes, Vec3::repeat(1.0), epsilon = 1e-12);
        assert_relative_eq!(moved.0, EllipsoidShape::sphere(Vec3::new(1.0, 2.0, 3.0), 1.0).to_dual_quadric().0, epsilon = 1e-12);
    }

    #[test]
    fn mixed_signature_is_not_an_ellipsoid() {
        let q = DualQuadric(Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, -1.0, -1.0)));
        assert_eq!(q.decode(), Err(GeomError::NotAnEllipsoid));
        let at_infinity = DualQuadric(Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, 0.0)));
        assert_eq!(at_infinity.decode(), Err(GeomError::NotAnEllipsoid));
    }

    #[test]
    fn sphere_projection_radius() {
        // Camera at (0,0,5) looking at the origin with K = I.
        let cam = CameraView::look_at("k", 1.0, 1.0, 1, 1, Vec3::new(0.0, 0.0, 5.0), Vec3::zeros(), Vec3::y()).unwrap();
        let mut cam = cam;
        cam.cx = 0.0;
        cam.cy = 0.0;
        let q = EllipsoidShape::sphere(Vec3::zeros(), 1.0).to_dual_quadric();
        let e = project_dual_quadric(&cam.projection(), &q).dual().to_ellipse().unwrap();
        assert_relative_eq!(e.semi_major, 1.0 / 24f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(e.semi_minor, 1.0 / 24f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(e.center().norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn point_quadric_projects_to_rank_one() {
        let cam = CameraView::look_at("k", 400.0, 400.0, 640, 480, Vec3::new(1.0, 2.0, 6.0), Vec3::zeros(), Vec3::z()).unwrap();
        let x = Vector4::new(0.3, -0.2, 0.5, 1.0);
        let q = DualQuadric(x * x.transpose());
        let c = project_dual_quadric(&cam.projection(), &q);
        assert_eq!(c.rank(), 1);
        let px = cam.projection().0 * x;
        assert!(normalized_difference(&c.0, &(px * px.transpose())) < 1e-12);
        assert_eq!(
            project_dual_quadric_checked(&cam.projection(), &q),
            Err(GeomError::DegenerateProjection)
        );
    }

    #[test]
    fn center_on_principal_plane_is_flagged() {
        let cam = CameraView::look_at("k", 400.0, 400.0, 640, 480, Vec3::new(0.0, 0.0, 5.0), Vec3::zeros(), Vec3::y()).unwrap();
        let q = EllipsoidShape::sphere(Vec3::new(3.0, 0.0, 5.0), 0.5).to_dual_quadric();
        assert_eq!(
            project_dual_quadric_checked(&cam.projection(), &q),
            Err(GeomError::DegenerateProjection)
        );
        let q = EllipsoidShape::sphere(Vec3::zeros(), 0.5).to_dual_quadric();
        assert!(project_dual_quadric_checked(&cam.projection(), &q).is_ok());
    }

    #[test]
    fn record_round_trip() {
        let s = EllipsoidShape {
            center: Vec3::new(1.0, -2.0, 0.5),
            axes: Vec3::new(3.0, 2.0, 1.0),
            rotation: nalgebra::Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner(),
        };
        let back = EllipsoidShape::from(&EllipsoidRecord::from(&s));
        assert_eq!(back, s);
    }
}
