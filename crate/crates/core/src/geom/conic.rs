//! Conics, dual conics and the ellipse parameterization.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeomError, Vec2};

/// Relative eigenvalue threshold for the conic signature test.
pub const SIGNATURE_TOLERANCE: f64 = 1e-8;

/// Point conic `xᵀ C x = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic(pub Matrix3<f64>);

/// Line (dual) conic `lᵀ C* l = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualConic(pub Matrix3<f64>);

impl Conic {
    pub fn new(m: Matrix3<f64>) -> Self {
        Self(symmetrize3(&m))
    }

    pub fn dual(&self) -> DualConic {
        DualConic(adjugate3(&self.0))
    }

    pub fn normalized(&self) -> Self {
        Self(super::normalize_homogeneous(&self.0))
    }

    pub fn eval(&self, p: &Vec2) -> f64 {
        let x = Vector3::new(p.x, p.y, 1.0);
        (x.transpose() * self.0 * x)[0]
    }

    /// Decodes the conic as a real ellipse.
    pub fn to_ellipse(&self) -> Result<Ellipse, GeomError> {
        let m = self.0 / self.0.norm();
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeomError::NotAnEllipse);
        }
        let mut block = m.fixed_view::<2, 2>(0, 0).into_owned();
        let mut g = m.fixed_view::<2, 1>(0, 2).into_owned();
        let mut f = m[(2, 2)];
        let (l_hi, l_lo, _) = sym2_eigen(&block);
        let scale = l_hi.abs().max(l_lo.abs());
        if scale == 0.0 || l_hi * l_lo <= 0.0 || l_lo.abs().min(l_hi.abs()) < SIGNATURE_TOLERANCE * scale
        {
            return Err(GeomError::NotAnEllipse);
        }
        // Make the quadratic part positive definite.
        if l_hi < 0.0 {
            block = -block;
            g = -g;
            f = -f;
        }
        let (l_hi, l_lo, phi) = sym2_eigen(&block);
        let inv = block.try_inverse().ok_or(GeomError::NotAnEllipse)?;
        let center = -(inv * g);
        // Stationary at the center, so center errors enter only to second order.
        let f_center = f + 2.0 * g.dot(&center) + center.dot(&(block * center));
        if !(-f_center > 1e-14 * scale) {
            return Err(GeomError::NotAnEllipse);
        }
        let semi_major = (-f_center / l_lo).sqrt();
        let semi_minor = (-f_center / l_hi).sqrt();
        // Major axis runs along the small-eigenvalue direction.
        Ok(Ellipse::new(
            Vec2::new(center.x, center.y),
            semi_major,
            semi_minor,
            phi + PI / 2.0,
        ))
    }
}

impl DualConic {
    pub fn new(m: Matrix3<f64>) -> Self {
        Self(symmetrize3(&m))
    }

    pub fn dual(&self) -> Conic {
        Conic(adjugate3(&self.0))
    }

    pub fn normalized(&self) -> Self {
        Self(super::normalize_homogeneous(&self.0))
    }

    pub fn rank(&self) -> usize {
        let n = self.0.norm();
        if n == 0.0 {
            return 0;
        }
        (self.0 / n).rank(1e-9)
    }
}

/// Eigen-decomposition of a symmetric 2×2 block: returns
/// `(λ_max, λ_min, φ)` with `φ` the direction of the λ_max eigenvector.
fn sym2_eigen(m: &Matrix2<f64>) -> (f64, f64, f64) {
    let (p, q, r) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let mean = 0.5 * (p + r);
    let rad = (0.5 * (p - r)).hypot(q);
    let phi = 0.5 * (2.0 * q).atan2(p - r);
    (mean + rad, mean - rad, phi)
}

fn symmetrize3(m: &Matrix3<f64>) -> Matrix3<f64> {
    0.5 * (m + m.transpose())
}

/// Classical adjugate (transposed cofactor matrix) of a 3×3 matrix.
pub fn adjugate3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)];
    Matrix3::new(
        c(1, 2, 1, 2),
        -c(0, 2, 1, 2),
        c(0, 1, 1, 2),
        -c(1, 2, 0, 2),
        c(0, 2, 0, 2),
        -c(0, 1, 0, 2),
        c(1, 2, 0, 1),
        -c(0, 2, 0, 1),
        c(0, 1, 0, 1),
    )
}

/// Classical adjugate of a 4×4 matrix.
pub fn adjugate4(m: &Matrix4<f64>) -> Matrix4<f64> {
    let mut adj = Matrix4::zeros();
    for i in 0..4 {
        for j in 0..4 {
            let rows: Vec<usize> = (0..4).filter(|&r| r != i).collect();
            let cols: Vec<usize> = (0..4).filter(|&c| c != j).collect();
            let minor = Matrix3::from_fn(|r, c| m[(rows[r], cols[c])]).determinant();
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            // adj = Cᵀ
            adj[(j, i)] = sign * minor;
        }
    }
    adj
}

/// Ellipse with `semi_major ≥ semi_minor > 0` and the major-axis angle in `[0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn new(center: Vec2, a: f64, b: f64, angle: f64) -> Self {
        let (semi_major, semi_minor, angle) = if b > a {
            (b, a, angle + PI / 2.0)
        } else {
            (a, b, angle)
        };
        Self {
            center: [center.x, center.y],
            semi_major,
            semi_minor,
            angle: angle.rem_euclid(PI),
        }
    }

    pub fn circle(center: Vec2, r: f64) -> Self {
        Self::new(center, r, r, 0.0)
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.center[0], self.center[1])
    }

    pub fn is_valid(&self) -> bool {
        self.semi_minor > 0.0
            && self.semi_major >= self.semi_minor
            && self.center.iter().all(|c| c.is_finite())
            && self.semi_major.is_finite()
    }

    fn axes(&self) -> (Vec2, Vec2) {
        let (s, c) = self.angle.sin_cos();
        (Vec2::new(c, s), Vec2::new(-s, c))
    }

    /// Quadratic-form matrix `A` with `(p − c)ᵀ A (p − c) = 1` on the boundary.
    pub fn shape_matrix(&self) -> Matrix2<f64> {
        let (u, v) = self.axes();
        u * u.transpose() / (self.semi_major * self.semi_major)
            + v * v.transpose() / (self.semi_minor * self.semi_minor)
    }

    pub fn to_conic(&self) -> Conic {
        let a = self.shape_matrix();
        let c = self.center();
        let g = -(a * c);
        let f = c.dot(&(a * c)) - 1.0;
        Conic(Matrix3::new(
            a[(0, 0)],
            a[(0, 1)],
            g.x,
            a[(1, 0)],
            a[(1, 1)],
            g.y,
            g.x,
            g.y,
            f,
        ))
    }

    pub fn point_at(&self, t: f64) -> Vec2 {
        let (u, v) = self.axes();
        self.center() + u * (self.semi_major * t.cos()) + v * (self.semi_minor * t.sin())
    }

    pub fn sample(&self, n: usize) -> Vec<Vec2> {
        (0..n)
            .map(|i| self.point_at(2.0 * PI * i as f64 / n as f64))
            .collect()
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        let d = p - self.center();
        d.dot(&(self.shape_matrix() * d)) <= 1.0
    }

    /// Largest positive ray parameter where `origin + t·dir` meets the boundary.
    pub fn ray_exit(&self, origin: &Vec2, dir: &Vec2) -> Option<f64> {
        let a = self.shape_matrix();
        let d = origin - self.center();
        let qa = dir.dot(&(a * dir));
        let qb = 2.0 * d.dot(&(a * dir));
        let qc = d.dot(&(a * d)) - 1.0;
        let disc = qb * qb - 4.0 * qa * qc;
        if qa <= 0.0 || disc < 0.0 {
            return None;
        }
        let t = (-qb + disc.sqrt()) / (2.0 * qa);
        (t > 0.0).then_some(t)
    }

    pub fn area(&self) -> f64 {
        PI * self.semi_major * self.semi_minor
    }

    /// Like [`Ellipse::max_param_difference`] with lengths relative to the
    /// semi-major axis.
    pub fn relative_param_difference(&self, other: &Ellipse) -> f64 {
        let scale = self.semi_major.max(other.semi_major);
        let dc = (self.center() - other.center()).norm() / scale;
        let da = (self.semi_major - other.semi_major).abs() / scale;
        let db = (self.semi_minor - other.semi_minor).abs() / self.semi_minor.max(other.semi_minor);
        let round = (self.semi_major - self.semi_minor) / self.semi_major < 1e-6
            && (other.semi_major - other.semi_minor) / other.semi_major < 1e-6;
        let dt = if round {
            0.0
        } else {
            let d = (self.angle - other.angle).rem_euclid(PI);
            d.min(PI - d)
        };
        dc.max(da).max(db).max(dt)
    }

    /// Parameter-space distance treating `angle` modulo π and ignoring it for
    /// near-circles (relative axis difference below 1e-6).
    pub fn max_param_difference(&self, other: &Ellipse) -> f64 {
        let dc = (self.center() - other.center()).norm();
        let da = (self.semi_major - other.semi_major).abs();
        let db = (self.semi_minor - other.semi_minor).abs();
        let round = (self.semi_major - self.semi_minor) / self.semi_major < 1e-6
            && (other.semi_major - other.semi_minor) / other.semi_major < 1e-6;
        let dt = if round {
            0.0
        } else {
            let d = (self.angle - other.angle).rem_euclid(PI);
            d.min(PI - d)
        };
        dc.max(da).max(db).max(dt)
    }
}
