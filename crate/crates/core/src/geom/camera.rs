//! Pinhole cameras, planes and mirror reflections.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::GeomError;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// A real (right-handed) pinhole camera with pixel-space intrinsics and a
/// world→camera pose: `x_cam = R·x_world + t`.
///
/// Pixel coordinates follow the usual image layout: `u` to the right, `v`
/// down, and integer coordinates sit at pixel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl CameraView {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rotation: Matrix3<f64>,
        translation: Vec3,
    ) -> Result<Self, GeomError> {
        let view = Self {
            id: id.into(),
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        view.validate()?;
        Ok(view)
    }

    /// Camera at `eye` looking at `target`. `up` fixes the roll; the image
    /// `v` axis points away from it.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        id: impl Into<String>,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
        eye: Vec3,
        target: Vec3,
        up: Vec3,
    ) -> Result<Self, GeomError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or(GeomError::InvalidCamera("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or(GeomError::InvalidCamera("up vector parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            id,
            fx,
            fy,
            (f64::from(width) - 1.0) / 2.0,
            (f64::from(height) - 1.0) / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeomError::InvalidCamera(format!(
                "{}: focal lengths must be positive",
                self.id
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeomError::InvalidCamera(format!("{}: empty image", self.id)));
        }
        let r = &self.rotation;
        let ortho = (r * r.transpose() - Matrix3::identity()).norm();
        if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(GeomError::InvalidCamera(format!(
                "{}: rotation must be orthonormal with det +1",
                self.id
            )));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn projection(&self) -> ProjectionMap {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &self.translation);
        ProjectionMap(self.intrinsics() * rt)
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing direction (camera +z axis) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    pub fn right(&self) -> Vec3 {
        self.rotation.row(0).transpose()
    }

    /// Projects a world point; `None` when it is not in front of the camera.
    pub fn project(&self, x: &Vec3) -> Option<Vec2> {
        let c = self.rotation * x + self.translation;
        if c.z <= 1e-12 {
            return None;
        }
        Some(Vec2::new(
            self.fx * c.x / c.z + self.cx,
            self.fy * c.y / c.z + self.cy,
        ))
    }

    /// Unit world-space ray direction through pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        let d = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.rotation.transpose() * d).normalize()
    }

    pub fn diagonal(&self) -> f64 {
        f64::from(self.width).hypot(f64::from(self.height))
    }

    pub fn contains_pixel(&self, p: &Vec2, margin: f64) -> bool {
        p.x >= margin
            && p.y >= margin
            && p.x <= f64::from(self.width) - 1.0 - margin
            && p.y <= f64::from(self.height) - 1.0 - margin
    }

    pub fn to_record(&self) -> CameraRecord {
        CameraRecord {
            id: self.id.clone(),
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            r: self.rotation.transpose().as_slice().to_vec(),
            t: self.translation.as_slice().to_vec(),
        }
    }
}

/// One view in the camera/pose file. `R` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    pub t: Vec<f64>,
}

impl TryFrom<CameraRecord> for CameraView {
    type Error = GeomError;

    fn try_from(rec: CameraRecord) -> Result<Self, Self::Error> {
        if rec.r.len() != 9 {
            return Err(GeomError::InvalidCamera(format!(
                "{}: R needs 9 numbers, got {}",
                rec.id,
                rec.r.len()
            )));
        }
        if rec.t.len() != 3 {
            return Err(GeomError::InvalidCamera(format!(
                "{}: t needs 3 numbers, got {}",
                rec.id,
                rec.t.len()
            )));
        }
        CameraView::new(
            rec.id,
            rec.fx,
            rec.fy,
            rec.cx,
            rec.cy,
            rec.width,
            rec.height,
            Matrix3::from_row_slice(&rec.r),
            Vec3::from_row_slice(&rec.t),
        )
    }
}

/// A homogeneous 3×4 projection, defined up to scale. Mirrored (virtual)
/// cameras live here because their rotation part has det −1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMap(pub Matrix3x4<f64>);

impl ProjectionMap {
    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    pub fn apply(&self, x: &Vec3) -> Vector3<f64> {
        self.0 * x.push(1.0)
    }

    /// Inhomogeneous image point; `None` at infinity.
    pub fn project(&self, x: &Vec3) -> Option<Vec2> {
        let h = self.apply(x);
        (h.z.abs() > 1e-300).then(|| Vec2::new(h.x / h.z, h.y / h.z))
    }

    /// Camera center (right null vector), dehomogenized.
    pub fn center(&self) -> Option<Vec3> {
        let p = &self.0;
        let minor = |skip: usize| -> f64 {
            let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
            Matrix3::from_columns(&[p.column(cols[0]), p.column(cols[1]), p.column(cols[2])])
                .determinant()
        };
        let c = Vector4::new(minor(0), -minor(1), minor(2), -minor(3));
        (c.w.abs() > 1e-300).then(|| Vec3::new(c.x / c.w, c.y / c.w, c.z / c.w))
    }

    pub fn rank(&self) -> usize {
        self.0.rank(1e-10 * self.0.norm())
    }

    pub fn normalized(&self) -> Self {
        Self(super::normalize_homogeneous(&self.0))
    }
}

/// Oriented plane `n·x + d = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneH {
    normal: Vec3,
    offset: f64,
}

impl PlaneH {
    /// Normalizes `(normal, offset)` jointly.
    pub fn new(normal: Vec3, offset: f64) -> Result<Self, GeomError> {
        let len = normal.norm();
        if !(len > 1e-300) || !len.is_finite() {
            return Err(GeomError::InvalidPlane);
        }
        Ok(Self {
            normal: normal / len,
            offset: offset / len,
        })
    }

    pub fn through_point(normal: Vec3, point: &Vec3) -> Result<Self, GeomError> {
        let n = normal.try_normalize(1e-300).ok_or(GeomError::InvalidPlane)?;
        Ok(Self {
            normal: n,
            offset: -n.dot(point),
        })
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    pub fn project(&self, p: &Vec3) -> Vec3 {
        p - self.normal * self.signed_distance(p)
    }

    /// Ray parameter of the hit, if the ray is not parallel to the plane.
    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-15 {
            return None;
        }
        Some(-self.signed_distance(origin) / denom)
    }
}

/// Homogeneous mirror transform across `plane`: `[I − 2nnᵀ, −2dn; 0ᵀ, 1]`.
pub fn reflect_across_plane(plane: &PlaneH) -> Matrix4<f64> {
    let n = plane.normal;
    let d = plane.offset;
    let mut h = Matrix4::identity();
    h.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() - 2.0 * n * n.transpose()));
    h.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-2.0 * d * n));
    h
}

pub fn reflect_point(plane: &PlaneH, p: &Vec3) -> Vec3 {
    p - 2.0 * plane.signed_distance(p) * plane.normal
}

/// Virtual camera seeing the world through a planar mirror: `P_s = P·H`.
pub fn mirror_camera(view: &CameraView, plane: &PlaneH) -> ProjectionMap {
    ProjectionMap(view.projection().0 * reflect_across_plane(plane))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_camera() -> CameraView {
        CameraView::look_at(
            "c0",
            500.0,
            500.0,
            640,
            480,
            Vec3::new(1.0, -2.0, 5.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn axis_mirror() {
        let h = reflect_across_plane(&PlaneH::new(Vec3::z(), 0.0).unwrap());
        assert_eq!(h, Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, -1.0, 1.0)));
    }

    #[test]
    fn mirror_across_z_equals_one() {
        let plane = PlaneH::new(Vec3::z(), -1.0).unwrap();
        let h = reflect_across_plane(&plane);
        let p = h * Vector4::new(0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(p, Vector4::new(0.0, 0.0, 2.0, 1.0), epsilon = 1e-15);
        assert_relative_eq!(h * h, Matrix4::identity(), epsilon = 1e-12);
    }

    #[test]
    fn look_at_conventions() {
        let cam = CameraView::look_at(
            "down",
            100.0,
            100.0,
            101,
            101,
            Vec3::new(0.0, 0.0, 5.0),
            Vec3::zeros(),
            Vec3::y(),
        )
        .unwrap();
        assert_relative_eq!(cam.center(), Vec3::new(0.0, 0.0, 5.0), epsilon = 1e-12);
        assert_relative_eq!(cam.forward(), -Vec3::z(), epsilon = 1e-12);
        let uv = cam.project(&Vec3::zeros()).unwrap();
        assert_relative_eq!(uv, Vec2::new(50.0, 50.0), epsilon = 1e-12);
        // +x world is to the right of the image center.
        assert!(cam.project(&Vec3::new(1.0, 0.0, 0.0)).unwrap().x > 50.0);
        let ray = cam.pixel_ray(50.0, 50.0);
        assert_relative_eq!(ray, -Vec3::z(), epsilon = 1e-12);
    }

    #[test]
    fn mirror_camera_center_is_reflected() {
        let cam = CameraView::look_at(
            "c",
            500.0,
            500.0,
            640,
            480,
            Vec3::new(0.0, 0.0, 5.0),
            Vec3::zeros(),
            Vec3::y(),
        )
        .unwrap();
        let plane = PlaneH::new(Vec3::z(), 0.0).unwrap();
        let ps = mirror_camera(&cam, &plane);
        assert_relative_eq!(ps.center().unwrap(), Vec3::new(0.0, 0.0, -5.0), epsilon = 1e-9);

        let tilted = PlaneH::new(Vec3::new(0.3, -0.2, 1.0), 0.7).unwrap();
        let ps = mirror_camera(&test_camera(), &tilted);
        let expected = reflect_point(&tilted, &test_camera().center());
        assert_relative_eq!(ps.center().unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn plane_through_own_center_keeps_center() {
        let cam = test_camera();
        let plane = PlaneH::through_point(Vec3::new(0.2, 0.9, 0.1), &cam.center()).unwrap();
        let ps = mirror_camera(&cam, &plane);
        assert_relative_eq!(ps.center().unwrap(), cam.center(), epsilon = 1e-9);
    }

    #[test]
    fn invalid_cameras_rejected() {
        let bad = CameraView::new("x", -1.0, 1.0, 0.0, 0.0, 10, 10, Matrix3::identity(), Vec3::zeros());
        assert!(matches!(bad, Err(GeomError::InvalidCamera(_))));
        let mirrored = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        let bad = CameraView::new("x", 1.0, 1.0, 0.0, 0.0, 10, 10, mirrored, Vec3::zeros());
        assert!(matches!(bad, Err(GeomError::InvalidCamera(_))));
    }

    #[test]
    fn record_round_trip() {
        let cam = test_camera();
        let back = CameraView::try_from(cam.to_record()).unwrap();
        assert_eq!(back, cam);
    }
}
