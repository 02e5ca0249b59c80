//! Closed-form surfaces: bounded plane sheets, cylinders, spheres and
//! ellipsoids.

use std::f64::consts::PI;

use nalgebra::Matrix3;

use super::{SurfaceError, SurfacePoint};
use crate::geom::{EllipsoidShape, PlaneH, Vec3};

const RAY_EPS: f64 = 1e-9;

/// Plane, optionally bounded to a rectangle centered at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSurface {
    pub plane: PlaneH,
    pub origin: Vec3,
    pub u_axis: Vec3,
    /// Half extents along `u_axis` and `normal × u_axis`.
    pub half_extent: Option<[f64; 2]>,
}

impl PlaneSurface {
    pub fn unbounded(plane: PlaneH) -> Self {
        let origin = plane.project(&Vec3::zeros());
        Self {
            plane,
            origin,
            u_axis: any_perpendicular(&plane.normal()),
            half_extent: None,
        }
    }

    pub fn v_axis(&self) -> Vec3 {
        self.plane.normal().cross(&self.u_axis)
    }

    fn in_extent(&self, p: &Vec3) -> bool {
        match self.half_extent {
            None => true,
            Some([hu, hv]) => {
                let d = p - self.origin;
                d.dot(&self.u_axis).abs() <= hu && d.dot(&self.v_axis()).abs() <= hv
            }
        }
    }

    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<SurfacePoint> {
        let t = self.plane.intersect_ray(origin, dir)?;
        if t <= RAY_EPS {
            return None;
        }
        let p = origin + dir * t;
        self.in_extent(&p).then(|| SurfacePoint::new(p, self.plane.normal()))
    }

    pub fn closest_point(&self, p: &Vec3) -> SurfacePoint {
        SurfacePoint::new(self.plane.project(p), self.plane.normal())
    }

    pub fn seeds(&self, n: usize) -> Option<Vec<SurfacePoint>> {
        let [hu, hv] = self.half_extent?;
        let v_axis = self.v_axis();
        Some(
            grid_params(n)
                .map(|(a, b)| {
                    let p = self.origin + self.u_axis * (hu * (2.0 * a - 1.0)) + v_axis * (hv * (2.0 * b - 1.0));
                    SurfacePoint::new(p, self.plane.normal())
                })
                .collect(),
        )
    }
}

/// Right circular cylinder with outward normals. Points are parameterized
/// by `θ` (about the axis, zero along `ref_dir`, positive toward
/// `axis_dir × ref_dir`) and `s` (along the axis from `axis_point`).
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderSurface {
    pub axis_point: Vec3,
    pub axis_dir: Vec3,
    pub radius: f64,
    pub ref_dir: Vec3,
    pub half_angle: Option<f64>,
    pub half_length: Option<f64>,
}

impl CylinderSurface {
    pub fn new(axis_point: Vec3, axis_dir: Vec3, radius: f64) -> Result<Self, SurfaceError> {
        let axis_dir = axis_dir
            .try_normalize(1e-300)
            .ok_or_else(|| SurfaceError::Invalid("cylinder axis must be nonzero".into()))?;
        if !(radius > 0.0) {
            return Err(SurfaceError::Invalid("cylinder radius must be positive".into()));
        }
        Ok(Self {
            axis_point,
            axis_dir,
            radius,
            ref_dir: any_perpendicular(&axis_dir),
            half_angle: None,
            half_length: None,
        })
    }

    fn side_dir(&self) -> Vec3 {
        self.axis_dir.cross(&self.ref_dir)
    }

    /// Component of `p − axis_point` orthogonal to the axis.
    fn radial(&self, p: &Vec3) -> Vec3 {
        let d = p - self.axis_point;
        d - self.axis_dir * d.dot(&self.axis_dir)
    }

    pub fn point_at(&self, theta: f64, s: f64) -> Vec3 {
        self.axis_point
            + self.axis_dir * s
            + (self.ref_dir * theta.cos() + self.side_dir() * theta.sin()) * self.radius
    }

    fn in_extent(&self, p: &Vec3) -> bool {
        let d = p - self.axis_point;
        if let Some(hl) = self.half_length {
            if d.dot(&self.axis_dir).abs() > hl {
                return false;
            }
        }
        if let Some(ha) = self.half_angle {
            let theta = d.dot(&self.side_dir()).atan2(d.dot(&self.ref_dir));
            if theta.abs() > ha {
                return false;
            }
        }
        true
    }

    pub fn implicit(&self, p: &Vec3) -> f64 {
        self.radial(p).norm() - self.radius
    }

    pub fn normal_at(&self, p: &Vec3) -> Option<Vec3> {
        self.radial(p).try_normalize(1e-300)
    }

    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<SurfacePoint> {
        let o = self.radial(origin);
        let d = dir - self.axis_dir * dir.dot(&self.axis_dir);
        let a = d.norm_squared();
        if a < 1e-300 {
            return None;
        }
        let b = 2.0 * o.dot(&d);
        let c = o.norm_squared() - self.radius * self.radius;
        solve_quadratic(a, b, c)
            .into_iter()
            .flatten()
            .filter(|&t| t > RAY_EPS)
            .map(|t| origin + dir * t)
            .find(|p| self.in_extent(p))
            .map(|p| SurfacePoint::new(p, self.radial(&p).normalize()))
    }

    pub fn closest_point(&self, p: &Vec3, hint: &Vec3) -> Result<SurfacePoint, SurfaceError> {
        let along = self.axis_point + self.axis_dir * (p - self.axis_point).dot(&self.axis_dir);
        let n = self
            .radial(p)
            .try_normalize(1e-12 * self.radius)
            .or_else(|| self.radial(hint).try_normalize(1e-12 * self.radius))
            .ok_or(SurfaceError::Ambiguous)?;
        Ok(SurfacePoint::new(along + n * self.radius, n))
    }

    pub fn seeds(&self, n: usize) -> Option<Vec<SurfacePoint>> {
        let ha = self.half_angle.unwrap_or(PI);
        let hl = self.half_length?;
        Some(
            grid_params(n)
                .map(|(a, b)| {
                    let p = self.point_at(ha * (2.0 * a - 1.0), hl * (2.0 * b - 1.0));
                    SurfacePoint::new(p, self.radial(&p).normalize())
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereSurface {
    pub center: Vec3,
    pub radius: f64,
}

impl SphereSurface {
    pub fn new(center: Vec3, radius: f64) -> Result<Self, SurfaceError> {
        if !(radius > 0.0) {
            return Err(SurfaceError::Invalid("sphere radius must be positive".into()));
        }
        Ok(Self { center, radius })
    }

    pub fn implicit(&self, p: &Vec3) -> f64 {
        (p - self.center).norm() - self.radius
    }

    pub fn normal_at(&self, p: &Vec3) -> Option<Vec3> {
        (p - self.center).try_normalize(1e-300)
    }

    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<SurfacePoint> {
        let o = origin - self.center;
        let roots = solve_quadratic(dir.norm_squared(), 2.0 * o.dot(dir), o.norm_squared() - self.radius * self.radius);
        let t = roots.into_iter().flatten().find(|&t| t > RAY_EPS)?;
        let p = origin + dir * t;
        Some(SurfacePoint::new(p, (p - self.center).normalize()))
    }

    pub fn closest_point(&self, p: &Vec3, hint: &Vec3) -> Result<SurfacePoint, SurfaceError> {
        let n = (p - self.center)
            .try_normalize(1e-12 * self.radius)
            .or_else(|| (hint - self.center).try_normalize(1e-12 * self.radius))
            .ok_or(SurfaceError::Ambiguous)?;
        Ok(SurfacePoint::new(self.center + n * self.radius, n))
    }

    pub fn seeds(&self, n: usize) -> Vec<SurfacePoint> {
        grid_params(n)
            .map(|(a, b)| {
                let (theta, phi) = (PI * a, 2.0 * PI * b);
                let dir = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                SurfacePoint::new(self.center + dir * self.radius, dir)
            })
            .collect()
    }
}

/// Solid ellipsoid boundary; closest points use Eberly's robust bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidSurface {
    pub shape: EllipsoidShape,
}

impl EllipsoidSurface {
    pub fn new(shape: EllipsoidShape) -> Result<Self, SurfaceError> {
        if shape.axes.iter().any(|&a| !(a > 0.0)) {
            return Err(SurfaceError::Invalid("ellipsoid semi-axes must be positive".into()));
        }
        let r = &shape.rotation;
        if (r * r.transpose() - Matrix3::identity()).norm() > 1e-9 {
            return Err(SurfaceError::Invalid("ellipsoid rotation must be orthonormal".into()));
        }
        Ok(Self { shape })
    }

    fn to_local(&self, p: &Vec3) -> Vec3 {
        self.shape.rotation.transpose() * (p - self.shape.center)
    }

    fn to_world(&self, q: &Vec3) -> Vec3 {
        self.shape.rotation * q + self.shape.center
    }

    fn local_normal(&self, q: &Vec3) -> Vec3 {
        let a = &self.shape.axes;
        Vec3::new(q.x / (a.x * a.x), q.y / (a.y * a.y), q.z / (a.z * a.z))
    }

    /// Algebraic residual `Σ (yᵢ/aᵢ)² − 1` in the local frame.
    pub fn implicit(&self, p: &Vec3) -> f64 {
        let q = self.to_local(p);
        q.component_div(&self.shape.axes).norm_squared() - 1.0
    }

    pub fn normal_at(&self, p: &Vec3) -> Option<Vec3> {
        let q = self.to_local(p);
        (self.shape.rotation * self.local_normal(&q)).try_normalize(1e-300)
    }

    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<SurfacePoint> {
        let o = self.to_local(origin).component_div(&self.shape.axes);
        let d = (self.shape.rotation.transpose() * dir).component_div(&self.shape.axes);
        let roots = solve_quadratic(d.norm_squared(), 2.0 * o.dot(&d), o.norm_squared() - 1.0);
        let t = roots.into_iter().flatten().find(|&t| t > RAY_EPS)?;
        let p = origin + dir * t;
        Some(SurfacePoint::new(p, self.normal_at(&p)?))
    }

    pub fn closest_point(&self, p: &Vec3, hint: &Vec3) -> Result<SurfacePoint, SurfaceError> {
        let y = self.to_local(p);
        let h = self.to_local(hint);
        let a = self.shape.axes;
        // Sort axes descending, solve in the first octant, restore signs.
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| a[j].total_cmp(&a[i]));
        let e = [a[order[0]], a[order[1]], a[order[2]]];
        let ya = [y[order[0]].abs(), y[order[1]].abs(), y[order[2]].abs()];
        let x = closest_on_ellipsoid(e, ya);
        let tiny = 1e-14 * e[0];
        let mut local = Vec3::zeros();
        for k in 0..3 {
            let i = order[k];
            let sign = if y[i].abs() > tiny {
                y[i].signum()
            } else if x[k] > tiny {
                // Medial ambiguity; the hint picks the side.
                if h[i].abs() > tiny {
                    h[i].signum()
                } else {
                    return Err(SurfaceError::Ambiguous);
                }
            } else {
                1.0
            };
            local[i] = sign * x[k];
        }
        let pos = self.to_world(&local);
        let n = (self.shape.rotation * self.local_normal(&local)).normalize();
        Ok(SurfacePoint::new(pos, n))
    }

    pub fn seeds(&self, n: usize) -> Vec<SurfacePoint> {
        grid_params(n)
            .filter_map(|(a, b)| {
                let (theta, phi) = (PI * a, 2.0 * PI * b);
                let q = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
                    .component_mul(&self.shape.axes);
                let p = self.to_world(&q);
                Some(SurfacePoint::new(p, self.normal_at(&p)?))
            })
            .collect()
    }
}

/// Cell-centered `(a, b) ∈ (0,1)²` samples of an `n × n` grid.
fn grid_params(n: usize) -> impl Iterator<Item = (f64, f64)> {
    let n = n.max(1);
    (0..n).flat_map(move |i| {
        (0..n).map(move |j| ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64))
    })
}

/// Real roots of `a t² + b t + c` in ascending order.
fn solve_quadratic(a: f64, b: f64, c: f64) -> [Option<f64>; 2] {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || a == 0.0 {
        return [None, None];
    }
    let sq = disc.sqrt();
    // Numerically stable pair.
    let q = -0.5 * (b + b.signum() * sq);
    let (t0, t1) = if q == 0.0 {
        (0.0, 0.0)
    } else {
        (q / a, c / q)
    };
    let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
    [Some(lo), Some(hi)]
}

pub(crate) fn any_perpendicular(n: &Vec3) -> Vec3 {
    let trial = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    (trial - n * n.dot(&trial)).normalize()
}

fn robust_length(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt()
}

fn bisect_root(ratios: &[(f64, f64)], g0: f64, s_lo: f64, s_hi: f64) -> f64 {
    let (mut s0, mut s1) = (s_lo, s_hi);
    let mut s = s0;
    if g0 == 0.0 {
        return 0.0;
    }
    for _ in 0..1100 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let g: f64 = ratios.iter().map(|&(num, r)| (num / (s + r)).powi(2)).sum::<f64>() - 1.0;
        if g > 0.0 {
            s0 = s;
        } else if g < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// Closest point on the ellipse with semi-axes `e0 ≥ e1` to `(y0, y1)` in the
/// first quadrant.
fn closest_on_ellipse(e: [f64; 2], y: [f64; 2]) -> [f64; 2] {
    if y[1] > 0.0 {
        if y[0] > 0.0 {
            let z = [y[0] / e[0], y[1] / e[1]];
            let g = z[0] * z[0] + z[1] * z[1] - 1.0;
            if g != 0.0 {
                let r0 = (e[0] / e[1]).powi(2);
                let n0 = r0 * z[0];
                let s1 = if g < 0.0 { 0.0 } else { robust_length(&[n0, z[1]]) - 1.0 };
                let s = bisect_root(&[(n0, r0), (z[1], 1.0)], g, z[1] - 1.0, s1);
                [r0 * y[0] / (s + r0), y[1] / (s + 1.0)]
            } else {
                y
            }
        } else {
            [0.0, e[1]]
        }
    } else {
        let numer0 = e[0] * y[0];
        let denom0 = e[0] * e[0] - e[1] * e[1];
        if numer0 < denom0 {
            let xde0 = numer0 / denom0;
            [e[0] * xde0, e[1] * (1.0 - xde0 * xde0).max(0.0).sqrt()]
        } else {
            [e[0], 0.0]
        }
    }
}

/// Closest point on the ellipsoid with semi-axes `e0 ≥ e1 ≥ e2` to a
/// first-octant point.
fn closest_on_ellipsoid(e: [f64; 3], y: [f64; 3]) -> [f64; 3] {
    if y[2] > 0.0 {
        if y[1] > 0.0 {
            if y[0] > 0.0 {
                let z = [y[0] / e[0], y[1] / e[1], y[2] / e[2]];
                let g = z.iter().map(|v| v * v).sum::<f64>() - 1.0;
                if g == 0.0 {
                    return y;
                }
                let r0 = (e[0] / e[2]).powi(2);
                let r1 = (e[1] / e[2]).powi(2);
                let (n0, n1) = (r0 * z[0], r1 * z[1]);
                let s1 = if g < 0.0 { 0.0 } else { robust_length(&[n0, n1, z[2]]) - 1.0 };
                let s = bisect_root(&[(n0, r0), (n1, r1), (z[2], 1.0)], g, z[2] - 1.0, s1);
                [r0 * y[0] / (s + r0), r1 * y[1] / (s + r1), y[2] / (s + 1.0)]
            } else {
                let x = closest_on_ellipse([e[1], e[2]], [y[1], y[2]]);
                [0.0, x[0], x[1]]
            }
        } else {
            let x = if y[0] > 0.0 {
                closest_on_ellipse([e[0], e[2]], [y[0], y[2]])
            } else {
                [0.0, e[2]]
            };
            [x[0], 0.0, x[1]]
        }
    } else {
        let denom0 = e[0] * e[0] - e[2] * e[2];
        let denom1 = e[1] * e[1] - e[2] * e[2];
        let numer0 = e[0] * y[0];
        let numer1 = e[1] * y[1];
        if numer0 < denom0 && numer1 < denom1 {
            let xde0 = numer0 / denom0;
            let xde1 = numer1 / denom1;
            let discr = 1.0 - xde0 * xde0 - xde1 * xde1;
            if discr > 0.0 {
                return [e[0] * xde0, e[1] * xde1, e[2] * discr.sqrt()];
            }
        }
        let x = closest_on_ellipse([e[0], e[1]], [y[0], y[1]]);
        [x[0], x[1], 0.0]
    }
}
