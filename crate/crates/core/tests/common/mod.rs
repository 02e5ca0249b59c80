//! Strategies and property checks shared by the property suite and the
//! acceptance run.
#![allow(dead_code)]

use std::f64::consts::PI;

use jolimas::eval::ellipse_error;
use jolimas::geom::{
    adjugate3, adjugate4, fit_ellipse, normalize_homogeneous, normalized_difference, project_dual_quadric,
    reflect_across_plane, reflect_point, CameraView, Ellipse, EllipsoidShape, PlaneH, ProjectionMap, Vec2, Vec3,
};
use jolimas::surfaces::{morph_surface, MorphExtent, SurfaceModel};
use nalgebra::{Matrix3, Matrix4, Rotation3};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub type Check = Result<(), TestCaseError>;

pub fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

pub fn unit3() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter("non-degenerate direction", |v| v.norm() > 0.1).prop_map(|v| v.normalize())
}

pub fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    (unit3(), -PI..PI).prop_map(|(axis, angle)| *Rotation3::new(axis * angle).matrix())
}

pub fn ellipsoid() -> impl Strategy<Value = EllipsoidShape> {
    (vec3(5.0), 0.2..4.0, 0.2..4.0, 0.2..4.0, rotation()).prop_map(|(center, a, b, c, rotation)| EllipsoidShape {
        center,
        axes: Vec3::new(a, b, c),
        rotation,
    })
}

/// Image ellipses: semi-minor axis of at least one pixel, a/b up to 50.
pub fn ellipse() -> impl Strategy<Value = Ellipse> {
    (-300.0..300.0, -300.0..300.0, 1.0..100.0, 1.0..50.0, 0.0..PI)
        .prop_map(|(x, y, b, ratio, t)| Ellipse::new(Vec2::new(x, y), b * ratio, b, t))
}

/// A pair of overlapping ellipses of comparable size.
pub fn ellipse_pair() -> impl Strategy<Value = (Ellipse, Ellipse)> {
    ellipse().prop_flat_map(|a| {
        let c = a.center();
        let r = a.semi_minor;
        let b = (-0.5..0.5f64, -0.5..0.5f64, 0.5..2.0f64, 1.0..3.0f64, 0.0..PI).prop_map(move |(dx, dy, s, ratio, t)| {
            let major = r * s * ratio;
            Ellipse::new(c + Vec2::new(dx, dy) * r, major, major / ratio, t)
        });
        (Just(a), b)
    })
}

pub fn nonzero_scale() -> impl Strategy<Value = f64> {
    prop_oneof![-100.0..-0.01, 0.01..100.0f64]
}

fn rigid(r: &Matrix3<f64>, t: &Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// Wraps the point transform so that `X' = T·X` keeps projections equal:
/// `P' = P·T⁻¹`.
fn moved_camera(p: &ProjectionMap, t: &Matrix4<f64>) -> ProjectionMap {
    ProjectionMap(p.0 * t.try_inverse().unwrap())
}

pub fn reflection_involution(n: Vec3, d: f64, p: Vec3) -> Check {
    let plane = PlaneH::new(n, d).unwrap();
    let h = reflect_across_plane(&plane);
    prop_assert!((h * h - Matrix4::identity()).amax() < 1e-12);
    let back = reflect_point(&plane, &reflect_point(&plane, &p));
    prop_assert!((back - p).norm() < 1e-12 * (1.0 + p.norm() + d.abs()));
    Ok(())
}

pub fn double_adjugate(m3: [f64; 9], m4: [f64; 16]) -> Check {
    let a = Matrix3::from_row_slice(&m3);
    let lhs = adjugate3(&adjugate3(&a));
    let rhs = a * a.determinant();
    prop_assert!((lhs - rhs).amax() <= 1e-10 * (1.0 + rhs.amax()));
    let b = Matrix4::from_row_slice(&m4);
    let lhs = adjugate4(&adjugate4(&b));
    let rhs = b * b.determinant().powi(2);
    prop_assert!((lhs - rhs).amax() <= 1e-9 * (1.0 + rhs.amax()));
    Ok(())
}

pub fn ellipse_conic_round_trip(e: Ellipse) -> Check {
    let back = e.to_conic().to_ellipse().unwrap();
    prop_assert!(e.relative_param_difference(&back) < 1e-9, "{e:?} -> {back:?}");
    Ok(())
}

pub fn exact_fit(e: Ellipse, phase: f64) -> Check {
    let pts: Vec<Vec2> = (0..72).map(|i| e.point_at(phase + 2.0 * PI * i as f64 / 72.0)).collect();
    let fit = fit_ellipse(&pts).unwrap();
    prop_assert!(e.relative_param_difference(&fit) < 1e-6, "{e:?} -> {fit:?}");
    Ok(())
}

pub fn decode_inverts_encode(s: EllipsoidShape) -> Check {
    let q = s.to_dual_quadric();
    let d = q.decode().unwrap();
    prop_assert!((d.center - s.center).norm() < 1e-9 * (1.0 + s.center.norm()));
    let mut want: Vec<f64> = s.axes.iter().copied().collect();
    want.sort_by(|a, b| b.total_cmp(a));
    for (got, w) in d.axes.iter().zip(&want) {
        prop_assert!((got - w).abs() < 1e-9 * w.max(1.0), "{:?} vs {want:?}", d.axes);
    }
    prop_assert!(normalized_difference(&d.to_dual_quadric().0, &q.0) < 1e-9);
    Ok(())
}

pub fn projection_equivariance(s: EllipsoidShape, r: Matrix3<f64>, t: Vec3, eye_dir: Vec3) -> Check {
    let eye = s.center + eye_dir * 15.0;
    let cam = CameraView::look_at("c", 500.0, 500.0, 640, 480, eye, s.center, Vec3::z())
        .or_else(|_| CameraView::look_at("c", 500.0, 500.0, 640, 480, eye, s.center, Vec3::x()))
        .unwrap();
    let q = s.to_dual_quadric();
    let m = rigid(&r, &t);
    let before = project_dual_quadric(&cam.projection(), &q);
    let after = project_dual_quadric(&moved_camera(&cam.projection(), &m), &q.transformed(&m));
    prop_assert!(normalized_difference(&before.0, &after.0) < 1e-10);
    Ok(())
}

pub fn normalization_ignores_scale(m: [f64; 16], k: f64) -> Check {
    let a = Matrix4::from_row_slice(&m);
    let n: Matrix4<f64> = normalize_homogeneous(&a);
    prop_assert!((n.norm() - 1.0).abs() < 1e-12);
    let scaled: Matrix4<f64> = normalize_homogeneous(&(a * k));
    prop_assert!((scaled - n).amax() < 1e-12);
    let again: Matrix4<f64> = normalize_homogeneous(&n);
    prop_assert!((again - n).amax() < 1e-15);
    Ok(())
}

pub fn closest_point_on_surface(s: EllipsoidShape, dir: Vec3, offset: f64) -> Check {
    let surface = SurfaceModel::ellipsoid(s.clone()).unwrap();
    let on = surface.intersect_ray(&(s.center + dir * 20.0), &-dir).unwrap();
    let p = on.position + on.normal * offset * s.axes.min();
    let q = surface.closest_point(&p, &on.position).unwrap();
    prop_assert!(surface.implicit(&q.position).unwrap().abs() < 1e-9);
    let gap = p - q.position;
    if gap.norm() > 1e-9 {
        prop_assert!(gap.normalize().cross(&q.normal).norm() < 1e-6);
    }
    Ok(())
}

pub fn walk_stays_on_surface(s: EllipsoidShape, dir: Vec3, heading: f64, step: f64) -> Check {
    let surface = SurfaceModel::ellipsoid(s.clone()).unwrap();
    let start = surface.intersect_ray(&(s.center + dir * 20.0), &-dir).unwrap();
    let n = start.normal;
    let u = n.cross(&if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() }).normalize();
    let t = u * heading.cos() + n.cross(&u) * heading.sin();
    let (next, tangent) = surface.walk(&start, &t, step * s.axes.min()).unwrap();
    prop_assert!(surface.implicit(&next.position).unwrap().abs() < 1e-9);
    prop_assert!(tangent.dot(&next.normal).abs() < 1e-9);
    prop_assert!((tangent.norm() - 1.0).abs() < 1e-12);
    Ok(())
}

pub fn morph_keeps_width(kappa: f64, width: f64) -> Check {
    let extent = MorphExtent { width, length: 10.0 };
    match morph_surface(kappa, extent).unwrap() {
        SurfaceModel::Plane(_) => prop_assert_eq!(kappa, 0.0),
        SurfaceModel::Cylinder(c) => {
            let arc = 2.0 * c.half_angle.unwrap() * c.radius;
            prop_assert!((arc - width).abs() < 1e-9 * width);
        }
        other => prop_assert!(false, "unexpected morph surface {other:?}"),
    }
    Ok(())
}

pub fn ellipse_error_symmetric(a: Ellipse, b: Ellipse, turn: f64) -> Check {
    let ab = ellipse_error("f", &a, &b, 800.0).percent;
    let ba = ellipse_error("f", &b, &a, 800.0).percent;
    prop_assert!((ab - ba).abs() < 1e-9 * (1.0 + ab));
    let anchor = (a.center() + b.center()) * 0.5;
    let rot = nalgebra::Rotation2::new(turn);
    let spin = |e: &Ellipse| Ellipse::new(anchor + rot * (e.center() - anchor), e.semi_major, e.semi_minor, e.angle + turn);
    let turned = ellipse_error("f", &spin(&a), &spin(&b), 800.0).percent;
    prop_assert!((turned - ab).abs() < 1e-6 * (1.0 + ab), "{ab} vs {turned}");
    Ok(())
}

/// Every property, `cases` cases each, outside the `proptest!` macro.
pub fn run_all(cases: u32) -> Result<(), String> {
    use proptest::test_runner::{Config, TestRunner};
    let config = Config {
        failure_persistence: None,
        ..Config::with_cases(cases)
    };
    // A runner keeps its success count, so each property needs its own.
    macro_rules! run {
        ($name:literal, $strategy:expr, $check:expr) => {
            TestRunner::new(config.clone())
                .run(&$strategy, $check)
                .map_err(|e| format!("{}: {e}", $name))?
        };
    }
    run!("reflection involution", (unit3(), -10.0..10.0f64, vec3(20.0)), |(n, d, p)| reflection_involution(n, d, p));
    run!(
        "double adjugate",
        (proptest::array::uniform9(-2.0..2.0f64), proptest::array::uniform16(-2.0..2.0f64)),
        |(a, b)| double_adjugate(a, b)
    );
    run!("ellipse/conic round trip", ellipse(), ellipse_conic_round_trip);
    run!("exact ellipse fit", (ellipse(), 0.0..(2.0 * PI)), |(e, p)| exact_fit(e, p));
    run!("decode/encode", ellipsoid(), decode_inverts_encode);
    run!(
        "projection equivariance",
        (ellipsoid(), rotation(), vec3(10.0), unit3()),
        |(s, r, t, e)| projection_equivariance(s, r, t, e)
    );
    run!(
        "normalization",
        (proptest::array::uniform16(-5.0..5.0f64), nonzero_scale()),
        |(m, k)| normalization_ignores_scale(m, k)
    );
    run!("closest point", (ellipsoid(), unit3(), -0.15..1.0f64), |(s, d, o)| closest_point_on_surface(s, d, o));
    run!(
        "surface walk",
        (ellipsoid(), unit3(), 0.0..(2.0 * PI), 1e-3..0.2f64),
        |(s, d, h, st)| walk_stays_on_surface(s, d, h, st)
    );
    run!("morph width", (0.0..0.5f64, 1.0..20.0f64), |(k, w)| morph_keeps_width(k, w));
    run!("error symmetry", (ellipse_pair(), 0.0..(2.0 * PI)), |((a, b), t)| ellipse_error_symmetric(a, b, t));
    Ok(())
}
