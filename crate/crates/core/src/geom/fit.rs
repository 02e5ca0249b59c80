//! Direct least-squares ellipse fitting with the ellipse-class constraint
//! `4ac − b² > 0`, solved through the reduced 3×3 eigenproblem of Halíř and
//! Flusser on centroid-normalized coordinates.

use nalgebra::{Matrix3, Vector3};

use super::{Conic, Ellipse, GeomError, Vec2};

/// Fits an ellipse to at least five points.
pub fn fit_ellipse(points: &[Vec2]) -> Result<Ellipse, GeomError> {
    fit_conic(points)?.to_ellipse()
}

pub fn fit_conic(points: &[Vec2]) -> Result<Conic, GeomError> {
    if points.len() < 5 || points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(GeomError::DegenerateInput);
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
    if !(mean_dist > 0.0) {
        return Err(GeomError::DegenerateInput);
    }
    let scale = std::f64::consts::SQRT_2 / mean_dist;

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let q = (p - mean) * scale;
        let quad = Vector3::new(q.x * q.x, q.x * q.y, q.y * q.y);
        let lin = Vector3::new(q.x, q.y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }

    // Collinear points make the linear scatter singular.
    let s3_eig = s3.symmetric_eigenvalues();
    if s3_eig.min() <= 1e-10 * s3_eig.max() {
        return Err(GeomError::DegenerateInput);
    }
    let s3_inv = s3.try_inverse().ok_or(GeomError::DegenerateInput)?;
    let t = -(s3_inv * s2.transpose());
    let reduced = s1 + s2 * t;
    // C1⁻¹ for C1 = [[0,0,2],[0,−1,0],[2,0,0]].
    let c1_inv = Matrix3::new(0.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0, 0.0);
    let m = c1_inv * reduced;

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in real_eigenvalues(&m) {
        let Some(v) = null_vector(&(m - Matrix3::identity() * lambda)) else {
            continue;
        };
        let constraint = 4.0 * v.x * v.z - v.y * v.y;
        if constraint > 0.0 {
            // Smallest non-negative eigenvalue is the least-squares optimum.
            let key = lambda.abs();
            if best.as_ref().is_none_or(|(k, _)| key < *k) {
                best = Some((key, v));
            }
        }
    }
    let (_, quad) = best.ok_or(GeomError::NotAnEllipse)?;
    let lin = t * quad;
    let (a, b, c, d, e, f) = (quad.x, quad.y, quad.z, lin.x, lin.y, lin.z);
    let normalized = Matrix3::new(
        a,
        b / 2.0,
        d / 2.0,
        b / 2.0,
        c,
        e / 2.0,
        d / 2.0,
        e / 2.0,
        f,
    );
    let denorm = Matrix3::new(
        scale,
        0.0,
        -scale * mean.x,
        0.0,
        scale,
        -scale * mean.y,
        0.0,
        0.0,
        1.0,
    );
    Ok(Conic::new(denorm.transpose() * normalized * denorm))
}

fn real_eigenvalues(m: &Matrix3<f64>) -> Vec<f64> {
    let scale = m.norm().max(1e-300);
    m.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-9 * scale)
        .map(|z| z.re)
        .collect()
}

/// Null vector of a (numerically) rank-2 3×3 matrix from the largest cross
/// product of its rows.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let r = [
        m.row(0).transpose(),
        m.row(1).transpose(),
        m.row(2).transpose(),
    ];
    [r[0].cross(&r[1]), r[0].cross(&r[2]), r[1].cross(&r[2])]
        .into_iter()
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
        .and_then(|v| v.try_normalize(1e-300))
}
