//! Prediction error metric, experiment runners and result files.

mod experiments;

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{DetectError, SpecularObservation};
use crate::geom::{CameraView, Ellipse, Vec2};
use crate::model::{Mode, ModelError, PredictedSpecularity};
use crate::shading::{Image, ShadingError};

pub use experiments::{
    run_ellipsoid_experiment, run_exp1, run_exp2, run_morph_experiments, run_scene_evaluation,
    EllipsoidExperimentConfig, MorphExperimentConfig, SceneEvalConfig,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error(transparent)]
    Shading(#[from] ShadingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Detect(#[from] DetectError),
}

/// Number of rays of the error metric.
pub const ERROR_RAYS: usize = 36;

pub const METRIC_DEFINITION: &str = "percent_error = 100 * mean over 36 rays of |s_pred - s_det| / image diagonal; \
rays leave the midpoint of the two ellipse centers at 10 degree spacing starting along the major principal axis of \
(S_pred + S_det), S = ellipse shape matrix; s = distance from the anchor to each ellipse boundary along the ray \
(nearest-boundary distance when a ray misses one ellipse)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    pub frame_id: String,
    pub percent: f64,
    /// Per-ray boundary gaps in pixels.
    pub distances: Vec<f64>,
}

fn nearest_boundary_distance(e: &Ellipse, p: &Vec2) -> f64 {
    e.sample(720).iter().map(|q| (q - p).norm()).fold(f64::INFINITY, f64::min)
}

/// Symmetric ray-sampled distance between two image ellipses.
pub fn ellipse_distances(a: &Ellipse, b: &Ellipse) -> Vec<f64> {
    let anchor = (a.center() + b.center()) * 0.5;
    let s = a.shape_matrix() + b.shape_matrix();
    let start = (s[(0, 1)] * 2.0).atan2(s[(0, 0)] - s[(1, 1)]) * 0.5;
    (0..ERROR_RAYS)
        .map(|i| {
            let t = start + 2.0 * PI * i as f64 / ERROR_RAYS as f64;
            let d = Vec2::new(t.cos(), t.sin());
            match (a.ray_exit(&anchor, &d), b.ray_exit(&anchor, &d)) {
                (Some(sa), Some(sb)) => (sa - sb).abs(),
                (Some(sa), None) => nearest_boundary_distance(b, &(anchor + d * sa)),
                (None, Some(sb)) => nearest_boundary_distance(a, &(anchor + d * sb)),
                (None, None) => 0.0,
            }
        })
        .collect()
}

pub fn ellipse_error(frame_id: &str, pred: &Ellipse, det: &Ellipse, diagonal: f64) -> PredictionError {
    let distances = ellipse_distances(pred, det);
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    PredictionError {
        frame_id: frame_id.to_string(),
        percent: 100.0 * mean / diagonal,
        distances,
    }
}

pub fn prediction_error(pred: &PredictedSpecularity, det: &SpecularObservation, view: &CameraView) -> PredictionError {
    ellipse_error(&pred.view_id, &pred.ellipse_img, &det.ellipse_img, view.diagonal())
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_id: String,
    pub kappa: Option<f64>,
    pub mode: Mode,
    /// NaN when detection or prediction failed.
    pub percent_error: f64,
    pub n_failed_directions: usize,
    pub pb_error_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub frames: usize,
    pub failures: usize,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaMean {
    pub kappa: f64,
    pub mode: Mode,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config: serde_json::Value,
    pub metric: String,
    pub frames: Vec<FrameResult>,
}

impl ExperimentReport {
    pub fn new(name: &str, config: serde_json::Value, frames: Vec<FrameResult>) -> Self {
        Self {
            name: name.to_string(),
            config,
            metric: METRIC_DEFINITION.to_string(),
            frames,
        }
    }

    pub fn errors(&self, mode: Mode) -> impl Iterator<Item = &FrameResult> {
        self.frames.iter().filter(move |f| f.mode == mode)
    }

    /// Mean and max over finite errors; NaN frames count as failures.
    pub fn summary(&self, mode: Mode) -> ModeSummary {
        let all: Vec<f64> = self.errors(mode).map(|f| f.percent_error).collect();
        let ok: Vec<f64> = all.iter().copied().filter(|e| e.is_finite()).collect();
        ModeSummary {
            mode,
            frames: all.len(),
            failures: all.len() - ok.len(),
            mean: if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 },
            max: ok.iter().copied().fold(f64::NAN, f64::max),
        }
    }

    pub fn mean(&self, mode: Mode) -> f64 {
        self.summary(mode).mean
    }

    /// Per-curvature means in ascending curvature order.
    pub fn kappa_means(&self, mode: Mode) -> Vec<KappaMean> {
        let mut kappas: Vec<f64> = self.errors(mode).filter_map(|f| f.kappa).collect();
        kappas.sort_by(f64::total_cmp);
        kappas.dedup();
        kappas
            .into_iter()
            .map(|k| {
                let ok: Vec<f64> = self
                    .errors(mode)
                    .filter(|f| f.kappa == Some(k) && f.percent_error.is_finite())
                    .map(|f| f.percent_error)
                    .collect();
                KappaMean {
                    kappa: k,
                    mode,
                    mean: if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 },
                }
            })
            .collect()
    }

    /// Comment header: configuration echo and metric definition.
    pub fn header(&self) -> String {
        let config = serde_json::to_string_pretty(&self.config).expect("configs serialize");
        let mut out = format!("# experiment: {}\n# metric: {}\n# config:\n", self.name, self.metric);
        for line in config.lines() {
            out.push_str("#   ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["frame_id", "kappa", "mode", "percent_error", "n_failed_directions", "pb_error_px"])
            .expect("in-memory csv");
        for f in &self.frames {
            w.write_record([
                f.frame_id.clone(),
                f.kappa.map(|k| k.to_string()).unwrap_or_default(),
                f.mode.to_string(),
                f.percent_error.to_string(),
                f.n_failed_directions.to_string(),
                f.pb_error_px.to_string(),
            ])
            .expect("in-memory csv");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8");
        self.header() + &body
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let io = |source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        };
        File::create(path).and_then(|mut f| f.write_all(self.to_csv().as_bytes())).map_err(io)
    }

    /// Plain-text summary lines.
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        for mode in [Mode::Canonical, Mode::DualBaseline] {
            let s = self.summary(mode);
            if s.frames == 0 {
                continue;
            }
            out.push_str(&format!(
                "{}: {}: mean {:.3}% max {:.3}% over {} frames, {} failed\n",
                self.name, mode, s.mean, s.max, s.frames, s.failures
            ));
        }
        out
    }
}

/// Spearman rank correlation (average ranks for ties). NaN pairs are skipped.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (rank(&x), rank(&y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

const GREEN: Rgb<u8> = Rgb([0, 220, 0]);
const BLUE: Rgb<u8> = Rgb([40, 80, 255]);

fn plot(img: &mut RgbImage, p: &Vec2, color: Rgb<u8>) {
    let (x, y) = (p.x.round(), p.y.round());
    if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_closed(img: &mut RgbImage, pts: &[Vec2], color: Rgb<u8>) {
    for i in 0..pts.len() {
        let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
        let n = ((b - a).norm() * 4.0).ceil().max(1.0) as usize;
        for k in 0..=n {
            plot(img, &(a + (b - a) * (k as f64 / n as f64)), color);
        }
    }
}

/// Grayscale render with the detected contour (green) and the predicted
/// ellipse and contour points (blue).
pub fn overlay_image(image: &Image, pred: Option<&PredictedSpecularity>, det: Option<&SpecularObservation>) -> RgbImage {
    let mut img = RgbImage::from_fn(image.width as u32, image.height as u32, |x, y| {
        let v = (image.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    });
    if let Some(d) = det {
        draw_closed(&mut img, &d.contour_px, GREEN);
    }
    if let Some(p) = pred {
        draw_closed(&mut img, &p.ellipse_img.sample(360), BLUE);
        for q in &p.contour_img {
            for off in [Vec2::zeros(), Vec2::x(), -Vec2::x(), Vec2::y(), -Vec2::y()] {
                plot(&mut img, &(q + off), BLUE);
            }
        }
    }
    img
}

pub fn emit_overlay(
    image: &Image,
    pred: Option<&PredictedSpecularity>,
    det: Option<&SpecularObservation>,
    path: &Path,
) -> Result<(), EvalError> {
    overlay_image(image, pred, det)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| EvalError::Output {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn circle(x: f64, y: f64, r: f64) -> Ellipse {
        Ellipse::circle(Vec2::new(x, y), r)
    }

    #[test]
    fn identical_ellipses_have_zero_error() {
        let e = Ellipse::new(Vec2::new(100.0, 80.0), 30.0, 12.0, 0.4);
        assert_eq!(ellipse_error("f", &e, &e, 800.0).percent, 0.0);
    }

    #[test]
    fn concentric_circles() {
        let err = ellipse_error("f", &circle(320.0, 240.0, 10.0), &circle(320.0, 240.0, 20.0), 800.0);
        assert_relative_eq!(err.percent, 1.25, epsilon = 1e-9);
    }

    #[test]
    fn translated_circle_matches_ray_sum() {
        let (r, d) = (40.0, 0.5);
        let a = circle(300.0, 200.0, r);
        let b = circle(300.0 + d, 200.0, r);
        // Exact ray exits from the midpoint anchor, summed over the rays.
        let oracle: f64 = (0..36)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 36.0;
                let c = t.cos();
                let exit = |cx: f64| {
                    let ox = -cx;
                    let bq = ox * c;
                    -bq + (bq * bq - (ox * ox - r * r)).sqrt()
                };
                (exit(d / 2.0) - exit(-d / 2.0)).abs()
            })
            .sum::<f64>()
            / 36.0;
        let err = ellipse_error("f", &a, &b, 800.0);
        assert_relative_eq!(err.percent, 100.0 * oracle / 800.0, epsilon = 1e-9);
        assert!((oracle - 2.0 / PI * d).abs() < 0.01 * d);
    }

    #[test]
    fn metric_is_symmetric_and_rotation_invariant() {
        let a = Ellipse::new(Vec2::new(100.0, 90.0), 30.0, 14.0, 0.3);
        let b = Ellipse::new(Vec2::new(104.0, 87.0), 26.0, 15.0, 0.6);
        let ab = ellipse_error("f", &a, &b, 800.0).percent;
        let ba = ellipse_error("f", &b, &a, 800.0).percent;
        assert_relative_eq!(ab, ba, epsilon = 1e-9);
        let anchor = (a.center() + b.center()) * 0.5;
        let rot = |e: &Ellipse, t: f64| {
            let c = e.center() - anchor;
            let (s, k) = t.sin_cos();
            Ellipse::new(anchor + Vec2::new(k * c.x - s * c.y, s * c.x + k * c.y), e.semi_major, e.semi_minor, e.angle + t)
        };
        let r = ellipse_error("f", &rot(&a, 0.9), &rot(&b, 0.9), 800.0).percent;
        assert_relative_eq!(ab, r, epsilon = 1e-9);
    }

    #[test]
    fn spearman_examples() {
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]), 1.0);
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        // Hand-computed: ranks x = (0,1,2,3), y = (1,0,3,2) → 1 − 6·4/(4·15) = 0.6.
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]), 0.6, epsilon = 1e-12);
    }

    fn frames() -> Vec<FrameResult> {
        let row = |id: &str, k: f64, mode, e: f64| FrameResult {
            frame_id: id.into(),
            kappa: Some(k),
            mode,
            percent_error: e,
            n_failed_directions: 0,
            pb_error_px: 0.5,
        };
        vec![
            row("a", 0.0, Mode::Canonical, 1.0),
            row("b", 0.1, Mode::Canonical, f64::NAN),
            row("c", 0.1, Mode::Canonical, 3.0),
            row("a", 0.0, Mode::DualBaseline, 2.0),
        ]
    }

    #[test]
    fn summary_skips_failures() {
        let r = ExperimentReport::new("t", serde_json::json!({"k": 1}), frames());
        let s = r.summary(Mode::Canonical);
        assert_eq!((s.frames, s.failures), (3, 1));
        assert_relative_eq!(s.mean, 2.0);
        assert_relative_eq!(s.max, 3.0);
        let km = r.kappa_means(Mode::Canonical);
        assert_eq!(km.len(), 2);
        assert_relative_eq!(km[1].mean, 3.0);
    }

    #[test]
    fn csv_layout() {
        let r = ExperimentReport::new("t", serde_json::json!({"k": 1}), frames());
        let text = r.to_csv();
        assert!(text.starts_with("# experiment: t\n# metric: "));
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "frame_id,kappa,mode,percent_error,n_failed_directions,pb_error_px");
        assert_eq!(rows[2], "b,0.1,canonical,NaN,0,0.5");
        assert_eq!(rows[4], "a,0,dual-baseline,2,0,0.5");
        assert_eq!(text, r.to_csv());
    }

    #[test]
    fn overlay_keeps_dimensions_and_coincident_curves() {
        let img = Image::new(64, 48, 0.2);
        let e = Ellipse::new(Vec2::new(30.0, 20.0), 12.0, 7.0, 0.2);
        let pred = PredictedSpecularity {
            view_id: "f".into(),
            p_b: crate::surfaces::SurfacePoint::new(crate::geom::Vec3::zeros(), crate::geom::Vec3::z()),
            contour_img: vec![],
            ellipse_img: e,
            n_failed_directions: 0,
        };
        let out = overlay_image(&img, Some(&pred), None);
        assert_eq!((out.width(), out.height()), (64, 48));
        // Drawn on its own, the detected curve lands on the same pixels.
        let det_only = {
            let mut o = overlay_image(&img, None, None);
            draw_closed(&mut o, &e.sample(360), GREEN);
            o
        };
        for (p, q) in out.pixels().zip(det_only.pixels()) {
            assert_eq!(*p == BLUE, *q == GREEN);
        }
    }
}
