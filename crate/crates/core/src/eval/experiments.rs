use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{emit_overlay, prediction_error, EvalError, ExperimentReport, FrameResult};
use crate::detect::{observe, DetectConfig, SpecularObservation};
use crate::geom::CameraView;
use crate::model::{
    predict, predict_dual_baseline, reconstruct_from_observations, JolimasModel, Mode, ModelError, PredictConfig,
    ReconstructConfig,
};
use crate::shading::{
    gen_ellipsoid_sequence, gen_plane_cylinder_sequence, render, EllipsoidSequenceConfig, Image, MorphSequenceConfig,
    Scene,
};
use crate::surfaces::SurfaceModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MorphExperimentConfig {
    pub sequence: MorphSequenceConfig,
    pub detect: DetectConfig,
    pub reconstruct: ReconstructConfig,
    pub predict: PredictConfig,
    /// Write one overlay PNG per frame and mode.
    pub overlays: bool,
}

impl Default for MorphExperimentConfig {
    fn default() -> Self {
        Self {
            sequence: MorphSequenceConfig::default(),
            detect: DetectConfig::default(),
            reconstruct: ReconstructConfig::default(),
            predict: PredictConfig::default(),
            overlays: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EllipsoidExperimentConfig {
    pub sequence: EllipsoidSequenceConfig,
    pub detect: DetectConfig,
    pub reconstruct: ReconstructConfig,
    pub predict: PredictConfig,
    /// Leading frames used for reconstruction.
    pub reconstruction_frames: usize,
    pub overlays: bool,
}

impl Default for EllipsoidExperimentConfig {
    fn default() -> Self {
        Self {
            sequence: EllipsoidSequenceConfig::default(),
            detect: DetectConfig::default(),
            reconstruct: ReconstructConfig::default(),
            predict: PredictConfig::default(),
            reconstruction_frames: 6,
            overlays: true,
        }
    }
}

struct Frame {
    view: CameraView,
    kappa: Option<f64>,
    image: Image,
    obs: Option<SpecularObservation>,
}

fn capture(scene: &Scene, views: &[CameraView], kappa: Option<f64>, detect: &DetectConfig) -> Vec<Frame> {
    views
        .par_iter()
        .map(|v| {
            let image = render(scene, v);
            let obs = observe(v, &scene.surface, &image, detect)
                .map_err(|e| log::warn!("{}: detection failed: {e}", v.id))
                .ok();
            Frame {
                view: v.clone(),
                kappa,
                image,
                obs,
            }
        })
        .collect()
}

fn reconstruct_frames(
    frames: &[Frame],
    surface: &SurfaceModel,
    mode: Mode,
    config: &ReconstructConfig,
) -> Result<JolimasModel, ModelError> {
    let pairs: Vec<_> = frames.iter().filter_map(|f| f.obs.as_ref().map(|o| (o, &f.view))).collect();
    reconstruct_from_observations(&pairs, surface, mode, config)
        .inspect_err(|e| log::warn!("{mode} reconstruction failed: {e}"))
}

struct Output<'a> {
    dir: Option<&'a Path>,
    overlays: bool,
    tag: &'a str,
}

impl Output<'_> {
    fn overlay_path(&self, frame_id: &str, mode: Mode) -> Option<PathBuf> {
        let dir = self.dir.filter(|_| self.overlays)?;
        Some(dir.join("overlays").join(self.tag).join(format!("{frame_id}_{mode}.png")))
    }

    fn prepare(&self) -> Result<(), EvalError> {
        if let Some(dir) = self.dir {
            let sub = if self.overlays { dir.join("overlays").join(self.tag) } else { dir.to_path_buf() };
            fs::create_dir_all(&sub).map_err(|source| EvalError::Io { path: sub, source })?;
        }
        Ok(())
    }
}

fn evaluate(
    frames: &[Frame],
    surface: &SurfaceModel,
    model: Option<&JolimasModel>,
    mode: Mode,
    config: &PredictConfig,
    out: &Output,
) -> Result<Vec<FrameResult>, EvalError> {
    frames
        .par_iter()
        .map(|f| {
            let id = &f.view.id;
            let pred = match (model, &f.obs) {
                (Some(m), Some(_)) => {
                    let p = match mode {
                        Mode::Canonical => predict(m, &f.view, surface, config),
                        Mode::DualBaseline => predict_dual_baseline(m, &f.view, surface, config),
                    };
                    p.inspect_err(|e| log::warn!("{id} {mode}: prediction failed: {e}")).ok()
                }
                _ => None,
            };
            if let Some(path) = out.overlay_path(id, mode) {
                emit_overlay(&f.image, pred.as_ref(), f.obs.as_ref(), &path)?;
            }
            let (percent_error, n_failed_directions, pb_error_px) = match (&pred, &f.obs) {
                (Some(p), Some(o)) => (
                    prediction_error(p, o, &f.view).percent,
                    p.n_failed_directions,
                    f.view
                        .project(&p.p_b.position)
                        .map_or(f64::NAN, |px| (px - o.brightest_px).norm()),
                ),
                _ => (f64::NAN, config.warp.directions, f64::NAN),
            };
            Ok(FrameResult {
                frame_id: id.clone(),
                kappa: f.kappa,
                mode,
                percent_error,
                n_failed_directions,
                pb_error_px,
            })
        })
        .collect()
}

fn finish(report: ExperimentReport, out: &Output) -> Result<ExperimentReport, EvalError> {
    if let Some(dir) = out.dir {
        report.write_csv(&dir.join(format!("{}.csv", out.tag)))?;
    }
    log::info!("{}", report.summary_text().trim_end());
    Ok(report)
}

const MODES: [Mode; 2] = [Mode::Canonical, Mode::DualBaseline];

/// Both morph experiments over one rendering of the sequence: Exp 1
/// reconstructs at every curvature and predicts on the same views; Exp 2
/// reconstructs once on the plane and predicts everywhere.
pub fn run_morph_experiments(
    config: &MorphExperimentConfig,
    out: Option<&Path>,
    run: Option<&Value>,
) -> Result<(ExperimentReport, ExperimentReport), EvalError> {
    run_morph(config, out, run, true, true).map(|(a, b)| (a.expect("exp1 requested"), b.expect("exp2 requested")))
}

pub fn run_exp1(
    config: &MorphExperimentConfig,
    out: Option<&Path>,
    run: Option<&Value>,
) -> Result<ExperimentReport, EvalError> {
    Ok(run_morph(config, out, run, true, false)?.0.expect("exp1 requested"))
}

pub fn run_exp2(
    config: &MorphExperimentConfig,
    out: Option<&Path>,
    run: Option<&Value>,
) -> Result<ExperimentReport, EvalError> {
    Ok(run_morph(config, out, run, false, true)?.1.expect("exp2 requested"))
}

/// Report echo: the experiment config, wrapped with the caller's run
/// description when one is given.
fn echo<T: Serialize>(config: &T, run: Option<&Value>) -> Value {
    let config = serde_json::to_value(config).expect("configs serialize");
    match run {
        Some(r) => serde_json::json!({ "run": r, "experiment": config }),
        None => config,
    }
}

type MorphReports = (Option<ExperimentReport>, Option<ExperimentReport>);

fn run_morph(
    config: &MorphExperimentConfig,
    out: Option<&Path>,
    run: Option<&Value>,
    exp1: bool,
    exp2: bool,
) -> Result<MorphReports, EvalError> {
    let seq = gen_plane_cylinder_sequence(&config.sequence)?;
    let echo = echo(config, run);
    let out1 = Output {
        dir: out,
        overlays: config.overlays,
        tag: "exp1",
    };
    let out2 = Output { tag: "exp2", ..out1 };
    if exp1 {
        out1.prepare()?;
    }
    if exp2 {
        out2.prepare()?;
    }
    let (mut rows1, mut rows2) = (Vec::new(), Vec::new());
    let mut plane_models: Option<[Option<JolimasModel>; 2]> = None;
    for step in &seq {
        let frames = capture(&step.scene, &step.scene.views, Some(step.kappa), &config.detect);
        let surface = &step.scene.surface;
        let models = MODES.map(|m| reconstruct_frames(&frames, surface, m, &config.reconstruct).ok());
        if plane_models.is_none() {
            plane_models = Some(models.clone());
        }
        for (i, mode) in MODES.into_iter().enumerate() {
            if exp1 {
                rows1.extend(evaluate(&frames, surface, models[i].as_ref(), mode, &config.predict, &out1)?);
            }
            if exp2 {
                let m = plane_models.as_ref().and_then(|p| p[i].as_ref());
                rows2.extend(evaluate(&frames, surface, m, mode, &config.predict, &out2)?);
            }
        }
    }
    let sort = |rows: &mut Vec<FrameResult>| rows.sort_by(|a, b| (a.mode as u8, &a.frame_id).cmp(&(b.mode as u8, &b.frame_id)));
    sort(&mut rows1);
    sort(&mut rows2);
    let r1 = exp1
        .then(|| finish(ExperimentReport::new("exp1", echo.clone(), rows1), &out1))
        .transpose()?;
    let r2 = exp2
        .then(|| finish(ExperimentReport::new("exp2", echo, rows2), &out2))
        .transpose()?;
    Ok((r1, r2))
}

/// Reconstruction from the leading frames of the ellipsoid orbit,
/// prediction on the remaining ones.
pub fn run_ellipsoid_experiment(
    config: &EllipsoidExperimentConfig,
    out: Option<&Path>,
    run: Option<&Value>,
) -> Result<ExperimentReport, EvalError> {
    let scene = gen_ellipsoid_sequence(&config.sequence)?;
    let out = Output {
        dir: out,
        overlays: config.overlays,
        tag: "exp_ellipsoid",
    };
    out.prepare()?;
    let k = config.reconstruction_frames.min(scene.views.len());
    let recon = capture(&scene, &scene.views[..k], None, &config.detect);
    let models = MODES.map(|m| reconstruct_frames(&recon, &scene.surface, m, &config.reconstruct).ok());
    drop(recon);
    let mut rows = Vec::new();
    for chunk in scene.views[k..].chunks(8) {
        let frames = capture(&scene, chunk, None, &config.detect);
        for (i, mode) in MODES.into_iter().enumerate() {
            rows.extend(evaluate(&frames, &scene.surface, models[i].as_ref(), mode, &config.predict, &out)?);
        }
    }
    rows.sort_by(|a, b| (a.mode as u8, &a.frame_id).cmp(&(b.mode as u8, &b.frame_id)));
    finish(ExperimentReport::new("exp_ellipsoid", echo(config, run), rows), &out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneEvalConfig {
    pub detect: DetectConfig,
    pub predict: PredictConfig,
    pub overlays: bool,
}

impl Default for SceneEvalConfig {
    fn default() -> Self {
        Self {
            detect: DetectConfig::default(),
            predict: PredictConfig::default(),
            overlays: true,
        }
    }
}

/// Prediction error of a stored model on every view of a scene, in one mode.
pub fn run_scene_evaluation(
    scene: &Scene,
    model: &JolimasModel,
    mode: Mode,
    config: &SceneEvalConfig,
    out: Option<&Path>,
    run: Option<&Value>,
) -> Result<ExperimentReport, EvalError> {
    let out = Output {
        dir: out,
        overlays: config.overlays,
        tag: "evaluate",
    };
    out.prepare()?;
    let frames = capture(scene, &scene.views, None, &config.detect);
    let mut rows = evaluate(&frames, &scene.surface, Some(model), mode, &config.predict, &out)?;
    rows.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    finish(ExperimentReport::new("evaluate", echo(config, run), rows), &out)
}
