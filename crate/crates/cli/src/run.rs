use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use jolimas::detect::{observe, DetectConfig, DetectionRecord, SpecularObservation};
use jolimas::eval::{
    run_ellipsoid_experiment, run_exp1, run_exp2, run_scene_evaluation, spearman, EllipsoidExperimentConfig,
    ExperimentReport, MorphExperimentConfig, SceneEvalConfig,
};
use jolimas::geom::{CameraView, Ellipse};
use jolimas::model::{
    load_model, predict_in_mode, reconstruct_from_observations, save_model, Mode, PredictConfig, ReconstructConfig,
};
use jolimas::shading::{render, Image, Scene, SceneSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Command, Common, Overrides};

pub enum Failure {
    /// Bad invocation or unreadable input: exit code 2.
    Config(anyhow::Error),
    /// The pipeline itself failed: exit code 1.
    Pipeline(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Self::Pipeline(e.into())
    }
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

/// Scene pipeline configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineConfig {
    scene: SceneSpec,
    #[serde(default)]
    detect: DetectConfig,
    #[serde(default)]
    reconstruct: ReconstructConfig,
    #[serde(default)]
    predict: PredictConfig,
    /// View ids used by `reconstruct`; every view when empty.
    #[serde(default)]
    reconstruction_views: Vec<String>,
    #[serde(default = "yes")]
    overlays: bool,
}

fn yes() -> bool {
    true
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("{}", path.display())).map_err(config_error)?;
    serde_json::from_str(&text).with_context(|| format!("{}", path.display())).map_err(config_error)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("{}", path.display()))?;
    Ok(())
}

fn out_dir(common: &Common) -> Result<&Path, Failure> {
    fs::create_dir_all(&common.out).with_context(|| format!("{}", common.out.display()))?;
    Ok(&common.out)
}

impl Overrides {
    fn detect(&self, d: &mut DetectConfig) {
        if let Some(t) = self.tau {
            d.threshold = t;
        }
    }

    fn warp(&self, r: &mut ReconstructConfig, p: &mut PredictConfig) {
        for w in [&mut r.warp, &mut p.warp] {
            if let Some(n) = self.n {
                w.directions = n;
            }
            if let Some(s) = self.step {
                w.steps_per_diameter = s;
            }
        }
    }
}

struct Loaded {
    config: PipelineConfig,
    scene: Scene,
}

fn load_pipeline(common: &Common, command: &str) -> Result<Loaded, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| config_error(anyhow!("{command} needs --config <scene pipeline JSON>")))?;
    let mut config: PipelineConfig = read_json(path)?;
    let o = &common.overrides;
    o.detect(&mut config.detect);
    o.warp(&mut config.reconstruct, &mut config.predict);
    if o.seed.is_some() {
        log::warn!("--seed has no effect on scenes with explicit views");
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let scene = config
        .scene
        .build(base)
        .with_context(|| format!("{}", path.display()))
        .map_err(config_error)?;
    Ok(Loaded { config, scene })
}

fn experiment_config<T: DeserializeOwned + Default>(common: &Common) -> Result<T, Failure> {
    match &common.config {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

/// Detected observations in view order, skipping views without a highlight.
fn observe_views<'a>(
    scene: &Scene,
    views: impl Iterator<Item = &'a CameraView>,
    detect: &DetectConfig,
    images: Option<&Path>,
) -> Result<Vec<(SpecularObservation, &'a CameraView)>, Failure> {
    let mut out = Vec::new();
    for v in views {
        let image = match images {
            Some(dir) => {
                let p = dir.join(format!("{}.pgm", v.id));
                Image::read_pgm(&p).with_context(|| format!("{}", p.display())).map_err(config_error)?
            }
            None => render(scene, v),
        };
        match observe(v, &scene.surface, &image, detect) {
            Ok(o) => out.push((o, v)),
            Err(e) => log::warn!("{}: {e}", v.id),
        }
    }
    if out.is_empty() {
        return Err(Failure::Pipeline(anyhow!("no highlight detected in any view")));
    }
    Ok(out)
}

#[derive(Serialize)]
struct PredictionRecord {
    view_id: String,
    mode: Mode,
    brightest_point: [f64; 3],
    normal: [f64; 3],
    ellipse: Ellipse,
    contour_px: Vec<[f64; 2]>,
    n_failed_directions: usize,
}

fn print_report(report: &ExperimentReport) {
    print!("{}", report.summary_text());
}

pub fn dispatch(command: &Command) -> Result<(), Failure> {
    let run = serde_json::to_value(command.run_config())?;
    match command {
        Command::Render(common) => {
            let Loaded { scene, .. } = load_pipeline(common, "render")?;
            let out = out_dir(common)?;
            for v in &scene.views {
                let path = out.join(format!("{}.pgm", v.id));
                render(&scene, v).write_pgm(&path).with_context(|| format!("{}", path.display()))?;
            }
            println!("rendered {} views into {}", scene.views.len(), out.display());
        }
        Command::Detect { common, images } => {
            let Loaded { config, scene } = load_pipeline(common, "detect")?;
            let out = out_dir(common)?;
            let obs = observe_views(&scene, scene.views.iter(), &config.detect, images.as_deref())?;
            let records: Vec<DetectionRecord> = obs.iter().map(|(o, _)| DetectionRecord::from(o)).collect();
            write_json(&records, &out.join("detections.json"))?;
            println!("{} of {} views with a highlight", records.len(), scene.views.len());
        }
        Command::Reconstruct(common) => {
            let Loaded { config, scene } = load_pipeline(common, "reconstruct")?;
            let wanted = &config.reconstruction_views;
            if let Some(id) = wanted.iter().find(|id| !scene.views.iter().any(|v| &v.id == *id)) {
                let path = common.config.as_ref().map(PathBuf::as_path).unwrap_or(Path::new("?"));
                return Err(config_error(anyhow!("{}: unknown reconstruction view {id}", path.display())));
            }
            let views = scene.views.iter().filter(|v| wanted.is_empty() || wanted.contains(&v.id));
            let obs = observe_views(&scene, views, &config.detect, None)?;
            let pairs: Vec<_> = obs.iter().map(|(o, v)| (o, *v)).collect();
            let mode = common.mode.map_or(Mode::Canonical, Mode::from);
            let model = reconstruct_from_observations(&pairs, &scene.surface, mode, &config.reconstruct)?;
            let out = out_dir(common)?;
            save_model(&model, &out.join("model.json"))?;
            let s = &model.shape;
            println!(
                "{mode} model from {} views: center {:.4?}, semi-axes {:.4?}, residual {:.3e}",
                model.source_view_ids.len(),
                s.center.as_slice(),
                s.axes.as_slice(),
                model.residual
            );
        }
        Command::Predict { common, model } => {
            let Loaded { config, scene } = load_pipeline(common, "predict")?;
            let model = load_model(model).map_err(config_error)?;
            let mode = common.mode.map_or(model.mode, Mode::from);
            let out = out_dir(common)?;
            let mut records = Vec::new();
            for v in &scene.views {
                match predict_in_mode(&model, v, &scene.surface, mode, &config.predict) {
                    Ok(p) => records.push(PredictionRecord {
                        view_id: p.view_id,
                        mode,
                        brightest_point: p.p_b.position.into(),
                        normal: p.p_b.normal.into(),
                        ellipse: p.ellipse_img,
                        contour_px: p.contour_img.iter().map(|q| [q.x, q.y]).collect(),
                        n_failed_directions: p.n_failed_directions,
                    }),
                    Err(e) => log::warn!("{}: {e}", v.id),
                }
            }
            if records.is_empty() {
                return Err(Failure::Pipeline(anyhow!("no view could be predicted")));
            }
            write_json(&records, &out.join("predictions.json"))?;
            println!("{mode} predictions for {} of {} views", records.len(), scene.views.len());
        }
        Command::Evaluate { common, model } => {
            let Loaded { config, scene } = load_pipeline(common, "evaluate")?;
            let model = load_model(model).map_err(config_error)?;
            let mode = common.mode.map_or(model.mode, Mode::from);
            let eval = SceneEvalConfig {
                detect: config.detect,
                predict: config.predict,
                overlays: config.overlays,
            };
            let report = run_scene_evaluation(&scene, &model, mode, &eval, Some(out_dir(common)?), Some(&run))?;
            print_report(&report);
        }
        Command::Exp1(common) | Command::Exp2(common) => {
            let mut config: MorphExperimentConfig = experiment_config(common)?;
            let o = &common.overrides;
            o.detect(&mut config.detect);
            o.warp(&mut config.reconstruct, &mut config.predict);
            if let Some(s) = o.seed {
                config.sequence.seed = s;
            }
            if common.mode.is_some() {
                log::warn!("experiments always score both modes; --mode ignored");
            }
            let out = out_dir(common)?;
            if matches!(command, Command::Exp1(_)) {
                print_report(&run_exp1(&config, Some(out), Some(&run))?);
            } else {
                let report = run_exp2(&config, Some(out), Some(&run))?;
                print_report(&report);
                let means = report.kappa_means(Mode::DualBaseline);
                let (k, e): (Vec<f64>, Vec<f64>) = means.iter().map(|m| (m.kappa, m.mean)).unzip();
                println!("exp2: dual-baseline error vs curvature, Spearman {:.3}", spearman(&k, &e));
            }
        }
        Command::ExpEllipsoid(common) => {
            let mut config: EllipsoidExperimentConfig = experiment_config(common)?;
            let o = &common.overrides;
            o.detect(&mut config.detect);
            o.warp(&mut config.reconstruct, &mut config.predict);
            if let Some(s) = o.seed {
                config.sequence.seed = s;
            }
            if common.mode.is_some() {
                log::warn!("experiments always score both modes; --mode ignored");
            }
            let report = run_ellipsoid_experiment(&config, Some(out_dir(common)?), Some(&run))?;
            print_report(&report);
        }
    }
    Ok(())
}
