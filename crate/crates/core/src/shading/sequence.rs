//! Synthetic sequence generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{render, Material, Scene, ShadingError};
use crate::geom::{CameraView, EllipsoidRecord, EllipsoidShape, Vec3};
use crate::surfaces::{morph_surface, MorphExtent, SurfaceModel};

/// Cameras on a circle of constant polar angle about `target`, looking at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraArc {
    pub target: [f64; 3],
    pub distance: f64,
    /// Angle from the +z axis.
    pub polar_deg: f64,
    pub azimuth_start_deg: f64,
    pub azimuth_end_deg: f64,
    /// Uniform polar-angle jitter amplitude, seeded.
    pub jitter_deg: f64,
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    /// When set, each camera looks at the mirror point of this light on the
    /// plane z = 0 instead of at `target`.
    #[serde(default)]
    pub aim_light: Option<[f64; 3]>,
}

impl CameraArc {
    fn eye(&self, polar_deg: f64, azimuth_deg: f64) -> Vec3 {
        let (p, a) = (polar_deg.to_radians(), azimuth_deg.to_radians());
        Vec3::from(self.target) + Vec3::new(p.sin() * a.cos(), p.sin() * a.sin(), p.cos()) * self.distance
    }

    fn look_from(&self, id: String, eye: Vec3, look: Vec3) -> Result<CameraView, ShadingError> {
        CameraView::look_at(id, self.focal, self.focal, self.width, self.height, eye, look, Vec3::z())
            .map_err(|e| ShadingError::InvalidScene(e.to_string()))
    }

    fn camera(&self, id: String, polar_deg: f64, azimuth_deg: f64) -> Result<CameraView, ShadingError> {
        let target = Vec3::from(self.target);
        let eye = self.eye(polar_deg, azimuth_deg);
        let look = match self.aim_light {
            Some(l) if eye.z > 0.0 && l[2] > 0.0 => {
                let mirrored = Vec3::new(l[0], l[1], -l[2]);
                eye + (mirrored - eye) * (eye.z / (eye.z + l[2]))
            }
            _ => target,
        };
        self.look_from(id, eye, look)
    }

    /// `n` evenly spaced poses with seeded polar jitter.
    pub fn poses(&self, n: usize, seed: u64, prefix: &str) -> Result<Vec<CameraView>, ShadingError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
                let az = self.azimuth_start_deg + t * (self.azimuth_end_deg - self.azimuth_start_deg);
                let jitter = if self.jitter_deg > 0.0 {
                    rng.random_range(-self.jitter_deg..=self.jitter_deg)
                } else {
                    0.0
                };
                self.camera(format!("{prefix}{i}"), self.polar_deg + jitter, az)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MorphSequenceConfig {
    pub steps: usize,
    pub views_per_step: usize,
    pub kappa_max: f64,
    pub extent: MorphExtent,
    pub light: [f64; 3],
    pub material: Material,
    pub background: f64,
    pub cameras: CameraArc,
    pub seed: u64,
}

impl Default for MorphSequenceConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            views_per_step: 6,
            kappa_max: 0.15,
            extent: MorphExtent {
                width: 12.0,
                length: 12.0,
            },
            light: [0.0, -2.0, 10.0],
            material: Material::default(),
            background: 0.0,
            cameras: CameraArc {
                target: [0.0, -2.0, 0.0],
                distance: 10.0,
                polar_deg: 35.0,
                azimuth_start_deg: -60.0,
                azimuth_end_deg: 240.0,
                jitter_deg: 4.0,
                focal: 560.0,
                width: 640,
                height: 480,
                aim_light: Some([0.0, -2.0, 10.0]),
            },
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MorphStep {
    pub index: usize,
    pub kappa: f64,
    pub scene: Scene,
}

/// Plane→cylinder morph: `steps` curvatures from 0 to `kappa_max`, each seen
/// from the same `views_per_step` poses.
pub fn gen_plane_cylinder_sequence(config: &MorphSequenceConfig) -> Result<Vec<MorphStep>, ShadingError> {
    if config.steps < 2 || config.views_per_step < 3 {
        return Err(ShadingError::InvalidScene(
            "a morph sequence needs at least 2 steps and 3 views per step".into(),
        ));
    }
    let poses = config.cameras.poses(config.views_per_step, config.seed, "v")?;
    (0..config.steps)
        .map(|k| {
            let kappa = config.kappa_max * k as f64 / (config.steps - 1) as f64;
            let views = poses
                .iter()
                .map(|v| {
                    let mut v = v.clone();
                    v.id = format!("k{k:02}_{}", v.id);
                    v
                })
                .collect();
            let scene = Scene::new(
                morph_surface(kappa, config.extent)?,
                Vec3::from(config.light),
                config.material,
                views,
                config.background,
            )?;
            Ok(MorphStep { index: k, kappa, scene })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EllipsoidSequenceConfig {
    pub frames: usize,
    /// Leading frames taken on the `cluster` ring.
    pub cluster_frames: usize,
    pub ellipsoid: EllipsoidRecord,
    pub light: [f64; 3],
    pub material: Material,
    pub background: f64,
    /// Poses of the leading frames, evenly spread over the arc.
    pub cluster: CameraArc,
    /// Path of the remaining frames. Polar angle runs linearly from
    /// `sweep.polar_deg` to `sweep_polar_end_deg`; negative angles cross the pole.
    pub sweep: CameraArc,
    pub sweep_polar_end_deg: f64,
    pub seed: u64,
    /// Aim each camera at the surface sample closest to mirror reflection
    /// instead of using the arc's aiming rule.
    pub aim_highlight: bool,
    /// Minimum number of pixels at or above `visibility_threshold`.
    pub min_area: usize,
    pub visibility_threshold: f64,
}

impl Default for EllipsoidSequenceConfig {
    fn default() -> Self {
        let arc = CameraArc {
            target: [0.0, 0.0, 0.0],
            distance: 10.0,
            polar_deg: 30.0,
            azimuth_start_deg: 0.0,
            azimuth_end_deg: 0.0,
            jitter_deg: 0.0,
            focal: 560.0,
            width: 640,
            height: 480,
            aim_light: None,
        };
        Self {
            frames: 80,
            cluster_frames: 6,
            ellipsoid: EllipsoidRecord {
                center: [0.0, 0.0, 0.0],
                axes: [8.0, 6.0, 1.6],
                rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            },
            light: [0.0, 3.0, 12.0],
            material: Material::default(),
            background: 0.0,
            cluster: CameraArc {
                azimuth_start_deg: 240.0,
                azimuth_end_deg: -60.0,
                ..arc.clone()
            },
            sweep: CameraArc {
                polar_deg: 20.0,
                azimuth_start_deg: 90.0,
                azimuth_end_deg: 90.0,
                ..arc
            },
            sweep_polar_end_deg: 70.0,
            seed: 11,
            aim_highlight: true,
            min_area: 20,
            visibility_threshold: 0.7,
        }
    }
}

fn mirror_sample(samples: &[crate::surfaces::SurfacePoint], light: &Vec3, eye: &Vec3) -> Vec3 {
    samples
        .iter()
        .filter(|s| s.normal.dot(&(eye - s.position)) > 0.0)
        .map(|s| {
            let h = (light - s.position).normalize() + (eye - s.position).normalize();
            (s.normal.dot(&h.normalize()), s.position)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map_or(Vec3::zeros(), |(_, p)| p)
}

/// Ellipsoid with unequal semi-axes seen from a ring of reconstruction
/// poses followed by a sweep. The returned scene holds the frames in order;
/// every frame is checked to show a highlight.
pub fn gen_ellipsoid_sequence(config: &EllipsoidSequenceConfig) -> Result<Scene, ShadingError> {
    if config.frames < 7 || config.cluster_frames < 3 || config.cluster_frames >= config.frames {
        return Err(ShadingError::InvalidScene(
            "an ellipsoid sequence needs at least 7 frames and a cluster of 3 or more".into(),
        ));
    }
    let surface = SurfaceModel::ellipsoid(EllipsoidShape::from(&config.ellipsoid))?;
    let light = Vec3::from(config.light);
    let samples = surface.seeds(256).unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n, nc) = (config.frames, config.cluster_frames);
    let mut views = Vec::with_capacity(n);
    for i in 0..n {
        let (arc, polar, az) = if i < nc {
            let c = &config.cluster;
            let t = i as f64 / (nc - 1) as f64;
            (c, c.polar_deg, c.azimuth_start_deg + t * (c.azimuth_end_deg - c.azimuth_start_deg))
        } else {
            let s = &config.sweep;
            let t = (i - nc + 1) as f64 / (n - nc) as f64;
            (
                s,
                s.polar_deg + t * (config.sweep_polar_end_deg - s.polar_deg),
                s.azimuth_start_deg + t * (s.azimuth_end_deg - s.azimuth_start_deg),
            )
        };
        let jitter = if arc.jitter_deg > 0.0 {
            rng.random_range(-arc.jitter_deg..=arc.jitter_deg)
        } else {
            0.0
        };
        let id = format!("f{i:02}");
        views.push(if config.aim_highlight {
            let eye = arc.eye(polar + jitter, az);
            arc.look_from(id, eye, mirror_sample(&samples, &light, &eye))?
        } else {
            arc.camera(id, polar + jitter, az)?
        });
    }
    let scene = Scene::new(surface, light, config.material, views, config.background)?;
    for v in &scene.views {
        let img = render(&scene, v);
        let area = img
            .data
            .iter()
            .filter(|&&x| f64::from(x) >= config.visibility_threshold)
            .count();
        if area < config.min_area {
            return Err(ShadingError::InvalidScene(format!(
                "frame {} shows no highlight ({area} bright pixels)",
                v.id
            )));
        }
    }
    Ok(scene)
}
