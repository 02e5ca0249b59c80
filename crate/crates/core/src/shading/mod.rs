//! Torrance–Sparrow rendering of point-lit glossy surfaces.

mod sequence;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CameraRecord, CameraView, Vec3};
use crate::pnm::{Grid16, PnmError};
use crate::surfaces::{SurfaceError, SurfaceModel, SurfaceSpec};

pub use sequence::{
    gen_ellipsoid_sequence, gen_plane_cylinder_sequence, CameraArc, EllipsoidSequenceConfig, MorphSequenceConfig,
    MorphStep,
};

#[derive(Debug, Error)]
pub enum ShadingError {
    #[error("light and view directions are opposite; half-way vector undefined")]
    Degenerate,
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Specular gain `K'`.
    pub k_spec: f64,
    /// Roughness `m` in radians.
    pub roughness: f64,
    /// Lambertian albedo.
    pub k_d: f64,
    pub ambient: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            k_spec: 1.0,
            roughness: 0.08,
            k_d: 0.3,
            ambient: 0.05,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<(), ShadingError> {
        if !(self.k_spec > 0.0) {
            return Err(ShadingError::InvalidMaterial("k_spec must be positive".into()));
        }
        if !(self.roughness > 0.0) {
            return Err(ShadingError::InvalidMaterial("roughness must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.k_d) {
            return Err(ShadingError::InvalidMaterial("k_d must lie in [0, 1]".into()));
        }
        if !(self.ambient >= 0.0) {
            return Err(ShadingError::InvalidMaterial("ambient must be non-negative".into()));
        }
        Ok(())
    }

    /// Incident angle at which the specular term alone equals `level`.
    pub fn limit_angle(&self, level: f64) -> Option<f64> {
        let r = level / self.k_spec;
        (r > 0.0 && r <= 1.0).then(|| self.roughness * (-r.ln()).sqrt())
    }
}

/// Unit bisector of the directions from `p` to the light `l` and the viewer `v`.
pub fn halfway_vector(l: &Vec3, v: &Vec3, p: &Vec3) -> Result<Vec3, ShadingError> {
    let lh = (l - p).try_normalize(1e-300).ok_or(ShadingError::Degenerate)?;
    let vh = (v - p).try_normalize(1e-300).ok_or(ShadingError::Degenerate)?;
    halfway_from_directions(&lh, &vh)
}

pub fn halfway_from_directions(l_hat: &Vec3, v_hat: &Vec3) -> Result<Vec3, ShadingError> {
    (l_hat + v_hat).try_normalize(1e-12).ok_or(ShadingError::Degenerate)
}

pub fn incident_angle(n: &Vec3, h: &Vec3) -> f64 {
    n.dot(h).clamp(-1.0, 1.0).acos()
}

pub fn shade(material: &Material, alpha: f64, n: &Vec3, l_hat: &Vec3) -> f64 {
    material.ambient
        + material.k_d * n.dot(l_hat).max(0.0)
        + material.k_spec * (-(alpha / material.roughness).powi(2)).exp()
}

/// Row-major float intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: f32) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// 16-bit grayscale with the count→intensity factor in the header.
    pub fn to_grid(&self) -> Grid16 {
        let scale = f64::from(self.max()).max(1.0) / 65535.0;
        let mut g = Grid16::new(self.width, self.height, 1);
        g.meta.insert("intensity_scale".into(), scale.to_string());
        for (dst, &v) in g.data.iter_mut().zip(&self.data) {
            *dst = (f64::from(v) / scale).round().clamp(0.0, 65535.0) as u16;
        }
        g
    }

    pub fn from_grid(g: &Grid16) -> Result<Self, ShadingError> {
        if g.channels != 1 {
            return Err(PnmError::Format("intensity image must be single-channel".into()).into());
        }
        let scale = g.meta_f64("intensity_scale").unwrap_or(1.0 / 65535.0);
        Ok(Self {
            width: g.width,
            height: g.height,
            data: g.data.iter().map(|&v| (f64::from(v) * scale) as f32).collect(),
        })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), ShadingError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.to_grid().write(f)?;
        Ok(())
    }

    pub fn read_pgm(path: &Path) -> Result<Self, ShadingError> {
        let f = std::fs::File::open(path)?;
        Self::from_grid(&Grid16::read(f)?)
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub surface: SurfaceModel,
    pub light: Vec3,
    pub material: Material,
    pub views: Vec<CameraView>,
    pub background: f64,
}

impl Scene {
    pub fn new(
        surface: SurfaceModel,
        light: Vec3,
        material: Material,
        views: Vec<CameraView>,
        background: f64,
    ) -> Result<Self, ShadingError> {
        material.validate()?;
        if let Some(r) = surface.implicit(&light) {
            if r.abs() < 1e-9 {
                return Err(ShadingError::InvalidScene("light lies on the surface".into()));
            }
        }
        Ok(Self {
            surface,
            light,
            material,
            views,
            background,
        })
    }

    /// Shaded intensity of the surface point seen along `dir` from `eye`, or
    /// `None` when the ray misses.
    pub fn radiance(&self, eye: &Vec3, dir: &Vec3) -> Option<f64> {
        let hit = self.surface.intersect_ray(eye, dir)?;
        let l_hat = (self.light - hit.position).normalize();
        let v_hat = -dir;
        let alpha = match halfway_from_directions(&l_hat, &v_hat) {
            Ok(h) => incident_angle(&hit.normal, &h),
            Err(_) => std::f64::consts::PI,
        };
        Some(shade(&self.material, alpha, &hit.normal, &l_hat))
    }
}

/// One ray per pixel center.
pub fn render(scene: &Scene, view: &CameraView) -> Image {
    let (w, h) = (view.width as usize, view.height as usize);
    let eye = view.center();
    let mut img = Image::new(w, h, 0.0);
    img.data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            let dir = view.pixel_ray(x as f64, y as f64);
            *px = scene.radiance(&eye, &dir).unwrap_or(scene.background) as f32;
        }
    });
    img
}

/// JSON scene document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub surface: SurfaceSpec,
    pub light: [f64; 3],
    #[serde(default)]
    pub material: Material,
    pub views: Vec<CameraRecord>,
    #[serde(default)]
    pub background: f64,
}

impl SceneSpec {
    pub fn build(&self, base_dir: &Path) -> Result<Scene, ShadingError> {
        let views = self
            .views
            .iter()
            .map(|r| CameraView::try_from(r.clone()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ShadingError::InvalidScene(e.to_string()))?;
        Scene::new(
            self.surface.build(base_dir)?,
            Vec3::from(self.light),
            self.material,
            views,
            self.background,
        )
    }
}
