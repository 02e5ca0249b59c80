//! Depth + normal grids registered to a camera.

use std::path::Path;

use super::mesh::TriangleMesh;
use super::{SurfaceError, SurfacePoint};
use crate::geom::{CameraView, Vec2, Vec3};
use crate::pnm::Grid16;

/// Default metres-per-count of the 16-bit depth grid.
pub const DEFAULT_DEPTH_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    /// Gaussian smoothing of the normal grid, standard deviation in cells
    /// (0 disables it).
    pub normal_smoothing: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { normal_smoothing: 0.0 }
    }
}

/// A depth grid and a normal grid sampled at the pixels of a registration
/// camera. Depth is the camera-frame `z`. Missing samples are filled at
/// construction by 4-neighbor diffusion.
#[derive(Debug, Clone)]
pub struct GridSurface {
    camera: CameraView,
    width: usize,
    height: usize,
    depth: Vec<f64>,
    normals: Vec<Vec3>,
    mesh: TriangleMesh,
    bounds: (Vec3, Vec3),
}

impl GridSurface {
    /// `depth` and `normals` are row-major with `None` marking holes.
    pub fn new(
        camera: CameraView,
        depth: Vec<Option<f64>>,
        normals: Vec<Option<Vec3>>,
        options: GridOptions,
    ) -> Result<Self, SurfaceError> {
        let (width, height) = (camera.width as usize, camera.height as usize);
        if width < 2 || height < 2 {
            return Err(SurfaceError::Invalid("grid needs at least 2×2 samples".into()));
        }
        if depth.len() != width * height || normals.len() != width * height {
            return Err(SurfaceError::Invalid(format!(
                "grid sample counts ({}, {}) do not match the {width}×{height} registration camera",
                depth.len(),
                normals.len()
            )));
        }
        let depth = diffuse_fill(width, height, &depth).ok_or_else(|| SurfaceError::Invalid("depth grid has no valid samples".into()))?;
        let mut nx = Vec::with_capacity(normals.len());
        let mut ny = Vec::with_capacity(normals.len());
        let mut nz = Vec::with_capacity(normals.len());
        for n in &normals {
            nx.push(n.map(|v| v.x));
            ny.push(n.map(|v| v.y));
            nz.push(n.map(|v| v.z));
        }
        let mut channels = [nx, ny, nz]
            .iter()
            .map(|c| diffuse_fill(width, height, c))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| SurfaceError::Invalid("normal grid has no valid samples".into()))?;
        if options.normal_smoothing > 0.0 {
            for c in channels.iter_mut() {
                *c = gaussian_blur(width, height, c, options.normal_smoothing);
            }
        }
        let normals: Vec<Vec3> = (0..width * height)
            .map(|i| {
                Vec3::new(channels[0][i], channels[1][i], channels[2][i])
                    .try_normalize(1e-300)
                    .unwrap_or_else(|| -camera.forward())
            })
            .collect();

        let mut vertices = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                vertices.push(back_project(&camera, x as f64, y as f64, depth[y * width + x]));
            }
        }
        let mut faces = Vec::with_capacity(2 * (width - 1) * (height - 1));
        for y in 0..height - 1 {
            for x in 0..width - 1 {
                let i = y * width + x;
                faces.push([i, i + 1, i + width + 1]);
                faces.push([i, i + width + 1, i + width]);
            }
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let mesh = TriangleMesh::new(vertices, faces, normals.clone())?;
        Ok(Self {
            camera,
            width,
            height,
            depth,
            normals,
            mesh,
            bounds: (lo, hi),
        })
    }

    /// Samples an analytic surface from a registration camera (synthetic
    /// fixtures). Pixels whose rays miss become holes.
    pub fn sample_surface(
        surface: &super::SurfaceModel,
        camera: &CameraView,
    ) -> (Vec<Option<f64>>, Vec<Option<Vec3>>) {
        let center = camera.center();
        let mut depth = Vec::with_capacity((camera.width * camera.height) as usize);
        let mut normals = Vec::with_capacity(depth.capacity());
        for y in 0..camera.height {
            for x in 0..camera.width {
                let dir = camera.pixel_ray(f64::from(x), f64::from(y));
                match surface.intersect_ray(&center, &dir) {
                    Some(hit) => {
                        let z = (camera.rotation * hit.position + camera.translation).z;
                        depth.push(Some(z));
                        normals.push(Some(hit.normal));
                    }
                    None => {
                        depth.push(None);
                        normals.push(None);
                    }
                }
            }
        }
        (depth, normals)
    }

    pub fn camera(&self) -> &CameraView {
        &self.camera
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn cell_size(&self) -> f64 {
        self.mesh.mean_edge()
    }

    fn bilinear<T, F>(&self, u: f64, v: f64, get: F) -> Option<T>
    where
        T: std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
        F: Fn(usize) -> T,
    {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(u >= -0.5 && v >= -0.5 && u <= w - 0.5 && v <= h - 0.5) {
            return None;
        }
        let u = u.clamp(0.0, w - 1.0);
        let v = v.clamp(0.0, h - 1.0);
        let x0 = (u.floor() as usize).min(self.width - 2);
        let y0 = (v.floor() as usize).min(self.height - 2);
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let i = y0 * self.width + x0;
        Some(
            get(i) * ((1.0 - fx) * (1.0 - fy))
                + get(i + 1) * (fx * (1.0 - fy))
                + get(i + self.width) * ((1.0 - fx) * fy)
                + get(i + self.width + 1) * (fx * fy),
        )
    }

    fn normal_at_pixel(&self, uv: &Vec2) -> Option<Vec3> {
        self.bilinear(uv.x, uv.y, |i| self.normals[i])?
            .try_normalize(1e-300)
    }

    fn depth_at_pixel(&self, uv: &Vec2) -> Option<f64> {
        self.bilinear(uv.x, uv.y, |i| self.depth[i])
    }

    /// Bilinear interpolation of the normal grid at the registration pixel of `p`.
    pub fn normal_at(&self, p: &Vec3) -> Result<Vec3, SurfaceError> {
        if self.mesh.distance(p) > 0.25 * self.cell_size() {
            return Err(SurfaceError::OffSurface);
        }
        let uv = self.camera.project(p).ok_or(SurfaceError::OffSurface)?;
        self.normal_at_pixel(&uv).ok_or(SurfaceError::OffSurface)
    }

    pub fn closest_point(&self, p: &Vec3) -> Result<SurfacePoint, SurfaceError> {
        let q = self.mesh.closest_point(p).position;
        let uv = self.camera.project(&q).ok_or(SurfaceError::OffSurface)?;
        let n = self.normal_at_pixel(&uv).ok_or(SurfaceError::OffSurface)?;
        Ok(SurfacePoint::new(q, n))
    }

    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<SurfacePoint> {
        let c = self.camera.center();
        if (origin - c).norm() <= 1e-9 * c.norm().max(1.0) {
            return self.depth_lookup(dir);
        }
        self.march(origin, dir)
    }

    fn depth_lookup(&self, dir: &Vec3) -> Option<SurfacePoint> {
        let c = self.camera.center();
        let uv = self.camera.project(&(c + dir))?;
        let z = self.depth_at_pixel(&uv)?;
        let dz = (self.camera.rotation * dir).z;
        if dz <= 0.0 {
            return None;
        }
        let p = c + dir * (z / dz);
        Some(SurfacePoint::new(p, self.normal_at_pixel(&uv)?))
    }

    /// Signed depth of `p` relative to the grid along the registration line
    /// of sight (positive = behind the surface).
    fn depth_offset(&self, p: &Vec3) -> Option<f64> {
        let z = (self.camera.rotation * p + self.camera.translation).z;
        if z <= 0.0 {
            return None;
        }
        let uv = self.camera.project(p)?;
        Some(z - self.depth_at_pixel(&uv)?)
    }

    fn march(&self, origin: &Vec3, dir: &Vec3) -> Option<SurfacePoint> {
        let (lo, hi) = self.bounds;
        let pad = self.cell_size();
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for k in 0..3 {
            let inv = 1.0 / dir[k];
            let a = (lo[k] - pad - origin[k]) * inv;
            let b = (hi[k] + pad - origin[k]) * inv;
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            if a > t0 {
                t0 = a;
            }
            if b < t1 {
                t1 = b;
            }
        }
        if !(t0 <= t1) {
            return None;
        }
        let step = 0.5 * self.cell_size();
        let jump = 4.0 * self.cell_size();
        let mut prev: Option<(f64, f64)> = None;
        let mut t = t0;
        while t <= t1 + step {
            if let Some(d) = self.depth_offset(&(origin + dir * t)) {
                if let Some((tp, dp)) = prev {
                    if dp < 0.0 && d >= 0.0 && dp.abs() < jump && d.abs() < jump {
                        let (mut a, mut b) = (tp, t);
                        for _ in 0..60 {
                            let m = 0.5 * (a + b);
                            match self.depth_offset(&(origin + dir * m)) {
                                Some(dm) if dm < 0.0 => a = m,
                                Some(_) => b = m,
                                None => break,
                            }
                        }
                        let p = origin + dir * (0.5 * (a + b));
                        let uv = self.camera.project(&p)?;
                        return Some(SurfacePoint::new(p, self.normal_at_pixel(&uv)?));
                    }
                }
                prev = Some((t, d));
            } else {
                prev = None;
            }
            t += step;
        }
        None
    }

    pub fn seeds(&self, n: usize) -> Vec<SurfacePoint> {
        let n = n.max(1);
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let x = ((i as f64 + 0.5) / n as f64 * self.width as f64) as usize;
                let y = ((j as f64 + 0.5) / n as f64 * self.height as f64) as usize;
                let k = y.min(self.height - 1) * self.width + x.min(self.width - 1);
                out.push(SurfacePoint::new(self.mesh.vertices()[k], self.normals[k]));
            }
        }
        out
    }

    /// Reads a depth grid (`P5`, optional `# depth_scale` header) and a normal
    /// grid (`P6`, each channel mapping `[-1, 1]` onto `[0, 65535]`). Zero
    /// samples are holes.
    pub fn read_files(
        depth_path: &Path,
        normals_path: &Path,
        camera: CameraView,
        options: GridOptions,
    ) -> Result<Self, SurfaceError> {
        let read = |p: &Path| -> Result<Grid16, SurfaceError> {
            let f = std::fs::File::open(p).map_err(|e| SurfaceError::Parse(format!("{}: {e}", p.display())))?;
            Grid16::read(f).map_err(|e| SurfaceError::Parse(format!("{}: {e}", p.display())))
        };
        let dg = read(depth_path)?;
        let ng = read(normals_path)?;
        let (depth, normals) = decode_grids(&dg, &ng, &camera)?;
        Self::new(camera, depth, normals, options)
    }
}

/// Encodes sampled depth/normal grids into the 16-bit file layout.
pub fn encode_grids(
    width: usize,
    height: usize,
    depth: &[Option<f64>],
    normals: &[Option<Vec3>],
    depth_scale: f64,
) -> (Grid16, Grid16) {
    let mut dg = Grid16::new(width, height, 1);
    dg.meta.insert("depth_scale".into(), depth_scale.to_string());
    let mut ng = Grid16::new(width, height, 3);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if let Some(z) = depth[i] {
                dg.set(x, y, 0, (z / depth_scale).round().clamp(1.0, 65535.0) as u16);
            }
            if let Some(n) = normals[i] {
                for c in 0..3 {
                    let v = ((n[c].clamp(-1.0, 1.0) + 1.0) * 0.5 * 65535.0).round().max(1.0);
                    ng.set(x, y, c, v as u16);
                }
            }
        }
    }
    (dg, ng)
}

pub fn decode_grids(
    dg: &Grid16,
    ng: &Grid16,
    camera: &CameraView,
) -> Result<(Vec<Option<f64>>, Vec<Option<Vec3>>), SurfaceError> {
    let (w, h) = (camera.width as usize, camera.height as usize);
    if dg.channels != 1 || ng.channels != 3 {
        return Err(SurfaceError::Parse("depth must be single-channel and normals three-channel".into()));
    }
    if (dg.width, dg.height) != (w, h) || (ng.width, ng.height) != (w, h) {
        return Err(SurfaceError::Parse(format!(
            "grid sizes {}×{} / {}×{} differ from the registration camera {w}×{h}",
            dg.width, dg.height, ng.width, ng.height
        )));
    }
    let scale = dg.meta_f64("depth_scale").unwrap_or(DEFAULT_DEPTH_SCALE);
    let depth = dg
        .data
        .iter()
        .map(|&d| (d != 0).then(|| f64::from(d) * scale))
        .collect();
    let normals = ng
        .data
        .chunks_exact(3)
        .map(|c| {
            if c.iter().all(|&v| v == 0) {
                None
            } else {
                Vec3::new(
                    f64::from(c[0]) / 65535.0 * 2.0 - 1.0,
                    f64::from(c[1]) / 65535.0 * 2.0 - 1.0,
                    f64::from(c[2]) / 65535.0 * 2.0 - 1.0,
                )
                .try_normalize(1e-12)
            }
        })
        .collect();
    Ok((depth, normals))
}

fn back_project(camera: &CameraView, u: f64, v: f64, z: f64) -> Vec3 {
    let d = Vec3::new((u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0) * z;
    camera.rotation.transpose() * (d - camera.translation)
}

/// Fills `None` samples by Gauss–Seidel 4-neighbor averaging until the
/// largest update falls below 1e-9 of the data range.
fn diffuse_fill(width: usize, height: usize, values: &[Option<f64>]) -> Option<Vec<f64>> {
    let valid: Vec<f64> = values.iter().flatten().copied().collect();
    if valid.is_empty() {
        return None;
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    let (lo, hi) = valid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let tol = 1e-9 * (hi - lo).abs().max(mean.abs()).max(1e-300);
    let mut out: Vec<f64> = values.iter().map(|v| v.unwrap_or(mean)).collect();
    let holes: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_none()).collect();
    for _ in 0..20_000 {
        let mut max_change: f64 = 0.0;
        for &i in &holes {
            let (x, y) = (i % width, i / width);
            let mut sum = 0.0;
            let mut n = 0.0;
            if x > 0 {
                sum += out[i - 1];
                n += 1.0;
            }
            if x + 1 < width {
                sum += out[i + 1];
                n += 1.0;
            }
            if y > 0 {
                sum += out[i - width];
                n += 1.0;
            }
            if y + 1 < height {
                sum += out[i + width];
                n += 1.0;
            }
            let v = sum / n;
            max_change = max_change.max((v - out[i]).abs());
            out[i] = v;
        }
        if max_change <= tol {
            break;
        }
    }
    Some(out)
}

fn gaussian_blur(width: usize, height: usize, values: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; src.len()];
        for y in 0..height {
            for x in 0..width {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for (ki, k) in (-radius..=radius).enumerate() {
                    let (sx, sy) = if horizontal {
                        (x as isize + k, y as isize)
                    } else {
                        (x as isize, y as isize + k)
                    };
                    if sx < 0 || sy < 0 || sx >= width as isize || sy >= height as isize {
                        continue;
                    }
                    acc += kernel[ki] * src[sy as usize * width + sx as usize];
                    wsum += kernel[ki];
                }
                dst[y * width + x] = acc / wsum;
            }
        }
        dst
    };
    pass(&pass(values, true), false)
}
