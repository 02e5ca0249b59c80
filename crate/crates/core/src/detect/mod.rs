//! Highlight segmentation, contour tracing, brightest-point estimation and
//! back-projection onto the surface.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{fit_ellipse, CameraView, Ellipse, GeomError, Vec2, Vec3};
use crate::shading::Image;
use crate::surfaces::{SurfaceModel, SurfacePoint};

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("no specularity above the threshold")]
    NoSpecularity,
    #[error("back-projection ray through pixel ({0:.2}, {1:.2}) misses the surface")]
    BackprojectionMiss(f64, f64),
    #[error("specularity touches the image border")]
    Clipped,
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub threshold: f64,
    pub min_area: usize,
    pub reject_clipped: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            min_area: 20,
            reject_clipped: true,
        }
    }
}

/// An 8-connected set of pixels at or above the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    /// Raster-ordered `(x, y)`.
    pub pixels: Vec<(usize, usize)>,
    /// `[x_min, y_min, x_max, y_max]`, inclusive.
    pub bbox: [usize; 4],
}

impl Blob {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn touches_border(&self, width: usize, height: usize) -> bool {
        let [x0, y0, x1, y1] = self.bbox;
        x0 == 0 || y0 == 0 || x1 + 1 >= width || y1 + 1 >= height
    }

    fn mask(&self) -> Mask {
        let [x0, y0, x1, y1] = self.bbox;
        // One pixel of padding on each side.
        let (w, h) = (x1 - x0 + 3, y1 - y0 + 3);
        let mut bits = vec![false; w * h];
        for &(x, y) in &self.pixels {
            bits[(y - y0 + 1) * w + (x - x0 + 1)] = true;
        }
        Mask {
            ox: x0 as isize - 1,
            oy: y0 as isize - 1,
            w,
            h,
            bits,
        }
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.pixels.len() as f64;
        let s = self
            .pixels
            .iter()
            .fold(Vec2::zeros(), |acc, &(x, y)| acc + Vec2::new(x as f64, y as f64));
        s / n
    }
}

struct Mask {
    ox: isize,
    oy: isize,
    w: usize,
    h: usize,
    bits: Vec<bool>,
}

impl Mask {
    fn at(&self, x: isize, y: isize) -> bool {
        let (lx, ly) = (x - self.ox, y - self.oy);
        lx >= 0 && ly >= 0 && (lx as usize) < self.w && (ly as usize) < self.h && self.bits[ly as usize * self.w + lx as usize]
    }
}

/// 8-connected components of `{I ≥ threshold}`, largest first; components
/// smaller than `min_area` are dropped.
pub fn segment(image: &Image, threshold: f64, min_area: usize) -> Result<Vec<Blob>, DetectError> {
    let (w, h) = (image.width, image.height);
    let on = |i: usize| f64::from(image.data[i]) >= threshold;
    let mut label = vec![false; w * h];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if label[start] || !on(start) {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !label[j] && on(j) {
                        label[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if pixels.len() >= min_area {
            pixels.sort_by_key(|&(x, y)| (y, x));
            let mut bbox = [usize::MAX, usize::MAX, 0, 0];
            for &(x, y) in &pixels {
                bbox[0] = bbox[0].min(x);
                bbox[1] = bbox[1].min(y);
                bbox[2] = bbox[2].max(x);
                bbox[3] = bbox[3].max(y);
            }
            blobs.push(Blob { pixels, bbox });
        }
    }
    if blobs.is_empty() {
        return Err(DetectError::NoSpecularity);
    }
    // Stable: ties keep raster order of their first pixel.
    blobs.sort_by(|a, b| b.area().cmp(&a.area()));
    Ok(blobs)
}

// Clockwise as displayed (v down): W, NW, N, NE, E, SE, S, SW.
const MOORE: [(isize, isize); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn moore_index(d: (isize, isize)) -> usize {
    MOORE.iter().position(|&m| m == d).expect("unit neighbor offset")
}

/// Outer boundary pixels by Moore-neighbor tracing, in order of positive
/// signed area in `(u, v)` coordinates.
pub fn trace_boundary(blob: &Blob) -> Vec<(isize, isize)> {
    let mask = blob.mask();
    let (sx, sy) = blob.pixels[0];
    let start = (sx as isize, sy as isize);
    let mut out = vec![start];
    let mut cur = start;
    let mut back = 0usize; // entered from the west
    loop {
        let mut next = None;
        for k in 1..=8 {
            let idx = (back + k) % 8;
            let p = (cur.0 + MOORE[idx].0, cur.1 + MOORE[idx].1);
            if mask.at(p.0, p.1) {
                let prev = (back + k - 1) % 8;
                let bpos = (cur.0 + MOORE[prev].0, cur.1 + MOORE[prev].1);
                next = Some((p, moore_index((bpos.0 - p.0, bpos.1 - p.1))));
                break;
            }
        }
        let Some((p, nb)) = next else {
            break; // isolated pixel
        };
        if cur == start && out.len() > 1 && p == out[1] {
            break;
        }
        out.push(p);
        cur = p;
        back = nb;
        if out.len() > 4 * blob.area() + 8 {
            break;
        }
    }
    if out.len() > 1 && out.last() == Some(&start) {
        out.pop();
    }
    out
}

fn bilinear(image: &Image, p: &Vec2) -> Option<f64> {
    let (w, h) = (image.width as f64, image.height as f64);
    if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= w - 1.0 && p.y <= h - 1.0) {
        return None;
    }
    let x0 = (p.x.floor() as usize).min(image.width - 2);
    let y0 = (p.y.floor() as usize).min(image.height - 2);
    let (fx, fy) = (p.x - x0 as f64, p.y - y0 as f64);
    let g = |x: usize, y: usize| f64::from(image.get(x, y));
    Some(
        g(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + g(x0 + 1, y0) * fx * (1.0 - fy)
            + g(x0, y0 + 1) * (1.0 - fx) * fy
            + g(x0 + 1, y0 + 1) * fx * fy,
    )
}

fn gradient(image: &Image, x: usize, y: usize) -> Vec2 {
    let g = |x: usize, y: usize| f64::from(image.get(x, y));
    let xm = x.saturating_sub(1);
    let xp = (x + 1).min(image.width - 1);
    let ym = y.saturating_sub(1);
    let yp = (y + 1).min(image.height - 1);
    Vec2::new(
        (g(xp, y) - g(xm, y)) / (xp - xm).max(1) as f64,
        (g(x, yp) - g(x, ym)) / (yp - ym).max(1) as f64,
    )
}

/// Boundary pixels moved to the interpolated threshold crossing along the
/// descending intensity gradient.
pub fn extract_contour(image: &Image, blob: &Blob, threshold: f64) -> Vec<Vec2> {
    trace_boundary(blob)
        .into_iter()
        .map(|(x, y)| {
            let p = Vec2::new(x as f64, y as f64);
            let g = gradient(image, x as usize, y as usize);
            let Some(out) = (-g).try_normalize(1e-12) else {
                return p;
            };
            refine_crossing(image, &p, &out, threshold).unwrap_or(p)
        })
        .collect()
}

fn refine_crossing(image: &Image, p: &Vec2, out: &Vec2, threshold: f64) -> Option<Vec2> {
    const DS: f64 = 0.125;
    let mut s0 = 0.0;
    let mut i0 = bilinear(image, p)?;
    if i0 < threshold {
        return None;
    }
    while s0 < 2.0 {
        let s1 = s0 + DS;
        let i1 = bilinear(image, &(p + out * s1))?;
        if i1 < threshold {
            let t = (i0 - threshold) / (i0 - i1);
            return Some(p + out * (s0 + t * DS));
        }
        s0 = s1;
        i0 = i1;
    }
    None
}

/// `(I − t)`-weighted centroid of the blob pixels with `I ≥ t`, where `t`
/// sits 5% of the blob's intensity range below its maximum.
pub fn brightest_point(image: &Image, blob: &Blob) -> Vec2 {
    let vals: Vec<f64> = blob.pixels.iter().map(|&(x, y)| f64::from(image.get(x, y))).collect();
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let cut = hi - 0.05 * (hi - lo);
    let mut sum = Vec2::zeros();
    let mut wsum = 0.0;
    for (&(x, y), &v) in blob.pixels.iter().zip(&vals) {
        if v >= cut {
            let w = if hi > lo { v - cut } else { 1.0 };
            sum += Vec2::new(x as f64, y as f64) * w;
            wsum += w;
        }
    }
    if wsum > 0.0 {
        sum / wsum
    } else {
        // Every selected pixel sits exactly at the cut: plain centroid.
        let sel: Vec<_> = blob.pixels.iter().zip(&vals).filter(|(_, &v)| v >= hi).collect();
        sel.iter()
            .fold(Vec2::zeros(), |acc, ((x, y), _)| acc + Vec2::new(*x as f64, *y as f64))
            / sel.len() as f64
    }
}

/// One view's detected highlight lifted onto the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecularObservation {
    pub view_id: String,
    pub contour_px: Vec<Vec2>,
    pub brightest_px: Vec2,
    pub ellipse_img: Ellipse,
    pub p_b: SurfacePoint,
    pub contour_s: Vec<Vec3>,
}

pub fn lift_observation(
    view: &CameraView,
    surface: &SurfaceModel,
    image: &Image,
    blob: &Blob,
    config: &DetectConfig,
) -> Result<SpecularObservation, DetectError> {
    if config.reject_clipped && blob.touches_border(image.width, image.height) {
        return Err(DetectError::Clipped);
    }
    let contour_px = extract_contour(image, blob, config.threshold);
    let brightest_px = brightest_point(image, blob);
    let ellipse_img = fit_ellipse(&contour_px)?;
    let eye = view.center();
    let lift = |q: &Vec2| {
        surface
            .intersect_ray(&eye, &view.pixel_ray(q.x, q.y))
            .ok_or(DetectError::BackprojectionMiss(q.x, q.y))
    };
    let p_b = lift(&brightest_px)?;
    let contour_s = contour_px.iter().map(|q| lift(q).map(|s| s.position)).collect::<Result<_, _>>()?;
    Ok(SpecularObservation {
        view_id: view.id.clone(),
        contour_px,
        brightest_px,
        ellipse_img,
        p_b,
        contour_s,
    })
}

/// Largest blob, or the one whose brightest point is nearest `previous`
/// when tracking across frames.
pub fn select_blob<'a>(image: &Image, blobs: &'a [Blob], previous: Option<&Vec2>) -> Option<&'a Blob> {
    match previous {
        None => blobs.first(),
        Some(prev) => blobs
            .iter()
            .min_by(|a, b| {
                let da = (brightest_point(image, a) - prev).norm();
                let db = (brightest_point(image, b) - prev).norm();
                da.total_cmp(&db)
            }),
    }
}

/// Segments, selects and lifts in one call.
pub fn observe(
    view: &CameraView,
    surface: &SurfaceModel,
    image: &Image,
    config: &DetectConfig,
) -> Result<SpecularObservation, DetectError> {
    let blobs = segment(image, config.threshold, config.min_area)?;
    lift_observation(view, surface, image, &blobs[0], config)
}

/// Per-frame detection export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub view_id: String,
    pub brightest_px: [f64; 2],
    pub contour_px: Vec<[f64; 2]>,
    pub ellipse: Ellipse,
}

impl DetectionRecord {
    pub fn from_parts(view_id: &str, brightest: &Vec2, contour: &[Vec2], ellipse: &Ellipse) -> Self {
        Self {
            view_id: view_id.to_string(),
            brightest_px: [brightest.x, brightest.y],
            contour_px: contour.iter().map(|p| [p.x, p.y]).collect(),
            ellipse: ellipse.clone(),
        }
    }
}

impl From<&SpecularObservation> for DetectionRecord {
    fn from(o: &SpecularObservation) -> Self {
        Self::from_parts(&o.view_id, &o.brightest_px, &o.contour_px, &o.ellipse_img)
    }
}
