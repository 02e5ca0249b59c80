//! Smooth-shaded triangle meshes with a bounding-volume hierarchy.

use std::io::{BufRead, BufReader, Read};

use super::{SurfaceError, SurfacePoint};
use crate::geom::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&o.min),
            max: self.max.sup(&o.max),
        }
    }

    fn distance_squared(&self, p: &Vec3) -> f64 {
        let d = (self.min - p).sup(&(p - self.max)).sup(&Vec3::zeros());
        d.norm_squared()
    }

    /// Slab test; returns the entry parameter when the ray hits before `t_max`.
    fn ray_entry(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            // NaN from 0·∞ keeps the previous bound.
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, first: usize, count: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

/// Triangle mesh with per-vertex normals, interpolated barycentrically.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
    nodes: Vec<Node>,
    /// Face indices in leaf order.
    order: Vec<usize>,
    mean_edge: f64,
}

/// Nearest point on one triangle.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FaceHit {
    pub face: usize,
    pub point: Vec3,
    pub bary: Vec3,
    pub distance_squared: f64,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, normals: Vec<Vec3>) -> Result<Self, SurfaceError> {
        if faces.is_empty() {
            return Err(SurfaceError::Invalid("mesh has no faces".into()));
        }
        if normals.len() != vertices.len() {
            return Err(SurfaceError::Invalid(format!(
                "mesh has {} vertices but {} normals",
                vertices.len(),
                normals.len()
            )));
        }
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(SurfaceError::Invalid(format!("face {f:?} references a missing vertex")));
        }
        let normals = normals
            .into_iter()
            .map(|n| {
                n.try_normalize(1e-300)
                    .ok_or_else(|| SurfaceError::Invalid("zero-length vertex normal".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut edge_sum = 0.0;
        for f in &faces {
            for k in 0..3 {
                edge_sum += (vertices[f[k]] - vertices[f[(k + 1) % 3]]).norm();
            }
        }
        let mean_edge = edge_sum / (3 * faces.len()) as f64;
        let mut mesh = Self {
            vertices,
            faces,
            normals,
            nodes: Vec::new(),
            order: Vec::new(),
            mean_edge,
        };
        mesh.build_bvh();
        Ok(mesh)
    }

    /// Builds a mesh, computing area-weighted smooth vertex normals.
    pub fn with_smooth_normals(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, SurfaceError> {
        let mut normals = vec![Vec3::zeros(); vertices.len()];
        for f in &faces {
            let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            for &i in f {
                normals[i] += n;
            }
        }
        Self::new(vertices, faces, normals)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn mean_edge(&self) -> f64 {
        self.mean_edge
    }

    pub fn bounding_diagonal(&self) -> f64 {
        let b = self.nodes[0].bounds();
        (b.max - b.min).norm()
    }

    fn face_bounds(&self, f: usize) -> Aabb {
        let mut b = Aabb::empty();
        for &i in &self.faces[f] {
            b.grow(&self.vertices[i]);
        }
        b
    }

    fn centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0
    }

    fn build_bvh(&mut self) {
        self.order = (0..self.faces.len()).collect();
        self.nodes.clear();
        let n = self.order.len();
        self.build_node(0, n);
    }

    fn build_node(&mut self, first: usize, count: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &f in &self.order[first..first + count] {
            bounds = bounds.merge(&self.face_bounds(f));
            cbounds.grow(&self.centroid(f));
        }
        let idx = self.nodes.len();
        if count <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, first, count });
            return idx;
        }
        let extent = cbounds.max - cbounds.min;
        let axis = extent.imax();
        let mut slice: Vec<usize> = self.order[first..first + count].to_vec();
        let keys: Vec<f64> = slice.iter().map(|&f| self.centroid(f)[axis]).collect();
        let mut paired: Vec<(f64, usize)> = keys.into_iter().zip(slice.drain(..)).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (k, (_, f)) in paired.into_iter().enumerate() {
            self.order[first + k] = f;
        }
        let half = count / 2;
        self.nodes.push(Node::Leaf { bounds, first, count });
        let left = self.build_node(first, half);
        let right = self.build_node(first + half, count - half);
        self.nodes[idx] = Node::Inner { bounds, left, right };
        idx
    }

    pub fn interpolated_normal(&self, face: usize, bary: &Vec3) -> Vec3 {
        let [a, b, c] = self.faces[face];
        (self.normals[a] * bary.x + self.normals[b] * bary.y + self.normals[c] * bary.z).normalize()
    }

    pub(crate) fn nearest_face(&self, p: &Vec3) -> FaceHit {
        let mut best = FaceHit {
            face: 0,
            point: self.vertices[self.faces[0][0]],
            bary: Vec3::x(),
            distance_squared: f64::INFINITY,
        };
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds().distance_squared(p) >= best.distance_squared {
                continue;
            }
            match *node {
                Node::Leaf { first, count, .. } => {
                    for &f in &self.order[first..first + count] {
                        let [a, b, c] = self.faces[f];
                        let (q, bary) = closest_on_triangle(p, &self.vertices[a], &self.vertices[b], &self.vertices[c]);
                        let d2 = (q - p).norm_squared();
                        if d2 < best.distance_squared {
                            best = FaceHit {
                                face: f,
                                point: q,
                                bary,
                                distance_squared: d2,
                            };
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance_squared(p);
                    let dr = self.nodes[right].bounds().distance_squared(p);
                    if dl < dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }

    pub fn closest_point(&self, p: &Vec3) -> SurfacePoint {
        let hit = self.nearest_face(p);
        SurfacePoint::new(hit.point, self.interpolated_normal(hit.face, &hit.bary))
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.nearest_face(p).distance_squared.sqrt()
    }

    pub fn normal_at(&self, p: &Vec3) -> Result<Vec3, SurfaceError> {
        let hit = self.nearest_face(p);
        if hit.distance_squared.sqrt() > 1e-6 * self.bounding_diagonal().max(1.0) {
            return Err(SurfaceError::OffSurface);
        }
        Ok(self.interpolated_normal(hit.face, &hit.bary))
    }

    /// Nearest ray hit as `(t, face, barycentrics)`.
    pub(crate) fn ray_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize, Vec3)> {
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<(f64, usize, Vec3)> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let t_max = best.map_or(f64::INFINITY, |b| b.0);
            let node = &self.nodes[ni];
            if node.bounds().ray_entry(origin, &inv, t_max).is_none() {
                continue;
            }
            match *node {
                Node::Leaf { first, count, .. } => {
                    for &f in &self.order[first..first + count] {
                        let [a, b, c] = self.faces[f];
                        if let Some((t, bary)) =
                            ray_triangle(origin, dir, &self.vertices[a], &self.vertices[b], &self.vertices[c])
                        {
                            if t > 1e-9 && best.is_none_or(|bb| t < bb.0) {
                                best = Some((t, f, bary));
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        best
    }

    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<SurfacePoint> {
        let (t, face, bary) = self.ray_hit(origin, dir)?;
        Some(SurfacePoint::new(origin + dir * t, self.interpolated_normal(face, &bary)))
    }

    /// Reads the OFF-style text format: `OFF`, a `nv nf ne` header, vertex
    /// lines, `3 i j k` face lines, then a `NORMALS nv` section with one
    /// normal per vertex. `#` starts a comment.
    pub fn read_off<R: Read>(reader: R) -> Result<Self, SurfaceError> {
        let mut tokens = Vec::new();
        for (ln, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| SurfaceError::Parse(format!("line {}: {e}", ln + 1)))?;
            let content = line.split('#').next().unwrap_or("");
            for tok in content.split_whitespace() {
                tokens.push((ln + 1, tok.to_string()));
            }
        }
        let mut it = tokens.into_iter();
        let mut next = |what: &str| -> Result<(usize, String), SurfaceError> {
            it.next()
                .ok_or_else(|| SurfaceError::Parse(format!("unexpected end of file reading {what}")))
        };
        let (ln, magic) = next("header")?;
        if magic != "OFF" {
            return Err(SurfaceError::Parse(format!("line {ln}: expected OFF, found {magic}")));
        }
        fn num<T: std::str::FromStr>((ln, s): (usize, String), what: &str) -> Result<T, SurfaceError> {
            s.parse()
                .map_err(|_| SurfaceError::Parse(format!("line {ln}: invalid {what} '{s}'")))
        }
        let nv: usize = num(next("vertex count")?, "vertex count")?;
        let nf: usize = num(next("face count")?, "face count")?;
        let _ne: usize = num(next("edge count")?, "edge count")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let x = num(next("vertex")?, "coordinate")?;
            let y = num(next("vertex")?, "coordinate")?;
            let z = num(next("vertex")?, "coordinate")?;
            vertices.push(Vec3::new(x, y, z));
        }
        let mut faces = Vec::with_capacity(nf);
        for _ in 0..nf {
            let tok = next("face")?;
            let ln = tok.0;
            let k: usize = num(tok, "face arity")?;
            if k != 3 {
                return Err(SurfaceError::Parse(format!("line {ln}: only triangles are supported, found {k}-gon")));
            }
            faces.push([
                num(next("face")?, "vertex index")?,
                num(next("face")?, "vertex index")?,
                num(next("face")?, "vertex index")?,
            ]);
        }
        let (ln, tag) = next("NORMALS section")?;
        if tag != "NORMALS" {
            return Err(SurfaceError::Parse(format!("line {ln}: expected NORMALS, found {tag}")));
        }
        let nn: usize = num(next("normal count")?, "normal count")?;
        if nn != nv {
            return Err(SurfaceError::Parse(format!(
                "line {ln}: {nn} normals for {nv} vertices"
            )));
        }
        let mut normals = Vec::with_capacity(nn);
        for _ in 0..nn {
            let x = num(next("normal")?, "normal")?;
            let y = num(next("normal")?, "normal")?;
            let z = num(next("normal")?, "normal")?;
            normals.push(Vec3::new(x, y, z));
        }
        reject_faceted(&vertices, &normals)?;
        Self::new(vertices, faces, normals)
    }

    pub fn write_off<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "OFF")?;
        writeln!(w, "{} {} 0", self.vertices.len(), self.faces.len())?;
        for v in &self.vertices {
            writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
        }
        for f in &self.faces {
            writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
        }
        writeln!(w, "NORMALS {}", self.normals.len())?;
        for n in &self.normals {
            writeln!(w, "{} {} {}", n.x, n.y, n.z)?;
        }
        Ok(())
    }
}

/// Coincident vertices carrying different normals indicate per-face
/// (faceted) shading, which breaks normal continuity across edges.
fn reject_faceted(vertices: &[Vec3], normals: &[Vec3]) -> Result<(), SurfaceError> {
    let mut keyed: Vec<(usize, [i64; 3])> = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (i, [(v.x * 1e9).round() as i64, (v.y * 1e9).round() as i64, (v.z * 1e9).round() as i64]))
        .collect();
    keyed.sort_by_key(|&(i, k)| (k, i));
    for w in keyed.windows(2) {
        if w[0].1 == w[1].1 {
            let (a, b) = (normals[w[0].0], normals[w[1].0]);
            if (a.normalize() - b.normalize()).norm() > 1e-6 {
                log::warn!("mesh rejected: vertices {} and {} coincide with different normals", w[0].0, w[1].0);
                return Err(SurfaceError::Faceted);
            }
        }
    }
    Ok(())
}

/// Closest point on triangle `abc` to `p` with barycentrics (Ericson).
pub(crate) fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, Vec3) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Vec3::new(1.0, 0.0, 0.0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Vec3::new(0.0, 1.0, 0.0));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Vec3::new(1.0 - v, v, 0.0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Vec3::new(0.0, 0.0, 1.0));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Vec3::new(1.0 - w, 0.0, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Vec3::new(0.0, 1.0 - w, w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Vec3::new(1.0 - v - w, v, w))
}

/// Möller–Trumbore; returns `(t, barycentrics)`.
fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(f64, Vec3)> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv;
    let tol = 1e-12;
    if u < -tol || u > 1.0 + tol {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < -tol || u + v > 1.0 + tol {
        return None;
    }
    let t = e2.dot(&qvec) * inv;
    Some((t, Vec3::new(1.0 - u - v, u, v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn unit_square() -> TriangleMesh {
        let v = vec![
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(1.0, -1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(-1.0, 1.0, 0.0),
        ];
        TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 3]], vec![Vec3::z(); 4]).unwrap()
    }

    #[test]
    fn square_queries() {
        let m = unit_square();
        let hit = m.intersect_ray(&Vec3::new(0.2, 0.3, 2.0), &-Vec3::z()).unwrap();
        assert_relative_eq!(hit.position, Vec3::new(0.2, 0.3, 0.0), epsilon = 1e-12);
        assert!(m.intersect_ray(&Vec3::new(3.0, 0.0, 2.0), &-Vec3::z()).is_none());
        let cp = m.closest_point(&Vec3::new(0.5, -0.5, 3.0));
        assert_relative_eq!(cp.position, Vec3::new(0.5, -0.5, 0.0), epsilon = 1e-12);
        assert_eq!(m.normal_at(&Vec3::new(0.1, 0.1, 0.5)), Err(SurfaceError::OffSurface));
    }

    #[test]
    fn off_round_trip_and_errors() {
        let m = unit_square();
        let mut buf = Vec::new();
        m.write_off(&mut buf).unwrap();
        let back = TriangleMesh::read_off(&buf[..]).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.faces(), m.faces());

        let truncated = &buf[..buf.len() / 2];
        assert!(matches!(TriangleMesh::read_off(truncated), Err(SurfaceError::Parse(_))));
        let no_normals = String::from_utf8(buf.clone()).unwrap();
        let no_normals = no_normals.split("NORMALS").next().unwrap();
        assert!(matches!(TriangleMesh::read_off(no_normals.as_bytes()), Err(SurfaceError::Parse(_))));
    }

    #[test]
    fn faceted_normals_rejected() {
        let text = "OFF\n4 2 0\n0 0 0\n1 0 0\n0 1 0\n0 0 0\n3 0 1 2\n3 3 1 2\nNORMALS 4\n0 0 1\n0 0 1\n0 0 1\n1 0 0\n";
        assert_eq!(TriangleMesh::read_off(text.as_bytes()).err(), Some(SurfaceError::Faceted));
    }

    #[test]
    fn triangle_closest_point_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        let (q, _) = closest_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert_relative_eq!(q, a);
        let (q, bary) = closest_on_triangle(&Vec3::new(0.2, 0.2, 1.0), &a, &b, &c);
        assert_relative_eq!(q, Vec3::new(0.2, 0.2, 0.0), epsilon = 1e-15);
        assert_relative_eq!(bary.sum(), 1.0, epsilon = 1e-15);
        let (q, _) = closest_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert_relative_eq!(q, Vec3::new(0.5, 0.5, 0.0), epsilon = 1e-15);
    }
}
