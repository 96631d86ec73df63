use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::camgeo::CameraIntrinsics;
use crate::error::{Error, Result};

/// Triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let m = Self { vertices, faces };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::invalid("mesh has no faces"));
        }
        let n = self.vertices.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::invalid(format!("face {f:?} references a missing vertex")));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("mesh has non-finite vertices"));
        }
        Ok(())
    }

    /// Axis-aligned box centered at the origin with the given full extents.
    pub fn cuboid(dx: f64, dy: f64, dz: f64) -> Result<Self> {
        if !(dx > 0.0 && dy > 0.0 && dz > 0.0) {
            return Err(Error::invalid("cuboid extents must be positive"));
        }
        let (hx, hy, hz) = (dx / 2.0, dy / 2.0, dz / 2.0);
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            vertices.push(Vector3::new(
                if i & 1 == 0 { -hx } else { hx },
                if i & 2 == 0 { -hy } else { hy },
                if i & 4 == 0 { -hz } else { hz },
            ));
        }
        // outward winding
        let quads = [
            [0, 2, 3, 1], // z-
            [4, 5, 7, 6], // z+
            [0, 1, 5, 4], // y-
            [2, 6, 7, 3], // y+
            [0, 4, 6, 2], // x-
            [1, 3, 7, 5], // x+
        ];
        let faces = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        Self::new(vertices, faces)
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        0.5 * (self.vertices[b] - self.vertices[a])
            .cross(&(self.vertices[c] - self.vertices[a]))
            .norm()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64
    }

    /// Largest vertex distance from the vertex centroid.
    pub fn radius(&self) -> f64 {
        let c = self.centroid();
        self.vertices.iter().map(|v| (v - c).norm()).fold(0.0, f64::max)
    }

    /// Area-weighted surface samples with uniform barycentric coordinates.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vector3<f64>>> {
        let mut cdf = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            total += self.face_area(f);
            cdf.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::Degenerate("mesh has zero surface area".into()));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * total;
            let f = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let [a, b, c] = self.faces[f];
            let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            let (va, vb, vc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
            out.push(va + (vb - va) * r1 + (vc - va) * r2);
        }
        Ok(out)
    }

    /// Parses `v x y z` and `f a b c ...` lines; polygons are fan-triangulated
    /// and `a/b/c` index forms keep only the vertex index.
    pub fn parse_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::schema("obj", format!("line {}: {e}", lineno + 1)))?;
                    if c.len() != 3 {
                        return Err(Error::schema("obj", format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx = it
                        .map(|s| {
                            let head = s.split('/').next().unwrap_or("");
                            let i: i64 = head
                                .parse()
                                .map_err(|e| Error::schema("obj", format!("line {}: {e}", lineno + 1)))?;
                            let n = vertices.len() as i64;
                            let resolved = if i < 0 { n + i } else { i - 1 };
                            if resolved < 0 || resolved >= n {
                                return Err(Error::schema("obj", format!("line {}: index {i} out of range", lineno + 1)));
                            }
                            Ok(resolved as usize)
                        })
                        .collect::<Result<Vec<usize>>>()?;
                    if idx.len() < 3 {
                        return Err(Error::schema("obj", format!("line {}: face needs 3 vertices", lineno + 1)));
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, faces)
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn read_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text)
    }
}

/// Binary foreground mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape(format!("mask data of length {} does not fit {width}x{height}", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    /// Foreground pixel centers, row-major.
    pub fn foreground(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.push([x as f64, y as f64]);
                }
            }
        }
        out
    }

    /// Inclusive pixel bounding box `(x0, y0, x1, y1)` of the foreground.
    pub fn bounding_box(&self) -> Option<[f64; 4]> {
        let fg = self.foreground();
        if fg.is_empty() {
            return None;
        }
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in fg {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        Some(b)
    }

    /// ASCII PGM (P2); nonzero values are foreground.
    pub fn parse_pgm(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        if tokens.next() != Some("P2") {
            return Err(Error::schema("pgm", "expected P2 magic"));
        }
        let mut num = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| Error::schema("pgm", format!("missing {what}")))?
                .parse()
                .map_err(|e| Error::schema("pgm", format!("bad {what}: {e}")))
        };
        let width = num("width")?;
        let height = num("height")?;
        let maxval = num("maxval")?;
        if maxval == 0 {
            return Err(Error::schema("pgm", "maxval must be positive"));
        }
        let mut data = Vec::with_capacity(width * height);
        for _ in 0..width * height {
            data.push(num("pixel")? > 0);
        }
        Self::new(width, height, data)
    }

    pub fn to_pgm(&self) -> String {
        let mut s = format!("P2\n{} {}\n1\n", self.width, self.height);
        for row in self.data.chunks(self.width) {
            let line: Vec<&str> = row.iter().map(|&v| if v { "1" } else { "0" }).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_pgm(&text)
    }
}

/// Silhouette of `mesh` under `x_cam = R x + t`, sampled at pixel centers.
/// Triangles with a vertex at or behind the camera plane are skipped.
pub fn render_mask(
    mesh: &TriMesh,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    intr: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> MaskImage {
    let mut mask = MaskImage::empty(width, height);
    let proj: Vec<Option<[f64; 2]>> = mesh
        .vertices
        .iter()
        .map(|v| {
            let c = rotation * v + translation;
            (c.z > 1e-9).then(|| [intr.fx * c.x / c.z + intr.cx, intr.fy * c.y / c.z + intr.cy])
        })
        .collect();
    for f in &mesh.faces {
        let (Some(a), Some(b), Some(c)) = (proj[f[0]], proj[f[1]], proj[f[2]]) else {
            continue;
        };
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = a[0].min(b[0]).min(c[0]).ceil().max(0.0) as usize;
        let y0 = a[1].min(b[1]).min(c[1]).ceil().max(0.0) as usize;
        let x1 = a[0].max(b[0]).max(c[0]).floor().min(width as f64 - 1.0);
        let y1 = a[1].max(b[1]).max(c[1]).floor().min(height as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let p = [x as f64, y as f64];
                let e = |u: [f64; 2], v: [f64; 2]| ((v[0] - u[0]) * (p[1] - u[1]) - (v[1] - u[1]) * (p[0] - u[0])) * area.signum();
                if e(a, b) >= 0.0 && e(b, c) >= 0.0 && e(c, a) >= 0.0 {
                    mask.data[y * width + x] = true;
                }
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cuboid_geometry() {
        let m = TriMesh::cuboid(2.0, 3.0, 4.0).unwrap();
        assert_eq!(m.faces.len(), 12);
        let area: f64 = (0..12).map(|f| m.face_area(f)).sum();
        assert!((area - 2.0 * (6.0 + 8.0 + 12.0)).abs() < 1e-12);
        // outward normals
        for f in &m.faces {
            let [a, b, c] = f.map(|i| m.vertices[i]);
            let n = (b - a).cross(&(c - a));
            assert!(n.dot(&((a + b + c) / 3.0)) > 0.0);
        }
    }

    #[test]
    fn samples_lie_on_surface_by_area() {
        let m = TriMesh::cuboid(1.0, 1.0, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts = m.sample_surface(20000, &mut rng).unwrap();
        let mut big = 0;
        for p in &pts {
            let on = (p.x.abs() - 0.5).abs() < 1e-12 || (p.y.abs() - 0.5).abs() < 1e-12 || (p.z.abs() - 2.0).abs() < 1e-12;
            assert!(on);
            if (p.z.abs() - 2.0).abs() > 1e-12 {
                big += 1;
            }
        }
        // side faces hold 16 of the 18 unit areas
        let frac = big as f64 / pts.len() as f64;
        assert!((frac - 16.0 / 18.0).abs() < 0.01, "{frac}");
    }

    #[test]
    fn obj_roundtrip_and_errors() {
        let m = TriMesh::cuboid(1.0, 2.0, 3.0).unwrap();
        let back = TriMesh::parse_obj(&m.to_obj()).unwrap();
        assert_eq!(back, m);
        let quad = TriMesh::parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n").unwrap();
        assert_eq!(quad.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(TriMesh::parse_obj("v 0 0 0\nf 1 2 3\n").is_err());
        assert!(TriMesh::parse_obj("v 0 0\n").is_err());
    }

    #[test]
    fn pgm_roundtrip() {
        let mask = MaskImage::new(3, 2, vec![true, false, false, false, true, true]).unwrap();
        let back = MaskImage::parse_pgm(&mask.to_pgm()).unwrap();
        assert_eq!(back, mask);
        let commented = MaskImage::parse_pgm("P2 # c\n2 1\n255\n0 200\n").unwrap();
        assert_eq!(commented.data, vec![false, true]);
        assert!(MaskImage::parse_pgm("P5\n1 1\n1\n0").is_err());
        assert!(MaskImage::parse_pgm("P2\n2 2\n1\n0 1 1").is_err());
    }

    #[test]
    fn rendered_square_matches_projection() {
        // face-on unit square at depth 10: 100 px side
        let m = TriMesh::cuboid(1.0, 1.0, 0.01).unwrap();
        let intr = CameraIntrinsics::centered_f1000(400.0, 400.0);
        let mask = render_mask(&m, &Matrix3::identity(), &Vector3::new(0.0, 0.0, 10.0), &intr, 400, 400);
        let b = mask.bounding_box().unwrap();
        assert!(b[0] >= 149.0 && b[0] <= 151.0 && b[2] >= 249.0 && b[2] <= 251.0, "{b:?}");
        let n = mask.count() as f64;
        assert!((n - 101.0 * 101.0).abs() < 300.0, "{n}");
        let behind = render_mask(&m, &Matrix3::identity(), &Vector3::new(0.0, 0.0, -10.0), &intr, 400, 400);
        assert_eq!(behind.count(), 0);
    }
}
