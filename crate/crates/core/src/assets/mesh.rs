use std::fs;
use std::path::Path;

use super::bvh::{Bvh, NearestHit, RayHit, TriangleSource};
use super::ply;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};

/// Triangles at or below this area are dropped on load.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Triangle mesh used only for collision and ground-truth queries.
#[derive(Debug, Clone)]
pub struct CollisionMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
    bounds: Aabb,
    bvh: Bvh,
}

/// Deepest sphere penetration against the mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub point: Vec3,
    /// Unit vector from the surface toward the sphere center.
    pub normal: Vec3,
    pub depth: f64,
    pub triangle: usize,
}

struct Tris<'a> {
    vertices: &'a [Vec3],
    triangles: &'a [[u32; 3]],
}

impl TriangleSource for Tris<'_> {
    fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    fn corners(&self, tri: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[tri];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }
}

impl TriangleSource for CollisionMesh {
    fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    fn corners(&self, tri: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[tri];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }
}

impl CollisionMesh {
    /// Validates indices, drops degenerate triangles, recomputes normals from
    /// winding and builds the hierarchy.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some((i, t)) = triangles
            .iter()
            .enumerate()
            .find(|(_, t)| t.iter().any(|&v| v as usize >= n))
        {
            return Err(Error::format(
                "mesh",
                format!("triangle {i} references vertex {t:?} but only {n} vertices exist"),
            ));
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::format("mesh", format!("vertex {i} is not finite")));
        }
        let mut kept = Vec::with_capacity(triangles.len());
        let mut normals = Vec::with_capacity(triangles.len());
        for t in triangles {
            let [a, b, c] = t.map(|i| vertices[i as usize]);
            let cross = (b - a).cross(&(c - a));
            let area = 0.5 * cross.norm();
            if area > DEGENERATE_AREA {
                kept.push(t);
                normals.push(cross / (2.0 * area));
            }
        }
        if kept.is_empty() {
            return Err(Error::format("mesh", "no non-degenerate triangles"));
        }
        let bounds = Aabb::from_points(kept.iter().flat_map(|t| t.iter().map(|&i| &vertices[i as usize])));
        let bvh = Bvh::build(&Tris {
            vertices: &vertices,
            triangles: &kept,
        });
        Ok(CollisionMesh {
            vertices,
            triangles: kept,
            normals,
            bounds,
            bvh,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Self> {
        CollisionMesh::new(self.vertices.iter().map(f).collect(), self.triangles.clone())
    }

    pub fn nearest(&self, p: &Vec3) -> Option<NearestHit> {
        self.bvh.nearest(self, p, f64::INFINITY)
    }

    /// Deepest-penetration contact of a sphere, i.e. the closest triangle inside
    /// the radius.
    pub fn sphere_contact(&self, center: &Vec3, radius: f64) -> Option<Contact> {
        let hit = self.bvh.nearest(self, center, radius * radius)?;
        let d = hit.distance_squared.sqrt();
        if d >= radius {
            return None;
        }
        let normal = if d > 1e-9 {
            (center - hit.point) / d
        } else {
            self.normals[hit.triangle]
        };
        Some(Contact {
            point: hit.point,
            normal,
            depth: radius - d,
            triangle: hit.triangle,
        })
    }

    pub fn any_within(&self, p: &Vec3, distance: f64) -> bool {
        self.bvh.any_within(self, p, distance * distance)
    }

    pub fn raycast(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<RayHit> {
        self.bvh.raycast(self, origin, dir, t_max)
    }

    /// Height of the first surface below `(x, y)` when looking down from `z_top`.
    pub fn height_below(&self, x: f64, y: f64, z_top: f64) -> Option<f64> {
        let origin = Vec3::new(x, y, z_top);
        let down = Vec3::new(0.0, 0.0, -1.0);
        self.raycast(&origin, &down, f64::INFINITY).map(|h| z_top - h.t)
    }
}

/// Loads an OBJ or PLY triangle mesh, chosen by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<CollisionMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let context = path.display().to_string();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let (vertices, triangles) = match ext.as_str() {
        "obj" => parse_obj(&String::from_utf8_lossy(&bytes), &context)?,
        "ply" => ply::load_mesh_ply(&bytes, &context)?,
        other => {
            return Err(Error::format(context, format!("unsupported mesh extension '{other}'")));
        }
    };
    if triangles.is_empty() {
        return Err(Error::format(context, "mesh has no faces"));
    }
    CollisionMesh::new(vertices, triangles).map_err(|e| match e {
        Error::Format { message, .. } => Error::format(path.display().to_string(), message),
        other => other,
    })
}

pub fn parse_obj(text: &str, context: &str) -> Result<(Vec<Vec3>, Vec<[u32; 3]>)> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut v = [0.0; 3];
                for c in &mut v {
                    let tok = toks
                        .next()
                        .ok_or_else(|| Error::format(context, format!("line {}: short vertex", lineno + 1)))?;
                    *c = tok
                        .parse()
                        .map_err(|_| Error::format(context, format!("line {}: bad number '{tok}'", lineno + 1)))?;
                }
                vertices.push(Vec3::new(v[0], v[1], v[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in toks {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| Error::format(context, format!("line {}: bad face index '{tok}'", lineno + 1)))?;
                    let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                    if resolved < 0 {
                        return Err(Error::format(
                            context,
                            format!("line {}: face index {i} out of range", lineno + 1),
                        ));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(Error::format(
                        context,
                        format!("line {}: face with < 3 vertices", lineno + 1),
                    ));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, triangles))
}

pub fn write_obj(path: impl AsRef<Path>, vertices: &[Vec3], triangles: &[[u32; 3]]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for v in vertices {
        s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in triangles {
        s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Axis-aligned box `[min, max]` as 12 outward-wound triangles.
pub fn box_mesh(min: [f64; 3], max: [f64; 3]) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let v = |x: usize, y: usize, z: usize| {
        Vec3::new(
            if x == 0 { min[0] } else { max[0] },
            if y == 0 { min[1] } else { max[1] },
            if z == 0 { min[2] } else { max[2] },
        )
    };
    let vertices = vec![
        v(0, 0, 0),
        v(1, 0, 0),
        v(1, 1, 0),
        v(0, 1, 0),
        v(0, 0, 1),
        v(1, 0, 1),
        v(1, 1, 1),
        v(0, 1, 1),
    ];
    let triangles = vec![
        [0, 2, 1],
        [0, 3, 2], // bottom
        [4, 5, 6],
        [4, 6, 7], // top
        [0, 1, 5],
        [0, 5, 4], // front (y = min)
        [2, 3, 7],
        [2, 7, 6], // back
        [1, 2, 6],
        [1, 6, 5], // right
        [3, 0, 4],
        [3, 4, 7], // left
    ];
    (vertices, triangles)
}

/// Square floor patch `[-half, half]^2` at height `z`, split into `n x n` quads.
pub fn grid_plane(half: f64, n: usize, z: f64) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let x = -half + 2.0 * half * i as f64 / n as f64;
            let y = -half + 2.0 * half * j as f64 / n as f64;
            vertices.push(Vec3::new(x, y, z));
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    let id = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    for j in 0..n {
        for i in 0..n {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    (vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const CUBE_OBJ: &str = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
        f 1 3 2\nf 1 4 3\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5\nf 3 4 8\nf 3 8 7\nf 2 3 7\nf 2 7 6\nf 4 1 5\nf 4 5 8\n";

    fn cube() -> CollisionMesh {
        let (v, t) = parse_obj(CUBE_OBJ, "cube").unwrap();
        CollisionMesh::new(v, t).unwrap()
    }

    #[test]
    fn unit_cube_obj() {
        let m = cube();
        assert_eq!(m.triangles().len(), 12);
        assert_eq!(m.bounds(), Aabb::new([0.0; 3], [1.0; 3]));
        // outward winding: top normals point up
        assert_relative_eq!(m.normals()[2], Vec3::z());
    }

    #[test]
    fn degenerate_triangle_is_dropped() {
        let (mut v, mut t) = grid_plane(1.0, 2, 0.0); // 8 triangles
        v.push(Vec3::new(5.0, 5.0, 5.0));
        let extra = (v.len() - 1) as u32;
        t.push([0, 1, 4]); // non-degenerate, 9th
        t.push([extra, extra, 0]); // zero area, 10th
        assert_eq!(t.len(), 10);
        let m = CollisionMesh::new(v, t).unwrap();
        assert_eq!(m.triangles().len(), 9);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(CollisionMesh::new(v, vec![[0, 1, 3]]).is_err());
    }

    #[test]
    fn sphere_on_cube_top() {
        let m = cube();
        let c = m.sphere_contact(&Vec3::new(0.5, 0.5, 1.05), 0.1).unwrap();
        assert_relative_eq!(c.normal, Vec3::z(), epsilon = 1e-12);
        assert_relative_eq!(c.depth, 0.05, epsilon = 1e-12);
        assert!(m.sphere_contact(&Vec3::new(5.0, 5.0, 5.0), 0.1).is_none());
    }

    #[test]
    fn height_below_plane() {
        let (v, t) = grid_plane(2.0, 4, 0.25);
        let m = CollisionMesh::new(v, t).unwrap();
        assert_relative_eq!(m.height_below(0.3, -0.7, 5.0).unwrap(), 0.25, epsilon = 1e-12);
        assert!(m.height_below(3.0, 0.0, 5.0).is_none());
    }

    #[test]
    fn missing_mesh_file_is_io_error() {
        let err = load_mesh("/nonexistent/mesh.obj").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
