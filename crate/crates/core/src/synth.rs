//! Procedural scenes and random draws for tests, benchmarks and demos.

use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assets::manifest::{SceneEntry, SceneManifest, SpawnBox};
use crate::assets::mesh::{box_mesh, grid_plane, write_obj};
use crate::assets::{write_splat_ply, CollisionMesh, GaussianSplatScene, PenaltyRegion, SplatPrimitive};
use crate::error::Result;
use crate::geometry::{Aabb, Vec3};
use crate::raster::look_at;

/// Uniformly random unit quaternion `(w, x, y, z)`.
pub fn random_rotation(rng: &mut impl Rng) -> [f32; 4] {
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        gauss(rng),
        gauss(rng),
        gauss(rng),
        gauss(rng),
    ));
    [q.w as f32, q.i as f32, q.j as f32, q.k as f32]
}

fn gauss(rng: &mut impl Rng) -> f64 {
    // Box-Muller; good enough for orientation sampling
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Anisotropic splat near `center` with per-axis sigma in `[0.2, 1] * size`.
pub fn random_splat(rng: &mut impl Rng, center: [f32; 3], spread: f32, size: f32) -> SplatPrimitive {
    let position = center.map(|c| c + rng.random_range(-spread..=spread));
    SplatPrimitive {
        position,
        rotation: random_rotation(rng),
        scale: [0; 3].map(|_| size * rng.random_range(0.2f32..1.0)),
        opacity: rng.random_range(0.05f32..1.0),
        sh_dc: [0; 3].map(|_| rng.random_range(-1.7f32..1.7)),
        sh_rest: Vec::new(),
    }
}

pub fn random_splats(rng: &mut impl Rng, n: usize, center: [f32; 3], spread: f32, size: f32) -> Vec<SplatPrimitive> {
    (0..n).map(|_| random_splat(rng, center, spread, size)).collect()
}

/// Camera at distance `[r_min, r_max]` from `target`, looking at it from a
/// random direction (never straight down or up).
pub fn orbit_camera(rng: &mut impl Rng, target: Vec3, r_min: f64, r_max: f64) -> Isometry3<f64> {
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let pitch = rng.random_range(-1.0f64..1.0);
    let r = rng.random_range(r_min..=r_max);
    let eye = target + r * Vec3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin());
    look_at(eye, target, Vector3::z())
}

/// Splats sampled uniformly over the mesh surface, flattened along each
/// triangle normal. `color` picks a color for a surface point and its normal.
pub fn surface_splats(
    mesh: &CollisionMesh,
    n: usize,
    rng: &mut impl Rng,
    color: impl Fn(&Vec3, &Vec3) -> [f32; 3],
) -> Vec<SplatPrimitive> {
    let areas: Vec<f64> = (0..mesh.triangles().len()).map(|t| mesh.triangle_area(t)).collect();
    let total: f64 = areas.iter().sum();
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }
    let sigma = (0.6 * (total / n.max(1) as f64).sqrt()) as f32;
    (0..n)
        .map(|_| {
            let pick = rng.random_range(0.0..total);
            let t = cumulative.partition_point(|&c| c < pick).min(areas.len() - 1);
            let [a, b, c] = mesh.triangles()[t].map(|i| mesh.vertices()[i as usize]);
            let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let p = a + u * (b - a) + v * (c - a);
            let nrm = mesh.normals()[t];
            let rot = Rotation3::rotation_between(&Vector3::z(), &nrm)
                .unwrap_or_else(|| Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
            let q = UnitQuaternion::from_rotation_matrix(&rot);
            SplatPrimitive {
                position: [p.x as f32, p.y as f32, p.z as f32],
                rotation: [q.w as f32, q.i as f32, q.j as f32, q.k as f32],
                scale: [sigma, sigma, 0.2 * sigma],
                opacity: 0.9,
                sh_dc: color(&p, &nrm).map(|c| (c - 0.5) / crate::assets::splat::SH_C0),
                sh_rest: Vec::new(),
            }
        })
        .collect()
}

fn merge(parts: &[(Vec<Vec3>, Vec<[u32; 3]>)]) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let mut v = Vec::new();
    let mut t = Vec::new();
    for (pv, pt) in parts {
        let base = v.len() as u32;
        v.extend_from_slice(pv);
        t.extend(pt.iter().map(|tri| tri.map(|i| i + base)));
    }
    (v, t)
}

/// Yellow floor patch used as the penalty region of [`room_scene`].
pub const PATCH: [[f64; 2]; 4] = [[1.5, -0.75], [3.0, -0.75], [3.0, 0.75], [1.5, 0.75]];
pub const PATCH_WEIGHT: f64 = -5.0;

/// A 12 x 12 m room: checkered floor at z = 0, a 0.3 m step, two pillars, a
/// yellow penalty patch on the floor and a spawn box at the origin.
pub fn room_scene(id: &str, n_splats: usize, seed: u64) -> GaussianSplatScene {
    let (v, t) = merge(&[
        grid_plane(6.0, 12, 0.0),
        box_mesh([4.0, -2.0, 0.0], [5.5, 2.0, 0.3]),
        box_mesh([-3.0, 2.0, 0.0], [-2.5, 2.5, 2.0]),
        box_mesh([-3.0, -2.5, 0.0], [-2.5, -2.0, 2.0]),
    ]);
    let mesh = CollisionMesh::new(v, t).expect("room mesh is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats = surface_splats(&mesh, n_splats, &mut rng, room_color);
    GaussianSplatScene::new(id, splats, mesh)
        .with_spawn_regions(vec![Aabb::new([-1.0, -1.0, -0.1], [1.0, 1.0, 1.0])])
        .with_penalty_regions(vec![PenaltyRegion {
            polygon: PATCH.to_vec(),
            weight: PATCH_WEIGHT,
        }])
}

fn room_color(p: &Vec3, n: &Vec3) -> [f32; 3] {
    if n.z > 0.9 && p.z < 0.01 {
        let inside_patch = p.x >= PATCH[0][0] && p.x <= PATCH[2][0] && p.y >= PATCH[0][1] && p.y <= PATCH[2][1];
        if inside_patch {
            return [0.95, 0.85, 0.1];
        }
        let check = ((p.x * 2.0).floor() + (p.y * 2.0).floor()).rem_euclid(2.0) == 0.0;
        return if check { [0.75, 0.72, 0.68] } else { [0.35, 0.33, 0.3] };
    }
    if p.z > 0.29 && p.z < 0.31 && n.z > 0.9 {
        return [0.2, 0.45, 0.8];
    }
    [0.6, 0.25, 0.2]
}

/// Flat floor only, `half` meters in each direction, spawn box at the origin.
pub fn flat_scene(id: &str, n_splats: usize, half: f64, seed: u64) -> GaussianSplatScene {
    let (v, t) = grid_plane(half, 8, 0.0);
    let mesh = CollisionMesh::new(v, t).expect("plane is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats = surface_splats(&mesh, n_splats, &mut rng, |p, _| {
        let check = ((p.x * 2.0).floor() + (p.y * 2.0).floor()).rem_euclid(2.0) == 0.0;
        if check {
            [0.8, 0.8, 0.8]
        } else {
            [0.2, 0.2, 0.2]
        }
    });
    let s = (half - 0.5).max(0.1);
    GaussianSplatScene::new(id, splats, mesh).with_spawn_regions(vec![Aabb::new([-s, -s, -0.1], [s, s, 1.0])])
}

/// Writes each scene's splats (PLY) and mesh (OBJ) into `dir` plus a
/// `scenes.toml` manifest; returns the manifest path.
pub fn write_scene_set(dir: &Path, scenes: &[GaussianSplatScene]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let mut entries = Vec::new();
    for s in scenes {
        let splats = PathBuf::from(format!("{}.ply", s.scene_id));
        let mesh = PathBuf::from(format!("{}.obj", s.scene_id));
        write_splat_ply(dir.join(&splats), &s.splats)?;
        write_obj(dir.join(&mesh), s.mesh.vertices(), s.mesh.triangles())?;
        entries.push(SceneEntry {
            id: s.scene_id.clone(),
            splats,
            mesh,
            friction: s.friction,
            spawn: s
                .spawn_regions
                .iter()
                .map(|b| SpawnBox { min: b.min, max: b.max })
                .collect(),
            penalty: s.penalty_regions.clone(),
        });
    }
    let manifest = SceneManifest {
        scenes: entries,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("scenes.toml");
    std::fs::write(&path, manifest.to_toml()).map_err(|e| crate::Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::validate_scene;

    #[test]
    fn room_is_valid_and_deterministic() {
        let a = room_scene("room", 2000, 3);
        let b = room_scene("room", 2000, 3);
        assert!(validate_scene(&a).passed(), "{:?}", validate_scene(&a));
        assert_eq!(a.splats, b.splats);
    }

    #[test]
    fn random_rotation_is_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q = random_rotation(&mut rng);
            let n: f32 = q.iter().map(|c| c * c).sum();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn scene_set_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scene_set(dir.path(), &[flat_scene("flat", 100, 2.0, 0)]).unwrap();
        let m = SceneManifest::load(&path).unwrap();
        let scenes = m.load_scenes().unwrap();
        assert_eq!(scenes[0].splats.len(), 100);
        assert_eq!(scenes[0].spawn_regions.len(), 1);
    }
}
