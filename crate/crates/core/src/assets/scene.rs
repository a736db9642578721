use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::mesh::CollisionMesh;
use super::splat::SplatPrimitive;
use crate::geometry::{Aabb, Vec3};
use crate::raster::PreparedSplats;

/// Maximum tilt of the dominant floor normal from +Z.
pub const GRAVITY_TOLERANCE_DEG: f64 = 5.0;
/// Boxes are padded before the overlap test so flat floors have volume.
pub const COREGISTRATION_PAD: f64 = 0.01;

/// Convex floor polygon with a reward weight (normally negative).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyRegion {
    pub polygon: Vec<[f64; 2]>,
    pub weight: f64,
}

/// Renderable splats plus their co-registered collision mesh, in one
/// gravity-aligned (+Z up) frame. Immutable once built.
#[derive(Debug)]
pub struct GaussianSplatScene {
    pub scene_id: String,
    pub splats: Vec<SplatPrimitive>,
    pub mesh: CollisionMesh,
    pub spawn_regions: Vec<Aabb>,
    pub penalty_regions: Vec<PenaltyRegion>,
    pub friction: f64,
    prepared: OnceLock<PreparedSplats>,
}

impl GaussianSplatScene {
    pub fn new(scene_id: impl Into<String>, splats: Vec<SplatPrimitive>, mesh: CollisionMesh) -> Self {
        GaussianSplatScene {
            scene_id: scene_id.into(),
            splats,
            mesh,
            spawn_regions: Vec::new(),
            penalty_regions: Vec::new(),
            friction: 1.0,
            prepared: OnceLock::new(),
        }
    }

    pub fn with_spawn_regions(mut self, regions: Vec<Aabb>) -> Self {
        self.spawn_regions = regions;
        self
    }

    pub fn with_penalty_regions(mut self, regions: Vec<PenaltyRegion>) -> Self {
        self.penalty_regions = regions;
        self
    }

    pub fn with_friction(mut self, friction: f64) -> Self {
        self.friction = friction;
        self
    }

    /// Camera-independent render data, built on first use and shared by every
    /// camera that renders this scene.
    pub fn prepared(&self) -> &PreparedSplats {
        self.prepared.get_or_init(|| PreparedSplats::new(&self.splats))
    }

    pub fn splat_bounds(&self) -> Aabb {
        let mut b = Aabb::EMPTY;
        for s in &self.splats {
            b.grow(&Vec3::new(
                s.position[0] as f64,
                s.position[1] as f64,
                s.position[2] as f64,
            ));
        }
        b
    }

    /// Lowest point of the collision mesh.
    pub fn floor_height(&self) -> f64 {
        self.mesh.bounds().min[2]
    }

    pub fn spawn_region_containing(&self, p: &Vec3) -> Option<usize> {
        self.spawn_regions.iter().position(|r| r.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneStats {
    pub splat_count: usize,
    pub triangle_count: usize,
    pub splat_extents: [f64; 3],
    pub mesh_extents: [f64; 3],
    /// Angle between the dominant floor normal and +Z, if any floor was found.
    pub floor_tilt_deg: Option<f64>,
    pub bbox_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub scene_id: String,
    pub checks: Vec<Check>,
    pub stats: SceneStats,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Dominant upward-facing plane normal, found as the peak of an area-weighted
/// histogram over normal directions, refined by averaging normals within 10°.
pub fn dominant_floor_normal(mesh: &CollisionMesh) -> Option<Vec3> {
    const THETA_BIN: f64 = 2.0;
    const PHI_BIN: f64 = 10.0;
    const N_THETA: usize = 45;
    const N_PHI: usize = 36;
    let mut hist = vec![0.0f64; N_THETA * N_PHI];
    let mut bin_normal = vec![Vec3::zeros(); N_THETA * N_PHI];
    let mut any = false;
    for (t, n) in mesh.normals().iter().enumerate() {
        if n.z <= 0.0 {
            continue;
        }
        any = true;
        let theta = n.z.clamp(-1.0, 1.0).acos().to_degrees();
        let phi = n.y.atan2(n.x).to_degrees().rem_euclid(360.0);
        let ti = ((theta / THETA_BIN) as usize).min(N_THETA - 1);
        let pi = if ti == 0 {
            0
        } else {
            ((phi / PHI_BIN) as usize).min(N_PHI - 1)
        };
        let area = mesh.triangle_area(t);
        hist[ti * N_PHI + pi] += area;
        bin_normal[ti * N_PHI + pi] += n * area;
    }
    if !any {
        return None;
    }
    let mut peak = 0;
    for (i, &h) in hist.iter().enumerate() {
        if h > hist[peak] {
            peak = i;
        }
    }
    let seed = bin_normal[peak].normalize();
    let cos_window = 10f64.to_radians().cos();
    let mut acc = Vec3::zeros();
    for (t, n) in mesh.normals().iter().enumerate() {
        if n.dot(&seed) >= cos_window {
            acc += n * mesh.triangle_area(t);
        }
    }
    Some(acc.normalize())
}

/// Checks gravity alignment, splat/mesh co-registration and non-emptiness.
/// Failures are reported, never corrected.
pub fn validate_scene(scene: &GaussianSplatScene) -> ValidationReport {
    let mut checks = Vec::new();

    let tilt = dominant_floor_normal(&scene.mesh).map(|n| n.z.clamp(-1.0, 1.0).acos().to_degrees());
    checks.push(match tilt {
        Some(deg) => Check {
            name: "gravity_alignment".into(),
            passed: deg <= GRAVITY_TOLERANCE_DEG,
            detail: format!("dominant floor normal is {deg:.2} deg from +Z (limit {GRAVITY_TOLERANCE_DEG} deg)"),
        },
        None => Check {
            name: "gravity_alignment".into(),
            passed: false,
            detail: "mesh has no upward-facing surface".into(),
        },
    });

    let splat_box = scene.splat_bounds();
    let mesh_box = scene.mesh.bounds();
    let iou = if splat_box.is_empty() {
        0.0
    } else {
        splat_box
            .padded(COREGISTRATION_PAD)
            .iou(&mesh_box.padded(COREGISTRATION_PAD))
    };
    checks.push(Check {
        name: "coregistration".into(),
        passed: iou > 0.0,
        detail: format!("splat/mesh bounding-box IoU {iou:.4}"),
    });

    checks.push(Check {
        name: "splat_count".into(),
        passed: !scene.splats.is_empty(),
        detail: format!("{} splats", scene.splats.len()),
    });

    ValidationReport {
        scene_id: scene.scene_id.clone(),
        checks,
        stats: SceneStats {
            splat_count: scene.splats.len(),
            triangle_count: scene.mesh.triangles().len(),
            splat_extents: splat_box.extents(),
            mesh_extents: mesh_box.extents(),
            floor_tilt_deg: tilt,
            bbox_iou: iou,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::mesh::{box_mesh, grid_plane};
    use nalgebra::{Rotation3, Vector3};

    fn splats_in(b: [f64; 3], e: [f64; 3]) -> Vec<SplatPrimitive> {
        (0..8)
            .map(|i| {
                let f = |k: usize| (b[k] + e[k] * ((i >> k) & 1) as f64) as f32;
                SplatPrimitive::isotropic([f(0), f(1), f(2)], 0.05, 0.8, [0.5; 3])
            })
            .collect()
    }

    #[test]
    fn rotated_cube_fails_gravity() {
        let (v, t) = box_mesh([0.0; 3], [1.0; 3]);
        let rot = Rotation3::from_axis_angle(&Vector3::x_axis(), 30f64.to_radians());
        let mesh = CollisionMesh::new(v.iter().map(|p| rot * p).collect(), t).unwrap();
        let scene = GaussianSplatScene::new("rot", splats_in([0.0; 3], [1.0; 3]), mesh);
        let report = validate_scene(&scene);
        assert!(!report.passed());
        let failed: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["gravity_alignment"]);
        let tilt = report.stats.floor_tilt_deg.unwrap();
        assert!((tilt - 30.0).abs() < 1e-6, "{tilt}");
    }

    #[test]
    fn translated_splats_fail_coregistration() {
        let (v, t) = grid_plane(2.0, 4, 0.0);
        let mesh = CollisionMesh::new(v, t).unwrap();
        let scene = GaussianSplatScene::new("far", splats_in([100.0, 0.0, 0.0], [1.0; 3]), mesh);
        let report = validate_scene(&scene);
        let failed: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["coregistration"]);
    }

    #[test]
    fn well_formed_scene_passes() {
        let (v, t) = grid_plane(2.0, 4, 0.0);
        let mesh = CollisionMesh::new(v, t).unwrap();
        let scene = GaussianSplatScene::new("ok", splats_in([-1.0, -1.0, 0.0], [2.0, 2.0, 0.5]), mesh);
        let report = validate_scene(&scene);
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.stats.splat_count, 8);
        assert_eq!(report.stats.triangle_count, 32);
    }

    #[test]
    fn empty_splats_fail_count() {
        let (v, t) = grid_plane(2.0, 4, 0.0);
        let mesh = CollisionMesh::new(v, t).unwrap();
        let scene = GaussianSplatScene::new("empty", Vec::new(), mesh);
        let report = validate_scene(&scene);
        let failed: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["coregistration", "splat_count"]);
    }
}
