//! Scene manifest: a TOML sidecar naming each scene's splat and mesh files and
//! carrying the spawn boxes and penalty polygons the asset files cannot hold.
//!
//! ```toml
//! [[scenes]]
//! id = "lab"
//! splats = "lab/splats.ply"
//! mesh = "lab/mesh.obj"
//! friction = 1.0
//!
//! [[scenes.spawn]]
//! min = [-1.0, -1.0, 0.0]
//! max = [1.0, 1.0, 0.5]
//!
//! [[scenes.penalty]]
//! weight = -5.0
//! polygon = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mesh::load_mesh;
use super::ply::load_splat_ply;
use super::scene::{GaussianSplatScene, PenaltyRegion};
use crate::error::{Error, Result};
use crate::geometry::Aabb;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpawnBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub splats: PathBuf,
    pub mesh: PathBuf,
    #[serde(default = "default_friction")]
    pub friction: f64,
    #[serde(default)]
    pub spawn: Vec<SpawnBox>,
    #[serde(default)]
    pub penalty: Vec<PenaltyRegion>,
}

fn default_friction() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scenes: Vec<SceneEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl SceneManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::parse(&text, &path.display().to_string())?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let m: SceneManifest = toml::from_str(text).map_err(|e| Error::format(context, e.to_string()))?;
        if m.scenes.is_empty() {
            return Err(Error::format(context, "manifest lists no scenes"));
        }
        for s in &m.scenes {
            for (i, b) in s.spawn.iter().enumerate() {
                if (0..3).any(|k| b.min[k] > b.max[k]) {
                    return Err(Error::format(
                        context,
                        format!("scene '{}': spawn box {i} has min > max", s.id),
                    ));
                }
            }
            for (i, p) in s.penalty.iter().enumerate() {
                if p.polygon.len() < 3 || !is_convex(&p.polygon) {
                    return Err(Error::format(
                        context,
                        format!("scene '{}': penalty region {i} is not a convex polygon", s.id),
                    ));
                }
                if !(p.weight <= 0.0) {
                    return Err(Error::format(
                        context,
                        format!("scene '{}': penalty region {i} weight must be <= 0", s.id),
                    ));
                }
            }
            if !(s.friction >= 0.0) {
                return Err(Error::format(
                    context,
                    format!("scene '{}': friction must be >= 0", s.id),
                ));
            }
        }
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Loads every scene; files load in parallel, results keep manifest order.
    pub fn load_scenes(&self) -> Result<Vec<GaussianSplatScene>> {
        self.scenes.par_iter().map(|e| self.load_entry(e)).collect()
    }

    pub fn load_entry(&self, e: &SceneEntry) -> Result<GaussianSplatScene> {
        let splats = load_splat_ply(self.resolve(&e.splats))?;
        let mesh = load_mesh(self.resolve(&e.mesh))?;
        Ok(GaussianSplatScene::new(e.id.clone(), splats, mesh)
            .with_friction(e.friction)
            .with_spawn_regions(e.spawn.iter().map(|b| Aabb::new(b.min, b.max)).collect())
            .with_penalty_regions(e.penalty.clone()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }
}

/// True if all turns have the same orientation (collinear edges allowed).
pub fn is_convex(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross != 0.0 {
            if sign != 0.0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    sign != 0.0
}
