//! Scene assets: splat clouds, collision meshes, manifests and the registry
//! that shares them across environments.

pub mod bvh;
pub mod manifest;
pub mod mesh;
pub mod ply;
pub mod registry;
pub mod scene;
pub mod splat;

pub use manifest::{SceneEntry, SceneManifest, SpawnBox};
pub use mesh::{load_mesh, CollisionMesh, Contact};
pub use ply::{load_splat_ply, write_splat_ply};
pub use registry::{register_scenes, SceneRegistry};
pub use scene::{validate_scene, GaussianSplatScene, PenaltyRegion, ValidationReport};
pub use splat::SplatPrimitive;
