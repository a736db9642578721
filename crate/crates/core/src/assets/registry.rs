use std::sync::Arc;

use super::scene::GaussianSplatScene;
use crate::error::{Error, Result};

/// Scenes shared by a batch of environments. Scene data is held once behind
/// `Arc` and never copied per environment.
#[derive(Debug, Clone)]
pub struct SceneRegistry {
    scenes: Vec<Arc<GaussianSplatScene>>,
    assignment: Vec<usize>,
}

/// Assigns `n_envs` environments round-robin over `scenes` in input order.
pub fn register_scenes(scenes: Vec<GaussianSplatScene>, n_envs: usize) -> Result<SceneRegistry> {
    SceneRegistry::from_shared(scenes.into_iter().map(Arc::new).collect(), n_envs)
}

impl SceneRegistry {
    pub fn from_shared(scenes: Vec<Arc<GaussianSplatScene>>, n_envs: usize) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        if n_envs == 0 {
            return Err(Error::InvalidArgument("n_envs must be at least 1".into()));
        }
        let m = scenes.len();
        Ok(SceneRegistry {
            assignment: (0..n_envs).map(|e| e % m).collect(),
            scenes,
        })
    }

    pub fn n_envs(&self) -> usize {
        self.assignment.len()
    }

    pub fn scenes(&self) -> &[Arc<GaussianSplatScene>] {
        &self.scenes
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn scene_index(&self, env: usize) -> Result<usize> {
        self.assignment.get(env).copied().ok_or(Error::UnregisteredEnv { env })
    }

    pub fn scene_for_env(&self, env: usize) -> Result<&Arc<GaussianSplatScene>> {
        Ok(&self.scenes[self.scene_index(env)?])
    }

    pub fn envs_of(&self, scene: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &s)| s == scene)
            .map(|(e, _)| e)
    }

    /// Same scenes, different environment count.
    pub fn resized(&self, n_envs: usize) -> Result<Self> {
        Self::from_shared(self.scenes.clone(), n_envs)
    }
}
