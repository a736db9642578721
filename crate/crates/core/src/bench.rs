//! Throughput measurement of the full step loop.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assets::{GaussianSplatScene, SceneRegistry};
use crate::config::EngineConfig;
use crate::engine::{PhaseTimings, VecEnv};
use crate::error::{Error, Result};

/// One sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub n_envs: usize,
    pub render_every: u32,
    pub blur_k: usize,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_envs: usize,
    pub n_scenes: usize,
    pub n_splats: usize,
    pub width: usize,
    pub height: usize,
    pub render_every: u32,
    pub blur_k: usize,
    pub workers: usize,
    pub warmup_steps: u64,
    /// Timed control steps of the whole batch.
    pub steps: u64,
    pub wall_seconds: f64,
    /// Environment steps per second over all environments.
    pub steps_per_second: f64,
    /// `steps_per_second / n_envs`.
    pub per_env_steps_per_second: f64,
    /// Camera frames per second over all environments.
    pub renders_per_second: f64,
    pub timings: PhaseTimings,
}

/// Sweep axes; every combination is measured in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSweep {
    pub n_envs: Vec<usize>,
    pub render_every: Vec<u32>,
    pub blur_k: Vec<usize>,
    pub workers: Vec<usize>,
    pub steps: u64,
    pub warmup: u64,
}

impl BenchSweep {
    pub fn points(&self) -> Vec<BenchPoint> {
        let mut out = Vec::new();
        for &n_envs in &self.n_envs {
            for &render_every in &self.render_every {
                for &blur_k in &self.blur_k {
                    for &workers in &self.workers {
                        out.push(BenchPoint {
                            n_envs,
                            render_every,
                            blur_k,
                            workers,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Measures `steps` zero-action steps at one sweep point after `warmup`
/// untimed steps.
pub fn run_point(
    scenes: &[Arc<GaussianSplatScene>],
    base: &EngineConfig,
    point: BenchPoint,
    steps: u64,
    warmup: u64,
) -> Result<BenchReport> {
    if steps == 0 {
        return Err(Error::InvalidArgument("bench needs at least one timed step".into()));
    }
    let mut config = base.clone();
    config.sensor.set_render_every(point.render_every)?;
    config.sensor.blur_samples = point.blur_k;
    config.workers = Some(point.workers);
    let registry = SceneRegistry::from_shared(scenes.to_vec(), point.n_envs)?;
    let mut env = VecEnv::new(registry, config)?;
    let actions = vec![0.0f32; env.n_envs() * env.n_joints()];
    for _ in 0..warmup {
        env.step(&actions)?;
    }
    env.reset_timings();
    let start = Instant::now();
    for _ in 0..steps {
        env.step(&actions)?;
    }
    let wall = start.elapsed().as_secs_f64();
    let (h, w) = env.image_size();
    let env_steps = steps as f64 * point.n_envs as f64;
    Ok(BenchReport {
        n_envs: point.n_envs,
        n_scenes: scenes.len(),
        n_splats: scenes.iter().map(|s| s.splats.len()).sum(),
        width: w,
        height: h,
        render_every: point.render_every,
        blur_k: point.blur_k,
        workers: point.workers,
        warmup_steps: warmup,
        steps,
        wall_seconds: wall,
        steps_per_second: env_steps / wall,
        per_env_steps_per_second: steps as f64 / wall,
        renders_per_second: env.renders() as f64 / wall,
        timings: *env.timings(),
    })
}

/// Runs every point of `sweep`, handing each report to `sink` as it finishes.
pub fn run_sweep(
    scenes: &[Arc<GaussianSplatScene>],
    base: &EngineConfig,
    sweep: &BenchSweep,
    mut sink: impl FnMut(&BenchReport) -> Result<()>,
) -> Result<Vec<BenchReport>> {
    let mut out = Vec::new();
    for p in sweep.points() {
        let r = run_point(scenes, base, p, sweep.steps, sweep.warmup)?;
        sink(&r)?;
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::flat_scene;

    #[test]
    fn report_is_consistent() {
        let scenes = vec![Arc::new(flat_scene("f", 200, 3.0, 1))];
        let p = BenchPoint {
            n_envs: 2,
            render_every: 5,
            blur_k: 1,
            workers: 1,
        };
        let r = run_point(&scenes, &EngineConfig::default(), p, 10, 2).unwrap();
        assert_eq!(r.steps, 10);
        assert!((r.steps_per_second - 20.0 / r.wall_seconds).abs() < 1e-6 * r.steps_per_second);
        assert!(r.timings.total() <= r.wall_seconds);
        // steps 5 and 10 of the timed window render, two envs each
        assert!((r.renders_per_second * r.wall_seconds - 4.0).abs() < 1e-6);
    }

    #[test]
    fn sweep_enumerates_points() {
        let s = BenchSweep {
            n_envs: vec![1, 4],
            render_every: vec![1, 5],
            blur_k: vec![1],
            workers: vec![1, 2],
            steps: 1,
            warmup: 0,
        };
        assert_eq!(s.points().len(), 8);
    }
}
