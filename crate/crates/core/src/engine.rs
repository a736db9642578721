//! Vector environment: N robots stepped together with batched physics,
//! scheduled camera renders, rewards and auto-reset.
//!
//! Observation buffers are contiguous and row-major: `rgb` is `N x H x W x 3`
//! bytes, `depth` `N x H x W` meters, `proprio` `N x D`, `rewards` and
//! `dones` `N`, `commands` `N x 4`. They stay valid until the next call that
//! takes `&mut self`.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assets::{register_scenes, SceneManifest, SceneRegistry};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::physics::{EnvBatchState, EpisodeStatus, Physics, RobotState, Spawn};
use crate::raster::{quantize_channel, CameraView, RenderTimings, Renderer};
use crate::sensor::{render_blurred_batch, BlurCamera, CameraSensor, RenderSchedule};
use crate::tasks::{
    build_observation, check_termination, compute_general_rewards, compute_penalty_region_reward, compute_task_rewards,
    proprio_dim, sample_command, voxelize_ground_truth, write_proprio, Command, Observation, RewardTerms, VoxelLabel,
};

/// Width of one row of the command buffer.
pub const COMMAND_DIM: usize = 4;

/// Accumulated wall-clock seconds per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub project: f64,
    pub sort: f64,
    pub composite: f64,
    pub physics: f64,
    /// Rewards, terminations, resets and observation packing.
    pub tasks: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.project + self.sort + self.composite + self.physics + self.tasks
    }

    fn add_render(&mut self, t: &RenderTimings) {
        self.project += t.project;
        self.sort += t.sort;
        self.composite += t.composite;
    }
}

/// Per-environment outcome of one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvRecord {
    pub env: usize,
    pub scene: usize,
    pub episode: u64,
    /// Episode step the record describes (before any auto-reset).
    pub episode_step: u64,
    pub status: EpisodeStatus,
    pub reward: f64,
    pub terms: RewardTerms,
    pub command: Command,
    pub position: [f64; 3],
    pub yaw: f64,
    pub tilt: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepInfo {
    /// Steps taken by the whole batch so far.
    pub step: u64,
    pub envs: Vec<EnvRecord>,
}

pub struct VecEnv {
    config: EngineConfig,
    registry: SceneRegistry,
    physics: Physics,
    renderer: Renderer,
    schedule: RenderSchedule,
    sensor: CameraSensor,
    batch: EnvBatchState,
    commands: Vec<Command>,
    rngs: Vec<ChaCha8Rng>,
    episodes: Vec<u64>,
    frame_steps: Vec<u64>,
    rendered: Vec<bool>,
    actions: Vec<f64>,
    rgb: Vec<u8>,
    depth: Vec<f32>,
    proprio: Vec<f32>,
    rewards: Vec<f32>,
    dones: Vec<bool>,
    command_buf: Vec<f32>,
    info: StepInfo,
    timings: PhaseTimings,
    renders: u64,
}

impl std::fmt::Debug for VecEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VecEnv")
            .field("n_envs", &self.n_envs())
            .field("scenes", &self.registry.scenes().len())
            .field("step", &self.info.step)
            .finish()
    }
}

/// Loads a manifest and builds an environment with `n_envs` copies spread over
/// its scenes.
pub fn make_env(manifest: impl AsRef<Path>, n_envs: usize, config: EngineConfig) -> Result<VecEnv> {
    let m = SceneManifest::load(manifest)?;
    VecEnv::new(register_scenes(m.load_scenes()?, n_envs)?, config)
}

impl VecEnv {
    /// Spawns every environment and renders step 0.
    pub fn new(registry: SceneRegistry, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let renderer = Renderer::new(config.workers(), config.render)?;
        Self::with_renderer(registry, config, renderer)
    }

    /// Like [`VecEnv::new`] but sharing an existing worker pool.
    pub fn with_renderer(registry: SceneRegistry, config: EngineConfig, renderer: Renderer) -> Result<Self> {
        config.validate()?;
        let mut renderer = renderer;
        renderer.set_options(config.render);
        let n = registry.n_envs();
        let physics = Physics::new(config.physics.clone())?;
        let schedule = config.sensor.schedule()?;
        let sensor = config.sensor.camera()?;
        let (w, h) = (sensor.model.width, sensor.model.height);
        let j = physics.n_joints();
        let mut rngs: Vec<ChaCha8Rng> = (0..n)
            .map(|e| {
                let mut r = ChaCha8Rng::seed_from_u64(config.seed);
                r.set_stream(e as u64);
                r
            })
            .collect();
        let mut spawns = Vec::with_capacity(n);
        for (e, rng) in rngs.iter_mut().enumerate() {
            spawns.push(sample_spawn(&registry, e, rng)?);
        }
        let batch = physics.spawn_batch(&registry, |e| spawns[e])?;
        let commands = (0..n)
            .map(|e| sample_command(&mut rngs[e], &config.command, &batch.robots[e].position))
            .collect();
        let mut env = VecEnv {
            registry,
            physics,
            renderer,
            schedule,
            sensor,
            batch,
            commands,
            rngs,
            episodes: vec![0; n],
            frame_steps: vec![0; n],
            rendered: vec![false; n],
            actions: vec![0.0; n * j],
            rgb: vec![0; n * w * h * 3],
            depth: vec![0.0; n * w * h],
            proprio: vec![0.0; n * proprio_dim(j)],
            rewards: vec![0.0; n],
            dones: vec![false; n],
            command_buf: vec![0.0; n * COMMAND_DIM],
            info: StepInfo::default(),
            timings: PhaseTimings::default(),
            renders: 0,
            config,
        };
        let all: Vec<usize> = (0..n).collect();
        env.render_envs(&all)?;
        env.write_observations();
        Ok(env)
    }

    pub fn n_envs(&self) -> usize {
        self.batch.len()
    }

    pub fn n_joints(&self) -> usize {
        self.physics.n_joints()
    }

    pub fn proprio_dim(&self) -> usize {
        proprio_dim(self.n_joints())
    }

    /// `(height, width)` of every image.
    pub fn image_size(&self) -> (usize, usize) {
        (self.sensor.model.height, self.sensor.model.width)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn registry(&self) -> &SceneRegistry {
        &self.registry
    }

    pub fn schedule(&self) -> &RenderSchedule {
        &self.schedule
    }

    pub fn sensor(&self) -> &CameraSensor {
        &self.sensor
    }

    pub fn renderer(&self) -> &Renderer {
        &self.renderer
    }

    pub fn batch(&self) -> &EnvBatchState {
        &self.batch
    }

    pub fn state(&self, env: usize) -> Result<&RobotState> {
        self.batch.robots.get(env).ok_or(Error::UnregisteredEnv { env })
    }

    pub fn command(&self, env: usize) -> Result<&Command> {
        self.commands.get(env).ok_or(Error::UnregisteredEnv { env })
    }

    pub fn set_command(&mut self, env: usize, command: Command) -> Result<()> {
        *self.commands.get_mut(env).ok_or(Error::UnregisteredEnv { env })? = command;
        self.write_observations();
        Ok(())
    }

    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    pub fn depth(&self) -> &[f32] {
        &self.depth
    }

    /// Last rendered frame of every environment.
    pub fn render_rgbd(&self) -> (&[u8], &[f32]) {
        (&self.rgb, &self.depth)
    }

    pub fn proprio(&self) -> &[f32] {
        &self.proprio
    }

    pub fn rewards(&self) -> &[f32] {
        &self.rewards
    }

    pub fn dones(&self) -> &[bool] {
        &self.dones
    }

    pub fn commands(&self) -> &[f32] {
        &self.command_buf
    }

    pub fn info(&self) -> &StepInfo {
        &self.info
    }

    pub fn timings(&self) -> &PhaseTimings {
        &self.timings
    }

    /// Camera frames rendered so far, counting every environment separately.
    pub fn renders(&self) -> u64 {
        self.renders
    }

    pub fn reset_timings(&mut self) {
        self.timings = PhaseTimings::default();
        self.renders = 0;
    }

    /// Episode step at which each environment's held frame was rendered.
    pub fn frame_steps(&self) -> &[u64] {
        &self.frame_steps
    }

    /// Whether each environment's frame was rendered by the last call.
    pub fn rendered(&self) -> &[bool] {
        &self.rendered
    }

    pub fn rgb_of(&self, env: usize) -> &[u8] {
        let (h, w) = self.image_size();
        &self.rgb[env * h * w * 3..(env + 1) * h * w * 3]
    }

    pub fn depth_of(&self, env: usize) -> &[f32] {
        let (h, w) = self.image_size();
        &self.depth[env * h * w..(env + 1) * h * w]
    }

    pub fn observation(&self, env: usize) -> Result<Observation<'_>> {
        let state = self.state(env)?;
        Ok(build_observation(state, self.rgb_of(env), self.frame_steps[env]))
    }

    /// Occupancy and height labels around one robot.
    pub fn voxel_label(&self, env: usize) -> Result<VoxelLabel> {
        let state = self.state(env)?;
        let scene = self.registry.scene_for_env(env)?;
        voxelize_ground_truth(&scene.mesh, &state.position, state.yaw(), &self.config.grid)
    }

    /// Advances every environment by one control step. `actions` is row-major
    /// `N x J` joint offsets from the default pose. Shape errors are raised
    /// before any state changes. Environments that finish are reset in place
    /// and report `done` for this step.
    pub fn step(&mut self, actions: &[f32]) -> Result<&StepInfo> {
        let (n, j) = (self.n_envs(), self.n_joints());
        if actions.len() != n * j {
            return Err(Error::Shape {
                what: "actions",
                expected: format!("{n} x {j} = {}", n * j),
                actual: format!("{} values", actions.len()),
            });
        }
        for (a, &v) in self.actions.iter_mut().zip(actions) {
            *a = v as f64;
        }
        let dt = self.schedule.dt();
        let t0 = Instant::now();
        let (physics, batch, registry) = (&self.physics, &mut self.batch, &self.registry);
        let acts = &self.actions;
        self.renderer
            .pool()
            .install(|| physics.step(batch, acts, registry, dt))?;
        let t1 = Instant::now();
        self.timings.physics += (t1 - t0).as_secs_f64();

        self.info.step += 1;
        self.info.envs.clear();
        let mut finished = Vec::new();
        for e in 0..n {
            let scene_idx = self.batch.scene[e];
            let scene = &self.registry.scenes()[scene_idx];
            let state = &self.batch.robots[e];
            let steps = self.batch.steps[e];
            self.commands[e].advance(dt);
            let status = match self.batch.status[e] {
                EpisodeStatus::Fault => EpisodeStatus::Fault,
                _ => check_termination(state, steps, scene.floor_height(), dt, &self.config.termination),
            };
            self.batch.status[e] = status;
            let terms = if status == EpisodeStatus::Fault {
                RewardTerms::default()
            } else {
                let mut t = compute_general_rewards(state, &self.config.reward);
                t.extend(compute_task_rewards(state, &self.commands[e], &self.config.reward));
                t.push(
                    "penalty_region",
                    compute_penalty_region_reward(
                        [state.position.x, state.position.y],
                        &scene.penalty_regions,
                        &self.config.reward,
                    ),
                );
                t
            };
            let reward = terms.total();
            self.rewards[e] = reward as f32;
            self.dones[e] = status.is_done();
            self.info.envs.push(EnvRecord {
                env: e,
                scene: scene_idx,
                episode: self.episodes[e],
                episode_step: steps,
                status,
                reward,
                terms,
                command: self.commands[e],
                position: state.position.into(),
                yaw: state.yaw(),
                tilt: state.tilt,
            });
            if status.is_done() {
                finished.push(e);
            } else if self.commands[e].remaining().is_some_and(|r| r <= 0.0) {
                let p = self.batch.robots[e].position;
                self.commands[e] = sample_command(&mut self.rngs[e], &self.config.command, &p);
            }
        }
        for &e in &finished {
            self.reset_one(e, None)?;
        }
        self.timings.tasks += t1.elapsed().as_secs_f64();

        let due: Vec<usize> = (0..n)
            .filter(|&e| self.schedule.should_render(self.batch.steps[e]))
            .collect();
        self.render_envs(&due)?;
        let t2 = Instant::now();
        self.write_observations();
        self.timings.tasks += t2.elapsed().as_secs_f64();
        Ok(&self.info)
    }

    /// Resets every environment with fresh spawns and commands.
    pub fn reset(&mut self) -> Result<()> {
        for e in 0..self.n_envs() {
            self.reset_one(e, None)?;
        }
        self.dones.fill(false);
        self.rewards.fill(0.0);
        let all: Vec<usize> = (0..self.n_envs()).collect();
        self.render_envs(&all)?;
        self.write_observations();
        Ok(())
    }

    /// Resets one environment at a chosen spawn and renders its first frame.
    pub fn reset_env_at(&mut self, env: usize, spawn: Spawn) -> Result<()> {
        if env >= self.n_envs() {
            return Err(Error::UnregisteredEnv { env });
        }
        self.reset_one(env, Some(spawn))?;
        self.render_envs(&[env])?;
        self.write_observations();
        Ok(())
    }

    pub fn close(self) {}

    fn reset_one(&mut self, env: usize, spawn: Option<Spawn>) -> Result<()> {
        let spawn = match spawn {
            Some(s) => s,
            None => sample_spawn(&self.registry, env, &mut self.rngs[env])?,
        };
        self.physics.reset_env(&mut self.batch, env, &self.registry, &spawn)?;
        let p = self.batch.robots[env].position;
        self.commands[env] = sample_command(&mut self.rngs[env], &self.config.command, &p);
        self.episodes[env] += 1;
        Ok(())
    }

    fn render_envs(&mut self, envs: &[usize]) -> Result<()> {
        self.rendered.fill(false);
        if envs.is_empty() {
            return Ok(());
        }
        let cameras: Vec<BlurCamera> = envs
            .iter()
            .map(|&e| {
                let r = &self.batch.robots[e];
                let base = r.pose();
                let (v, w) = self
                    .sensor
                    .world_velocity(&base, &r.linear_velocity, &r.angular_velocity);
                BlurCamera {
                    view: CameraView {
                        env: e,
                        pose: self.sensor.world_pose(&base),
                        model: self.sensor.model,
                    },
                    linear_velocity: v,
                    angular_velocity: w,
                }
            })
            .collect();
        let (renderer, registry) = (&self.renderer, &self.registry);
        let (frames, t) = render_blurred_batch(
            |views| renderer.render_linear(registry, views),
            &cameras,
            self.sensor.shutter_time,
            self.sensor.blur,
        )?;
        self.timings.add_render(&t);
        self.renders += envs.len() as u64;
        let (h, w) = self.image_size();
        let px = h * w;
        for (i, &e) in envs.iter().enumerate() {
            for (o, &v) in self.rgb[e * px * 3..(e + 1) * px * 3].iter_mut().zip(frames.rgb_of(i)) {
                *o = quantize_channel(v);
            }
            self.depth[e * px..(e + 1) * px].copy_from_slice(frames.depth_of(i));
            self.frame_steps[e] = self.batch.steps[e];
            self.rendered[e] = true;
        }
        Ok(())
    }

    fn write_observations(&mut self) {
        let d = self.proprio_dim();
        for (e, r) in self.batch.robots.iter().enumerate() {
            write_proprio(r, &mut self.proprio[e * d..(e + 1) * d]);
            let c = self.commands[e].encode(&r.position);
            for (o, v) in self.command_buf[e * COMMAND_DIM..(e + 1) * COMMAND_DIM]
                .iter_mut()
                .zip(c)
            {
                *o = v as f32;
            }
        }
    }
}

/// Uniform spawn inside a random spawn region of the environment's scene,
/// with uniform heading.
pub fn sample_spawn(registry: &SceneRegistry, env: usize, rng: &mut impl Rng) -> Result<Spawn> {
    let scene = registry.scene_for_env(env)?;
    if scene.spawn_regions.is_empty() {
        return Err(Error::SpawnOutsideRegions {
            scene: scene.scene_id.clone(),
            position: [f64::NAN; 3],
        });
    }
    let b = &scene.spawn_regions[rng.random_range(0..scene.spawn_regions.len())];
    let x = if b.max[0] > b.min[0] {
        rng.random_range(b.min[0]..=b.max[0])
    } else {
        b.min[0]
    };
    let y = if b.max[1] > b.min[1] {
        rng.random_range(b.min[1]..=b.max[1])
    } else {
        b.min[1]
    };
    Ok(Spawn {
        x,
        y,
        yaw: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    })
}
