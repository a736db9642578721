//! Rewards, commands, observations, terminations and ground-truth labels.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::assets::{CollisionMesh, PenaltyRegion};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec3};
use crate::physics::{foot_phase, EpisodeStatus, RobotState, LEFT, RIGHT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub ang_vel_xy: f64,
    pub orientation: f64,
    pub action_rate: f64,
    pub pose_deviation: f64,
    pub feet_distance: f64,
    pub feet_phase: f64,
    pub stumble: f64,
    pub lin_vel_track: f64,
    pub ang_vel_track: f64,
    pub pos_track: f64,
    pub yaw_track: f64,
    pub tracking_sigma2: f64,
    pub feet_distance_threshold: f64,
    pub phase_threshold: f64,
    /// Replaces every penalty region's own weight when set.
    pub penalty_weight: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            ang_vel_xy: -0.2,
            orientation: -0.5,
            action_rate: -1.0,
            pose_deviation: -0.5,
            feet_distance: -10.0,
            feet_phase: 5.0,
            stumble: -3.0,
            lin_vel_track: 1.0,
            ang_vel_track: 0.5,
            pos_track: 10.0,
            yaw_track: 10.0,
            tracking_sigma2: 0.25,
            feet_distance_threshold: 0.1,
            phase_threshold: 0.25,
            penalty_weight: None,
        }
    }
}

/// Named weighted reward terms in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardTerms {
    pub terms: Vec<(&'static str, f64)>,
}

impl RewardTerms {
    pub fn push(&mut self, name: &'static str, value: f64) {
        self.terms.push((name, value));
    }

    pub fn extend(&mut self, other: RewardTerms) {
        self.terms.extend(other.terms);
    }

    pub fn total(&self) -> f64 {
        self.terms.iter().map(|(_, v)| v).sum()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

impl Serialize for RewardTerms {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.terms.len()))?;
        for (k, v) in &self.terms {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

fn sq_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Terms shared by every task.
pub fn compute_general_rewards(state: &RobotState, cfg: &RewardConfig) -> RewardTerms {
    let w = &state.angular_velocity;
    let mut t = RewardTerms::default();
    t.push("ang_vel_xy", cfg.ang_vel_xy * (w.x * w.x + w.y * w.y));
    t.push("orientation", cfg.orientation * state.tilt * state.tilt);
    t.push(
        "action_rate",
        cfg.action_rate * sq_norm(&state.targets, &state.prev_targets),
    );
    t.push(
        "pose_deviation",
        cfg.pose_deviation * sq_norm(&state.joint_positions, &state.default_pose),
    );
    let d = (state.feet[LEFT] - state.feet[RIGHT]).xy().norm();
    t.push(
        "feet_distance",
        if d < cfg.feet_distance_threshold {
            cfg.feet_distance
        } else {
            0.0
        },
    );
    let in_window = [LEFT, RIGHT]
        .iter()
        .filter(|&&f| state.foot_contact[f] && foot_phase(state.phase, f) <= cfg.phase_threshold)
        .count();
    t.push("feet_phase", cfg.feet_phase * in_window as f64);
    let stumbles = [LEFT, RIGHT]
        .iter()
        .filter(|&&f| {
            let force = &state.foot_forces[f];
            state.foot_contact[f] && force.xy().norm() >= 2.0 * force.z.abs()
        })
        .count();
    t.push("stumble", cfg.stumble * stumbles as f64);
    t
}

/// Horizontal base velocity in the heading frame.
pub fn heading_velocity(state: &RobotState) -> [f64; 2] {
    let yaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), state.yaw());
    let v = yaw.inverse_transform_vector(&state.linear_velocity);
    [v.x, v.y]
}

/// Velocity-tracking terms. `lin` is the commanded heading-frame velocity,
/// `yaw_rate` the commanded world yaw rate.
pub fn compute_velocity_rewards(state: &RobotState, lin: [f64; 2], yaw_rate: f64, cfg: &RewardConfig) -> RewardTerms {
    let v = heading_velocity(state);
    let e_lin = (v[0] - lin[0]).powi(2) + (v[1] - lin[1]).powi(2);
    let e_yaw = (state.angular_velocity.z - yaw_rate).powi(2);
    let mut t = RewardTerms::default();
    t.push(
        "lin_vel_track",
        cfg.lin_vel_track * (-e_lin / cfg.tracking_sigma2).exp(),
    );
    t.push(
        "ang_vel_track",
        cfg.ang_vel_track * (-e_yaw / cfg.tracking_sigma2).exp(),
    );
    t
}

/// Goal-tracking terms, active only in the last second before the deadline.
pub fn compute_goal_rewards(
    position: [f64; 2],
    yaw: f64,
    target: [f64; 2],
    heading: f64,
    remaining: f64,
    cfg: &RewardConfig,
) -> RewardTerms {
    let active = if remaining < 1.0 { 1.0 } else { 0.0 };
    let dist = (position[0] - target[0]).hypot(position[1] - target[1]);
    let yaw_err = wrap_angle(yaw - heading).abs();
    let mut t = RewardTerms::default();
    t.push("pos_track", active * cfg.pos_track * (1.0 - 0.5 * dist));
    t.push("yaw_track", active * cfg.yaw_track * (1.0 - 0.5 * yaw_err));
    t
}

/// Point-in-convex-polygon by half-plane tests; boundary points are inside.
/// Works for either winding.
pub fn point_in_convex_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    if poly.len() < 3 {
        return false;
    }
    let (mut pos, mut neg) = (false, false);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross > 0.0 {
            pos = true;
        } else if cross < 0.0 {
            neg = true;
        }
        if pos && neg {
            return false;
        }
    }
    true
}

/// Sum of region weights over every region containing the base `(x, y)`.
pub fn compute_penalty_region_reward(position: [f64; 2], regions: &[PenaltyRegion], cfg: &RewardConfig) -> f64 {
    regions
        .iter()
        .filter(|r| point_in_convex_polygon(position, &r.polygon))
        .map(|r| cfg.penalty_weight.unwrap_or(r.weight))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Command {
    Velocity {
        lin: [f64; 2],
        yaw_rate: f64,
    },
    Goal {
        target: [f64; 2],
        heading: f64,
        deadline: f64,
        elapsed: f64,
    },
}

impl Command {
    pub fn remaining(&self) -> Option<f64> {
        match self {
            Command::Goal { deadline, elapsed, .. } => Some(deadline - elapsed),
            Command::Velocity { .. } => None,
        }
    }

    pub fn advance(&mut self, dt: f64) {
        if let Command::Goal { elapsed, .. } = self {
            *elapsed += dt;
        }
    }

    /// Four numbers for observation buffers: velocity `(vx, vy, yaw_rate, 0)`,
    /// goal `(dx, dy, heading, remaining)` with `d` in the world frame.
    pub fn encode(&self, position: &Vec3) -> [f64; 4] {
        match *self {
            Command::Velocity { lin, yaw_rate } => [lin[0], lin[1], yaw_rate, 0.0],
            Command::Goal {
                target,
                heading,
                deadline,
                elapsed,
            } => [
                target[0] - position.x,
                target[1] - position.y,
                heading,
                deadline - elapsed,
            ],
        }
    }
}

/// Task-specific terms for `command`.
pub fn compute_task_rewards(state: &RobotState, command: &Command, cfg: &RewardConfig) -> RewardTerms {
    match *command {
        Command::Velocity { lin, yaw_rate } => compute_velocity_rewards(state, lin, yaw_rate, cfg),
        Command::Goal {
            target,
            heading,
            deadline,
            elapsed,
        } => compute_goal_rewards(
            [state.position.x, state.position.y],
            state.yaw(),
            target,
            heading,
            deadline - elapsed,
            cfg,
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    Velocity,
    Goal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommandConfig {
    pub mode: TaskMode,
    pub lin_x: [f64; 2],
    pub lin_y: [f64; 2],
    pub yaw_rate: [f64; 2],
    pub goal_distance: [f64; 2],
    pub goal_deadline: f64,
}

impl Default for CommandConfig {
    fn default() -> Self {
        CommandConfig {
            mode: TaskMode::Velocity,
            lin_x: [-0.3, 0.6],
            lin_y: [-0.2, 0.2],
            yaw_rate: [-0.5, 0.5],
            goal_distance: [1.0, 3.0],
            goal_deadline: 8.0,
        }
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

pub fn sample_command(rng: &mut impl Rng, cfg: &CommandConfig, position: &Vec3) -> Command {
    match cfg.mode {
        TaskMode::Velocity => Command::Velocity {
            lin: [uniform(rng, cfg.lin_x), uniform(rng, cfg.lin_y)],
            yaw_rate: uniform(rng, cfg.yaw_rate),
        },
        TaskMode::Goal => {
            let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let d = uniform(rng, cfg.goal_distance);
            Command::Goal {
                target: [position.x + d * angle.cos(), position.y + d * angle.sin()],
                heading: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                deadline: cfg.goal_deadline,
                elapsed: 0.0,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminationConfig {
    /// Fall when the body tilts past this many radians.
    pub max_tilt: f64,
    /// Escape when the base drops this far below the scene floor.
    pub fall_depth: f64,
    pub episode_seconds: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        TerminationConfig {
            max_tilt: 1.0,
            fall_depth: 1.0,
            episode_seconds: 20.0,
        }
    }
}

impl TerminationConfig {
    pub fn episode_steps(&self, dt: f64) -> u64 {
        (self.episode_seconds / dt).round() as u64
    }
}

pub fn check_termination(
    state: &RobotState,
    steps: u64,
    floor: f64,
    dt: f64,
    cfg: &TerminationConfig,
) -> EpisodeStatus {
    if !state.is_finite() {
        EpisodeStatus::Fault
    } else if state.tilt > cfg.max_tilt || state.position.z < floor - cfg.fall_depth {
        EpisodeStatus::Terminated
    } else if steps >= cfg.episode_steps(dt) {
        EpisodeStatus::Truncated
    } else {
        EpisodeStatus::Running
    }
}

/// Layout version of [`write_proprio`].
pub const OBSERVATION_VERSION: u32 = 1;

/// Proprioceptive observation length for `n_joints` joints.
pub fn proprio_dim(n_joints: usize) -> usize {
    5 + 2 * n_joints
}

/// Packs `[omega_body (3), tilt, q (J), qdot (J), phase]`.
pub fn write_proprio(state: &RobotState, out: &mut [f32]) {
    let w = state.body_angular_velocity();
    out[0] = w.x as f32;
    out[1] = w.y as f32;
    out[2] = w.z as f32;
    out[3] = state.tilt as f32;
    let j = state.joint_positions.len();
    for (o, v) in out[4..4 + j].iter_mut().zip(&state.joint_positions) {
        *o = *v as f32;
    }
    for (o, v) in out[4 + j..4 + 2 * j].iter_mut().zip(&state.joint_velocities) {
        *o = *v as f32;
    }
    out[4 + 2 * j] = state.phase as f32;
}

/// One environment's observation. The image borrows the held frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<'a> {
    pub angular_velocity: [f64; 3],
    pub tilt: f64,
    pub joint_positions: Vec<f64>,
    pub joint_velocities: Vec<f64>,
    pub phase: f64,
    pub image: &'a [u8],
    /// Step at which `image` was rendered.
    pub frame_step: u64,
}

pub fn build_observation<'a>(state: &RobotState, image: &'a [u8], frame_step: u64) -> Observation<'a> {
    let w = state.body_angular_velocity();
    Observation {
        angular_velocity: [w.x, w.y, w.z],
        tilt: state.tilt,
        joint_positions: state.joint_positions.clone(),
        joint_velocities: state.joint_velocities.clone(),
        phase: state.phase,
        image,
        frame_step,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Box size along heading, lateral and vertical axes (m).
    pub extent: [f64; 3],
    pub cell: f64,
    /// Box minimum corner relative to the base, heading frame.
    pub offset: [f64; 3],
    /// Height reported for columns with no surface below.
    pub no_hit_height: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            extent: [1.6, 1.0, 0.8],
            cell: 0.1,
            offset: [0.0, -0.5, -0.6],
            no_hit_height: -10.0,
        }
    }
}

impl GridConfig {
    pub fn dims(&self) -> Result<[usize; 3]> {
        if !(self.cell > 0.0) || self.extent.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Config("grid extents and cell size must be positive".into()));
        }
        Ok(self.extent.map(|e| ((e / self.cell).round() as usize).max(1)))
    }
}

/// Occupancy and height labels around the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelLabel {
    pub dims: [usize; 3],
    /// Index `(ix * ny + iy) * nz + iz`.
    pub occupancy: Vec<bool>,
    /// Index `ix * ny + iy`, world z.
    pub heights: Vec<f64>,
}

impl VoxelLabel {
    pub fn occupied(&self, ix: usize, iy: usize, iz: usize) -> bool {
        self.occupancy[(ix * self.dims[1] + iy) * self.dims[2] + iz]
    }

    pub fn height(&self, ix: usize, iy: usize) -> f64 {
        self.heights[ix * self.dims[1] + iy]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }
}

/// World position of voxel `(ix, iy, iz)` for a base at `position` with
/// heading `yaw`.
pub fn voxel_center(grid: &GridConfig, position: &Vec3, yaw: f64, idx: [usize; 3]) -> Vec3 {
    let local = [0, 1, 2].map(|k| grid.offset[k] + (idx[k] as f64 + 0.5) * grid.cell);
    let (s, c) = yaw.sin_cos();
    Vec3::new(
        position.x + c * local[0] - s * local[1],
        position.y + s * local[0] + c * local[1],
        position.z + local[2],
    )
}

/// Labels a heading-aligned box ahead of the base: a voxel is occupied when
/// its center lies within half a cell diagonal of the mesh; each column's
/// height is the first surface hit looking down from the box top.
pub fn voxelize_ground_truth(mesh: &CollisionMesh, position: &Vec3, yaw: f64, grid: &GridConfig) -> Result<VoxelLabel> {
    let dims = grid.dims()?;
    let band = 0.5 * grid.cell * 3f64.sqrt();
    let top = position.z + grid.offset[2] + grid.extent[2];
    let mut occupancy = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    let mut heights = Vec::with_capacity(dims[0] * dims[1]);
    for ix in 0..dims[0] {
        for iy in 0..dims[1] {
            for iz in 0..dims[2] {
                occupancy.push(mesh.any_within(&voxel_center(grid, position, yaw, [ix, iy, iz]), band));
            }
            let c = voxel_center(grid, position, yaw, [ix, iy, 0]);
            heights.push(mesh.height_below(c.x, c.y, top).unwrap_or(grid.no_hit_height));
        }
    }
    Ok(VoxelLabel {
        dims,
        occupancy,
        heights,
    })
}
