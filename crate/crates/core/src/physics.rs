//! Vectorized floating-base robot physics.
//!
//! The robot is a rigid body carried by two point-like feet. Feet hang
//! vertically below hip mounts and follow a procedural gait: while a foot is in
//! stance it strokes backward, in swing it lifts and returns. Stroke length and
//! lift come from the hip joint positions, so joint-offset actions steer the
//! walk. Feet and body are spheres colliding with the scene mesh through
//! spring-damper normal forces and clamped viscous (Coulomb-bounded) friction.
//! A torque holds the body upright while a foot touches the ground.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::{CollisionMesh, GaussianSplatScene, SceneRegistry};
use crate::error::{Error, Result};
use crate::geometry::{yaw_of, Vec3};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
/// Joints per leg: hip yaw, hip roll, hip pitch, knee, ankle pitch, ankle roll.
pub const JOINTS_PER_LEG: usize = 6;
const HIP_ROLL: usize = 1;
const HIP_PITCH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotGeometry {
    pub n_joints: usize,
    pub mass: f64,
    /// Scalar rotational inertia (kg m^2).
    pub inertia: f64,
    pub body_radius: f64,
    pub foot_radius: f64,
    /// Hip-to-foot-center distance.
    pub leg_length: f64,
    /// Hip mount in the base frame: forward offset, lateral half-width.
    pub hip_offset: [f64; 2],
    /// Stroke amplitude per radian of hip pitch/roll offset (m/rad).
    pub stride_gain: f64,
    /// Swing lift per meter of stroke amplitude.
    pub lift_gain: f64,
    pub max_lift: f64,
    /// Default joint pose; empty means the built-in crouch.
    pub default_pose: Vec<f64>,
}

impl Default for RobotGeometry {
    fn default() -> Self {
        RobotGeometry {
            n_joints: 12,
            mass: 15.0,
            inertia: 1.0,
            body_radius: 0.15,
            foot_radius: 0.03,
            leg_length: 0.32,
            hip_offset: [0.0, 0.1],
            stride_gain: 0.25,
            lift_gain: 0.6,
            max_lift: 0.08,
            default_pose: Vec::new(),
        }
    }
}

impl RobotGeometry {
    pub fn default_joint_pose(&self) -> Vec<f64> {
        if !self.default_pose.is_empty() {
            return self.default_pose.clone();
        }
        let leg = [0.0, 0.0, -0.2, 0.4, -0.2, 0.0];
        (0..self.n_joints).map(|j| leg[j % JOINTS_PER_LEG]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsConfig {
    pub gravity: f64,
    pub substeps: u32,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    /// Viscous slip coefficient before the Coulomb clamp (N s/m).
    pub slip_damping: f64,
    pub gait_frequency: f64,
    pub joint_time_constant: f64,
    pub attitude_stiffness: f64,
    pub attitude_damping: f64,
    pub robot: RobotGeometry,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            gravity: 9.81,
            substeps: 4,
            contact_stiffness: 2.0e4,
            contact_damping: 800.0,
            slip_damping: 600.0,
            gait_frequency: 1.5,
            joint_time_constant: 0.05,
            attitude_stiffness: 400.0,
            attitude_damping: 40.0,
            robot: RobotGeometry::default(),
        }
    }
}

impl PhysicsConfig {
    pub fn validate(&self) -> Result<()> {
        let r = &self.robot;
        let positive = [
            ("gravity", self.gravity),
            ("contact_stiffness", self.contact_stiffness),
            ("joint_time_constant", self.joint_time_constant),
            ("mass", r.mass),
            ("inertia", r.inertia),
            ("foot_radius", r.foot_radius),
            ("body_radius", r.body_radius),
            ("leg_length", r.leg_length),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("physics.{name} must be positive, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::Config("physics.substeps must be at least 1".into()));
        }
        if r.n_joints < JOINTS_PER_LEG || !r.n_joints.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "robot.n_joints must be even and at least {JOINTS_PER_LEG}, got {}",
                r.n_joints
            )));
        }
        if !r.default_pose.is_empty() && r.default_pose.len() != r.n_joints {
            return Err(Error::Config(format!(
                "robot.default_pose has {} entries for {} joints",
                r.default_pose.len(),
                r.n_joints
            )));
        }
        Ok(())
    }

    /// Base height above flat ground at which both planted feet carry the
    /// weight exactly.
    pub fn support_height(&self) -> f64 {
        let r = &self.robot;
        r.leg_length + r.foot_radius - r.mass * self.gravity / (2.0 * self.contact_stiffness)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Running,
    Terminated,
    Truncated,
    /// Non-finite state after a step.
    Fault,
}

impl EpisodeStatus {
    pub fn is_done(self) -> bool {
        self != EpisodeStatus::Running
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
    pub linear_velocity: Vec3,
    /// World frame.
    pub angular_velocity: Vec3,
    pub joint_positions: Vec<f64>,
    pub joint_velocities: Vec<f64>,
    pub default_pose: Vec<f64>,
    pub prev_targets: Vec<f64>,
    pub targets: Vec<f64>,
    pub feet: [Vec3; 2],
    pub foot_contact: [bool; 2],
    /// World-frame contact force on each foot.
    pub foot_forces: [Vec3; 2],
    pub phase: f64,
    /// Angle between body up and world up.
    pub tilt: f64,
}

impl RobotState {
    pub fn pose(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn body_angular_velocity(&self) -> Vec3 {
        self.orientation.inverse_transform_vector(&self.angular_velocity)
    }

    pub fn yaw(&self) -> f64 {
        yaw_of(&self.orientation)
    }

    pub fn is_finite(&self) -> bool {
        let v = |x: &Vec3| x.iter().all(|c| c.is_finite());
        v(&self.position)
            && self.orientation.coords.iter().all(|c| c.is_finite())
            && v(&self.linear_velocity)
            && v(&self.angular_velocity)
            && self
                .joint_positions
                .iter()
                .chain(&self.joint_velocities)
                .all(|c| c.is_finite())
            && self.feet.iter().all(v)
            && self.foot_forces.iter().all(v)
            && self.phase.is_finite()
    }
}

pub fn tilt_angle(q: &UnitQuaternion<f64>) -> f64 {
    let up = q * Vector3::z();
    let s = up.cross(&Vector3::z()).norm();
    s.atan2(up.z)
}

/// Contact response of one sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactForce {
    pub point: Vec3,
    pub force: Vec3,
}

/// Spring-damper normal force plus clamped viscous friction for a sphere
/// moving with `velocity` at its contact point. `None` without contact.
pub fn contact_force(
    mesh: &CollisionMesh,
    center: &Vec3,
    radius: f64,
    velocity: &Vec3,
    config: &PhysicsConfig,
    friction: f64,
) -> Option<ContactForce> {
    let c = mesh.sphere_contact(center, radius)?;
    let vn = velocity.dot(&c.normal);
    let fn_mag = (config.contact_stiffness * c.depth - config.contact_damping * vn).max(0.0);
    let vt = velocity - c.normal * vn;
    let mut ft = -config.slip_damping * vt;
    let limit = friction * fn_mag;
    let ft_norm = ft.norm();
    if ft_norm > limit {
        ft *= if ft_norm > 0.0 { limit / ft_norm } else { 0.0 };
    }
    Some(ContactForce {
        point: c.point,
        force: c.normal * fn_mag + ft,
    })
}

/// Gait-driven foot placement for one foot.
#[derive(Debug, Clone, Copy, PartialEq)]
struct FootKinematics {
    position: Vec3,
    /// Velocity from the gait alone (world frame, excludes body motion).
    gait_velocity: Vec3,
}

/// Leg phase of `foot` given the gait phase: the right foot runs half a cycle
/// behind the left.
pub fn foot_phase(phase: f64, foot: usize) -> f64 {
    if foot == LEFT {
        phase
    } else {
        (phase + 0.5).rem_euclid(1.0)
    }
}

fn foot_kinematics(config: &PhysicsConfig, state: &RobotState, foot: usize, phase: f64) -> FootKinematics {
    let r = &config.robot;
    let base = foot * (r.n_joints / 2);
    let q = &state.joint_positions;
    let qd = &state.default_pose;
    let amp = [
        r.stride_gain * (q[base + HIP_PITCH] - qd[base + HIP_PITCH]),
        r.stride_gain * (q[base + HIP_ROLL] - qd[base + HIP_ROLL]),
    ];
    let amp_norm = amp[0].hypot(amp[1]);
    let lift_amp = (r.lift_gain * amp_norm).min(r.max_lift);
    let psi = std::f64::consts::TAU * foot_phase(phase, foot);
    let omega = std::f64::consts::TAU * config.gait_frequency;
    let side = if foot == LEFT { 1.0 } else { -1.0 };
    let (s, c) = psi.sin_cos();
    let local = Vec3::new(r.hip_offset[0] + amp[0] * c, side * r.hip_offset[1] + amp[1] * c, 0.0);
    let local_vel = Vec3::new(-amp[0] * omega * s, -amp[1] * omega * s, 0.0);
    // swing half: sin(psi) < 0
    let (lift, lift_vel) = if s < 0.0 {
        (-lift_amp * s, -lift_amp * omega * c)
    } else {
        (0.0, 0.0)
    };
    let yaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw_of(&state.orientation));
    FootKinematics {
        position: state.position + yaw * local + Vec3::new(0.0, 0.0, lift - r.leg_length),
        gait_velocity: yaw * local_vel + Vec3::new(0.0, 0.0, lift_vel),
    }
}

/// Forces and torques on the body from ground contact at gait phase `phase`;
/// updates feet, contact flags and foot forces in `state`.
fn evaluate_contacts(
    config: &PhysicsConfig,
    state: &mut RobotState,
    mesh: &CollisionMesh,
    friction: f64,
    phase: f64,
) -> (Vec3, Vec3) {
    let mut force = Vec3::zeros();
    let mut torque = Vec3::zeros();
    for foot in [LEFT, RIGHT] {
        let k = foot_kinematics(config, state, foot, phase);
        let lever = k.position - state.position;
        let vel = state.linear_velocity + state.angular_velocity.cross(&lever) + k.gait_velocity;
        state.feet[foot] = k.position;
        match contact_force(mesh, &k.position, config.robot.foot_radius, &vel, config, friction) {
            Some(c) => {
                state.foot_contact[foot] = true;
                state.foot_forces[foot] = c.force;
                force += c.force;
                torque += (c.point - state.position).cross(&c.force);
            }
            None => {
                state.foot_contact[foot] = false;
                state.foot_forces[foot] = Vec3::zeros();
            }
        }
    }
    if let Some(c) = contact_force(
        mesh,
        &state.position,
        config.robot.body_radius,
        &state.linear_velocity,
        config,
        friction,
    ) {
        force += c.force;
        torque += (c.point - state.position).cross(&c.force);
    }
    (force, torque)
}

/// Advances one environment by one control step.
pub fn step_robot(
    config: &PhysicsConfig,
    state: &mut RobotState,
    action: &[f64],
    mesh: &CollisionMesh,
    friction: f64,
    dt: f64,
) {
    let n = state.targets.len();
    state.prev_targets.copy_from_slice(&state.targets);
    for ((t, d), a) in state.targets.iter_mut().zip(&state.default_pose).zip(action) {
        *t = d + a;
    }
    let h = dt / config.substeps as f64;
    let decay = (-h / config.joint_time_constant).exp();
    let r = &config.robot;
    for sub in 0..config.substeps {
        for j in 0..n {
            let target = state.targets[j];
            state.joint_positions[j] = target + (state.joint_positions[j] - target) * decay;
            state.joint_velocities[j] = (target - state.joint_positions[j]) / config.joint_time_constant;
        }
        let phase = state.phase + config.gait_frequency * h * sub as f64;
        let (force, mut torque) = evaluate_contacts(config, state, mesh, friction, phase);
        if state.foot_contact[LEFT] || state.foot_contact[RIGHT] {
            let up = state.orientation * Vector3::z();
            let axis = up.cross(&Vector3::z());
            let s = axis.norm();
            if s > 1e-12 {
                torque += axis * (config.attitude_stiffness * s.atan2(up.z) / s);
            }
            let w = state.angular_velocity;
            torque -= Vec3::new(w.x, w.y, 0.0) * config.attitude_damping;
        }
        state.linear_velocity += h * (force / r.mass - Vec3::new(0.0, 0.0, config.gravity));
        state.angular_velocity += h * torque / r.inertia;
        state.position += h * state.linear_velocity;
        let spin = UnitQuaternion::from_scaled_axis(state.angular_velocity * h);
        state.orientation = UnitQuaternion::new_normalize((spin * state.orientation).into_inner());
    }
    state.phase = (state.phase + config.gait_frequency * dt).rem_euclid(1.0);
    // report feet and contacts at the end-of-step pose
    let phase = state.phase;
    evaluate_contacts(config, state, mesh, friction, phase);
    state.tilt = tilt_angle(&state.orientation);
}

/// Spawn request: horizontal position and heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spawn {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Robot standing at support height on the ground below `spawn`, at rest.
pub fn spawn_state(config: &PhysicsConfig, scene: &GaussianSplatScene, spawn: &Spawn) -> Result<RobotState> {
    let outside = || Error::SpawnOutsideRegions {
        scene: scene.scene_id.clone(),
        position: [spawn.x, spawn.y, f64::NAN],
    };
    let region = scene
        .spawn_regions
        .iter()
        .find(|b| spawn.x >= b.min[0] && spawn.x <= b.max[0] && spawn.y >= b.min[1] && spawn.y <= b.max[1])
        .ok_or_else(outside)?;
    let ground = scene
        .mesh
        .height_below(spawn.x, spawn.y, region.max[2])
        .ok_or_else(outside)?;
    let p = Vec3::new(spawn.x, spawn.y, ground);
    if scene.spawn_region_containing(&p).is_none() {
        return Err(Error::SpawnOutsideRegions {
            scene: scene.scene_id.clone(),
            position: [p.x, p.y, p.z],
        });
    }
    let q = config.robot.default_joint_pose();
    let n = q.len();
    let mut state = RobotState {
        position: Vec3::new(spawn.x, spawn.y, ground + config.support_height()),
        orientation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), spawn.yaw),
        linear_velocity: Vec3::zeros(),
        angular_velocity: Vec3::zeros(),
        joint_positions: q.clone(),
        joint_velocities: vec![0.0; n],
        default_pose: q.clone(),
        prev_targets: q.clone(),
        targets: q,
        feet: [Vec3::zeros(); 2],
        foot_contact: [false; 2],
        foot_forces: [Vec3::zeros(); 2],
        phase: 0.0,
        tilt: 0.0,
    };
    evaluate_contacts(config, &mut state, &scene.mesh, scene.friction, 0.0);
    state.tilt = tilt_angle(&state.orientation);
    Ok(state)
}

/// Per-environment simulation state for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvBatchState {
    pub robots: Vec<RobotState>,
    pub scene: Vec<usize>,
    /// Control steps since the last reset.
    pub steps: Vec<u64>,
    pub status: Vec<EpisodeStatus>,
}

impl EnvBatchState {
    pub fn len(&self) -> usize {
        self.robots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.robots.is_empty()
    }
}

/// Stateless stepping of robot batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Physics {
    pub config: PhysicsConfig,
}

impl Physics {
    pub fn new(config: PhysicsConfig) -> Result<Self> {
        config.validate()?;
        Ok(Physics { config })
    }

    pub fn n_joints(&self) -> usize {
        self.config.robot.n_joints
    }

    /// Builds a batch with every environment spawned by `spawn_for(env)`.
    pub fn spawn_batch(&self, registry: &SceneRegistry, spawn_for: impl Fn(usize) -> Spawn) -> Result<EnvBatchState> {
        let n = registry.n_envs();
        let mut robots = Vec::with_capacity(n);
        for env in 0..n {
            robots.push(spawn_state(
                &self.config,
                registry.scene_for_env(env)?,
                &spawn_for(env),
            )?);
        }
        Ok(EnvBatchState {
            robots,
            scene: registry.assignment().to_vec(),
            steps: vec![0; n],
            status: vec![EpisodeStatus::Running; n],
        })
    }

    /// Steps every environment by one control step. `actions` is row-major
    /// `N x J`. Environments whose state turns non-finite get `Fault`.
    pub fn step(&self, batch: &mut EnvBatchState, actions: &[f64], registry: &SceneRegistry, dt: f64) -> Result<()> {
        let j = self.n_joints();
        if actions.len() != batch.len() * j {
            return Err(Error::Shape {
                what: "actions",
                expected: format!("{} x {j}", batch.len()),
                actual: format!("{} values", actions.len()),
            });
        }
        let scenes = registry.scenes();
        batch
            .robots
            .par_iter_mut()
            .zip(batch.status.par_iter_mut())
            .zip(batch.steps.par_iter_mut())
            .zip(batch.scene.par_iter())
            .zip(actions.par_chunks(j))
            .for_each(|((((robot, status), steps), &scene), action)| {
                let s = &scenes[scene];
                if action.iter().all(|a| a.is_finite()) {
                    step_robot(&self.config, robot, action, &s.mesh, s.friction, dt);
                } else {
                    robot.position.x = f64::NAN;
                }
                *steps += 1;
                if !robot.is_finite() {
                    *status = EpisodeStatus::Fault;
                }
            });
        Ok(())
    }

    /// Re-spawns one environment; every other environment is left untouched.
    pub fn reset_env(
        &self,
        batch: &mut EnvBatchState,
        env: usize,
        registry: &SceneRegistry,
        spawn: &Spawn,
    ) -> Result<()> {
        if env >= batch.len() {
            return Err(Error::UnregisteredEnv { env });
        }
        let state = spawn_state(&self.config, registry.scene_for_env(env)?, spawn)?;
        batch.robots[env] = state;
        batch.steps[env] = 0;
        batch.status[env] = EpisodeStatus::Running;
        Ok(())
    }
}

/// Deepest-penetration sphere contact against the mesh.
pub fn query_contact(mesh: &CollisionMesh, center: &Vec3, radius: f64) -> Option<crate::assets::Contact> {
    mesh.sphere_contact(center, radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::flat_scene;

    #[test]
    fn support_height_balances_weight() {
        let cfg = PhysicsConfig::default();
        let scene = flat_scene("f", 10, 3.0, 0);
        let s = spawn_state(
            &cfg,
            &scene,
            &Spawn {
                x: 0.0,
                y: 0.0,
                yaw: 0.0,
            },
        )
        .unwrap();
        assert_eq!(s.foot_contact, [true, true]);
        let total = s.foot_forces[0].z + s.foot_forces[1].z;
        assert!((total - cfg.robot.mass * cfg.gravity).abs() < 1e-6, "{total}");
    }

    #[test]
    fn spawn_outside_region_is_rejected() {
        let cfg = PhysicsConfig::default();
        let scene = flat_scene("f", 10, 3.0, 0);
        let e = spawn_state(
            &cfg,
            &scene,
            &Spawn {
                x: 2.9,
                y: 0.0,
                yaw: 0.0,
            },
        );
        assert!(matches!(e, Err(Error::SpawnOutsideRegions { .. })));
    }

    #[test]
    fn phase_wraps() {
        let cfg = PhysicsConfig::default();
        let scene = flat_scene("f", 10, 3.0, 0);
        let mut s = spawn_state(
            &cfg,
            &scene,
            &Spawn {
                x: 0.0,
                y: 0.0,
                yaw: 0.0,
            },
        )
        .unwrap();
        let a = vec![0.0; 12];
        for _ in 0..40 {
            step_robot(&cfg, &mut s, &a, &scene.mesh, 1.0, 0.02);
            assert!((0.0..1.0).contains(&s.phase));
        }
        assert!((s.phase - (40.0 * 0.03f64).rem_euclid(1.0)).abs() < 1e-9);
    }

    #[test]
    fn invalid_joint_count_rejected() {
        let mut cfg = PhysicsConfig::default();
        cfg.robot.n_joints = 7;
        assert!(cfg.validate().is_err());
    }
}
