//! Scripted policies and the rollout loop that records metrics and frames.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{EnvRecord, VecEnv};
use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::physics::{EpisodeStatus, JOINTS_PER_LEG};
use crate::raster::export::{write_depth_png, write_rgb_png};
use crate::tasks::Command;

// Steady-state response of the gait to joint offsets on flat ground.
const FORWARD_PER_RAD: f64 = 1.47;
const LATERAL_PER_RAD: f64 = 1.46;
const YAW_RATE_PER_RAD: f64 = 3.0;
const MAX_OFFSET: f64 = 0.5;
const HIP_ROLL: usize = 1;
const HIP_PITCH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedPolicy {
    /// Holds the default pose.
    Zero,
    /// Steers the gait toward the current command.
    Follower,
    /// Uniform random joint offsets.
    Random,
}

impl FromStr for ScriptedPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(ScriptedPolicy::Zero),
            "follower" => Ok(ScriptedPolicy::Follower),
            "random" => Ok(ScriptedPolicy::Random),
            other => Err(Error::InvalidArgument(format!(
                "unknown policy '{other}' (expected zero, follower or random)"
            ))),
        }
    }
}

/// A scripted policy with its own random stream.
#[derive(Debug, Clone)]
pub struct PolicyRunner {
    pub policy: ScriptedPolicy,
    rng: ChaCha8Rng,
    pub random_scale: f64,
}

impl PolicyRunner {
    pub fn new(policy: ScriptedPolicy, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep clear of the per-environment streams
        rng.set_stream(u64::MAX);
        PolicyRunner {
            policy,
            rng,
            random_scale: 0.3,
        }
    }

    /// Fills `out` (`N x J`) with actions for the current state of `env`.
    pub fn act(&mut self, env: &VecEnv, out: &mut [f32]) -> Result<()> {
        let j = env.n_joints();
        out.fill(0.0);
        match self.policy {
            ScriptedPolicy::Zero => {}
            ScriptedPolicy::Random => {
                for a in out.iter_mut() {
                    *a = self.rng.random_range(-self.random_scale..=self.random_scale) as f32;
                }
            }
            ScriptedPolicy::Follower => {
                for (e, row) in out.chunks_mut(j).enumerate() {
                    let [vx, vy, wz] = follow(env, e)?;
                    let pitch = (vx / FORWARD_PER_RAD).clamp(-MAX_OFFSET, MAX_OFFSET);
                    let roll = (vy / LATERAL_PER_RAD).clamp(-MAX_OFFSET, MAX_OFFSET);
                    let turn = (wz / YAW_RATE_PER_RAD).clamp(-MAX_OFFSET, MAX_OFFSET);
                    let half = j / 2;
                    debug_assert!(half >= JOINTS_PER_LEG);
                    row[HIP_PITCH] = (pitch + turn) as f32;
                    row[half + HIP_PITCH] = (pitch - turn) as f32;
                    row[HIP_ROLL] = roll as f32;
                    row[half + HIP_ROLL] = roll as f32;
                }
            }
        }
        Ok(())
    }
}

/// Heading-frame velocity and yaw rate the follower aims for.
fn follow(env: &VecEnv, e: usize) -> Result<[f64; 3]> {
    let state = env.state(e)?;
    Ok(match *env.command(e)? {
        Command::Velocity { lin, yaw_rate } => [lin[0], lin[1], yaw_rate],
        Command::Goal { target, heading, .. } => {
            let (dx, dy) = (target[0] - state.position.x, target[1] - state.position.y);
            let dist = dx.hypot(dy);
            let yaw = state.yaw();
            if dist > 0.2 {
                let bearing = wrap_angle(dy.atan2(dx) - yaw);
                let speed = (0.5 * dist).min(0.5) * bearing.cos().max(0.0);
                [speed, 0.0, (1.5 * bearing).clamp(-1.0, 1.0)]
            } else {
                [0.0, 0.0, (1.5 * wrap_angle(heading - yaw)).clamp(-1.0, 1.0)]
            }
        }
    })
}

/// One metrics line: a step of one environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord<'a> {
    pub step: u64,
    /// Whether the observation this step acted on held a fresh frame.
    pub rendered: bool,
    #[serde(flatten)]
    pub env: &'a EnvRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub n_envs: usize,
    pub steps: u64,
    pub frames_written: u64,
    pub episodes_finished: u64,
    pub faults: u64,
    pub mean_reward: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOptions {
    pub steps: u64,
    pub policy: ScriptedPolicy,
    pub seed: u64,
    /// Directory for `env{e}_step{s}_rgb.png` / `_depth.png`; none skips frames.
    pub frames: Option<PathBuf>,
}

/// Runs `steps` control steps. Before each step, every environment whose
/// frame was just rendered can be dumped; after it, one metrics line per
/// environment goes to `metrics`.
pub fn rollout(env: &mut VecEnv, opts: &RolloutOptions, metrics: &mut dyn Write) -> Result<RolloutSummary> {
    let start = std::time::Instant::now();
    let (n, j) = (env.n_envs(), env.n_joints());
    let mut runner = PolicyRunner::new(opts.policy, opts.seed);
    let mut actions = vec![0.0f32; n * j];
    let mut summary = RolloutSummary {
        n_envs: n,
        ..RolloutSummary::default()
    };
    if let Some(dir) = &opts.frames {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut reward_sum = 0.0;
    let mut line = Vec::new();
    for t in 0..opts.steps {
        let fresh = env.rendered().to_vec();
        if let Some(dir) = &opts.frames {
            for e in (0..n).filter(|&e| fresh[e]) {
                write_frame(env, e, t, dir)?;
                summary.frames_written += 1;
            }
        }
        runner.act(env, &mut actions)?;
        let info = env.step(&actions)?;
        for rec in &info.envs {
            reward_sum += rec.reward;
            if rec.status.is_done() {
                summary.episodes_finished += 1;
            }
            if rec.status == EpisodeStatus::Fault {
                summary.faults += 1;
            }
            line.clear();
            serde_json::to_writer(
                &mut line,
                &MetricsRecord {
                    step: t,
                    rendered: fresh[rec.env],
                    env: rec,
                },
            )
            .map_err(|e| Error::InvalidArgument(format!("cannot encode metrics: {e}")))?;
            line.push(b'\n');
            metrics.write_all(&line).map_err(|e| Error::io("metrics", e))?;
        }
        summary.steps += 1;
    }
    metrics.flush().map_err(|e| Error::io("metrics", e))?;
    summary.mean_reward = if summary.steps > 0 {
        reward_sum / (summary.steps as f64 * n as f64)
    } else {
        0.0
    };
    summary.wall_seconds = start.elapsed().as_secs_f64();
    Ok(summary)
}

fn write_frame(env: &VecEnv, e: usize, t: u64, dir: &Path) -> Result<()> {
    let (h, w) = env.image_size();
    let stem = format!("env{e:03}_step{t:06}");
    write_rgb_png(dir.join(format!("{stem}_rgb.png")), w, h, env.rgb_of(e))?;
    // coverage is not kept per env; any positive depth counts as covered
    let depth = env.depth_of(e);
    let alpha: Vec<f32> = depth.iter().map(|&d| if d > 0.0 { 1.0 } else { 0.0 }).collect();
    write_depth_png(dir.join(format!("{stem}_depth.png")), w, h, depth, &alpha)?;
    Ok(())
}
