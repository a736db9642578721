//! Engine configuration, loadable from TOML.

use std::path::Path;

use nalgebra::{Isometry3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::PhysicsConfig;
use crate::raster::{look_at, CameraModel, RenderOptions};
use crate::sensor::{CameraSensor, MotionBlur, RenderSchedule};
use crate::tasks::{CommandConfig, GridConfig, RewardConfig, TerminationConfig};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "SPLATGYM_WORKERS";

/// Worker count from [`WORKERS_ENV`], else the machine's parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f32,
    pub control_rate: u32,
    pub camera_rate: u32,
    pub shutter_time: f64,
    pub blur_samples: usize,
    pub blur_angular: bool,
    /// Camera position in the base frame.
    pub mount_position: [f64; 3],
    /// Downward tilt of the optical axis (degrees).
    pub mount_pitch_deg: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            width: 64,
            height: 48,
            hfov_deg: 90.0,
            control_rate: 50,
            camera_rate: 10,
            shutter_time: 0.01,
            blur_samples: 4,
            blur_angular: true,
            mount_position: [0.15, 0.0, 0.05],
            mount_pitch_deg: 15.0,
        }
    }
}

impl SensorConfig {
    pub fn schedule(&self) -> Result<RenderSchedule> {
        RenderSchedule::new(self.control_rate, self.camera_rate)
    }

    /// Sets the camera rate so that a frame is rendered every `n` steps.
    pub fn set_render_every(&mut self, n: u32) -> Result<()> {
        self.camera_rate = RenderSchedule::every(self.control_rate, n)?.camera_rate;
        Ok(())
    }

    pub fn mount(&self) -> Isometry3<f64> {
        let eye = Vector3::from(self.mount_position);
        let p = self.mount_pitch_deg.to_radians();
        look_at(eye, eye + Vector3::new(p.cos(), 0.0, -p.sin()), Vector3::z())
    }

    pub fn camera(&self) -> Result<CameraSensor> {
        let sensor = CameraSensor {
            model: CameraModel::new(self.width, self.height, self.hfov_deg),
            mount: self.mount(),
            frame_rate: self.camera_rate as f64,
            shutter_time: self.shutter_time,
            blur: MotionBlur {
                samples: self.blur_samples,
                angular: self.blur_angular,
            },
        };
        sensor.validate(self.control_rate as f64)?;
        Ok(sensor)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub seed: u64,
    /// Worker threads; `None` falls back to [`default_workers`].
    pub workers: Option<usize>,
    pub render: RenderOptions,
    pub sensor: SensorConfig,
    pub physics: PhysicsConfig,
    pub reward: RewardConfig,
    pub termination: TerminationConfig,
    pub grid: GridConfig,
    pub command: CommandConfig,
}

impl EngineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn workers(&self) -> usize {
        self.workers.filter(|&n| n > 0).unwrap_or_else(default_workers)
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.schedule()?;
        self.sensor.camera()?;
        self.physics.validate()?;
        self.grid.dims()?;
        if let Some(w) = self.reward.penalty_weight {
            if !(w <= 0.0) {
                return Err(Error::Config(format!("reward.penalty_weight must be <= 0, got {w}")));
            }
        }
        if !(self.reward.tracking_sigma2 > 0.0) {
            return Err(Error::Config("reward.tracking_sigma2 must be positive".into()));
        }
        if !(self.termination.episode_seconds > 0.0) {
            return Err(Error::Config("termination.episode_seconds must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}
