//! Request and response bodies of the HTTP service. Paths are resolved on the
//! machine running the service.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::Vector3;

use serde::{Deserialize, Serialize};

use crate::assets::{SceneManifest, ValidationReport};
use crate::bench::{BenchReport, BenchSweep};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::raster::export::{encode_depth_png, encode_rgb_png};
use crate::raster::{look_at, CameraModel, CameraView, RenderOptions, Renderer};
use crate::rollout::{RolloutSummary, ScriptedPolicy};
use crate::sensor::{render_blurred_batch, BlurCamera, MotionBlur};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Io,
    Format,
    Config,
    InvalidArgument,
    Shape,
    NotFound,
    Internal,
}

impl From<&Error> for ErrorKind {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } | Error::Image(_) => ErrorKind::Io,
            Error::Format { .. } => ErrorKind::Format,
            Error::Config(_) => ErrorKind::Config,
            Error::Shape { .. } => ErrorKind::Shape,
            Error::InvalidArgument(_)
            | Error::UnregisteredEnv { .. }
            | Error::EmptyRegistry
            | Error::SpawnOutsideRegions { .. } => ErrorKind::InvalidArgument,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        ErrorBody {
            kind: e.into(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub default_workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub passed: bool,
    pub reports: Vec<ValidationReport>,
}

fn up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurRequest {
    pub linear_velocity: [f64; 3],
    #[serde(default)]
    pub angular_velocity: [f64; 3],
    pub shutter_time: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub manifest: PathBuf,
    /// Scene id; the first scene when absent.
    #[serde(default)]
    pub scene: Option<String>,
    pub eye: [f64; 3],
    pub target: [f64; 3],
    #[serde(default = "up")]
    pub up: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f32,
    #[serde(default)]
    pub options: RenderOptions,
    #[serde(default)]
    pub blur: Option<BlurRequest>,
}

impl RenderRequest {
    /// Rejects poses that do not define a camera.
    pub fn check_pose(&self) -> Result<()> {
        let all = self.eye.iter().chain(&self.target).chain(&self.up);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("camera pose has non-finite values".into()));
        }
        let d = [0, 1, 2].map(|k| self.target[k] - self.eye[k]);
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-9 {
            return Err(Error::InvalidArgument("camera eye and target coincide".into()));
        }
        let cross = [
            d[1] * self.up[2] - d[2] * self.up[1],
            d[2] * self.up[0] - d[0] * self.up[2],
            d[0] * self.up[1] - d[1] * self.up[0],
        ];
        if cross.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-9 * n {
            return Err(Error::InvalidArgument(
                "camera up vector is parallel to the view direction".into(),
            ));
        }
        if self.width == 0 || self.height == 0 || !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(Error::InvalidArgument(
                "image size must be positive and hfov within (0, 180) degrees".into(),
            ));
        }
        Ok(())
    }
}

/// A rendered still, PNG encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
    pub rgb_png: Vec<u8>,
    pub depth_png: Vec<u8>,
    pub depth_max: f32,
    pub render_ms: f64,
}

impl RenderRequest {
    /// Loads the requested scene and renders one view on `workers` threads.
    pub fn execute(&self, workers: usize) -> Result<RenderedImage> {
        self.check_pose()?;
        let manifest = SceneManifest::load(&self.manifest)?;
        let entry = match &self.scene {
            Some(id) => manifest
                .scenes
                .iter()
                .find(|e| &e.id == id)
                .ok_or_else(|| Error::InvalidArgument(format!("no scene '{id}' in manifest")))?,
            None => manifest
                .scenes
                .first()
                .ok_or_else(|| Error::InvalidArgument("manifest lists no scenes".into()))?,
        };
        let scene = manifest.load_entry(entry)?;
        let renderer = Renderer::new(workers, self.options)?;
        let view = CameraView {
            env: 0,
            pose: look_at(self.eye.into(), self.target.into(), self.up.into()),
            model: CameraModel::new(self.width, self.height, self.hfov_deg),
        };
        let start = Instant::now();
        let (img, _) = match &self.blur {
            None => renderer.render_scene(&scene, &[view])?,
            Some(b) => render_blurred_batch(
                |views| renderer.render_scene(&scene, views),
                &[BlurCamera {
                    view,
                    linear_velocity: Vector3::from(b.linear_velocity),
                    angular_velocity: Vector3::from(b.angular_velocity),
                }],
                b.shutter_time,
                MotionBlur {
                    samples: b.samples,
                    angular: true,
                },
            )?,
        };
        let render_ms = start.elapsed().as_secs_f64() * 1e3;
        let out = img.quantize();
        let (depth_png, depth_max) = encode_depth_png(self.width, self.height, out.depth_of(0), out.alpha_of(0))?;
        Ok(RenderedImage {
            scene_id: scene.scene_id.clone(),
            width: self.width,
            height: self.height,
            rgb_png: encode_rgb_png(self.width, self.height, out.rgb_of(0))?,
            depth_png,
            depth_max,
            render_ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
    /// Base64 PNG, 8-bit RGB.
    pub rgb_png: String,
    /// Base64 PNG, 16-bit gray, `value / 65535 * depth_max` meters.
    pub depth_png: String,
    pub depth_max: f32,
    pub render_ms: f64,
}

/// Common tweaks applied on top of an engine config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(default)]
    pub render_every: Option<u32>,
    #[serde(default)]
    pub blur_k: Option<usize>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, base: Option<EngineConfig>) -> Result<EngineConfig> {
        let mut c = base.unwrap_or_default();
        if let Some(n) = self.render_every {
            c.sensor.set_render_every(n)?;
        }
        if let Some(k) = self.blur_k {
            c.sensor.blur_samples = k;
        }
        if let Some(w) = self.workers {
            c.workers = Some(w);
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRequest {
    pub manifest: PathBuf,
    pub n_envs: usize,
    pub steps: u64,
    pub policy: ScriptedPolicy,
    #[serde(default)]
    pub config: Option<EngineConfig>,
    #[serde(default)]
    pub overrides: Overrides,
    /// Directory for frame PNGs; none skips the dump.
    #[serde(default)]
    pub frames_dir: Option<PathBuf>,
}

/// Trailing line of a rollout stream; every other line is a metrics record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamEnd {
    Summary(RolloutSummary),
    Error(ErrorBody),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRequest {
    pub manifest: PathBuf,
    pub sweep: BenchSweep,
    #[serde(default)]
    pub config: Option<EngineConfig>,
}

/// One line of a bench stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchLine {
    Report(BenchReport),
    Error(ErrorBody),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub manifest: PathBuf,
    pub n_envs: usize,
    #[serde(default)]
    pub config: Option<EngineConfig>,
    #[serde(default)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub n_envs: usize,
    pub n_joints: usize,
    pub proprio_dim: usize,
    pub command_dim: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    /// Row-major `N x J`.
    pub actions: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub step: u64,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    /// Row-major `N x D`.
    pub proprio: Vec<f32>,
    /// Row-major `N x 4`.
    pub commands: Vec<f32>,
    /// Environments whose frame was rendered by this step.
    pub rendered: Vec<bool>,
    /// Per-environment records with reward terms.
    pub info: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResponse {
    pub height: usize,
    pub width: usize,
    /// Base64 of `N x H x W x 3` bytes.
    pub rgb: String,
    /// Base64 of `N x H x W` little-endian f32 meters.
    pub depth: String,
    pub frame_steps: Vec<u64>,
}
