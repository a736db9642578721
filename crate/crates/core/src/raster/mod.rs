//! Tile-based forward rasterization of gaussian splats.
//!
//! Pipeline per camera: [`project`] every splat to a screen-space gaussian,
//! [`tiles::bin_and_sort`] them into 16x16 tiles in global front-to-back order,
//! then alpha-composite each tile ([`composite`]). [`Renderer`] runs the
//! pipeline for many cameras on a worker pool; [`reference`] is the untiled
//! float64 oracle used to check it.

pub mod batch;
pub mod composite;
pub mod export;
pub mod project;
pub mod reference;
pub mod tiles;

use nalgebra::{Isometry3, Matrix3, Matrix4, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::assets::SplatPrimitive;
use crate::error::{Error, Result};

pub use batch::{CameraView, RenderTimings, Renderer};
pub use composite::{composite_pixel, composite_tile, PixelSample, TileImage};
pub use project::{project_gaussian, ProjectedGaussian};
pub use reference::{render_reference, render_reference_scene, ReferenceImage};
pub use tiles::{bin_and_sort, TileBins};

pub const TILE_SIZE: usize = 16;
/// Added to the diagonal of every screen-space covariance (pixels^2).
pub const COV2D_REGULARIZER: f32 = 0.3;
pub const ALPHA_MAX: f32 = 0.99;
pub const ALPHA_MIN: f32 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f32 = 1e-4;
/// Off-axis limit of the projection Jacobian, as a multiple of the image
/// half-extent.
pub const FRUSTUM_GUARD: f32 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
}

impl Intrinsics {
    /// Pinhole intrinsics for a horizontal field of view, principal point at the
    /// image center.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f32) -> Self {
        let fx = 0.5 * width as f32 / (0.5 * hfov_deg.to_radians()).tan();
        Intrinsics {
            fx,
            fy: fx,
            cx: 0.5 * width as f32,
            cy: 0.5 * height as f32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "intrinsics must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(width: usize, height: usize, hfov_deg: f32) -> Self {
        CameraModel {
            intrinsics: Intrinsics::from_fov(width, height, hfov_deg),
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        self.intrinsics.validate()
    }
}

/// World-to-camera transform in the pinhole convention (+z forward, +x right,
/// +y down). Points map as `rotation * (p - center)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewTransform {
    pub rotation: Matrix3<f32>,
    pub center: Vector3<f32>,
}

impl ViewTransform {
    pub fn from_pose(world_from_camera: &Isometry3<f64>) -> Self {
        let r = world_from_camera.rotation.to_rotation_matrix().into_inner().transpose();
        let t = world_from_camera.translation.vector;
        ViewTransform {
            rotation: r.cast::<f32>(),
            center: t.cast::<f32>(),
        }
    }

    /// From a 4x4 camera-from-world extrinsic `[R | t]`.
    pub fn from_extrinsic(m: &Matrix4<f32>) -> Self {
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t = m.fixed_view::<3, 1>(0, 3).into_owned();
        ViewTransform {
            rotation: r,
            center: -(r.transpose() * t),
        }
    }

    pub fn to_camera(&self, p: &[f32; 3]) -> [f32; 3] {
        let d = Vector3::new(p[0] - self.center.x, p[1] - self.center.y, p[2] - self.center.z);
        let c = self.rotation * d;
        [c.x, c.y, c.z]
    }
}

/// World-from-camera pose looking from `eye` toward `target`, with `up`
/// projecting to image-up.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Isometry3<f64> {
    let z = (target - eye).normalize();
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Isometry3::from_parts(Translation3::from(eye), UnitQuaternion::from_rotation_matrix(&rot))
}

/// Color of `splat` seen from camera center `eye`, evaluating SH up to
/// `sh_degree`.
pub fn splat_color(splat: &SplatPrimitive, eye: &Vector3<f32>, sh_degree: usize) -> [f32; 3] {
    if sh_degree == 0 || splat.sh_degree() == 0 {
        return splat.dc_color();
    }
    let d = Vector3::from(splat.position) - eye;
    let n = d.norm();
    let dir = if n > 0.0 { d / n } else { Vector3::z() };
    splat.eval_color([dir.x, dir.y, dir.z], sh_degree)
}

/// Camera-independent splat data in structure-of-arrays form.
#[derive(Debug, Clone)]
pub struct PreparedSplats {
    pub positions: Vec<[f32; 3]>,
    /// Upper triangle `xx xy xz yy yz zz` of the world covariance.
    pub covariances: Vec<[f32; 6]>,
    pub opacities: Vec<f32>,
    pub dc_colors: Vec<[f32; 3]>,
    pub max_sh_degree: usize,
}

impl PreparedSplats {
    pub fn new(splats: &[SplatPrimitive]) -> Self {
        let mut p = PreparedSplats {
            positions: Vec::with_capacity(splats.len()),
            covariances: Vec::with_capacity(splats.len()),
            opacities: Vec::with_capacity(splats.len()),
            dc_colors: Vec::with_capacity(splats.len()),
            max_sh_degree: 0,
        };
        for s in splats {
            let c = s.covariance();
            p.positions.push(s.position);
            p.covariances
                .push([c[(0, 0)], c[(0, 1)], c[(0, 2)], c[(1, 1)], c[(1, 2)], c[(2, 2)]]);
            p.opacities.push(s.opacity);
            p.dc_colors.push(s.dc_color());
            p.max_sh_degree = p.max_sh_degree.max(s.sh_degree());
        }
        p
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Options shared by every camera in one render call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub near: f32,
    pub background: [f32; 3],
    /// Highest SH degree evaluated; 0 renders the DC color only.
    pub sh_degree: usize,
    pub with_depth: bool,
    /// Compositing stops once transmittance drops below this.
    #[serde(default = "default_min_transmittance")]
    pub min_transmittance: f32,
}

fn default_min_transmittance() -> f32 {
    TRANSMITTANCE_MIN
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            near: 0.05,
            background: [0.0; 3],
            sh_degree: 0,
            with_depth: true,
            min_transmittance: TRANSMITTANCE_MIN,
        }
    }
}

/// Float images for a batch of cameras, before 8-bit quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRender {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// `count x height x width x 3`, row-major.
    pub rgb: Vec<f32>,
    /// `count x height x width`, meters.
    pub depth: Vec<f32>,
    pub accum_alpha: Vec<f32>,
}

impl LinearRender {
    pub fn zeros(count: usize, width: usize, height: usize) -> Self {
        let px = count * width * height;
        LinearRender {
            count,
            width,
            height,
            rgb: vec![0.0; px * 3],
            depth: vec![0.0; px],
            accum_alpha: vec![0.0; px],
        }
    }

    pub fn pixels_per_image(&self) -> usize {
        self.width * self.height
    }

    pub fn rgb_of(&self, cam: usize) -> &[f32] {
        let n = self.pixels_per_image() * 3;
        &self.rgb[cam * n..(cam + 1) * n]
    }

    pub fn depth_of(&self, cam: usize) -> &[f32] {
        let n = self.pixels_per_image();
        &self.depth[cam * n..(cam + 1) * n]
    }

    pub fn alpha_of(&self, cam: usize) -> &[f32] {
        let n = self.pixels_per_image();
        &self.accum_alpha[cam * n..(cam + 1) * n]
    }

    /// Copies one camera out as a single-image render.
    pub fn single(&self, cam: usize) -> LinearRender {
        LinearRender {
            count: 1,
            width: self.width,
            height: self.height,
            rgb: self.rgb_of(cam).to_vec(),
            depth: self.depth_of(cam).to_vec(),
            accum_alpha: self.alpha_of(cam).to_vec(),
        }
    }

    pub fn quantize(&self) -> RenderOutput {
        RenderOutput {
            count: self.count,
            width: self.width,
            height: self.height,
            rgb: self.rgb.iter().map(|&v| quantize_channel(v)).collect(),
            depth: self.depth.clone(),
            accum_alpha: self.accum_alpha.clone(),
        }
    }
}

pub fn quantize_channel(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Packed 8-bit RGB plus float depth and coverage for a batch of cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOutput {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    pub depth: Vec<f32>,
    pub accum_alpha: Vec<f32>,
}

impl RenderOutput {
    pub fn rgb_of(&self, cam: usize) -> &[u8] {
        let n = self.width * self.height * 3;
        &self.rgb[cam * n..(cam + 1) * n]
    }

    pub fn depth_of(&self, cam: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.depth[cam * n..(cam + 1) * n]
    }

    pub fn alpha_of(&self, cam: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.accum_alpha[cam * n..(cam + 1) * n]
    }
}
