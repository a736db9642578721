//! Camera scheduling and motion blur.

use nalgebra::{Isometry3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::assets::GaussianSplatScene;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::raster::{CameraModel, CameraView, LinearRender, RenderTimings, Renderer};

/// Control-rate vs camera-rate bookkeeping. A frame is rendered on every
/// `render_every`-th control step and held in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderSchedule {
    pub control_rate: u32,
    pub camera_rate: u32,
    pub render_every: u32,
}

impl RenderSchedule {
    pub fn new(control_rate: u32, camera_rate: u32) -> Result<Self> {
        if control_rate == 0 || camera_rate == 0 {
            return Err(Error::Config("control and camera rates must be positive".into()));
        }
        if camera_rate > control_rate {
            return Err(Error::Config(format!(
                "camera rate {camera_rate} Hz exceeds control rate {control_rate} Hz"
            )));
        }
        if !control_rate.is_multiple_of(camera_rate) {
            return Err(Error::Config(format!(
                "control rate {control_rate} Hz is not a multiple of camera rate {camera_rate} Hz"
            )));
        }
        Ok(RenderSchedule {
            control_rate,
            camera_rate,
            render_every: control_rate / camera_rate,
        })
    }

    /// Schedule that renders every `n`-th step of a `control_rate` loop.
    pub fn every(control_rate: u32, n: u32) -> Result<Self> {
        if n == 0 || !control_rate.is_multiple_of(n) {
            return Err(Error::Config(format!(
                "render_every {n} must divide the control rate {control_rate}"
            )));
        }
        Self::new(control_rate, control_rate / n)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate as f64
    }

    pub fn should_render(&self, step: u64) -> bool {
        step.is_multiple_of(self.render_every as u64)
    }

    /// Step whose frame is visible at `step`.
    pub fn frame_step(&self, step: u64) -> u64 {
        step - step % self.render_every as u64
    }
}

/// Motion-blur settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionBlur {
    /// Renders averaged per frame; 1 disables blur.
    pub samples: usize,
    /// Offsets the sample orientations by the angular velocity too.
    pub angular: bool,
}

impl Default for MotionBlur {
    fn default() -> Self {
        MotionBlur {
            samples: 4,
            angular: true,
        }
    }
}

/// A body-mounted pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSensor {
    pub model: CameraModel,
    /// Base-from-camera transform (camera +z forward, +y down).
    pub mount: Isometry3<f64>,
    pub frame_rate: f64,
    pub shutter_time: f64,
    pub blur: MotionBlur,
}

impl CameraSensor {
    pub fn validate(&self, control_rate: f64) -> Result<()> {
        self.model.validate()?;
        if !(self.frame_rate > 0.0) || self.frame_rate > control_rate {
            return Err(Error::Config(format!(
                "camera frame rate {} Hz must be positive and at most the control rate {control_rate} Hz",
                self.frame_rate
            )));
        }
        if !(self.shutter_time >= 0.0) || self.shutter_time >= 1.0 / self.frame_rate {
            return Err(Error::Config(format!(
                "shutter time {} s must be non-negative and shorter than the frame interval",
                self.shutter_time
            )));
        }
        if self.blur.samples == 0 {
            return Err(Error::Config("motion blur needs at least one sample".into()));
        }
        Ok(())
    }

    pub fn world_pose(&self, base: &Isometry3<f64>) -> Isometry3<f64> {
        base * self.mount
    }

    /// Camera velocity in the world frame for a base moving with `v`, `omega`.
    pub fn world_velocity(&self, base: &Isometry3<f64>, v: &Vec3, omega: &Vec3) -> (Vec3, Vec3) {
        let lever = base.rotation * self.mount.translation.vector;
        (v + omega.cross(&lever), *omega)
    }
}

/// Sample times uniformly spanning `[-shutter/2, shutter/2]`; `[0]` for one
/// sample.
pub fn blur_times(shutter: f64, samples: usize) -> Vec<f64> {
    if samples <= 1 {
        return vec![0.0; samples];
    }
    (0..samples)
        .map(|i| -0.5 * shutter + shutter * i as f64 / (samples - 1) as f64)
        .collect()
}

/// Poses of the blur samples: translation advanced by `linear * t`, rotation
/// by the world-frame axis-angle `angular * t` about the camera center.
pub fn blur_poses(pose: &Isometry3<f64>, linear: &Vec3, angular: Option<&Vec3>, times: &[f64]) -> Vec<Isometry3<f64>> {
    times
        .iter()
        .map(|&t| {
            if t == 0.0 {
                return *pose;
            }
            let rotation = match angular {
                Some(w) => UnitQuaternion::from_scaled_axis(w * t) * pose.rotation,
                None => pose.rotation,
            };
            Isometry3::from_parts(Translation3::from(pose.translation.vector + linear * t), rotation)
        })
        .collect()
}

/// One camera to render with blur.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurCamera {
    pub view: CameraView,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
}

/// Renders each camera as the uniform average of `blur.samples` renders along
/// its motion over the shutter interval. Color and coverage are averaged in
/// linear space; depth comes from the unshifted pose. All sample renders go
/// through one batched call of `render`.
pub fn render_blurred_batch(
    render: impl Fn(&[CameraView]) -> Result<(LinearRender, RenderTimings)>,
    cameras: &[BlurCamera],
    shutter: f64,
    blur: MotionBlur,
) -> Result<(LinearRender, RenderTimings)> {
    if blur.samples == 0 {
        return Err(Error::InvalidArgument(
            "motion blur sample count must be at least 1".into(),
        ));
    }
    let k = blur.samples;
    let still =
        |c: &BlurCamera| c.linear_velocity == Vec3::zeros() && (!blur.angular || c.angular_velocity == Vec3::zeros());
    let plain: Vec<CameraView> = cameras.iter().map(|c| c.view).collect();
    if k == 1 || shutter == 0.0 || cameras.iter().all(still) {
        return render(&plain);
    }
    let times = blur_times(shutter, k);
    let center = times.iter().position(|&t| t == 0.0);
    let mut views = Vec::with_capacity(cameras.len() * (k + 1));
    for c in cameras {
        let angular = blur.angular.then_some(&c.angular_velocity);
        for pose in blur_poses(&c.view.pose, &c.linear_velocity, angular, &times) {
            views.push(CameraView { pose, ..c.view });
        }
    }
    // even sample counts have no sample at t = 0; depth needs its own render
    let (nominal, mut timings) = if center.is_none() {
        render(&plain).map(|(r, t)| (Some(r), t))?
    } else {
        (None, RenderTimings::default())
    };
    let (samples, t) = render(&views)?;
    timings.accumulate(&t);

    let (w, h) = (samples.width, samples.height);
    let mut out = LinearRender::zeros(cameras.len(), w, h);
    let kf = k as f64;
    let px = w * h;
    for cam in 0..cameras.len() {
        let rgb = &mut out.rgb[cam * px * 3..(cam + 1) * px * 3];
        let mut acc = vec![0.0f64; px * 3];
        let mut acc_a = vec![0.0f64; px];
        for s in 0..k {
            let i = cam * k + s;
            for (a, &v) in acc.iter_mut().zip(samples.rgb_of(i)) {
                *a += v as f64;
            }
            for (a, &v) in acc_a.iter_mut().zip(samples.alpha_of(i)) {
                *a += v as f64;
            }
        }
        for (o, a) in rgb.iter_mut().zip(&acc) {
            *o = (a / kf) as f32;
        }
        for (o, a) in out.accum_alpha[cam * px..(cam + 1) * px].iter_mut().zip(&acc_a) {
            *o = (a / kf) as f32;
        }
        let depth = match (&nominal, center) {
            (Some(n), _) => n.depth_of(cam),
            (None, Some(c)) => samples.depth_of(cam * k + c),
            (None, None) => unreachable!(),
        };
        out.depth[cam * px..(cam + 1) * px].copy_from_slice(depth);
    }
    Ok((out, timings))
}

/// Blurred render of one camera looking at `scene`.
#[allow(clippy::too_many_arguments)]
pub fn render_with_motion_blur(
    renderer: &Renderer,
    scene: &GaussianSplatScene,
    pose: &Isometry3<f64>,
    model: &CameraModel,
    linear_velocity: Vec3,
    angular_velocity: Vec3,
    shutter: f64,
    blur: MotionBlur,
) -> Result<LinearRender> {
    if !(shutter >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "shutter time {shutter} must be non-negative"
        )));
    }
    let cam = BlurCamera {
        view: CameraView {
            env: 0,
            pose: *pose,
            model: *model,
        },
        linear_velocity,
        angular_velocity,
    };
    Ok(render_blurred_batch(|v| renderer.render_scene(scene, v), &[cam], shutter, blur)?.0)
}
