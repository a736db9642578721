//! Untiled per-pixel renderer with float64 accumulation.
//!
//! Every pixel walks the full depth-sorted list of projected gaussians, with
//! no tile lists and no early termination. Quadratic in pixels x splats; meant
//! as a check on the tiled renderer for small scenes.

use nalgebra::Isometry3;

use super::project::project_prepared;
use super::tiles::depth_order;
use super::{splat_color, CameraModel, LinearRender, ProjectedGaussian, RenderOptions, ViewTransform};
use crate::assets::{GaussianSplatScene, SplatPrimitive};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
    pub depth: Vec<f64>,
    pub accum_alpha: Vec<f64>,
}

impl ReferenceImage {
    /// Rounds to float32 for comparison with (or quantization like) the tiled
    /// renderer.
    pub fn to_linear(&self) -> LinearRender {
        LinearRender {
            count: 1,
            width: self.width,
            height: self.height,
            rgb: self.rgb.iter().map(|&v| v as f32).collect(),
            depth: self.depth.iter().map(|&v| v as f32).collect(),
            accum_alpha: self.accum_alpha.iter().map(|&v| v as f32).collect(),
        }
    }
}

pub fn render_reference_scene(
    scene: &GaussianSplatScene,
    pose: &Isometry3<f64>,
    camera: &CameraModel,
    options: &RenderOptions,
) -> ReferenceImage {
    render_reference(&scene.splats, pose, camera, options)
}

pub fn render_reference(
    splats: &[SplatPrimitive],
    pose: &Isometry3<f64>,
    camera: &CameraModel,
    options: &RenderOptions,
) -> ReferenceImage {
    let view = ViewTransform::from_pose(pose);
    let projected: Vec<ProjectedGaussian> = splats
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let c = s.covariance();
            project_prepared(
                &s.position,
                &[c[(0, 0)], c[(0, 1)], c[(0, 2)], c[(1, 1)], c[(1, 2)], c[(2, 2)]],
                s.opacity,
                splat_color(s, &view.center, options.sh_degree),
                &view,
                &camera.intrinsics,
                camera.width,
                camera.height,
                options.near,
                i as u32,
            )
        })
        .collect();
    let order = depth_order(&projected);
    let sorted: Vec<&ProjectedGaussian> = order.iter().map(|&i| &projected[i as usize]).collect();
    let bg = options.background.map(f64::from);

    let n = camera.width * camera.height;
    let mut img = ReferenceImage {
        width: camera.width,
        height: camera.height,
        rgb: Vec::with_capacity(n * 3),
        depth: Vec::with_capacity(n),
        accum_alpha: Vec::with_capacity(n),
    };
    for y in 0..camera.height {
        for x in 0..camera.width {
            let mut t = 1.0f64;
            let mut c = [0.0f64; 3];
            let mut z = 0.0f64;
            let mut a = 0.0f64;
            for g in &sorted {
                let alpha = g.alpha_at(x as f32, y as f32) as f64;
                if alpha == 0.0 {
                    continue;
                }
                let w = alpha * t;
                for (ck, gk) in c.iter_mut().zip(g.color) {
                    *ck += w * gk as f64;
                }
                z += w * g.depth as f64;
                a += w;
                t *= 1.0 - alpha;
            }
            for k in 0..3 {
                img.rgb.push(c[k] + t * bg[k]);
            }
            img.depth.push(if a > 0.0 { z / a } else { 0.0 });
            img.accum_alpha.push(1.0 - t);
        }
    }
    img
}
