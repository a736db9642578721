use super::{CameraModel, Intrinsics, ViewTransform, ALPHA_MIN, COV2D_REGULARIZER, FRUSTUM_GUARD, TILE_SIZE};
use crate::assets::SplatPrimitive;

/// A splat after projection to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    /// Pixel coordinates; pixel `(i, j)` is centered at `(i, j)`.
    pub mean2d: [f32; 2],
    /// `[xx, xy, yy]`, regularized, pixels^2.
    pub cov2d: [f32; 3],
    /// Inverse of `cov2d`, `[xx, xy, yy]`.
    pub conic: [f32; 3],
    /// Camera-frame z of the mean, meters.
    pub depth: f32,
    pub color: [f32; 3],
    pub opacity: f32,
    /// Footprint radius in pixels.
    pub radius: f32,
    /// Covered pixel rectangle, inclusive, clipped to the image.
    pub pixel_rect: [u32; 4],
    /// Covered tile rectangle `[x0, y0, x1, y1)`.
    pub tile_rect: [u32; 4],
    /// Index of the source splat.
    pub source: u32,
}

impl ProjectedGaussian {
    /// Opacity-weighted falloff at pixel `(px, py)`, clamped to `ALPHA_MAX`.
    /// Returns 0 below the `ALPHA_MIN` cutoff. Every compositor uses this.
    #[inline(always)]
    pub fn alpha_at(&self, px: f32, py: f32) -> f32 {
        let dx = self.mean2d[0] - px;
        let dy = self.mean2d[1] - py;
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
        if power > 0.0 {
            return 0.0;
        }
        let alpha = (self.opacity * power.exp()).min(super::ALPHA_MAX);
        if alpha < ALPHA_MIN {
            0.0
        } else {
            alpha
        }
    }
}

/// Footprint radius in standard deviations. At least 3; grows with opacity so
/// that every pixel outside the footprint falls under the alpha cutoff.
#[inline]
pub fn footprint_sigmas(opacity: f32) -> f32 {
    // opacity * exp(-k^2 / 2) < 1/255  <=>  k > sqrt(2 ln(255 opacity))
    let cutoff = (2.0 * (255.0 * opacity).ln()).max(0.0).sqrt();
    cutoff.max(3.0) * 1.001
}

/// Projects one splat given precomputed world covariance and color.
/// Returns `None` when the mean is not beyond `near` or the footprint misses
/// the image.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn project_prepared(
    position: &[f32; 3],
    cov: &[f32; 6],
    opacity: f32,
    color: [f32; 3],
    view: &ViewTransform,
    intr: &Intrinsics,
    width: usize,
    height: usize,
    near: f32,
    source: u32,
) -> Option<ProjectedGaussian> {
    if opacity < ALPHA_MIN {
        return None;
    }
    let [x, y, z] = view.to_camera(position);
    if !(z > near) {
        return None;
    }
    let inv_z = 1.0 / z;
    let u = intr.fx * x * inv_z + intr.cx;
    let v = intr.fy * y * inv_z + intr.cy;

    // T = J W, J the perspective Jacobian at the mean. Far off-axis the
    // linearization explodes, so x/z and y/z are clamped to a bit past the
    // image edge.
    let lim_x = FRUSTUM_GUARD * (width as f32 * 0.5) / intr.fx;
    let lim_y = FRUSTUM_GUARD * (height as f32 * 0.5) / intr.fy;
    let tx = (x * inv_z).clamp(-lim_x, lim_x);
    let ty = (y * inv_z).clamp(-lim_y, lim_y);
    let j00 = intr.fx * inv_z;
    let j02 = -intr.fx * tx * inv_z;
    let j11 = intr.fy * inv_z;
    let j12 = -intr.fy * ty * inv_z;
    let w = &view.rotation;
    let t0 = [
        j00 * w[(0, 0)] + j02 * w[(2, 0)],
        j00 * w[(0, 1)] + j02 * w[(2, 1)],
        j00 * w[(0, 2)] + j02 * w[(2, 2)],
    ];
    let t1 = [
        j11 * w[(1, 0)] + j12 * w[(2, 0)],
        j11 * w[(1, 1)] + j12 * w[(2, 1)],
        j11 * w[(1, 2)] + j12 * w[(2, 2)],
    ];
    let [sxx, sxy, sxz, syy, syz, szz] = *cov;
    // M = T * Sigma
    let m0 = [
        t0[0] * sxx + t0[1] * sxy + t0[2] * sxz,
        t0[0] * sxy + t0[1] * syy + t0[2] * syz,
        t0[0] * sxz + t0[1] * syz + t0[2] * szz,
    ];
    let m1 = [
        t1[0] * sxx + t1[1] * sxy + t1[2] * sxz,
        t1[0] * sxy + t1[1] * syy + t1[2] * syz,
        t1[0] * sxz + t1[1] * syz + t1[2] * szz,
    ];
    let a = m0[0] * t0[0] + m0[1] * t0[1] + m0[2] * t0[2] + COV2D_REGULARIZER;
    let b = m0[0] * t1[0] + m0[1] * t1[1] + m0[2] * t1[2];
    let c = m1[0] * t1[0] + m1[1] * t1[1] + m1[2] * t1[2] + COV2D_REGULARIZER;

    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let inv_det = 1.0 / det;
    let conic = [c * inv_det, -b * inv_det, a * inv_det];
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = footprint_sigmas(opacity) * lambda_max.sqrt();

    let x_lo = (u - radius).ceil().max(0.0);
    let x_hi = (u + radius).floor().min(width as f32 - 1.0);
    let y_lo = (v - radius).ceil().max(0.0);
    let y_hi = (v + radius).floor().min(height as f32 - 1.0);
    if !(x_lo <= x_hi && y_lo <= y_hi) {
        return None;
    }
    let pixel_rect = [x_lo as u32, y_lo as u32, x_hi as u32, y_hi as u32];
    let ts = TILE_SIZE as u32;
    let tile_rect = [
        pixel_rect[0] / ts,
        pixel_rect[1] / ts,
        pixel_rect[2] / ts + 1,
        pixel_rect[3] / ts + 1,
    ];
    Some(ProjectedGaussian {
        mean2d: [u, v],
        cov2d: [a, b, c],
        conic,
        depth: z,
        color,
        opacity,
        radius,
        pixel_rect,
        tile_rect,
        source,
    })
}

/// Projects a single splat (DC color) into a camera.
pub fn project_gaussian(
    splat: &SplatPrimitive,
    view: &ViewTransform,
    camera: &CameraModel,
    near: f32,
) -> Option<ProjectedGaussian> {
    let c = splat.covariance();
    project_prepared(
        &splat.position,
        &[c[(0, 0)], c[(0, 1)], c[(0, 2)], c[(1, 1)], c[(1, 2)], c[(2, 2)]],
        splat.opacity,
        splat.dc_color(),
        view,
        &camera.intrinsics,
        camera.width,
        camera.height,
        near,
        0,
    )
}
