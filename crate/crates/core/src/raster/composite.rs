//! Front-to-back alpha compositing.
//!
//! Per pixel, for gaussians in depth order:
//! `alpha_i = min(0.99, o_i g_i(p))`, skipped below 1/255;
//! `C = sum alpha_i c_i T_i`, `T_i = prod_{j<i} (1 - alpha_j)`;
//! depth is `sum alpha_i z_i T_i / sum alpha_i T_i`;
//! the background fills the remaining transmittance; the loop stops once
//! `T < 1e-4`.

use super::{ProjectedGaussian, TRANSMITTANCE_MIN};

/// Compact screen-space gaussian used in the inner loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2d {
    pub mean: [f32; 2],
    pub conic: [f32; 3],
    pub opacity: f32,
    pub color: [f32; 3],
    pub depth: f32,
    /// Exponents below this give alpha under the cutoff; lets misses skip
    /// the `exp`. Never changes the result.
    pub min_power: f32,
}

impl From<&ProjectedGaussian> for Splat2d {
    fn from(g: &ProjectedGaussian) -> Self {
        Splat2d::new(g.mean2d, g.conic, g.opacity, g.color, g.depth)
    }
}

impl Splat2d {
    pub fn new(mean: [f32; 2], conic: [f32; 3], opacity: f32, color: [f32; 3], depth: f32) -> Self {
        Splat2d {
            mean,
            conic,
            opacity,
            color,
            depth,
            // 1e-3 of slack dwarfs the f32 error of exp
            min_power: (super::ALPHA_MIN / opacity).ln() - 1e-3,
        }
    }

    #[inline(always)]
    pub fn alpha_at(&self, px: f32, py: f32) -> f32 {
        let dx = self.mean[0] - px;
        let dy = self.mean[1] - py;
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
        if power > 0.0 || power < self.min_power {
            return 0.0;
        }
        let alpha = (self.opacity * power.exp()).min(super::ALPHA_MAX);
        if alpha < super::ALPHA_MIN {
            0.0
        } else {
            alpha
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    pub rgb: [f32; 3],
    pub depth: f32,
    pub accum_alpha: f32,
}

/// Composites one pixel with the default cutoff.
#[inline(always)]
pub fn composite_splats<const DEPTH: bool>(splats: &[Splat2d], px: f32, py: f32, background: [f32; 3]) -> PixelSample {
    composite_splats_with::<DEPTH>(splats, px, py, background, TRANSMITTANCE_MIN)
}

/// Composites one pixel, stopping once transmittance falls below `t_min`.
/// With `DEPTH = false` the depth accumulator is never touched and the color
/// path is the same arithmetic.
#[inline(always)]
pub fn composite_splats_with<const DEPTH: bool>(
    splats: &[Splat2d],
    px: f32,
    py: f32,
    background: [f32; 3],
    t_min: f32,
) -> PixelSample {
    let mut t = 1.0f32;
    let mut c = [0.0f32; 3];
    let mut z = 0.0f32;
    let mut weight = 0.0f32;
    for s in splats {
        let alpha = s.alpha_at(px, py);
        if alpha == 0.0 {
            continue;
        }
        let w = alpha * t;
        c[0] += w * s.color[0];
        c[1] += w * s.color[1];
        c[2] += w * s.color[2];
        if DEPTH {
            z += w * s.depth;
            weight += w;
        }
        t *= 1.0 - alpha;
        if t < t_min {
            break;
        }
    }
    let depth = if DEPTH && weight > 0.0 { z / weight } else { 0.0 };
    PixelSample {
        rgb: [
            c[0] + t * background[0],
            c[1] + t * background[1],
            c[2] + t * background[2],
        ],
        depth,
        accum_alpha: 1.0 - t,
    }
}

/// Composites one pixel from depth-sorted projected gaussians.
pub fn composite_pixel(sorted: &[ProjectedGaussian], px: f32, py: f32, background: [f32; 3]) -> PixelSample {
    let splats: Vec<Splat2d> = sorted.iter().map(Splat2d::from).collect();
    composite_splats::<true>(&splats, px, py, background)
}

/// Float image of one tile block.
#[derive(Debug, Clone, PartialEq)]
pub struct TileImage {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f32>,
    pub depth: Vec<f32>,
    pub accum_alpha: Vec<f32>,
}

/// Composites the pixel block `[x0, x0 + width) x [y0, y0 + height)` from a
/// depth-sorted gaussian list.
pub fn composite_tile(
    sorted: &[ProjectedGaussian],
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
    background: [f32; 3],
) -> TileImage {
    let splats: Vec<Splat2d> = sorted.iter().map(Splat2d::from).collect();
    let mut out = TileImage {
        x0,
        y0,
        width,
        height,
        rgb: Vec::with_capacity(width * height * 3),
        depth: Vec::with_capacity(width * height),
        accum_alpha: Vec::with_capacity(width * height),
    };
    for y in y0..y0 + height {
        for x in x0..x0 + width {
            let p = composite_splats::<true>(&splats, x as f32, y as f32, background);
            out.rgb.extend_from_slice(&p.rgb);
            out.depth.push(p.depth);
            out.accum_alpha.push(p.accum_alpha);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn splat(mean: [f32; 2], opacity: f32, color: [f32; 3], depth: f32) -> Splat2d {
        Splat2d::new(mean, [0.1, 0.0, 0.1], opacity, color, depth)
    }

    #[test]
    fn power_threshold_never_changes_alpha() {
        let plain = |s: &Splat2d, px: f32, py: f32| {
            let (dx, dy) = (s.mean[0] - px, s.mean[1] - py);
            let [a, b, c] = s.conic;
            let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
            let alpha = (s.opacity * power.exp()).min(crate::raster::ALPHA_MAX);
            if power > 0.0 || alpha < crate::raster::ALPHA_MIN {
                0.0
            } else {
                alpha
            }
        };
        for (k, opacity) in [0.003f32, 0.004, 0.05, 0.5, 0.9, 1.0].into_iter().enumerate() {
            let s = Splat2d::new([3.3, -1.7], [0.21 + k as f32 * 0.1, 0.05, 0.13], opacity, [1.0; 3], 1.0);
            for i in 0..400 {
                for j in 0..100 {
                    let (px, py) = (i as f32 * 0.05 - 7.0, j as f32 * 0.17 - 10.0);
                    assert_eq!(s.alpha_at(px, py).to_bits(), plain(&s, px, py).to_bits());
                }
            }
        }
    }

    #[test]
    fn empty_list_is_background() {
        let p = composite_splats::<true>(&[], 3.0, 4.0, [0.2, 0.4, 0.6]);
        assert_eq!(p.rgb, [0.2, 0.4, 0.6]);
        assert_eq!(p.accum_alpha, 0.0);
        assert_eq!(p.depth, 0.0);
    }

    #[test]
    fn single_gaussian_at_its_mean() {
        let bg = [0.1, 0.2, 0.3];
        let c = [0.9, 0.5, 0.1];
        let p = composite_splats::<true>(&[splat([5.0, 5.0], 0.8, c, 2.5)], 5.0, 5.0, bg);
        for k in 0..3 {
            assert_relative_eq!(p.rgb[k], 0.8 * c[k] + 0.2 * bg[k], epsilon = 1e-6);
        }
        assert_relative_eq!(p.accum_alpha, 0.8, epsilon = 1e-7);
        assert_eq!(p.depth, 2.5);
    }

    #[test]
    fn two_term_expansion() {
        let bg = [0.3, 0.3, 0.3];
        let (a1, c1, z1) = (0.6f32, [1.0f32, 0.0, 0.0], 1.0f32);
        let (a2, c2, z2) = (0.5f32, [0.0f32, 1.0, 0.0], 2.0f32);
        let list = [splat([0.0, 0.0], a1, c1, z1), splat([0.0, 0.0], a2, c2, z2)];
        let p = composite_splats::<true>(&list, 0.0, 0.0, bg);
        for k in 0..3 {
            let expect = a1 * c1[k] + (1.0 - a1) * a2 * c2[k] + (1.0 - a1) * (1.0 - a2) * bg[k];
            assert_relative_eq!(p.rgb[k], expect, epsilon = 1e-6);
        }
        let weight = a1 + (1.0 - a1) * a2;
        assert_relative_eq!(p.depth, (a1 * z1 + (1.0 - a1) * a2 * z2) / weight, epsilon = 1e-6);
    }

    #[test]
    fn alpha_is_clamped_and_cut_off() {
        let s = splat([0.0, 0.0], 1.0, [1.0; 3], 1.0);
        assert_eq!(s.alpha_at(0.0, 0.0), 0.99);
        // far tail below 1/255
        assert_eq!(s.alpha_at(20.0, 0.0), 0.0);
    }

    #[test]
    fn early_termination_stops_accumulating() {
        // T after each layer: 0.05, 2.5e-3, 1.25e-4, 6.25e-6 -> stop after four
        let mut list: Vec<Splat2d> = (0..4)
            .map(|i| splat([0.0, 0.0], 0.95, [0.0, 1.0, 0.0], i as f32))
            .collect();
        list.push(splat([0.0, 0.0], 0.95, [1.0, 0.0, 0.0], 9.0));
        let p = composite_splats::<true>(&list, 0.0, 0.0, [0.0; 3]);
        assert_eq!(p.rgb[0], 0.0);
        assert_relative_eq!(p.accum_alpha, 1.0 - 0.05f32.powi(4), epsilon = 1e-6);
        assert!(p.depth < 3.0);
    }

    #[test]
    fn rgb_only_matches_rgb_depth() {
        let list: Vec<Splat2d> = (0..6)
            .map(|i| {
                splat(
                    [i as f32, 1.0],
                    0.3 + 0.1 * i as f32,
                    [0.1 * i as f32, 0.5, 0.2],
                    1.0 + i as f32,
                )
            })
            .collect();
        for px in 0..8 {
            let a = composite_splats::<true>(&list, px as f32, 0.5, [0.1; 3]);
            let b = composite_splats::<false>(&list, px as f32, 0.5, [0.1; 3]);
            assert_eq!(a.rgb, b.rgb);
            assert_eq!(a.accum_alpha, b.accum_alpha);
        }
    }
}
