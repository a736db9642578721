//! Batched rendering of many cameras over shared scene data.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::Isometry3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::composite::{composite_splats_with, Splat2d};
use super::project::project_prepared;
use super::tiles::{bin_and_sort, TileBins};
use super::{
    splat_color, CameraModel, LinearRender, ProjectedGaussian, RenderOptions, RenderOutput, ViewTransform, TILE_SIZE,
};
use crate::assets::{GaussianSplatScene, SceneRegistry};
use crate::error::{Error, Result};

/// Splats projected per work item. Cameras of one scene walk the same chunk
/// back to back so it stays in cache.
const PROJECT_CHUNK: usize = 2048;

/// One camera in a batch: the environment it belongs to, its world pose and
/// its pinhole model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraView {
    pub env: usize,
    /// World-from-camera transform (+z forward, +y down).
    pub pose: Isometry3<f64>,
    pub model: CameraModel,
}

/// Wall-clock seconds spent per pipeline phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderTimings {
    pub project: f64,
    pub sort: f64,
    pub composite: f64,
}

impl RenderTimings {
    pub fn total(&self) -> f64 {
        self.project + self.sort + self.composite
    }

    pub fn accumulate(&mut self, other: &RenderTimings) {
        self.project += other.project;
        self.sort += other.sort;
        self.composite += other.composite;
    }
}

/// Renders camera batches on a dedicated worker pool.
#[derive(Clone)]
pub struct Renderer {
    pool: Arc<rayon::ThreadPool>,
    options: RenderOptions,
}

impl std::fmt::Debug for Renderer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Renderer")
            .field("workers", &self.workers())
            .field("options", &self.options)
            .finish()
    }
}

impl Renderer {
    pub fn new(workers: usize, options: RenderOptions) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .thread_name(|i| format!("render-{i}"))
            .build()
            .map_err(|e| Error::Config(format!("cannot start render workers: {e}")))?;
        Ok(Renderer {
            pool: Arc::new(pool),
            options,
        })
    }

    pub fn with_pool(pool: Arc<rayon::ThreadPool>, options: RenderOptions) -> Self {
        Renderer { pool, options }
    }

    pub fn pool(&self) -> &Arc<rayon::ThreadPool> {
        &self.pool
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn options(&self) -> &RenderOptions {
        &self.options
    }

    pub fn set_options(&mut self, options: RenderOptions) {
        self.options = options;
    }

    /// Renders every camera in one call and returns float images plus phase
    /// timings. All cameras must share one image size.
    pub fn render_linear(
        &self,
        registry: &SceneRegistry,
        cameras: &[CameraView],
    ) -> Result<(LinearRender, RenderTimings)> {
        let mut scene_of = Vec::with_capacity(cameras.len());
        for c in cameras {
            scene_of.push(registry.scene_index(c.env)?);
        }
        let scenes: Vec<&GaussianSplatScene> = registry.scenes().iter().map(|s| s.as_ref()).collect();
        self.render_grouped(&scenes, &scene_of, cameras)
    }

    pub fn render_batch(&self, registry: &SceneRegistry, cameras: &[CameraView]) -> Result<RenderOutput> {
        Ok(self.render_linear(registry, cameras)?.0.quantize())
    }

    /// Renders cameras that all look at `scene`; `env` fields are ignored.
    pub fn render_scene(
        &self,
        scene: &GaussianSplatScene,
        cameras: &[CameraView],
    ) -> Result<(LinearRender, RenderTimings)> {
        self.render_grouped(&[scene], &vec![0; cameras.len()], cameras)
    }

    pub fn render_one(
        &self,
        scene: &GaussianSplatScene,
        pose: &Isometry3<f64>,
        model: &CameraModel,
    ) -> Result<LinearRender> {
        let cam = CameraView {
            env: 0,
            pose: *pose,
            model: *model,
        };
        Ok(self.render_scene(scene, &[cam])?.0)
    }

    fn render_grouped(
        &self,
        scenes: &[&GaussianSplatScene],
        scene_of: &[usize],
        cameras: &[CameraView],
    ) -> Result<(LinearRender, RenderTimings)> {
        let Some(first) = cameras.first() else {
            return Ok((LinearRender::zeros(0, 0, 0), RenderTimings::default()));
        };
        let (width, height) = (first.model.width, first.model.height);
        for c in cameras {
            c.model.validate()?;
            if c.model.width != width || c.model.height != height {
                return Err(Error::InvalidArgument(format!(
                    "all cameras in a batch must share one image size ({width}x{height} vs {}x{})",
                    c.model.width, c.model.height
                )));
            }
        }
        let opts = self.options;
        let views: Vec<ViewTransform> = cameras.iter().map(|c| ViewTransform::from_pose(&c.pose)).collect();
        let mut timings = RenderTimings::default();

        self.pool.install(|| {
            let t0 = Instant::now();
            let projected = project_all(scenes, scene_of, cameras, &views, &opts);
            timings.project = t0.elapsed().as_secs_f64();

            let t1 = Instant::now();
            let bins: Vec<TileBins> = projected.par_iter().map(|p| bin_and_sort(p, width, height)).collect();
            timings.sort = t1.elapsed().as_secs_f64();

            let t2 = Instant::now();
            let mut out = LinearRender::zeros(cameras.len(), width, height);
            composite_all(&mut out, &projected, &bins, &opts);
            timings.composite = t2.elapsed().as_secs_f64();
            Ok((out, timings))
        })
    }
}

/// Projects every camera's splats. Work is split scene-major into splat
/// chunks; each chunk is projected for every camera of its scene, and the
/// per-camera results are concatenated in chunk order, so the output equals
/// a plain sequential loop over splats.
fn project_all(
    scenes: &[&GaussianSplatScene],
    scene_of: &[usize],
    cameras: &[CameraView],
    views: &[ViewTransform],
    opts: &RenderOptions,
) -> Vec<Vec<ProjectedGaussian>> {
    let mut per_camera: Vec<Vec<ProjectedGaussian>> = vec![Vec::new(); cameras.len()];
    for (si, scene) in scenes.iter().enumerate() {
        let cams: Vec<usize> = (0..cameras.len()).filter(|&c| scene_of[c] == si).collect();
        if cams.is_empty() {
            continue;
        }
        let prepared = scene.prepared();
        let n = prepared.len();
        let chunks: Vec<Vec<Vec<ProjectedGaussian>>> = (0..n.div_ceil(PROJECT_CHUNK))
            .into_par_iter()
            .map(|k| {
                let range = k * PROJECT_CHUNK..((k + 1) * PROJECT_CHUNK).min(n);
                cams.iter()
                    .map(|&c| {
                        let model = &cameras[c].model;
                        let view = &views[c];
                        let use_sh = opts.sh_degree > 0 && prepared.max_sh_degree > 0;
                        let mut out = Vec::new();
                        for i in range.clone() {
                            let color = if use_sh {
                                splat_color(&scene.splats[i], &view.center, opts.sh_degree)
                            } else {
                                prepared.dc_colors[i]
                            };
                            if let Some(g) = project_prepared(
                                &prepared.positions[i],
                                &prepared.covariances[i],
                                prepared.opacities[i],
                                color,
                                view,
                                &model.intrinsics,
                                model.width,
                                model.height,
                                opts.near,
                                i as u32,
                            ) {
                                out.push(g);
                            }
                        }
                        out
                    })
                    .collect()
            })
            .collect();
        for (j, &c) in cams.iter().enumerate() {
            let total = chunks.iter().map(|ch| ch[j].len()).sum();
            let mut v = Vec::with_capacity(total);
            for ch in &chunks {
                v.extend_from_slice(&ch[j]);
            }
            per_camera[c] = v;
        }
    }
    per_camera
}

/// Composites all cameras. Work items are (camera, tile row); each writes a
/// disjoint horizontal band of the output.
fn composite_all(
    out: &mut LinearRender,
    projected: &[Vec<ProjectedGaussian>],
    bins: &[TileBins],
    opts: &RenderOptions,
) {
    let (width, height) = (out.width, out.height);
    let px = width * height;
    if px == 0 {
        return;
    }
    let band = width * TILE_SIZE;
    out.rgb
        .par_chunks_mut(px * 3)
        .zip(out.depth.par_chunks_mut(px))
        .zip(out.accum_alpha.par_chunks_mut(px))
        .enumerate()
        .for_each(|(cam, ((rgb, depth), alpha))| {
            rgb.par_chunks_mut(band * 3)
                .zip(depth.par_chunks_mut(band))
                .zip(alpha.par_chunks_mut(band))
                .enumerate()
                .for_each(|(ty, ((rgb, depth), alpha))| {
                    let rows = rgb.len() / (width * 3);
                    let mut list: Vec<(Splat2d, [u32; 2])> = Vec::new();
                    let mut row: Vec<Splat2d> = Vec::new();
                    for tx in 0..bins[cam].tiles_x {
                        list.clear();
                        list.extend(bins[cam].tile(tx, ty).iter().map(|&i| {
                            let g = &projected[cam][i as usize];
                            (Splat2d::from(g), [g.pixel_rect[1], g.pixel_rect[3]])
                        }));
                        let x0 = tx * TILE_SIZE;
                        let x1 = (x0 + TILE_SIZE).min(width);
                        for r in 0..rows {
                            let y = (ty * TILE_SIZE + r) as u32;
                            let py = y as f32;
                            // same footprint bound as the tile binning
                            row.clear();
                            row.extend(
                                list.iter()
                                    .filter(|(_, [y0, y1])| *y0 <= y && y <= *y1)
                                    .map(|(s, _)| *s),
                            );
                            let list = &row;
                            for x in x0..x1 {
                                let p = if opts.with_depth {
                                    composite_splats_with::<true>(
                                        list,
                                        x as f32,
                                        py,
                                        opts.background,
                                        opts.min_transmittance,
                                    )
                                } else {
                                    composite_splats_with::<false>(
                                        list,
                                        x as f32,
                                        py,
                                        opts.background,
                                        opts.min_transmittance,
                                    )
                                };
                                let o = r * width + x;
                                rgb[o * 3..o * 3 + 3].copy_from_slice(&p.rgb);
                                depth[o] = p.depth;
                                alpha[o] = p.accum_alpha;
                            }
                        }
                    }
                });
        });
}
