//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned
//! below. Exits nonzero when any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatgym_core::assets::mesh::{box_mesh, grid_plane};
use splatgym_core::assets::{register_scenes, CollisionMesh, GaussianSplatScene, PenaltyRegion};
use splatgym_core::bench::{run_point, BenchPoint};
use splatgym_core::config::EngineConfig;
use splatgym_core::engine::VecEnv;
use splatgym_core::geometry::Vec3;
use splatgym_core::physics::EpisodeStatus;
use splatgym_core::physics::{spawn_state, step_robot, Physics, PhysicsConfig, RobotState, Spawn};
use splatgym_core::raster::{look_at, render_reference, CameraModel, CameraView, RenderOptions, Renderer};
use splatgym_core::rollout::{rollout, RolloutOptions, ScriptedPolicy};
use splatgym_core::sensor::{blur_poses, blur_times, render_with_motion_blur, MotionBlur};
use splatgym_core::synth::{flat_scene, orbit_camera, random_splats, room_scene, PATCH, PATCH_WEIGHT};
use splatgym_core::tasks::{
    check_termination, compute_general_rewards, compute_goal_rewards, compute_penalty_region_reward,
    compute_velocity_rewards, point_in_convex_polygon, voxel_center, voxelize_ground_truth, GridConfig, RewardConfig,
    TerminationConfig,
};

const ORACLE_SCENES: u64 = 100;
const ORACLE_MAX_SPLATS: usize = 512;
const ORACLE_TOL: f64 = 1e-5;
const ORACLE_BUDGET_S: f64 = 60.0;
const BIG_SCENE_SPLATS: usize = 100_000;
const DEPTH_OVERHEAD_MAX: f64 = 0.15;
const DECOUPLING_ENVS: usize = 64;
const DECOUPLING_MIN_SPEEDUP: f64 = 2.5;
const BATCH_CAMERAS: usize = 64;
const BATCH_WORKERS: usize = 4;
const BATCH_MIN_SPEEDUP: f64 = 2.0;
const REWARD_TOL: f64 = 1e-9;
const BLUR_TOL: f64 = 1e-6;
const VOXEL_MESHES: u64 = 20;
const VOXEL_MAX_TRIANGLES: usize = 1000;
const FREE_FALL_REL_TOL: f64 = 0.01;
const REST_DRIFT_MAX: f64 = 1e-3;
const POLYGON_POINTS: usize = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); _] = [
        ("rasterizer oracle suite", oracle_suite),
        ("depth by-product", depth_by_product),
        ("rate decoupling", rate_decoupling),
        ("batch amortization", batch_amortization),
        ("reward exactness", reward_exactness),
        ("motion blur", motion_blur),
        ("voxel and height labels", voxel_labels),
        ("physics sanity", physics_sanity),
        ("penalty region", penalty_region),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}

fn oracle_suite() -> Outcome {
    let cam = CameraModel::new(64, 64, 60.0);
    let renderer = Renderer::new(1, RenderOptions::default()).unwrap();
    let exact = RenderOptions {
        min_transmittance: 0.0,
        ..RenderOptions::default()
    };
    let start = Instant::now();
    let (mut worst, mut worst_no_cutoff) = (0.0f64, 0.0f64);
    let mut over = 0;
    let (v, t) = box_mesh([-1.0; 3], [1.0; 3]);
    let mesh = CollisionMesh::new(v, t).unwrap();
    for seed in 0..ORACLE_SCENES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=ORACLE_MAX_SPLATS);
        let splats = random_splats(&mut rng, n, [0.0; 3], 1.0, 0.15);
        let pose = orbit_camera(&mut rng, Vec3::zeros(), 2.5, 4.0);
        let scene = GaussianSplatScene::new("oracle", splats, mesh.clone());
        let img = renderer.render_one(&scene, &pose, &cam).unwrap();
        let reference = render_reference(&scene.splats, &pose, &cam, &RenderOptions::default());
        let e = max_err(&img.rgb, &reference.rgb);
        worst = worst.max(e);
        if e > ORACLE_TOL {
            over += 1;
        }
        let mut r2 = renderer.clone();
        r2.set_options(exact);
        let img2 = r2.render_one(&scene, &pose, &cam).unwrap();
        worst_no_cutoff = worst_no_cutoff.max(max_err(&img2.rgb, &reference.rgb));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= ORACLE_TOL && secs < ORACLE_BUDGET_S,
        format!(
            "max err {worst:.2e} (tol {ORACLE_TOL:.0e}, {over}/{ORACLE_SCENES} scenes over); \
             with early termination off {worst_no_cutoff:.2e}; {secs:.1}s of {ORACLE_BUDGET_S}s"
        ),
    )
}

fn max_err(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

fn big_room() -> Arc<GaussianSplatScene> {
    Arc::new(room_scene("room", BIG_SCENE_SPLATS, 11))
}

fn room_cameras(n: usize, model: CameraModel) -> Vec<CameraView> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..n)
        .map(|env| {
            let eye = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.45);
            let yaw: f64 = rng.random_range(-3.1..3.1);
            let target = eye + Vector3::new(yaw.cos(), yaw.sin(), -0.3);
            CameraView {
                env,
                pose: look_at(eye, target, Vector3::z()),
                model,
            }
        })
        .collect()
}

fn depth_by_product() -> Outcome {
    let scene = big_room();
    let cams = room_cameras(8, CameraModel::new(128, 96, 90.0));
    let rgb_only = Renderer::new(
        1,
        RenderOptions {
            with_depth: false,
            ..RenderOptions::default()
        },
    )
    .unwrap();
    let with_depth = Renderer::new(1, RenderOptions::default()).unwrap();
    let a = rgb_only.render_scene(&scene, &cams).unwrap().0;
    let b = with_depth.render_scene(&scene, &cams).unwrap().0;
    let same = a.rgb.iter().zip(&b.rgb).all(|(x, y)| x.to_bits() == y.to_bits());
    // interleave and keep the fastest of each to damp scheduler noise
    let (mut t_rgb, mut t_depth) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..5 {
        let t = Instant::now();
        rgb_only.render_scene(&scene, &cams).unwrap();
        t_rgb = t_rgb.min(t.elapsed().as_secs_f64());
        let t = Instant::now();
        with_depth.render_scene(&scene, &cams).unwrap();
        t_depth = t_depth.min(t.elapsed().as_secs_f64());
    }
    let overhead = t_depth / t_rgb - 1.0;
    outcome(
        same && overhead <= DEPTH_OVERHEAD_MAX,
        format!(
            "rgb bit-exact: {same}; depth overhead {:+.1}% (max {:.0}%) on {} splats, rgb {:.3}s vs rgb+depth {:.3}s",
            overhead * 100.0,
            DEPTH_OVERHEAD_MAX * 100.0,
            scene.splats.len(),
            t_rgb,
            t_depth
        ),
    )
}

fn rate_decoupling() -> Outcome {
    let scenes = vec![big_room()];
    let base = EngineConfig::default();
    let point = |render_every| BenchPoint {
        n_envs: DECOUPLING_ENVS,
        render_every,
        blur_k: 1,
        workers: splatgym_core::config::default_workers(),
    };
    let r1 = run_point(&scenes, &base, point(1), 10, 1).unwrap();
    let r5 = run_point(&scenes, &base, point(5), 20, 1).unwrap();
    let speedup = r5.steps_per_second / r1.steps_per_second;
    outcome(
        speedup >= DECOUPLING_MIN_SPEEDUP,
        format!(
            "render_every 5: {:.1} steps/s vs render_every 1: {:.1} steps/s = {speedup:.2}x (min {DECOUPLING_MIN_SPEEDUP}x), {} envs, {} splats",
            r5.steps_per_second, r1.steps_per_second, DECOUPLING_ENVS, r1.n_splats
        ),
    )
}

fn batch_amortization() -> Outcome {
    let scene = Arc::new(room_scene("room", 20_000, 5));
    let registry = splatgym_core::assets::SceneRegistry::from_shared(vec![scene], BATCH_CAMERAS).unwrap();
    let cams = room_cameras(BATCH_CAMERAS, CameraModel::new(64, 48, 90.0));
    let r = Renderer::new(BATCH_WORKERS, RenderOptions::default()).unwrap();
    let batched = r.render_linear(&registry, &cams).unwrap().0;
    let singles: Vec<_> = cams
        .iter()
        .map(|c| r.render_linear(&registry, std::slice::from_ref(c)).unwrap().0)
        .collect();
    let identical = singles.iter().enumerate().all(|(i, s)| {
        s.rgb == batched.rgb_of(i) && s.depth == batched.depth_of(i) && s.accum_alpha == batched.alpha_of(i)
    });
    let (mut t_batch, mut t_seq) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..3 {
        let t = Instant::now();
        r.render_linear(&registry, &cams).unwrap();
        t_batch = t_batch.min(t.elapsed().as_secs_f64());
        let t = Instant::now();
        for c in &cams {
            r.render_linear(&registry, std::slice::from_ref(c)).unwrap();
        }
        t_seq = t_seq.min(t.elapsed().as_secs_f64());
    }
    let speedup = t_seq / t_batch;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    outcome(
        identical && speedup >= BATCH_MIN_SPEEDUP,
        format!(
            "bit-identical: {identical}; batched {t_batch:.3}s vs sequential {t_seq:.3}s = {speedup:.2}x \
             (min {BATCH_MIN_SPEEDUP}x) with {BATCH_WORKERS} workers on {cores} hardware threads"
        ),
    )
}

fn standing_state() -> RobotState {
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
    s.foot_contact = [false; 2];
    s.foot_forces = [Vec3::zeros(); 2];
    s
}

fn reward_exactness() -> Outcome {
    let cfg = RewardConfig::default();
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();

    let s = standing_state();
    let g = compute_general_rewards(&s, &cfg);
    for (name, v) in &g.terms {
        checks.push((name, *v, 0.0));
    }
    let mut w = s.clone();
    w.angular_velocity = Vec3::new(0.5, 0.5, 0.0);
    checks.push((
        "ang_vel_xy at (0.5, 0.5)",
        compute_general_rewards(&w, &cfg).get("ang_vel_xy").unwrap(),
        -0.1,
    ));
    let mut f = s.clone();
    f.feet[1] = f.feet[0] + Vec3::new(0.0, 0.05, 0.0);
    checks.push((
        "feet 0.05 m apart",
        compute_general_rewards(&f, &cfg).get("feet_distance").unwrap(),
        -10.0,
    ));

    let mut v = s.clone();
    v.linear_velocity = Vec3::new(0.4, -0.1, 0.0);
    v.angular_velocity = Vec3::new(0.0, 0.0, 0.3);
    checks.push((
        "perfect velocity tracking",
        compute_velocity_rewards(&v, [0.4, -0.1], 0.3, &cfg).total(),
        1.5,
    ));
    checks.push((
        "lin tracking at squared error 0.25",
        compute_velocity_rewards(&v, [0.4, 0.4], 0.3, &cfg)
            .get("lin_vel_track")
            .unwrap(),
        (-1.0f64).exp(),
    ));

    let goal = |t: f64, pos: [f64; 2]| compute_goal_rewards(pos, 0.2, [1.0, 2.0], 0.2, t, &cfg);
    checks.push(("goal terms at t = 2 s", goal(2.0, [1.0, 2.0]).total(), 0.0));
    checks.push(("goal terms at t = 1 s", goal(1.0, [1.0, 2.0]).total(), 0.0));
    checks.push(("goal reached at t = 0.5 s", goal(0.5, [1.0, 2.0]).total(), 20.0));
    checks.push((
        "goal 2 m away at t = 0.5 s",
        goal(0.5, [1.0, 0.0]).get("pos_track").unwrap(),
        0.0,
    ));

    let regions = [PenaltyRegion {
        polygon: PATCH.to_vec(),
        weight: PATCH_WEIGHT,
    }];
    checks.push((
        "penalty at patch centroid",
        compute_penalty_region_reward([2.25, 0.0], &regions, &cfg),
        -5.0,
    ));
    checks.push((
        "penalty outside patch",
        compute_penalty_region_reward([0.0, 0.0], &regions, &cfg),
        0.0,
    ));

    let weights = [
        (cfg.ang_vel_xy, -0.2),
        (cfg.orientation, -0.5),
        (cfg.action_rate, -1.0),
        (cfg.pose_deviation, -0.5),
        (cfg.feet_distance, -10.0),
        (cfg.feet_phase, 5.0),
        (cfg.stumble, -3.0),
        (cfg.lin_vel_track, 1.0),
        (cfg.ang_vel_track, 0.5),
        (cfg.pos_track, 10.0),
        (cfg.yaw_track, 10.0),
    ];
    let weights_ok = weights.iter().all(|(a, b)| a == b);

    let tc = TerminationConfig::default();
    let mut fallen = s.clone();
    fallen.tilt = 1.5;
    let statuses_ok = check_termination(&s, 10, 0.0, 0.02, &tc) == EpisodeStatus::Running
        && check_termination(&fallen, 10, 0.0, 0.02, &tc) == EpisodeStatus::Terminated
        && check_termination(&s, 1000, 0.0, 0.02, &tc) == EpisodeStatus::Truncated;

    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| !((got - want).abs() <= REWARD_TOL))
        .map(|(n, got, want)| format!("{n}: {got} != {want}"))
        .collect();
    outcome(
        bad.is_empty() && weights_ok && statuses_ok,
        format!(
            "{} examples within {REWARD_TOL:.0e}, default weights literal: {weights_ok}, terminations: {statuses_ok}{}",
            checks.len() - bad.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!("; mismatches: {}", bad.join(", "))
            }
        ),
    )
}

fn motion_blur() -> Outcome {
    let scene = room_scene("room", 20_000, 7);
    let model = CameraModel::new(64, 48, 90.0);
    let r = Renderer::new(2, RenderOptions::default()).unwrap();
    let pose = look_at(Vector3::new(0.0, 0.0, 0.5), Vector3::new(3.0, 0.0, 0.0), Vector3::z());
    let still = r.render_one(&scene, &pose, &model).unwrap();
    let lin = Vec3::new(1.5, 0.8, 0.0);
    let ang = Vec3::new(0.0, 0.3, 2.0);
    let shutter = 0.02;
    let zero_v = render_with_motion_blur(
        &r,
        &scene,
        &pose,
        &model,
        Vec3::zeros(),
        Vec3::zeros(),
        shutter,
        MotionBlur::default(),
    )
    .unwrap();
    let k1 = render_with_motion_blur(
        &r,
        &scene,
        &pose,
        &model,
        lin,
        ang,
        shutter,
        MotionBlur {
            samples: 1,
            angular: true,
        },
    )
    .unwrap();
    let static_ok = zero_v == still && k1 == still;

    let blur = MotionBlur {
        samples: 4,
        angular: true,
    };
    let k4 = render_with_motion_blur(&r, &scene, &pose, &model, lin, ang, shutter, blur).unwrap();
    let poses = blur_poses(&pose, &lin, Some(&ang), &blur_times(shutter, 4));
    let frames: Vec<_> = poses.iter().map(|p| r.render_one(&scene, p, &model).unwrap()).collect();
    let mut err = 0.0f64;
    for i in 0..k4.rgb.len() {
        let mean = frames.iter().map(|f| f.rgb[i] as f64).sum::<f64>() / 4.0;
        err = err.max((k4.rgb[i] as f64 - mean).abs());
    }
    let moved = frames[0].rgb != frames[3].rgb;
    outcome(
        static_ok && err <= BLUR_TOL && moved,
        format!("zero-velocity and K=1 bit-exact: {static_ok}; K=4 vs mean of offset renders {err:.2e} (tol {BLUR_TOL:.0e})"),
    )
}

/// Distance from `p` to triangle `abc`: in-plane projection when it lands
/// inside, else the nearest edge.
fn oracle_distance2(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let n = (b - a).cross(&(c - a));
    let nn = n.norm_squared();
    let seg = |u: &Vec3, v: &Vec3| {
        let d = v - u;
        let t = ((p - u).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        (p - (u + d * t)).norm_squared()
    };
    let edges = seg(a, b).min(seg(b, c)).min(seg(c, a));
    if nn == 0.0 {
        return edges;
    }
    let h = (p - a).dot(&n);
    let q = p - n * (h / nn);
    let inside = [(a, b), (b, c), (c, a)]
        .iter()
        .all(|(u, v)| (*v - *u).cross(&(q - *u)).dot(&n) >= 0.0);
    if inside {
        h * h / nn
    } else {
        edges
    }
}

fn voxel_labels() -> Outcome {
    let grid = GridConfig::default();
    let dims = grid.dims().unwrap();
    let band2 = {
        let b = 0.5 * grid.cell * 3f64.sqrt();
        b * b
    };
    let mut mismatches = 0usize;
    let mut occupied = 0usize;
    for seed in 0..VOXEL_MESHES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.random_range(1..=VOXEL_MAX_TRIANGLES);
        let mut verts = Vec::new();
        let mut tris = Vec::new();
        for t in 0..n {
            let c = Vec3::new(
                rng.random_range(-0.3..1.9),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.4..0.7),
            );
            for _ in 0..3 {
                verts.push(
                    c + Vec3::new(
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                    ),
                );
            }
            tris.push([3 * t as u32, 3 * t as u32 + 1, 3 * t as u32 + 2]);
        }
        let mesh = CollisionMesh::new(verts.clone(), tris.clone()).unwrap();
        let position = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.35);
        let yaw = rng.random_range(-0.5..0.5);
        let label = voxelize_ground_truth(&mesh, &position, yaw, &grid).unwrap();
        for ix in 0..dims[0] {
            for iy in 0..dims[1] {
                for iz in 0..dims[2] {
                    let p = voxel_center(&grid, &position, yaw, [ix, iy, iz]);
                    let hit = tris.iter().any(|t| {
                        oracle_distance2(&p, &verts[t[0] as usize], &verts[t[1] as usize], &verts[t[2] as usize])
                            <= band2
                    });
                    occupied += hit as usize;
                    if hit != label.occupied(ix, iy, iz) {
                        mismatches += 1;
                    }
                }
            }
        }
    }

    // analytic fixtures
    let (v, t) = grid_plane(5.0, 10, 0.0);
    let plane = CollisionMesh::new(v, t).unwrap();
    let base = Vec3::new(0.0, 0.0, 0.35);
    let flat = voxelize_ground_truth(&plane, &base, 0.7, &grid).unwrap();
    let one_layer =
        (0..dims[0]).all(|ix| (0..dims[1]).all(|iy| (0..dims[2]).filter(|&iz| flat.occupied(ix, iy, iz)).count() == 1));
    let flat_ok = one_layer && flat.heights.iter().all(|&h| h.abs() < 1e-12);

    // 0.3 m step covering the far half of the box
    let (mut v, mut t) = grid_plane(5.0, 10, 0.0);
    let (bv, bt) = box_mesh([0.8, -2.0, 0.0], [3.0, 2.0, 0.3]);
    let off = v.len() as u32;
    v.extend(bv);
    t.extend(bt.iter().map(|f| f.map(|i| i + off)));
    let step_mesh = CollisionMesh::new(v, t).unwrap();
    let stepped = voxelize_ground_truth(&step_mesh, &base, 0.0, &grid).unwrap();
    let step_ok = (0..dims[0]).all(|ix| {
        let want = if ix >= 8 { 0.3 } else { 0.0 };
        (0..dims[1]).all(|iy| (stepped.height(ix, iy) - want).abs() < 1e-12)
    });
    outcome(
        mismatches == 0 && flat_ok && step_ok,
        format!(
            "{mismatches} occupancy mismatches over {VOXEL_MESHES} random meshes ({occupied} occupied voxels); \
             flat plane: {flat_ok}; step heights {{0, 0.3}}: {step_ok}"
        ),
    )
}

fn physics_sanity() -> Outcome {
    let cfg = PhysicsConfig::default();
    let scene = flat_scene("f", 10, 8.0, 0);
    let dt = 0.02;

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
    s.position.z += 100.0;
    let zero = vec![0.0; cfg.robot.n_joints];
    for _ in 0..50 {
        step_robot(&cfg, &mut s, &zero, &scene.mesh, scene.friction, dt);
    }
    let expect = -cfg.gravity * 1.0;
    let fall_err = ((s.linear_velocity.z - expect) / expect).abs();

    let mut r = spawn_state(
        &cfg,
        &scene,
        &Spawn {
            x: 0.3,
            y: -0.2,
            yaw: 0.4,
        },
    )
    .unwrap();
    let p0 = r.position;
    for _ in 0..100 {
        step_robot(&cfg, &mut r, &zero, &scene.mesh, scene.friction, dt);
    }
    let drift = (r.position - p0).norm();

    let scenes = vec![flat_scene("a", 10, 6.0, 1), room_scene("b", 10, 2)];
    let registry = register_scenes(scenes, 8).unwrap();
    let physics = Physics::new(cfg.clone()).unwrap();
    let spawn = |e: usize| Spawn {
        x: -0.8 + 0.2 * e as f64,
        y: 0.1 * e as f64 - 0.4,
        yaw: 0.3 * e as f64,
    };
    let mut batch = physics.spawn_batch(&registry, spawn).unwrap();
    let mut singles: Vec<RobotState> = batch.robots.clone();
    let j = cfg.robot.n_joints;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let mut exact = true;
    for _ in 0..200 {
        let actions: Vec<f64> = (0..8 * j).map(|_| rng.random_range(-0.3..0.3)).collect();
        pool.install(|| physics.step(&mut batch, &actions, &registry, dt))
            .unwrap();
        for (e, s) in singles.iter_mut().enumerate() {
            let sc = registry.scene_for_env(e).unwrap();
            step_robot(&cfg, s, &actions[e * j..(e + 1) * j], &sc.mesh, sc.friction, dt);
        }
        exact &= batch.robots == singles;
    }
    outcome(
        fall_err <= FREE_FALL_REL_TOL && drift < REST_DRIFT_MAX && exact,
        format!(
            "free fall v_z {:.4} vs {expect:.4} ({:.2e} rel, tol {FREE_FALL_REL_TOL}); rest drift {drift:.2e} m (max {REST_DRIFT_MAX:.0e}); \
             batch == single over 8 envs x 200 steps: {exact}",
            s.linear_velocity.z, fall_err
        ),
    )
}

/// Winding number of `poly` around `p`; boundary points are not special-cased.
fn winding_number(p: [f64; 2], poly: &[[f64; 2]]) -> i32 {
    let mut wn = 0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let side = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= p[1] {
            if b[1] > p[1] && side > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && side < 0.0 {
            wn -= 1;
        }
    }
    wn
}

fn penalty_region() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let k = rng.random_range(3..9);
    let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let (cx, cy, ax, ay) = (0.3, -0.2, 1.5, 0.8);
    let mut poly: Vec<[f64; 2]> = angles.iter().map(|t| [cx + ax * t.cos(), cy + ay * t.sin()]).collect();
    if rng.random_bool(0.5) {
        poly.reverse();
    }
    let mut agree = 0;
    let mut inside = 0;
    for _ in 0..POLYGON_POINTS {
        let p = [rng.random_range(-1.5..2.1), rng.random_range(-1.2..0.8)];
        let o = winding_number(p, &poly) != 0;
        inside += o as usize;
        agree += (o == point_in_convex_polygon(p, &poly)) as usize;
    }

    // straight walk from the spawn box across the patch
    let mut config = EngineConfig {
        workers: Some(1),
        ..EngineConfig::default()
    };
    config.sensor.width = 32;
    config.sensor.height = 24;
    let mut env = VecEnv::new(register_scenes(vec![room_scene("room", 2000, 4)], 1).unwrap(), config).unwrap();
    env.reset_env_at(
        0,
        Spawn {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
        },
    )
    .unwrap();
    env.set_command(
        0,
        splatgym_core::tasks::Command::Velocity {
            lin: [0.4, 0.0],
            yaw_rate: 0.0,
        },
    )
    .unwrap();
    let mut out = Vec::new();
    let opts = RolloutOptions {
        steps: 500,
        policy: ScriptedPolicy::Follower,
        seed: 0,
        frames: None,
    };
    rollout(&mut env, &opts, &mut out).unwrap();
    let (mut inside_steps, mut outside_steps, mut wrong) = (0, 0, 0);
    for line in String::from_utf8(out).unwrap().lines() {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        let x = r["position"][0].as_f64().unwrap();
        let y = r["position"][1].as_f64().unwrap();
        let term = r["terms"]["penalty_region"].as_f64().unwrap();
        let in_patch = (PATCH[0][0]..=PATCH[2][0]).contains(&x) && (PATCH[0][1]..=PATCH[2][1]).contains(&y);
        if in_patch {
            inside_steps += 1;
            wrong += !(term < 0.0) as usize;
        } else {
            outside_steps += 1;
            wrong += (term != 0.0) as usize;
        }
    }
    outcome(
        agree == POLYGON_POINTS && inside_steps > 0 && outside_steps > 0 && wrong == 0,
        format!(
            "{agree}/{POLYGON_POINTS} points agree with winding number ({inside} inside a {k}-gon); \
             walk: {inside_steps} steps inside, {outside_steps} outside, {wrong} wrong penalty terms"
        ),
    )
}
