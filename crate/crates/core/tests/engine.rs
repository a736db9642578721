use splatgym_core::assets::register_scenes;
use splatgym_core::config::EngineConfig;
use splatgym_core::engine::VecEnv;
use splatgym_core::physics::EpisodeStatus;
use splatgym_core::rollout::{rollout, RolloutOptions, ScriptedPolicy};
use splatgym_core::synth::{flat_scene, room_scene, write_scene_set};
use splatgym_core::tasks::{proprio_dim, write_proprio, Command};
use splatgym_core::Error;

fn small_config() -> EngineConfig {
    let mut c = EngineConfig {
        workers: Some(2),
        ..EngineConfig::default()
    };
    c.sensor.width = 32;
    c.sensor.height = 24;
    c
}

fn env(n: usize, config: EngineConfig) -> VecEnv {
    let scenes = vec![flat_scene("flat", 3000, 4.0, 1), room_scene("room", 3000, 2)];
    VecEnv::new(register_scenes(scenes, n).unwrap(), config).unwrap()
}

#[test]
fn buffers_have_declared_shapes() {
    let e = env(4, small_config());
    let (h, w) = e.image_size();
    assert_eq!((h, w), (24, 32));
    assert_eq!(e.rgb().len(), 4 * h * w * 3);
    assert_eq!(e.depth().len(), 4 * h * w);
    assert_eq!(e.proprio().len(), 4 * proprio_dim(12));
    assert_eq!(e.rewards().len(), 4);
    assert_eq!(e.dones().len(), 4);
    assert_eq!(e.commands().len(), 16);
    // step 0 is rendered for every environment
    assert!(e.rendered().iter().all(|&r| r));
    assert!(e.rgb().iter().any(|&v| v > 0));
}

#[test]
fn wrong_action_shape_leaves_state_untouched() {
    let mut e = env(2, small_config());
    let before = e.batch().clone();
    let rgb = e.rgb().to_vec();
    let err = e.step(&[0.0; 11]).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    assert_eq!(e.batch(), &before);
    assert_eq!(e.rgb(), &rgb[..]);
    assert_eq!(e.info().step, 0);
}

#[test]
fn frames_are_held_between_renders() {
    let mut e = env(2, small_config());
    let a = vec![0.2f32; 24];
    let frame0 = e.rgb().to_vec();
    for k in 1..=5u64 {
        e.step(&a).unwrap();
        let obs = e.observation(0).unwrap();
        if k < 5 {
            assert_eq!(e.rgb(), &frame0[..], "step {k}");
            assert_eq!(obs.frame_step, 0);
            assert!(!e.rendered()[0]);
        } else {
            assert!(e.rendered()[0]);
            assert_eq!(obs.frame_step, 5);
            assert_ne!(e.rgb(), &frame0[..]);
        }
    }
}

#[test]
fn proprio_packs_state_fields() {
    let mut e = env(3, small_config());
    e.step(&[0.1f32; 36]).unwrap();
    let d = e.proprio_dim();
    for i in 0..3 {
        let mut expect = vec![0.0f32; d];
        write_proprio(e.state(i).unwrap(), &mut expect);
        assert_eq!(&e.proprio()[i * d..(i + 1) * d], &expect[..]);
        let s = e.state(i).unwrap();
        let obs = e.observation(i).unwrap();
        assert_eq!(obs.joint_positions, s.joint_positions);
        assert_eq!(obs.tilt, s.tilt);
        assert_eq!(obs.phase, s.phase);
    }
}

#[test]
fn same_seed_same_trajectory() {
    let run = |seed: u64| {
        let mut c = small_config();
        c.seed = seed;
        let mut e = env(3, c);
        let mut out = Vec::new();
        let opts = RolloutOptions {
            steps: 30,
            policy: ScriptedPolicy::Random,
            seed,
            frames: None,
        };
        rollout(&mut e, &opts, &mut out).unwrap();
        (out, e.rgb().to_vec())
    };
    let a = run(5);
    assert_eq!(a, run(5));
    assert_ne!(a.0, run(6).0);
}

#[test]
fn worker_count_does_not_change_results() {
    let run = |workers: usize| {
        let mut c = small_config();
        c.workers = Some(workers);
        let mut e = env(4, c);
        let mut out = Vec::new();
        let opts = RolloutOptions {
            steps: 12,
            policy: ScriptedPolicy::Follower,
            seed: 0,
            frames: None,
        };
        rollout(&mut e, &opts, &mut out).unwrap();
        (out, e.rgb().to_vec(), e.depth().to_vec())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn done_env_resets_and_flags_done_the_same_step() {
    let mut c = small_config();
    c.termination.episode_seconds = 0.1; // five steps
    let mut e = env(2, c);
    let a = vec![0.0f32; 24];
    for k in 1..=5 {
        let info = e.step(&a).unwrap().clone();
        let done = k == 5;
        assert_eq!(e.dones(), &[done, done]);
        if done {
            assert!(info.envs.iter().all(|r| r.status == EpisodeStatus::Truncated));
            assert_eq!(e.batch().steps, vec![0, 0]);
            assert!(e.rendered().iter().all(|&r| r));
        }
    }
}

#[test]
fn nan_action_faults_and_resets_only_that_env() {
    let mut e = env(2, small_config());
    let mut a = vec![0.0f32; 24];
    a[3] = f32::NAN;
    let info = e.step(&a).unwrap().clone();
    assert_eq!(info.envs[0].status, EpisodeStatus::Fault);
    assert_eq!(info.envs[0].reward, 0.0);
    assert_eq!(info.envs[1].status, EpisodeStatus::Running);
    assert_eq!(e.dones(), &[true, false]);
    assert!(e.state(0).unwrap().is_finite());
    assert_eq!(e.batch().steps, vec![0, 1]);
    e.step(&[0.0; 24]).unwrap();
}

#[test]
fn follower_tracks_velocity_commands() {
    let mut c = small_config();
    c.sensor.camera_rate = 1;
    let mut e = env(2, c);
    for i in 0..2 {
        e.set_command(
            i,
            Command::Velocity {
                lin: [0.3, 0.0],
                yaw_rate: 0.0,
            },
        )
        .unwrap();
    }
    let mut sink = Vec::new();
    let opts = RolloutOptions {
        steps: 250,
        policy: ScriptedPolicy::Follower,
        seed: 0,
        frames: None,
    };
    rollout(&mut e, &opts, &mut sink).unwrap();
    let last: Vec<serde_json::Value> = String::from_utf8(sink)
        .unwrap()
        .lines()
        .rev()
        .take(2)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for r in last {
        let lin = r["terms"]["lin_vel_track"].as_f64().unwrap();
        assert!(lin > 0.9, "tracking term {lin}");
    }
}

#[test]
fn make_env_from_manifest_files() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_scene_set(dir.path(), &[flat_scene("a", 500, 3.0, 3)]).unwrap();
    let e = splatgym_core::engine::make_env(&manifest, 2, small_config()).unwrap();
    assert_eq!(e.n_envs(), 2);
    assert!(splatgym_core::engine::make_env(dir.path().join("missing.toml"), 2, small_config()).is_err());
}

#[test]
fn voxel_label_for_env() {
    let e = env(1, small_config());
    let l = e.voxel_label(0).unwrap();
    assert_eq!(l.dims, [16, 10, 8]);
    // flat floor straddled by the box: one occupied layer per column
    assert_eq!(l.occupied_count(), 160);
    assert!(l.heights.iter().all(|&h| h.abs() < 1e-9));
}
