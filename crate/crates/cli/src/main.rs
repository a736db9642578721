//! `splatgym`: command-line client of the splatgym service. Without
//! `--server` it starts the service in-process on a loopback port.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splatgym_client::{Client, ClientError};
use splatgym_core::api::{
    BenchRequest, BlurRequest, ErrorKind, Overrides, RenderRequest, RolloutRequest, ValidateRequest,
};
use splatgym_core::bench::BenchSweep;
use splatgym_core::config::{default_workers, EngineConfig, WORKERS_ENV};
use splatgym_core::rollout::ScriptedPolicy;
use splatgym_core::synth::{flat_scene, room_scene, write_scene_set};
use splatgym_server::AppState;

#[derive(Parser, Debug)]
#[command(
    name = "splatgym",
    version,
    about = "Batched splat rendering for legged-robot simulation"
)]
struct Cli {
    /// Base URL of a running service; in-process when absent.
    #[arg(long, global = true)]
    server: Option<String>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Default worker threads per request.
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
    },
    /// Check every scene of a manifest.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        /// Write the reports as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one view of a scene to rgb.png and depth.png.
    Render(RenderArgs),
    /// Run scripted policies and record metrics (and frames).
    Rollout(RolloutArgs),
    /// Measure throughput over a sweep.
    Bench(BenchArgs),
    /// Write a synthetic scene set and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        splats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    scene: Option<String>,
    /// Camera position `x,y,z`.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    eye: [f64; 3],
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    target: [f64; 3],
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0,0,1")]
    up: [f64; 3],
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 480)]
    height: usize,
    #[arg(long, default_value_t = 90.0)]
    hfov: f32,
    /// Blur samples; needs `--velocity`.
    #[arg(long, default_value_t = 1)]
    blur_k: usize,
    /// Camera velocity `x,y,z` in m/s for motion blur.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    velocity: Option<[f64; 3]>,
    #[arg(long, default_value_t = 0.01)]
    shutter: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected x,y,z, got {} values", v.len()))
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 16)]
    envs: usize,
    #[arg(long, default_value_t = 500)]
    steps: u64,
    /// Render every n-th control step.
    #[arg(long)]
    render_every: Option<u32>,
    #[arg(long)]
    blur_k: Option<usize>,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// zero, follower or random.
    #[arg(long, default_value = "follower")]
    policy: ScriptedPolicy,
    /// Engine config TOML; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also dump rendered frames under `<out>/frames`.
    #[arg(long)]
    frames: bool,
    /// Output directory; metrics go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,16,64")]
    envs: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    steps: u64,
    #[arg(long, default_value_t = 5)]
    warmup: u64,
    #[arg(long, value_delimiter = ',', default_value = "5")]
    render_every: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    blur_k: Vec<usize>,
    #[arg(long, value_delimiter = ',', env = WORKERS_ENV)]
    workers: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for bench.ndjson.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit 1 for rejected inputs and failed validation, 2 for IO and usage.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let code = match &e {
            ClientError::Api { body, .. } => match body.kind {
                ErrorKind::Format | ErrorKind::Config | ErrorKind::Shape => 1,
                // a bad pose or image size is a usage mistake
                ErrorKind::InvalidArgument | ErrorKind::Io | ErrorKind::NotFound | ErrorKind::Internal => 2,
            },
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<splatgym_core::Error> for Failure {
    fn from(e: splatgym_core::Error) -> Self {
        match e {
            splatgym_core::Error::Io { .. } | splatgym_core::Error::Image(_) => Failure::io(e.to_string()),
            _ => Failure::invalid(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::io(format!("{}: {e}", path.display()))
}

/// Absolute path when the file exists here; otherwise left for the server
/// to resolve.
fn server_path(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn load_config(path: Option<&Path>) -> Result<Option<EngineConfig>, Failure> {
    path.map(EngineConfig::load).transpose().map_err(Failure::from)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

async fn connect(server: Option<String>) -> Result<Client, Failure> {
    match server {
        Some(url) => Ok(Client::new(url)),
        None => {
            let (addr, _) = splatgym_server::spawn(([127, 0, 0, 1], 0).into(), AppState::new(default_workers()))
                .await
                .map_err(|e| Failure::io(format!("cannot start embedded server: {e}")))?;
            Ok(Client::new(format!("http://{addr}")))
        }
    }
}

async fn run(cli: Cli) -> Result<(), Failure> {
    if let Cmd::Serve { addr, workers } = cli.command {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure::io(format!("cannot bind {addr}: {e}")))?;
        let workers = workers.unwrap_or_else(default_workers);
        eprintln!(
            "listening on http://{} ({workers} workers)",
            listener.local_addr().map_err(|e| Failure::io(e.to_string()))?
        );
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        return splatgym_server::serve(listener, AppState::new(workers), shutdown)
            .await
            .map_err(|e| Failure::io(e.to_string()));
    }
    if let Cmd::Synth { out, splats, seed } = &cli.command {
        let scenes = [
            flat_scene("flat", *splats, 4.0, *seed),
            room_scene("room", *splats, seed + 1),
        ];
        let manifest = write_scene_set(out, &scenes)?;
        println!("{}", manifest.display());
        return Ok(());
    }
    let client = connect(cli.server).await?;
    match cli.command {
        Cmd::Validate { manifest, out } => validate(&client, &manifest, out.as_deref()).await,
        Cmd::Render(a) => render(&client, a).await,
        Cmd::Rollout(a) => rollout(&client, a).await,
        Cmd::Bench(a) => bench(&client, a).await,
        Cmd::Serve { .. } | Cmd::Synth { .. } => unreachable!("handled above"),
    }
}

async fn validate(client: &Client, manifest: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let resp = client
        .validate(&ValidateRequest {
            manifest: server_path(manifest),
        })
        .await?;
    for r in &resp.reports {
        for c in &r.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            println!("{tag} {} {}: {}", r.scene_id, c.name, c.detail);
        }
    }
    if let Some(path) = out {
        let json = serde_json::to_vec_pretty(&resp.reports).expect("reports serialize");
        fs::write(path, json).map_err(io_err(path))?;
    }
    if resp.passed {
        Ok(())
    } else {
        let failed = resp.reports.iter().filter(|r| !r.passed()).count();
        Err(Failure::invalid(format!("{failed} scene(s) failed validation")))
    }
}

async fn render(client: &Client, a: RenderArgs) -> Result<(), Failure> {
    let blur = match (&a.velocity, a.blur_k) {
        (Some(v), k) => Some(BlurRequest {
            linear_velocity: *v,
            angular_velocity: [0.0; 3],
            shutter_time: a.shutter,
            samples: k,
        }),
        (None, 1) => None,
        (None, _) => return Err(Failure::io("--blur-k needs --velocity")),
    };
    let req = RenderRequest {
        manifest: server_path(&a.manifest),
        scene: a.scene,
        eye: a.eye,
        target: a.target,
        up: a.up,
        width: a.width,
        height: a.height,
        hfov_deg: a.hfov,
        options: Default::default(),
        blur,
    };
    // reject degenerate poses before any network round trip
    req.check_pose().map_err(|e| Failure::io(e.to_string()))?;
    let img = client.render(&req).await?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let rgb = a.out.join("rgb.png");
    fs::write(&rgb, &img.rgb_png).map_err(io_err(&rgb))?;
    let depth = a.out.join("depth.png");
    fs::write(&depth, &img.depth_png).map_err(io_err(&depth))?;
    println!(
        "{} {}x{} depth_max={:.3}m render={:.1}ms",
        img.scene_id, img.width, img.height, img.depth_max, img.render_ms
    );
    Ok(())
}

async fn rollout(client: &Client, a: RolloutArgs) -> Result<(), Failure> {
    let config = load_config(a.config.as_deref())?;
    let frames_dir = match (&a.out, a.frames) {
        (Some(out), true) => Some(server_path(out).join("frames")),
        (None, true) => return Err(Failure::io("--frames needs --out")),
        _ => None,
    };
    let req = RolloutRequest {
        manifest: server_path(&a.manifest),
        n_envs: a.envs,
        steps: a.steps,
        policy: a.policy,
        config,
        overrides: Overrides {
            render_every: a.render_every,
            blur_k: a.blur_k,
            workers: a.workers,
            seed: Some(a.seed),
        },
        frames_dir,
    };
    let mut sink: Box<dyn Write> = match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let p = dir.join("metrics.ndjson");
            Box::new(BufWriter::new(File::create(&p).map_err(io_err(&p))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let summary = client
        .rollout(&req, |line| {
            sink.write_all(line.as_bytes())?;
            sink.write_all(b"\n")
        })
        .await?;
    sink.flush().map_err(|e| Failure::io(e.to_string()))?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    if let Some(dir) = &a.out {
        let p = dir.join("summary.json");
        fs::write(&p, &json).map_err(io_err(&p))?;
    }
    eprintln!("{json}");
    Ok(())
}

async fn bench(client: &Client, a: BenchArgs) -> Result<(), Failure> {
    let mut config = load_config(a.config.as_deref())?.unwrap_or_default();
    config.seed = a.seed;
    let req = BenchRequest {
        manifest: server_path(&a.manifest),
        sweep: BenchSweep {
            n_envs: a.envs,
            render_every: a.render_every,
            blur_k: a.blur_k,
            workers: a.workers.unwrap_or_else(|| vec![default_workers()]),
            steps: a.steps,
            warmup: a.warmup,
        },
        config: Some(config),
    };
    let mut file = match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let p = dir.join("bench.ndjson");
            Some(BufWriter::new(File::create(&p).map_err(io_err(&p))?))
        }
        None => None,
    };
    println!(
        "{:>6} {:>6} {:>6} {:>7} {:>12} {:>12} {:>10}",
        "envs", "every", "blur", "workers", "steps/s", "renders/s", "wall_s"
    );
    client
        .bench(&req, |r| {
            println!(
                "{:>6} {:>6} {:>6} {:>7} {:>12.1} {:>12.1} {:>10.3}",
                r.n_envs, r.render_every, r.blur_k, r.workers, r.steps_per_second, r.renders_per_second, r.wall_seconds
            );
            if let Some(f) = file.as_mut() {
                serde_json::to_writer(&mut *f, r).map_err(io::Error::other)?;
                f.write_all(b"\n")?;
            }
            Ok(())
        })
        .await?;
    if let Some(mut f) = file {
        f.flush().map_err(|e| Failure::io(e.to_string()))?;
    }
    Ok(())
}
