use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use atlas_core::codec::read_basis;
use atlas_core::hierarchy::top_k_retrieve;
use atlas_core::mission::dataset::{write_dataset, Dataset};
use atlas_core::mission::scene::Scene;
use atlas_core::mission::{replay_dataset, resolve_task, run_mission, MissionConfig, TaskSpec, Verdict};
use atlas_core::splat::render;
use atlas_core::submap::SubmapStore;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "atlas", version, about = "Semantic Gaussian mapping and hierarchical planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML mission config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Feature-corpus file whose first row is the task embedding.
    #[arg(long)]
    task_embedding: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated mission and write report, traces and the final map.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Rebuild a map from a recorded dataset.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; overrides the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the k most task-relevant hierarchy nodes of a saved map.
    Query {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        task_embedding: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Render a saved map from a robot pose into PPM color and PGM depth.
    Render {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        map: PathBuf,
        /// Robot pose `x,y,theta`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        pose: Vec<f64>,
        #[arg(long, default_value = "render")]
        out: PathBuf,
    },
    /// Write the synthetic scene's survey as a recorded dataset.
    SceneGen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<MissionConfig> {
    let mut cfg = match path {
        Some(p) => MissionConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => MissionConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_common(c: &Common) -> Result<MissionConfig> {
    let mut cfg = load_config(c.config.as_deref(), c.seed)?;
    if let Some(p) = &c.task_embedding {
        cfg.task.embedding = Some(p.clone());
    }
    Ok(cfg)
}

fn run(common: &Common, out: &Path) -> Result<Verdict> {
    let cfg = apply_common(common)?;
    let output = run_mission(&cfg)?;
    output.write(out)?;
    let r = &output.report;
    println!(
        "{:?}: {} (PL {:.2} m, SP {:.2} m, ratio {:.3})",
        r.verdict, r.reason, r.path_length, r.shortest_path, r.competitive_ratio
    );
    Ok(r.verdict)
}

fn replay(common: &Common, dataset: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = apply_common(common)?;
    let dir = dataset
        .map(Path::to_path_buf)
        .or_else(|| cfg.dataset.clone())
        .context("no dataset given")?;
    let spec = if cfg.task.embedding.is_some() {
        cfg.task.clone()
    } else {
        let label = cfg.task.label.as_deref().context("task needs a label or an embedding")?;
        TaskSpec {
            embedding: Some(Dataset::open(&dir)?.task_path(label)),
            ..cfg.task.clone()
        }
    };
    let task = resolve_task(&spec, None)?;
    let (store, summary) = replay_dataset(&cfg, &dir, task)?;
    fs::create_dir_all(out)?;
    store.save(&out.join("map.atlm"))?;
    let utilities: Vec<_> = summary
        .submap_utilities
        .iter()
        .map(|(id, u)| json!({"submap": id, "utility": u}))
        .collect();
    let report = json!({
        "frames": summary.frames,
        "submaps": summary.submaps,
        "global_count": summary.global_count,
        "resident_count": summary.resident_count,
        "submap_utilities": utilities,
    });
    let text = serde_json::to_string_pretty(&report)?;
    fs::write(out.join("replay.json"), format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

fn query(map: &Path, basis: &Path, task_embedding: &Path, k: usize) -> Result<()> {
    let store = SubmapStore::load(map)?;
    let basis = read_basis(basis)?;
    let spec = TaskSpec {
        embedding: Some(task_embedding.to_path_buf()),
        ..TaskSpec::default()
    };
    let task = resolve_task(&spec, None)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for r in top_k_retrieve(&store, &task, &basis, k)? {
        let line = json!({
            "submap": r.submap,
            "node": r.node_index,
            "level": format!("{:?}", r.level).to_lowercase(),
            "centroid": [r.centroid_world.x, r.centroid_world.y, r.centroid_world.z],
            "size": r.size,
            "utility": r.utility,
        });
        writeln!(lock, "{line}")?;
    }
    Ok(())
}

fn render_map(config: Option<&Path>, map: &Path, pose: &[f64], out: &Path) -> Result<()> {
    let [x, y, theta] = pose else {
        bail!("--pose expects x,y,theta");
    };
    let cfg = load_config(config, None)?;
    let store = SubmapStore::load(map)?;
    let points = store.export_world()?;
    let cam = &cfg.scene.camera;
    let pose = atlas_core::geometry::camera_pose(*x, *y, cfg.scene.camera_height, *theta);
    let img = render(&points, cam, &pose);
    fs::create_dir_all(out)?;

    let mut ppm = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for c in &img.color {
        ppm.extend(c.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    fs::write(out.join("color.ppm"), ppm)?;

    let mut pgm = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    pgm.extend(
        img.depth
            .iter()
            .map(|d| ((d / cam.max_depth).clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(out.join("depth.pgm"), pgm)?;
    println!("wrote {}x{} render to {}", img.width, img.height, out.display());
    Ok(())
}

fn scene_gen(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let scene = Scene::build(&cfg.scene, cfg.seed)?;
    let poses: Vec<_> = cfg
        .scene
        .survey
        .iter()
        .map(|&[x, y, t]| scene.camera_pose(x, y, t))
        .collect();
    let meta = write_dataset(out, &scene, &poses)?;
    println!("wrote {} frames to {}", meta.frames, out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run { common, out } => run(common, out).map(|v| v == Verdict::Success),
        Command::Replay { common, dataset, out } => replay(common, dataset.as_deref(), out).map(|_| true),
        Command::Query { map, basis, task_embedding, k } => {
            query(map, basis, task_embedding, *k).map(|_| true)
        }
        Command::Render { config, map, pose, out } => {
            render_map(config.as_deref(), map, pose, out).map(|_| true)
        }
        Command::SceneGen { config, seed, out } => scene_gen(config.as_deref(), *seed, out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
