use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tdoa_core::harness::{
    self, evaluate, read_resamples_csv, read_tracks_csv, run_experiment, save_observations,
    simulate, track_audio, train_tree, write_observations_csv, write_truth_csv, ExperimentConfig,
    MetricsReport, Preset, Variant,
};
use tdoa_core::scene::write_vectors_csv;

#[derive(Parser)]
#[command(name = "tdoa", version, about = "Manifold-constrained TDOA tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides the scene's seed.
    #[arg(long, env = "TDOA_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "TDOA_OUT")]
    out: Option<PathBuf>,
    /// Built-in scene to use when the config names no scene file.
    #[arg(long)]
    preset: Option<Preset>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize observations and ground truth for a scene.
    Simulate(Common),
    /// Build the manifold tree from the scene's training set.
    TrainTree {
        #[command(flatten)]
        common: Common,
        /// Also write the training set as CSV.
        #[arg(long)]
        export_training: bool,
    },
    /// Run tracker variants and write tracks, peaks, depths and metrics.
    Track {
        #[command(flatten)]
        common: Common,
        /// Comma-separated variants, e.g. PF-none,NH-root,NH-rand.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
        /// Trained tree (defaults to <out>/tree.txt when it exists).
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Cached observations to reuse.
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Track a multichannel recording instead of simulated data.
        #[arg(long)]
        wav: Option<PathBuf>,
    },
    /// Recompute metrics from a finished run's tracks.csv.
    Eval {
        /// Directory holding tracks.csv (and optionally resamples.csv).
        #[arg(long, env = "TDOA_OUT")]
        dir: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        delta: f64,
    },
    /// Simulate, train the tree, and run every variant with default settings.
    Demo {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(preset) = common.preset {
        cfg.preset = preset;
        cfg.scene_file = None;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<()> {
    let scene = cfg.scene()?;
    let frame_cfg = cfg.frame_config(&scene)?;
    let obs = simulate(&scene, &frame_cfg, &cfg.zscore)?;
    create_dir(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("scene.toml"), scene.to_toml_string())?;
    write_truth_csv(&cfg.out_dir.join("truth.csv"), &scene.frame_truths(&frame_cfg))?;
    save_observations(&cfg.out_dir.join("observations.json"), &obs)?;
    write_observations_csv(&cfg.out_dir.join(harness::PEAKS), &obs)?;
    println!(
        "simulated {} frames ({} pairs) into {}",
        obs.frames.len(),
        scene.array.dim(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn cmd_train_tree(cfg: &ExperimentConfig, export_training: bool) -> Result<PathBuf> {
    let scene = cfg.scene()?;
    let tree = train_tree(&scene, &cfg.tree)?;
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("tree.txt");
    tree.save(&path)?;
    if export_training {
        write_vectors_csv(&cfg.out_dir.join("training.csv"), &scene.training_set(scene.seed)?)?;
    }
    println!(
        "trained depth-{} tree ({} nodes) on {} vectors -> {}",
        tree.built_depth(),
        tree.nodes().len(),
        scene.training_count,
        path.display()
    );
    Ok(path)
}

fn print_report(report: &MetricsReport) {
    println!(
        "{:<10} {:>12} {:>12} {:>12}",
        "variant", "median_rmse", "within_delta", "resamples"
    );
    for v in &report.variants {
        println!(
            "{:<10} {:>12.3} {:>12.3} {:>12.2}",
            v.variant.to_string(),
            v.median_rmse,
            v.within_delta,
            v.mean_resamples
        );
    }
}

fn cmd_track(
    mut cfg: ExperimentConfig,
    variants: Option<Vec<Variant>>,
    tree: Option<PathBuf>,
    observations: Option<PathBuf>,
    wav: Option<PathBuf>,
) -> Result<()> {
    if let Some(v) = variants {
        cfg.variants = v;
    }
    if let Some(t) = tree {
        cfg.tree_file = Some(t);
    } else if cfg.tree_file.is_none() {
        let default = cfg.out_dir.join("tree.txt");
        if default.exists() {
            cfg.tree_file = Some(default);
        }
    }
    if let Some(o) = observations {
        cfg.observations_file = Some(o);
    } else if cfg.observations_file.is_none() && wav.is_none() {
        let cached = cfg.out_dir.join("observations.json");
        if cached.exists() {
            cfg.observations_file = Some(cached);
        }
    }

    if let Some(wav) = wav {
        let records = track_audio(&cfg, &wav)?;
        println!(
            "tracked {} frames of {} with {} variants -> {}",
            records.frames.len(),
            wav.display(),
            records.variants.len(),
            cfg.out_dir.display()
        );
        return Ok(());
    }
    let (records, report) = run_experiment(&cfg)?;
    match report {
        Some(r) => print_report(&r),
        None => println!("trajectory shorter than one frame; nothing tracked"),
    }
    println!("{} frames -> {}", records.frames.len(), cfg.out_dir.display());
    Ok(())
}

fn cmd_eval(dir: &Path, delta: f64) -> Result<()> {
    let tracks = dir.join(harness::TRACKS);
    if !tracks.exists() {
        bail!("{} not found; run `tdoa track` first", tracks.display());
    }
    let mut records = read_tracks_csv(&tracks)?;
    let resamples = dir.join(harness::RESAMPLES);
    if resamples.exists() {
        read_resamples_csv(&resamples, &mut records)?;
    }
    print_report(&evaluate(&records, delta)?);
    Ok(())
}

fn cmd_demo(mut cfg: ExperimentConfig, variants: Option<Vec<Variant>>) -> Result<()> {
    cfg.variants = variants.unwrap_or_else(|| {
        ["PF-none", "PF-root", "NH-none", "NH-root", "NH-1", "NH-2", "NH-rand"]
            .iter()
            .map(|v| v.parse().expect("built-in variant"))
            .collect()
    });
    cfg.observations_file = None;
    cmd_simulate(&cfg)?;
    cfg.tree_file = Some(cmd_train_tree(&cfg, false)?);
    let (_, report) = run_experiment(&cfg)?;
    if let Some(r) = report {
        print_report(&r);
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(common) => cmd_simulate(&load_config(&common)?),
        Command::TrainTree {
            common,
            export_training,
        } => cmd_train_tree(&load_config(&common)?, export_training).map(|_| ()),
        Command::Track {
            common,
            variants,
            tree,
            observations,
            wav,
        } => cmd_track(load_config(&common)?, variants, tree, observations, wav),
        Command::Eval { dir, delta } => cmd_eval(&dir, delta),
        Command::Demo { common, variants } => cmd_demo(load_config(&common)?, variants),
    }
}
