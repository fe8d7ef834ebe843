use std::fs;
use std::path::Path;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, InitMode, Variant};
use super::metrics::{evaluate, MetricsReport};
use super::output::emit_csv;
use crate::error::{Error, Result};
use crate::filters::{pseudo_likelihood, FilterConfig, ScoringConfig, Tracker};
use crate::manifold::{build_tree, PdTree, TreeConfig};
use crate::rng::{derive_seed, domain};
use crate::scene::{synth_observation, Scene, TdoaVector};
use crate::signal::{audio_peaks, read_wav, zscore_peaks, FrameConfig, PeakSet, ZScoreConfig};

/// Peak sets of one frame, with the true delay vector when it is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub frame: usize,
    pub time: f64,
    pub truth: Option<TdoaVector>,
    pub peaks: Vec<PeakSet>,
}

/// The observation sequence shared by every variant of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub sample_rate_hz: f64,
    pub max_delay_samples: usize,
    pub frames: Vec<FrameObservation>,
}

impl Observations {
    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.peaks.len())
    }
}

/// Synthesizes peak sets for every frame of the scene's trajectory.
pub fn simulate(scene: &Scene, frame_cfg: &FrameConfig, zcfg: &ZScoreConfig) -> Result<Observations> {
    scene.validate()?;
    zcfg.validate()?;
    let frames = scene
        .frame_truths(frame_cfg)
        .into_iter()
        .map(|t| {
            let seed = derive_seed(scene.seed, domain::OBSERVATION, t.frame as u64);
            let corr = synth_observation(&t.tdoa, &scene.observation, frame_cfg.max_delay_samples, seed)?;
            Ok(FrameObservation {
                frame: t.frame,
                time: t.time,
                truth: Some(t.tdoa),
                peaks: corr.iter().map(|c| zscore_peaks(c, zcfg)).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Observations {
        sample_rate_hz: frame_cfg.sample_rate_hz,
        max_delay_samples: frame_cfg.max_delay_samples,
        frames,
    })
}

pub fn save_observations(path: &Path, obs: &Observations) -> Result<()> {
    let text = serde_json::to_string(obs).expect("observations serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_observations(path: &Path) -> Result<Observations> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

/// Builds the tree on the scene's training set.
pub fn train_tree(scene: &Scene, cfg: &TreeConfig) -> Result<PdTree> {
    let data = scene.training_set(scene.seed)?;
    build_tree(&data, cfg, derive_seed(scene.seed, domain::TREE, 0))
}

/// What one variant produced on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutput {
    pub prediction: TdoaVector,
    pub resampled: usize,
    /// Particle counts by birth depth; slot 0 is "never projected".
    pub depth_hist: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub time: f64,
    pub truth: Option<TdoaVector>,
    pub peaks: Vec<PeakSet>,
    /// One entry per variant, in [`TrackRecord::variants`] order.
    pub outputs: Vec<VariantOutput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub variants: Vec<Variant>,
    pub m: usize,
    /// Deepest tree level a histogram can report.
    pub max_depth: usize,
    pub frames: Vec<FrameRecord>,
    /// Mean wall-clock seconds per frame, per variant.
    pub seconds_per_frame: Vec<f64>,
}

fn initial_pool(
    mode: InitMode,
    training: &[TdoaVector],
    obs: &Observations,
    scoring: &ScoringConfig,
    m: usize,
) -> Vec<TdoaVector> {
    match (mode, obs.frames.first()) {
        (InitMode::Informed, Some(first)) => {
            let mut scored: Vec<(f64, usize)> = training
                .iter()
                .enumerate()
                .map(|(i, x)| (pseudo_likelihood(&first.peaks, x, scoring), i))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            scored
                .iter()
                .take(m)
                .map(|&(_, i)| training[i].clone())
                .collect()
        }
        _ => training.to_vec(),
    }
}

/// Runs every variant over the same observations with the same tracker seed.
/// Variants run on separate threads; results do not depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_variants(
    obs: &Observations,
    variants: &[Variant],
    filter: &FilterConfig,
    scoring: &ScoringConfig,
    init: InitMode,
    training: &[TdoaVector],
    tree: Option<&PdTree>,
    seed: u64,
) -> Result<TrackRecord> {
    let pool = initial_pool(init, training, obs, scoring, filter.m);
    let max_depth = tree.map_or(0, |t| t.config.depth);
    let tracker_seed = derive_seed(seed, domain::TRACKER, 0);

    let run_one = |variant: &Variant| -> Result<(Vec<VariantOutput>, f64)> {
        let cfg = FilterConfig {
            strategy: variant.strategy,
            rng_seed: tracker_seed,
            ..filter.clone()
        };
        let tree = if variant.strategy.uses_tree() { tree } else { None };
        let start = Instant::now();
        let mut tracker = Tracker::new(variant.kind, cfg, scoring.clone(), &pool, tree)?;
        let outputs = obs
            .frames
            .iter()
            .map(|f| {
                let report = tracker.step(&f.peaks, tree)?;
                Ok(VariantOutput {
                    prediction: report.prediction,
                    resampled: report.resampled,
                    depth_hist: tracker.depth_histogram(max_depth),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let secs = start.elapsed().as_secs_f64() / obs.frames.len().max(1) as f64;
        Ok((outputs, secs))
    };

    let results: Vec<Result<(Vec<VariantOutput>, f64)>> = thread::scope(|s| {
        let handles: Vec<_> = variants
            .iter()
            .map(|v| s.spawn(move || run_one(v)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("variant thread panicked"))
            .collect()
    });

    let mut per_variant = Vec::with_capacity(variants.len());
    let mut seconds_per_frame = Vec::with_capacity(variants.len());
    for r in results {
        let (outputs, secs) = r?;
        per_variant.push(outputs.into_iter());
        seconds_per_frame.push(secs);
    }
    let frames = obs
        .frames
        .iter()
        .map(|f| FrameRecord {
            frame: f.frame,
            time: f.time,
            truth: f.truth.clone(),
            peaks: f.peaks.clone(),
            outputs: per_variant
                .iter_mut()
                .map(|it| it.next().expect("one output per frame"))
                .collect(),
        })
        .collect();
    Ok(TrackRecord {
        variants: variants.to_vec(),
        m: filter.m,
        max_depth,
        frames,
        seconds_per_frame,
    })
}

fn load_tree_for(cfg: &ExperimentConfig) -> Result<Option<PdTree>> {
    if !cfg.needs_tree() {
        return Ok(None);
    }
    match &cfg.tree_file {
        Some(p) if p.exists() => Ok(Some(PdTree::load(p)?)),
        _ => Err(Error::MissingTree),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Full pipeline on simulated data: load or generate observations (cached in
/// the output directory), run every variant, score, and write CSV files.
///
/// A trajectory shorter than one frame yields an empty record and no report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(TrackRecord, Option<MetricsReport>)> {
    cfg.validate()?;
    let scene = cfg.scene()?;
    scene.validate()?;
    let frame_cfg = cfg.frame_config(&scene)?;
    let tree = load_tree_for(cfg)?;
    ensure_dir(&cfg.out_dir)?;

    let obs = match &cfg.observations_file {
        Some(p) => load_observations(p)?,
        None => {
            let obs = simulate(&scene, &frame_cfg, &cfg.zscore)?;
            save_observations(&cfg.out_dir.join("observations.json"), &obs)?;
            obs
        }
    };
    if obs.dim() != 0 && obs.dim() != scene.array.dim() {
        return Err(Error::InvalidInput(format!(
            "observations have {} pairs, the array has {}",
            obs.dim(),
            scene.array.dim()
        )));
    }
    let training = scene.training_set(scene.seed)?;
    let records = run_variants(
        &obs,
        &cfg.variants,
        &cfg.filter,
        &cfg.scoring,
        cfg.init,
        &training,
        tree.as_ref(),
        scene.seed,
    )?;
    if records.frames.is_empty() {
        return Ok((records, None));
    }
    let report = evaluate(&records, cfg.delta)?;
    emit_csv(&records, Some(&report), &cfg.out_dir)?;
    Ok((records, Some(report)))
}

/// Tracks recorded multichannel audio. There is no ground truth, so only
/// tracks, peaks and depth histograms are written.
pub fn track_audio(cfg: &ExperimentConfig, wav: &Path) -> Result<TrackRecord> {
    cfg.validate()?;
    let scene = cfg.scene()?;
    let audio = read_wav(wav)?;
    if audio.channels.len() != scene.array.len() {
        return Err(Error::InvalidInput(format!(
            "{} has {} channels, the array has {} microphones",
            wav.display(),
            audio.channels.len(),
            scene.array.len()
        )));
    }
    let mut frame_cfg = scene.frame_config(&cfg.frame);
    frame_cfg.sample_rate_hz = audio.sample_rate_hz;
    frame_cfg.max_delay_samples = scene.array.max_delay_samples(audio.sample_rate_hz);
    let peaks = audio_peaks(&audio.channels, &frame_cfg, &cfg.zscore)?;
    let obs = Observations {
        sample_rate_hz: audio.sample_rate_hz,
        max_delay_samples: frame_cfg.max_delay_samples,
        frames: peaks
            .into_iter()
            .enumerate()
            .map(|(frame, peaks)| FrameObservation {
                frame,
                time: frame_cfg.frame_time(frame),
                truth: None,
                peaks,
            })
            .collect(),
    };
    let tree = load_tree_for(cfg)?;
    ensure_dir(&cfg.out_dir)?;
    let mut training_scene = scene.clone();
    training_scene.sample_rate_hz = audio.sample_rate_hz;
    let training = training_scene.training_set(scene.seed)?;
    let records = run_variants(
        &obs,
        &cfg.variants,
        &cfg.filter,
        &cfg.scoring,
        cfg.init,
        &training,
        tree.as_ref(),
        scene.seed,
    )?;
    if !records.frames.is_empty() {
        emit_csv(&records, None, &cfg.out_dir)?;
    }
    Ok(records)
}
