//! SIR and NormalHedge particle filters over delay vectors.
//!
//! Both filters score particles with the same pseudo-likelihood: a background
//! level plus Gaussian-kernel-weighted z-scored correlation peaks. After any
//! particle is resampled it is jittered and then projected through the
//! manifold tree according to the configured [`ProjectionStrategy`].
//!
//! The NormalHedge filter treats particles as experts. Each keeps a discounted
//! cumulative regret `G`; weights are `(G+/c) exp(G+^2 / 2c)` with `c` solving
//! `mean(exp(G+^2 / 2c)) = e`, so every particle with `G <= 0` gets exactly
//! zero weight and only those particles are resampled.

use std::f64::consts::{E, PI};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{PdTree, ProjectionStrategy};
use crate::rng::{RngState, TrackerRng};
use crate::scene::TdoaVector;
use crate::signal::PeakSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    /// Background likelihood granted to every state.
    pub z0: f64,
    /// Variance of the peak kernel, samples^2.
    pub sigma_z_sq: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            z0: 1.0,
            sigma_z_sq: 10.0,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.z0 >= 0.0 && self.z0.is_finite()) {
            return Err(Error::InvalidConfig("z0 must be >= 0".into()));
        }
        if !(self.sigma_z_sq > 0.0 && self.sigma_z_sq.is_finite()) {
            return Err(Error::InvalidConfig("sigma_z_sq must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Number of particles.
    pub m: usize,
    /// Per-coordinate standard deviation of the resampling noise, in samples.
    /// A literal reading of the original setting, variance `4 / sample_rate`,
    /// gives 0.016 samples at 16 kHz; the default of 2 samples is what lets
    /// walking-speed sources be followed.
    pub resample_sigma: f64,
    /// Regret discount factor of the NormalHedge filter.
    pub alpha: f64,
    pub strategy: ProjectionStrategy,
    pub rng_seed: u64,
    /// Standard deviation of the noise added to initial states.
    pub init_jitter: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            m: 50,
            resample_sigma: 2.0,
            alpha: 0.05,
            strategy: ProjectionStrategy::None,
            rng_seed: 0,
            init_jitter: 0.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be >= 1".into()));
        }
        if !(self.resample_sigma >= 0.0 && self.resample_sigma.is_finite()) {
            return Err(Error::InvalidConfig("resample_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig("alpha must lie in [0, 1)".into()));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return Err(Error::InvalidConfig("init_jitter must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub state: TdoaVector,
    pub weight: f64,
    /// Discounted cumulative regret (NormalHedge only).
    pub regret: f64,
    /// Tree depth used the last time this particle was projected, -1 if never.
    pub birth_depth: i32,
}

/// `Z0 + sum_p sum_l Z_p(tau_l) N(tau_l; x_p, sigma_z^2)`.
pub fn pseudo_likelihood(peaks: &[PeakSet], x: &[f64], cfg: &ScoringConfig) -> f64 {
    let norm = 1.0 / (2.0 * PI * cfg.sigma_z_sq).sqrt();
    let inv_two_var = 0.5 / cfg.sigma_z_sq;
    let evidence: f64 = peaks
        .iter()
        .zip(x)
        .map(|(set, &xp)| {
            set.peaks
                .iter()
                .map(|p| {
                    let d = p.lag as f64 - xp;
                    p.score * norm * (-d * d * inv_two_var).exp()
                })
                .sum::<f64>()
        })
        .sum();
    cfg.z0 + evidence
}

/// Solves `(1/m) sum_i exp([G_i]+^2 / 2c) = e` for `c > 0` by bisection.
///
/// The left side falls strictly from infinity to 1 as `c` grows, so a root
/// exists iff some regret is positive.
pub fn solve_ct(regrets: &[f64]) -> Result<f64> {
    let m = regrets.len() as f64;
    let halves: Vec<f64> = regrets
        .iter()
        .map(|&g| if g > 0.0 { 0.5 * g * g } else { 0.0 })
        .collect();
    let top = halves.iter().copied().fold(0.0, f64::max);
    if regrets.is_empty() || top <= 0.0 || !top.is_finite() {
        return Err(Error::DegenerateEnsemble);
    }
    let excess = |c: f64| halves.iter().map(|&h| (h / c).exp()).sum::<f64>() / m - E;

    // every term is below e at `hi`, so the mean is too
    let mut hi = top + 1.0;
    let mut lo = 1e-12;
    while excess(lo) <= 0.0 {
        hi = lo;
        lo *= 1e-3;
        if lo == 0.0 {
            return Err(Error::DegenerateEnsemble);
        }
    }

    let mut best = (hi, excess(hi).abs());
    for _ in 0..200 {
        let mid = if hi > 4.0 * lo {
            (lo * hi).sqrt()
        } else {
            lo + 0.5 * (hi - lo)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        let f = excess(mid);
        if f.abs() < best.1 {
            best = (mid, f.abs());
        }
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best.0)
}

/// Normalized NormalHedge weights; zero exactly where `G <= 0`.
pub fn nh_weights(regrets: &[f64], c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!("c must be positive, got {c}")));
    }
    // log-domain: ln(G/c) + G^2 / 2c
    let logs: Vec<Option<f64>> = regrets
        .iter()
        .map(|&g| (g > 0.0).then(|| (g / c).ln() + g * g / (2.0 * c)))
        .collect();
    let Some(top) = logs.iter().flatten().copied().reduce(f64::max) else {
        return Err(Error::DegenerateEnsemble);
    };
    let raw: Vec<f64> = logs
        .iter()
        .map(|l| l.map_or(0.0, |l| (l - top).exp()))
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Scores every particle at its current state and updates the discounted
/// regrets in place: `G <- (1 - alpha) G + (L_i - g_A)` with
/// `g_A = sum_i w_i L_i` over the current weights. Returns `(g_A, scores)`.
pub fn nh_update_regrets(
    particles: &mut [Particle],
    peaks: &[PeakSet],
    scoring: &ScoringConfig,
    alpha: f64,
) -> (f64, Vec<f64>) {
    let scores: Vec<f64> = particles
        .iter()
        .map(|p| pseudo_likelihood(peaks, &p.state, scoring))
        .collect();
    let gain: f64 = particles.iter().zip(&scores).map(|(p, l)| p.weight * l).sum();
    for (p, l) in particles.iter_mut().zip(&scores) {
        p.regret = (1.0 - alpha) * p.regret + (l - gain);
    }
    (gain, scores)
}

/// What one filter step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub prediction: TdoaVector,
    /// Particles replaced by resampling this step.
    pub resampled: usize,
    /// The NormalHedge ensemble had no positive regret and was reset.
    pub reset: bool,
}

fn weighted_mean(particles: &[Particle]) -> TdoaVector {
    let dim = particles.first().map_or(0, |p| p.state.dim());
    let mut out = vec![0.0; dim];
    for p in particles {
        for (o, x) in out.iter_mut().zip(p.state.iter()) {
            *o += p.weight * x;
        }
    }
    out.into()
}

/// Jitters a copy of `source` and projects it onto the manifold model.
fn rebirth(
    source: &[f64],
    cfg: &FilterConfig,
    noise: Option<&Normal<f64>>,
    tree: Option<&PdTree>,
    rng: &mut TrackerRng,
) -> (TdoaVector, i32) {
    let jittered: Vec<f64> = match noise {
        Some(n) => source.iter().map(|x| x + n.sample(rng)).collect(),
        None => source.to_vec(),
    };
    match tree {
        Some(t) => t.denoise(&jittered, cfg.strategy, rng),
        None => (jittered.into(), -1),
    }
}

fn resample_noise(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma validated"))
}

fn check_tree(cfg: &FilterConfig, tree: Option<&PdTree>) -> Result<()> {
    cfg.strategy.validate(tree)
}

/// One SIR iteration: resample all `m` particles by weight, jitter and project
/// them, reweight by pseudo-likelihood, and predict the weighted mean.
pub fn sir_step(
    particles: &mut Vec<Particle>,
    peaks: &[PeakSet],
    cfg: &FilterConfig,
    scoring: &ScoringConfig,
    tree: Option<&PdTree>,
    rng: &mut TrackerRng,
) -> Result<StepReport> {
    check_tree(cfg, tree)?;
    if particles.is_empty() {
        return Err(Error::InvalidInput("empty particle set".into()));
    }
    let picker = WeightedIndex::new(particles.iter().map(|p| p.weight))
        .map_err(|e| Error::InvalidInput(format!("prior weights: {e}")))?;
    let noise = resample_noise(cfg.resample_sigma);

    let mut next: Vec<Particle> = Vec::with_capacity(cfg.m);
    for _ in 0..cfg.m {
        let src = &particles[picker.sample(rng)];
        let (state, birth_depth) = rebirth(&src.state, cfg, noise.as_ref(), tree, rng);
        next.push(Particle {
            state,
            weight: 0.0,
            regret: 0.0,
            birth_depth,
        });
    }

    let scores: Vec<f64> = next
        .iter()
        .map(|p| pseudo_likelihood(peaks, &p.state, scoring))
        .collect();
    let total: f64 = scores.iter().sum();
    let uniform = 1.0 / next.len() as f64;
    for (p, s) in next.iter_mut().zip(&scores) {
        p.weight = if total > 0.0 && total.is_finite() {
            s / total
        } else {
            uniform
        };
    }
    *particles = next;
    Ok(StepReport {
        prediction: weighted_mean(particles),
        resampled: cfg.m,
        reset: false,
    })
}

/// One NormalHedge iteration: update regrets and weights, predict, then
/// replace every zero-weight particle.
///
/// A replacement is drawn from the previous ensemble by its previous weights,
/// jittered, projected, and inherits the source particle's updated regret. Its
/// weight stays zero until the next update. Surviving particles are untouched.
pub fn nh_step(
    particles: &mut [Particle],
    peaks: &[PeakSet],
    cfg: &FilterConfig,
    scoring: &ScoringConfig,
    tree: Option<&PdTree>,
    rng: &mut TrackerRng,
) -> Result<StepReport> {
    check_tree(cfg, tree)?;
    if particles.is_empty() {
        return Err(Error::InvalidInput("empty particle set".into()));
    }
    let prior_weights: Vec<f64> = particles.iter().map(|p| p.weight).collect();
    let prior_states: Vec<TdoaVector> = particles.iter().map(|p| p.state.clone()).collect();

    nh_update_regrets(particles, peaks, scoring, cfg.alpha);
    let regrets: Vec<f64> = particles.iter().map(|p| p.regret).collect();

    let weights = match solve_ct(&regrets).and_then(|c| nh_weights(&regrets, c)) {
        Ok(w) => w,
        Err(Error::DegenerateEnsemble) => {
            let uniform = 1.0 / particles.len() as f64;
            for p in particles.iter_mut() {
                p.weight = uniform;
                p.regret = 0.0;
            }
            return Ok(StepReport {
                prediction: weighted_mean(particles),
                resampled: 0,
                reset: true,
            });
        }
        Err(e) => return Err(e),
    };
    for (p, w) in particles.iter_mut().zip(&weights) {
        p.weight = *w;
    }
    let prediction = weighted_mean(particles);

    let picker = WeightedIndex::new(&prior_weights)
        .map_err(|e| Error::InvalidInput(format!("prior weights: {e}")))?;
    let noise = resample_noise(cfg.resample_sigma);
    let mut resampled = 0;
    for i in 0..particles.len() {
        if weights[i] != 0.0 {
            continue;
        }
        let src = picker.sample(rng);
        let (state, birth_depth) = rebirth(&prior_states[src], cfg, noise.as_ref(), tree, rng);
        let p = &mut particles[i];
        p.state = state;
        p.regret = regrets[src];
        p.birth_depth = birth_depth;
        resampled += 1;
    }
    Ok(StepReport {
        prediction,
        resampled,
        reset: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterKind {
    #[serde(rename = "PF")]
    Sir,
    #[serde(rename = "NH")]
    NormalHedge,
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterKind::Sir => "PF",
            FilterKind::NormalHedge => "NH",
        })
    }
}

/// A particle filter together with its random stream and step counter.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub kind: FilterKind,
    pub config: FilterConfig,
    pub scoring: ScoringConfig,
    particles: Vec<Particle>,
    rng: TrackerRng,
    step: u64,
}

impl Tracker {
    /// Starts `m` equally weighted particles at states drawn uniformly from
    /// `pool` (typically the training set), optionally jittered, then projected.
    pub fn new(
        kind: FilterKind,
        config: FilterConfig,
        scoring: ScoringConfig,
        pool: &[TdoaVector],
        tree: Option<&PdTree>,
    ) -> Result<Self> {
        config.validate()?;
        scoring.validate()?;
        check_tree(&config, tree)?;
        if pool.is_empty() {
            return Err(Error::InvalidInput("initial state pool is empty".into()));
        }
        let mut rng = TrackerRng::seed_from_u64(config.rng_seed);
        let jitter = resample_noise(config.init_jitter);
        let weight = 1.0 / config.m as f64;
        let particles = (0..config.m)
            .map(|_| {
                let src = &pool[rng.random_range(0..pool.len())];
                let (state, birth_depth) = rebirth(src, &config, jitter.as_ref(), tree, &mut rng);
                Particle {
                    state,
                    weight,
                    regret: 0.0,
                    birth_depth,
                }
            })
            .collect();
        Ok(Self {
            kind,
            config,
            scoring,
            particles,
            rng,
            step: 0,
        })
    }

    /// Wraps an explicit particle set, e.g. for controlled experiments.
    pub fn from_particles(
        kind: FilterKind,
        config: FilterConfig,
        scoring: ScoringConfig,
        particles: Vec<Particle>,
    ) -> Result<Self> {
        config.validate()?;
        scoring.validate()?;
        if particles.is_empty() {
            return Err(Error::InvalidInput("empty particle set".into()));
        }
        let rng = TrackerRng::seed_from_u64(config.rng_seed);
        Ok(Self {
            kind,
            config,
            scoring,
            particles,
            rng,
            step: 0,
        })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, peaks: &[PeakSet], tree: Option<&PdTree>) -> Result<StepReport> {
        let report = match self.kind {
            FilterKind::Sir => sir_step(
                &mut self.particles,
                peaks,
                &self.config,
                &self.scoring,
                tree,
                &mut self.rng,
            ),
            FilterKind::NormalHedge => nh_step(
                &mut self.particles,
                peaks,
                &self.config,
                &self.scoring,
                tree,
                &mut self.rng,
            ),
        }?;
        self.step += 1;
        Ok(report)
    }

    /// Particle counts per birth depth; slot 0 counts never-projected
    /// particles (depth -1), slot `d + 1` counts depth `d`.
    pub fn depth_histogram(&self, max_depth: usize) -> Vec<usize> {
        let mut hist = vec![0; max_depth + 2];
        for p in &self.particles {
            let slot = (p.birth_depth + 1).clamp(0, max_depth as i32 + 1) as usize;
            hist[slot] += 1;
        }
        hist
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: self.kind,
            config: self.config.clone(),
            scoring: self.scoring.clone(),
            step: self.step,
            particles: self.particles.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn restore(cp: Checkpoint) -> Result<Self> {
        let rng = cp
            .rng
            .restore()
            .map_err(|e| Error::parse("checkpoint rng", e))?;
        Ok(Self {
            kind: cp.kind,
            config: cp.config,
            scoring: cp.scoring,
            particles: cp.particles,
            rng,
            step: cp.step,
        })
    }
}

/// Complete tracker state; reloading it resumes the run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: FilterKind,
    pub config: FilterConfig,
    pub scoring: ScoringConfig,
    pub step: u64,
    pub particles: Vec<Particle>,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e))
    }
}
