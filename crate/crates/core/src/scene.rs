//! Synthetic ground truth: array geometry, source trajectories, ideal delay
//! vectors and correlation-space observations.
//!
//! Delays are expressed in samples at the scene sample rate throughout.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::{canonical_pairs, mics_for_pairs, pair_count, pair_index};
use crate::rng::{derive_seed, domain};
use crate::signal::{FrameConfig, PhatCorrelation};

pub type Point3 = [f64; 3];

fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Vector of pairwise delays in canonical pair order, in samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TdoaVector(pub Vec<f64>);

impl TdoaVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for TdoaVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::DerefMut for TdoaVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for TdoaVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

fn default_speed_of_sound() -> f64 {
    343.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicArray {
    pub positions: Vec<Point3>,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
}

impl MicArray {
    pub fn new(positions: Vec<Point3>, speed_of_sound: f64) -> Result<Self> {
        let array = Self {
            positions,
            speed_of_sound,
        };
        array.validate()?;
        Ok(array)
    }

    /// Four microphones on the corners of a wall-mounted display plus three on
    /// the ceiling of a 10 x 13 x 5 m room.
    pub fn display_room() -> Self {
        Self {
            positions: vec![
                [4.0, 0.0, 1.0],
                [6.0, 0.0, 1.0],
                [4.0, 0.0, 2.2],
                [6.0, 0.0, 2.2],
                [2.5, 4.0, 5.0],
                [7.5, 4.0, 5.0],
                [5.0, 9.0, 5.0],
            ],
            speed_of_sound: 343.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() < 2 {
            return Err(Error::InvalidConfig("array needs at least two microphones".into()));
        }
        if !(self.speed_of_sound > 0.0 && self.speed_of_sound.is_finite()) {
            return Err(Error::InvalidConfig("speed of sound must be positive".into()));
        }
        if self.positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("microphone positions must be finite".into()));
        }
        for (a, pa) in self.positions.iter().enumerate() {
            for pb in &self.positions[a + 1..] {
                if distance(pa, pb) == 0.0 {
                    return Err(Error::InvalidConfig("microphone positions must be distinct".into()));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Dimension of the delay vector, `N(N-1)/2`.
    pub fn dim(&self) -> usize {
        pair_count(self.len())
    }

    pub fn max_pair_distance(&self) -> f64 {
        canonical_pairs(self.len())
            .iter()
            .map(|p| distance(&self.positions[p.i], &self.positions[p.j]))
            .fold(0.0, f64::max)
    }

    /// Largest physically possible delay, `ceil(rate * max_distance / c)`.
    pub fn max_delay_samples(&self, sample_rate_hz: f64) -> usize {
        (sample_rate_hz * self.max_pair_distance() / self.speed_of_sound).ceil() as usize
    }
}

/// Delay of arrival at `mic_i` relative to `mic_j`, in samples.
pub fn pair_delay(source: &Point3, mic_i: &Point3, mic_j: &Point3, speed_of_sound: f64, sample_rate_hz: f64) -> f64 {
    (distance(mic_i, source) - distance(mic_j, source)) / speed_of_sound * sample_rate_hz
}

/// Ideal delays for a source at `source`: `(|m_i - s| - |m_j - s|) / c * rate`.
pub fn tdoa_of(source: &Point3, array: &MicArray, sample_rate_hz: f64) -> TdoaVector {
    let scale = sample_rate_hz / array.speed_of_sound;
    let ranges: Vec<f64> = array.positions.iter().map(|m| distance(m, source)).collect();
    canonical_pairs(array.len())
        .iter()
        .map(|p| (ranges[p.i] - ranges[p.j]) * scale)
        .collect::<Vec<_>>()
        .into()
}

/// Largest violation of `d(i,j) + d(j,k) - d(i,k) = 0` over all triples.
pub fn worst_triangle_residual(delays: &[f64]) -> Option<f64> {
    let n = mics_for_pairs(delays.len())?;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let r = delays[pair_index(i, j, n)] + delays[pair_index(j, k, n)]
                    - delays[pair_index(i, k, n)];
                worst = worst.max(r.abs());
            }
        }
    }
    Some(worst)
}

/// Drops vectors whose worst triangle residual exceeds `tolerance` samples.
pub fn remove_outliers(vectors: Vec<TdoaVector>, tolerance: f64) -> Vec<TdoaVector> {
    vectors
        .into_iter()
        .filter(|v| worst_triangle_residual(v).is_some_and(|r| r <= tolerance))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub position: Point3,
}

/// Piecewise-linear source path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Waypoint>) -> Result<Self> {
        let traj = Self { waypoints };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::InvalidConfig("trajectory has no waypoints".into()));
        }
        if self
            .waypoints
            .iter()
            .any(|w| !w.t.is_finite() || w.position.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidConfig("trajectory contains non-finite values".into()));
        }
        if self.waypoints.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::InvalidConfig(
                "trajectory timestamps must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints.first().map_or(0.0, |w| w.t)
    }

    pub fn end_time(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.t)
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Position at time `t` (absolute), clamped to the end points.
    pub fn position_at(&self, t: f64) -> Point3 {
        let first = self.waypoints[0];
        let last = self.waypoints[self.waypoints.len() - 1];
        if t <= first.t {
            return first.position;
        }
        if t >= last.t {
            return last.position;
        }
        let seg = self.waypoints.partition_point(|w| w.t <= t);
        let (a, b) = (self.waypoints[seg - 1], self.waypoints[seg]);
        let u = (t - a.t) / (b.t - a.t);
        std::array::from_fn(|k| a.position[k] + u * (b.position[k] - a.position[k]))
    }
}

/// Positions at the given times (seconds from the trajectory start), clamped
/// to the trajectory span.
pub fn sample_trajectory(traj: &Trajectory, frame_times: &[f64]) -> Vec<Point3> {
    let t0 = traj.start_time();
    frame_times.iter().map(|&t| traj.position_at(t0 + t)).collect()
}

/// Axis-aligned box in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: Point3,
    pub max: Point3,
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        if (0..3).any(|k| !(self.min[k] <= self.max[k]) || !self.min[k].is_finite() || !self.max[k].is_finite()) {
            return Err(Error::InvalidConfig("region min must not exceed max".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point3 {
        std::array::from_fn(|k| self.min[k] + rng.random::<f64>() * (self.max[k] - self.min[k]))
    }
}

/// Stochastic stand-in for measured correlation series: a Gaussian floor, the
/// true peak, and Poisson-many spurious peaks at uniformly random lags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationModel {
    pub true_peak_amp: f64,
    /// Expected spurious peaks per pair per frame.
    pub spurious_rate: f64,
    pub spurious_amp_range: (f64, f64),
    /// Probability that the true peak is absent from a pair's series.
    pub miss_prob: f64,
    pub noise_floor_sigma: f64,
}

impl Default for ObservationModel {
    fn default() -> Self {
        Self {
            true_peak_amp: 1.0,
            spurious_rate: 1.0,
            spurious_amp_range: (0.3, 0.9),
            miss_prob: 0.05,
            noise_floor_sigma: 0.05,
        }
    }
}

impl ObservationModel {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.spurious_amp_range;
        if !(self.true_peak_amp > 0.0) || !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidConfig("peak amplitudes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.miss_prob) {
            return Err(Error::InvalidConfig("miss_prob must lie in [0, 1]".into()));
        }
        if !(self.spurious_rate >= 0.0 && self.spurious_rate.is_finite()) {
            return Err(Error::InvalidConfig("spurious_rate must be >= 0".into()));
        }
        if !(self.noise_floor_sigma >= 0.0 && self.noise_floor_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise_floor_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// One synthetic frame with the bookkeeping needed to audit it.
#[derive(Debug, Clone)]
pub struct SyntheticObservation {
    pub correlations: Vec<PhatCorrelation>,
    pub spurious_counts: Vec<usize>,
    pub missed: Vec<bool>,
}

/// Correlation series for every pair, deterministic in `seed`.
pub fn synth_observation(
    truth: &TdoaVector,
    model: &ObservationModel,
    max_delay: usize,
    seed: u64,
) -> Result<Vec<PhatCorrelation>> {
    Ok(synth_observation_detailed(truth, model, max_delay, seed)?.correlations)
}

pub fn synth_observation_detailed(
    truth: &TdoaVector,
    model: &ObservationModel,
    max_delay: usize,
    seed: u64,
) -> Result<SyntheticObservation> {
    model.validate()?;
    let n_mics = mics_for_pairs(truth.dim())
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a pair count", truth.dim())))?;
    if max_delay == 0 {
        return Err(Error::InvalidInput("max_delay must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = Normal::new(0.0, model.noise_floor_sigma).expect("sigma validated");
    let spurious = (model.spurious_rate > 0.0)
        .then(|| Poisson::new(model.spurious_rate).expect("rate validated"));
    let m = max_delay as i64;
    let len = 2 * max_delay + 1;
    let (amp_lo, amp_hi) = model.spurious_amp_range;

    let mut out = SyntheticObservation {
        correlations: Vec::with_capacity(truth.dim()),
        spurious_counts: Vec::with_capacity(truth.dim()),
        missed: Vec::with_capacity(truth.dim()),
    };
    for (pair, &delay) in canonical_pairs(n_mics).into_iter().zip(truth.iter()) {
        let mut values: Vec<f64> = if model.noise_floor_sigma > 0.0 {
            (0..len).map(|_| floor.sample(&mut rng)).collect()
        } else {
            vec![0.0; len]
        };
        let missed = rng.random::<f64>() < model.miss_prob;
        if !missed {
            let lag = (delay.round() as i64).clamp(-m, m);
            values[(lag + m) as usize] += model.true_peak_amp;
        }
        let count = spurious.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..count {
            let lag = rng.random_range(-m..=m);
            let amp = if amp_hi > amp_lo {
                rng.random_range(amp_lo..amp_hi)
            } else {
                amp_lo
            };
            values[(lag + m) as usize] += amp;
        }
        out.correlations.push(PhatCorrelation::new(pair, max_delay, values)?);
        out.spurious_counts.push(count);
        out.missed.push(missed);
    }
    Ok(out)
}

/// Ideal delay vectors for `n` sources drawn uniformly in `region`.
pub fn generate_training_set(
    array: &MicArray,
    region: &Region,
    n: usize,
    sample_rate_hz: f64,
    seed: u64,
) -> Result<Vec<TdoaVector>> {
    array.validate()?;
    region.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("training set size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| tdoa_of(&region.sample(&mut rng), array, sample_rate_hz))
        .collect())
}

/// Everything needed to synthesize one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub sample_rate_hz: f64,
    pub array: MicArray,
    pub room: Region,
    pub training_region: Region,
    pub training_count: usize,
    pub trajectory: Trajectory,
    #[serde(default)]
    pub observation: ObservationModel,
    #[serde(default)]
    pub seed: u64,
}

/// Ground truth for one analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub frame: usize,
    pub time: f64,
    pub position: Point3,
    pub tdoa: TdoaVector,
}

impl Scene {
    fn base(trajectory: Trajectory) -> Self {
        Self {
            sample_rate_hz: 16000.0,
            array: MicArray::display_room(),
            room: Region {
                min: [0.0, 0.0, 0.0],
                max: [10.0, 13.0, 5.0],
            },
            training_region: Region {
                min: [0.5, 0.3, 1.0],
                max: [9.5, 12.5, 2.0],
            },
            training_count: 20000,
            trajectory,
            observation: ObservationModel::default(),
            seed: 1,
        }
    }

    /// Slow loop around a 0.5 m square in the middle of the room, far from every
    /// microphone. Lasts exactly 120 default frames.
    pub fn central_walk() -> Self {
        let corners = [
            [4.75, 6.25, 1.6],
            [5.25, 6.25, 1.6],
            [5.25, 6.75, 1.6],
            [4.75, 6.75, 1.6],
            [4.75, 6.25, 1.6],
        ];
        let duration = 57.025;
        let waypoints = corners
            .iter()
            .enumerate()
            .map(|(k, &position)| Waypoint {
                t: duration * k as f64 / 4.0,
                position,
            })
            .collect();
        Self::base(Trajectory { waypoints })
    }

    /// Steps up to 0.7 m from the display wall, sweeps 0.4 m along it between
    /// the wall microphones, then steps back. Lasts 120 default frames.
    pub fn near_mic_walk() -> Self {
        let waypoints = vec![
            Waypoint { t: 0.0, position: [5.0, 1.2, 1.6] },
            Waypoint { t: 18.5125, position: [4.8, 0.7, 1.5] },
            Waypoint { t: 38.5125, position: [5.2, 0.7, 1.5] },
            Waypoint { t: 57.025, position: [5.0, 1.2, 1.6] },
        ];
        Self::base(Trajectory { waypoints })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::InvalidConfig("sample_rate_hz must be positive".into()));
        }
        self.array.validate()?;
        self.room.validate()?;
        self.training_region.validate()?;
        self.trajectory.validate()?;
        self.observation.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scene: Scene = toml::from_str(text).map_err(|e| Error::parse("scene", e))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scene is always representable as TOML")
    }

    /// Frame configuration with the lag range set from the array geometry.
    pub fn frame_config(&self, base: &FrameConfig) -> FrameConfig {
        FrameConfig {
            sample_rate_hz: self.sample_rate_hz,
            max_delay_samples: self.array.max_delay_samples(self.sample_rate_hz),
            ..base.clone()
        }
    }

    /// Ground-truth delay vector at the centre of every whole frame of the
    /// trajectory.
    pub fn frame_truths(&self, frame_cfg: &FrameConfig) -> Vec<FrameTruth> {
        let len = (self.trajectory.duration() * self.sample_rate_hz).round() as usize;
        let times: Vec<f64> = (0..frame_cfg.frame_count(len))
            .map(|k| frame_cfg.frame_time(k))
            .collect();
        sample_trajectory(&self.trajectory, &times)
            .into_iter()
            .zip(times)
            .enumerate()
            .map(|(frame, (position, time))| FrameTruth {
                frame,
                time,
                position,
                tdoa: tdoa_of(&position, &self.array, self.sample_rate_hz),
            })
            .collect()
    }

    pub fn training_set(&self, seed: u64) -> Result<Vec<TdoaVector>> {
        generate_training_set(
            &self.array,
            &self.training_region,
            self.training_count,
            self.sample_rate_hz,
            derive_seed(seed, domain::TRAINING, 0),
        )
    }
}

/// Column names for a delay vector of dimension `dim`, e.g. `d_0_1`.
pub fn pair_headers(dim: usize) -> Vec<String> {
    let n = mics_for_pairs(dim).unwrap_or(0);
    canonical_pairs(n)
        .iter()
        .map(|p| format!("d_{}_{}", p.i, p.j))
        .collect()
}

pub fn write_vectors_csv(path: &Path, vectors: &[TdoaVector]) -> Result<()> {
    let dim = vectors.first().map_or(0, |v| v.dim());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(pair_headers(dim))?;
    for v in vectors {
        w.write_record(v.iter().map(|x| x.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_vectors_csv(path: &Path) -> Result<Vec<TdoaVector>> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = r.headers()?.len();
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != dim {
            return Err(Error::parse(
                path.display().to_string(),
                format!("row {} has {} fields, expected {dim}", line + 1, rec.len()),
            ));
        }
        let v = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        out.push(TdoaVector(v));
    }
    Ok(out)
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "y", "z"])?;
    for wp in &traj.waypoints {
        let [x, y, z] = wp.position;
        w.write_record([wp.t, x, y, z].iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let mut waypoints = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        let [t, x, y, z] = vals[..] else {
            return Err(Error::parse(path.display().to_string(), "expected t,x,y,z"));
        };
        waypoints.push(Waypoint {
            t,
            position: [x, y, z],
        });
    }
    Trajectory::new(waypoints)
}
