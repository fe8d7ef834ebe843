//! PHAT correlation, z-scored peak extraction and argmax delay estimation.
//!
//! Correlation series are indexed by integer lag `tau` in
//! `[-max_delay, +max_delay]`. For a pair `(i, j)` built by
//! [`pair_correlations`], a positive lag means channel `i` hears the source
//! later than channel `j`, matching the sign of the ideal delay
//! `(|m_i - s| - |m_j - s|) / c`.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::{canonical_pairs, MicPair};

/// Cross-power bins below this magnitude are zeroed instead of normalized.
pub const PHAT_MAGNITUDE_FLOOR: f64 = 1e-12;

/// Framing and lag-range parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameConfig {
    pub sample_rate_hz: f64,
    pub frame_len_ms: f64,
    pub overlap_ms: f64,
    /// Largest lag (in samples) searched for every pair.
    pub max_delay_samples: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16000.0,
            frame_len_ms: 500.0,
            overlap_ms: 25.0,
            max_delay_samples: 600,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::InvalidConfig("sample_rate_hz must be positive".into()));
        }
        if !(self.frame_len_ms > 0.0) {
            return Err(Error::InvalidConfig("frame_len_ms must be positive".into()));
        }
        if !(self.overlap_ms >= 0.0 && self.overlap_ms < self.frame_len_ms) {
            return Err(Error::InvalidConfig(
                "overlap_ms must satisfy 0 <= overlap < frame_len".into(),
            ));
        }
        if self.max_delay_samples == 0 {
            return Err(Error::InvalidConfig("max_delay_samples must be >= 1".into()));
        }
        if self.frame_len_samples() < 2 * self.max_delay_samples {
            return Err(Error::InvalidConfig(format!(
                "frame of {} samples is shorter than twice the lag range {}",
                self.frame_len_samples(),
                self.max_delay_samples
            )));
        }
        if self.hop_samples() == 0 {
            return Err(Error::InvalidConfig("frame hop rounds to zero samples".into()));
        }
        Ok(())
    }

    pub fn frame_len_samples(&self) -> usize {
        (self.frame_len_ms * self.sample_rate_hz / 1000.0).round() as usize
    }

    pub fn overlap_samples(&self) -> usize {
        (self.overlap_ms * self.sample_rate_hz / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        self.frame_len_samples().saturating_sub(self.overlap_samples())
    }

    /// Number of whole frames in a signal of `len` samples: `floor((L-F)/H) + 1`.
    pub fn frame_count(&self, len: usize) -> usize {
        let frame = self.frame_len_samples();
        let hop = self.hop_samples();
        if frame == 0 || hop == 0 || len < frame {
            0
        } else {
            (len - frame) / hop + 1
        }
    }

    /// Centre time of frame `index`, in seconds.
    pub fn frame_time(&self, index: usize) -> f64 {
        let start = (index * self.hop_samples()) as f64;
        (start + self.frame_len_samples() as f64 / 2.0) / self.sample_rate_hz
    }
}

/// Correlation series `R(tau)` for one microphone pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PhatCorrelation {
    pub pair: MicPair,
    max_delay: usize,
    values: Vec<f64>,
    silent: bool,
}

impl PhatCorrelation {
    /// Wraps a lag series of length `2 * max_delay + 1`, lowest lag first.
    pub fn new(pair: MicPair, max_delay: usize, values: Vec<f64>) -> Result<Self> {
        if max_delay == 0 || values.len() != 2 * max_delay + 1 {
            return Err(Error::InvalidInput(format!(
                "correlation of length {} does not match lag range +-{}",
                values.len(),
                max_delay
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("correlation contains non-finite values".into()));
        }
        let silent = values.iter().all(|&v| v == 0.0);
        Ok(Self {
            pair,
            max_delay,
            values,
            silent,
        })
    }

    pub fn max_delay(&self) -> usize {
        self.max_delay
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// True when the series is identically zero (silent input).
    pub fn is_silent(&self) -> bool {
        self.silent
    }

    pub fn lag_of_index(&self, idx: usize) -> i64 {
        idx as i64 - self.max_delay as i64
    }

    pub fn at(&self, lag: i64) -> Option<f64> {
        let idx = lag + self.max_delay as i64;
        if idx < 0 {
            return None;
        }
        self.values.get(idx as usize).copied()
    }

    /// `(lag, value)` pairs from `-max_delay` to `+max_delay`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(k, &v)| (self.lag_of_index(k), v))
    }
}

/// One z-scored peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub lag: i64,
    pub score: f64,
}

/// Sparse set of z-scored peaks for one pair, lags strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    pub pair: MicPair,
    pub peaks: Vec<Peak>,
}

impl PeakSet {
    pub fn empty(pair: MicPair) -> Self {
        Self {
            pair,
            peaks: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZScoreConfig {
    /// Peaks must sit this many standard deviations above the mean.
    pub threshold_c: f64,
    pub peak_cap: usize,
}

impl Default for ZScoreConfig {
    fn default() -> Self {
        Self {
            threshold_c: 2.0,
            peak_cap: 5,
        }
    }
}

impl ZScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_c >= 0.0 && self.threshold_c.is_finite()) {
            return Err(Error::InvalidConfig("threshold_c must be >= 0".into()));
        }
        if self.peak_cap == 0 {
            return Err(Error::InvalidConfig("peak_cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// PHAT-weighted cross-correlation of two equal-length frames.
///
/// The returned series peaks at `tau = d` when `frame_b` is `frame_a` delayed
/// by `d` samples. The pair label defaults to `(0, 1)`; [`pair_correlations`]
/// sets it for array data.
pub fn phat_correlate(frame_a: &[f64], frame_b: &[f64], cfg: &FrameConfig) -> Result<PhatCorrelation> {
    let max_delay = cfg.max_delay_samples;
    if max_delay == 0 {
        return Err(Error::InvalidConfig("max_delay_samples must be >= 1".into()));
    }
    if frame_a.len() != frame_b.len() {
        return Err(Error::InvalidInput(format!(
            "frame lengths differ: {} vs {}",
            frame_a.len(),
            frame_b.len()
        )));
    }
    let n = frame_a.len();
    if n < 2 * max_delay {
        return Err(Error::InvalidInput(format!(
            "frame of {n} samples is shorter than twice the lag range {max_delay}"
        )));
    }
    if frame_a.iter().chain(frame_b).any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("frame contains non-finite samples".into()));
    }

    let fft_len = (n + max_delay).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(fft_len);
    let inverse = planner.plan_fft_inverse(fft_len);

    let spectrum = |frame: &[f64]| {
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
        buf.resize(fft_len, Complex::new(0.0, 0.0));
        forward.process(&mut buf);
        buf
    };
    let spec_a = spectrum(frame_a);
    let spec_b = spectrum(frame_b);

    // conj(A) * B inverts to sum_n a[n] b[n + tau]
    let mut cross: Vec<Complex<f64>> = spec_a
        .iter()
        .zip(&spec_b)
        .map(|(a, b)| {
            let c = a.conj() * b;
            let mag = c.norm();
            if mag < PHAT_MAGNITUDE_FLOOR {
                Complex::new(0.0, 0.0)
            } else {
                c / mag
            }
        })
        .collect();
    inverse.process(&mut cross);

    let scale = 1.0 / fft_len as f64;
    let values = (-(max_delay as i64)..=max_delay as i64)
        .map(|lag| {
            let idx = lag.rem_euclid(fft_len as i64) as usize;
            cross[idx].re * scale
        })
        .collect();
    PhatCorrelation::new(MicPair::new(0, 1), max_delay, values)
}

/// Correlations for every canonical pair of one multi-channel frame.
///
/// Pair `(i, j)` correlates channel `j` against channel `i`, so its peak sits
/// at `t_i - t_j` in samples.
pub fn pair_correlations(channels: &[&[f64]], cfg: &FrameConfig) -> Result<Vec<PhatCorrelation>> {
    if channels.len() < 2 {
        return Err(Error::InvalidInput("need at least two channels".into()));
    }
    canonical_pairs(channels.len())
        .into_iter()
        .map(|pair| {
            let mut corr = phat_correlate(channels[pair.j], channels[pair.i], cfg)?;
            corr.pair = pair;
            Ok(corr)
        })
        .collect()
}

/// Z-scores a correlation series and keeps its strongest local maxima.
///
/// `Z(tau) = max((R(tau) - mean) / std - C, 0)` with population statistics
/// over the whole lag range. A constant series yields an empty set.
pub fn zscore_peaks(corr: &PhatCorrelation, cfg: &ZScoreConfig) -> PeakSet {
    let values = corr.values();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if std == 0.0 || std <= 1e-12 * scale {
        return PeakSet::empty(corr.pair);
    }

    let z: Vec<f64> = values
        .iter()
        .map(|v| ((v - mean) / std - cfg.threshold_c).max(0.0))
        .collect();

    let mut peaks: Vec<Peak> = (0..z.len())
        .filter(|&k| {
            z[k] > 0.0 && (k == 0 || z[k] > z[k - 1]) && (k + 1 == z.len() || z[k] > z[k + 1])
        })
        .map(|k| Peak {
            lag: corr.lag_of_index(k),
            score: z[k],
        })
        .collect();

    peaks.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.lag.abs().cmp(&b.lag.abs()))
            .then(a.lag.cmp(&b.lag))
    });
    peaks.truncate(cfg.peak_cap.max(1));
    peaks.sort_by_key(|p| p.lag);

    PeakSet {
        pair: corr.pair,
        peaks,
    }
}

/// Lag of the largest correlation value.
///
/// Ties go to the smallest `|tau|`, then to the negative lag.
pub fn tdoa_argmax(corr: &PhatCorrelation) -> Result<i64> {
    if corr.is_silent() {
        return Err(Error::NoEstimate);
    }
    let max_delay = corr.max_delay() as i64;
    // visit 0, -1, 1, -2, 2, ... so the first strict maximum wins ties
    let order = std::iter::once(0).chain((1..=max_delay).flat_map(|d| [-d, d]));
    let mut best: Option<(i64, f64)> = None;
    for lag in order {
        let v = corr.at(lag).expect("lag within range");
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((lag, v)),
        }
    }
    best.map(|(lag, _)| lag).ok_or(Error::NoEstimate)
}

/// One analysis frame: a window of every channel.
#[derive(Debug, Clone)]
pub struct Frame<'a> {
    pub index: usize,
    pub start: usize,
    pub channels: Vec<&'a [f64]>,
}

/// Splits multi-channel audio into overlapping frames; the trailing partial
/// frame is dropped.
pub fn frame_stream<'a>(audio: &'a [Vec<f64>], cfg: &FrameConfig) -> Result<Vec<Frame<'a>>> {
    let Some(first) = audio.first() else {
        return Ok(Vec::new());
    };
    let len = first.len();
    if audio.iter().any(|ch| ch.len() != len) {
        return Err(Error::InvalidInput("channels have different lengths".into()));
    }
    let frame_len = cfg.frame_len_samples();
    let hop = cfg.hop_samples();
    if frame_len == 0 || hop == 0 {
        return Err(Error::InvalidConfig("frame length and hop must be positive".into()));
    }
    Ok((0..cfg.frame_count(len))
        .map(|index| {
            let start = index * hop;
            Frame {
                index,
                start,
                channels: audio.iter().map(|ch| &ch[start..start + frame_len]).collect(),
            }
        })
        .collect())
}

/// Per-frame, per-pair peak sets for multi-channel audio.
pub fn audio_peaks(audio: &[Vec<f64>], frame_cfg: &FrameConfig, zcfg: &ZScoreConfig) -> Result<Vec<Vec<PeakSet>>> {
    frame_cfg.validate()?;
    zcfg.validate()?;
    frame_stream(audio, frame_cfg)?
        .iter()
        .map(|frame| {
            Ok(pair_correlations(&frame.channels, frame_cfg)?
                .iter()
                .map(|c| zscore_peaks(c, zcfg))
                .collect())
        })
        .collect()
}

/// Multi-channel audio decoded from a WAV file.
#[derive(Debug, Clone)]
pub struct WavAudio {
    pub sample_rate_hz: f64,
    /// One vector per microphone, samples scaled to `[-1, 1]` for PCM input.
    pub channels: Vec<Vec<f64>>,
}

/// Reads a PCM (8-32 bit) or float WAV file, de-interleaving channels.
pub fn read_wav(path: &Path) -> Result<WavAudio> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let full_scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n_ch.max(1)); n_ch];
    for (k, s) in interleaved.into_iter().enumerate() {
        channels[k % n_ch].push(s);
    }
    Ok(WavAudio {
        sample_rate_hz: spec.sample_rate as f64,
        channels,
    })
}
