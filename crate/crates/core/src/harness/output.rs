//! CSV files written by an experiment. Floats use Rust's shortest
//! round-trip formatting, so parsing a file reproduces the in-memory values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::config::Variant;
use super::metrics::MetricsReport;
use super::run::{FrameRecord, Observations, TrackRecord, VariantOutput};
use crate::error::{Error, Result};
use crate::pairs::{canonical_pairs, mics_for_pairs, MicPair};
use crate::scene::{FrameTruth, TdoaVector};

pub const TRACKS: &str = "tracks.csv";
pub const PEAKS: &str = "peaks.csv";
pub const DEPTHS: &str = "depths.csv";
pub const RESAMPLES: &str = "resamples.csv";
pub const METRICS: &str = "metrics.csv";
pub const TIMING: &str = "timing.csv";

fn pair_label(p: &MicPair) -> String {
    format!("{}-{}", p.i, p.j)
}

fn pairs_for(dim: usize) -> Result<Vec<MicPair>> {
    mics_for_pairs(dim)
        .map(canonical_pairs)
        .ok_or_else(|| Error::InvalidInput(format!("{dim} is not a pair count")))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `tracks.csv`, `peaks.csv`, `depths.csv`, `resamples.csv` and, given
/// a report, `metrics.csv` and `timing.csv`. Only `timing.csv` varies between
/// identical runs.
pub fn emit_csv(records: &TrackRecord, report: Option<&MetricsReport>, out_dir: &Path) -> Result<()> {
    let first = records
        .frames
        .first()
        .ok_or_else(|| Error::InvalidInput("no frames to write".into()))?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dim = first
        .truth
        .as_ref()
        .map(|t| t.dim())
        .or_else(|| first.outputs.first().map(|o| o.prediction.dim()))
        .unwrap_or(0);
    let pairs = pairs_for(dim)?;

    let path = out_dir.join(TRACKS);
    let mut w = writer(&path)?;
    let mut header = vec!["frame".to_string(), "time".into(), "pair".into(), "truth".into()];
    header.extend(records.variants.iter().map(|v| v.to_string()));
    w.write_record(&header)?;
    for f in &records.frames {
        for (p, pair) in pairs.iter().enumerate() {
            let mut row = vec![
                f.frame.to_string(),
                f.time.to_string(),
                pair_label(pair),
                f.truth.as_ref().map_or(String::new(), |t| t[p].to_string()),
            ];
            row.extend(f.outputs.iter().map(|o| o.prediction[p].to_string()));
            w.write_record(&row)?;
        }
    }
    finish(w, &path)?;

    let path = out_dir.join(PEAKS);
    let mut w = writer(&path)?;
    w.write_record(["frame", "pair", "lag", "score"])?;
    for f in &records.frames {
        for set in &f.peaks {
            for peak in &set.peaks {
                w.write_record([
                    f.frame.to_string(),
                    pair_label(&set.pair),
                    peak.lag.to_string(),
                    peak.score.to_string(),
                ])?;
            }
        }
    }
    finish(w, &path)?;

    let path = out_dir.join(DEPTHS);
    let mut w = writer(&path)?;
    w.write_record(["frame", "variant", "depth", "count"])?;
    for f in &records.frames {
        for (v, o) in records.variants.iter().zip(&f.outputs) {
            for (slot, count) in o.depth_hist.iter().enumerate() {
                w.write_record([
                    f.frame.to_string(),
                    v.to_string(),
                    (slot as i64 - 1).to_string(),
                    count.to_string(),
                ])?;
            }
        }
    }
    finish(w, &path)?;

    let path = out_dir.join(RESAMPLES);
    let mut w = writer(&path)?;
    w.write_record(["frame", "variant", "resampled"])?;
    for f in &records.frames {
        for (v, o) in records.variants.iter().zip(&f.outputs) {
            w.write_record([f.frame.to_string(), v.to_string(), o.resampled.to_string()])?;
        }
    }
    finish(w, &path)?;

    if let Some(report) = report {
        write_metrics_csv(report, &pairs, out_dir)?;
    }
    Ok(())
}

fn write_metrics_csv(report: &MetricsReport, pairs: &[MicPair], out_dir: &Path) -> Result<()> {
    let path = out_dir.join(METRICS);
    let mut w = writer(&path)?;
    let mut header = vec![
        "variant".to_string(),
        "frames".into(),
        "median_rmse".into(),
        "within_delta".into(),
        "delta".into(),
        "mean_resamples".into(),
    ];
    header.extend(pairs.iter().map(|p| format!("rmse_{}", pair_label(p))));
    w.write_record(&header)?;
    for v in &report.variants {
        let mut row = vec![
            v.variant.to_string(),
            report.frames.to_string(),
            v.median_rmse.to_string(),
            v.within_delta.to_string(),
            report.delta.to_string(),
            v.mean_resamples.to_string(),
        ];
        row.extend(v.rmse.iter().map(|e| e.to_string()));
        w.write_record(&row)?;
    }
    finish(w, &path)?;

    let path = out_dir.join(TIMING);
    let mut w = writer(&path)?;
    w.write_record(["variant", "seconds_per_frame"])?;
    for v in &report.variants {
        w.write_record([v.variant.to_string(), v.seconds_per_frame.to_string()])?;
    }
    finish(w, &path)
}

/// `truth.csv`: frame time, source position and ideal delay vector.
pub fn write_truth_csv(path: &Path, truths: &[FrameTruth]) -> Result<()> {
    let dim = truths.first().map_or(0, |t| t.tdoa.dim());
    let pairs = if dim == 0 { Vec::new() } else { pairs_for(dim)? };
    let mut w = writer(path)?;
    let mut header = vec!["frame".to_string(), "time".into(), "x".into(), "y".into(), "z".into()];
    header.extend(pairs.iter().map(|p| format!("d_{}_{}", p.i, p.j)));
    w.write_record(&header)?;
    for t in truths {
        let mut row = vec![t.frame.to_string(), t.time.to_string()];
        row.extend(t.position.iter().map(|x| x.to_string()));
        row.extend(t.tdoa.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    finish(w, path)
}

/// `peaks.csv` straight from an observation cache.
pub fn write_observations_csv(path: &Path, obs: &Observations) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["frame", "pair", "lag", "score"])?;
    for f in &obs.frames {
        for set in &f.peaks {
            for peak in &set.peaks {
                w.write_record([
                    f.frame.to_string(),
                    pair_label(&set.pair),
                    peak.lag.to_string(),
                    peak.score.to_string(),
                ])?;
            }
        }
    }
    finish(w, path)
}

fn parse<T: std::str::FromStr>(field: &str, path: &Path) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field
        .parse()
        .map_err(|e| Error::parse(path.display().to_string(), format!("`{field}`: {e}")))
}

/// Reads `tracks.csv` back into a record. Peaks and depth histograms are not
/// restored; resample counts are zero.
pub fn read_tracks_csv(path: &Path) -> Result<TrackRecord> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 4 || &header[0] != "frame" || &header[3] != "truth" {
        return Err(Error::parse(path.display().to_string(), "unexpected header"));
    }
    let variants = header
        .iter()
        .skip(4)
        .map(|h| h.parse::<Variant>())
        .collect::<Result<Vec<_>>>()?;

    let mut frames: Vec<FrameRecord> = Vec::new();
    let mut truth_missing = false;
    for rec in r.records() {
        let rec = rec?;
        let frame: usize = parse(&rec[0], path)?;
        if frames.last().is_none_or(|f| f.frame != frame) {
            frames.push(FrameRecord {
                frame,
                time: parse(&rec[1], path)?,
                truth: Some(TdoaVector(Vec::new())),
                peaks: Vec::new(),
                outputs: variants
                    .iter()
                    .map(|_| VariantOutput {
                        prediction: TdoaVector(Vec::new()),
                        resampled: 0,
                        depth_hist: Vec::new(),
                    })
                    .collect(),
            });
        }
        let f = frames.last_mut().expect("just pushed");
        if rec[3].is_empty() {
            truth_missing = true;
        } else if let Some(t) = f.truth.as_mut() {
            t.0.push(parse(&rec[3], path)?);
        }
        for (o, field) in f.outputs.iter_mut().zip(rec.iter().skip(4)) {
            o.prediction.0.push(parse(field, path)?);
        }
    }
    if truth_missing {
        for f in &mut frames {
            f.truth = None;
        }
    }
    let n = variants.len();
    Ok(TrackRecord {
        variants,
        m: 0,
        max_depth: 0,
        frames,
        seconds_per_frame: vec![0.0; n],
    })
}

/// Fills resample counts from `resamples.csv` into a record read by
/// [`read_tracks_csv`].
pub fn read_resamples_csv(path: &Path, records: &mut TrackRecord) -> Result<()> {
    let index: BTreeMap<usize, usize> = records
        .frames
        .iter()
        .enumerate()
        .map(|(k, f)| (f.frame, k))
        .collect();
    let mut r = csv::Reader::from_path(path)?;
    for rec in r.records() {
        let rec = rec?;
        let frame: usize = parse(&rec[0], path)?;
        let variant: Variant = rec[1].parse()?;
        let count: usize = parse(&rec[2], path)?;
        let (Some(&k), Some(v)) = (index.get(&frame), records.variants.iter().position(|x| *x == variant))
        else {
            continue;
        };
        records.frames[k].outputs[v].resampled = count;
    }
    Ok(())
}
