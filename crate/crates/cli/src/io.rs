//! Wide-format CSV ingestion, preprocessing, and export.
//!
//! The on-disk shape is one header row of channel labels followed by one row
//! per time sample. That matches how exchange price dumps and biosignal
//! exports usually arrive and keeps parsing a single streaming pass.

use std::path::Path;

use gcpairs::series::MultiSeries;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Preprocessing switches, applied in field order; centering always runs
/// last so every downstream estimator sees mean-free channels.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PreprocessSpec {
    /// Rescale every channel to zero mean and unit variance.
    pub standardize: bool,
    /// Regress each channel on the cross-channel mean and keep the residual.
    pub remove_global_trend: bool,
    /// Keep the first sample of every block of this length (1 = keep all).
    pub downsample_factor: usize,
    /// Fill gap cells by linear interpolation along time. Gaps are resolved
    /// while loading, before any numeric stage runs, because the in-memory
    /// series type only holds finite values.
    pub interpolate_gaps: bool,
    /// Subtract the channel means as the final step.
    pub center: bool,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            standardize: false,
            remove_global_trend: false,
            downsample_factor: 1,
            interpolate_gaps: true,
            center: true,
        }
    }
}

/// Reads a wide CSV into a channels × samples series.
///
/// Empty cells and cells spelled `NaN` (any case) are gaps. With
/// `spec.interpolate_gaps` each gap is filled linearly between the nearest
/// numeric samples of its own channel (runs at the edges copy the nearest
/// value); without it any gap fails the load. Ragged rows, non-numeric
/// cells, and single-column files are errors.
pub fn load_csv(path: &Path, spec: &PreprocessSpec) -> Result<MultiSeries<f64>> {
    let file =
        std::fs::File::open(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);

    let labels: Vec<String> = reader
        .headers()
        .map_err(|source| CliError::Csv { path: path.into(), source })?
        .iter()
        .map(str::to_owned)
        .collect();

    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut gaps = 0usize;
    let mut first_gap = (0usize, 0usize);
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|source| CliError::Csv { path: path.into(), source })?;
        let mut parsed = Vec::with_capacity(labels.len());
        for (col, cell) in record.iter().enumerate() {
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                if gaps == 0 {
                    first_gap = (row + 1, col + 1);
                }
                gaps += 1;
                parsed.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => parsed.push(Some(v)),
                _ => {
                    return Err(CliError::NonNumericCell {
                        path: path.into(),
                        row: row + 1,
                        col: col + 1,
                        value: cell.to_owned(),
                    })
                }
            }
        }
        rows.push(parsed);
    }

    if rows.is_empty() {
        return Err(CliError::NoSamples { path: path.into() });
    }
    if gaps > 0 && !spec.interpolate_gaps {
        return Err(CliError::GapsPresent {
            path: path.into(),
            count: gaps,
            row: first_gap.0,
            col: first_gap.1,
        });
    }

    let (d, t) = (labels.len(), rows.len());
    let mut data = DMatrix::zeros(d, t);
    for ch in 0..d {
        let series: Vec<Option<f64>> = rows.iter().map(|r| r[ch]).collect();
        let filled = fill_gaps(&series).ok_or_else(|| CliError::EmptyChannel {
            path: path.into(),
            label: labels[ch].clone(),
        })?;
        for (k, v) in filled.into_iter().enumerate() {
            data[(ch, k)] = v;
        }
    }
    Ok(MultiSeries::new(data, labels)?)
}

/// Linear interpolation across gap runs; edge runs copy the nearest numeric
/// value. `None` when the channel has no numeric sample at all.
fn fill_gaps(series: &[Option<f64>]) -> Option<Vec<f64>> {
    let anchors: Vec<usize> = series.iter().enumerate().filter_map(|(i, v)| v.map(|_| i)).collect();
    if anchors.is_empty() {
        return None;
    }
    let out = series
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if let Some(v) = v {
                return *v;
            }
            let p = anchors.partition_point(|&a| a < i);
            match (p.checked_sub(1).map(|q| anchors[q]), anchors.get(p).copied()) {
                (Some(lo), Some(hi)) => {
                    let w = (i - lo) as f64 / (hi - lo) as f64;
                    series[lo].unwrap() * (1.0 - w) + series[hi].unwrap() * w
                }
                (Some(lo), None) => series[lo].unwrap(),
                (None, Some(hi)) => series[hi].unwrap(),
                (None, None) => unreachable!("anchors is non-empty"),
            }
        })
        .collect();
    Some(out)
}

/// Writes the series in the same wide format `load_csv` reads.
///
/// Values are printed in shortest round-trip form, so loading the file back
/// reproduces every finite value bit-exactly.
pub fn write_csv(x: &MultiSeries<f64>, path: &Path) -> Result<()> {
    let file =
        std::fs::File::create(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));
    writer
        .write_record(x.labels())
        .map_err(|source| CliError::Csv { path: path.into(), source })?;
    for k in 0..x.samples() {
        let record: Vec<String> =
            (0..x.channels()).map(|ch| x.data()[(ch, k)].to_string()).collect();
        writer
            .write_record(&record)
            .map_err(|source| CliError::Csv { path: path.into(), source })?;
    }
    writer.flush().map_err(|source| CliError::Io { path: path.into(), source })?;
    Ok(())
}

/// Runs the enabled stages in declared order: standardize, global-trend
/// removal, downsampling, centering. Gap interpolation already happened at
/// load time, so it contributes nothing here.
pub fn preprocess(x: &MultiSeries<f64>, spec: &PreprocessSpec) -> Result<MultiSeries<f64>> {
    if spec.downsample_factor == 0 {
        return Err(CliError::ZeroDownsample);
    }
    let mut out = x.clone();
    if spec.standardize {
        out.standardize()?;
    }
    if spec.remove_global_trend {
        out = remove_global_trend(&out)?;
    }
    if spec.downsample_factor > 1 {
        out = downsample(&out, spec.downsample_factor)?;
    }
    if spec.center {
        out.center();
    }
    Ok(out)
}

/// Ordinary least squares of each channel on the cross-channel mean (with
/// intercept); the residuals replace the channels. Shared activity that
/// every channel carries, like a market-wide drift, is removed this way.
fn remove_global_trend(x: &MultiSeries<f64>) -> Result<MultiSeries<f64>> {
    let (d, t) = (x.channels(), x.samples());
    let data = x.data();
    let trend: Vec<f64> = (0..t).map(|k| data.column(k).sum() / d as f64).collect();
    let trend_mean = trend.iter().sum::<f64>() / t as f64;
    let trend_var: f64 = trend.iter().map(|g| (g - trend_mean).powi(2)).sum();

    let mut out = data.clone();
    for ch in 0..d {
        let ch_mean = out.row(ch).sum() / t as f64;
        // Degenerate flat trend: only the intercept is identifiable.
        let beta = if trend_var > 0.0 {
            (0..t).map(|k| (out[(ch, k)] - ch_mean) * (trend[k] - trend_mean)).sum::<f64>()
                / trend_var
        } else {
            0.0
        };
        let alpha = ch_mean - beta * trend_mean;
        for k in 0..t {
            out[(ch, k)] -= alpha + beta * trend[k];
        }
    }
    rebuild(x, out, 1.0)
}

/// First-of-block decimation, the "opening price" convention.
fn downsample(x: &MultiSeries<f64>, factor: usize) -> Result<MultiSeries<f64>> {
    let kept: Vec<usize> = (0..x.samples()).step_by(factor).collect();
    let mut data = DMatrix::zeros(x.channels(), kept.len());
    for (j, &k) in kept.iter().enumerate() {
        data.column_mut(j).copy_from(&x.data().column(k));
    }
    rebuild(x, data, factor as f64)
}

fn rebuild(
    like: &MultiSeries<f64>,
    data: DMatrix<f64>,
    step_scale: f64,
) -> Result<MultiSeries<f64>> {
    let s = MultiSeries::new(data, like.labels().to_vec())?;
    Ok(match like.sample_step() {
        Some(dt) => s.with_sample_step(dt * step_scale),
        None => s,
    })
}
