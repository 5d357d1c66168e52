//! Sliding-window feature extraction and z-score standardization.
//!
//! Feature columns are ordered variables-major, statistics-minor
//! (`Ta_mean, Ta_std, P_Th_mean, ...`), followed by the optional time
//! (`workday`, `weekend`, `winter`, `spring`, `summer`, `fall`) and
//! contextual (`shutdowns`, `working_minutes`) columns.
//!
//! A window is labeled anomalous when any of its samples is. Standard
//! deviations are population (1/N) everywhere, and the skewness and excess
//! kurtosis of a constant window are 0. Cumulative energy channels are first
//! differenced inside each window before statistics are taken.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Weekday};
use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::{Channel, TimeSeriesFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Mean,
    Std,
    Skewness,
    Kurtosis,
    Sum,
    Rms,
}

impl Statistic {
    pub fn name(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Std => "std",
            Statistic::Skewness => "skewness",
            Statistic::Kurtosis => "kurtosis",
            Statistic::Sum => "sum",
            Statistic::Rms => "rms",
        }
    }
}

fn default_on_power() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub window_length_minutes: usize,
    pub window_stride_minutes: usize,
    pub variables: Vec<Channel>,
    pub statistics: Vec<Statistic>,
    pub include_time_features: bool,
    pub include_contextual_features: bool,
    /// Electrical output above which the unit counts as running, for the
    /// contextual features.
    #[serde(default = "default_on_power")]
    pub machine_on_power_kw: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_length_minutes: 1440,
            window_stride_minutes: 60,
            variables: vec![Channel::Ta, Channel::PTh, Channel::PEl],
            statistics: vec![Statistic::Mean, Statistic::Std],
            include_time_features: false,
            include_contextual_features: false,
            machine_on_power_kw: default_on_power(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_stride_minutes == 0 || self.window_length_minutes < self.window_stride_minutes {
            return Err(Error::config("need window_length >= window_stride >= 1"));
        }
        if self.variables.is_empty() || self.statistics.is_empty() {
            return Err(Error::config("variables and statistics must be nonempty"));
        }
        Ok(())
    }

    pub fn window_count(&self, len: usize) -> Option<usize> {
        (len >= self.window_length_minutes)
            .then(|| (len - self.window_length_minutes) / self.window_stride_minutes + 1)
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .variables
            .iter()
            .flat_map(|v| {
                self.statistics
                    .iter()
                    .map(move |s| format!("{}_{}", v.name(), s.name()))
            })
            .collect();
        if self.include_time_features {
            names.extend(TIME_FEATURES.iter().map(|s| s.to_string()));
        }
        if self.include_contextual_features {
            names.extend(CONTEXT_FEATURES.iter().map(|s| s.to_string()));
        }
        names
    }
}

const TIME_FEATURES: [&str; 6] = ["workday", "weekend", "winter", "spring", "summer", "fall"];
const CONTEXT_FEATURES: [&str; 2] = ["shutdowns", "working_minutes"];

/// Per-column z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Columns whose training variance was zero; their sd is set to 1.
    #[serde(default)]
    pub degenerate_columns: Vec<usize>,
}

impl Standardization {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            sd: vec![1.0; n],
            degenerate_columns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
            *x = (*x - m) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub matrix: Array2<f64>,
    pub labels: Vec<bool>,
    pub window_start_indices: Vec<usize>,
    /// Parameters already applied to `matrix`, if any.
    pub standardization: Option<Standardization>,
    pub feature_names: Vec<String>,
}

impl FeatureDataset {
    pub fn n_windows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(i)
    }

    pub fn n_anomalous(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn select(&self, rows: &[usize]) -> FeatureDataset {
        FeatureDataset {
            matrix: self.matrix.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            window_start_indices: rows.iter().map(|&r| self.window_start_indices[r]).collect(),
            standardization: self.standardization.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Writes `<path>` (feature columns then `label`) and the JSON sidecar
    /// `<path>.json`.
    pub fn write(&self, path: &Path, config: &FeatureConfig) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = self.feature_names.clone();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, &label) in self.matrix.rows().into_iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(u8::from(label).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let sidecar = Sidecar {
            feature_config: config.clone(),
            standardization: self.standardization.clone(),
            window_start_indices: self.window_start_indices.clone(),
        };
        let side_path = sidecar_path(path);
        let f = File::create(&side_path).map_err(|e| Error::io(&side_path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &sidecar)?;
        Ok(())
    }

    /// Reads a dataset written by [`FeatureDataset::write`]. The sidecar is
    /// optional; without it window indices are row numbers.
    pub fn read(path: &Path) -> Result<(FeatureDataset, Option<FeatureConfig>)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(BufReader::new(file));
        let header = r.headers()?.clone();
        let n_cols = header.len();
        if n_cols < 2 || &header[n_cols - 1] != "label" {
            return Err(Error::Format {
                what: "feature csv",
                detail: "last column must be `label`".into(),
            });
        }
        let names: Vec<String> = header.iter().take(n_cols - 1).map(String::from).collect();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for v in rec.iter().take(n_cols - 1) {
                values.push(v.parse::<f64>().map_err(|e| Error::Format {
                    what: "feature csv",
                    detail: e.to_string(),
                })?);
            }
            labels.push(&rec[n_cols - 1] == "1");
        }
        let rows = labels.len();
        let matrix = Array2::from_shape_vec((rows, n_cols - 1), values).map_err(|e| Error::Format {
            what: "feature csv",
            detail: e.to_string(),
        })?;
        let side_path = sidecar_path(path);
        let (config, standardization, starts) = if side_path.exists() {
            let f = File::open(&side_path).map_err(|e| Error::io(&side_path, e))?;
            let s: Sidecar = serde_json::from_reader(BufReader::new(f))?;
            (Some(s.feature_config), s.standardization, s.window_start_indices)
        } else {
            (None, None, (0..rows).collect())
        };
        Ok((
            FeatureDataset {
                matrix,
                labels,
                window_start_indices: starts,
                standardization,
                feature_names: names,
            },
            config,
        ))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    feature_config: FeatureConfig,
    standardization: Option<Standardization>,
    window_start_indices: Vec<usize>,
}

/// Central moments of a window, with the mean accumulated as an offset from
/// the first value so that constant windows are exact.
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn of(values: &[f64]) -> Moments {
        let n = values.len() as f64;
        let pivot = values[0];
        let offset: f64 = values.iter().map(|v| v - pivot).sum::<f64>() / n;
        let mean = pivot + offset;
        let (mut m2, mut m3, mut m4, mut sum, mut sum_sq) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &v in values {
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
            sum += v;
            sum_sq += v * v;
        }
        Moments {
            n,
            mean,
            m2: m2 / n,
            m3: m3 / n,
            m4: m4 / n,
            sum,
            sum_sq,
        }
    }

    fn get(&self, s: Statistic) -> f64 {
        match s {
            Statistic::Mean => self.mean,
            Statistic::Std => self.m2.sqrt(),
            Statistic::Skewness => {
                if self.m2 > 0.0 {
                    self.m3 / self.m2.powf(1.5)
                } else {
                    0.0
                }
            }
            Statistic::Kurtosis => {
                if self.m2 > 0.0 {
                    self.m4 / (self.m2 * self.m2) - 3.0
                } else {
                    0.0
                }
            }
            Statistic::Sum => self.sum,
            Statistic::Rms => (self.sum_sq / self.n).sqrt(),
        }
    }
}

/// Unstandardized window features of `frame`.
pub fn extract_windows(frame: &TimeSeriesFrame, config: &FeatureConfig) -> Result<FeatureDataset> {
    config.validate()?;
    let n_windows = config
        .window_count(frame.len())
        .ok_or(Error::FrameTooShort {
            len: frame.len(),
            window: config.window_length_minutes,
        })?;
    let len = config.window_length_minutes;
    let stride = config.window_stride_minutes;
    let base_cols = config.variables.len() * config.statistics.len();
    let mut matrix = Array2::<f64>::zeros((n_windows, base_cols));
    let mut buffer = Vec::with_capacity(len);
    for (w, mut row) in matrix.rows_mut().into_iter().enumerate() {
        let start = w * stride;
        let mut col = 0;
        for &v in &config.variables {
            let series = &frame.channel(v)[start..start + len];
            let values: &[f64] = if v.is_cumulative() && len > 1 {
                buffer.clear();
                buffer.extend(series.windows(2).map(|p| p[1] - p[0]));
                &buffer
            } else {
                series
            };
            let m = Moments::of(values);
            for &s in &config.statistics {
                row[col] = m.get(s);
                col += 1;
            }
        }
    }
    let labels = (0..n_windows)
        .map(|w| frame.labels[w * stride..w * stride + len].contains(&1))
        .collect();
    let extra = encode_time_context(frame, config)?;
    let matrix = if extra.ncols() > 0 {
        ndarray::concatenate(Axis(1), &[matrix.view(), extra.view()]).map_err(|e| Error::Format {
            what: "feature matrix",
            detail: e.to_string(),
        })?
    } else {
        matrix
    };
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format {
            what: "feature matrix",
            detail: "non-finite feature value".into(),
        });
    }
    Ok(FeatureDataset {
        matrix,
        labels,
        window_start_indices: (0..n_windows).map(|w| w * stride).collect(),
        standardization: None,
        feature_names: config.feature_names(),
    })
}

/// Meteorological season index: 0 winter (DJF), 1 spring, 2 summer, 3 fall.
pub fn season_index(month: u32) -> usize {
    match month {
        12 | 1 | 2 => 0,
        3..=5 => 1,
        6..=8 => 2,
        _ => 3,
    }
}

pub fn one_hot(index: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i == index { 1.0 } else { 0.0 }).collect()
}

/// Optional time and contextual columns for every window; zero columns when
/// both flags are off.
///
/// Time columns describe the window's center minute: a workday/weekend
/// one-hot pair and a four-way season one-hot. Contextual columns count the
/// on-to-off transitions inside the window and its running minutes, where
/// the unit runs while `P_El` exceeds `machine_on_power_kw`.
pub fn encode_time_context(frame: &TimeSeriesFrame, config: &FeatureConfig) -> Result<Array2<f64>> {
    let n_windows = config
        .window_count(frame.len())
        .ok_or(Error::FrameTooShort {
            len: frame.len(),
            window: config.window_length_minutes,
        })?;
    let cols = usize::from(config.include_time_features) * TIME_FEATURES.len()
        + usize::from(config.include_contextual_features) * CONTEXT_FEATURES.len();
    let mut out = Array2::<f64>::zeros((n_windows, cols));
    if cols == 0 {
        return Ok(out);
    }
    let len = config.window_length_minutes;
    let stride = config.window_stride_minutes;
    let running: Vec<bool> = frame
        .channel(Channel::PEl)
        .iter()
        .map(|&p| p > config.machine_on_power_kw)
        .collect();
    for (w, mut row) in out.rows_mut().into_iter().enumerate() {
        let start = w * stride;
        let mut values = Vec::with_capacity(cols);
        if config.include_time_features {
            let center = frame.timestamp(start + len / 2);
            let weekend = matches!(center.weekday(), Weekday::Sat | Weekday::Sun);
            values.extend(one_hot(usize::from(weekend), 2));
            values.extend(one_hot(season_index(center.month()), 4));
        }
        if config.include_contextual_features {
            let window = &running[start..start + len];
            let shutdowns = window.windows(2).filter(|p| p[0] && !p[1]).count();
            let working = window.iter().filter(|&&r| r).count();
            values.push(shutdowns as f64);
            values.push(working as f64);
        }
        for (dst, v) in row.iter_mut().zip(values) {
            *dst = v;
        }
    }
    Ok(out)
}

/// Per-column mean and population sd of a training set. Zero-variance
/// columns get sd 1 and are reported in `degenerate_columns`.
pub fn fit_standardizer(train: &FeatureDataset) -> Result<Standardization> {
    if train.n_windows() == 0 {
        return Err(Error::EmptyInput("cannot fit a standardizer on zero rows"));
    }
    let mut mean = Vec::with_capacity(train.n_features());
    let mut sd = Vec::with_capacity(train.n_features());
    let mut degenerate = Vec::new();
    for (j, col) in train.matrix.columns().into_iter().enumerate() {
        let values: Vec<f64> = col.to_vec();
        let m = Moments::of(&values);
        let s = m.m2.sqrt();
        mean.push(m.mean);
        if s > 0.0 && s.is_finite() {
            sd.push(s);
        } else {
            let name = train.feature_names.get(j).map(String::as_str).unwrap_or("?");
            log::warn!("feature column {j} ({name}) has zero variance; using sd = 1");
            degenerate.push(j);
            sd.push(1.0);
        }
    }
    Ok(Standardization {
        mean,
        sd,
        degenerate_columns: degenerate,
    })
}

pub fn apply_standardizer(data: &FeatureDataset, params: &Standardization) -> Result<FeatureDataset> {
    if data.n_features() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: data.n_features(),
        });
    }
    let mut out = data.clone();
    for mut row in out.matrix.rows_mut() {
        params.transform_row(row.as_slice_mut().expect("standard layout"));
    }
    out.standardization = Some(params.clone());
    Ok(out)
}

pub fn invert_standardizer(data: &FeatureDataset, params: &Standardization) -> Result<FeatureDataset> {
    if data.n_features() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: data.n_features(),
        });
    }
    let mut out = data.clone();
    for mut row in out.matrix.rows_mut() {
        for ((x, m), s) in row.iter_mut().zip(&params.mean).zip(&params.sd) {
            *x = *x * s + m;
        }
    }
    out.standardization = None;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::Source;
    use chrono::NaiveDate;
    use ndarray::array;

    fn frame_with(len: usize, fill: impl Fn(Channel, usize) -> f64) -> TimeSeriesFrame {
        TimeSeriesFrame {
            start: NaiveDate::from_ymd_opt(2018, 1, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            channels: Channel::ALL
                .iter()
                .map(|&c| (0..len).map(|i| fill(c, i)).collect())
                .collect(),
            labels: vec![0; len],
            source: Source::Twin,
        }
    }

    fn dataset(rows: Vec<Vec<f64>>) -> FeatureDataset {
        let n = rows.len();
        let d = rows[0].len();
        FeatureDataset {
            matrix: Array2::from_shape_vec((n, d), rows.concat()).unwrap(),
            labels: vec![false; n],
            window_start_indices: (0..n).collect(),
            standardization: None,
            feature_names: (0..d).map(|j| format!("f{j}")).collect(),
        }
    }

    #[test]
    fn window_count_two_days() {
        let f = frame_with(2880, |_, i| i as f64);
        let d = extract_windows(&f, &FeatureConfig::default()).unwrap();
        assert_eq!(d.n_windows(), 25);
        assert_eq!(d.n_features(), 6);
        assert_eq!(d.window_start_indices[24], 1440);
    }

    #[test]
    fn constant_channel_features() {
        let f = frame_with(1500, |_, _| 3.7);
        let d = extract_windows(&f, &FeatureConfig::default()).unwrap();
        for row in d.matrix.rows() {
            assert_eq!(row.to_vec(), vec![3.7, 0.0, 3.7, 0.0, 3.7, 0.0]);
        }
        let cfg = FeatureConfig {
            statistics: vec![Statistic::Skewness, Statistic::Kurtosis],
            ..FeatureConfig::default()
        };
        let d = extract_windows(&f, &cfg).unwrap();
        assert!(d.matrix.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_frame() {
        let f = frame_with(100, |_, _| 0.0);
        assert!(matches!(
            extract_windows(&f, &FeatureConfig::default()),
            Err(Error::FrameTooShort { .. })
        ));
    }

    #[test]
    fn any_sample_rule_for_labels() {
        let mut f = frame_with(1600, |_, _| 1.0);
        f.labels[1450] = 1;
        let cfg = FeatureConfig::default();
        let d = extract_windows(&f, &cfg).unwrap();
        // windows start at 0, 60, 120; sample 1450 lies in windows starting at 60 and 120
        assert_eq!(d.labels, vec![false, true, true]);
    }

    #[test]
    fn standardizer_examples() {
        let d = dataset(vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]);
        let p = fit_standardizer(&d).unwrap();
        assert!((p.mean[0] - 2.0).abs() < 1e-15);
        assert!((p.sd[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!((p.mean[1], p.sd[1]), (5.0, 1.0));
        assert_eq!(p.degenerate_columns, vec![1]);
        let z = apply_standardizer(&d, &p).unwrap();
        let expected = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z.matrix[[0, 0]] + expected).abs() < 1e-12);
        assert_eq!(z.matrix[[1, 0]], 0.0);
        assert!((z.matrix[[2, 0]] - expected).abs() < 1e-12);
        assert!((expected - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn standardizing_standardized_data_is_identity() {
        let d = dataset(vec![vec![1.0, -3.0], vec![2.0, 0.5], vec![4.0, 9.0], vec![-1.0, 2.0]]);
        let z = apply_standardizer(&d, &fit_standardizer(&d).unwrap()).unwrap();
        let again = fit_standardizer(&z).unwrap();
        for j in 0..2 {
            assert!(again.mean[j].abs() < 1e-12);
            assert!((again.sd[j] - 1.0).abs() < 1e-12);
        }
        let id = apply_standardizer(&d, &Standardization::identity(2)).unwrap();
        assert_eq!(id.matrix, d.matrix);
    }

    #[test]
    fn standardize_round_trip() {
        let d = dataset(vec![vec![10.5, -3.25], vec![2.0, 7.5], vec![4.0, 9.0]]);
        let p = fit_standardizer(&d).unwrap();
        let back = invert_standardizer(&apply_standardizer(&d, &p).unwrap(), &p).unwrap();
        for (a, b) in back.matrix.iter().zip(d.matrix.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let wrong = Standardization::identity(3);
        assert!(apply_standardizer(&d, &wrong).is_err());
    }

    #[test]
    fn season_one_hot() {
        assert_eq!(one_hot(season_index(1), 4), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(season_index(7), 2);
        assert_eq!(season_index(11), 3);
    }

    #[test]
    fn time_context_columns() {
        let cfg = FeatureConfig::default();
        let f = frame_with(2000, |_, _| 0.0);
        assert_eq!(encode_time_context(&f, &cfg).unwrap().ncols(), 0);

        // P_El: on for 100 minutes, off for 100, repeating
        let f = frame_with(1440, |c, i| {
            if c == Channel::PEl && (i / 100) % 2 == 0 {
                30.0
            } else {
                0.0
            }
        });
        let cfg = FeatureConfig {
            include_time_features: true,
            include_contextual_features: true,
            ..FeatureConfig::default()
        };
        let extra = encode_time_context(&f, &cfg).unwrap();
        // 2018-01-01 12:00 is a Monday in winter
        assert_eq!(extra.row(0).to_vec(), vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 7.0, 740.0]);

        let off = frame_with(1440, |_, _| 0.0);
        let extra = encode_time_context(&off, &cfg).unwrap();
        assert_eq!(extra.row(0).slice(ndarray::s![6..]).to_vec(), vec![0.0, 0.0]);
        let d = extract_windows(&off, &cfg).unwrap();
        assert_eq!(d.n_features(), 14);
        assert_eq!(d.feature_names.last().unwrap(), "working_minutes");
    }

    #[test]
    fn energy_channels_are_differenced() {
        let f = frame_with(1440, |c, i| if c == Channel::ETh { 2.0 * i as f64 } else { 0.0 });
        let cfg = FeatureConfig {
            variables: vec![Channel::ETh],
            ..FeatureConfig::default()
        };
        let d = extract_windows(&f, &cfg).unwrap();
        assert_eq!(d.row(0).to_vec(), vec![2.0, 0.0]);
    }

    #[test]
    fn write_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.csv");
        let d = dataset(vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        let mut d = d;
        d.labels[1] = true;
        d.matrix = array![[0.1, 0.2], [0.3, 1.0 / 3.0]];
        d.write(&path, &FeatureConfig::default()).unwrap();
        let (back, cfg) = FeatureDataset::read(&path).unwrap();
        assert_eq!(back, d);
        assert_eq!(cfg.unwrap(), FeatureConfig::default());
    }
}
