//! Synthetic CHP plant: a clean digital-twin stream and a measured stream with
//! injected, labeled faults.
//!
//! The plant burns gas in a combined heat and power unit controlled by a
//! hysteresis thermostat on ambient temperature: it switches on when the
//! ambient drops below `on_threshold_degc` and off once it rises above
//! `off_threshold_degc`. While running, thermal and electrical output scale
//! with a load factor that grows as it gets colder.
//!
//! The measured ("real") stream reuses the twin's weather. Its site
//! temperature drifts slowly away from the twin's input, the real controller
//! acts on that site temperature, and every sensor adds a constant bias and
//! white noise. Cumulative energy meters and the flow/return difference are
//! derived from the measured primaries, so the coupling invariants hold
//! outside fault intervals.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
pub const MINUTES_PER_DAY: usize = 1440;

/// Heat capacity of water in kWh / (m^3 K).
const WATER_KWH_PER_M3K: f64 = 1.163;
/// Flow/return spread at nominal flux, in K.
const NOMINAL_SPREAD_K: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    Ta,
    #[serde(rename = "P_Th")]
    PTh,
    #[serde(rename = "E_Th")]
    ETh,
    #[serde(rename = "P_El")]
    PEl,
    #[serde(rename = "E_El")]
    EEl,
    Flux,
    #[serde(rename = "T_Flow")]
    TFlow,
    #[serde(rename = "T_Return")]
    TReturn,
    #[serde(rename = "T_Diff")]
    TDiff,
}

impl Channel {
    pub const ALL: [Channel; 9] = [
        Channel::Ta,
        Channel::PTh,
        Channel::ETh,
        Channel::PEl,
        Channel::EEl,
        Channel::Flux,
        Channel::TFlow,
        Channel::TReturn,
        Channel::TDiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Ta => "Ta",
            Channel::PTh => "P_Th",
            Channel::ETh => "E_Th",
            Channel::PEl => "P_El",
            Channel::EEl => "E_El",
            Channel::Flux => "Flux",
            Channel::TFlow => "T_Flow",
            Channel::TReturn => "T_Return",
            Channel::TDiff => "T_Diff",
        }
    }

    pub fn from_name(name: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Channels computed from other channels rather than sensed directly.
    pub fn is_derived(self) -> bool {
        matches!(self, Channel::ETh | Channel::EEl | Channel::TDiff)
    }

    pub fn is_cumulative(self) -> bool {
        matches!(self, Channel::ETh | Channel::EEl)
    }
}

/// One real value per channel; serialized as a `{"Ta": 0.3, ...}` map with
/// absent channels meaning zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "BTreeMap<Channel, f64>", into = "BTreeMap<Channel, f64>")]
pub struct PerChannel(pub [f64; 9]);

impl PerChannel {
    pub fn get(&self, c: Channel) -> f64 {
        self.0[c.index()]
    }

    pub fn with(mut self, c: Channel, v: f64) -> Self {
        self.0[c.index()] = v;
        self
    }
}

impl From<BTreeMap<Channel, f64>> for PerChannel {
    fn from(map: BTreeMap<Channel, f64>) -> Self {
        let mut out = PerChannel::default();
        for (c, v) in map {
            out.0[c.index()] = v;
        }
        out
    }
}

impl From<PerChannel> for BTreeMap<Channel, f64> {
    fn from(p: PerChannel) -> Self {
        Channel::ALL.into_iter().map(|c| (c, p.get(c))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnomalyKind {
    /// Stuck sensor: affected channels hold their last pre-event value.
    FlatLine,
    /// The unit produces nothing although it is cold enough to run.
    SemanticInconsistency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub kind: AnomalyKind,
    pub start_index: usize,
    pub length_minutes: usize,
    pub affected_channels: Vec<Channel>,
}

impl AnomalyEvent {
    pub fn end_index(&self) -> usize {
        self.start_index + self.length_minutes
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start_index..self.end_index()
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start_index < end && start < self.end_index()
    }
}

/// Ambient temperature: seasonal and diurnal sinusoids plus an
/// Ornstein-Uhlenbeck weather term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateModel {
    pub annual_mean_degc: f64,
    pub seasonal_amplitude_degc: f64,
    /// Day of year (0-based) with the lowest seasonal mean.
    pub coldest_day_of_year: f64,
    pub diurnal_amplitude_degc: f64,
    /// Relative day-to-day variation of the diurnal amplitude, in [0, 1).
    pub diurnal_amplitude_jitter: f64,
    pub weather_sd_degc: f64,
    pub weather_tau_minutes: f64,
}

/// Slow Ornstein-Uhlenbeck offset between the twin's weather input and the
/// temperature actually experienced at the site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    pub sd: f64,
    pub tau_minutes: f64,
}

/// Period during which the real plant's operator caps the load fraction.
/// The twin knows nothing about it, and it is normal operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curtailment {
    pub start_index: usize,
    pub length_minutes: usize,
    pub load_cap: f64,
}

/// Sub-range of the simulated period, in minutes from `start_time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub offset_minutes: usize,
    pub duration_minutes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub seed: u64,
    pub start_time: NaiveDateTime,
    pub duration_minutes: usize,
    pub sample_period_minutes: usize,
    pub on_threshold_degc: f64,
    pub off_threshold_degc: f64,
    pub rated_thermal_kw: f64,
    pub rated_electrical_kw: f64,
    /// Load fraction at and above `load_reference_degc`.
    pub min_load_fraction: f64,
    pub load_reference_degc: f64,
    /// Load fraction gained per degree below the reference.
    pub load_slope_per_degc: f64,
    pub climate: ClimateModel,
    pub sensor_noise_sd: PerChannel,
    pub twin_bias: PerChannel,
    pub ambient_drift: DriftModel,
    /// Portion of the simulated period that serves as twin training data;
    /// `None` means all of it.
    #[serde(default)]
    pub twin_span: Option<Span>,
    #[serde(default)]
    pub curtailments: Vec<Curtailment>,
    pub anomaly_spec: Vec<AnomalyEvent>,
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.duration_minutes == 0 {
            return Err(Error::config("duration_minutes must be positive"));
        }
        if self.sample_period_minutes != 1 {
            return Err(Error::config("only a 1 minute sample period is supported"));
        }
        if !(self.on_threshold_degc <= self.off_threshold_degc) {
            return Err(Error::config(
                "on_threshold_degc must not exceed off_threshold_degc",
            ));
        }
        if !(self.rated_thermal_kw > 0.0 && self.rated_electrical_kw > 0.0) {
            return Err(Error::config("rated powers must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_load_fraction) {
            return Err(Error::config("min_load_fraction must lie in [0, 1]"));
        }
        for c in Channel::ALL {
            let sd = self.sensor_noise_sd.get(c);
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(Error::config(format!("sensor_noise_sd[{}] must be >= 0", c.name())));
            }
            if c.is_derived() && (sd != 0.0 || self.twin_bias.get(c) != 0.0) {
                return Err(Error::config(format!(
                    "{} is derived from other channels and takes no noise or bias",
                    c.name()
                )));
            }
        }
        if self.ambient_drift.sd < 0.0 || self.climate.weather_sd_degc < 0.0 {
            return Err(Error::config("standard deviations must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.climate.diurnal_amplitude_jitter) {
            return Err(Error::config("diurnal_amplitude_jitter must lie in [0, 1)"));
        }
        if let Some(span) = self.twin_span {
            if span.duration_minutes == 0
                || span.offset_minutes + span.duration_minutes > self.duration_minutes
            {
                return Err(Error::config("twin_span must lie inside the simulated period"));
            }
        }
        for c in &self.curtailments {
            if !(0.0..=1.0).contains(&c.load_cap) {
                return Err(Error::config("curtailment load_cap must lie in [0, 1]"));
            }
            if c.start_index + c.length_minutes > self.duration_minutes {
                return Err(Error::config("curtailments must lie inside the simulated period"));
            }
        }
        let mut events: Vec<&AnomalyEvent> = self.anomaly_spec.iter().collect();
        events.sort_by_key(|e| e.start_index);
        for e in &events {
            if e.length_minutes == 0 {
                return Err(Error::config("anomaly events need length >= 1"));
            }
            if e.affected_channels.is_empty() {
                return Err(Error::config("anomaly events need affected channels"));
            }
        }
        for pair in events.windows(2) {
            if pair[1].start_index < pair[0].end_index() {
                return Err(Error::OverlappingEvents(pair[1].start_index));
            }
        }
        Ok(())
    }

    pub fn load_fraction(&self, ambient: f64) -> f64 {
        (self.min_load_fraction + self.load_slope_per_degc * (self.load_reference_degc - ambient))
            .clamp(self.min_load_fraction, 1.0)
    }

    pub fn end_time(&self) -> NaiveDateTime {
        self.start_time + Duration::minutes(self.duration_minutes as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Twin,
    Real,
}

/// Minute-resolution multichannel record with per-sample labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    pub start: NaiveDateTime,
    /// Indexed by [`Channel::index`].
    pub channels: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub source: Source,
}

impl TimeSeriesFrame {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channel(&self, c: Channel) -> &[f64] {
        &self.channels[c.index()]
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + Duration::minutes(i as i64)
    }

    pub fn anomalous_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&l| l == 1).count() as f64 / self.len() as f64
    }

    pub fn slice(&self, offset: usize, len: usize) -> Result<TimeSeriesFrame> {
        if offset + len > self.len() {
            return Err(Error::NotEnoughSamples {
                what: "frame slice",
                requested: offset + len,
                available: self.len(),
            });
        }
        Ok(TimeSeriesFrame {
            start: self.timestamp(offset),
            channels: self
                .channels
                .iter()
                .map(|c| c[offset..offset + len].to_vec())
                .collect(),
            labels: self.labels[offset..offset + len].to_vec(),
            source: self.source,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(BufWriter::new(file))
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp"];
        header.extend(Channel::ALL.iter().map(|c| c.name()));
        header.push("label");
        w.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            row.clear();
            row.push(self.timestamp(i).format(TIMESTAMP_FORMAT).to_string());
            row.extend(self.channels.iter().map(|c| c[i].to_string()));
            row.push(self.labels[i].to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, source: Source) -> Result<TimeSeriesFrame> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv_from(BufReader::new(file), source)
    }

    pub fn read_csv_from<R: std::io::Read>(reader: R, source: Source) -> Result<TimeSeriesFrame> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let expected: Vec<&str> = std::iter::once("timestamp")
            .chain(Channel::ALL.iter().map(|c| c.name()))
            .chain(std::iter::once("label"))
            .collect();
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Format {
                what: "frame csv header",
                detail: format!("expected {}", expected.join(",")),
            });
        }
        let bad = |detail: String| Error::Format {
            what: "frame csv",
            detail,
        };
        let mut start = None;
        let mut channels = vec![Vec::new(); Channel::ALL.len()];
        let mut labels = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let ts = NaiveDateTime::parse_from_str(&rec[0], TIMESTAMP_FORMAT)
                .map_err(|e| bad(format!("row {i}: {e}")))?;
            let first = *start.get_or_insert(ts);
            if ts != first + Duration::minutes(i as i64) {
                return Err(bad(format!("row {i}: timestamps must advance by one minute")));
            }
            for (c, values) in channels.iter_mut().enumerate() {
                let v: f64 = rec[c + 1]
                    .parse()
                    .map_err(|e| bad(format!("row {i}: {e}")))?;
                values.push(v);
            }
            let label: u8 = rec[Channel::ALL.len() + 1]
                .parse()
                .map_err(|e| bad(format!("row {i}: {e}")))?;
            if label > 1 {
                return Err(bad(format!("row {i}: label must be 0 or 1")));
            }
            labels.push(label);
        }
        let start = start.ok_or(Error::EmptyInput("frame csv has no rows"))?;
        Ok(TimeSeriesFrame {
            start,
            channels,
            labels,
            source,
        })
    }
}

/// Independent random streams derived from one seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_WEATHER: u64 = 1;
const STREAM_DIURNAL: u64 = 2;
const STREAM_DRIFT: u64 = 3;
const STREAM_SENSOR: u64 = 4;

/// Ornstein-Uhlenbeck path sampled once per minute, started from its
/// stationary distribution.
fn ou_path(n: usize, sd: f64, tau_minutes: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if sd == 0.0 {
        return vec![0.0; n];
    }
    let a = (-1.0 / tau_minutes.max(1e-9)).exp();
    let innovation = sd * (1.0 - a * a).sqrt();
    let mut x: f64 = sd * rng.sample::<f64, _>(StandardNormal);
    (0..n)
        .map(|_| {
            let out = x;
            x = a * x + innovation * rng.sample::<f64, _>(StandardNormal);
            out
        })
        .collect()
}

fn ambient_series(config: &PlantConfig) -> Vec<f64> {
    let n = config.duration_minutes;
    let c = &config.climate;
    let weather = ou_path(
        n,
        c.weather_sd_degc,
        c.weather_tau_minutes,
        &mut stream(config.seed, STREAM_WEATHER),
    );
    // one diurnal amplitude per day (plus one), linearly interpolated
    let days = n / MINUTES_PER_DAY + 2;
    let mut rng = stream(config.seed, STREAM_DIURNAL);
    let amplitudes: Vec<f64> = (0..days)
        .map(|_| {
            let u: f64 = rng.random_range(-1.0..=1.0);
            c.diurnal_amplitude_degc * (1.0 + c.diurnal_amplitude_jitter * u)
        })
        .collect();
    let start_minute_of_day = config.start_time.num_seconds_from_midnight() as usize / 60;
    (0..n)
        .map(|i| {
            let t = config.start_time + Duration::minutes(i as i64);
            let day_of_year = t.ordinal0() as f64 + t.num_seconds_from_midnight() as f64 / 86_400.0;
            let seasonal = -c.seasonal_amplitude_degc
                * (2.0 * PI * (day_of_year - c.coldest_day_of_year) / 365.25).cos();
            let since_start = start_minute_of_day + i;
            let day = since_start / MINUTES_PER_DAY;
            let frac = (since_start % MINUTES_PER_DAY) as f64 / MINUTES_PER_DAY as f64;
            let amp = amplitudes[day] * (1.0 - frac) + amplitudes[day + 1] * frac;
            // coldest at 03:00, warmest at 15:00
            let minute_of_day = (since_start % MINUTES_PER_DAY) as f64;
            let diurnal = -amp * (2.0 * PI * (minute_of_day - 180.0) / MINUTES_PER_DAY as f64).cos();
            c.annual_mean_degc + seasonal + diurnal + weather[i]
        })
        .collect()
}

/// Hysteresis controller state for every minute.
fn controller(config: &PlantConfig, ambient: &[f64]) -> Vec<bool> {
    let mut on = ambient.first().is_some_and(|&t| t < config.on_threshold_degc);
    ambient
        .iter()
        .map(|&t| {
            if t < config.on_threshold_degc {
                on = true;
            } else if t > config.off_threshold_degc {
                on = false;
            }
            on
        })
        .collect()
}

fn return_temperature(ambient: f64) -> f64 {
    (40.0 + 0.4 * (10.0 - ambient)).clamp(30.0, 50.0)
}

/// Noise-free primary channels of the plant driven by `ambient`.
struct PlantState {
    p_th: Vec<f64>,
    p_el: Vec<f64>,
    flux: Vec<f64>,
    t_flow: Vec<f64>,
    t_return: Vec<f64>,
}

fn simulate_plant(config: &PlantConfig, ambient: &[f64], load_cap: &[f64]) -> PlantState {
    let on = controller(config, ambient);
    let nominal_flux = config.rated_thermal_kw / (WATER_KWH_PER_M3K * NOMINAL_SPREAD_K);
    let n = ambient.len();
    let mut s = PlantState {
        p_th: Vec::with_capacity(n),
        p_el: Vec::with_capacity(n),
        flux: Vec::with_capacity(n),
        t_flow: Vec::with_capacity(n),
        t_return: Vec::with_capacity(n),
    };
    for ((&t, &running), &cap) in ambient.iter().zip(&on).zip(load_cap) {
        let t_return = return_temperature(t);
        let (p_th, p_el, flux, spread) = if running && cap > 0.0 {
            let load = config.load_fraction(t).min(cap);
            let p_th = config.rated_thermal_kw * load;
            let flux = nominal_flux * load;
            (
                p_th,
                config.rated_electrical_kw * load,
                flux,
                p_th / (WATER_KWH_PER_M3K * flux),
            )
        } else {
            (0.0, 0.0, 0.0, 0.0)
        };
        s.p_th.push(p_th);
        s.p_el.push(p_el);
        s.flux.push(flux);
        s.t_return.push(t_return);
        s.t_flow.push(t_return + spread);
    }
    s
}

fn is_new_year(t: NaiveDateTime) -> bool {
    t.ordinal0() == 0 && t.num_seconds_from_midnight() == 0
}

/// Cumulative energy in kWh of a power series in kW sampled each minute;
/// the meter restarts at every new year.
fn cumulative_energy(start: NaiveDateTime, power: &[f64]) -> Vec<f64> {
    let mut total = 0.0;
    power
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if i > 0 && is_new_year(start + Duration::minutes(i as i64)) {
                total = 0.0;
            }
            total += p / 60.0;
            total
        })
        .collect()
}

fn assemble(
    start: NaiveDateTime,
    ta: Vec<f64>,
    p_th: Vec<f64>,
    p_el: Vec<f64>,
    flux: Vec<f64>,
    t_flow: Vec<f64>,
    t_return: Vec<f64>,
) -> Vec<Vec<f64>> {
    let e_th = cumulative_energy(start, &p_th);
    let e_el = cumulative_energy(start, &p_el);
    let t_diff = t_flow.iter().zip(&t_return).map(|(f, r)| f - r).collect();
    vec![ta, p_th, e_th, p_el, e_el, flux, t_flow, t_return, t_diff]
}

/// Simulates the plant with clean inputs; every label is 0.
pub fn generate_twin(config: &PlantConfig) -> Result<TimeSeriesFrame> {
    config.validate()?;
    let ambient = ambient_series(config);
    let s = simulate_plant(config, &ambient, &vec![1.0; ambient.len()]);
    let n = ambient.len();
    Ok(TimeSeriesFrame {
        start: config.start_time,
        channels: assemble(
            config.start_time,
            ambient,
            s.p_th,
            s.p_el,
            s.flux,
            s.t_flow,
            s.t_return,
        ),
        labels: vec![0; n],
        source: Source::Twin,
    })
}

/// Derives the measured stream from the twin run of the same config.
pub fn generate_real(config: &PlantConfig, twin: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    config.validate()?;
    let n = config.duration_minutes;
    if twin.source != Source::Twin || twin.len() != n || twin.start != config.start_time {
        return Err(Error::config("twin frame was not generated from this config"));
    }
    for e in &config.anomaly_spec {
        if e.end_index() > n {
            return Err(Error::EventOutOfRange {
                start: e.start_index,
                end: e.end_index(),
                len: n,
            });
        }
    }

    let drift = ou_path(
        n,
        config.ambient_drift.sd,
        config.ambient_drift.tau_minutes,
        &mut stream(config.seed, STREAM_DRIFT),
    );
    let site: Vec<f64> = twin
        .channel(Channel::Ta)
        .iter()
        .zip(&drift)
        .map(|(t, d)| t + d)
        .collect();
    let mut load_cap = vec![1.0; n];
    for c in &config.curtailments {
        load_cap[c.start_index..c.start_index + c.length_minutes].fill(c.load_cap);
    }
    let s = simulate_plant(config, &site, &load_cap);

    let mut rng = stream(config.seed, STREAM_SENSOR);
    let bias = &config.twin_bias;
    let sd = &config.sensor_noise_sd;
    let mut noise = |c: Channel| -> f64 {
        let sigma = sd.get(c);
        if sigma == 0.0 {
            0.0
        } else {
            sigma * rng.sample::<f64, _>(StandardNormal)
        }
    };

    let mut ta = Vec::with_capacity(n);
    let mut p_th = Vec::with_capacity(n);
    let mut p_el = Vec::with_capacity(n);
    let mut flux = Vec::with_capacity(n);
    let mut t_flow = Vec::with_capacity(n);
    let mut t_return = Vec::with_capacity(n);
    for i in 0..n {
        ta.push(site[i] + bias.get(Channel::Ta) + noise(Channel::Ta));
        // meters read exactly zero while the unit is off
        let metered = |v: f64, c: Channel, noise: &mut dyn FnMut(Channel) -> f64| {
            if v > 0.0 {
                (v + bias.get(c) + noise(c)).max(0.0)
            } else {
                0.0
            }
        };
        p_th.push(metered(s.p_th[i], Channel::PTh, &mut noise));
        p_el.push(metered(s.p_el[i], Channel::PEl, &mut noise));
        flux.push(metered(s.flux[i], Channel::Flux, &mut noise));
        let r = s.t_return[i] + bias.get(Channel::TReturn) + noise(Channel::TReturn);
        let f = if s.flux[i] > 0.0 {
            s.t_flow[i] + bias.get(Channel::TFlow) + noise(Channel::TFlow)
        } else {
            r
        };
        t_return.push(r);
        t_flow.push(f);
    }

    let mut labels = vec![0u8; n];
    for e in &config.anomaly_spec {
        labels[e.range()].fill(1);
    }

    for e in config
        .anomaly_spec
        .iter()
        .filter(|e| e.kind == AnomalyKind::SemanticInconsistency)
    {
        for i in e.range() {
            if ta[i] >= config.on_threshold_degc {
                continue;
            }
            for &c in &e.affected_channels {
                match c {
                    Channel::PTh => p_th[i] = 0.0,
                    Channel::PEl => p_el[i] = 0.0,
                    Channel::Flux => flux[i] = 0.0,
                    Channel::TFlow => t_flow[i] = t_return[i],
                    _ => {}
                }
            }
        }
    }

    let mut channels = assemble(config.start_time, ta, p_th, p_el, flux, t_flow, t_return);

    for e in config
        .anomaly_spec
        .iter()
        .filter(|e| e.kind == AnomalyKind::FlatLine)
    {
        for &c in &e.affected_channels {
            let values = &mut channels[c.index()];
            let held = values[e.start_index.saturating_sub(1)];
            values[e.range()].fill(held);
        }
    }

    Ok(TimeSeriesFrame {
        start: config.start_time,
        channels,
        labels,
        source: Source::Real,
    })
}

/// Twin training portion of a twin frame covering the whole simulated period.
pub fn twin_training_frame(config: &PlantConfig, twin: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    match config.twin_span {
        Some(span) => twin.slice(span.offset_minutes, span.duration_minutes),
        None => Ok(twin.clone()),
    }
}

fn days(d: f64) -> usize {
    (d * MINUTES_PER_DAY as f64).round() as usize
}

/// The frozen benchmark plant.
///
/// The measured stream spans 457 days from 2017-11-01 (10945 hourly-stride
/// day windows); the twin training portion is the calendar year 2018 (8737
/// windows). A two-month winter logger freeze and eighteen multi-day
/// "cold but idle" episodes make up about 22% of the measured samples and
/// 27% of the windows. Five load curtailments and a slow site temperature
/// drift are normal behavior the twin does not reproduce.
pub fn benchmark_config() -> PlantConfig {
    let start = NaiveDate::from_ymd_opt(2017, 11, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date");
    let logger_freeze = vec![
        Channel::Ta,
        Channel::PTh,
        Channel::ETh,
        Channel::PEl,
        Channel::EEl,
        Channel::Flux,
        Channel::TFlow,
        Channel::TReturn,
        Channel::TDiff,
    ];
    let idle = vec![Channel::PTh, Channel::PEl, Channel::Flux, Channel::TFlow];
    let flat = |start_day: f64, len_days: f64| AnomalyEvent {
        kind: AnomalyKind::FlatLine,
        start_index: days(start_day),
        length_minutes: days(len_days),
        affected_channels: logger_freeze.clone(),
    };
    let inconsistent = |start_day: f64, len_days: f64| AnomalyEvent {
        kind: AnomalyKind::SemanticInconsistency,
        start_index: days(start_day),
        length_minutes: days(len_days),
        affected_channels: idle.clone(),
    };
    // day offsets from 2017-11-01; the flat line covers mid Dec to mid Feb
    let anomaly_spec = vec![
        inconsistent(3.2, 2.4),
        inconsistent(11.5, 2.0),
        inconsistent(19.8, 2.8),
        inconsistent(31.1, 2.2),
        inconsistent(42.6, 2.6),
        inconsistent(55.3, 1.9),
        flat(60.0, 60.0),
        inconsistent(128.5, 2.0),
        inconsistent(141.3, 2.6),
        inconsistent(153.6, 2.2),
        inconsistent(167.0, 2.4),
        inconsistent(333.8, 2.6),
        inconsistent(347.2, 2.3),
        inconsistent(360.9, 2.8),
        inconsistent(378.4, 2.2),
        inconsistent(394.1, 2.5),
        inconsistent(409.6, 2.0),
        inconsistent(424.3, 2.7),
        inconsistent(439.8, 2.4),
    ];
    // operator-imposed load limits the twin knows nothing about
    let curtail = |start_day: f64, len_days: f64, load_cap: f64| Curtailment {
        start_index: days(start_day),
        length_minutes: days(len_days),
        load_cap,
    };
    let curtailments = vec![
        curtail(36.0, 5.0, 0.7),
        curtail(133.0, 3.0, 0.6),
        curtail(385.0, 5.0, 0.65),
        curtail(415.0, 5.0, 0.7),
        curtail(445.0, 4.0, 0.65),
    ];
    PlantConfig {
        seed: 2018,
        start_time: start,
        duration_minutes: 457 * MINUTES_PER_DAY,
        sample_period_minutes: 1,
        on_threshold_degc: 12.0,
        off_threshold_degc: 16.0,
        rated_thermal_kw: 100.0,
        rated_electrical_kw: 50.0,
        min_load_fraction: 0.55,
        load_reference_degc: 15.0,
        load_slope_per_degc: 0.03,
        climate: ClimateModel {
            annual_mean_degc: 10.0,
            seasonal_amplitude_degc: 9.0,
            coldest_day_of_year: 14.0,
            diurnal_amplitude_degc: 4.0,
            diurnal_amplitude_jitter: 0.5,
            weather_sd_degc: 3.5,
            weather_tau_minutes: 3.0 * MINUTES_PER_DAY as f64,
        },
        sensor_noise_sd: PerChannel::default()
            .with(Channel::Ta, 0.3)
            .with(Channel::PTh, 1.5)
            .with(Channel::PEl, 0.8)
            .with(Channel::Flux, 0.05)
            .with(Channel::TFlow, 0.2)
            .with(Channel::TReturn, 0.2),
        twin_bias: PerChannel::default()
            .with(Channel::Ta, 0.4)
            .with(Channel::PTh, 1.5)
            .with(Channel::PEl, 0.8)
            .with(Channel::Flux, 0.03)
            .with(Channel::TFlow, 0.3)
            .with(Channel::TReturn, -0.2),
        ambient_drift: DriftModel {
            sd: 2.0,
            tau_minutes: MINUTES_PER_DAY as f64,
        },
        curtailments,
        twin_span: Some(Span {
            offset_minutes: 61 * MINUTES_PER_DAY,
            duration_minutes: 365 * MINUTES_PER_DAY,
        }),
        anomaly_spec,
    }
}

/// A 60-day variant of [`benchmark_config`] for quick experiments: one
/// logger freeze, five idle episodes, one curtailment. The twin covers the
/// whole period.
pub fn demo_config() -> PlantConfig {
    let mut c = benchmark_config();
    c.start_time = NaiveDate::from_ymd_opt(2017, 12, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date");
    c.duration_minutes = 60 * MINUTES_PER_DAY;
    c.twin_span = None;
    let flat = c.anomaly_spec.iter().find(|e| e.kind == AnomalyKind::FlatLine).cloned();
    let idle = c.anomaly_spec.iter().find(|e| e.kind == AnomalyKind::SemanticInconsistency).cloned();
    let (flat, idle) = (flat.expect("benchmark has a flat line"), idle.expect("benchmark has idle episodes"));
    let mut events = vec![AnomalyEvent {
        start_index: days(10.0),
        length_minutes: days(4.0),
        ..flat
    }];
    for start in [3.0, 21.5, 30.2, 42.0, 51.3] {
        events.push(AnomalyEvent {
            start_index: days(start),
            length_minutes: days(2.0),
            ..idle.clone()
        });
    }
    c.anomaly_spec = events;
    c.curtailments = vec![Curtailment {
        start_index: days(35.0),
        length_minutes: days(3.0),
        load_cap: 0.7,
    }];
    c
}
