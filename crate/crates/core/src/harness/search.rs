//! Coordinate-wise line search over experiment settings.
//!
//! Each dimension names a field of the serialized [`ExperimentConfig`] by
//! JSON pointer (`/model/sae/margin`, `/features/window_length_minutes`)
//! and lists candidate values. One pass visits every dimension in order,
//! tries each candidate with the others held at their current best, and
//! keeps the winner. Ties go to the earliest candidate. A candidate whose
//! config is invalid or whose objective fails is recorded and skipped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{run_experiments, EvalPartition, ExperimentConfig, PreparedData};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub pointer: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dimensions: Vec<Dimension>,
}

impl SearchSpace {
    pub fn validate(&self, base: &ExperimentConfig) -> Result<()> {
        let json = serde_json::to_value(base)?;
        for d in &self.dimensions {
            if d.values.is_empty() {
                return Err(Error::config(format!("dimension {} has no values", d.pointer)));
            }
            if json.pointer(&d.pointer).is_none() {
                return Err(Error::config(format!("{} does not name a config field", d.pointer)));
            }
        }
        Ok(())
    }
}

/// One evaluated (or failed) candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub pass: usize,
    pub pointer: String,
    /// Candidate value as compact JSON.
    pub value: String,
    pub objective: Option<f64>,
    pub error: Option<String>,
    pub selected: bool,
}

/// Returns `base` with the field at `pointer` replaced by `value`.
pub fn with_value(base: &ExperimentConfig, pointer: &str, value: &Value) -> Result<ExperimentConfig> {
    let mut json = serde_json::to_value(base)?;
    let slot = json
        .pointer_mut(pointer)
        .ok_or_else(|| Error::config(format!("{pointer} does not name a config field")))?;
    *slot = value.clone();
    let config: ExperimentConfig = serde_json::from_value(json)?;
    config.validate()?;
    Ok(config)
}

/// Runs `passes` passes and returns the best config with the full trace.
/// The objective is maximized; identical configs are evaluated once.
pub fn line_search<F>(
    space: &SearchSpace,
    base: &ExperimentConfig,
    passes: usize,
    mut objective: F,
) -> Result<(ExperimentConfig, Vec<TraceEntry>)>
where
    F: FnMut(&ExperimentConfig) -> Result<f64>,
{
    space.validate(base)?;
    let mut best = base.clone();
    let mut trace = Vec::new();
    let mut cache: BTreeMap<String, std::result::Result<f64, String>> = BTreeMap::new();
    for pass in 0..passes {
        for dim in &space.dimensions {
            let mut winner: Option<(usize, f64, ExperimentConfig)> = None;
            let first = trace.len();
            for value in &dim.values {
                let outcome = with_value(&best, &dim.pointer, value).and_then(|cfg| {
                    let key = serde_json::to_string(&cfg)?;
                    let r = cache
                        .entry(key)
                        .or_insert_with(|| objective(&cfg).map_err(|e| e.to_string()))
                        .clone();
                    Ok((cfg, r))
                });
                let mut entry = TraceEntry {
                    pass,
                    pointer: dim.pointer.clone(),
                    value: value.to_string(),
                    objective: None,
                    error: None,
                    selected: false,
                };
                match outcome {
                    Ok((cfg, Ok(v))) if v.is_finite() => {
                        entry.objective = Some(v);
                        if winner.as_ref().is_none_or(|(_, b, _)| v > *b) {
                            winner = Some((trace.len(), v, cfg));
                        }
                    }
                    Ok((_, Ok(v))) => entry.error = Some(format!("non-finite objective {v}")),
                    Ok((_, Err(e))) => entry.error = Some(e),
                    Err(e) => entry.error = Some(e.to_string()),
                }
                if let Some(err) = &entry.error {
                    log::warn!("search candidate {}={} failed: {err}", dim.pointer, entry.value);
                }
                trace.push(entry);
            }
            match winner {
                Some((i, _, cfg)) => {
                    trace[i].selected = true;
                    best = cfg;
                }
                None => {
                    return Err(Error::config(format!(
                        "every candidate of {} failed (pass {pass}, trace rows {first}..{})",
                        dim.pointer,
                        trace.len()
                    )))
                }
            }
        }
    }
    Ok((best, trace))
}

/// Datasets keyed by their plant and feature settings.
#[derive(Debug, Default)]
pub struct DataCache {
    entries: BTreeMap<String, PreparedData>,
}

impl DataCache {
    pub fn get(&mut self, config: &ExperimentConfig) -> Result<&PreparedData> {
        let key = serde_json::to_string(&(&config.plant, &config.features))?;
        if !self.entries.contains_key(&key) {
            let data = PreparedData::generate(&config.plant, &config.features)?;
            self.entries.insert(key.clone(), data);
        }
        Ok(&self.entries[&key])
    }
}

/// Mean average precision over the config's seeds on the measured
/// validation part. Fails if any seed fails.
pub fn validation_objective(cache: &mut DataCache, config: &ExperimentConfig) -> Result<f64> {
    let data = cache.get(config)?;
    let suite = run_experiments(data, std::slice::from_ref(config), EvalPartition::Validation);
    if let Some(f) = suite.failures.first() {
        return Err(Error::config(format!("seed {} failed: {}", f.seed, f.error)));
    }
    let aps: Vec<f64> = suite.outcomes.iter().map(|o| o.report.ap).collect();
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
