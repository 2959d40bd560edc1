//! Trace files: a JSON header carrying the resolved configuration and the
//! trial index, then one line per round, then one line per station.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use contention_core::engine::{write_station_summary, write_trace};
use contention_core::experiments::run_trial;
use contention_core::rng::trial_seed;
use contention_core::{Error, Result};

use crate::settings::Settings;

/// Renders the complete trace file of trial `trial` under `settings`.
pub fn render(settings: &Settings, keys: &[&str], trial: u64) -> Result<Vec<u8>> {
    let mut cfg = settings.experiment()?;
    cfg.record_traces = true;
    if trial >= cfg.trials as u64 {
        return Err(Error::Config(format!(
            "trace-trial {trial} out of range for {} trials",
            cfg.trials
        )));
    }
    let config: BTreeMap<&str, &str> = keys
        .iter()
        .filter_map(|k| settings.raw(k).map(|v| (*k, v)))
        .collect();
    let header = json!({
        "kind": "header",
        "config": config,
        "trial": trial,
        "trial_seed": trial_seed(cfg.master_seed, trial),
    });
    let rec = run_trial(&cfg, trial)?;
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    write_trace(rec.trace.as_ref().expect("trace recorded"), &mut out)?;
    write_station_summary(&rec, &mut out)?;
    Ok(out)
}

/// Re-executes the run described by a stored trace file. Returns the
/// regenerated bytes.
pub fn regenerate(stored: &[u8]) -> Result<Vec<u8>> {
    let first = stored.split(|&b| b == b'\n').next().unwrap_or_default();
    let header: Value = serde_json::from_slice(first)
        .map_err(|e| Error::MalformedTrace(format!("header line: {e}")))?;
    let config = header
        .get("config")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::MalformedTrace("header has no config object".into()))?;
    let trial = header
        .get("trial")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::MalformedTrace("header has no trial index".into()))?;
    let mut settings = Settings::default();
    let mut keys = Vec::new();
    for (k, v) in config {
        let v = v
            .as_str()
            .ok_or_else(|| Error::MalformedTrace(format!("config value of {k} is not a string")))?;
        settings.set(k, v)?;
        keys.push(k.as_str());
    }
    render(&settings, &keys, trial)
}

/// 1-based line number of the first difference, if any.
pub fn first_difference(a: &[u8], b: &[u8]) -> Option<usize> {
    if a == b {
        return None;
    }
    let la: Vec<&[u8]> = a.split(|&x| x == b'\n').collect();
    let lb: Vec<&[u8]> = b.split(|&x| x == b'\n').collect();
    let n = la.len().max(lb.len());
    (0..n).find(|&i| la.get(i) != lb.get(i)).map(|i| i + 1)
}
