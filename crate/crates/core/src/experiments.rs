//! Monte Carlo harness: trial batches, latency and energy extraction,
//! high-probability fractions, scaling checks against asymptotic bounds and
//! the lower-bound blocking experiment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    blocking_instance, verify_sigma_hat, AdversarySpec, BlockingInstanceConfig, BlockingVariant,
    SigmaCheck,
};
use crate::engine::{default_max_rounds, run_simulation, SimConfig, TrialRecord};
use crate::error::{Error, Result};
use crate::protocol::nonadaptive::{AckMode, NonAdaptiveFactory, SublinearSchedule};
use crate::protocol::ProtocolSpec;
use crate::rng::{adversary_rng, trial_seed};
use crate::stats::{wilson_interval, Quantiles};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocol: ProtocolSpec,
    pub adversary: AdversarySpec,
    pub k: u32,
    pub trials: u32,
    pub master_seed: u64,
    /// Defaults to [`default_max_rounds`].
    pub max_rounds: Option<u64>,
    /// Target exponent for whp reporting: success probability `1 − 1/k^η`.
    pub eta: f64,
    pub record_traces: bool,
}

impl ExperimentConfig {
    pub fn new(protocol: ProtocolSpec, adversary: AdversarySpec, k: u32, trials: u32, master_seed: u64) -> Self {
        Self {
            protocol,
            adversary,
            k,
            trials,
            master_seed,
            max_rounds: None,
            eta: 1.0,
            record_traces: false,
        }
    }

    pub fn with_traces(mut self, on: bool) -> Self {
        self.record_traces = on;
        self
    }

    pub fn resolved_max_rounds(&self) -> u64 {
        self.max_rounds.unwrap_or_else(|| default_max_rounds(self.k))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if self.max_rounds == Some(0) {
            return Err(Error::Config("max-rounds must be at least 1".into()));
        }
        match &self.protocol {
            ProtocolSpec::Nak { k, c } => {
                if *k < 4 {
                    return Err(Error::Config(format!("nak needs known k ≥ 4, got {k}")));
                }
                if *c == 0 {
                    return Err(Error::Config("c must be positive".into()));
                }
            }
            ProtocolSpec::Sublinear { b, .. } if *b == 0 => {
                return Err(Error::Config("b must be positive".into()));
            }
            ProtocolSpec::DecreaseSlowly { q } if !(*q > 0.0) => {
                return Err(Error::Config("q must be positive".into()));
            }
            ProtocolSpec::Adaptive(p) if !(p.q > 0.0) || p.sawtooth_initial_phase == 0 => {
                return Err(Error::Config("adaptive needs q > 0 and phase ≥ 1".into()));
            }
            ProtocolSpec::Sawtooth { initial_phase } => {
                if *initial_phase == 0 {
                    return Err(Error::Config("sawtooth phase must be at least 1".into()));
                }
                if !self.adversary.is_batch() {
                    return Err(Error::Config(
                        "sawtooth assumes synchronized stations; use the batch adversary".into(),
                    ));
                }
            }
            _ => {}
        }
        if matches!(self.adversary, AdversarySpec::Blocking { .. }) && self.protocol.schedule().is_none() {
            return Err(Error::Config("blocking adversaries attack non-adaptive protocols only".into()));
        }
        Ok(())
    }
}

/// Runs trial `index` of the batch described by `cfg`.
pub fn run_trial(cfg: &ExperimentConfig, index: u64) -> Result<TrialRecord> {
    let seed = trial_seed(cfg.master_seed, index);
    let p1 = cfg.protocol.schedule().map(|s| s.probability(1));
    let mut adversary = cfg.adversary.prepare(cfg.k, p1, &mut adversary_rng(seed))?;
    let sim = SimConfig {
        k: cfg.k,
        max_rounds: cfg.resolved_max_rounds(),
        seed,
        record_trace: cfg.record_traces,
    };
    run_simulation(&cfg.protocol.factory(), &mut adversary.source(), &sim)
}

/// Runs every trial of the batch; results are in trial order regardless of
/// how rayon schedules them.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    (0..cfg.trials as u64)
        .into_par_iter()
        .map(|i| run_trial(cfg, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Latencies {
    /// `first_success − activation` per station; `None` if it never succeeded.
    pub per_station: Vec<Option<u64>>,
    /// `None` stands for an infinite latency (incomplete trial).
    pub max: Option<u64>,
}

pub fn latency_of(trial: &TrialRecord) -> Latencies {
    let per_station: Vec<Option<u64>> = trial
        .stations
        .iter()
        .map(|s| s.first_success.map(|f| f - s.activation))
        .collect();
    let complete = trial.stations.len() as u32 == trial.k && per_station.iter().all(Option::is_some);
    let max = if complete {
        per_station.iter().flatten().copied().max()
    } else {
        None
    };
    Latencies { per_station, max }
}

/// Max latency as a float, infinite for incomplete trials.
pub fn max_latency(trial: &TrialRecord) -> f64 {
    latency_of(trial).max.map_or(f64::INFINITY, |m| m as f64)
}

/// Total number of transmissions.
pub fn energy_of(trial: &TrialRecord) -> u64 {
    trial.stations.iter().map(|s| s.transmissions).sum()
}

/// Last delivery minus first activation.
pub fn makespan_of(trial: &TrialRecord) -> f64 {
    let first = trial.stations.iter().map(|s| s.activation).min();
    let last = trial.stations.iter().map(|s| s.first_success).max().flatten();
    match (first, last, latency_of(trial).max) {
        (Some(a), Some(b), Some(_)) => (b - a) as f64,
        _ => f64::INFINITY,
    }
}

/// Rounds from the first activation to the first success on the channel.
pub fn wakeup_time(trial: &TrialRecord) -> f64 {
    let first = trial.stations.iter().map(|s| s.activation).min();
    match (first, trial.first_channel_success) {
        (Some(a), Some(s)) => (s - a) as f64,
        _ => f64::INFINITY,
    }
}

pub fn whp_fraction<P>(records: &[TrialRecord], predicate: P) -> f64
where
    P: Fn(&TrialRecord) -> bool,
{
    assert!(!records.is_empty(), "no trial records");
    records.iter().filter(|r| predicate(r)).count() as f64 / records.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub trials: usize,
    pub latency: Quantiles,
    pub energy: Quantiles,
    pub makespan: Quantiles,
    pub success_fraction: f64,
    /// 95% Wilson interval of `success_fraction`.
    pub success_interval: (f64, f64),
    /// The whp target `1 − 1/k^η`, for comparison.
    pub whp_target: f64,
}

pub fn summarize(records: &[TrialRecord], k: u32, eta: f64) -> SummaryStats {
    let lat: Vec<f64> = records.iter().map(max_latency).collect();
    let energy: Vec<f64> = records.iter().map(|r| energy_of(r) as f64).collect();
    let makespan: Vec<f64> = records.iter().map(makespan_of).collect();
    let ok = records.iter().filter(|r| r.completed).count();
    SummaryStats {
        trials: records.len(),
        latency: Quantiles::of(&lat),
        energy: Quantiles::of(&energy),
        makespan: Quantiles::of(&makespan),
        success_fraction: ok as f64 / records.len() as f64,
        success_interval: wilson_interval(ok, records.len(), 1.96),
        whp_target: 1.0 - (k as f64).powf(-eta),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub k: u32,
    pub metric: f64,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Largest metric/bound ratio over the grid.
    pub fitted_c: f64,
    /// Ratio at the smallest grid point.
    pub base_c: f64,
    /// max ratio / min ratio.
    pub spread: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares a measured metric with a bound function across a grid of `k`.
pub fn scaling_check<B>(points: &[(u32, f64)], bound: B, tolerance: f64) -> Result<ScalingReport>
where
    B: Fn(u32) -> f64,
{
    if points.len() < 3 {
        return Err(Error::Config(format!(
            "scaling check needs at least 3 grid points, got {}",
            points.len()
        )));
    }
    if points.windows(2).any(|w| w[1].0 < 2 * w[0].0) {
        return Err(Error::Config("each grid point must be at least twice the previous".into()));
    }
    let rows: Vec<ScalingRow> = points
        .iter()
        .map(|&(k, metric)| {
            let b = bound(k);
            ScalingRow {
                k,
                metric,
                bound: b,
                ratio: metric / b,
            }
        })
        .collect();
    let max = rows.iter().map(|r| r.ratio).fold(f64::MIN, f64::max);
    let min = rows.iter().map(|r| r.ratio).fold(f64::MAX, f64::min);
    let spread = max / min;
    Ok(ScalingReport {
        base_c: rows[0].ratio,
        fitted_c: max,
        spread,
        tolerance,
        pass: spread <= tolerance,
        rows,
    })
}

/// Asymptotic latency bound of a protocol as a function of `k`.
pub fn latency_bound(protocol: &ProtocolSpec) -> fn(u32) -> f64 {
    match protocol {
        ProtocolSpec::Sublinear {
            ack: AckMode::SwitchOffOnAck,
            ..
        } => |k| {
            let l = (k as f64).ln();
            k as f64 * l * l / l.ln()
        },
        ProtocolSpec::Sublinear {
            ack: AckMode::IgnoreAcks,
            ..
        } => |k| {
            let l = (k as f64).ln();
            k as f64 * l * l
        },
        _ => |k| k as f64,
    }
}

/// Asymptotic energy bound of a protocol as a function of `k`.
pub fn energy_bound(protocol: &ProtocolSpec) -> fn(u32) -> f64 {
    match protocol {
        ProtocolSpec::Nak { .. } => |k| k as f64 * (k as f64).log2(),
        _ => |k| {
            let l = (k as f64).log2();
            k as f64 * l * l
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockingExperiment {
    pub k: u32,
    pub gamma: f64,
    pub b: u64,
    pub trials: u32,
    pub master_seed: u64,
    pub variant: BlockingVariant,
    /// Phase-one horizon for the two-phase variant.
    pub t1: Option<u64>,
    pub t2: u64,
}

impl BlockingExperiment {
    pub fn front_loaded(k: u32, gamma: f64, b: u64, trials: u32, master_seed: u64) -> Self {
        Self {
            k,
            gamma,
            b,
            trials,
            master_seed,
            variant: BlockingVariant::FrontLoaded,
            t1: None,
            t2: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockingReport {
    pub threshold: f64,
    pub per_round: u64,
    /// Blocked window `[1, window_end]`.
    pub window_end: u64,
    pub sigma_hat_min: f64,
    pub sigma_hat_argmin: u64,
    /// `σ̂·e^(1−σ̂)` at the minimum, an upper bound on the per-round success
    /// probability.
    pub per_round_success_bound: f64,
    pub trials: u32,
    pub zero_success_fraction: f64,
}

/// Runs `SublinearDecrease(b)` against a blocking instance and measures how
/// often the channel stays without any success over the blocked window.
///
/// Fails with [`Error::Precondition`] when the instance does not keep σ̂ at
/// or above `γ·log₂k` over the window.
pub fn blocking_experiment(exp: &BlockingExperiment) -> Result<BlockingReport> {
    if !(exp.gamma > 0.0) {
        return Err(Error::Precondition(format!(
            "γ = {} gives a non-positive σ̂ threshold; nothing is blocked",
            exp.gamma
        )));
    }
    if exp.trials == 0 || exp.b == 0 {
        return Err(Error::Config("trials and b must be positive".into()));
    }
    let schedule = SublinearSchedule { b: exp.b };
    let cfg = BlockingInstanceConfig {
        k: exp.k,
        gamma: exp.gamma,
        p1: crate::protocol::nonadaptive::sublinear_probability(1, exp.b),
        t1: exp.t1,
        t2: exp.t2,
        variant: exp.variant,
    };
    let threshold = cfg.threshold();
    let window_end = cfg.phase_one_rounds();
    let k2 = exp.k as u64 * exp.k as u64;
    if window_end == 0 || window_end > k2 {
        return Err(Error::Precondition(format!(
            "blocked window [1, {window_end}] is empty or beyond k² = {k2}"
        )));
    }
    let p = |i: u64| crate::protocol::nonadaptive::sublinear_probability(i, exp.b);
    let factory = NonAdaptiveFactory {
        schedule,
        ack_mode: AckMode::SwitchOffOnAck,
    };

    let outcomes: Vec<Result<(SigmaCheck, bool)>> = (0..exp.trials as u64)
        .into_par_iter()
        .map(|i| {
            let seed = trial_seed(exp.master_seed, i);
            let instance = blocking_instance(&cfg, &mut adversary_rng(seed))
                .map_err(|e| Error::Precondition(e.to_string()))?;
            let check = verify_sigma_hat(&instance, p, threshold, 1..=window_end);
            if !check.ok {
                return Err(Error::Precondition(format!(
                    "σ̂[{}] = {:.4} < γ·log₂k = {threshold:.4}",
                    check.argmin, check.min
                )));
            }
            let sim = SimConfig {
                k: exp.k,
                max_rounds: window_end,
                seed,
                record_trace: false,
            };
            let rec = run_simulation(&factory, &mut instance.source(), &sim)?;
            let blocked = rec.first_channel_success.is_none_or(|t| t > window_end);
            Ok((check, blocked))
        })
        .collect();

    let mut min_check: Option<SigmaCheck> = None;
    let mut blocked = 0usize;
    for o in outcomes {
        let (check, b) = o?;
        if min_check.is_none_or(|m| check.min < m.min) {
            min_check = Some(check);
        }
        blocked += b as usize;
    }
    let check = min_check.expect("at least one trial");
    Ok(BlockingReport {
        threshold,
        per_round: cfg.per_round(),
        window_end,
        sigma_hat_min: check.min,
        sigma_hat_argmin: check.argmin,
        per_round_success_bound: check.min * (1.0 - check.min).exp(),
        trials: exp.trials,
        zero_success_fraction: blocked as f64 / exp.trials as f64,
    })
}

/// Writes one JSON object per trial record.
pub fn write_ndjson<W: std::io::Write>(records: &[TrialRecord], out: &mut W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub const SUMMARY_CSV_HEADER: &str = "k,protocol,adversary,metric,p50,p99,max,fraction_pass,fitted_c";

/// One CSV summary line.
pub fn summary_csv_row(
    k: u32,
    protocol: &str,
    adversary: &str,
    metric: &str,
    q: &Quantiles,
    fraction_pass: f64,
    fitted_c: Option<f64>,
) -> String {
    let c = fitted_c.map_or(String::new(), |c| format!("{c:.6}"));
    format!(
        "{k},{protocol},{adversary},{metric},{},{},{},{fraction_pass:.4},{c}",
        q.p50, q.p99, q.max
    )
}
