//! Wake-up adversaries.
//!
//! Oblivious adversaries fix a schedule of `(activation round, count)` pairs
//! before the execution starts; adaptive ones decide online from the public
//! channel history. Logarithms in this module are base 2.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{sigma_hat, PublicHistory, WakeupSource};
use crate::error::{Error, Result};

/// Activation schedule fixed before the execution.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObliviousSchedule {
    /// `(reference round t_v, count)`, strictly increasing rounds, counts ≥ 1.
    entries: Vec<(u64, u32)>,
}

impl ObliviousSchedule {
    /// Builds a schedule from arbitrary pairs, merging equal rounds and
    /// dropping zero counts.
    pub fn from_pairs<I: IntoIterator<Item = (u64, u32)>>(pairs: I) -> Self {
        let mut entries: Vec<(u64, u32)> = pairs.into_iter().filter(|e| e.1 > 0).collect();
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(u64, u32)> = Vec::with_capacity(entries.len());
        for (t, n) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == t => last.1 += n,
                _ => merged.push((t, n)),
            }
        }
        Self { entries: merged }
    }

    pub fn entries(&self) -> &[(u64, u32)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.1 as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn source(&self) -> ScheduleSource<'_> {
        ScheduleSource {
            schedule: self,
            pos: 0,
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "round,count")?;
        for (t, n) in &self.entries {
            writeln!(out, "{t},{n}")?;
        }
        Ok(())
    }
}

/// Replays an [`ObliviousSchedule`] inside the engine.
#[derive(Debug, Clone)]
pub struct ScheduleSource<'a> {
    schedule: &'a ObliviousSchedule,
    pos: usize,
}

impl WakeupSource for ScheduleSource<'_> {
    fn wakes(&mut self, round: u64, _history: &PublicHistory, _remaining: u32) -> u32 {
        let entries = &self.schedule.entries;
        match entries.get(self.pos) {
            Some(&(t, n)) if t == round - 1 => {
                self.pos += 1;
                n
            }
            _ => 0,
        }
    }

    fn scheduled_total(&self) -> Option<u64> {
        Some(self.schedule.total())
    }

    fn finished(&self) -> bool {
        self.pos >= self.schedule.entries.len()
    }
}

/// All `k` stations at round 0.
pub fn batch_schedule(k: u32) -> ObliviousSchedule {
    ObliviousSchedule::from_pairs([(0, k)])
}

/// Station `i` (1-based) wakes at round `(i − 1)·gap`.
pub fn trickle_schedule(k: u32, gap: u64) -> ObliviousSchedule {
    ObliviousSchedule::from_pairs((0..k as u64).map(|i| (i * gap, 1)))
}

/// Each activation round drawn independently and uniformly from `[0, horizon)`.
pub fn uniform_random_schedule<R: Rng + ?Sized>(k: u32, horizon: u64, rng: &mut R) -> ObliviousSchedule {
    assert!(horizon >= 1, "horizon must be positive");
    ObliviousSchedule::from_pairs((0..k).map(|_| (rng.random_range(0..horizon), 1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockingVariant {
    /// `r` stations per round until the budget is used up.
    FrontLoaded,
    /// `r` per round for `T1` rounds, the remaining stations uniformly over
    /// `[0, T2)`.
    TwoPhaseJk,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockingInstanceConfig {
    pub k: u32,
    pub gamma: f64,
    /// The attacked protocol's first-round probability `p(1)`.
    pub p1: f64,
    /// Phase-one horizon; derived as `⌊k/r⌋` for the front-loaded variant.
    pub t1: Option<u64>,
    pub t2: u64,
    pub variant: BlockingVariant,
}

impl BlockingInstanceConfig {
    /// Target value of σ̂ over the blocked window: `γ · log₂ k`.
    pub fn threshold(&self) -> f64 {
        self.gamma * (self.k as f64).log2()
    }

    /// Stations woken per phase-one round: `⌈γ·log₂k / p(1)⌉`, at least 1.
    pub fn per_round(&self) -> u64 {
        ((self.threshold() / self.p1).ceil() as u64).max(1)
    }

    /// Effective phase-one horizon.
    pub fn phase_one_rounds(&self) -> u64 {
        match self.variant {
            BlockingVariant::FrontLoaded => self.k as u64 / self.per_round(),
            BlockingVariant::TwoPhaseJk => self.t1.unwrap_or(0),
        }
    }
}

/// Generates a lower-bound blocking instance.
///
/// The front-loaded variant puts any remainder `k − r·T1` at round `T1`.
pub fn blocking_instance<R: Rng + ?Sized>(
    cfg: &BlockingInstanceConfig,
    rng: &mut R,
) -> Result<ObliviousSchedule> {
    if !(cfg.p1 > 0.0 && cfg.p1 <= 1.0) {
        return Err(Error::BlockingBudget(format!("p(1) = {} outside (0, 1]", cfg.p1)));
    }
    let k = cfg.k as u64;
    let r = cfg.per_round();
    match cfg.variant {
        BlockingVariant::FrontLoaded => {
            let t1 = k / r;
            if t1 == 0 {
                return Err(Error::BlockingBudget(format!(
                    "per-round wake count r = {r} exceeds k = {k}"
                )));
            }
            let rest = k - r * t1;
            Ok(ObliviousSchedule::from_pairs(
                (0..t1).map(|t| (t, r as u32)).chain([(t1, rest as u32)]),
            ))
        }
        BlockingVariant::TwoPhaseJk => {
            let t1 = cfg
                .t1
                .ok_or_else(|| Error::BlockingBudget("two-phase instance needs T1".into()))?;
            if t1 == 0 || 2 * r * t1 > k {
                return Err(Error::BlockingBudget(format!(
                    "phase-one budget r·T1 = {} exceeds k/2 = {}",
                    r * t1,
                    k as f64 / 2.0
                )));
            }
            if cfg.t2 == 0 {
                return Err(Error::BlockingBudget("T2 must be positive".into()));
            }
            let rest = k - r * t1;
            let phase_two: Vec<(u64, u32)> =
                (0..rest).map(|_| (rng.random_range(0..cfg.t2), 1)).collect();
            Ok(ObliviousSchedule::from_pairs(
                (0..t1).map(|t| (t, r as u32)).chain(phase_two),
            ))
        }
    }
}

/// Result of checking σ̂ against a threshold over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaCheck {
    pub ok: bool,
    pub min: f64,
    pub argmin: u64,
}

/// Computes σ̂\[t\] for every `t` in `window` and checks `min ≥ threshold`.
pub fn verify_sigma_hat<P>(
    schedule: &ObliviousSchedule,
    probability: P,
    threshold: f64,
    window: RangeInclusive<u64>,
) -> SigmaCheck
where
    P: Fn(u64) -> f64,
{
    assert!(*window.start() >= 1 && !window.is_empty(), "window must be a non-empty subrange of [1, ∞)");
    let mut min = f64::INFINITY;
    let mut argmin = *window.start();
    for t in window {
        let s = sigma_hat(t, schedule.entries(), &probability);
        if s < min {
            min = s;
            argmin = t;
        }
    }
    SigmaCheck {
        ok: min >= threshold,
        min,
        argmin,
    }
}

/// Wakes one station at round 0, then `burst` more after every observed
/// success, until `k` stations have been woken.
#[derive(Debug, Clone)]
pub struct WakeOnSuccess {
    k: u32,
    burst: u32,
    woken: u32,
}

impl WakeOnSuccess {
    pub fn new(k: u32, burst: u32) -> Self {
        assert!(burst >= 1, "burst must be positive");
        Self { k, burst, woken: 0 }
    }
}

impl WakeupSource for WakeOnSuccess {
    fn wakes(&mut self, round: u64, history: &PublicHistory, remaining: u32) -> u32 {
        let want = if round == 1 {
            1
        } else if history.outcomes[round as usize - 2].is_success() {
            self.burst
        } else {
            0
        };
        let n = want.min(remaining).min(self.k - self.woken);
        self.woken += n;
        n
    }

    fn scheduled_total(&self) -> Option<u64> {
        None
    }

    fn finished(&self) -> bool {
        self.woken >= self.k
    }
}

/// Adversary selection as written in configuration:
/// `batch | trickle:gap | uniform:horizon | blocking:variant,gamma[,T1,T2] |
/// wake-on-success:burst`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AdversarySpec {
    Batch,
    Trickle { gap: u64 },
    Uniform { horizon: u64 },
    Blocking {
        variant: BlockingVariant,
        gamma: f64,
        t1: Option<u64>,
        t2: u64,
    },
    WakeOnSuccess { burst: u32 },
}

/// A ready-to-run wake-up source for one trial.
#[derive(Debug, Clone)]
pub enum PreparedAdversary {
    Oblivious(ObliviousSchedule),
    WakeOnSuccess(WakeOnSuccess),
}

/// Owning wrapper so prepared adversaries can be handed to the engine.
#[derive(Debug)]
pub enum PreparedSource<'a> {
    Oblivious(ScheduleSource<'a>),
    WakeOnSuccess(&'a mut WakeOnSuccess),
}

impl PreparedAdversary {
    pub fn source(&mut self) -> PreparedSource<'_> {
        match self {
            PreparedAdversary::Oblivious(s) => PreparedSource::Oblivious(s.source()),
            PreparedAdversary::WakeOnSuccess(w) => PreparedSource::WakeOnSuccess(w),
        }
    }

    pub fn schedule(&self) -> Option<&ObliviousSchedule> {
        match self {
            PreparedAdversary::Oblivious(s) => Some(s),
            PreparedAdversary::WakeOnSuccess(_) => None,
        }
    }
}

impl WakeupSource for PreparedSource<'_> {
    fn wakes(&mut self, round: u64, history: &PublicHistory, remaining: u32) -> u32 {
        match self {
            PreparedSource::Oblivious(s) => s.wakes(round, history, remaining),
            PreparedSource::WakeOnSuccess(w) => w.wakes(round, history, remaining),
        }
    }

    fn scheduled_total(&self) -> Option<u64> {
        match self {
            PreparedSource::Oblivious(s) => s.scheduled_total(),
            PreparedSource::WakeOnSuccess(w) => w.scheduled_total(),
        }
    }

    fn finished(&self) -> bool {
        match self {
            PreparedSource::Oblivious(s) => s.finished(),
            PreparedSource::WakeOnSuccess(w) => w.finished(),
        }
    }
}

impl AdversarySpec {
    pub fn is_batch(&self) -> bool {
        matches!(self, AdversarySpec::Batch)
    }

    /// Instantiates the adversary for `k` stations. `p1` is the attacked
    /// protocol's first-round probability, needed by blocking instances.
    pub fn prepare<R: Rng + ?Sized>(&self, k: u32, p1: Option<f64>, rng: &mut R) -> Result<PreparedAdversary> {
        Ok(match self {
            AdversarySpec::Batch => PreparedAdversary::Oblivious(batch_schedule(k)),
            AdversarySpec::Trickle { gap } => PreparedAdversary::Oblivious(trickle_schedule(k, *gap)),
            AdversarySpec::Uniform { horizon } => {
                PreparedAdversary::Oblivious(uniform_random_schedule(k, *horizon, rng))
            }
            AdversarySpec::Blocking {
                variant,
                gamma,
                t1,
                t2,
            } => {
                let p1 = p1.ok_or_else(|| {
                    Error::Config("blocking adversaries need a non-adaptive protocol".into())
                })?;
                let cfg = BlockingInstanceConfig {
                    k,
                    gamma: *gamma,
                    p1,
                    t1: *t1,
                    t2: *t2,
                    variant: *variant,
                };
                PreparedAdversary::Oblivious(blocking_instance(&cfg, rng)?)
            }
            AdversarySpec::WakeOnSuccess { burst } => {
                PreparedAdversary::WakeOnSuccess(WakeOnSuccess::new(k, *burst))
            }
        })
    }
}

impl fmt::Display for AdversarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdversarySpec::Batch => write!(f, "batch"),
            AdversarySpec::Trickle { gap } => write!(f, "trickle:{gap}"),
            AdversarySpec::Uniform { horizon } => write!(f, "uniform:{horizon}"),
            AdversarySpec::Blocking {
                variant,
                gamma,
                t1,
                t2,
            } => {
                let v = match variant {
                    BlockingVariant::FrontLoaded => "frontloaded",
                    BlockingVariant::TwoPhaseJk => "twophase",
                };
                write!(f, "blocking:{v},{gamma}")?;
                match t1 {
                    Some(t1) => write!(f, ",{t1},{t2}"),
                    None => Ok(()),
                }
            }
            AdversarySpec::WakeOnSuccess { burst } => write!(f, "wake-on-success:{burst}"),
        }
    }
}

fn parse_num<T: FromStr>(what: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid {what}: {s:?}")))
}

impl FromStr for AdversarySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a)),
            None => (s.trim(), None),
        };
        let need = |what: &str| {
            arg.ok_or_else(|| Error::Config(format!("adversary {name} needs {what}")))
        };
        match name {
            "batch" => Ok(AdversarySpec::Batch),
            "trickle" => Ok(AdversarySpec::Trickle {
                gap: parse_num("trickle gap", need("a gap")?)?,
            }),
            "uniform" => {
                let horizon = parse_num("uniform horizon", need("a horizon")?)?;
                if horizon == 0 {
                    return Err(Error::Config("uniform horizon must be positive".into()));
                }
                Ok(AdversarySpec::Uniform { horizon })
            }
            "wake-on-success" => {
                let burst = match arg {
                    Some(a) => parse_num("burst", a)?,
                    None => 1,
                };
                if burst == 0 {
                    return Err(Error::Config("burst must be positive".into()));
                }
                Ok(AdversarySpec::WakeOnSuccess { burst })
            }
            "blocking" => {
                let parts: Vec<&str> = need("variant and gamma")?.split(',').collect();
                let variant = match parts[0].trim() {
                    "frontloaded" | "front-loaded" => BlockingVariant::FrontLoaded,
                    "twophase" | "two-phase" => BlockingVariant::TwoPhaseJk,
                    other => return Err(Error::Config(format!("unknown blocking variant {other:?}"))),
                };
                let gamma = parse_num("gamma", parts.get(1).copied().unwrap_or("3"))?;
                let t1 = parts.get(2).map(|s| parse_num("T1", s)).transpose()?;
                let t2 = parts.get(3).map(|s| parse_num("T2", s)).transpose()?.unwrap_or(1);
                if variant == BlockingVariant::TwoPhaseJk && t1.is_none() {
                    return Err(Error::Config("two-phase blocking needs T1 and T2".into()));
                }
                Ok(AdversarySpec::Blocking {
                    variant,
                    gamma,
                    t1,
                    t2,
                })
            }
            other => Err(Error::Config(format!("unknown adversary {other:?}"))),
        }
    }
}
