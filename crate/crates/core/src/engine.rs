//! Round-by-round execution of the shared-channel model.
//!
//! Reference round `t` runs as follows: the wake-up source activates new
//! stations (their activation round is `t - 1`, so they act for the first
//! time at local round 1 in `t`), every alive station picks an action, the
//! channel is arbitrated, and feedback is delivered. A station only ever
//! sees its local round, its own state, its feedback and its private random
//! stream.

use serde::{Deserialize, Serialize};

use crate::channel::{
    arbitrate, feedback_for, Action, ControlBit, Feedback, Message, PayloadTag, RoundOutcome,
    StationId,
};
use crate::error::{Error, Result};
use crate::rng::{station_rng, StationRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Liveness {
    Alive,
    Off,
}

/// Protocol logic of one station.
pub trait Station {
    /// Chooses the action for `local_round` (≥ 1).
    fn act(&mut self, local_round: u64, rng: &mut StationRng) -> Action;

    /// Consumes the feedback of the round just played.
    fn on_feedback(&mut self, local_round: u64, feedback: Feedback) -> Liveness;

    /// Transmission probability at `local_round`, for protocols whose
    /// probability depends on the local round only.
    fn transmit_probability(&self, _local_round: u64) -> Option<f64> {
        None
    }
}

/// When a run counts as finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Completion {
    /// Every station activated, delivered, and switched off.
    AllOff,
    /// Every station activated and delivered at least once; stations may
    /// stay alive (no-acknowledgement executions).
    AllDelivered,
    /// The first successful round on the channel (wake-up problem).
    FirstSuccess,
}

/// Builds a fresh protocol state per activated station.
pub trait StationFactory {
    type Station: Station;

    fn build(&self, payload: PayloadTag) -> Self::Station;

    fn completion(&self) -> Completion {
        Completion::AllOff
    }
}

/// Outcome of a round as visible to an external observer: no identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PublicOutcome {
    Silence,
    DataSuccess,
    ControlSuccess(ControlBit),
    Collision(u32),
}

impl From<&RoundOutcome> for PublicOutcome {
    fn from(o: &RoundOutcome) -> Self {
        match o {
            RoundOutcome::Silence => PublicOutcome::Silence,
            RoundOutcome::Success {
                message: Message::Data(_),
                ..
            } => PublicOutcome::DataSuccess,
            RoundOutcome::Success {
                message: Message::Control(bit),
                ..
            } => PublicOutcome::ControlSuccess(*bit),
            RoundOutcome::Collision { transmitters } => PublicOutcome::Collision(*transmitters),
        }
    }
}

impl PublicOutcome {
    pub fn is_success(&self) -> bool {
        matches!(
            self,
            PublicOutcome::DataSuccess | PublicOutcome::ControlSuccess(_)
        )
    }
}

/// Channel history available to adaptive adversaries. Index `i` holds
/// reference round `i + 1`.
#[derive(Debug, Clone, Default)]
pub struct PublicHistory {
    pub outcomes: Vec<PublicOutcome>,
    pub wakes: Vec<u32>,
}

/// A wake-up adversary as seen by the engine.
pub trait WakeupSource {
    /// Number of stations to activate at the boundary of `round`, given the
    /// outcomes of rounds `1..round`. `remaining` is the unused budget.
    fn wakes(&mut self, round: u64, history: &PublicHistory, remaining: u32) -> u32;

    /// Total activations fixed in advance, for oblivious sources.
    fn scheduled_total(&self) -> Option<u64>;

    /// True when the source will never activate anyone again.
    fn finished(&self) -> bool;
}

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub k: u32,
    pub max_rounds: u64,
    pub seed: u64,
    pub record_trace: bool,
}

impl SimConfig {
    pub fn new(k: u32, seed: u64) -> Self {
        Self {
            k,
            max_rounds: default_max_rounds(k),
            seed,
            record_trace: false,
        }
    }

    pub fn with_trace(mut self, on: bool) -> Self {
        self.record_trace = on;
        self
    }

    pub fn with_max_rounds(mut self, rounds: u64) -> Self {
        self.max_rounds = rounds;
        self
    }
}

/// `64 · k · (1 + ⌈log₂ k⌉²)`.
pub fn default_max_rounds(k: u32) -> u64 {
    let k = k.max(1) as u64;
    let lg = ceil_log2(k);
    64 * k * (1 + lg * lg)
}

pub(crate) fn ceil_log2(x: u64) -> u64 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationRecord {
    pub id: u32,
    pub activation: u64,
    /// Reference round of the first acknowledged data transmission.
    pub first_success: Option<u64>,
    pub transmissions: u64,
    pub last_transmission: Option<u64>,
    /// Last round in which the station was alive, if it switched off.
    pub switched_off: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRound {
    pub round: u64,
    pub woken: u32,
    pub transmitters: Vec<(StationId, Message)>,
    pub outcome: RoundOutcome,
    /// Sum of current transmission probabilities over alive stations, when
    /// every alive station exposes one.
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rounds: Vec<TraceRound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub k: u32,
    pub completed: bool,
    pub rounds_used: u64,
    /// Reference round of the first success on the channel, of any kind.
    pub first_channel_success: Option<u64>,
    pub stations: Vec<StationRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub trace: Option<Trace>,
}

struct Slot<S> {
    station: S,
    rng: StationRng,
    record: StationRecord,
}

/// Runs one execution until completion or until `max_rounds`.
pub fn run_simulation<F, W>(factory: &F, source: &mut W, cfg: &SimConfig) -> Result<TrialRecord>
where
    F: StationFactory,
    W: WakeupSource + ?Sized,
{
    if cfg.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if cfg.max_rounds == 0 {
        return Err(Error::Config("max-rounds must be at least 1".into()));
    }
    if let Some(total) = source.scheduled_total() {
        if total != cfg.k as u64 {
            return Err(Error::ScheduleBudget {
                scheduled: total,
                k: cfg.k,
            });
        }
    }
    let completion = factory.completion();

    let mut slots: Vec<Slot<F::Station>> = Vec::with_capacity(cfg.k as usize);
    let mut alive: Vec<usize> = Vec::new();
    let mut actions: Vec<Action> = Vec::new();
    let mut transmitters: Vec<(StationId, Action)> = Vec::new();
    let mut history = PublicHistory::default();
    let mut trace = cfg.record_trace.then(Trace::default);
    let mut warnings = Vec::new();
    let mut delivered = 0u32;
    let mut first_channel_success = None;
    let mut completed = false;
    let mut rounds_used = 0;

    for t in 1..=cfg.max_rounds {
        rounds_used = t;
        let remaining = cfg.k - slots.len() as u32;
        let mut woken = source.wakes(t, &history, remaining);
        if woken > remaining {
            warnings.push(format!(
                "round {t}: adversary asked for {woken} activations with {remaining} left; clamped"
            ));
            woken = remaining;
        }
        for _ in 0..woken {
            let id = slots.len() as u32;
            slots.push(Slot {
                station: factory.build(PayloadTag(id as u64)),
                rng: station_rng(cfg.seed, id),
                record: StationRecord {
                    id,
                    activation: t - 1,
                    first_success: None,
                    transmissions: 0,
                    last_transmission: None,
                    switched_off: None,
                },
            });
            alive.push(slots.len() - 1);
        }

        actions.clear();
        transmitters.clear();
        for &ix in &alive {
            let slot = &mut slots[ix];
            let local = t - slot.record.activation;
            let action = slot.station.act(local, &mut slot.rng);
            if action.is_transmit() {
                transmitters.push((StationId(slot.record.id), action));
            }
            actions.push(action);
        }
        let outcome = arbitrate(&transmitters);

        let sigma = if trace.is_some() {
            alive
                .iter()
                .map(|&ix| {
                    let s = &slots[ix];
                    s.station.transmit_probability(t - s.record.activation)
                })
                .sum::<Option<f64>>()
        } else {
            None
        };

        let sender = match outcome {
            RoundOutcome::Success { sender, .. } => Some(sender.0),
            _ => None,
        };
        if sender.is_some() && first_channel_success.is_none() {
            first_channel_success = Some(t);
        }
        let mut any_off = false;
        for (pos, &ix) in alive.iter().enumerate() {
            let slot = &mut slots[ix];
            let action = actions[pos];
            let am_sender = sender == Some(slot.record.id);
            let fb = feedback_for(&outcome, &action, am_sender);
            if let Action::Transmit(msg) = action {
                slot.record.transmissions += 1;
                slot.record.last_transmission = Some(t);
                if am_sender && msg.is_data() && slot.record.first_success.is_none() {
                    slot.record.first_success = Some(t);
                    delivered += 1;
                }
            }
            let local = t - slot.record.activation;
            if slot.station.on_feedback(local, fb) == Liveness::Off {
                slot.record.switched_off = Some(t);
                any_off = true;
            }
        }
        if any_off {
            alive.retain(|&ix| slots[ix].record.switched_off.is_none());
        }

        history.outcomes.push(PublicOutcome::from(&outcome));
        history.wakes.push(woken);
        if let Some(tr) = trace.as_mut() {
            tr.rounds.push(TraceRound {
                round: t,
                woken,
                transmitters: transmitters
                    .iter()
                    .filter_map(|(id, a)| match a {
                        Action::Transmit(m) => Some((*id, *m)),
                        Action::Listen => None,
                    })
                    .collect(),
                outcome,
                sigma,
            });
        }

        let all_activated = slots.len() as u32 == cfg.k;
        completed = match completion {
            Completion::AllOff => all_activated && alive.is_empty() && delivered == cfg.k,
            Completion::AllDelivered => all_activated && delivered == cfg.k,
            Completion::FirstSuccess => first_channel_success.is_some(),
        };
        if completed {
            break;
        }
        if alive.is_empty() && (all_activated || source.finished()) {
            // Nothing can ever happen again.
            break;
        }
    }

    Ok(TrialRecord {
        seed: cfg.seed,
        k: cfg.k,
        completed,
        rounds_used,
        first_channel_success,
        stations: slots.into_iter().map(|s| s.record).collect(),
        warnings,
        trace,
    })
}

/// σ̂\[t\]: sum of `p(t − t_v)` over every station activated before `t`,
/// alive or not. `activations` lists `(t_v, count)` pairs.
pub fn sigma_hat<P>(t: u64, activations: &[(u64, u32)], probability: P) -> f64
where
    P: Fn(u64) -> f64,
{
    activations
        .iter()
        .filter(|(tv, _)| *tv < t)
        .map(|(tv, n)| *n as f64 * probability(t - tv))
        .sum()
}

/// σ\[t\] of a recorded round; `None` when the round is absent from the
/// trace or a station did not expose a probability.
pub fn sigma(t: u64, trace: &Trace) -> Option<f64> {
    if t == 0 {
        return Some(0.0);
    }
    trace.rounds.get(t as usize - 1).and_then(|r| r.sigma)
}

#[derive(Serialize)]
struct RoundLine<'a> {
    round: u64,
    woken: u32,
    transmitters: u32,
    outcome: &'a str,
    sender: i64,
    message: &'a str,
}

#[derive(Serialize)]
struct StationLine {
    id: u32,
    activation: u64,
    first_success: Option<u64>,
    transmissions: u64,
}

/// Writes one NDJSON line per round: round, woken, transmitter count,
/// outcome kind, sender id (or -1) and message kind.
pub fn write_trace<W: std::io::Write>(trace: &Trace, out: &mut W) -> Result<()> {
    for r in &trace.rounds {
        let (sender, message) = match &r.outcome {
            RoundOutcome::Success { sender, message } => (sender.0 as i64, message.kind_label()),
            _ => (-1, "none"),
        };
        let line = RoundLine {
            round: r.round,
            woken: r.woken,
            transmitters: r.outcome.transmitter_count(),
            outcome: r.outcome.kind_label(),
            sender,
            message,
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes one NDJSON line per station: id, activation, first success and
/// transmission count.
pub fn write_station_summary<W: std::io::Write>(record: &TrialRecord, out: &mut W) -> Result<()> {
    for s in &record.stations {
        let line = StationLine {
            id: s.id,
            activation: s.activation,
            first_success: s.first_success,
            transmissions: s.transmissions,
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
