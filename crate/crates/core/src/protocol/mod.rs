//! Protocol implementations and the configuration that selects one.

pub mod adaptive;
pub mod nonadaptive;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::{Action, Feedback, PayloadTag};
use crate::engine::{Completion, Liveness, Station, StationFactory};
use crate::rng::StationRng;

use adaptive::{
    AdaptiveNokFactory, AdaptiveNokStation, AdaptiveParams, DecreaseSlowlyFactory,
    DecreaseSlowlyStation, SawtoothFactory, SawtoothStation,
};
use nonadaptive::{
    AckMode, NakSchedule, NonAdaptiveFactory, NonAdaptiveStation, ScriptedSchedule,
    SublinearSchedule, TransmitSchedule,
};

pub const DEFAULT_C: u64 = 8;
pub const DEFAULT_B: u64 = 8;
pub const DEFAULT_Q: f64 = 2.0;

/// A fully resolved protocol choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProtocolSpec {
    /// `NonAdaptiveWithK(k, c)`.
    Nak { k: u64, c: u64 },
    /// `SublinearDecrease(b)`.
    Sublinear { b: u64, ack: AckMode },
    /// `DecreaseSlowly(q)` run as a wake-up protocol.
    DecreaseSlowly { q: f64 },
    /// Synchronized sawtooth back-off; requires batch wake-up.
    Sawtooth { initial_phase: u32 },
    Adaptive(AdaptiveParams),
    /// Fixed per-round probabilities, silent afterwards.
    Scripted { probabilities: Vec<f64>, ack: AckMode },
}

impl ProtocolSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolSpec::Nak { .. } => "nak",
            ProtocolSpec::Sublinear { .. } => "sublinear",
            ProtocolSpec::DecreaseSlowly { .. } => "decrease-slowly",
            ProtocolSpec::Sawtooth { .. } => "sawtooth",
            ProtocolSpec::Adaptive(_) => "adaptive",
            ProtocolSpec::Scripted { .. } => "scripted",
        }
    }

    /// The per-local-round probability sequence, for non-adaptive protocols.
    pub fn schedule(&self) -> Option<Box<dyn TransmitSchedule + Send + Sync>> {
        match self {
            ProtocolSpec::Nak { k, c } => Some(Box::new(NakSchedule::new(*k, *c))),
            ProtocolSpec::Sublinear { b, .. } => Some(Box::new(SublinearSchedule { b: *b })),
            ProtocolSpec::Scripted { probabilities, .. } => {
                Some(Box::new(ScriptedSchedule(probabilities.clone())))
            }
            _ => None,
        }
    }

    /// Whether every station stops transmitting at its first
    /// acknowledgement. The adaptive leader keeps sending control bits.
    pub fn acks(&self) -> bool {
        match self {
            ProtocolSpec::Sublinear { ack, .. } | ProtocolSpec::Scripted { ack, .. } => {
                *ack == AckMode::SwitchOffOnAck
            }
            ProtocolSpec::Adaptive(_) => false,
            _ => true,
        }
    }

    pub fn factory(&self) -> AnyFactory {
        match self {
            ProtocolSpec::Nak { k, c } => AnyFactory::Nak(NonAdaptiveFactory {
                schedule: NakSchedule::new(*k, *c),
                ack_mode: AckMode::SwitchOffOnAck,
            }),
            ProtocolSpec::Sublinear { b, ack } => AnyFactory::Sublinear(NonAdaptiveFactory {
                schedule: SublinearSchedule { b: *b },
                ack_mode: *ack,
            }),
            ProtocolSpec::DecreaseSlowly { q } => {
                AnyFactory::DecreaseSlowly(DecreaseSlowlyFactory { q: *q })
            }
            ProtocolSpec::Sawtooth { initial_phase } => AnyFactory::Sawtooth(SawtoothFactory {
                initial_phase: *initial_phase,
            }),
            ProtocolSpec::Adaptive(params) => {
                AnyFactory::Adaptive(AdaptiveNokFactory { params: *params })
            }
            ProtocolSpec::Scripted { probabilities, ack } => {
                AnyFactory::Scripted(NonAdaptiveFactory {
                    schedule: ScriptedSchedule(probabilities.clone()),
                    ack_mode: *ack,
                })
            }
        }
    }
}

impl fmt::Display for ProtocolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolSpec::Nak { k, c } => write!(f, "nak(k={k},c={c})"),
            ProtocolSpec::Sublinear { b, ack } => {
                let ack = if *ack == AckMode::SwitchOffOnAck { "on" } else { "off" };
                write!(f, "sublinear(b={b},ack={ack})")
            }
            ProtocolSpec::DecreaseSlowly { q } => write!(f, "decrease-slowly(q={q})"),
            ProtocolSpec::Sawtooth { initial_phase } => write!(f, "sawtooth(phase={initial_phase})"),
            ProtocolSpec::Adaptive(p) => write!(
                f,
                "adaptive(q={},phase={},control-exp={})",
                p.q, p.sawtooth_initial_phase, p.control_min_exponent
            ),
            ProtocolSpec::Scripted { probabilities, .. } => {
                write!(f, "scripted({} rounds)", probabilities.len())
            }
        }
    }
}

/// Static dispatch over every protocol's factory.
#[derive(Debug, Clone)]
pub enum AnyFactory {
    Nak(NonAdaptiveFactory<NakSchedule>),
    Sublinear(NonAdaptiveFactory<SublinearSchedule>),
    DecreaseSlowly(DecreaseSlowlyFactory),
    Sawtooth(SawtoothFactory),
    Adaptive(AdaptiveNokFactory),
    Scripted(NonAdaptiveFactory<ScriptedSchedule>),
}

#[derive(Debug, Clone)]
pub enum AnyStation {
    Nak(NonAdaptiveStation<NakSchedule>),
    Sublinear(NonAdaptiveStation<SublinearSchedule>),
    DecreaseSlowly(DecreaseSlowlyStation),
    Sawtooth(SawtoothStation),
    Adaptive(AdaptiveNokStation),
    Scripted(NonAdaptiveStation<ScriptedSchedule>),
}

macro_rules! dispatch {
    ($value:expr, $inner:ident => $body:expr) => {
        match $value {
            AnyStation::Nak($inner) => $body,
            AnyStation::Sublinear($inner) => $body,
            AnyStation::DecreaseSlowly($inner) => $body,
            AnyStation::Sawtooth($inner) => $body,
            AnyStation::Adaptive($inner) => $body,
            AnyStation::Scripted($inner) => $body,
        }
    };
}

impl Station for AnyStation {
    fn act(&mut self, local_round: u64, rng: &mut StationRng) -> Action {
        dispatch!(self, s => s.act(local_round, rng))
    }

    fn on_feedback(&mut self, local_round: u64, feedback: Feedback) -> Liveness {
        dispatch!(self, s => s.on_feedback(local_round, feedback))
    }

    fn transmit_probability(&self, local_round: u64) -> Option<f64> {
        dispatch!(self, s => s.transmit_probability(local_round))
    }
}

impl StationFactory for AnyFactory {
    type Station = AnyStation;

    fn build(&self, payload: PayloadTag) -> AnyStation {
        match self {
            AnyFactory::Nak(f) => AnyStation::Nak(f.build(payload)),
            AnyFactory::Sublinear(f) => AnyStation::Sublinear(f.build(payload)),
            AnyFactory::DecreaseSlowly(f) => AnyStation::DecreaseSlowly(f.build(payload)),
            AnyFactory::Sawtooth(f) => AnyStation::Sawtooth(f.build(payload)),
            AnyFactory::Adaptive(f) => AnyStation::Adaptive(f.build(payload)),
            AnyFactory::Scripted(f) => AnyStation::Scripted(f.build(payload)),
        }
    }

    fn completion(&self) -> Completion {
        match self {
            AnyFactory::Nak(f) => f.completion(),
            AnyFactory::Sublinear(f) => f.completion(),
            AnyFactory::DecreaseSlowly(f) => f.completion(),
            AnyFactory::Sawtooth(f) => f.completion(),
            AnyFactory::Adaptive(f) => f.completion(),
            AnyFactory::Scripted(f) => f.completion(),
        }
    }
}
