//! Contention resolution on a slotted shared channel without collision
//! detection: a round-exact simulator, non-adaptive and adaptive protocols
//! for stations with unknown wake-up times, adversarial wake-up schedules
//! and a Monte Carlo experiment harness.

pub mod adversary;
pub mod channel;
pub mod engine;
pub mod epochs;
pub mod error;
pub mod experiments;
pub mod invariants;
pub mod protocol;
pub mod rng;
pub mod stats;

pub use adversary::{AdversarySpec, ObliviousSchedule};
pub use channel::{Action, ControlBit, Feedback, Message, PayloadTag, RoundOutcome, StationId};
pub use engine::{
    run_simulation, Completion, Liveness, SimConfig, Station, StationFactory, StationRecord, Trace,
    TraceRound, TrialRecord, WakeupSource,
};
pub use error::{Error, Result};
pub use experiments::{run_trials, ExperimentConfig};
pub use protocol::adaptive::AdaptiveParams;
pub use protocol::nonadaptive::{AckMode, TransmitSchedule};
pub use protocol::ProtocolSpec;
