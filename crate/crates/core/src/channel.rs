//! The shared channel: what stations send, how a round is arbitrated and
//! what each participant perceives afterwards.
//!
//! There is no collision detection. A listener cannot tell a collision from
//! an idle round; the only extra signal is the acknowledgement delivered to
//! the unique transmitter of a successful round.

use serde::{Deserialize, Serialize};

/// Bookkeeping identifier of a station inside one simulation run.
///
/// Protocol logic never sees it; it exists for traces and verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StationId(pub u32);

/// Opaque token standing for a station's data packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PayloadTag(pub u64);

/// One-bit coordination messages of the adaptive protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlBit {
    /// Bit 0, "dissemination mode in progress".
    DMode,
    /// Bit 1, "is there anybody out there?".
    Probe,
}

impl ControlBit {
    pub fn bit(self) -> u8 {
        match self {
            ControlBit::DMode => 0,
            ControlBit::Probe => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Message {
    Data(PayloadTag),
    Control(ControlBit),
}

impl Message {
    /// Short label used by the trace export.
    pub fn kind_label(&self) -> &'static str {
        match self {
            Message::Data(_) => "data",
            Message::Control(ControlBit::DMode) => "bit0",
            Message::Control(ControlBit::Probe) => "bit1",
        }
    }

    pub fn is_data(&self) -> bool {
        matches!(self, Message::Data(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Transmit(Message),
    Listen,
}

impl Action {
    pub fn is_transmit(&self) -> bool {
        matches!(self, Action::Transmit(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoundOutcome {
    Silence,
    Success { sender: StationId, message: Message },
    /// Two or more simultaneous transmitters.
    Collision { transmitters: u32 },
}

impl RoundOutcome {
    pub fn kind_label(&self) -> &'static str {
        match self {
            RoundOutcome::Silence => "silence",
            RoundOutcome::Success { .. } => "success",
            RoundOutcome::Collision { .. } => "collision",
        }
    }

    pub fn transmitter_count(&self) -> u32 {
        match self {
            RoundOutcome::Silence => 0,
            RoundOutcome::Success { .. } => 1,
            RoundOutcome::Collision { transmitters } => *transmitters,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, RoundOutcome::Success { .. })
    }
}

/// What a single station perceives at the end of a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feedback {
    /// Own transmission was the only one in the round.
    Acked,
    TransmittedNoAck,
    Heard(Message),
    /// Silence or collision; the two are indistinguishable.
    NothingHeard,
}

/// Arbitrates one round from the actions of every alive station.
pub fn arbitrate<'a, I>(actions: I) -> RoundOutcome
where
    I: IntoIterator<Item = &'a (StationId, Action)>,
{
    let mut count = 0u32;
    let mut single = None;
    for (id, action) in actions {
        if let Action::Transmit(msg) = action {
            count += 1;
            if count == 1 {
                single = Some((*id, *msg));
            }
        }
    }
    match (count, single) {
        (0, _) => RoundOutcome::Silence,
        (1, Some((sender, message))) => RoundOutcome::Success { sender, message },
        (m, _) => RoundOutcome::Collision { transmitters: m },
    }
}

/// Feedback delivered to one participant of an arbitrated round.
///
/// `am_sender` must be true exactly when the outcome is a success sent by
/// this station; a listener claiming to be the sender is a contract
/// violation and panics.
pub fn feedback_for(outcome: &RoundOutcome, my_action: &Action, am_sender: bool) -> Feedback {
    match my_action {
        Action::Transmit(_) => {
            debug_assert_eq!(
                am_sender,
                outcome.is_success(),
                "transmitter sender flag disagrees with outcome {outcome:?}"
            );
            if am_sender {
                Feedback::Acked
            } else {
                Feedback::TransmittedNoAck
            }
        }
        Action::Listen => {
            assert!(!am_sender, "a listening station cannot be the sender");
            match outcome {
                RoundOutcome::Success { message, .. } => Feedback::Heard(*message),
                RoundOutcome::Silence | RoundOutcome::Collision { .. } => Feedback::NothingHeard,
            }
        }
    }
}
