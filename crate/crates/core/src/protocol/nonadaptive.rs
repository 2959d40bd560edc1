//! Non-adaptive protocols: the transmission probability depends on the
//! local round only.
//!
//! * [`NakSchedule`] knows the contention size `k` and walks through
//!   `⌈log₂log₂k⌉ + 1` blocks, doubling the probability from `1/(2k)` at
//!   each block.
//! * [`SublinearSchedule`] needs no `k`: it holds `ln j / j` for `b` rounds,
//!   for `j = 3, 4, 5, …`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{Action, Feedback, Message, PayloadTag};
use crate::engine::{Completion, Liveness, Station, StationFactory};
use crate::rng::StationRng;

/// A per-local-round probability sequence `p(1), p(2), …`.
pub trait TransmitSchedule {
    /// `p(i)` for `i ≥ 1`; zero once the schedule is exhausted.
    fn probability(&self, local_round: u64) -> f64;

    /// Number of rounds with a defined probability, `None` if unbounded.
    fn len(&self) -> Option<u64>;
}

/// Whether an acknowledgement switches the station off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AckMode {
    SwitchOffOnAck,
    IgnoreAcks,
}

/// Smallest `L` with `2^(2^L) ≥ k`, i.e. `⌈log₂ log₂ k⌉`.
pub fn top_block(k: u64) -> u32 {
    let mut l = 0u32;
    // 2^(2^l) overflows u64 past l = 5, and k ≤ u64::MAX < 2^(2^6).
    while l < 6 && (1u128 << (1u32 << l)) < k as u128 {
        l += 1;
    }
    l
}

/// Block length multiplier `φ(l)`: `⌈k / 2^l⌉` below the top block, `k` at
/// the top block `L = ⌈log₂ log₂ k⌉`.
///
/// Panics when `k < 4` or `l > L`.
pub fn phi(l: u32, k: u64) -> u64 {
    assert!(k >= 4, "known contention must be at least 4, got {k}");
    let top = top_block(k);
    assert!(l <= top, "block {l} beyond top block {top} for k = {k}");
    if l < top {
        k.div_ceil(1u64 << l)
    } else {
        k
    }
}

/// Total length `Σ c·φ(l)` of the known-`k` schedule.
pub fn nak_total_rounds(k: u64, c: u64) -> u64 {
    (0..=top_block(k)).map(|l| c * phi(l, k)).sum()
}

/// `p(i)` of the known-`k` schedule, or `None` past its end.
pub fn nak_probability(i: u64, k: u64, c: u64) -> Option<f64> {
    NakSchedule::new(k, c).block_of(i).map(|l| block_probability(l, k))
}

fn block_probability(l: u32, k: u64) -> f64 {
    (1u64 << l) as f64 / (2 * k) as f64
}

/// `NonAdaptiveWithK(k, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NakSchedule {
    k: u64,
    c: u64,
    /// Exclusive end (in local rounds) of each block.
    ends: Vec<u64>,
}

impl NakSchedule {
    pub fn new(k: u64, c: u64) -> Self {
        assert!(c >= 1, "c must be positive");
        let mut ends = Vec::new();
        let mut acc = 0;
        for l in 0..=top_block(k) {
            acc += c * phi(l, k);
            ends.push(acc);
        }
        Self { k, c, ends }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn c(&self) -> u64 {
        self.c
    }

    pub fn top_block(&self) -> u32 {
        self.ends.len() as u32 - 1
    }

    pub fn total_rounds(&self) -> u64 {
        *self.ends.last().expect("at least one block")
    }

    /// Block index containing local round `i`.
    pub fn block_of(&self, i: u64) -> Option<u32> {
        if i == 0 {
            return None;
        }
        self.ends
            .iter()
            .position(|&end| i <= end)
            .map(|l| l as u32)
    }
}

impl TransmitSchedule for NakSchedule {
    fn probability(&self, i: u64) -> f64 {
        self.block_of(i)
            .map_or(0.0, |l| block_probability(l, self.k))
    }

    fn len(&self) -> Option<u64> {
        Some(self.total_rounds())
    }
}

/// `p(i) = ln j / j` with `j = 3 + ⌊(i − 1)/b⌋`.
pub fn sublinear_probability(i: u64, b: u64) -> f64 {
    assert!(i >= 1 && b >= 1);
    let j = (3 + (i - 1) / b) as f64;
    j.ln() / j
}

/// `SublinearDecrease(b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SublinearSchedule {
    pub b: u64,
}

impl TransmitSchedule for SublinearSchedule {
    fn probability(&self, i: u64) -> f64 {
        if i == 0 {
            0.0
        } else {
            sublinear_probability(i, self.b)
        }
    }

    fn len(&self) -> Option<u64> {
        None
    }
}

/// A fixed list of probabilities, silent afterwards. Used for scripted
/// protocols in tests and cross-checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedSchedule(pub Vec<f64>);

impl TransmitSchedule for ScriptedSchedule {
    fn probability(&self, i: u64) -> f64 {
        if i == 0 {
            return 0.0;
        }
        self.0.get(i as usize - 1).copied().unwrap_or(0.0)
    }

    fn len(&self) -> Option<u64> {
        Some(self.0.len() as u64)
    }
}

/// `s(i) = Σ_{j ≤ i} p(j)`.
pub fn cumulative_sum<S: TransmitSchedule + ?Sized>(schedule: &S, i: u64) -> f64 {
    (1..=i).map(|j| schedule.probability(j)).sum()
}

/// Station running a non-adaptive schedule.
#[derive(Debug, Clone)]
pub struct NonAdaptiveStation<S> {
    schedule: S,
    ack_mode: AckMode,
    payload: PayloadTag,
    done: bool,
}

impl<S: TransmitSchedule> NonAdaptiveStation<S> {
    pub fn new(schedule: S, ack_mode: AckMode, payload: PayloadTag) -> Self {
        Self {
            schedule,
            ack_mode,
            payload,
            done: false,
        }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }
}

impl<S: TransmitSchedule> Station for NonAdaptiveStation<S> {
    fn act(&mut self, local_round: u64, rng: &mut StationRng) -> Action {
        debug_assert!(!self.done, "switched-off station asked to act");
        let p = self.schedule.probability(local_round);
        // An exhausted schedule has p = 0: the station stays alive but silent.
        if p > 0.0 && rng.random::<f64>() < p {
            Action::Transmit(Message::Data(self.payload))
        } else {
            Action::Listen
        }
    }

    fn on_feedback(&mut self, _local_round: u64, feedback: Feedback) -> Liveness {
        if feedback == Feedback::Acked && self.ack_mode == AckMode::SwitchOffOnAck {
            self.done = true;
            Liveness::Off
        } else {
            Liveness::Alive
        }
    }

    fn transmit_probability(&self, local_round: u64) -> Option<f64> {
        Some(self.schedule.probability(local_round))
    }
}

/// Factory for stations sharing one schedule.
#[derive(Debug, Clone)]
pub struct NonAdaptiveFactory<S> {
    pub schedule: S,
    pub ack_mode: AckMode,
}

impl<S: TransmitSchedule + Clone> StationFactory for NonAdaptiveFactory<S> {
    type Station = NonAdaptiveStation<S>;

    fn build(&self, payload: PayloadTag) -> Self::Station {
        NonAdaptiveStation::new(self.schedule.clone(), self.ack_mode, payload)
    }

    fn completion(&self) -> Completion {
        match self.ack_mode {
            AckMode::SwitchOffOnAck => Completion::AllOff,
            AckMode::IgnoreAcks => Completion::AllDelivered,
        }
    }
}

/// Writes `i,p(i)` lines for `1 ≤ i ≤ rounds`.
pub fn write_schedule_csv<S, W>(schedule: &S, rounds: u64, out: &mut W) -> std::io::Result<()>
where
    S: TransmitSchedule + ?Sized,
    W: std::io::Write,
{
    writeln!(out, "i,p")?;
    for i in 1..=rounds {
        writeln!(out, "{i},{}", schedule.probability(i))?;
    }
    Ok(())
}
