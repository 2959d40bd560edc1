//! Adaptive contention resolution without knowledge of `k`.
//!
//! Stations alternate between a leader election mode, where newcomers run
//! [`DecreaseSlowly`] until one of them is heard alone, and a dissemination
//! mode, where the followers of that election resolve their contention with
//! a synchronized sawtooth back-off on odd rounds while the leader uses even
//! rounds for one-bit control messages.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{Action, ControlBit, Feedback, Message, PayloadTag};
use crate::engine::{Completion, Liveness, Station, StationFactory};
use crate::rng::StationRng;

/// `q / (2q + i)`.
pub fn ds_probability(i: u64, q: f64) -> f64 {
    debug_assert!(q > 0.0);
    q / (2.0 * q + i as f64)
}

/// Wake-up protocol with slowly decreasing probability.
#[derive(Debug, Clone, PartialEq)]
pub struct DecreaseSlowly {
    q: f64,
    counter: u64,
    is_leader: bool,
}

impl DecreaseSlowly {
    pub fn new(q: f64) -> Self {
        assert!(q > 0.0, "q must be positive");
        Self {
            q,
            counter: 0,
            is_leader: false,
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn is_leader(&self) -> bool {
        self.is_leader
    }

    pub fn current_probability(&self) -> f64 {
        ds_probability(self.counter, self.q)
    }

    /// Decides this round's action. Once leader, never transmits again.
    pub fn act(&mut self, payload: PayloadTag, rng: &mut StationRng) -> Action {
        if !self.is_leader && rng.random::<f64>() < self.current_probability() {
            Action::Transmit(Message::Data(payload))
        } else {
            Action::Listen
        }
    }

    /// Returns true when this round made the station leader.
    pub fn on_feedback(&mut self, feedback: Feedback) -> bool {
        if self.is_leader {
            return false;
        }
        self.counter += 1;
        if feedback == Feedback::Acked {
            self.is_leader = true;
        }
        self.is_leader
    }
}

/// Sizes of the subwindows making up sawtooth phase `p`: `2^p, …, 2, 1`.
pub fn sawtooth_phase_layout(phase: u32) -> Vec<u64> {
    (0..=phase).rev().map(|e| 1u64 << e).collect()
}

/// Back-on/back-off ("sawtooth") contention resolution for synchronized
/// stations.
///
/// Phase `p` consists of subwindows of sizes `2^p, 2^(p−1), …, 1`. In each
/// subwindow the station picks one slot uniformly and transmits there. The
/// caller advances the state once per slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sawtooth {
    phase: u32,
    window: u64,
    /// Slots of the current subwindow already played.
    offset: u64,
    /// 1-based slot chosen in the current subwindow, drawn lazily.
    chosen: Option<u64>,
    done: bool,
    transmissions: u64,
}

impl Sawtooth {
    pub fn new(initial_phase: u32) -> Self {
        assert!(initial_phase >= 1, "sawtooth phases start at 1");
        Self {
            phase: initial_phase,
            window: 1 << initial_phase,
            offset: 0,
            chosen: None,
            done: false,
            transmissions: 0,
        }
    }

    pub fn phase(&self) -> u32 {
        self.phase
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn transmissions(&self) -> u64 {
        self.transmissions
    }

    /// Plays one slot: transmits `message` iff this is the chosen slot.
    pub fn act(&mut self, message: Message, rng: &mut StationRng) -> Action {
        assert!(!self.done, "sawtooth station already delivered");
        let window = self.window;
        let chosen = *self.chosen.get_or_insert_with(|| rng.random_range(1..=window));
        if self.offset + 1 == chosen {
            self.transmissions += 1;
            Action::Transmit(message)
        } else {
            Action::Listen
        }
    }

    /// Records the feedback of the slot just played and moves to the next.
    pub fn on_feedback(&mut self, feedback: Feedback) {
        if feedback == Feedback::Acked {
            self.done = true;
            return;
        }
        self.offset += 1;
        if self.offset == self.window {
            self.offset = 0;
            self.chosen = None;
            if self.window == 1 {
                self.phase += 1;
                self.window = 1 << self.phase;
            } else {
                self.window /= 2;
            }
        }
    }
}

/// Sawtooth as a standalone protocol: one slot per local round.
#[derive(Debug, Clone)]
pub struct SawtoothStation {
    inner: Sawtooth,
    payload: PayloadTag,
}

impl Station for SawtoothStation {
    fn act(&mut self, _local_round: u64, rng: &mut StationRng) -> Action {
        self.inner.act(Message::Data(self.payload), rng)
    }

    fn on_feedback(&mut self, _local_round: u64, feedback: Feedback) -> Liveness {
        self.inner.on_feedback(feedback);
        if self.inner.is_done() {
            Liveness::Off
        } else {
            Liveness::Alive
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SawtoothFactory {
    pub initial_phase: u32,
}

impl StationFactory for SawtoothFactory {
    type Station = SawtoothStation;

    fn build(&self, payload: PayloadTag) -> SawtoothStation {
        SawtoothStation {
            inner: Sawtooth::new(self.initial_phase),
            payload,
        }
    }
}

/// `DecreaseSlowly` alone: solves wake-up, switching off on its own ack.
#[derive(Debug, Clone)]
pub struct DecreaseSlowlyStation {
    inner: DecreaseSlowly,
    payload: PayloadTag,
}

impl Station for DecreaseSlowlyStation {
    fn act(&mut self, _local_round: u64, rng: &mut StationRng) -> Action {
        self.inner.act(self.payload, rng)
    }

    fn on_feedback(&mut self, _local_round: u64, feedback: Feedback) -> Liveness {
        if self.inner.on_feedback(feedback) {
            Liveness::Off
        } else {
            Liveness::Alive
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecreaseSlowlyFactory {
    pub q: f64,
}

impl StationFactory for DecreaseSlowlyFactory {
    type Station = DecreaseSlowlyStation;

    fn build(&self, payload: PayloadTag) -> DecreaseSlowlyStation {
        DecreaseSlowlyStation {
            inner: DecreaseSlowly::new(self.q),
            payload,
        }
    }

    fn completion(&self) -> Completion {
        Completion::FirstSuccess
    }
}

/// Parameters of the adaptive protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveParams {
    /// `DecreaseSlowly` constant.
    pub q: f64,
    pub sawtooth_initial_phase: u32,
    /// Control ("anybody out there?") rounds are `tc = 2^x` with
    /// `x ≥ control_min_exponent`.
    pub control_min_exponent: u32,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            q: 2.0,
            sawtooth_initial_phase: 1,
            control_min_exponent: 2,
        }
    }
}

impl AdaptiveParams {
    pub fn is_control_round(&self, tc: u64) -> bool {
        tc.is_power_of_two() && tc.trailing_zeros() >= self.control_min_exponent
    }
}

const LISTEN_WINDOW: u8 = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    /// Listening in blocks of four rounds to learn the current mode.
    /// `last_heard` is the most recent message of the current block.
    Waiting {
        listened: u8,
        last_heard: Option<Message>,
    },
    /// Leader election.
    L(DecreaseSlowly),
    /// Dissemination; `tc` counts rounds since the election.
    D { tc: u64, role: Role },
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Role {
    Leader,
    Follower(Sawtooth),
}

/// Station state of the adaptive protocol.
#[derive(Debug, Clone)]
pub struct AdaptiveNokStation {
    params: AdaptiveParams,
    payload: PayloadTag,
    status: Status,
    delivered: bool,
    last: Action,
}

impl AdaptiveNokStation {
    pub fn new(params: AdaptiveParams, payload: PayloadTag) -> Self {
        Self {
            params,
            payload,
            status: Status::Waiting {
                listened: 0,
                last_heard: None,
            },
            delivered: false,
            last: Action::Listen,
        }
    }

    pub fn status(&self) -> &Status {
        &self.status
    }

    pub fn is_leader(&self) -> bool {
        matches!(
            self.status,
            Status::D {
                role: Role::Leader,
                ..
            }
        )
    }

    pub fn delivered(&self) -> bool {
        self.delivered
    }

    fn decide(&mut self, rng: &mut StationRng) -> Action {
        let payload = self.payload;
        let params = self.params;
        match &mut self.status {
            Status::Waiting { .. } => Action::Listen,
            Status::L(ds) => ds.act(payload, rng),
            Status::D { tc, role } => {
                *tc += 1;
                let tc = *tc;
                if tc % 2 == 1 {
                    match role {
                        Role::Leader => Action::Listen,
                        Role::Follower(st) => st.act(Message::Data(payload), rng),
                    }
                } else if params.is_control_round(tc) {
                    Action::Transmit(Message::Control(ControlBit::Probe))
                } else {
                    match role {
                        Role::Leader => Action::Transmit(Message::Control(ControlBit::DMode)),
                        Role::Follower(_) => Action::Listen,
                    }
                }
            }
            Status::Off => panic!("switched-off station asked to act"),
        }
    }

    fn absorb(&mut self, feedback: Feedback) -> Liveness {
        let last = self.last;
        match &mut self.status {
            Status::Waiting {
                listened,
                last_heard,
            } => {
                if let Feedback::Heard(msg) = feedback {
                    *last_heard = Some(msg);
                }
                *listened += 1;
                if *listened == LISTEN_WINDOW {
                    // A probe that went through ends the dissemination mode,
                    // unless a newer election or mode bit followed it.
                    let enter = matches!(last_heard, None | Some(Message::Control(ControlBit::Probe)));
                    if enter {
                        self.status = Status::L(DecreaseSlowly::new(self.params.q));
                    } else {
                        *listened = 0;
                        *last_heard = None;
                    }
                }
            }
            Status::L(ds) => {
                if ds.on_feedback(feedback) {
                    self.delivered = true;
                    self.status = Status::D {
                        tc: 0,
                        role: Role::Leader,
                    };
                } else if matches!(feedback, Feedback::Heard(Message::Data(_))) {
                    self.status = Status::D {
                        tc: 0,
                        role: Role::Follower(Sawtooth::new(self.params.sawtooth_initial_phase)),
                    };
                }
            }
            Status::D { tc, role } => {
                let odd = *tc % 2 == 1;
                match role {
                    Role::Leader => {
                        if feedback == Feedback::Acked
                            && last == Action::Transmit(Message::Control(ControlBit::Probe))
                        {
                            self.status = Status::Off;
                        }
                    }
                    Role::Follower(st) => {
                        if odd {
                            st.on_feedback(feedback);
                            if st.is_done() {
                                self.delivered = true;
                                self.status = Status::Off;
                            }
                        }
                    }
                }
            }
            Status::Off => {}
        }
        if self.status == Status::Off {
            Liveness::Off
        } else {
            Liveness::Alive
        }
    }
}

impl Station for AdaptiveNokStation {
    fn act(&mut self, _local_round: u64, rng: &mut StationRng) -> Action {
        let action = self.decide(rng);
        self.last = action;
        action
    }

    fn on_feedback(&mut self, _local_round: u64, feedback: Feedback) -> Liveness {
        self.absorb(feedback)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AdaptiveNokFactory {
    pub params: AdaptiveParams,
}

impl StationFactory for AdaptiveNokFactory {
    type Station = AdaptiveNokStation;

    fn build(&self, payload: PayloadTag) -> AdaptiveNokStation {
        AdaptiveNokStation::new(self.params, payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::station_rng;

    #[test]
    fn ds_probability_examples() {
        for q in [0.5, 1.0, 2.0, 7.0] {
            assert_eq!(ds_probability(0, q), 0.5);
        }
        assert!((ds_probability(1, 2.0) - 0.4).abs() < 1e-15);
        assert!((ds_probability(8, 2.0) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn lone_ds_station_eventually_succeeds() {
        // Probability of never transmitting in n rounds: Π(1 − q/(2q+i)).
        let q = 2.0;
        let mut miss = 1.0;
        for i in 0..100_000u64 {
            miss *= 1.0 - ds_probability(i, q);
        }
        assert!(miss < 1e-8, "{miss}");
    }

    #[test]
    fn ds_leader_on_ack_and_stops() {
        let mut ds = DecreaseSlowly::new(2.0);
        assert!(!ds.on_feedback(Feedback::NothingHeard));
        assert_eq!(ds.counter(), 1);
        assert!(ds.on_feedback(Feedback::Acked));
        assert!(ds.is_leader());
        let mut rng = station_rng(0, 0);
        for _ in 0..50 {
            assert_eq!(ds.act(PayloadTag(0), &mut rng), Action::Listen);
        }
    }

    #[test]
    fn sawtooth_layouts() {
        assert_eq!(sawtooth_phase_layout(1), vec![2, 1]);
        assert_eq!(sawtooth_phase_layout(3), vec![8, 4, 2, 1]);
        assert_eq!(sawtooth_phase_layout(3).iter().sum::<u64>(), 15);
    }

    #[test]
    fn sawtooth_walks_subwindows_and_transmits_once_each() {
        let mut st = Sawtooth::new(1);
        let mut rng = station_rng(5, 1);
        let msg = Message::Data(PayloadTag(0));
        // Phases 1, 2, 3: windows [2,1], [4,2,1], [8,4,2,1].
        let mut seen = Vec::new();
        for _ in 0..(3 + 7 + 15) {
            let w = st.window();
            let p = st.phase();
            let a = st.act(msg, &mut rng);
            seen.push((p, w, a.is_transmit()));
            st.on_feedback(Feedback::TransmittedNoAck);
        }
        assert_eq!(st.phase(), 4);
        let mut i = 0;
        for p in 1..=3 {
            for w in sawtooth_phase_layout(p) {
                let slots = &seen[i..i + w as usize];
                assert!(slots.iter().all(|s| s.0 == p && s.1 == w));
                assert_eq!(slots.iter().filter(|s| s.2).count(), 1);
                i += w as usize;
            }
        }
        assert_eq!(st.transmissions(), 2 + 3 + 4);
    }

    #[test]
    fn control_rounds() {
        let pseudo = AdaptiveParams {
            control_min_exponent: 1,
            ..Default::default()
        };
        let prose = AdaptiveParams::default();
        let c1: Vec<u64> = (1..=40).filter(|&t| pseudo.is_control_round(t)).collect();
        let c2: Vec<u64> = (1..=40).filter(|&t| prose.is_control_round(t)).collect();
        assert_eq!(c1, vec![2, 4, 8, 16, 32]);
        assert_eq!(c2, vec![4, 8, 16, 32]);
    }

    fn feed(st: &mut AdaptiveNokStation, rng: &mut StationRng, fb: Feedback) -> (Action, Liveness) {
        let a = st.act(0, rng);
        (a, st.on_feedback(0, fb))
    }

    #[test]
    fn four_silent_rounds_enter_election() {
        let mut st = AdaptiveNokStation::new(AdaptiveParams::default(), PayloadTag(0));
        let mut rng = station_rng(0, 0);
        for _ in 0..4 {
            let (a, _) = feed(&mut st, &mut rng, Feedback::NothingHeard);
            assert_eq!(a, Action::Listen);
        }
        assert!(matches!(st.status(), Status::L(_)));
    }

    #[test]
    fn hearing_dmode_keeps_waiting() {
        let mut st = AdaptiveNokStation::new(AdaptiveParams::default(), PayloadTag(0));
        let mut rng = station_rng(0, 0);
        for round in 0..12 {
            let fb = if round % 4 == 2 {
                Feedback::Heard(Message::Control(ControlBit::DMode))
            } else {
                Feedback::NothingHeard
            };
            let (a, _) = feed(&mut st, &mut rng, fb);
            assert_eq!(a, Action::Listen);
        }
        assert!(matches!(st.status(), Status::Waiting { .. }));
    }

    #[test]
    fn hearing_probe_enters_election() {
        let mut st = AdaptiveNokStation::new(AdaptiveParams::default(), PayloadTag(0));
        let mut rng = station_rng(0, 0);
        feed(&mut st, &mut rng, Feedback::Heard(Message::Control(ControlBit::DMode)));
        feed(&mut st, &mut rng, Feedback::Heard(Message::Control(ControlBit::Probe)));
        feed(&mut st, &mut rng, Feedback::NothingHeard);
        feed(&mut st, &mut rng, Feedback::NothingHeard);
        assert!(matches!(st.status(), Status::L(_)));
    }

    #[test]
    fn heard_data_in_window_keeps_waiting() {
        let mut st = AdaptiveNokStation::new(AdaptiveParams::default(), PayloadTag(0));
        let mut rng = station_rng(0, 0);
        feed(&mut st, &mut rng, Feedback::Heard(Message::Data(PayloadTag(9))));
        for _ in 0..3 {
            feed(&mut st, &mut rng, Feedback::NothingHeard);
        }
        assert!(matches!(st.status(), Status::Waiting { listened: 0, .. }));
    }

    #[test]
    fn election_after_probe_keeps_waiting() {
        let mut st = AdaptiveNokStation::new(AdaptiveParams::default(), PayloadTag(0));
        let mut rng = station_rng(0, 0);
        feed(&mut st, &mut rng, Feedback::Heard(Message::Control(ControlBit::Probe)));
        feed(&mut st, &mut rng, Feedback::NothingHeard);
        feed(&mut st, &mut rng, Feedback::Heard(Message::Data(PayloadTag(4))));
        feed(&mut st, &mut rng, Feedback::NothingHeard);
        assert!(matches!(st.status(), Status::Waiting { listened: 0, .. }));
    }

    /// Drives a station to leader and returns it.
    fn elected(params: AdaptiveParams) -> (AdaptiveNokStation, StationRng) {
        let mut st = AdaptiveNokStation::new(params, PayloadTag(0));
        let mut rng = station_rng(3, 0);
        for _ in 0..4 {
            feed(&mut st, &mut rng, Feedback::NothingHeard);
        }
        loop {
            let a = st.act(0, &mut rng);
            let fb = if a.is_transmit() {
                Feedback::Acked
            } else {
                Feedback::NothingHeard
            };
            st.on_feedback(0, fb);
            if st.is_leader() {
                break;
            }
        }
        assert!(st.delivered());
        (st, rng)
    }

    #[test]
    fn lone_leader_switches_off_at_first_control_round() {
        for (exp, end) in [(1u32, 2u64), (2, 4)] {
            let params = AdaptiveParams {
                control_min_exponent: exp,
                ..Default::default()
            };
            let (mut st, mut rng) = elected(params);
            let mut tc = 0;
            loop {
                tc += 1;
                let a = st.act(0, &mut rng);
                let expected = if tc % 2 == 1 {
                    Action::Listen
                } else if tc == end {
                    Action::Transmit(Message::Control(ControlBit::Probe))
                } else {
                    Action::Transmit(Message::Control(ControlBit::DMode))
                };
                assert_eq!(a, expected, "tc={tc}");
                let fb = if a.is_transmit() {
                    Feedback::Acked
                } else {
                    Feedback::NothingHeard
                };
                if st.on_feedback(0, fb) == Liveness::Off {
                    break;
                }
            }
            assert_eq!(tc, end);
        }
    }

    #[test]
    fn leader_survives_unacked_probe() {
        let (mut st, mut rng) = elected(AdaptiveParams::default());
        for tc in 1..=4 {
            let a = st.act(0, &mut rng);
            let fb = match (tc, a.is_transmit()) {
                (4, true) => Feedback::TransmittedNoAck,
                (_, true) => Feedback::Acked,
                _ => Feedback::NothingHeard,
            };
            assert_eq!(st.on_feedback(0, fb), Liveness::Alive);
        }
        assert!(st.is_leader());
    }

    #[test]
    fn follower_uses_odd_rounds_only_and_leaves_on_ack() {
        let mut st = AdaptiveNokStation::new(AdaptiveParams::default(), PayloadTag(1));
        let mut rng = station_rng(8, 1);
        for _ in 0..4 {
            feed(&mut st, &mut rng, Feedback::NothingHeard);
        }
        // Listen through the election until the leader's data is heard.
        loop {
            let a = st.act(0, &mut rng);
            let fb = if a.is_transmit() {
                Feedback::TransmittedNoAck
            } else {
                Feedback::Heard(Message::Data(PayloadTag(0)))
            };
            st.on_feedback(0, fb);
            if matches!(st.status(), Status::D { .. }) {
                break;
            }
        }
        let mut tc = 0u64;
        loop {
            tc += 1;
            let a = st.act(0, &mut rng);
            if tc.is_multiple_of(2) {
                if tc.is_power_of_two() && tc >= 4 {
                    assert_eq!(a, Action::Transmit(Message::Control(ControlBit::Probe)));
                } else {
                    assert_eq!(a, Action::Listen);
                }
                st.on_feedback(0, if a.is_transmit() { Feedback::TransmittedNoAck } else { Feedback::NothingHeard });
                continue;
            }
            if a.is_transmit() {
                assert_eq!(a, Action::Transmit(Message::Data(PayloadTag(1))));
                assert_eq!(st.on_feedback(0, Feedback::Acked), Liveness::Off);
                assert!(st.delivered());
                break;
            }
            st.on_feedback(0, Feedback::NothingHeard);
        }
    }
}
