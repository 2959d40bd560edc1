//! Reconstruction of leader-election / dissemination epochs from a trace of
//! the adaptive protocol, and the invariants they must satisfy.
//!
//! An epoch opens with a data success while no dissemination is running
//! (the election) and closes at the round the leader's "anybody out there?"
//! probe goes through alone.

use std::collections::{BTreeMap, BTreeSet};

use crate::channel::{ControlBit, Message, RoundOutcome, StationId};
use crate::engine::{Trace, TrialRecord};
use crate::error::{Error, Result};
use crate::protocol::adaptive::AdaptiveParams;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Epoch {
    pub leader: StationId,
    pub election_round: u64,
    pub d_start: u64,
    /// Round of the leader's acknowledged probe; `None` if the trace ends
    /// inside the dissemination mode.
    pub d_end: Option<u64>,
    /// Stations other than the leader active in this dissemination mode.
    pub members: BTreeSet<StationId>,
    /// Data deliveries of members, by station.
    pub deliveries: BTreeMap<StationId, u64>,
    pub probe_rounds: Vec<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct EpochReport {
    pub epochs: Vec<Epoch>,
    /// Protocol rule violations observed while scanning.
    pub anomalies: Vec<String>,
}

/// Splits an adaptive-protocol trace into epochs.
pub fn extract_epochs(trace: &Trace, params: &AdaptiveParams) -> Result<EpochReport> {
    let mut report = EpochReport::default();
    let mut open: Option<Epoch> = None;
    let mut expected_round = 1;
    for r in &trace.rounds {
        if r.round != expected_round {
            return Err(Error::MalformedTrace(format!(
                "round {} follows round {}",
                r.round,
                expected_round - 1
            )));
        }
        expected_round += 1;
        let t = r.round;

        match open.as_mut() {
            None => {
                for (u, m) in &r.transmitters {
                    if let Message::Control(bit) = m {
                        report.anomalies.push(format!(
                            "round {t}: station {} sent control bit {} outside dissemination mode",
                            u.0,
                            bit.bit()
                        ));
                    }
                }
                if let RoundOutcome::Success {
                    sender,
                    message: Message::Data(_),
                } = r.outcome
                {
                    open = Some(Epoch {
                        leader: sender,
                        election_round: t,
                        d_start: t + 1,
                        d_end: None,
                        members: BTreeSet::new(),
                        deliveries: BTreeMap::new(),
                        probe_rounds: Vec::new(),
                    });
                }
            }
            Some(e) => {
                let tc = t - e.election_round;
                let probe_round = params.is_control_round(tc);
                if probe_round {
                    e.probe_rounds.push(t);
                }
                for (u, m) in &r.transmitters {
                    match m {
                        Message::Control(ControlBit::DMode) => {
                            if *u != e.leader {
                                report.anomalies.push(format!(
                                    "round {t}: control bit 0 from {} while {} leads",
                                    u.0, e.leader.0
                                ));
                            }
                            if tc % 2 == 1 || probe_round {
                                report.anomalies.push(format!(
                                    "round {t}: control bit 0 at tc = {tc}"
                                ));
                            }
                        }
                        Message::Control(ControlBit::Probe) => {
                            if !probe_round {
                                report
                                    .anomalies
                                    .push(format!("round {t}: probe at non-control tc = {tc}"));
                            }
                            if *u != e.leader {
                                e.members.insert(*u);
                            }
                        }
                        Message::Data(_) => {
                            if *u == e.leader {
                                report.anomalies.push(format!(
                                    "round {t}: leader {} sent data again",
                                    u.0
                                ));
                            }
                            if tc % 2 == 0 {
                                report
                                    .anomalies
                                    .push(format!("round {t}: data from {} at even tc = {tc}", u.0));
                            }
                            e.members.insert(*u);
                        }
                    }
                }
                match r.outcome {
                    RoundOutcome::Success {
                        sender,
                        message: Message::Data(_),
                    } => {
                        e.deliveries.insert(sender, t);
                    }
                    RoundOutcome::Success {
                        sender,
                        message: Message::Control(ControlBit::Probe),
                    } => {
                        if sender == e.leader {
                            e.d_end = Some(t);
                            report.epochs.push(open.take().expect("open epoch"));
                        } else {
                            report.anomalies.push(format!(
                                "round {t}: probe of follower {} went through alone",
                                sender.0
                            ));
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    if let Some(e) = open {
        report.epochs.push(e);
    }
    Ok(report)
}

/// Checks leader uniqueness, follower-before-leader termination and
/// single delivery on one adaptive-protocol trial. Returns the list of
/// violations, empty when everything holds.
pub fn check_epoch_invariants(record: &TrialRecord, params: &AdaptiveParams) -> Result<Vec<String>> {
    let trace = record
        .trace
        .as_ref()
        .ok_or_else(|| Error::MalformedTrace("trial was run without trace recording".into()))?;
    let report = extract_epochs(trace, params)?;
    let mut out = report.anomalies.clone();

    let mut data_successes: BTreeMap<u32, u32> = BTreeMap::new();
    for r in &trace.rounds {
        if let RoundOutcome::Success {
            sender,
            message: Message::Data(_),
        } = r.outcome
        {
            *data_successes.entry(sender.0).or_default() += 1;
        }
    }

    let mut leaders = BTreeSet::new();
    for (i, e) in report.epochs.iter().enumerate() {
        if !leaders.insert(e.leader) {
            out.push(format!("station {} led more than one epoch", e.leader.0));
        }
        if let Some(prev) = i.checked_sub(1).map(|j| &report.epochs[j]) {
            if prev.d_end.is_none_or(|end| end >= e.election_round) {
                out.push(format!("epochs #{} and #{i} overlap", i - 1));
            }
        }
        let leader_rec = &record.stations[e.leader.0 as usize];
        if leader_rec.first_success != Some(e.election_round) {
            out.push(format!(
                "leader {} delivered at {:?}, not at its election round {}",
                e.leader.0, leader_rec.first_success, e.election_round
            ));
        }
        if let Some(end) = e.d_end {
            if leader_rec.switched_off != Some(end) {
                out.push(format!("leader {} did not switch off at epoch end {end}", e.leader.0));
            }
            for m in &e.members {
                let rec = &record.stations[m.0 as usize];
                match (e.deliveries.get(m), rec.switched_off) {
                    (Some(&d), Some(off)) if d < end && off == d => {}
                    (d, off) => out.push(format!(
                        "follower {} delivered at {d:?}, off at {off:?}, leader done at {end}",
                        m.0
                    )),
                }
            }
        }
    }

    if record.completed {
        for s in &record.stations {
            let n = data_successes.get(&s.id).copied().unwrap_or(0);
            if n != 1 {
                out.push(format!("station {} delivered {n} times", s.id));
            }
        }
    }
    Ok(out)
}
