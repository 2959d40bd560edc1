//! Self-check suite: deterministic model and schedule properties plus a
//! small Monte Carlo pass over every protocol. Used by `contention verify`.

use crate::adversary::{
    blocking_instance, verify_sigma_hat, AdversarySpec, BlockingInstanceConfig, BlockingVariant,
};
use crate::channel::{arbitrate, feedback_for, Action, Feedback, Message, PayloadTag, RoundOutcome, StationId};
use crate::engine::{run_simulation, sigma_hat, write_trace, SimConfig, TrialRecord};
use crate::epochs::check_epoch_invariants;
use crate::error::Result;
use crate::experiments::{run_trial, run_trials, ExperimentConfig};
use crate::protocol::adaptive::AdaptiveParams;
use crate::protocol::nonadaptive::{
    cumulative_sum, nak_total_rounds, sublinear_probability, AckMode, SublinearSchedule,
};
use crate::protocol::ProtocolSpec;
use crate::rng::adversary_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, violations: Vec<String>) -> Self {
        let ok = violations.is_empty();
        let detail = if ok {
            String::new()
        } else {
            let shown: Vec<&str> = violations.iter().take(5).map(String::as_str).collect();
            format!("{} violation(s): {}", violations.len(), shown.join("; "))
        };
        Self {
            name: name.to_string(),
            ok,
            detail,
        }
    }
}

/// Checks arbitration and feedback for `m` simultaneous data transmitters
/// among `m + 2` stations.
pub fn channel_table_violations(m: u32) -> Vec<String> {
    let mut out = Vec::new();
    let n = m + 2;
    let actions: Vec<(StationId, Action)> = (0..n)
        .map(|i| {
            let a = if i < m {
                Action::Transmit(Message::Data(PayloadTag(i as u64)))
            } else {
                Action::Listen
            };
            (StationId(i), a)
        })
        .collect();
    let outcome = arbitrate(&actions);
    let expected_ok = match (m, &outcome) {
        (0, RoundOutcome::Silence) => true,
        (1, RoundOutcome::Success { sender, .. }) => *sender == StationId(0),
        (m, RoundOutcome::Collision { transmitters }) => m >= 2 && *transmitters == m,
        _ => false,
    };
    if !expected_ok {
        out.push(format!("m = {m}: outcome {outcome:?}"));
    }
    for (id, a) in &actions {
        let sender = matches!(outcome, RoundOutcome::Success { sender, .. } if sender == *id);
        let fb = feedback_for(&outcome, a, sender);
        let want = match (a, m) {
            (Action::Transmit(_), 1) => Feedback::Acked,
            (Action::Transmit(_), _) => Feedback::TransmittedNoAck,
            (Action::Listen, 1) => Feedback::Heard(Message::Data(PayloadTag(0))),
            (Action::Listen, _) => Feedback::NothingHeard,
        };
        if fb != want {
            out.push(format!("m = {m}, station {}: {fb:?}, expected {want:?}", id.0));
        }
    }
    out
}

pub fn nak_length_violations(max_exp: u32, max_c: u64) -> Vec<String> {
    let mut out = Vec::new();
    for e in 2..=max_exp {
        let k = 1u64 << e;
        for c in 1..=max_c {
            let len = nak_total_rounds(k, c);
            if len >= 3 * c * k {
                out.push(format!("k = {k}, c = {c}: {len} ≥ 3ck"));
            }
        }
    }
    out
}

/// `s(i) < b·ln²(i/b)` on a grid.
pub fn sublinear_sum_violations() -> Vec<String> {
    let mut out = Vec::new();
    for b in [1u64, 2, 4] {
        let sched = SublinearSchedule { b };
        for i in [100u64, 1_000, 10_000] {
            let s = cumulative_sum(&sched, i);
            let bound = b as f64 * ((i as f64) / b as f64).ln().powi(2);
            if s >= bound {
                out.push(format!("b = {b}, i = {i}: s = {s} ≥ {bound}"));
            }
        }
    }
    out
}

/// Front-loaded instance at k = 8192, γ = 3, b = 1 keeps σ̂ ≥ 39 over its
/// window, and the window check agrees with the engine's σ̂.
pub fn blocking_instance_violations() -> Vec<String> {
    let mut out = Vec::new();
    let cfg = BlockingInstanceConfig {
        k: 8192,
        gamma: 3.0,
        p1: sublinear_probability(1, 1),
        t1: None,
        t2: 1,
        variant: BlockingVariant::FrontLoaded,
    };
    let inst = match blocking_instance(&cfg, &mut adversary_rng(0)) {
        Ok(i) => i,
        Err(e) => return vec![e.to_string()],
    };
    let p = |i| sublinear_probability(i, 1);
    let window = cfg.phase_one_rounds();
    let check = verify_sigma_hat(&inst, p, cfg.threshold(), 1..=window);
    if !check.ok {
        out.push(format!("σ̂[{}] = {} below {}", check.argmin, check.min, cfg.threshold()));
    }
    let direct = (1..=window)
        .map(|t| sigma_hat(t, inst.entries(), p))
        .fold(f64::INFINITY, f64::min);
    if direct != check.min {
        out.push(format!("window minimum {} differs from engine σ̂ {direct}", check.min));
    }
    out
}

/// Record-level properties of one trial.
pub fn record_violations(rec: &TrialRecord, acks: bool) -> Vec<String> {
    let mut out = Vec::new();
    for s in &rec.stations {
        if let Some(f) = s.first_success {
            if f <= s.activation {
                out.push(format!("station {}: success {f} not after activation {}", s.id, s.activation));
            }
            if s.transmissions == 0 {
                out.push(format!("station {}: succeeded without transmitting", s.id));
            }
            if acks && s.last_transmission != Some(f) {
                out.push(format!(
                    "station {}: transmitted at {:?} after its ack at {f}",
                    s.id, s.last_transmission
                ));
            }
        }
    }
    out
}

fn trace_bytes(rec: &TrialRecord) -> Vec<u8> {
    let mut buf = Vec::new();
    if let Some(t) = &rec.trace {
        write_trace(t, &mut buf).expect("writing to memory");
    }
    buf
}

/// Exact probabilities for two batch stations running a scripted protocol
/// with acknowledgements: (P[≥ 1 success by round r1], P[both by round r2]).
pub fn two_station_exact(script: &[f64], r1: usize, r2: usize) -> (f64, f64) {
    struct Leaf {
        first: Option<usize>,
        both: Option<usize>,
        weight: f64,
    }

    fn walk(script: &[f64], round: usize, alive: [bool; 2], first: Option<usize>, w: f64, leaves: &mut Vec<Leaf>) {
        if round > script.len() {
            leaves.push(Leaf { first, both: None, weight: w });
            return;
        }
        let p = script[round - 1];
        let coin = |live: bool, tx: bool| match (live, tx) {
            (true, true) => p,
            (true, false) => 1.0 - p,
            (false, tx) => (!tx) as u8 as f64,
        };
        for a in [false, true] {
            for b in [false, true] {
                let pw = w * coin(alive[0], a) * coin(alive[1], b);
                if pw == 0.0 {
                    continue;
                }
                let mut next = alive;
                let first = if a != b {
                    next[if a { 0 } else { 1 }] = false;
                    first.or(Some(round))
                } else {
                    first
                };
                if next == [false, false] {
                    leaves.push(Leaf { first, both: Some(round), weight: pw });
                } else {
                    walk(script, round + 1, next, first, pw, leaves);
                }
            }
        }
    }

    let mut leaves = Vec::new();
    walk(script, 1, [true, true], None, 1.0, &mut leaves);
    let any = leaves.iter().filter(|l| l.first.is_some_and(|f| f <= r1)).map(|l| l.weight).sum();
    let both = leaves.iter().filter(|l| l.both.is_some_and(|b| b <= r2)).map(|l| l.weight).sum();
    (any, both)
}

fn small(protocol: ProtocolSpec, adversary: AdversarySpec, k: u32, trials: u32) -> ExperimentConfig {
    ExperimentConfig::new(protocol, adversary, k, trials, 0xC0FFEE).with_traces(true)
}

/// Runs the whole suite.
pub fn run_suite() -> Result<Vec<CheckResult>> {
    let mut checks = Vec::new();
    let table: Vec<String> = [0, 1, 2, 5].into_iter().flat_map(channel_table_violations).collect();
    checks.push(CheckResult::new("channel arbitration and feedback table", table));
    checks.push(CheckResult::new("schedule length below 3ck", nak_length_violations(20, 16)));
    checks.push(CheckResult::new("sublinear prefix sums below b·ln²(i/b)", sublinear_sum_violations()));
    checks.push(CheckResult::new("front-loaded instance keeps σ̂ above threshold", blocking_instance_violations()));

    let ack_on = |b| ProtocolSpec::Sublinear { b, ack: AckMode::SwitchOffOnAck };
    let batches = [
        small(ProtocolSpec::Nak { k: 32, c: 8 }, AdversarySpec::Batch, 32, 20),
        small(ProtocolSpec::Nak { k: 32, c: 8 }, AdversarySpec::WakeOnSuccess { burst: 4 }, 32, 20),
        small(ack_on(8), AdversarySpec::Trickle { gap: 1 }, 32, 20),
        small(
            ProtocolSpec::Sublinear { b: 8, ack: AckMode::IgnoreAcks },
            AdversarySpec::Uniform { horizon: 64 },
            16,
            10,
        ),
        small(ProtocolSpec::Sawtooth { initial_phase: 1 }, AdversarySpec::Batch, 32, 20),
        small(ProtocolSpec::Adaptive(AdaptiveParams::default()), AdversarySpec::Batch, 32, 20),
        small(ProtocolSpec::Adaptive(AdaptiveParams::default()), AdversarySpec::Trickle { gap: 2 }, 32, 20),
        small(
            ProtocolSpec::Adaptive(AdaptiveParams::default()),
            AdversarySpec::WakeOnSuccess { burst: 4 },
            32,
            20,
        ),
    ];
    for cfg in &batches {
        let label = format!("{} vs {}", cfg.protocol, cfg.adversary);
        let records = run_trials(cfg)?;
        let mut v = Vec::new();
        for (i, r) in records.iter().enumerate() {
            if !r.completed {
                v.push(format!("trial {i} did not complete in {} rounds", r.rounds_used));
            }
            v.extend(record_violations(r, cfg.protocol.acks()));
            if let ProtocolSpec::Adaptive(p) = &cfg.protocol {
                v.extend(check_epoch_invariants(r, p)?.into_iter().map(|s| format!("trial {i}: {s}")));
            }
        }
        checks.push(CheckResult::new(&format!("monte carlo: {label}"), v));

        let again = run_trial(cfg, 3)?;
        let same = trace_bytes(&again) == trace_bytes(&records[3]);
        checks.push(CheckResult::new(
            &format!("replay determinism: {label}"),
            if same { vec![] } else { vec!["trace bytes differ".into()] },
        ));
    }

    let script = vec![0.5, 0.5, 0.5];
    let (any_exact, both_exact) = two_station_exact(&script, 2, 3);
    let proto = ProtocolSpec::Scripted {
        probabilities: script,
        ack: AckMode::SwitchOffOnAck,
    };
    let n = 20_000u32;
    let mut any = 0u32;
    let mut both = 0u32;
    for i in 0..n {
        let rec = run_simulation(
            &proto.factory(),
            &mut crate::adversary::batch_schedule(2).source(),
            &SimConfig::new(2, crate::rng::trial_seed(99, i as u64)).with_max_rounds(3),
        )?;
        any += rec.first_channel_success.is_some_and(|t| t <= 2) as u32;
        both += rec.stations.iter().all(|s| s.first_success.is_some_and(|t| t <= 3)) as u32;
    }
    let mut v = Vec::new();
    for (what, hits, exact) in [("≥ 1 success by round 2", any, any_exact), ("both by round 3", both, both_exact)] {
        let est = hits as f64 / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        if (est - exact).abs() > 3.0 * se {
            v.push(format!("{what}: estimate {est:.4}, exact {exact:.4}"));
        }
    }
    checks.push(CheckResult::new("two-station enumeration vs simulation", v));
    Ok(checks)
}
