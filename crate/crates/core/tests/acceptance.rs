//! Acceptance run: one pass/fail line per criterion, nonzero exit if any
//! criterion fails. Built with `harness = false` so the lines are always
//! printed.
//!
//! Fitted-constant methodology, shared by every scaling criterion: the
//! constant is fitted on the smallest grid point (p99 of metric/bound for
//! whp claims, median for energy claims) and must stay within a factor 2
//! across the grid. A whp claim passes when, at every grid point, at least
//! 99% of trials satisfy `metric ≤ 2·C·bound(k)`.

use std::process::ExitCode;
use std::time::Instant;

use contention_core::adversary::{
    batch_schedule, blocking_instance, verify_sigma_hat, BlockingInstanceConfig, BlockingVariant,
};
use contention_core::channel::{arbitrate, feedback_for};
use contention_core::engine::{run_simulation, write_trace};
use contention_core::epochs::check_epoch_invariants;
use contention_core::experiments::{
    blocking_experiment, energy_of, latency_bound, max_latency, run_trials, wakeup_time,
    BlockingExperiment, ExperimentConfig,
};
use contention_core::protocol::nonadaptive::{cumulative_sum, nak_total_rounds, sublinear_probability};
use contention_core::rng::trial_seed;
use contention_core::stats::{median, quantile_sorted, wilson_interval};
use contention_core::*;

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn p99(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.99)
}

fn fraction(values: &[f64], limit: f64) -> f64 {
    values.iter().filter(|&&v| v <= limit).count() as f64 / values.len() as f64
}

/// Fits C on the first grid point and checks the whp fraction within
/// 2·C·bound at every point. `samples[i]` are per-trial metric values at
/// `grid[i]`.
fn whp_fit(grid: &[u32], samples: &[Vec<f64>], bound: impl Fn(u32) -> f64) -> (bool, String) {
    let c = p99(&samples[0]) / bound(grid[0]);
    let mut pass = c.is_finite();
    let mut parts = vec![format!("C={c:.3}")];
    let ratios: Vec<f64> = grid.iter().zip(samples).map(|(&k, s)| p99(s) / bound(k)).collect();
    for ((&k, s), r) in grid.iter().zip(samples).zip(&ratios) {
        let f = fraction(s, 2.0 * c * bound(k));
        pass &= f >= 0.99;
        parts.push(format!("k={k}: p99/bound={r:.3} frac={f:.3}"));
    }
    let spread = ratios.iter().cloned().fold(f64::MIN, f64::max) / ratios.iter().cloned().fold(f64::MAX, f64::min);
    pass &= spread <= 2.0;
    parts.push(format!("spread={spread:.3}"));
    (pass, parts.join(", "))
}

/// Median-based energy fit: C from the first grid point, spread ≤ 2.
fn energy_fit(grid: &[u32], medians: &[f64], bound: impl Fn(u32) -> f64) -> (bool, String) {
    let ratios: Vec<f64> = grid.iter().zip(medians).map(|(&k, m)| m / bound(k)).collect();
    let spread = ratios.iter().cloned().fold(f64::MIN, f64::max) / ratios.iter().cloned().fold(f64::MAX, f64::min);
    let rows: Vec<String> = grid
        .iter()
        .zip(medians)
        .zip(&ratios)
        .map(|((k, m), r)| format!("k={k}: median={m} ratio={r:.3}"))
        .collect();
    (spread <= 2.0, format!("C={:.3}, {}, spread={spread:.3}", ratios[0], rows.join(", ")))
}

fn runs(protocol: &ProtocolSpec, adversary: &str, k: u32, trials: u32, traces: bool) -> Vec<TrialRecord> {
    let cfg = ExperimentConfig::new(protocol.clone(), adversary.parse().unwrap(), k, trials, SEED).with_traces(traces);
    run_trials(&cfg).expect("valid configuration")
}

fn c1_channel() -> Outcome {
    let mut bad = Vec::new();
    for m in [0u32, 1, 2, 5] {
        let n = m + 3;
        let actions: Vec<(StationId, Action)> = (0..n)
            .map(|i| {
                let a = if i < m {
                    Action::Transmit(Message::Data(PayloadTag(100 + i as u64)))
                } else {
                    Action::Listen
                };
                (StationId(i), a)
            })
            .collect();
        let o = arbitrate(&actions);
        let expect = match m {
            0 => RoundOutcome::Silence,
            1 => RoundOutcome::Success {
                sender: StationId(0),
                message: Message::Data(PayloadTag(100)),
            },
            _ => RoundOutcome::Collision { transmitters: m },
        };
        if o != expect {
            bad.push(format!("m={m}: {o:?}"));
        }
        for (id, a) in &actions {
            let is_sender = m == 1 && id.0 == 0;
            let fb = feedback_for(&o, a, is_sender);
            let want = match (a.is_transmit(), m) {
                (true, 1) => Feedback::Acked,
                (true, _) => Feedback::TransmittedNoAck,
                (false, 1) => Feedback::Heard(Message::Data(PayloadTag(100))),
                (false, _) => Feedback::NothingHeard,
            };
            if fb != want {
                bad.push(format!("m={m} station {}: {fb:?}", id.0));
            }
        }
    }
    // Listeners cannot tell silence from collision.
    let silent = feedback_for(&RoundOutcome::Silence, &Action::Listen, false);
    let collided = feedback_for(&RoundOutcome::Collision { transmitters: 2 }, &Action::Listen, false);
    if silent != collided {
        bad.push("listener distinguishes silence from collision".into());
    }
    outcome(bad.is_empty(), format!("m in {{0,1,2,5}}, {} mismatches", bad.len()))
}

fn c2_schedule_length() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    for e in 2..=20 {
        let k = 1u64 << e;
        for c in 1..=16u64 {
            let len = nak_total_rounds(k, c);
            worst = worst.max(len as f64 / (3 * c * k) as f64);
            bad += (len >= 3 * c * k) as u32;
        }
    }
    outcome(bad == 0, format!("max length/(3ck) = {worst:.4} over 304 pairs"))
}

struct NakRuns {
    adversary: &'static str,
    per_k: Vec<(u32, Vec<TrialRecord>)>,
}

const GRID: [u32; 3] = [16, 64, 256];

fn c3_nak_latency(all: &[NakRuns]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in all {
        for (k, recs) in &r.per_k {
            let limit = nak_total_rounds(*k as u64, 8) as f64;
            let lat: Vec<f64> = recs.iter().map(max_latency).collect();
            let f = fraction(&lat, limit);
            pass &= f >= 0.99;
            parts.push(format!("{}/k={k}: {f:.3}", r.adversary));
        }
    }
    outcome(pass, parts.join(", "))
}

fn c4_nak_energy(all: &[NakRuns]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in all {
        let medians: Vec<f64> = r
            .per_k
            .iter()
            .map(|(_, recs)| median(&recs.iter().map(|x| energy_of(x) as f64).collect::<Vec<_>>()))
            .collect();
        let (ok, d) = energy_fit(&GRID, &medians, |k| k as f64 * (k as f64).log2());
        pass &= ok;
        parts.push(format!("{}: {d}", r.adversary));
    }
    outcome(pass, parts.join(" | "))
}

fn c5_decrease_slowly() -> Outcome {
    let grid = [64u32, 256];
    let samples: Vec<Vec<f64>> = grid
        .iter()
        .map(|&k| {
            runs(&ProtocolSpec::DecreaseSlowly { q: 2.0 }, "batch", k, 500, false)
                .iter()
                .map(wakeup_time)
                .collect()
        })
        .collect();
    // Two points only, so the spread rule is not applied.
    let c = p99(&samples[0]) / 64.0;
    let mut pass = c.is_finite();
    let mut parts = vec![format!("C={c:.3}")];
    for (&k, s) in grid.iter().zip(&samples) {
        let f = fraction(s, 2.0 * c * k as f64);
        pass &= f >= 0.99;
        parts.push(format!("k={k}: p99/k={:.3} frac={f:.3}", p99(s) / k as f64));
    }
    outcome(pass, parts.join(", "))
}

fn c6_sawtooth() -> Outcome {
    let proto = ProtocolSpec::Sawtooth { initial_phase: 1 };
    let data: Vec<Vec<TrialRecord>> = GRID.iter().map(|&k| runs(&proto, "batch", k, 200, false)).collect();
    let lat: Vec<Vec<f64>> = data.iter().map(|r| r.iter().map(max_latency).collect()).collect();
    let (mut pass, d1) = whp_fit(&GRID, &lat, |k| k as f64);

    // Per-station transmissions against (log₂ T)², T = rounds to termination.
    let per_trial = |r: &TrialRecord| {
        let t = r.rounds_used as f64;
        let most = r.stations.iter().map(|s| s.transmissions).max().unwrap_or(0) as f64;
        most / t.log2().powi(2)
    };
    let c2 = data[0].iter().map(per_trial).fold(0.0, f64::max);
    let worst = data.iter().flatten().map(per_trial).fold(0.0, f64::max);
    pass &= worst <= 2.0 * c2;
    outcome(pass, format!("latency {d1}; tx/(log2 T)^2: C'={c2:.3}, max over grid {worst:.3}"))
}

fn c7_adaptive() -> Outcome {
    let params = AdaptiveParams::default();
    let proto = ProtocolSpec::Adaptive(params);
    let mut pass = true;
    let mut parts = Vec::new();
    for adv in ["batch", "trickle:2", "wake-on-success:4"] {
        let mut medians = Vec::new();
        let mut violations = 0;
        let mut fracs = Vec::new();
        for &k in &GRID {
            let recs = runs(&proto, adv, k, 200, true);
            let done = recs.iter().filter(|r| r.completed).count();
            let f = done as f64 / recs.len() as f64;
            pass &= f >= 0.99;
            fracs.push(format!("{f:.3}"));
            for r in &recs {
                violations += !check_epoch_invariants(r, &params).unwrap().is_empty() as u32;
            }
            medians.push(median(&recs.iter().map(max_latency).collect::<Vec<_>>()));
        }
        let ratios: Vec<f64> = medians.windows(2).map(|w| w[1] / w[0]).collect();
        pass &= violations == 0 && ratios.iter().all(|&r| r <= 6.0);
        parts.push(format!(
            "{adv}: completed [{}], median latency {:?}, consecutive ratios [{}], invariant violations {violations}",
            fracs.join(", "),
            medians,
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ")
        ));
    }
    outcome(pass, parts.join(" | "))
}

fn c8_c9_sublinear() -> (Outcome, Outcome) {
    let mut pass8 = true;
    let mut pass9 = true;
    let mut parts8 = Vec::new();
    let mut parts9 = Vec::new();
    for ack in [AckMode::SwitchOffOnAck, AckMode::IgnoreAcks] {
        let proto = ProtocolSpec::Sublinear { b: 8, ack };
        let bound = latency_bound(&proto);
        for adv in ["batch", "trickle:1"] {
            let data: Vec<Vec<TrialRecord>> = GRID.iter().map(|&k| runs(&proto, adv, k, 200, false)).collect();
            let lat: Vec<Vec<f64>> = data.iter().map(|r| r.iter().map(max_latency).collect()).collect();
            let (ok, d) = whp_fit(&GRID, &lat, bound);
            pass8 &= ok;
            parts8.push(format!("{}/{adv}: {d}", proto));
            let medians: Vec<f64> = data
                .iter()
                .map(|r| median(&r.iter().map(|x| energy_of(x) as f64).collect::<Vec<_>>()))
                .collect();
            let (ok, d) = energy_fit(&GRID, &medians, |k| k as f64 * (k as f64).log2().powi(2));
            pass9 &= ok;
            parts9.push(format!("{}/{adv}: {d}", proto));
        }
    }
    // Prefix sums of the probability sequence: s(i) < b·ln²(i/b).
    let mut grid_ok = true;
    for b in [1u64, 2, 4] {
        let sched = contention_core::protocol::nonadaptive::SublinearSchedule { b };
        for i in [100u64, 1_000, 10_000] {
            grid_ok &= cumulative_sum(&sched, i) < b as f64 * (i as f64 / b as f64).ln().powi(2);
        }
    }
    pass8 &= grid_ok;
    parts8.push(format!("prefix-sum grid {}", if grid_ok { "holds" } else { "violated" }));
    (outcome(pass8, parts8.join(" | ")), outcome(pass9, parts9.join(" | ")))
}

fn c10_blocking() -> Outcome {
    let cfg = BlockingInstanceConfig {
        k: 8192,
        gamma: 3.0,
        p1: sublinear_probability(1, 1),
        t1: None,
        t2: 1,
        variant: BlockingVariant::FrontLoaded,
    };
    let inst = blocking_instance(&cfg, &mut contention_core::rng::adversary_rng(SEED)).unwrap();
    let window = cfg.phase_one_rounds();
    let check = verify_sigma_hat(&inst, |i| sublinear_probability(i, 1), 39.0, 1..=window);
    let report = blocking_experiment(&BlockingExperiment::front_loaded(8192, 3.0, 1, 100, SEED));
    match report {
        Ok(r) => {
            let pass = check.ok && window == 76 && r.zero_success_fraction >= 0.90;
            outcome(
                pass,
                format!(
                    "window [1, {window}], min σ̂ = {:.3} at t = {}, per-round bound {:.3e}, zero-success fraction {:.2}",
                    r.sigma_hat_min, r.sigma_hat_argmin, r.per_round_success_bound, r.zero_success_fraction
                ),
            )
        }
        Err(e) => outcome(false, format!("experiment aborted: {e}")),
    }
}

/// Exhaustive outcome tree of two stations running the two-round script
/// (1/2, 1/2) with acknowledgements: 2 stations × 2 rounds of coins.
fn two_station_tree() -> (f64, f64) {
    let mut any_by_2 = 0.0;
    let mut both_by_3 = 0.0;
    for coins in 0u32..16 {
        let tx = |station: u32, round: u32| coins >> (2 * round + station) & 1 == 1;
        let weight = 1.0 / 16.0;
        let mut done = [false; 2];
        let mut any = false;
        for round in 0..2 {
            let a = !done[0] && tx(0, round);
            let b = !done[1] && tx(1, round);
            if a != b {
                done[if a { 0 } else { 1 }] = true;
                any = true;
            }
        }
        // Round 3 is silent: the script is exhausted.
        if any {
            any_by_2 += weight;
        }
        if done == [true, true] {
            both_by_3 += weight;
        }
    }
    (any_by_2, both_by_3)
}

fn c11_oracle() -> Outcome {
    let (any_exact, both_exact) = two_station_tree();
    let proto = ProtocolSpec::Scripted {
        probabilities: vec![0.5, 0.5],
        ack: AckMode::SwitchOffOnAck,
    };
    let factory = proto.factory();
    let n = 100_000u64;
    let (mut any, mut both) = (0u64, 0u64);
    for i in 0..n {
        let cfg = SimConfig::new(2, trial_seed(SEED, i)).with_max_rounds(3);
        let r = run_simulation(&factory, &mut batch_schedule(2).source(), &cfg).unwrap();
        any += r.first_channel_success.is_some_and(|t| t <= 2) as u64;
        both += r.stations.iter().all(|s| s.first_success.is_some_and(|t| t <= 3)) as u64;
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (what, hits, exact) in [("≥1 success by round 2", any, any_exact), ("both by round 3", both, both_exact)] {
        let est = hits as f64 / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        let z = (est - exact) / se;
        pass &= z.abs() <= 3.0;
        let (lo, hi) = wilson_interval(hits as usize, n as usize, 1.96);
        parts.push(format!("{what}: exact {exact:.4}, simulated {est:.4} [{lo:.4}, {hi:.4}], z = {z:.2}"));
    }
    outcome(pass, parts.join(", "))
}

fn c12_determinism() -> Outcome {
    let configs = [
        (ProtocolSpec::Nak { k: 64, c: 8 }, "wake-on-success:4"),
        (ProtocolSpec::Sublinear { b: 8, ack: AckMode::IgnoreAcks }, "uniform:200"),
        (ProtocolSpec::Adaptive(AdaptiveParams::default()), "trickle:2"),
        (ProtocolSpec::Sawtooth { initial_phase: 1 }, "batch"),
    ];
    let bytes = |recs: &[TrialRecord]| {
        let mut buf = Vec::new();
        for r in recs {
            write_trace(r.trace.as_ref().unwrap(), &mut buf).unwrap();
        }
        buf
    };
    let mut same = 0;
    for (p, adv) in &configs {
        let a = runs(p, adv, 64, 5, true);
        let b = runs(p, adv, 64, 5, true);
        same += (bytes(&a) == bytes(&b)) as u32;
    }
    outcome(same == configs.len() as u32, format!("{same}/{} configurations byte-identical on rerun", configs.len()))
}

fn nak_runs() -> Vec<NakRuns> {
    ["batch", "trickle:1", "wake-on-success:4"]
        .into_iter()
        .map(|adversary| NakRuns {
            adversary,
            per_k: GRID
                .iter()
                .map(|&k| (k, runs(&ProtocolSpec::Nak { k: k as u64, c: 8 }, adversary, k, 200, false)))
                .collect(),
        })
        .collect()
}

fn main() -> ExitCode {
    let mut failed = Vec::new();
    let mut report = |id: u32, name: &str, started: Instant, o: Outcome| {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        let secs = started.elapsed().as_secs_f64();
        println!("criterion {id:>2} {verdict}: {name} ({secs:.1}s): {}", o.detail);
        if !o.pass {
            failed.push(id);
        }
    };

    let t = Instant::now();
    report(1, "channel semantics", t, c1_channel());
    let t = Instant::now();
    report(2, "schedule length below 3ck", t, c2_schedule_length());
    let t = Instant::now();
    let nak = nak_runs();
    report(3, "known-k latency within own schedule", t, c3_nak_latency(&nak));
    let t = Instant::now();
    report(4, "known-k energy O(k log k)", t, c4_nak_energy(&nak));
    drop(nak);
    let t = Instant::now();
    report(5, "DecreaseSlowly wake-up O(k)", t, c5_decrease_slowly());
    let t = Instant::now();
    report(6, "sawtooth O(k) rounds, O(log² T) transmissions", t, c6_sawtooth());
    let t = Instant::now();
    report(7, "adaptive unknown-k protocol", t, c7_adaptive());
    let t = Instant::now();
    let (o8, o9) = c8_c9_sublinear();
    report(8, "sublinear-decrease latency", t, o8);
    let t = Instant::now();
    report(9, "sublinear-decrease energy (same runs)", t, o9);
    let t = Instant::now();
    report(10, "blocking instance keeps the channel silent", t, c10_blocking());
    let t = Instant::now();
    report(11, "two-station enumeration vs simulation", t, c11_oracle());
    let t = Instant::now();
    report(12, "replay determinism", t, c12_determinism());

    if failed.is_empty() {
        println!("acceptance: all 12 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
