//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use wltb_core::channel::{
    deliver, net_throughput, per, rms_delay_spread, snr_for_per, synth_pdp, ChannelScenario, Mcs,
    McsProfile, PerCalibration, CALIBRATION_PER,
};
use wltb_core::engine::{RngStream, SimTime};
use wltb_core::scenario::{
    ClaimSpec, ConsistSpec, FaultSpec, FlowConfig, Scenario, VALIDATION_3X4,
};
use wltb_core::sim::{exit_code, run, RunOptions, Simulation};
use wltb_core::topology::{ConsistId, Orientation};
use wltb_core::traffic::{Domain, Endpoint};

struct Verdict {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn validation() -> Scenario {
    Scenario::parse(VALIDATION_3X4).expect("bundled scenario parses")
}

fn consist(id: u32, vehicles: u32) -> ConsistSpec {
    ConsistSpec {
        id,
        vehicles,
        cabs: vec![1],
        orientation: Orientation::Forward,
        equipped: true,
        powered: true,
    }
}

fn flow(id: &str, domain: Domain, from: u32, to: u32, start: f64) -> FlowConfig {
    FlowConfig {
        id: id.into(),
        domain,
        source: Endpoint {
            consist: ConsistId(from),
            device: "src".into(),
        },
        destination: Endpoint {
            consist: ConsistId(to),
            device: "dst".into(),
        },
        start,
        pattern: None,
        period_ms: None,
        rate_mbps: None,
        payload_bytes: None,
        deadline_ms: None,
        loss_bound: None,
        min_throughput_mbps: None,
    }
}

fn three_sigma(n: u64, p: f64) -> f64 {
    3.0 * (n as f64 * p * (1.0 - p)).sqrt()
}

fn bisect_snr(m: &McsProfile, target: f64) -> f64 {
    let (mut lo, mut hi) = (-50.0_f64, 100.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if per(m, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn per_calibration() -> Verdict {
    let cal = PerCalibration::default();
    let s: Vec<f64> = Mcs::ALL
        .iter()
        .map(|&m| bisect_snr(&McsProfile::new(m, &cal), CALIBRATION_PER))
        .collect();
    let r3 = s[1] - s[0];
    let r9 = s[2] - s[0];
    check(
        (r3 - 8.5).abs() <= 0.01 && (r9 - 18.0).abs() <= 0.01,
        format!("R3 offset {r3:.4} dB, R9 offset {r9:.4} dB"),
    )
}

fn bulk_scenario(mcs: Mcs) -> Scenario {
    let mut s = validation();
    s.name = Some(format!("bulk_{}", mcs.as_str()));
    s.run.duration = 11.0;
    s.train.consists = vec![consist(1, 4), consist(2, 4)];
    s.radio.mcs = mcs;
    s.cabin_claims = vec![ClaimSpec {
        at: 0.2,
        consist: 1,
        vehicle: 1,
    }];
    s.flows = vec![flow("bulk", Domain::Customer, 1, 2, 1.0)];
    s
}

fn throughput_anchors() -> Verdict {
    let anchors = [(Mcs::R2, 7.884), (Mcs::R3, 12.586), (Mcs::R9, 55.498)];
    let exact = anchors.iter().all(|&(m, v)| net_throughput(m) == v);
    let mut ok = exact;
    let mut parts = Vec::new();
    for (m, anchor) in anchors {
        let out = run(bulk_scenario(m), &RunOptions::default());
        let f = &out.flows[0];
        let window = out.end.saturating_sub(f.started_at.unwrap_or(out.end)).as_secs_f64();
        let ratio = f.throughput_mbps() / anchor;
        ok &= (0.98..=1.0).contains(&ratio) && (window - 10.0).abs() < 1e-3;
        parts.push(format!("{}: {:.3} Mbps ({:.2}%)", m.as_str(), f.throughput_mbps(), ratio * 100.0));
    }
    check(ok, format!("anchors exact: {exact}; {}", parts.join(", ")))
}

fn pdp_constraints() -> Verdict {
    let hst = synth_pdp(ChannelScenario::HstInterVehicle, 120.0).expect("supported bandwidth");
    let second_tap_ok = hst.taps[1].power_db <= hst.taps[0].power_db - 10.0;
    let decay_ok = hst
        .taps
        .iter()
        .find(|t| t.power_db <= hst.taps[0].power_db - 20.0 + 1e-9)
        .is_some_and(|t| t.delay_ns <= 100.0 + 1e-9);
    let spread = |s: ChannelScenario| {
        rms_delay_spread(&synth_pdp(s, s.default_bandwidth_mhz()).expect("default bandwidth"))
    };
    let order = [
        ChannelScenario::MetroTunnel,
        ChannelScenario::MetroStation,
        ChannelScenario::MetroOpenField,
        ChannelScenario::HstInterVehicle,
    ];
    let tau: Vec<f64> = order.iter().map(|&s| spread(s)).collect();
    let ordered = tau.windows(2).all(|w| w[0] - w[1] > 1.0);
    check(
        second_tap_ok && decay_ok && ordered,
        format!(
            "second tap {:.1} dB, 20 dB decay ok: {decay_ok}, rms spreads tunnel/station/open/hst = {:.2}/{:.2}/{:.2}/{:.2} ns",
            hst.taps[1].power_db - hst.taps[0].power_db,
            tau[0],
            tau[1],
            tau[2],
            tau[3]
        ),
    )
}

fn inauguration_reproduction() -> Verdict {
    let mut s = validation();
    s.run.duration = 2.5;
    let mut failures = Vec::new();
    for seed in 0..100u64 {
        let out = run(
            s.clone(),
            &RunOptions {
                seed: Some(seed),
                no_traffic: true,
                ..Default::default()
            },
        );
        let ok = out.nodes.len() == 3
            && out.nodes.iter().all(|n| n.otd.is_some())
            && out.directories_agree()
            && out.otd().is_some_and(|o| {
                o.tnd.len() == 3
                    && o.tnd.vehicle_count() == 12
                    && o.active_cabin.consist == ConsistId(1)
            });
        if !ok {
            failures.push(seed);
        }
    }
    check(
        failures.is_empty(),
        format!("100 seeds, failing seeds: {failures:?}"),
    )
}

fn dead_consist_survival() -> Verdict {
    let per_cfg = 0.05;
    let mut s = validation();
    s.name = Some("dead_middle".into());
    s.run.duration = 10.0;
    s.radio.per_override = Some(per_cfg);
    s.flows = vec![
        flow("tcms-c1-c3", Domain::Tcms, 1, 3, 3.0),
        flow("tcms-c3-c1", Domain::Tcms, 3, 1, 3.0),
    ];
    s.faults = vec![FaultSpec::Kill { at: 2.0, consist: 2 }];
    let mut sim = Simulation::new(s, &RunOptions::default());
    sim.run_until(SimTime::from_millis(1900));
    let before = sim.route_between(ConsistId(1), ConsistId(3));
    sim.run_until(SimTime::from_millis(2600));
    let after_13 = sim.route_between(ConsistId(1), ConsistId(3));
    let after_31 = sim.route_between(ConsistId(3), ConsistId(1));
    let out = sim.run_to_end();

    let skip = after_13 == Ok(vec![ConsistId(1), ConsistId(3)])
        && after_31 == Ok(vec![ConsistId(3), ConsistId(1)]);
    let healthy = before == Ok(vec![ConsistId(1), ConsistId(2), ConsistId(3)]);
    let mut ok = skip && healthy && out.unroutable == 0;
    let mut parts = Vec::new();
    for f in &out.flows {
        let n = f.delivered + f.dropped;
        let expect = n as f64 * per_cfg;
        let within = (f.dropped as f64 - expect).abs() <= three_sigma(n, per_cfg);
        ok &= within && f.delivered > 0;
        parts.push(format!("{}: {}/{} dropped (expected {:.1} +/- {:.1})", f.id(), f.dropped, n, expect, three_sigma(n, per_cfg)));
    }
    check(
        ok,
        format!("hops after kill {:?}; {}", after_13.unwrap_or_default(), parts.join(", ")),
    )
}

fn length_mismatch_safety() -> Verdict {
    let mut runner = TestRunner::new(Config {
        cases: 200,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..Config::default()
    });
    let strategy = (
        prop::collection::vec((1u32..=6, any::<bool>()), 2..=6),
        any::<u64>(),
    );
    let cases = std::cell::Cell::new(0u32);
    let result = runner.run(&strategy, |(shape, seed)| {
        cases.set(cases.get() + 1);
        let mut s = validation();
        s.run.duration = 3.0;
        s.flows.clear();
        s.train.consists = shape
            .iter()
            .enumerate()
            .map(|(i, &(vehicles, reversed))| {
                let mut c = consist(i as u32 + 1, vehicles);
                if reversed {
                    c.orientation = Orientation::Reversed;
                }
                c
            })
            .collect();
        s.train.consists.last_mut().expect("two or more").powered = false;
        s.cabin_claims = vec![ClaimSpec {
            at: 0.2,
            consist: 1,
            vehicle: 1,
        }];
        let out = run(
            s,
            &RunOptions {
                seed: Some(seed),
                ..Default::default()
            },
        );
        prop_assert!(out.nodes.iter().all(|n| !n.reached_operational));
        prop_assert_eq!(out.exit_code(), exit_code::LENGTH_MISMATCH);
        Ok(())
    });
    check(
        result.is_ok(),
        match result {
            Ok(()) => format!("{} random topologies, exit code {}", cases.get(), exit_code::LENGTH_MISMATCH),
            Err(e) => format!("counterexample: {e}"),
        },
    )
}

fn flap_scenario(inhibit: bool) -> Scenario {
    let mut s = validation();
    s.name = Some("inhibition".into());
    s.run.duration = 9.0;
    s.flows.clear();
    let mut faults = vec![
        // C2 isolated beyond the miss budget.
        FaultSpec::LinkDown { at: 3.0, a: 1, b: 2, duration: 0.8 },
        FaultSpec::LinkDown { at: 3.0, a: 2, b: 3, duration: 0.8 },
        FaultSpec::LinkDown { at: 4.5, a: 1, b: 3, duration: 0.2 },
        FaultSpec::LinkDown { at: 4.8, a: 1, b: 2, duration: 0.3 },
        FaultSpec::Decouple { at: 6.5, after: 2 },
    ];
    if inhibit {
        faults.push(FaultSpec::Inhibit { at: 2.0, issuer: 1 });
        faults.push(FaultSpec::Uninhibit { at: 6.0, issuer: 1 });
    }
    s.faults = faults;
    s
}

/// Generations of every live node sampled every 10 ms.
fn generation_trace(s: Scenario) -> Vec<(SimTime, Vec<u32>)> {
    let mut sim = Simulation::new(s, &RunOptions::default());
    let mut out = Vec::new();
    let mut t = SimTime::ZERO;
    while t < sim.end() {
        t = t + SimTime::from_millis(10);
        sim.run_until(t);
        out.push((t, sim.nodes().map(|n| n.generation()).collect()));
    }
    out
}

fn inhibition_freeze() -> Verdict {
    let window = |trace: &[(SimTime, Vec<u32>)], from: u64, to: u64| -> Vec<u32> {
        trace
            .iter()
            .filter(|(t, _)| (from..to).contains(&t.as_micros()))
            .flat_map(|(_, g)| g.iter().copied())
            .collect()
    };
    let frozen = generation_trace(flap_scenario(true));
    let during = window(&frozen, 2_010_000, 6_000_000);
    let gen_inhibited = during.first().copied().unwrap_or(0);
    let constant = !during.is_empty() && during.iter().all(|&g| g == gen_inhibited);
    let after = window(&frozen, 8_500_000, 9_000_001);
    let bumped = !after.is_empty() && after.iter().all(|&g| g > gen_inhibited);

    let free = generation_trace(flap_scenario(false));
    let free_during = window(&free, 2_010_000, 6_000_000);
    let control_moves = free_during.iter().any(|&g| g > free_during[0]);
    check(
        constant && bumped,
        format!(
            "inhibited generation {gen_inhibited} constant: {constant}; after release and decouple: {:?}; same flaps uninhibited re-inaugurate: {control_moves}",
            frozen.last().map(|(_, g)| g.clone()).unwrap_or_default()
        ),
    )
}

fn link_fidelity() -> Verdict {
    let cal = PerCalibration::default();
    let m = McsProfile::new(Mcs::R2, &cal);
    let n = 100_000u64;
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for target in [0.5, 0.1, 2e-2] {
        let s = snr_for_per(&m, target);
        for seed in 1..=10u64 {
            let mut rng = RngStream::new(seed, 0);
            let drops = (0..n)
                .filter(|_| !deliver(256, &m, s, &mut rng).is_delivered())
                .count() as f64;
            let z = (drops - n as f64 * target).abs() / (three_sigma(n, target) / 3.0);
            worst = worst.max(z);
            ok &= z <= 3.0;
        }
    }
    check(ok, format!("30 runs of 100k frames, worst deviation {worst:.2} sigma"))
}

fn determinism() -> Verdict {
    let s = validation();
    let a = run(s.clone(), &RunOptions::default());
    let b = run(s.clone(), &RunOptions::default());
    let c = run(
        s,
        &RunOptions {
            seed: Some(a.seed + 1),
            ..Default::default()
        },
    );
    let mut dead = bulk_scenario(Mcs::R3);
    dead.radio.per_override = Some(0.2);
    let d1 = run(dead.clone(), &RunOptions::default());
    let d2 = run(dead, &RunOptions::default());
    check(
        a.digest == b.digest && a.steps == b.steps && d1.digest == d2.digest,
        format!(
            "seed {}: {} twice; lossy bulk: {} twice; seed {}: {} (differs: {})",
            a.seed,
            a.digest,
            d1.digest,
            c.seed,
            c.digest,
            c.digest != a.digest
        ),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Verdict, Duration);
    let criteria: [Criterion; 9] = [
        ("PER calibration offsets", per_calibration, Duration::from_secs(1)),
        ("throughput anchors and bulk flows", throughput_anchors, Duration::from_secs(10)),
        ("PDP constraints and delay-spread order", pdp_constraints, Duration::from_secs(1)),
        ("inauguration over 100 seeds", inauguration_reproduction, Duration::from_secs(60)),
        ("dead middle consist survival", dead_consist_survival, Duration::from_secs(10)),
        ("length-mismatch safety", length_mismatch_safety, Duration::MAX),
        ("inhibition freeze", inhibition_freeze, Duration::MAX),
        ("statistical link fidelity", link_fidelity, Duration::from_secs(30)),
        ("determinism", determinism, Duration::MAX),
    ];
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let v = f();
        let took = t0.elapsed();
        let in_time = took < *budget;
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} - {} ({:.2?}{}) - {}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            name,
            took,
            if in_time { "" } else { ", over time budget" },
            v.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
