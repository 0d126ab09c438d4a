//! Campaign loop invariants under the heuristic policy, including noisy
//! detectors that force frequent reverts.

use std::collections::BTreeSet;

use atgen_core::agent::{history_jsonl, l_max, Action, Campaign, HeuristicPolicy};
use atgen_core::corpus::bundled_manifest;
use atgen_core::detector::evasion_reward;
use atgen_core::netlist::CheckResult;
use atgen_core::simulator::SweepSpec;
use atgen_core::{run_campaign, CampaignConfig, DetectorConfig, Netlist, RuleDetector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_corpus() -> Vec<(String, Netlist, SweepSpec)> {
    bundled_manifest()
        .unwrap()
        .load_all()
        .unwrap()
        .into_iter()
        .filter(|b| b.netlist.node_count() <= 25)
        .map(|b| {
            let sweep = b.sweep(&SweepSpec::new("V1", 0.0, 2.0, 26));
            (b.entry.name, b.netlist, sweep)
        })
        .collect()
}

fn noisy(rate: f64, seed: u64) -> RuleDetector {
    RuleDetector::new(DetectorConfig {
        false_positive_rate: rate,
        false_positive_seed: seed,
        ..DetectorConfig::default()
    })
}

/// Step a campaign to completion, checking state invariants after every
/// cycle. Returns (iterations, reverts seen).
fn checked_run(name: &str, cua: &Netlist, cfg: &CampaignConfig, det: &RuleDetector) -> (usize, usize) {
    let mut c = Campaign::new(cua, cfg, det).unwrap();
    let mut policy = HeuristicPolicy::new();
    let mut last_full = cua.clone();
    let mut reverts = 0;
    while c.termination().is_none() {
        match c.step(&mut policy) {
            Ok(()) => {}
            Err(atgen_core::agent::CampaignError::Policy(_)) => break,
            Err(e) => panic!("{name}: {e}"),
        }
        let s = &c.state;
        let rec = s.history.last().unwrap();
        assert_eq!(s.history.len(), s.iteration, "{name}");
        assert!(s.inserted.len() <= s.l_max, "{name}");
        assert!((0.0..=100.0).contains(&rec.r_evade), "{name}");
        for id in &s.inserted {
            assert!(s.candidate.element(id).is_some(), "{name}: {id} missing");
        }
        for e in &cua.elements {
            assert_eq!(s.candidate.element(&e.id), Some(e), "{name}: CUA line {} disturbed", e.id);
        }
        if let Action::Insert { .. } = rec.action {
            assert_eq!(rec.check, Some(CheckResult::Accept), "{name}");
        }
        if let Action::Revert { .. } = rec.action {
            reverts += 1;
            assert_eq!(s.candidate, last_full, "{name}: revert at {}", s.iteration);
        }
        if rec.r_evade >= 100.0 {
            last_full = s.candidate.clone();
        }
        assert!(s.iteration <= c.hard_cap(), "{name}");
    }
    (c.state.iteration, reverts)
}

#[test]
fn invariants_hold_on_every_step() {
    let mut total_reverts = 0;
    for (name, cua, sweep) in small_corpus() {
        for (seed, rate) in [(1, 0.0), (2, 0.05), (3, 0.2)] {
            let cfg = CampaignConfig {
                seed,
                sweep: sweep.clone(),
                ..CampaignConfig::default()
            };
            let (_, reverts) = checked_run(&name, &cua, &cfg, &noisy(rate, seed));
            total_reverts += reverts;
        }
    }
    // Noise must actually drive the revert path.
    assert!(total_reverts > 0);
}

#[test]
fn campaigns_are_reproducible() {
    for (name, cua, sweep) in small_corpus().into_iter().take(6) {
        let cfg = CampaignConfig {
            seed: 9,
            sweep,
            ..CampaignConfig::default()
        };
        let det = noisy(0.1, 5);
        let a = run_campaign(&cua, &cfg, &mut HeuristicPolicy::new(), &det).unwrap();
        let b = run_campaign(&cua, &cfg, &mut HeuristicPolicy::new(), &det).unwrap();
        assert_eq!(history_jsonl(&a.history), history_jsonl(&b.history), "{name}");
        assert_eq!(a.final_netlist.to_spice(), b.final_netlist.to_spice(), "{name}");
        assert_eq!((a.n_it, a.l_t, a.reason), (b.n_it, b.l_t, b.reason), "{name}");
    }
}

#[test]
fn result_bounds() {
    for (name, cua, sweep) in small_corpus() {
        for seed in 0..3 {
            let cfg = CampaignConfig {
                seed,
                sweep: sweep.clone(),
                ..CampaignConfig::default()
            };
            let r = run_campaign(&cua, &cfg, &mut HeuristicPolicy::new(), &noisy(0.1, seed)).unwrap();
            let cap = 10 * l_max(cfg.alpha, cua.node_count());
            assert!(r.l_t <= r.l_max, "{name}");
            assert!(r.n_it >= r.l_t, "{name}");
            assert!(r.n_it <= cap, "{name}");
            assert_eq!(r.history.len(), r.n_it, "{name}");
            assert_eq!(r.l_max, l_max(0.6, cua.node_count()));
        }
    }
}

#[test]
fn reward_on_random_pairs() {
    let ids = ["R1", "R2", "C3", "C4", "M5", "M6", "R7", "C8"];
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let a: BTreeSet<&str> = ids.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        let s: BTreeSet<&str> = ids.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
        let a_vec: Vec<&str> = a.iter().copied().collect();
        let s_vec: Vec<&str> = s.iter().copied().collect();
        let want = if a.is_empty() {
            100.0
        } else {
            a.difference(&s).count() as f64 / a.len() as f64 * 100.0
        };
        assert!((evasion_reward(&a_vec, &s_vec) - want).abs() < 1e-12, "{a:?} {s:?}");
    }
}

proptest! {
    #[test]
    fn reward_partitions_agent_lines(a in proptest::collection::btree_set(0u8..30, 1..15), s in proptest::collection::btree_set(0u8..30, 0..15)) {
        let a_ids: Vec<String> = a.iter().map(|i| format!("R{i}")).collect();
        let s_ids: Vec<String> = s.iter().map(|i| format!("R{i}")).collect();
        let r = evasion_reward(&a_ids, &s_ids);
        prop_assert!((0.0..=100.0).contains(&r));
        let caught = a.len() as f64 * (100.0 - r) / 100.0;
        prop_assert!((caught - caught.round()).abs() < 1e-9);
        prop_assert_eq!(caught.round() as usize, a.intersection(&s).count());
    }
}
