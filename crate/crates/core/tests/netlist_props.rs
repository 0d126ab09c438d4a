//! Parser, serializer and mutation laws over the corpus and random netlists.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use atgen_core::corpus::bundled_manifest;
use atgen_core::netlist::{Device, ModelCard, Polarity};
use atgen_core::{CheckResult, Element, ElementKind, Netlist, RejectReason};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus() -> &'static [(String, Netlist, String)] {
    static CORPUS: OnceLock<Vec<(String, Netlist, String)>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let m = bundled_manifest().unwrap();
        m.load_all()
            .unwrap()
            .into_iter()
            .map(|b| {
                let text = std::fs::read_to_string(&b.path).unwrap();
                (b.entry.name, b.netlist, text)
            })
            .collect()
    })
}

#[test]
fn corpus_round_trips() {
    for (name, n, _) in corpus() {
        let again = Netlist::parse(&n.to_spice()).unwrap();
        assert_eq!(&again, n, "{name}");
        assert_eq!(again.to_spice(), n.to_spice(), "{name}");
    }
}

/// Count nodes by scanning element lines as plain text.
fn scan_node_count(text: &str) -> usize {
    let mut nodes = BTreeSet::new();
    for line in text.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let Some(first) = toks.first() else { continue };
        let arity = match first.chars().next().unwrap().to_ascii_uppercase() {
            'R' | 'C' | 'V' | 'I' => 2,
            'M' => 3,
            _ => continue,
        };
        for t in &toks[1..=arity] {
            if *t != "0" && !t.eq_ignore_ascii_case("gnd") {
                nodes.insert(t.to_string());
            }
        }
    }
    nodes.len()
}

#[test]
fn node_counts_match_text_scan() {
    for (name, n, text) in corpus() {
        assert_eq!(n.node_count(), scan_node_count(text), "{name}");
    }
    let bench = corpus().iter().find(|(n, _, _)| n == "bench20").unwrap();
    assert_eq!(scan_node_count(&bench.2), 20);
}

#[test]
fn grammar_examples() {
    let n = Netlist::parse("t\nR1 n1 n2 1k\nC7 out 0 2.5p\n").unwrap();
    assert_eq!(n.elements[0], Element::resistor("R1", "n1", "n2", 1000.0));
    assert_eq!(n.elements[1], Element::capacitor("C7", "out", "0", 2.5e-12));
    assert_eq!(n.elements[0].to_line(), "R1 n1 n2 1000");
    assert!(n.elements[1].to_line().ends_with("2.5e-12"));

    let n = Netlist::parse("t\nM93 d g s pmod W=1u L=1u\n.model pmod pmos vto=-0.7 kp=50u\n").unwrap();
    let e = &n.elements[0];
    assert_eq!(e.kind(), ElementKind::Pmos);
    assert_eq!(e.nodes, ["d", "g", "s"]);
    let m = e.mosfet_params().unwrap();
    assert_eq!((m.w, m.l), (Some(1e-6), Some(1e-6)));
    assert_eq!((m.vto, m.kp), (-0.7, 5e-5));

    let n = Netlist::parse("t\nR1 a b 1k\nR2 b 0 1k\n").unwrap();
    assert_eq!(n.node_inventory(), ["a", "b"]);
    assert_eq!(Netlist::new("empty").node_count(), 0);
}

#[test]
fn identifier_self_correction() {
    let n = Netlist::parse("t\nR1 d g 1k\nR2 s 0 1k\n.model pmod pmos vto=-0.7 kp=50u\n").unwrap();
    let model = n.model("pmod").unwrap().clone();
    let bad = Element::mosfet("Mx", ["d", "g", "s"], &model, 1e-6, 1e-6);
    assert!(matches!(
        n.syntax_check(&bad),
        CheckResult::Reject(RejectReason::BadIdentifierSuffix(_))
    ));
    let good = Element::mosfet("M93", ["d", "g", "s"], &model, 1e-6, 1e-6);
    assert_eq!(n.syntax_check(&good), CheckResult::Accept);
}

/// Final indices of `k` elements inserted one after another at slots
/// `slots` into a list of `len` lines.
fn final_positions(len: usize, slots: &[usize]) -> Vec<usize> {
    let mut list: Vec<Option<usize>> = vec![None; len];
    for (j, &s) in slots.iter().enumerate() {
        list.insert(s, Some(j));
    }
    list.iter().enumerate().filter(|(_, x)| x.is_some()).map(|(i, _)| i).collect()
}

fn contiguous(pos: &[usize]) -> bool {
    pos.windows(2).all(|w| w[1] == w[0] + 1)
}

#[test]
fn adjacency_matches_uniform_slot_sampler() {
    let len = 30;
    // Exhaustive over the 31 * 32 * 33 equally likely slot sequences.
    let mut adjacent = 0u64;
    let mut total = 0u64;
    for a in 0..=len {
        for b in 0..=len + 1 {
            for c in 0..=len + 2 {
                total += 1;
                if contiguous(&final_positions(len, &[a, b, c])) {
                    adjacent += 1;
                }
            }
        }
    }
    // Uniform slots make the final 3-subset uniform over C(33, 3) = 5456
    // sets, 31 of which are runs.
    assert_eq!(total, 31 * 32 * 33);
    assert_eq!(adjacent * 5456, 31 * total);
    let p = adjacent as f64 / total as f64;

    let mut base = Netlist::new("t");
    for i in 0..len {
        base.elements.push(Element::resistor(&format!("R{}", i + 1), &format!("n{i}"), "0", 1e3));
    }
    let trials = 1000;
    let mut hits = 0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut n = base.clone();
        for k in 0..3 {
            n = n.insert(Element::resistor(&format!("R{}", 900 + k), "n0", "n1", 1e3), &mut rng).unwrap();
        }
        let pos: Vec<usize> = n
            .elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.id.starts_with("R90"))
            .map(|(i, _)| i)
            .collect();
        if contiguous(&pos) {
            hits += 1;
        }
    }
    let expected = p * trials as f64;
    let sd = (trials as f64 * p * (1.0 - p)).sqrt();
    assert!(
        (hits as f64 - expected).abs() <= 4.0 * sd,
        "{hits} adjacent runs, expected {expected:.1} +- {sd:.1}"
    );
}

#[test]
fn same_seed_same_positions() {
    let base = Netlist::parse("t\nR1 a 0 1k\nR2 b 0 1k\nR3 c 0 1k\nR4 a b 1k\n").unwrap();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        base.insert(Element::resistor("R9", "a", "c", 1.0), &mut rng).unwrap()
    };
    assert_eq!(run(11), run(11));
}

fn node_name() -> impl Strategy<Value = String> {
    prop_oneof![Just("0".to_string()), (1u8..8).prop_map(|i| format!("n{i}"))]
}

fn value() -> impl Strategy<Value = f64> {
    (1u32..1000, -15i32..7).prop_map(|(m, e)| m as f64 * 10f64.powi(e))
}

fn element(i: usize) -> impl Strategy<Value = Element> {
    let nmos = ModelCard::new("nm", Polarity::N, 0.5, 2e-4);
    let pmos = ModelCard::new("pm", Polarity::P, -0.5, 8e-5);
    prop_oneof![
        (node_name(), node_name(), value()).prop_map(move |(a, b, v)| Element::resistor(&format!("R{i}"), &a, &b, v)),
        (node_name(), node_name(), value()).prop_map(move |(a, b, v)| Element::capacitor(&format!("C{i}"), &a, &b, v)),
        (node_name(), node_name(), -5.0f64..5.0)
            .prop_map(move |(a, b, v)| Element::voltage_source(&format!("V{i}"), &a, &b, v)),
        (node_name(), node_name(), node_name(), any::<bool>(), value(), value()).prop_map(move |(d, g, s, n, w, l)| {
            let m = if n { &nmos } else { &pmos };
            Element::mosfet(&format!("M{i}"), [&d, &g, &s], m, w, l)
        }),
    ]
}

fn netlist() -> impl Strategy<Value = Netlist> {
    (1usize..12)
        .prop_flat_map(|len| (0..len).map(element).collect::<Vec<_>>())
        .prop_map(|elements| {
            let mut n = Netlist::new("* random");
            n.elements = elements;
            n.models = vec![
                ModelCard::new("nm", Polarity::N, 0.5, 2e-4),
                ModelCard::new("pm", Polarity::P, -0.5, 8e-5),
            ];
            n
        })
}

proptest! {
    #[test]
    fn random_netlists_round_trip(n in netlist()) {
        let again = Netlist::parse(&n.to_spice()).unwrap();
        prop_assert_eq!(&again, &n);
    }

    #[test]
    fn node_count_invariant_under_reordering(n in netlist(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = n.clone();
        shuffled.elements.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(shuffled.node_count(), n.node_count());
    }

    #[test]
    fn insert_remove_inverse(idx in 0usize..17, a in 0usize..1000, b in 0usize..1000, seed in any::<u64>(), v in value()) {
        let (_, n, _) = &corpus()[idx % corpus().len()];
        let nodes = n.node_inventory();
        let e = Element::resistor("R987654", &nodes[a % nodes.len()], &nodes[b % nodes.len()], v);
        prop_assert_eq!(n.syntax_check(&e), CheckResult::Accept);
        let inserted = n.insert(e, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(inserted.elements.len(), n.elements.len() + 1);
        prop_assert_eq!(&inserted.remove("R987654").unwrap(), n);
    }

    #[test]
    fn syntax_check_is_pure(n in netlist(), e in element(77)) {
        let before = n.clone();
        let first = n.syntax_check(&e);
        prop_assert_eq!(n.syntax_check(&e), first);
        prop_assert_eq!(n, before);
    }

    #[test]
    fn accepted_elements_reference_known_nodes(n in netlist(), e in element(77)) {
        if n.syntax_check(&e).is_accept() {
            let inv = n.node_inventory();
            prop_assert!(e.nodes.iter().all(|x| x == "0" || inv.contains(x)));
            prop_assert!(n.element(&e.id).is_none());
            let source = matches!(e.device, Device::VoltageSource { .. } | Device::CurrentSource { .. });
            prop_assert!(!source);
        }
    }
}
