mod common;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde_json::json;

use idss_core::admissibility::{admit_evidence, Admission, EvidenceItem};
use idss_core::config::{check_integrity, load_config, ConfigDocument};
use idss_core::engine::{absorb_into, panel_hash, Engine};
use idss_core::panels::Panel;
use idss_core::PanelId;

use common::fixture_path;

fn three_panels() -> ConfigDocument {
    let doc = load_config(fixture_path("three-panel.json")).unwrap();
    assert_eq!(check_integrity(&doc), vec![]);
    doc
}

fn random_items(rng: &mut Xoshiro256PlusPlus, n: usize) -> Vec<EvidenceItem> {
    (0..n)
        .map(|i| {
            let id = format!("item-{i}");
            let v = match rng.random_range(0..3) {
                0 => {
                    let trials = rng.random_range(1..50u64);
                    json!({ "id": id, "footprint": ["G1"], "sampling": "single-margin",
                        "payload": { "kind": "bernoulli-counts", "variable": "Y1",
                                     "successes": rng.random_range(0..=trials), "trials": trials } })
                }
                1 => {
                    let root: Vec<u64> = (0..3).map(|_| rng.random_range(0..20)).collect();
                    let a: Vec<u64> = (0..2).map(|_| rng.random_range(0..20)).collect();
                    let b: Vec<u64> = (0..2).map(|_| rng.random_range(0..20)).collect();
                    json!({ "id": id, "footprint": ["G2"], "sampling": "complete-sample",
                        "payload": { "kind": "tree-counts", "variable": "Y2",
                                     "counts": { "root": root, "a": a, "b": b } } })
                }
                _ => json!({ "id": id, "footprint": ["G3"], "sampling": "complete-sample",
                    "payload": { "kind": "mdm-observation", "variable": "Y3",
                                 "y": rng.random_range(-2.0..2.0), "regressors": [1.0, 0.5] } }),
            };
            serde_json::from_value(v).expect("evidence item")
        })
        .collect()
}

/// Apply to one panel, alone, the parts of `items` routed to it.
fn isolated_replay(doc: &ConfigDocument, panel: &Panel, items: &[EvidenceItem]) -> Panel {
    let ck = doc.ck();
    let mut p = panel.clone();
    let id = panel.id.clone();
    for item in items {
        match admit_evidence(item, &ck.structure).unwrap() {
            Admission::Admitted { routed } => {
                for r in routed.iter().filter(|r| r.panel == id) {
                    absorb_into(&mut p, &ck.structure, r, &item.decisions).unwrap();
                }
            }
            Admission::Rejected { code, .. } => panic!("{} rejected: {}", item.id, code.as_str()),
        }
    }
    p
}

#[test]
fn joint_absorption_equals_isolated_replay() {
    let doc = three_panels();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
    let items = random_items(&mut rng, 20);
    let mut conjugate: Option<BTreeMap<PanelId, Panel>> = None;
    for _ in 0..10 {
        let mut order = items.clone();
        order.shuffle(&mut rng);
        let mut engine = Engine::from_config(&doc);
        for item in &order {
            let s = engine.submit(item).unwrap();
            assert!(s.admission.is_admitted(), "{}", s.item);
        }
        for (id, initial) in doc.panel_map() {
            let alone = isolated_replay(&doc, &initial, &order);
            assert_eq!(engine.panels[&id], alone, "{id}");
            assert_eq!(panel_hash(&engine.panels[&id]).unwrap(), panel_hash(&alone).unwrap());
        }
        let conj: BTreeMap<PanelId, Panel> =
            engine.panels.iter().filter(|(id, _)| id.as_str() != "G3").map(|(k, v)| (k.clone(), v.clone())).collect();
        match &conjugate {
            None => conjugate = Some(conj),
            Some(first) => assert_eq!(first, &conj),
        }
    }
}

#[test]
fn rejected_items_leave_every_panel_alone() {
    let doc = three_panels();
    let mut engine = Engine::from_config(&doc);
    let before = engine.hash().unwrap();
    let item: EvidenceItem = serde_json::from_value(json!({
        "id": "w", "footprint": ["G1", "G3"], "sampling": "derived-function",
        "payload": { "kind": "function-counts", "function": "Y1*Y3", "variables": ["Y1", "Y3"],
                     "successes": 1, "trials": 4 }
    }))
    .unwrap();
    let s = engine.submit(&item).unwrap();
    assert!(!s.admission.is_admitted());
    assert_eq!(s.hash_before, before);
    assert_eq!(s.hash_after, before);
    assert_eq!(engine.quarantine.len(), 1);
}
