#![allow(dead_code)]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use idss_core::chain::ChainParameters;
use idss_core::ck::Decision;
use idss_core::config::ConfigDocument;
use idss_core::panels::PanelModel;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

/// Parameters behind `chain.json`.
pub fn chain_parameters() -> ChainParameters {
    ChainParameters::random(&mut Xoshiro256PlusPlus::seed_from_u64(2024), 2, 2)
}

/// Parameters behind the `routine` policy of `food-security.json`.
pub fn food_security_parameters() -> ChainParameters {
    ChainParameters::random(&mut Xoshiro256PlusPlus::seed_from_u64(1848), 3, 2)
}

pub fn chain_document() -> ConfigDocument {
    let mut doc = chain_parameters().document().unwrap();
    doc.decisions.decisions[0].id = "routine".into();
    doc.decisions.baseline = "routine".into();
    doc
}

/// Economy, household disposable income, food costs and educational
/// attainment over three regions, under three policies. An income
/// subsidy halves the mean income coefficients; free school meals pull the
/// attainment emulator's intercept towards target.
pub fn food_security_document() -> ConfigDocument {
    let mut doc = food_security_parameters().document().unwrap();
    doc.decisions.decisions = vec![
        decision("routine", "routine practice"),
        decision("subsidy", "household income subsidy"),
        decision("school-meals", "universal free school meals"),
    ];
    doc.decisions.baseline = "routine".into();
    for p in &mut doc.panels {
        match (&mut p.model, p.id.as_str()) {
            (PanelModel::Mdm { states, .. }, "G2") => {
                let mut s = states.state.clone().unwrap();
                for r in &mut s.regions {
                    r.mean *= 0.5;
                }
                states.states.insert("subsidy".into(), s);
            }
            (PanelModel::Emulator { states }, "G4") => {
                let mut s = states.state.clone().unwrap();
                for r in &mut s.regions {
                    r.a0 *= 0.3;
                }
                states.states.insert("school-meals".into(), s);
            }
            _ => {}
        }
    }
    doc
}

fn decision(id: &str, label: &str) -> Decision {
    Decision {
        id: id.into(),
        label: label.into(),
        intervention: None,
    }
}
