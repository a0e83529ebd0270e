mod common;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use idss_core::causal::{causal_expand, CausalBn, CausalDeclaration, CausalNode};
use idss_core::ck::Intervention;
use idss_core::engine::Engine;
use idss_core::oracle::exact::{
    beta_binomial_posterior, dirichlet_posterior_mean, normal_normal_posterior, tree_predictive_by_enumeration,
    truncated_factorization,
};
use idss_core::panels::{
    BetaRow, Dirichlet, Evolution, MdmRegion, StagedTree, StagedTreeState, TreeEdge, TreeVertex,
};

use common::*;

fn gaussian(rng: &mut Xoshiro256PlusPlus) -> f64 {
    rng.sample(StandardNormal)
}

fn random_psd(rng: &mut Xoshiro256PlusPlus, n: usize, scale: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let m = &l * l.transpose() * scale;
    (&m + m.transpose()) * 0.5
}

#[test]
fn bernoulli_rows() {
    let mut row = BetaRow::uniform();
    row.update(5, 100).unwrap();
    assert!((row.mean() - 6.0 / 102.0).abs() < 1e-15);
    let oracle = beta_binomial_posterior(1.0, 1.0, 5, 100).unwrap();
    assert!((row.variance() - oracle.variance).abs() < 1e-15);

    let row = BetaRow::Beta { alpha: 2.0, beta: 8.0, successes: 0, failures: 0 };
    assert!((row.mean() - 0.2).abs() < 1e-15);
    assert!((row.variance() - 2.0 * 8.0 / (100.0 * 11.0)).abs() < 1e-15);

    let fixed = BetaRow::Fixed { fixed: 0.3 };
    assert_eq!(fixed.mean(), 0.3);
    assert_eq!(fixed.variance(), 0.0);
    assert!(BetaRow::Fixed { fixed: 1.2 }.validate().is_err());
    assert!(BetaRow::uniform().update(3, 2).is_err());
}

#[test]
fn bernoulli_evidence_is_order_invariant() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(41);
    let batches: Vec<(u64, u64)> = (0..30)
        .map(|_| {
            let n = rng.random_range(1..50);
            (rng.random_range(0..=n), n)
        })
        .collect();
    let mut reference = BetaRow::Beta { alpha: 0.7, beta: 2.3, successes: 0, failures: 0 };
    for &(s, n) in &batches {
        reference.update(s, n).unwrap();
    }
    for _ in 0..20 {
        let mut shuffled = batches.clone();
        shuffled.shuffle(&mut rng);
        let mut row = BetaRow::Beta { alpha: 0.7, beta: 2.3, successes: 0, failures: 0 };
        for &(s, n) in &shuffled {
            row.update(s, n).unwrap();
        }
        assert_eq!(row, reference);
        assert_eq!(row.mean().to_bits(), reference.mean().to_bits());
    }
}

#[test]
fn dirichlet_examples() {
    let mut d = Dirichlet::uniform(2);
    d.absorb(&[3, 7]).unwrap();
    assert_eq!(d.mean(), dirichlet_posterior_mean(&[1.0, 1.0], &[3, 7]).unwrap());
    assert!((d.mean()[0] - 4.0 / 12.0).abs() < 1e-15);
    assert!((d.mean()[1] - 8.0 / 12.0).abs() < 1e-15);
    let prior = Dirichlet { alpha: vec![0.5, 1.5, 2.0], counts: vec![0; 3] };
    let mut untouched = prior.clone();
    untouched.absorb(&[0, 0, 0]).unwrap();
    assert_eq!(untouched.mean(), prior.mean());
}

fn two_level_tree() -> StagedTree {
    serde_json::from_value(serde_json::json!({ "vertices": [
        { "id": "root", "edges": [{ "to": "a" }, { "to": "b" }] },
        { "id": "a", "stage": "u", "edges": [{ "value": 0.0 }, { "value": 1.0 }] },
        { "id": "b", "stage": "u", "edges": [{ "value": 2.0 }, { "value": 3.0 }] }
    ] }))
    .unwrap()
}

#[test]
fn staged_tree_root_update() {
    let tree = two_level_tree();
    let mut state = StagedTreeState::default();
    tree.update(&mut state, &BTreeMap::from([("root".to_owned(), vec![3, 7])])).unwrap();
    let root = tree.stage_dirichlet(&state, 0).mean();
    assert!((root[0] - 4.0 / 12.0).abs() < 1e-15);
    assert!((root[1] - 8.0 / 12.0).abs() < 1e-15);
}

#[test]
fn two_level_tree_matches_enumeration() {
    let tree = two_level_tree();
    let outcomes = [0, 1, 1, 3, 2, 3, 3, 0];
    let mut state = StagedTreeState::default();
    tree.update(&mut state, &tree.counts_from_leaves(&outcomes).unwrap()).unwrap();
    let got = tree.leaf_probabilities(&state);
    let want = tree_predictive_by_enumeration(&tree, &StagedTreeState::default(), &outcomes).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-10);
    }
    assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-14);
}

/// A random tree with at most `max_leaves` leaves. Vertices with the same
/// number of edges may share a stage.
fn random_tree(rng: &mut Xoshiro256PlusPlus, max_leaves: usize) -> StagedTree {
    let mut vertices: Vec<TreeVertex> = Vec::new();
    let mut open = vec![0usize];
    vertices.push(TreeVertex { id: "v0".into(), stage: None, edges: Vec::new() });
    let mut leaves = 1usize;
    while let Some(v) = open.pop() {
        let k = rng.random_range(2..=3);
        for _ in 0..k {
            let budget = leaves + 1 + open.len() < max_leaves;
            if budget && vertices.len() < 6 && rng.random_bool(0.45) {
                let id = format!("v{}", vertices.len());
                vertices.push(TreeVertex { id: id.clone(), stage: None, edges: Vec::new() });
                vertices[v].edges.push(TreeEdge::Vertex { to: id });
                open.push(vertices.len() - 1);
            } else {
                vertices[v].edges.push(TreeEdge::Leaf { value: rng.random_range(-1.0..1.0) });
            }
        }
        leaves = vertices
            .iter()
            .flat_map(|x| &x.edges)
            .filter(|e| matches!(e, TreeEdge::Leaf { .. }))
            .count()
            + open.len();
    }
    for i in 1..vertices.len() {
        let j = rng.random_range(1..=i);
        if j < i && vertices[j].edges.len() == vertices[i].edges.len() {
            vertices[i].stage = Some(vertices[j].stage().to_owned());
        }
    }
    StagedTree { vertices }
}

#[test]
fn random_trees_match_enumeration() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(42);
    let mut checked = 0;
    while checked < 200 {
        let tree = random_tree(&mut rng, 10);
        let n = tree.leaves().len();
        if tree.validate().is_err() || n > 10 {
            continue;
        }
        let mut prior = StagedTreeState::default();
        for v in &tree.vertices {
            let k = v.edges.len();
            prior.stages.entry(v.stage().to_owned()).or_insert_with(|| Dirichlet {
                alpha: (0..k).map(|_| rng.random_range(0.3..3.0)).collect(),
                counts: vec![0; k],
            });
        }
        let outcomes: Vec<usize> = (0..rng.random_range(0..30)).map(|_| rng.random_range(0..n)).collect();
        let mut state = prior.clone();
        tree.update(&mut state, &tree.counts_from_leaves(&outcomes).unwrap()).unwrap();
        let got = tree.leaf_probabilities(&state);
        let want = tree_predictive_by_enumeration(&tree, &prior, &outcomes).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
        checked += 1;
    }
}

fn symmetric_psd(c: &DMatrix<f64>) -> bool {
    let scale = c.amax().max(1.0);
    let sym = (c - c.transpose()).amax() <= 1e-12 * scale;
    let min = SymmetricEigen::new((c + c.transpose()) * 0.5).eigenvalues.min();
    sym && min >= -1e-12 * scale
}

#[test]
fn random_filter_steps_keep_covariances_valid() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(43);
    let mut steps = 0;
    while steps < 1000 {
        let s = rng.random_range(1..=3);
        let (c_scale, w_scale) = (rng.random_range(1e-6..3.0), rng.random_range(0.0..0.5));
        let mut region = MdmRegion {
            mean: DVector::from_fn(s, |_, _| gaussian(&mut rng)),
            cov: random_psd(&mut rng, s, c_scale),
            evolution: vec![Evolution {
                g: DMatrix::from_fn(s, s, |_, _| rng.random_range(-1.2..1.2)),
                w: random_psd(&mut rng, s, w_scale),
            }],
            obs_variance: vec![rng.random_range(1e-4..2.0)],
        };
        for _ in 0..50 {
            let f = DVector::from_fn(s, |_, _| rng.random_range(-3.0..3.0));
            let y = 5.0 * gaussian(&mut rng);
            region.filter_step(y, &f).unwrap();
            assert!(symmetric_psd(&region.cov), "{}", region.cov);
            steps += 1;
        }
    }
}

#[test]
fn static_scalar_filter_is_normal_normal() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(44);
    for _ in 0..50 {
        let (m0, c0, v) = (gaussian(&mut rng), rng.random_range(0.1..4.0), rng.random_range(0.1..4.0));
        let ys: Vec<f64> = (0..rng.random_range(1..40)).map(|_| 2.0 + gaussian(&mut rng)).collect();
        let mut region = MdmRegion {
            mean: DVector::from_element(1, m0),
            cov: DMatrix::from_element(1, 1, c0),
            evolution: Vec::new(),
            obs_variance: vec![v],
        };
        for &y in &ys {
            region.filter_step(y, &DVector::from_element(1, 1.0)).unwrap();
        }
        let post = normal_normal_posterior(m0, c0, v, &ys).unwrap();
        let precision = 1.0 / c0 + ys.len() as f64 / v;
        let mean = (m0 / c0 + ys.iter().sum::<f64>() / v) / precision;
        assert!((post.mean - mean).abs() < 1e-12);
        assert!((region.mean[0] - mean).abs() <= 1e-10 * mean.abs().max(1.0));
        assert!((region.cov[(0, 0)] - 1.0 / precision).abs() <= 1e-10 / precision);
    }
}

/// Bootstrap particle filter over the same dynamic regression, returning
/// the filtered mean of the state after the last observation.
fn particle_filter(
    rng: &mut Xoshiro256PlusPlus,
    prior: &MdmRegion,
    track: &[(f64, DVector<f64>)],
    n: usize,
) -> DVector<f64> {
    let s = prior.mean.len();
    let e = &prior.evolution[0];
    let l0 = prior.cov.clone().cholesky().unwrap().l();
    let lw = e.w.clone().cholesky().unwrap().l();
    let v = prior.obs_variance[0];
    let z = |rng: &mut Xoshiro256PlusPlus| DVector::from_fn(s, |_, _| gaussian(rng));
    let mut particles: Vec<DVector<f64>> = (0..n).map(|_| &prior.mean + &l0 * z(rng)).collect();
    let mut weights = vec![0.0; n];
    for (y, f) in track {
        for p in particles.iter_mut() {
            *p = &e.g * &*p + &lw * z(rng);
        }
        for (w, p) in weights.iter_mut().zip(&particles) {
            let r = y - f.dot(p);
            *w = -0.5 * r * r / v;
        }
        let top = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for w in weights.iter_mut() {
            *w = (*w - top).exp();
            total += *w;
        }
        // Systematic resampling.
        let step = total / n as f64;
        let mut u = rng.random::<f64>() * step;
        let mut acc = weights[0];
        let mut i = 0;
        let mut next = Vec::with_capacity(n);
        for _ in 0..n {
            while acc < u && i + 1 < n {
                i += 1;
                acc += weights[i];
            }
            next.push(particles[i].clone());
            u += step;
        }
        particles = next;
    }
    particles.iter().fold(DVector::zeros(s), |a, p| a + p) / n as f64
}

#[test]
fn fifty_step_track_matches_particle_filter() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(45);
    let prior = MdmRegion {
        mean: DVector::from_vec(vec![0.5, -0.3]),
        cov: DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.3]),
        evolution: vec![Evolution {
            g: DMatrix::from_row_slice(2, 2, &[0.95, 0.1, -0.05, 0.9]),
            w: DMatrix::from_row_slice(2, 2, &[0.02, 0.005, 0.005, 0.03]),
        }],
        obs_variance: vec![0.25],
    };
    let e = &prior.evolution[0];
    let lw = e.w.clone().cholesky().unwrap().l();
    let mut theta = &prior.mean + prior.cov.clone().cholesky().unwrap().l() * DVector::from_fn(2, |_, _| gaussian(&mut rng));
    let mut track = Vec::new();
    for _ in 0..50 {
        theta = &e.g * &theta + &lw * DVector::from_fn(2, |_, _| gaussian(&mut rng));
        let f = DVector::from_vec(vec![1.0, rng.random_range(-2.0..2.0)]);
        let y = f.dot(&theta) + 0.5 * gaussian(&mut rng);
        track.push((y, f));
    }
    let mut kalman = prior.clone();
    for (y, f) in &track {
        kalman.filter_step(*y, f).unwrap();
    }

    // 1e5 particles split into ten independent filters, so the spread of
    // their estimates gives an honest standard error.
    let replicates: Vec<DVector<f64>> = (0..10).map(|_| particle_filter(&mut rng, &prior, &track, 10_000)).collect();
    for j in 0..2 {
        let xs: Vec<f64> = replicates.iter().map(|m| m[j]).collect();
        let mean = xs.iter().sum::<f64>() / 10.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 9.0;
        let se = (var / 10.0).sqrt();
        assert!((mean - kalman.mean[j]).abs() <= 3.0 * se, "component {j}: {mean} vs {} (se {se})", kalman.mean[j]);
    }
}

#[test]
fn emulator_moments_follow_the_expansion() {
    let doc = chain_document();
    let engine = Engine::from_config(&doc);
    let g3 = engine.summaries("G3").unwrap();
    let g4 = engine.summaries("G4").unwrap();
    assert_eq!(g4.kind, "emulator");
    let p = chain_parameters();
    assert_eq!(g4.summaries.len(), p.regions * p.horizon as usize);
    for (y3, y4) in g3.summaries.iter().zip(&g4.summaries) {
        assert_eq!((y3.time, y3.region), (y4.time, y4.region));
        let l = y4.region;
        let (a0, a1) = (p.a04[l], p.a34[l]);
        let tau0 = a0 * a0 + p.r4[l] + p.c04[l];
        let tau1 = a1 * a1 + p.c34[l];
        let second3 = y3.variance + y3.mean * y3.mean;
        let mean = a0 + a1 * y3.mean;
        let second = tau0 + 2.0 * a0 * a1 * y3.mean + tau1 * second3;
        assert!((y4.mean - mean).abs() < 1e-12);
        assert!((y4.variance - (second - mean * mean)).abs() < 1e-12);
    }
}

fn random_bn(rng: &mut Xoshiro256PlusPlus) -> CausalBn {
    let cards: Vec<usize> = (0..3).map(|_| rng.random_range(2..=3)).collect();
    let names = ["A", "B", "C"];
    let mut nodes = Vec::new();
    for i in 0..3 {
        let parents: Vec<usize> = (0..i).filter(|_| rng.random_bool(0.6)).collect();
        let rows: usize = parents.iter().map(|&p| cards[p]).product();
        let cpt = (0..rows)
            .map(|_| {
                let raw: Vec<f64> = (0..cards[i]).map(|_| rng.random_range(0.05..1.0)).collect();
                let t: f64 = raw.iter().sum();
                raw.iter().map(|x| x / t).collect()
            })
            .collect();
        nodes.push(CausalNode {
            id: names[i].into(),
            cardinality: cards[i],
            parents: parents.iter().map(|&p| names[p].into()).collect(),
            cpt,
        });
    }
    CausalBn { nodes }
}

#[test]
fn interventions_match_truncated_factorization() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(46);
    let decl = CausalDeclaration { interventionable: vec!["A".into(), "B".into(), "C".into()] };
    for _ in 0..500 {
        let bn = random_bn(&mut rng);
        assert_eq!(causal_expand(&bn, &decl, None).unwrap(), bn);
        let k = rng.random_range(0..3);
        let value = rng.random_range(0..bn.nodes[k].cardinality);
        let iv = Intervention { variable: bn.nodes[k].id.clone(), value: value as u8 };
        let joint = causal_expand(&bn, &decl, Some(&iv)).unwrap().joint().unwrap();
        let oracle = truncated_factorization(&bn, bn.nodes[k].id.as_str(), value).unwrap();
        assert_eq!(joint.len(), oracle.len());
        for (a, b) in joint.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn setting_the_root_of_two_nodes() {
    let bn: CausalBn = serde_json::from_value(serde_json::json!({ "nodes": [
        { "id": "Y1", "cardinality": 2, "cpt": [[0.9, 0.1]] },
        { "id": "Y2", "cardinality": 2, "parents": ["Y1"], "cpt": [[0.8, 0.2], [0.7, 0.3]] }
    ] }))
    .unwrap();
    let decl = CausalDeclaration { interventionable: vec!["Y1".into()] };
    let iv = Intervention { variable: "Y1".into(), value: 1 };
    let out = causal_expand(&bn, &decl, Some(&iv)).unwrap();
    assert_eq!(out.marginal("Y1").unwrap(), vec![0.0, 1.0]);
    assert_eq!(out.marginal("Y2").unwrap(), vec![0.7, 0.3]);
    let undeclared = CausalDeclaration::default();
    assert!(causal_expand(&bn, &undeclared, Some(&iv)).is_err());
}

#[test]
fn intervening_mid_chain_leaves_upstream_alone() {
    let bn: CausalBn = serde_json::from_value(serde_json::json!({ "nodes": [
        { "id": "X", "cardinality": 2, "cpt": [[0.35, 0.65]] },
        { "id": "M", "cardinality": 3, "parents": ["X"], "cpt": [[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]] },
        { "id": "Z", "cardinality": 2, "parents": ["M"], "cpt": [[0.9, 0.1], [0.4, 0.6], [0.25, 0.75]] }
    ] }))
    .unwrap();
    let decl = CausalDeclaration { interventionable: vec!["M".into()] };
    let iv = Intervention { variable: "M".into(), value: 2 };
    let out = causal_expand(&bn, &decl, Some(&iv)).unwrap();
    let oracle = truncated_factorization(&bn, "M", 2).unwrap();
    let mut upstream = [0.0; 2];
    let mut downstream = [0.0; 2];
    for (k, p) in oracle.iter().enumerate() {
        let x = bn.decode(k);
        upstream[x[0]] += p;
        downstream[x[2]] += p;
    }
    let x = out.marginal("X").unwrap();
    let z = out.marginal("Z").unwrap();
    for i in 0..2 {
        assert!((x[i] - upstream[i]).abs() < 1e-12);
        assert!((x[i] - bn.marginal("X").unwrap()[i]).abs() < 1e-12);
        assert!((z[i] - downstream[i]).abs() < 1e-12);
    }
    assert!((z[1] - 0.75).abs() < 1e-15);
}
