mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use modular_dea::dataset::{BranchRecord, Dataset};
use modular_dea::dea::evaluate_all;
use modular_dea::lp::{LinearProgram, LpStatus, PivotRule, Relation, Sense};
use modular_dea::rm::expand_rm;
use modular_dea::varclus::{agglomerate, correlation_of_columns, Linkage};

#[test]
fn dea_matches_weight_direction_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let x: Vec<[f64; 2]> = (0..20)
            .map(|_| [rng.random_range(1.0..20.0), rng.random_range(1.0..20.0)])
            .collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(1.0..20.0)).collect();
        let records = (0..20)
            .map(|i| BranchRecord {
                id: format!("D{i}"),
                inputs: x[i].to_vec(),
                outputs: vec![y[i]],
            })
            .collect();
        let d = Dataset::new(vec!["I1".into(), "I2".into()], vec!["O1".into()], records).unwrap();
        for (o, score) in evaluate_all(&d).unwrap().iter().enumerate() {
            let grid = common::grid_theta_two_inputs(&x, &y, o);
            assert!(
                (score.theta - grid).abs() < 1e-5,
                "DMU {o}: {} vs {grid}",
                score.theta
            );
        }
    }
}

type RandomLp = (Sense, Vec<f64>, Vec<Vec<f64>>, Vec<Relation>, Vec<f64>);

fn random_lp(rng: &mut ChaCha8Rng, feasible: bool) -> RandomLp {
    let n = rng.random_range(1..=5);
    let m = rng.random_range(1..=5);
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let dot = |row: &[f64]| row.iter().zip(&x0).map(|(a, b)| a * b).sum::<f64>();
    let bound: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
    let mut a = vec![bound.clone()];
    let mut rel = vec![Relation::Le];
    let mut b = vec![dot(&bound) + rng.random_range(0.0..1.0)];
    for _ in 1..m {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let slack = rng.random_range(0.0..1.0);
        let (r, rhs) = match rng.random_range(0..3) {
            0 => (Relation::Le, dot(&row) + slack),
            1 => (Relation::Ge, dot(&row) - slack),
            _ => (Relation::Eq, dot(&row)),
        };
        a.push(row);
        rel.push(r);
        b.push(rhs);
    }
    if !feasible {
        // Demand more of the bounding row than it allows.
        a.push(bound);
        rel.push(Relation::Ge);
        b.push(b[0] + 1.0);
    }
    let c = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sense = if rng.random_bool(0.5) {
        Sense::Maximize
    } else {
        Sense::Minimize
    };
    (sense, c, a, rel, b)
}

#[test]
fn dantzig_rule_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let (sense, c, a, rel, b) = random_lp(&mut rng, true);
        let mut lp = LinearProgram::new(sense, c.clone()).with_pivot_rule(PivotRule::Dantzig);
        for i in 0..a.len() {
            lp = lp.constraint(a[i].clone(), rel[i], b[i]);
        }
        let sol = lp.solve().unwrap();
        let oracle = common::vertex_enumeration(sense, &c, &a, &rel, &b).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - oracle).abs() < 1e-6);
        assert!(lp.max_violation(&sol.variable_values) < 1e-7);
    }
}

#[test]
fn infeasible_programs_agree_with_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let (sense, c, a, rel, b) = random_lp(&mut rng, false);
        let mut lp = LinearProgram::new(sense, c.clone());
        for i in 0..a.len() {
            lp = lp.constraint(a[i].clone(), rel[i], b[i]);
        }
        assert_eq!(lp.solve().unwrap().status, LpStatus::Infeasible);
        assert!(common::vertex_enumeration(sense, &c, &a, &rel, &b).is_none());
    }
}

#[test]
fn every_linkage_matches_naive_rescan() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
        for _ in 0..30 {
            let p = rng.random_range(3..=9);
            let x: DMatrix<f64> = DMatrix::from_fn(25, p, |_, _| StandardNormal.sample(&mut rng));
            let x = &x + &x.columns(0, 1).clone_owned() * DMatrix::from_element(1, p, 0.8);
            let corr = correlation_of_columns(&x).unwrap();
            let labels: Vec<String> = (0..p).map(|i| i.to_string()).collect();
            let tree = agglomerate(&corr, &labels, linkage).unwrap();
            let rows: Vec<Vec<f64>> = (0..p)
                .map(|i| (0..p).map(|j| corr[(i, j)]).collect())
                .collect();
            let naive = common::naive_agglomerate(&rows, linkage);
            for (m, &(a, b, h)) in tree.merges.iter().zip(&naive) {
                assert_eq!((m.a, m.b), (a, b), "{linkage:?}");
                assert!((m.height - h).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #[test]
    fn rm_expansion_matches_term_by_term_oracle(
        x in prop::collection::vec(-2.0f64..2.0, 1..7),
        r in 1usize..6,
    ) {
        let got = expand_rm(&x, r);
        let want = common::rm_terms(&x, r);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()));
        }
    }
}
