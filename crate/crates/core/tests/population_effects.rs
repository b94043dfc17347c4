//! Effects for populations against the generating truth at a large sample.

use mvlogit::design::{ArmBeliefs, Belief, BeliefSet};
use mvlogit::effects::{effects_at_fixed_x, effects_empirical_marginal, phi_to_theta, Filter, Predicate};
use mvlogit::gibbs::{run_chains, ChainConfig, NormalPrior};
use mvlogit::model::OutcomeMatrix;
use mvlogit::sim::{calibrate_dgm, generate_dataset, CovariateLaw};

fn true_delta(phi: &[Vec<f64>; 2]) -> Vec<f64> {
    let h = OutcomeMatrix::new(2).unwrap();
    let (t0, t1) = (phi_to_theta(&phi[0], &h), phi_to_theta(&phi[1], &h));
    t1.iter().zip(&t0).map(|(a, b)| a - b).collect()
}

#[test]
fn heterogeneous_effects_are_recovered() {
    let b = |t1: f64, t2: f64, rho: f64| Belief { theta: vec![t1, t2], rho };
    let beliefs = BeliefSet {
        x_low: -1.0,
        x_high: 1.0,
        control: ArmBeliefs { low: b(0.5, 0.4, 0.1), high: b(0.5, 0.5, 0.1) },
        treatment: ArmBeliefs { low: b(0.55, 0.45, 0.2), high: b(0.8, 0.7, 0.3) },
    };
    let dgm = calibrate_dgm(&beliefs, CovariateLaw::StandardNormal, 2000, "heterogeneous").unwrap();
    let data = generate_dataset(&dgm, 404).unwrap();
    let prior = NormalPrior::diffuse(3, 4, 1e-2).unwrap();
    let post = run_chains(&data, &prior, &ChainConfig::desk(40)).unwrap();

    let fixed = effects_at_fixed_x(&post, &[1.0]).unwrap().mean_delta();
    let truth = true_delta(&dgm.phi_at(&[1.0]).unwrap());
    for (e, t) in fixed.iter().zip(&truth) {
        assert!((e - t).abs() < 0.04, "fixed {fixed:?} vs {truth:?}");
    }

    let lower = Filter(vec![Predicate::Interval { covariate: "z".into(), lo: Some(-1.0), hi: Some(0.0) }]);
    for filter in [Filter::all(), lower] {
        let est = effects_empirical_marginal(&post, &data, &filter).unwrap().mean_delta();
        let truth = true_delta(&dgm.phi_population(&filter).unwrap());
        for (e, t) in est.iter().zip(&truth) {
            assert!((e - t).abs() < 0.025, "{filter:?}: {est:?} vs {truth:?}");
        }
    }
}
