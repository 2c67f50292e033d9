mod common;

use common::*;
use ctrpo_core::envs::{make_random_cmdp, sample_safe_init};
use ctrpo_core::geometry::{
    constrained_divergence_exact, kakade_divergence, BarrierGenerator, DivergenceBudget, LocalModel,
    SoftmaxParams,
};
use ctrpo_core::{cnpg_flow, AlgoConfig, Policy, Returns, TabularCmdp};
use proptest::prelude::*;

#[test]
fn trust_region_lies_inside_the_safe_set() {
    let budget = DivergenceBudget::broadcast(0.05, 1.0, 1).unwrap();
    let mut inside = 0;
    let mut unsafe_draws = 0;
    for seed in 0..10u64 {
        let m = make_random_cmdp(3 + seed as usize % 3, 3, 1, 800 + seed).unwrap();
        let theta_k = sample_safe_init(&m, seed).unwrap();
        let pk = theta_k.policy();
        let mut r = rng(seed);
        for _ in 0..200 {
            let u = random_direction(theta_k.dim(), &mut r);
            let pi = theta_k.offset(&u, 3.0 * rand::Rng::random::<f64>(&mut r)).policy();
            let safe = Returns::of(&m, &pi).unwrap().is_safe(&m);
            if !safe {
                unsafe_draws += 1;
            }
            for gen in [BarrierGenerator::LogBarrier, BarrierGenerator::Entropy] {
                if let Ok(d) = constrained_divergence_exact(&m, &pk, &pi, gen, &budget) {
                    if d <= budget.delta() {
                        inside += 1;
                        assert!(safe, "policy inside the region violates the constraint");
                    }
                }
            }
        }
    }
    assert!(inside > 100 && unsafe_draws > 100, "{inside} inside, {unsafe_draws} unsafe");
}

/// Two states, three actions, where actions 1 and 2 are exact copies and
/// beat action 0; the optimal face is every split between the copies.
fn duplicate_action_cmdp() -> TabularCmdp {
    let (ns, na) = (2, 3);
    let rows = [[0.7, 0.3], [0.2, 0.8], [0.2, 0.8], [0.5, 0.5], [0.9, 0.1], [0.9, 0.1]];
    let transition: Vec<f64> = rows.iter().flatten().copied().collect();
    let reward = vec![0.1, 0.6, 0.6, 0.2, 0.9, 0.9];
    let cost = vec![0.5, 0.3, 0.3, 0.4, 0.2, 0.2];
    TabularCmdp::new(ns, na, transition, reward, vec![cost], vec![0.45], 0.9, vec![0.6, 0.4]).unwrap()
}

/// The policy that keeps `pi`'s probability on action 0 and splits the rest
/// as `rho : 1 - rho` between the copies, per state.
fn on_face(pi: &Policy, rho: &[f64]) -> Policy {
    let mut p = Vec::new();
    for s in 0..2 {
        let rest = 1.0 - pi.prob(s, 0);
        p.extend([pi.prob(s, 0), rest * rho[s], rest * (1.0 - rho[s])]);
    }
    Policy::new(2, 3, p).unwrap()
}

#[test]
fn flow_limit_is_the_divergence_projection_of_the_start() {
    let m = duplicate_action_cmdp();
    let theta0 = SoftmaxParams::new(2, 3, vec![0.3, -0.4, 0.5, 0.1, 0.6, -0.2]).unwrap();
    let pi0 = theta0.policy();
    assert!(Returns::of(&m, &pi0).unwrap().is_safe(&m));
    let config = AlgoConfig::default();
    let trace = cnpg_flow(&m, &theta0, &config, 1e3).unwrap();
    let last = SoftmaxParams::new(2, 3, trace.last().unwrap().theta.clone()).unwrap().policy();
    assert!(last.prob(0, 0) < 1e-3 && last.prob(1, 0) < 1e-3);
    let budget = config.budget(1).unwrap();
    let objective = |rho: &[f64]| {
        constrained_divergence_exact(&m, &on_face(&last, rho), &pi0, config.generator, &budget).unwrap()
    };
    // coordinate-wise golden-section search over the face
    let mut rho = [0.5, 0.5];
    for _ in 0..4 {
        for s in 0..2 {
            let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..100 {
                let (a, b) = (hi - g * (hi - lo), lo + g * (hi - lo));
                let mut ra = rho;
                let mut rb = rho;
                ra[s] = a;
                rb[s] = b;
                if objective(&ra) < objective(&rb) {
                    hi = b;
                } else {
                    lo = a;
                }
            }
            rho[s] = (lo + hi) / 2.0;
        }
    }
    for s in 0..2 {
        let limit = last.prob(s, 1) / (last.prob(s, 1) + last.prob(s, 2));
        assert!((limit - rho[s]).abs() < 1e-6, "state {s}: {limit} vs {}", rho[s]);
    }
}

fn safe_pair() -> impl Strategy<Value = (TabularCmdp, SoftmaxParams, SoftmaxParams)> {
    (2usize..5, 0u64..500, 0u64..500, 0.01f64..1.0).prop_map(|(ns, seed, pseed, scale)| {
        let m = make_random_cmdp(ns, 3, 1, seed).unwrap();
        let a = sample_safe_init(&m, pseed).unwrap();
        let u = random_direction(a.dim(), &mut rng(pseed));
        let b = a.offset(&u, scale);
        (m, a, b)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn divergences_are_nonnegative_and_vanish_on_the_diagonal((m, a, b) in safe_pair()) {
        let (pa, pb) = (a.policy(), b.policy());
        let budget = DivergenceBudget::broadcast(0.01, 1.0, 1).unwrap();
        prop_assert!(kakade_divergence(&m, &pa, &pa).unwrap().abs() < 1e-15);
        prop_assert!(kakade_divergence(&m, &pb, &pa).unwrap() > 0.0);
        for gen in [BarrierGenerator::LogBarrier, BarrierGenerator::Entropy] {
            prop_assert!(constrained_divergence_exact(&m, &pa, &pa, gen, &budget).unwrap().abs() < 1e-15);
            let model = LocalModel::exact(&m, &pa).unwrap();
            prop_assert!(model.surrogate_divergence(&pa, gen, &budget).unwrap().abs() < 1e-15);
            if Returns::of(&m, &pb).unwrap().is_safe(&m) {
                prop_assert!(constrained_divergence_exact(&m, &pb, &pa, gen, &budget).unwrap() > 0.0);
            }
            if let Ok(d) = model.surrogate_divergence(&pb, gen, &budget) {
                prop_assert!(d > 0.0);
            }
        }
    }
}
