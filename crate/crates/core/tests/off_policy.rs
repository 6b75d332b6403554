//! Offline `gm` on deterministic random MDPs: arbitrary behaviour data
//! never pushes Q above `Q*`, and data that continues optimally after the
//! first action recovers `Q*`.

use greedy_multistep::envs::{make_random_mdp, sample_episode, Env, RngSeed};
use greedy_multistep::mdp::{QTable, TabularPolicy, Trajectory};
use greedy_multistep::model_free::{offline_train, Algorithm, LearnerConfig};
use proptest::prelude::*;

const SAFETY_TOL: f64 = 1e-9;
const RECOVERY_TOL: f64 = 1e-6;

/// Plain value iteration run far past convergence.
fn q_star(env: &Env) -> QTable {
    let mdp = env.mdp();
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    for _ in 0..2000 {
        q = QTable::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
            mdp.reward(s, a)
                + mdp.gamma()
                    * mdp
                        .successors(s, a)
                        .iter()
                        .map(|&(n, p)| p * q.max_value(n))
                        .sum::<f64>()
        });
    }
    q
}

fn gm(seed: u64) -> LearnerConfig {
    LearnerConfig {
        alpha: 1.0,
        store_capacity: None,
        seed: RngSeed(seed),
        ..LearnerConfig::new(Algorithm::GreedyMultiStep)
    }
}

fn env(seed: u64, ns: usize, na: usize) -> Env {
    make_random_mdp(RngSeed(seed), ns, na, 1).unwrap()
}

/// Follows `greedy` of `q` from `(s, a)` for at most `len` steps.
fn optimal_continuation(env: &Env, q: &QTable, s: usize, a: usize, len: usize) -> Trajectory {
    let mdp = env.mdp();
    let (mut s, mut a) = (s, a);
    let mut triples = Vec::new();
    loop {
        let next = mdp.deterministic_successor(s, a).unwrap();
        triples.push((s, a, mdp.reward(s, a)));
        if mdp.is_terminal(next) || triples.len() == len {
            return Trajectory::from_triples(&triples, next, mdp.is_terminal(next)).unwrap();
        }
        s = next;
        a = q.greedy_action(s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn never_exceeds_q_star(seed in any::<u64>(), ns in 3usize..=9, na in 1usize..=4, episodes in 1usize..=12) {
        let env = env(seed, ns, na);
        let qs = q_star(&env);
        let mut rng = RngSeed(seed ^ 0x55).rng();
        let behaviour = TabularPolicy::random_stochastic(ns, na, &mut rng);
        let mut roll = env.clone();
        let data: Vec<_> = (0..episodes).map(|_| sample_episode(&mut roll, &behaviour, &mut rng)).collect();
        // the pass order is seeded, so a shorter run is a prefix of a longer one
        for passes in [1, 2, 3, 5, 20] {
            let (q, _) = offline_train(&env, &data, &gm(seed), passes).unwrap();
            prop_assert!(q.max_excess_over(&qs) <= SAFETY_TOL, "pass {passes}: {}", q.max_excess_over(&qs));
        }
    }

    #[test]
    fn optimal_continuations_recover_q_star(seed in any::<u64>(), ns in 3usize..=9, na in 1usize..=4) {
        let env = env(seed, ns, na);
        let qs = q_star(&env);
        let mdp = env.mdp();
        let data: Vec<_> = (0..ns)
            .filter(|&s| !mdp.is_terminal(s))
            .flat_map(|s| (0..na).map(move |a| (s, a)))
            .map(|(s, a)| optimal_continuation(&env, &qs, s, a, 40))
            .collect();
        let (q, _) = offline_train(&env, &data, &gm(seed), 200).unwrap();
        let worst = (0..ns)
            .filter(|&s| !mdp.is_terminal(s))
            .flat_map(|s| (0..na).map(move |a| (s, a)))
            .map(|(s, a)| (q.get(s, a) - qs.get(s, a)).abs())
            .fold(0.0, f64::max);
        prop_assert!(worst <= RECOVERY_TOL, "{worst}");
    }
}
