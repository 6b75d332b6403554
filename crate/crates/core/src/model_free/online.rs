use std::time::Instant;

use super::greedy::{gm_q_update, greedy_return_backward};
use super::{Algorithm, EpisodeRecord, LearnerConfig, RunMetrics, StepLimit};
use crate::envs::{sample_episode, Behavior, Env, EpsilonGreedy};
use crate::error::{Error, Result};
use crate::mdp::{QTable, TrajectoryStore};

/// Runs whichever algorithm `cfg` names.
pub fn run_learner(env: &Env, cfg: &LearnerConfig) -> Result<(QTable, RunMetrics)> {
    match cfg.algorithm {
        Algorithm::GreedyMultiStep => run_gm_q_learning(env, cfg),
        _ => run_baseline(env, cfg),
    }
}

fn prepare(env: &Env, cfg: &LearnerConfig) -> Result<(Env, QTable)> {
    cfg.validate()?;
    let mut env = env.clone();
    if let Some(g) = cfg.gamma {
        env = env.with_gamma(g)?;
    }
    let q = QTable::new(
        env.num_states(),
        env.num_actions(),
        cfg.initial_value(env.mdp()),
    );
    Ok((env, q))
}

/// Appends the episode row, evaluating the task predicate on schedule.
/// Returns true when training should stop early.
fn record_episode(
    metrics: &mut RunMetrics,
    env: &Env,
    q: &QTable,
    cfg: &LearnerConfig,
    mut row: EpisodeRecord,
) -> bool {
    let ep = row.episode;
    if ep.is_multiple_of(cfg.eval_every) || ep == cfg.episodes {
        row.solved = env.is_solved_by(q);
    }
    if row.solved == Some(true) && metrics.solved_at.is_none() {
        metrics.solved_at = Some(ep);
    }
    metrics.episodes.push(row);
    cfg.stop_when_solved && metrics.solved_at.is_some()
}

fn finish(metrics: &mut RunMetrics, env: &Env, q: &QTable, start: Instant) {
    metrics.budget_exhausted = metrics.solved_at.is_none() && env.is_solved_by(q).is_some();
    metrics.wall_ns = start.elapsed().as_nanos() as u64;
}

/// Greedy multi-step Q-learning. Each episode is collected ε-greedily
/// under the current Q, inserted into the trajectory store, and then every
/// visited `(s_t, a_t)` is updated from the store, last step first.
pub fn run_gm_q_learning(env: &Env, cfg: &LearnerConfig) -> Result<(QTable, RunMetrics)> {
    let start = Instant::now();
    let (mut env, mut q) = prepare(env, cfg)?;
    if !env.mdp().is_deterministic() {
        log::warn!("greedy multi-step targets are biased upward on stochastic dynamics");
    }
    let gamma = env.gamma();
    let mut rng = cfg.seed.rng();
    let mut store = TrajectoryStore::for_mdp(env.mdp(), cfg.store_capacity)?;
    let mut metrics = RunMetrics::default();
    for ep in 0..cfg.episodes {
        let epsilon = cfg.epsilon.at(ep, cfg.episodes);
        let traj = sample_episode(&mut env, &EpsilonGreedy { q: &q, epsilon }, &mut rng);
        let scores = greedy_return_backward(&traj, &q, gamma)?.values;
        let keys: Vec<(usize, usize)> = (0..traj.len()).map(|t| traj.key(t)).collect();
        let (ret, steps) = (traj.undiscounted_return(), traj.len());
        store.insert_scored(traj, &scores)?;
        let (mut sum, mut count) = (0usize, 0usize);
        for &key in keys.iter().rev() {
            if let Some(u) = gm_q_update(&mut q, &mut store, key, cfg.alpha, cfg.max_step, gamma)? {
                metrics.chosen_steps.push(u.chosen_step as u32);
                sum += u.chosen_step;
                count += 1;
            }
        }
        let row = EpisodeRecord {
            episode: ep + 1,
            ret,
            steps,
            solved: None,
            mean_chosen_step: (count > 0).then(|| sum as f64 / count as f64),
        };
        if record_episode(&mut metrics, &env, &q, cfg, row) {
            break;
        }
    }
    finish(&mut metrics, &env, &q, start);
    Ok((q, metrics))
}

/// `Σ_{i=τ}^{end−1} γ^{i−τ} r_i + γ^{end−τ} boot`, applied to `Q(s_τ, a_τ)`.
#[allow(clippy::too_many_arguments)]
fn nstep_update(
    q: &mut QTable,
    states: &[usize],
    actions: &[usize],
    rewards: &[f64],
    tau: usize,
    end: usize,
    boot: f64,
    alpha: f64,
    gamma: f64,
) {
    let mut g = boot;
    for i in (tau..end).rev() {
        g = rewards[i] + gamma * g;
    }
    let (s, a) = (states[tau], actions[tau]);
    let old = q.get(s, a);
    q.set(s, a, old + alpha * (g - old));
}

/// Online textbook baselines, updating as each transition arrives.
pub fn run_baseline(env: &Env, cfg: &LearnerConfig) -> Result<(QTable, RunMetrics)> {
    if cfg.algorithm == Algorithm::GreedyMultiStep {
        return Err(Error::InvalidArgument("`gm` is not a baseline".into()));
    }
    let start = Instant::now();
    let (mut env, mut q) = prepare(env, cfg)?;
    let gamma = env.gamma();
    let na = env.num_actions();
    let mut rng = cfg.seed.rng();
    let mut metrics = RunMetrics::default();
    let n = match cfg.max_step {
        StepLimit::Fixed(n) => n,
        StepLimit::ToEpisodeEnd => usize::MAX,
    };
    let sarsa = cfg.algorithm == Algorithm::NStepSarsa;
    for ep in 0..cfg.episodes {
        let epsilon = cfg.epsilon.at(ep, cfg.episodes);
        let act = |q: &QTable, s: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            EpsilonGreedy { q, epsilon }.act(s, rng)
        };
        let s0 = env.reset();
        let mut states = vec![s0];
        let mut actions = vec![act(&q, s0, &mut rng)];
        let mut rewards: Vec<f64> = Vec::new();
        // sparse eligibility traces for Watkins Q(λ)
        let mut traces: Vec<(usize, f64)> = Vec::new();
        loop {
            let t = rewards.len();
            let (s, a) = (states[t], actions[t]);
            let tr = env.step(a, &mut rng);
            let s2 = tr.next_state;
            rewards.push(tr.reward);
            states.push(s2);
            let done = tr.terminal || tr.truncated;
            let v_next = if tr.terminal { 0.0 } else { q.max_value(s2) };
            let a2 = (!done).then(|| act(&q, s2, &mut rng));
            if let Some(a2) = a2 {
                actions.push(a2);
            }
            match cfg.algorithm {
                Algorithm::QLearning => {
                    let old = q.get(s, a);
                    q.set(s, a, old + cfg.alpha * (tr.reward + gamma * v_next - old));
                }
                Algorithm::WatkinsQLambda => {
                    let delta = tr.reward + gamma * v_next - q.get(s, a);
                    let idx = s * na + a;
                    match traces.iter_mut().find(|(i, _)| *i == idx) {
                        Some(e) => e.1 += 1.0,
                        None => traces.push((idx, 1.0)),
                    }
                    let vals = q.as_mut_slice();
                    for &(i, e) in &traces {
                        vals[i] += cfg.alpha * delta * e;
                    }
                    match a2 {
                        Some(a2) if q.get(s2, a2) >= q.max_value(s2) && cfg.lambda > 0.0 => {
                            for e in traces.iter_mut() {
                                e.1 *= gamma * cfg.lambda;
                            }
                        }
                        _ => traces.clear(),
                    }
                }
                _ => {
                    if t + 1 >= n {
                        let boot = match a2 {
                            Some(a2) if sarsa => q.get(s2, a2),
                            _ => v_next,
                        };
                        nstep_update(
                            &mut q,
                            &states,
                            &actions,
                            &rewards,
                            t + 1 - n,
                            t + 1,
                            boot,
                            cfg.alpha,
                            gamma,
                        );
                    }
                    if done {
                        let first = (t + 2).saturating_sub(n);
                        for tau in first..=t {
                            let boot = if tr.terminal { 0.0 } else { q.max_value(s2) };
                            nstep_update(
                                &mut q,
                                &states,
                                &actions,
                                &rewards,
                                tau,
                                t + 1,
                                boot,
                                cfg.alpha,
                                gamma,
                            );
                        }
                    }
                }
            }
            if done {
                break;
            }
        }
        let row = EpisodeRecord {
            episode: ep + 1,
            ret: rewards.iter().sum(),
            steps: rewards.len(),
            solved: None,
            mean_chosen_step: None,
        };
        if record_episode(&mut metrics, &env, &q, cfg, row) {
            break;
        }
    }
    finish(&mut metrics, &env, &q, start);
    Ok((q, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_gridworld, make_highway_chain, make_traceback, RngSeed};
    use crate::exact_dp::optimal_q_exact;

    fn policy_optimal(env: &Env, q: &QTable) -> bool {
        env.is_solved_by(q) == Some(true)
    }

    #[test]
    fn gm_solves_gridworld_five() {
        let env = make_gridworld(5).unwrap();
        let cfg = LearnerConfig {
            episodes: 1000,
            seed: RngSeed(1),
            ..LearnerConfig::new(Algorithm::GreedyMultiStep)
        };
        let (q, m) = run_gm_q_learning(&env, &cfg).unwrap();
        assert!(policy_optimal(&env, &q));
        assert!(!m.budget_exhausted);
        assert!(!m.chosen_steps.is_empty());
        assert_eq!(m.episodes.len(), 1000);
    }

    #[test]
    fn baselines_solve_gridworld_five() {
        let env = make_gridworld(5).unwrap();
        for algo in [
            Algorithm::QLearning,
            Algorithm::NStepSarsa,
            Algorithm::WatkinsQLambda,
            Algorithm::UncorrectedNStepQ,
        ] {
            let cfg = LearnerConfig {
                episodes: 2000,
                seed: RngSeed(1),
                ..LearnerConfig::new(algo)
            };
            let (q, m) = run_baseline(&env, &cfg).unwrap();
            assert!(policy_optimal(&env, &q), "{algo}");
            assert!(m.solved_at.is_some());
        }
    }

    #[test]
    fn lambda_zero_is_q_learning() {
        let env = make_gridworld(4).unwrap();
        let base = LearnerConfig {
            episodes: 40,
            seed: RngSeed(3),
            alpha: 0.3,
            ..LearnerConfig::new(Algorithm::QLearning)
        };
        let (q1, _) = run_baseline(&env, &base).unwrap();
        let cfg = LearnerConfig {
            algorithm: Algorithm::WatkinsQLambda,
            lambda: 0.0,
            ..base.clone()
        };
        let (q2, _) = run_baseline(&env, &cfg).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn one_step_nstep_q_is_q_learning() {
        let env = make_gridworld(4).unwrap();
        let base = LearnerConfig {
            episodes: 40,
            seed: RngSeed(3),
            alpha: 0.3,
            ..LearnerConfig::new(Algorithm::QLearning)
        };
        let (q1, _) = run_baseline(&env, &base).unwrap();
        let cfg = LearnerConfig {
            algorithm: Algorithm::UncorrectedNStepQ,
            max_step: StepLimit::Fixed(1),
            ..base.clone()
        };
        let (q2, _) = run_baseline(&env, &cfg).unwrap();
        assert_eq!(q1, q2);
    }

    // SARSA(0) by hand on the same sampled stream.
    #[test]
    fn one_step_sarsa_matches_reference() {
        let env = make_gridworld(3).unwrap();
        let cfg = LearnerConfig {
            episodes: 20,
            seed: RngSeed(4),
            alpha: 0.5,
            max_step: StepLimit::Fixed(1),
            ..LearnerConfig::new(Algorithm::NStepSarsa)
        };
        let (q1, _) = run_baseline(&env, &cfg).unwrap();

        let mut env2 = env.clone();
        let g = env2.gamma();
        let mut q = QTable::new(9, 4, cfg.initial_value(env2.mdp()));
        let mut rng = cfg.seed.rng();
        for ep in 0..cfg.episodes {
            let epsilon = cfg.epsilon.at(ep, cfg.episodes);
            let mut s = env2.reset();
            let mut a = EpsilonGreedy { q: &q, epsilon }.act(s, &mut rng);
            loop {
                let tr = env2.step(a, &mut rng);
                let done = tr.terminal || tr.truncated;
                let v = if tr.terminal {
                    0.0
                } else {
                    q.max_value(tr.next_state)
                };
                if done {
                    let old = q.get(s, a);
                    q.set(s, a, old + 0.5 * (tr.reward + g * v - old));
                    break;
                }
                let a2 = EpsilonGreedy { q: &q, epsilon }.act(tr.next_state, &mut rng);
                let old = q.get(s, a);
                q.set(
                    s,
                    a,
                    old + 0.5 * (tr.reward + g * q.get(tr.next_state, a2) - old),
                );
                s = tr.next_state;
                a = a2;
            }
        }
        assert_eq!(q, q1);
    }

    #[test]
    fn greedy_path_converges_geometrically() {
        // the initial table already prefers `advance`, so with no exploration
        // every episode is the optimal path and every target equals Q*
        let (env, _) = make_highway_chain(5).unwrap();
        let q_star = optimal_q_exact(env.mdp()).unwrap();
        let alpha = 0.5;
        let mut q = QTable::from_fn(6, 2, |_, a| if a == 0 { 0.0 } else { -1.0 });
        let mut store = TrajectoryStore::for_mdp(env.mdp(), None).unwrap();
        let mut env = env;
        let mut rng = RngSeed(0).rng();
        for k in 1..=30 {
            let traj = sample_episode(
                &mut env,
                &EpsilonGreedy {
                    q: &q,
                    epsilon: 0.0,
                },
                &mut rng,
            );
            assert_eq!(traj.len(), 5);
            let keys: Vec<_> = (0..5).map(|t| traj.key(t)).collect();
            store.insert(traj).unwrap();
            for &key in keys.iter().rev() {
                gm_q_update(&mut q, &mut store, key, alpha, StepLimit::ToEpisodeEnd, 0.9).unwrap();
            }
            for s in 0..5 {
                let expect = (1.0 - (1.0 - alpha).powi(k)) * q_star.get(s, 0);
                assert!((q.get(s, 0) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn runs_are_reproducible_and_stop_early() {
        let env = make_traceback(5).unwrap();
        let cfg = LearnerConfig {
            episodes: 200,
            eval_every: 1,
            stop_when_solved: true,
            alpha: 1.0,
            ..LearnerConfig::new(Algorithm::GreedyMultiStep)
        };
        let (q1, m1) = run_gm_q_learning(&env, &cfg).unwrap();
        let (q2, m2) = run_gm_q_learning(&env, &cfg).unwrap();
        assert_eq!(q1, q2);
        assert_eq!(m1.episodes, m2.episodes);
        let solved = m1.solved_at.expect("solves within budget");
        assert_eq!(m1.episodes.len(), solved);
        assert!(run_baseline(&env, &cfg).is_err());
    }
}
