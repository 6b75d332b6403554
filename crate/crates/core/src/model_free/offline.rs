use std::time::Instant;

use rand::seq::SliceRandom;

use super::greedy::gm_q_update;
use super::{Algorithm, LearnerConfig, PassRecord, RunMetrics, StepLimit};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::mdp::{QTable, Trajectory, TrajectoryStore};

/// Single-suffix target for the offline baselines.
fn baseline_target(
    cfg: &LearnerConfig,
    traj: &Trajectory,
    t: usize,
    q: &QTable,
    gamma: f64,
) -> f64 {
    let len = traj.len();
    let end_value = |k: usize| {
        if k == len && traj.terminated {
            0.0
        } else {
            q.max_value(traj.state(k))
        }
    };
    match cfg.algorithm {
        Algorithm::QLearning => traj.reward(t) + gamma * end_value(t + 1),
        Algorithm::NStepSarsa | Algorithm::UncorrectedNStepQ => {
            let end = t + cfg.max_step.resolve(len - t);
            let mut g = match traj.action(end) {
                Some(a) if cfg.algorithm == Algorithm::NStepSarsa && end < len => {
                    q.get(traj.state(end), a)
                }
                _ => end_value(end),
            };
            for i in (t..end).rev() {
                g = traj.reward(i) + gamma * g;
            }
            g
        }
        Algorithm::WatkinsQLambda => {
            // λ-return that falls back to the one-step target at the first
            // non-greedy action
            let mut g = end_value(len);
            for i in (t..len).rev() {
                let next = i + 1;
                let boot = if next == len {
                    g
                } else {
                    let v = q.max_value(traj.state(next));
                    let a = traj.action(next).expect("intermediate action");
                    if q.get(traj.state(next), a) >= v {
                        (1.0 - cfg.lambda) * v + cfg.lambda * g
                    } else {
                        v
                    }
                };
                g = traj.reward(i) + gamma * boot;
            }
            g
        }
        Algorithm::GreedyMultiStep => unreachable!("handled by the store update"),
    }
}

/// Trains from a fixed dataset with no environment interaction.
///
/// The store is built once from `dataset`; each pass then visits every
/// populated `(s, a)` key in an order shuffled per pass from `cfg.seed`.
/// `gm` updates from the best stored greedy return; the baselines apply
/// their own target once per stored suffix. `env` supplies the dynamics
/// dimensions and the task predicate, evaluated after every
/// `cfg.eval_every` passes.
pub fn offline_train(
    env: &Env,
    dataset: &[Trajectory],
    cfg: &LearnerConfig,
    passes: usize,
) -> Result<(QTable, RunMetrics)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "offline training needs a non-empty dataset".into(),
        ));
    }
    let start = Instant::now();
    let mut mdp = env.mdp().clone();
    if let Some(g) = cfg.gamma {
        mdp = mdp.with_gamma(g)?;
    }
    let gamma = mdp.gamma();
    let mut store = TrajectoryStore::for_mdp(&mdp, cfg.store_capacity)?;
    for traj in dataset {
        traj.validate_for(&mdp)?;
        store.insert(traj.clone())?;
    }
    let mut q = QTable::new(mdp.num_states(), mdp.num_actions(), cfg.initial_value(&mdp));
    let mut keys: Vec<(usize, usize)> = store.keys().collect();
    let mut rng = cfg.seed.rng();
    let mut metrics = RunMetrics::default();
    let limit = match cfg.algorithm {
        Algorithm::GreedyMultiStep => cfg.max_step,
        _ => StepLimit::ToEpisodeEnd,
    };
    for pass in 1..=passes {
        keys.shuffle(&mut rng);
        let before = q.clone();
        for &(s, a) in &keys {
            if cfg.algorithm == Algorithm::GreedyMultiStep {
                if let Some(u) = gm_q_update(&mut q, &mut store, (s, a), cfg.alpha, limit, gamma)? {
                    metrics.chosen_steps.push(u.chosen_step as u32);
                }
                continue;
            }
            for i in 0..store.suffixes(s, a).len() {
                let sfx = store.suffixes(s, a)[i];
                let target =
                    baseline_target(cfg, store.trajectory(sfx.trajectory), sfx.offset, &q, gamma);
                let old = q.get(s, a);
                q.set(s, a, old + cfg.alpha * (target - old));
            }
        }
        let solved = if pass.is_multiple_of(cfg.eval_every) || pass == passes {
            env.is_solved_by(&q)
        } else {
            None
        };
        if solved == Some(true) && metrics.solved_at.is_none() {
            metrics.solved_at = Some(pass);
        }
        metrics.passes.push(PassRecord {
            pass,
            max_change: q.max_abs_diff(&before),
            solved,
        });
        if cfg.stop_when_solved && metrics.solved_at.is_some() {
            break;
        }
    }
    metrics.budget_exhausted = metrics.solved_at.is_none() && env.is_solved_by(&q).is_some();
    metrics.wall_ns = start.elapsed().as_nanos() as u64;
    Ok((q, metrics))
}
