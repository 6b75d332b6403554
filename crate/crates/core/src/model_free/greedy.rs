use super::StepLimit;
use crate::error::{Error, Result};
use crate::mdp::{PolicySet, QTable, TabularMdp, Trajectory, TrajectoryStore};

/// Per-step greedy returns `G_t = max_{1≤n≤T−t} R_n^Q(τ_t)` of a trajectory,
/// with the maximizing depth of each step.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyReturns {
    pub values: Vec<f64>,
    /// `argmax_n` per step; ties go to the smallest depth.
    pub chosen_steps: Vec<usize>,
}

impl GreedyReturns {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Value used after the last reward of the window ending at `end`.
fn bootstrap(traj: &Trajectory, end: usize, q: &QTable) -> f64 {
    if end == traj.len() && traj.terminated {
        0.0
    } else {
        q.max_value(traj.state(end))
    }
}

/// Greedy returns of every step, by the backward recurrence
/// `G_t = r_t + γ max(max_a Q(s_{t+1}, a), G_{t+1})`.
pub fn greedy_return_backward(traj: &Trajectory, q: &QTable, gamma: f64) -> Result<GreedyReturns> {
    if traj.is_empty() {
        return Err(Error::InvalidTrajectory("empty trajectory".into()));
    }
    let len = traj.len();
    let mut values = vec![0.0; len];
    let mut chosen_steps = vec![1; len];
    values[len - 1] = traj.reward(len - 1) + gamma * bootstrap(traj, len, q);
    for t in (0..len - 1).rev() {
        let v_next = q.max_value(traj.state(t + 1));
        if v_next >= values[t + 1] {
            values[t] = traj.reward(t) + gamma * v_next;
        } else {
            values[t] = traj.reward(t) + gamma * values[t + 1];
            chosen_steps[t] = 1 + chosen_steps[t + 1];
        }
    }
    Ok(GreedyReturns {
        values,
        chosen_steps,
    })
}

/// Greedy return of the suffix starting at `t`, with depths limited to
/// `max_n`. Returns `(value, chosen depth)`.
pub fn suffix_greedy_return(
    traj: &Trajectory,
    t: usize,
    max_n: usize,
    q: &QTable,
    gamma: f64,
) -> (f64, usize) {
    let end = t.saturating_add(max_n.max(1)).min(traj.len());
    let mut value = traj.reward(end - 1) + gamma * bootstrap(traj, end, q);
    let mut chosen = 1;
    for k in (t..end - 1).rev() {
        let v_next = q.max_value(traj.state(k + 1));
        if v_next >= value {
            value = traj.reward(k) + gamma * v_next;
            chosen = 1;
        } else {
            value = traj.reward(k) + gamma * value;
            chosen += 1;
        }
    }
    (value, chosen)
}

/// Outcome of one store-backed update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmUpdate {
    pub target: f64,
    pub chosen_step: usize,
}

/// Sets `Q(s,a) ← Q(s,a) + α (target − Q(s,a))` where the target is the
/// best greedy return among the suffixes stored under `(s, a)`. Each
/// suffix's store score is refreshed along the way. Returns `None` when
/// the key holds no suffix.
pub fn gm_q_update(
    q: &mut QTable,
    store: &mut TrajectoryStore,
    key: (usize, usize),
    alpha: f64,
    limit: StepLimit,
    gamma: f64,
) -> Result<Option<GmUpdate>> {
    let (s, a) = key;
    if s >= q.num_states() || a >= q.num_actions() {
        return Err(Error::DimensionMismatch {
            expected: format!("key within {}x{}", q.num_states(), q.num_actions()),
            found: format!("({s}, {a})"),
        });
    }
    let mut best: Option<GmUpdate> = None;
    for i in 0..store.suffixes(s, a).len() {
        let sfx = store.suffixes(s, a)[i];
        let traj = store.trajectory(sfx.trajectory);
        let max_n = limit.resolve(traj.len() - sfx.offset);
        let (value, chosen) = suffix_greedy_return(traj, sfx.offset, max_n, q, gamma);
        store.rescore(s, a, i, value);
        if best.is_none_or(|b| value > b.target) {
            best = Some(GmUpdate {
                target: value,
                chosen_step: chosen,
            });
        }
    }
    if let Some(b) = best {
        let old = q.get(s, a);
        q.set(s, a, old + alpha * (b.target - old));
    }
    Ok(best)
}

/// Exact sample-based greedy operator on a deterministic MDP: for every
/// `(s, a)` and every deterministic `π`, roll out `N` steps (first `a`,
/// then `π`, continuing through absorbing states), store the rollouts and
/// take the best greedy return. Matches the model-based greedy operator
/// when dynamics and policies are deterministic.
pub fn deterministic_greedy_sweep(
    mdp: &TabularMdp,
    policies: &PolicySet,
    n: usize,
    q: &QTable,
) -> Result<QTable> {
    if n == 0 {
        return Err(Error::InvalidHorizon(0));
    }
    if !mdp.is_deterministic() {
        return Err(Error::InvalidMdp(
            "sample operator needs deterministic dynamics".into(),
        ));
    }
    if !policies.all_deterministic() {
        return Err(Error::InvalidPolicy(
            "sample operator needs deterministic policies".into(),
        ));
    }
    mdp.check_q_dims(q)?;
    let mut store = TrajectoryStore::for_mdp(mdp, None)?;
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            for pi in policies {
                mdp.check_policy_dims(pi)?;
                let mut triples = Vec::with_capacity(n);
                let (mut st, mut act) = (s, a);
                for _ in 0..n {
                    triples.push((st, act, mdp.reward(st, act)));
                    st = mdp.deterministic_successor(st, act).expect("deterministic");
                    act = pi.action(st).expect("deterministic");
                }
                // only the key at offset 0 is used; later keys are harmless
                store.insert_scored(
                    Trajectory::from_triples(&triples, st, false)?,
                    &vec![0.0; n],
                )?;
            }
        }
    }
    let mut out = q.clone();
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let mut best = f64::NEG_INFINITY;
            for sfx in store.suffixes(s, a).iter().filter(|x| x.offset == 0) {
                let traj = store.trajectory(sfx.trajectory);
                best = best.max(suffix_greedy_return(traj, 0, n, q, mdp.gamma()).0);
            }
            out.set(s, a, best);
        }
    }
    Ok(out)
}
