//! Reference environments. Each one is an exact [`TabularMdp`] plus a start
//! state and an episode cap, and can be stepped as a sampling environment.

mod generators;

pub(crate) use generators::random_mdp;
pub use generators::{
    highway_policies, make_choice, make_gridworld, make_highway_chain, make_random_mdp,
    make_traceback, EnvSpec, CHAIN_ADVANCE, CHAIN_STRAY, GRID_DOWN, GRID_LEFT, GRID_RIGHT, GRID_UP,
    TRACEBACK_TARGET,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{QTable, Step, TabularMdp, TabularPolicy, Trajectory};

/// Seed for every random stream in the crate; equal seeds give equal streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Seed for trial `i` of an experiment seeded with `self`.
    pub fn offset(self, i: u64) -> RngSeed {
        RngSeed(self.0.wrapping_add(i))
    }
}

/// Which task an [`Env`] implements, for the task-completion predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    GridWorld { side: usize },
    TraceBack { delay: usize },
    Choice { delay: usize },
    HighwayChain { horizon: usize },
    Random,
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
    /// The episode cap was reached without hitting a terminal state.
    pub truncated: bool,
}

/// A steppable environment backed by an exact tabular MDP.
#[derive(Debug, Clone)]
pub struct Env {
    mdp: TabularMdp,
    task: Task,
    start: usize,
    state: usize,
    steps: usize,
    cap: usize,
}

impl Env {
    pub fn new(mdp: TabularMdp, task: Task, start: usize, cap: usize) -> Result<Self> {
        if start >= mdp.num_states() || cap == 0 {
            return Err(Error::InvalidArgument(format!(
                "start state {start} or episode cap {cap} invalid"
            )));
        }
        Ok(Self {
            mdp,
            task,
            start,
            state: start,
            steps: 0,
            cap,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn into_mdp(self) -> TabularMdp {
        self.mdp
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn start_state(&self) -> usize {
        self.start
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn episode_cap(&self) -> usize {
        self.cap
    }

    pub fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.mdp.num_actions()
    }

    pub fn gamma(&self) -> f64 {
        self.mdp.gamma()
    }

    /// Replaces the discount factor of the underlying MDP.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.mdp = self.mdp.with_gamma(gamma)?;
        Ok(self)
    }

    pub fn with_episode_cap(mut self, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidArgument(
                "episode cap must be positive".into(),
            ));
        }
        self.cap = cap;
        Ok(self)
    }

    pub fn reset(&mut self) -> usize {
        self.state = self.start;
        self.steps = 0;
        self.state
    }

    /// True once the current state is terminal or the cap is reached.
    pub fn is_done(&self) -> bool {
        self.mdp.is_terminal(self.state) || self.steps >= self.cap
    }

    /// Takes `action` in the current state.
    pub fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Transition {
        let s = self.state;
        let reward = self.mdp.reward(s, action);
        let next_state = sample_successor(self.mdp.successors(s, action), rng);
        self.state = next_state;
        self.steps += 1;
        let terminal = self.mdp.is_terminal(next_state);
        Transition {
            reward,
            next_state,
            terminal,
            truncated: !terminal && self.steps >= self.cap,
        }
    }

    /// Task-completion predicate for the greedy policy of `q`; `None` for
    /// tasks without one.
    pub fn is_solved_by(&self, q: &QTable) -> Option<bool> {
        match self.task {
            Task::GridWorld { side } => Some(
                greedy_path_length(&self.mdp, q, self.start, 2 * (side - 1))
                    == Some(2 * (side - 1)),
            ),
            Task::TraceBack { .. } => {
                let first = q.greedy_action(self.start);
                let ok = self
                    .mdp
                    .deterministic_successor(self.start, TRACEBACK_TARGET.0)
                    .expect("deterministic");
                Some(first == TRACEBACK_TARGET.0 && q.greedy_action(ok) == TRACEBACK_TARGET.1)
            }
            Task::Choice { .. } => Some(q.greedy_action(self.start) == 1),
            Task::HighwayChain { horizon } => {
                Some(greedy_path_length(&self.mdp, q, self.start, horizon) == Some(horizon))
            }
            Task::Random => None,
        }
    }
}

/// Steps taken by the greedy policy of `q` from `start` to a terminal state
/// in a deterministic MDP, if it gets there within `limit` steps.
pub fn greedy_path_length(
    mdp: &TabularMdp,
    q: &QTable,
    start: usize,
    limit: usize,
) -> Option<usize> {
    let mut s = start;
    for k in 0..=limit {
        if mdp.is_terminal(s) {
            return Some(k);
        }
        s = mdp.deterministic_successor(s, q.greedy_action(s))?;
    }
    None
}

fn sample_successor<R: Rng + ?Sized>(row: &[(usize, f64)], rng: &mut R) -> usize {
    if let [(only, _)] = row {
        return *only;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(next, p) in row {
        acc += p;
        if u < acc {
            return next;
        }
    }
    row.iter()
        .rev()
        .find(|(_, p)| *p > 0.0)
        .map(|&(n, _)| n)
        .expect("non-empty row")
}

/// Action-selection rule used while collecting episodes.
pub trait Behavior {
    fn act<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize;
}

impl Behavior for TabularPolicy {
    fn act<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        self.sample(state, rng)
    }
}

/// ε-greedy on a Q table. Exactly tied greedy actions are chosen between
/// uniformly, so a flat initial table yields a random walk rather than a
/// fixed action.
#[derive(Debug, Clone, Copy)]
pub struct EpsilonGreedy<'a> {
    pub q: &'a QTable,
    pub epsilon: f64,
}

impl Behavior for EpsilonGreedy<'_> {
    fn act<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        if self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon {
            return rng.random_range(0..self.q.num_actions());
        }
        let row = self.q.row(state);
        let best = self.q.max_value(state);
        let ties = row.iter().filter(|&&v| v == best).count();
        if ties == 1 {
            return self.q.greedy_action(state);
        }
        let k = rng.random_range(0..ties);
        row.iter()
            .enumerate()
            .filter(|&(_, &v)| v == best)
            .nth(k)
            .map(|(a, _)| a)
            .expect("k < ties")
    }
}

/// Rolls out one episode from the start state. The trajectory stops at a
/// terminal state or at the episode cap.
pub fn sample_episode<B: Behavior + ?Sized, R: Rng + ?Sized>(
    env: &mut Env,
    behavior: &B,
    rng: &mut R,
) -> Trajectory {
    let s0 = env.reset();
    let a0 = behavior.act(s0, rng);
    let mut action = a0;
    let mut steps = Vec::new();
    loop {
        let tr = env.step(action, rng);
        let done = tr.terminal || tr.truncated;
        let next_action = if done {
            None
        } else {
            Some(behavior.act(tr.next_state, rng))
        };
        steps.push(Step {
            reward: tr.reward,
            next_state: tr.next_state,
            next_action,
        });
        if done {
            return Trajectory::new(s0, a0, steps, tr.terminal).expect("non-empty episode");
        }
        action = next_action.expect("set when not done");
    }
}

/// [`sample_episode`] with a fresh generator built from `seed`.
pub fn sample_episode_seeded<B: Behavior + ?Sized>(
    env: &mut Env,
    behavior: &B,
    seed: RngSeed,
) -> Trajectory {
    let mut rng = seed.rng();
    sample_episode(env, behavior, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_dp::solve_optimal_q;
    use crate::mdp::validate;

    #[test]
    fn optimal_gridworld_episode() {
        let mut env = make_gridworld(2).unwrap();
        let q = solve_optimal_q(env.mdp(), 1e-12).unwrap();
        let g = env.gamma();
        let traj = sample_episode_seeded(
            &mut env,
            &EpsilonGreedy {
                q: &q,
                epsilon: 0.0,
            },
            RngSeed(5),
        );
        assert_eq!(traj.len(), 2);
        assert!(traj.terminated);
        assert!((traj.discounted_return(g) - (-1.0 - g)).abs() < 1e-12);
    }

    #[test]
    fn traceback_uniform_has_fixed_length() {
        let mut env = make_traceback(3).unwrap();
        let uniform = TabularPolicy::uniform(env.num_states(), env.num_actions());
        let mut rng = RngSeed(11).rng();
        for _ in 0..50 {
            let traj = sample_episode(&mut env, &uniform, &mut rng);
            assert_eq!(traj.len(), 3);
            assert!(traj.terminated);
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let mut env = make_random_mdp(RngSeed(4), 8, 3, 3).unwrap();
        let uniform = TabularPolicy::uniform(env.num_states(), env.num_actions());
        let a = sample_episode_seeded(&mut env, &uniform, RngSeed(99));
        let b = sample_episode_seeded(&mut env, &uniform, RngSeed(99));
        assert_eq!(a, b);
        assert!(a.len() <= env.episode_cap());
        a.validate_for(env.mdp()).unwrap();
    }

    #[test]
    fn deterministic_policy_ignores_seed() {
        let (mut env, policies) = make_highway_chain(6).unwrap();
        let good = policies.get(0);
        let a = sample_episode_seeded(&mut env, good, RngSeed(1));
        let b = sample_episode_seeded(&mut env, good, RngSeed(2));
        assert_eq!(a, b);
        let g = env.gamma();
        assert!((a.discounted_return(g) - g.powi(5)).abs() < 1e-15);
        assert_eq!(a.undiscounted_return(), 1.0);
    }

    #[test]
    fn cap_truncates_episode() {
        let (env, _) = make_highway_chain(5).unwrap();
        let mut env = env.with_episode_cap(3).unwrap();
        let stray = TabularPolicy::constant(env.num_states(), 2, CHAIN_STRAY).unwrap();
        let traj = sample_episode_seeded(&mut env, &stray, RngSeed(0));
        assert_eq!(traj.len(), 3);
        assert!(!traj.terminated);
        assert!(validate(env.mdp()).is_valid());
    }
}
