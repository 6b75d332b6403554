use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use super::{Env, RngSeed, Task};
use crate::error::{Error, Result};
use crate::mdp::{MdpBuilder, PolicySet, TabularMdp, TabularPolicy};

pub const GRID_UP: usize = 0;
pub const GRID_DOWN: usize = 1;
pub const GRID_LEFT: usize = 2;
pub const GRID_RIGHT: usize = 3;

pub const CHAIN_ADVANCE: usize = 0;
pub const CHAIN_STRAY: usize = 1;

/// The first two actions that unlock the large Trace Back reward.
pub const TRACEBACK_TARGET: (usize, usize) = (1, 0);

const TOY_GAMMA: f64 = 0.9;
const LARGE_GRID_GAMMA: f64 = 0.99;

const TRACEBACK_HIT: f64 = 10.0;
const TRACEBACK_MISS: f64 = -1.0;
const CHOICE_REWARDS: [f64; 2] = [1.0, 10.0];

/// `n x n` grid, start in the top-left corner, terminal goal in the
/// bottom-right corner, reward −1 per step. Moves off the grid stay put.
pub fn make_gridworld(side: usize) -> Result<Env> {
    if side < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid side must be >= 2, got {side}"
        )));
    }
    let gamma = if side >= 10 {
        LARGE_GRID_GAMMA
    } else {
        TOY_GAMMA
    };
    let n = side * side;
    let goal = n - 1;
    let mut b = MdpBuilder::new(n, 4, gamma);
    for s in 0..n {
        if s == goal {
            continue;
        }
        let (row, col) = (s / side, s % side);
        for a in 0..4 {
            let (r, c) = match a {
                GRID_UP => (row.saturating_sub(1), col),
                GRID_DOWN => ((row + 1).min(side - 1), col),
                GRID_LEFT => (row, col.saturating_sub(1)),
                _ => (row, (col + 1).min(side - 1)),
            };
            b.transition(s, a, r * side + c, 1.0)?;
            b.reward(s, a, -1.0)?;
        }
    }
    b.absorbing(goal)?;
    Env::new(b.build()?, Task::GridWorld { side }, 0, 10 * n)
}

/// Trace Back with episode length `delay`.
///
/// States encode the timestep and whether the first two actions matched
/// [`TRACEBACK_TARGET`]. Every reward is 0 except the last one: +10 on a
/// match, −1 otherwise.
pub fn make_traceback(delay: usize) -> Result<Env> {
    if delay < 3 {
        return Err(Error::InvalidArgument(format!(
            "trace back delay must be >= 3, got {delay}"
        )));
    }
    // state 0 = start; (t, flag) for 1 <= t <= delay-1 at 1 + 2(t-1) + flag
    // with flag 0 = prefix still correct; terminal last.
    let at = |t: usize, ok: bool| 1 + 2 * (t - 1) + usize::from(!ok);
    let terminal = 2 * delay - 1;
    let mut b = MdpBuilder::new(2 * delay, 2, TOY_GAMMA);
    for a in 0..2 {
        b.transition(0, a, at(1, a == TRACEBACK_TARGET.0), 1.0)?;
    }
    for t in 1..delay {
        for ok in [true, false] {
            let s = at(t, ok);
            for a in 0..2 {
                if t == delay - 1 {
                    b.transition(s, a, terminal, 1.0)?;
                    b.reward(s, a, if ok { TRACEBACK_HIT } else { TRACEBACK_MISS })?;
                } else {
                    let still_ok = ok && (t != 1 || a == TRACEBACK_TARGET.1);
                    b.transition(s, a, at(t + 1, still_ok), 1.0)?;
                }
            }
        }
    }
    b.absorbing(terminal)?;
    Env::new(b.build()?, Task::TraceBack { delay }, 0, delay)
}

/// Choice with episode length `delay`: the first action picks a corridor,
/// the rest of the episode is forced, and the last step pays +10 in
/// corridor 1 and +1 in corridor 0.
pub fn make_choice(delay: usize) -> Result<Env> {
    if delay < 2 {
        return Err(Error::InvalidArgument(format!(
            "choice delay must be >= 2, got {delay}"
        )));
    }
    let len = delay - 1;
    let at = |c: usize, k: usize| 1 + c * len + (k - 1);
    let terminal = 1 + 2 * len;
    let mut b = MdpBuilder::new(terminal + 1, 2, TOY_GAMMA);
    for (c, &pay) in CHOICE_REWARDS.iter().enumerate() {
        b.transition(0, c, at(c, 1), 1.0)?;
        for k in 1..=len {
            for a in 0..2 {
                if k == len {
                    b.transition(at(c, k), a, terminal, 1.0)?;
                    b.reward(at(c, k), a, pay)?;
                } else {
                    b.transition(at(c, k), a, at(c, k + 1), 1.0)?;
                }
            }
        }
    }
    b.absorbing(terminal)?;
    Env::new(b.build()?, Task::Choice { delay }, 0, delay)
}

/// Deterministic chain `s_0 … s_N` with `s_N` terminal. `advance` moves
/// right, `stray` stays put; entering `s_N` pays 1. Also returns the
/// behavior set {always advance, uniform}.
pub fn make_highway_chain(horizon: usize) -> Result<(Env, PolicySet)> {
    if horizon < 2 {
        return Err(Error::InvalidArgument(format!(
            "chain horizon must be >= 2, got {horizon}"
        )));
    }
    let terminal = horizon;
    let mut b = MdpBuilder::new(horizon + 1, 2, TOY_GAMMA);
    for s in 0..horizon {
        b.transition(s, CHAIN_ADVANCE, s + 1, 1.0)?;
        if s + 1 == terminal {
            b.reward(s, CHAIN_ADVANCE, 1.0)?;
        }
        b.transition(s, CHAIN_STRAY, s, 1.0)?;
    }
    b.absorbing(terminal)?;
    let env = Env::new(b.build()?, Task::HighwayChain { horizon }, 0, 10 * horizon)?;
    let policies = highway_policies(env.num_states())?;
    Ok((env, policies))
}

/// {always `advance`, uniform} on a chain with `num_states` states.
pub fn highway_policies(num_states: usize) -> Result<PolicySet> {
    PolicySet::new(vec![
        TabularPolicy::constant(num_states, 2, CHAIN_ADVANCE)?,
        TabularPolicy::uniform(num_states, 2),
    ])
}

/// Random MDP: every non-terminal `(s, a)` has `branching` distinct
/// successors with flat-Dirichlet probabilities and a reward uniform in
/// [−1, 1]; the last state is absorbing and terminal.
pub fn make_random_mdp(
    seed: RngSeed,
    num_states: usize,
    num_actions: usize,
    branching: usize,
) -> Result<Env> {
    let mdp = random_mdp(seed, num_states, num_actions, branching, TOY_GAMMA)?;
    Env::new(mdp, Task::Random, 0, 10 * num_states)
}

pub(crate) fn random_mdp(
    seed: RngSeed,
    num_states: usize,
    num_actions: usize,
    branching: usize,
    gamma: f64,
) -> Result<TabularMdp> {
    if num_states < 2 || num_actions == 0 || branching == 0 || branching > num_states {
        return Err(Error::InvalidArgument(format!(
            "random MDP needs |S| >= 2, |A| >= 1, 1 <= b <= |S|; got {num_states}, {num_actions}, {branching}"
        )));
    }
    let mut rng = seed.rng();
    let terminal = num_states - 1;
    let mut b = MdpBuilder::new(num_states, num_actions, gamma);
    for s in 0..terminal {
        for a in 0..num_actions {
            let mut succ = index::sample(&mut rng, num_states, branching).into_vec();
            succ.sort_unstable();
            let probs = crate::mdp::dirichlet_uniform(branching, &mut rng);
            for (&n, p) in succ.iter().zip(probs) {
                b.transition(s, a, n, p)?;
            }
            b.reward(s, a, rng.random_range(-1.0..=1.0))?;
        }
    }
    b.absorbing(terminal)?;
    b.build()
}

/// Generator names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvSpec {
    GridWorld(usize),
    TraceBack(usize),
    Choice(usize),
    Chain(usize),
    Random {
        seed: u64,
        states: usize,
        actions: usize,
        branching: usize,
    },
}

impl EnvSpec {
    pub fn build(&self) -> Result<Env> {
        match *self {
            EnvSpec::GridWorld(n) => make_gridworld(n),
            EnvSpec::TraceBack(t) => make_traceback(t),
            EnvSpec::Choice(t) => make_choice(t),
            EnvSpec::Chain(n) => make_highway_chain(n).map(|(env, _)| env),
            EnvSpec::Random {
                seed,
                states,
                actions,
                branching,
            } => make_random_mdp(RngSeed(seed), states, actions, branching),
        }
    }
}

impl FromStr for EnvSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<u64> {
            parts
                .get(i)
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::UnknownGenerator(s.to_string()))
        };
        let spec = match (parts[0], parts.len()) {
            ("gridworld", 2) => EnvSpec::GridWorld(num(1)? as usize),
            ("traceback", 2) => EnvSpec::TraceBack(num(1)? as usize),
            ("choice", 2) => EnvSpec::Choice(num(1)? as usize),
            ("chain", 2) => EnvSpec::Chain(num(1)? as usize),
            ("random", 5) => EnvSpec::Random {
                seed: num(1)?,
                states: num(2)? as usize,
                actions: num(3)? as usize,
                branching: num(4)? as usize,
            },
            _ => return Err(Error::UnknownGenerator(s.to_string())),
        };
        Ok(spec)
    }
}

impl std::fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnvSpec::GridWorld(n) => write!(f, "gridworld:{n}"),
            EnvSpec::TraceBack(t) => write!(f, "traceback:{t}"),
            EnvSpec::Choice(t) => write!(f, "choice:{t}"),
            EnvSpec::Chain(n) => write!(f, "chain:{n}"),
            EnvSpec::Random {
                seed,
                states,
                actions,
                branching,
            } => {
                write!(f, "random:{seed}:{states}:{actions}:{branching}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::greedy_path_length;
    use crate::exact_dp::solve_optimal_q;
    use crate::mdp::validate;

    const ORACLE_EPS: f64 = 1e-12;

    #[test]
    fn gridworld_values() {
        let env = make_gridworld(2).unwrap();
        let g = env.gamma();
        let q = solve_optimal_q(env.mdp(), ORACLE_EPS).unwrap();
        assert!((q.max_value(0) - (-1.0 - g)).abs() < 1e-10);
        assert_eq!(q.max_value(3), 0.0);
        assert!((q.get(0, GRID_RIGHT) - (-1.0 - g)).abs() < 1e-10);
        assert!(make_gridworld(1).is_err());
    }

    #[test]
    fn gridworld_five_shortest_path() {
        let env = make_gridworld(5).unwrap();
        let q = solve_optimal_q(env.mdp(), ORACLE_EPS).unwrap();
        assert_eq!(greedy_path_length(env.mdp(), &q, 0, 100), Some(8));
        assert_eq!(env.is_solved_by(&q), Some(true));
        assert_eq!(env.episode_cap(), 250);
        assert_eq!(make_gridworld(10).unwrap().gamma(), 0.99);
    }

    #[test]
    fn traceback_prefixes() {
        let env = make_traceback(6).unwrap();
        let mdp = env.mdp();
        let mut hits = 0;
        for a0 in 0..2 {
            for a1 in 0..2 {
                let mut s = 0;
                let mut total = 0.0;
                for t in 0..6 {
                    let a = [a0, a1, 0, 1, 0, 1][t];
                    total += mdp.reward(s, a);
                    s = mdp.deterministic_successor(s, a).unwrap();
                }
                assert!(mdp.is_terminal(s));
                if (a0, a1) == TRACEBACK_TARGET {
                    assert_eq!(total, 10.0);
                    hits += 1;
                } else {
                    assert_eq!(total, -1.0);
                }
            }
        }
        assert_eq!(hits, 1);
        assert!(make_traceback(2).is_err());
    }

    #[test]
    fn traceback_optimum_is_discounted_ten() {
        let env = make_traceback(10).unwrap();
        let q = solve_optimal_q(env.mdp(), ORACLE_EPS).unwrap();
        assert!((q.max_value(0) - 10.0 * 0.9f64.powi(9)).abs() < 1e-10);
        assert_eq!(env.is_solved_by(&q), Some(true));
    }

    #[test]
    fn choice_gap_is_nine_gamma_pow() {
        for delay in 2..7 {
            let env = make_choice(delay).unwrap();
            let g = env.gamma();
            let q = solve_optimal_q(env.mdp(), ORACLE_EPS).unwrap();
            let expect = 9.0 * g.powi(delay as i32 - 1);
            assert!(
                (q.get(0, 1) - q.get(0, 0) - expect).abs() < 1e-10,
                "delay {delay}"
            );
            assert!((q.get(0, 1) - 10.0 * g.powi(delay as i32 - 1)).abs() < 1e-10);
        }
        let env = make_choice(2).unwrap();
        let q = solve_optimal_q(env.mdp(), ORACLE_EPS).unwrap();
        assert!((q.get(0, 1) - 9.0).abs() < 1e-10);
        assert!(make_choice(1).is_err());
    }

    #[test]
    fn chain_values() {
        let (env, policies) = make_highway_chain(20).unwrap();
        let g = env.gamma();
        let q = solve_optimal_q(env.mdp(), ORACLE_EPS).unwrap();
        assert!((q.max_value(0) - g.powi(19)).abs() < 1e-12);
        assert_eq!(q.max_value(20), 0.0);
        assert_eq!(policies.len(), 2);
        assert!(make_highway_chain(1).is_err());
    }

    #[test]
    fn random_mdp_properties() {
        let a = make_random_mdp(RngSeed(7), 10, 3, 4).unwrap();
        let b = make_random_mdp(RngSeed(7), 10, 3, 4).unwrap();
        assert_eq!(a.mdp(), b.mdp());
        for s in 0..10 {
            for act in 0..3 {
                let sum: f64 = a.mdp().successors(s, act).iter().map(|x| x.1).sum();
                assert!((sum - 1.0).abs() <= 1e-12);
            }
        }
        let det = make_random_mdp(RngSeed(7), 10, 3, 1).unwrap();
        assert!(det.mdp().is_deterministic());
        assert!(make_random_mdp(RngSeed(0), 3, 2, 4).is_err());
        assert!(make_random_mdp(RngSeed(0), 1, 2, 1).is_err());
    }

    #[test]
    fn every_generator_validates() {
        for spec in [
            "gridworld:3",
            "gridworld:12",
            "traceback:3",
            "traceback:15",
            "choice:2",
            "choice:9",
            "chain:2",
            "chain:30",
            "random:3:12:4:5",
        ] {
            let env: EnvSpec = spec.parse().unwrap();
            assert_eq!(env.to_string(), spec);
            let env = env.build().unwrap();
            assert!(validate(env.mdp()).is_valid(), "{spec}");
        }
        assert!("grid:3".parse::<EnvSpec>().is_err());
        assert!("random:1:2".parse::<EnvSpec>().is_err());
    }
}
