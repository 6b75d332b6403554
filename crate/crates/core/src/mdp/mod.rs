//! Finite MDPs and the data model shared by every other module.

mod format;
mod policy;
mod store;
mod table;
mod trajectory;

pub use format::{parse_mdp, parse_trajectories, write_mdp, write_trajectories};
pub(crate) use policy::dirichlet_uniform;
pub use policy::{PolicySet, TabularPolicy};
pub use store::{StoredSuffix, TrajectoryStore, DEFAULT_STORE_CAPACITY};
pub use table::{QTable, VTable};
pub use trajectory::{suffixes_of, Step, Trajectory};

use std::fmt;

use crate::error::{Error, Result};

/// Tolerance on `Σ_{s'} P(s'|s,a) = 1` used by [`validate`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// A finite discounted MDP with expected rewards `r(s, a)`.
///
/// Transitions are stored sparsely per `(s, a)` row, sorted by successor.
/// Construction goes through [`MdpBuilder`], which does not enforce the
/// invariants; call [`validate`] (or [`MdpBuilder::build`]) to check them.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    transitions: Vec<Vec<(usize, f64)>>,
    rewards: Vec<f64>,
    terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Successors of `(s, a)` as `(s', P(s'|s,a))`, sorted by `s'`.
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.num_actions + a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.terminal
            .iter()
            .enumerate()
            .filter_map(|(s, &t)| t.then_some(s))
    }

    pub fn min_reward(&self) -> f64 {
        self.rewards.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_reward(&self) -> f64 {
        self.rewards
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when every `(s, a)` has a single successor with probability 1.
    pub fn is_deterministic(&self) -> bool {
        self.transitions
            .iter()
            .all(|row| row.len() == 1 && row[0].1 == 1.0)
    }

    /// The unique successor of `(s, a)` in a deterministic MDP.
    pub fn deterministic_successor(&self, s: usize, a: usize) -> Option<usize> {
        match self.successors(s, a) {
            [(next, p)] if *p == 1.0 => Some(*next),
            _ => None,
        }
    }

    /// Same MDP with a different discount factor.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        self.gamma = gamma;
        Ok(self)
    }

    pub(crate) fn check_q_dims(&self, q: &QTable) -> Result<()> {
        if q.num_states() != self.num_states || q.num_actions() != self.num_actions {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.num_states, self.num_actions),
                found: format!("{}x{}", q.num_states(), q.num_actions()),
            });
        }
        Ok(())
    }

    pub(crate) fn check_policy_dims(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.num_states() != self.num_states || policy.num_actions() != self.num_actions {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.num_states, self.num_actions),
                found: format!("{}x{}", policy.num_states(), policy.num_actions()),
            });
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidMdp(format!(
            "discount must lie in (0, 1), got {gamma}"
        )));
    }
    Ok(())
}

/// Incremental constructor for [`TabularMdp`].
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    mdp: TabularMdp,
}

impl MdpBuilder {
    /// Starts an MDP with no transitions, zero rewards and no terminals.
    pub fn new(num_states: usize, num_actions: usize, gamma: f64) -> Self {
        let n = num_states * num_actions;
        Self {
            mdp: TabularMdp {
                num_states,
                num_actions,
                gamma,
                transitions: vec![Vec::new(); n],
                rewards: vec![0.0; n],
                terminal: vec![false; num_states],
            },
        }
    }

    fn check_sa(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.mdp.num_states || a >= self.mdp.num_actions {
            return Err(Error::InvalidMdp(format!(
                "(s={s}, a={a}) outside {}x{}",
                self.mdp.num_states, self.mdp.num_actions
            )));
        }
        Ok(())
    }

    /// Sets `P(next|s,a) = prob`, replacing any previous value.
    pub fn transition(&mut self, s: usize, a: usize, next: usize, prob: f64) -> Result<&mut Self> {
        self.check_sa(s, a)?;
        if next >= self.mdp.num_states {
            return Err(Error::InvalidMdp(format!("successor {next} out of range")));
        }
        let row = &mut self.mdp.transitions[s * self.mdp.num_actions + a];
        match row.binary_search_by_key(&next, |&(n, _)| n) {
            Ok(i) => row[i].1 = prob,
            Err(i) => row.insert(i, (next, prob)),
        }
        Ok(self)
    }

    pub fn reward(&mut self, s: usize, a: usize, r: f64) -> Result<&mut Self> {
        self.check_sa(s, a)?;
        self.mdp.rewards[s * self.mdp.num_actions + a] = r;
        Ok(self)
    }

    /// Marks `s` terminal. Does not touch its transitions or rewards.
    pub fn terminal(&mut self, s: usize) -> Result<&mut Self> {
        if s >= self.mdp.num_states {
            return Err(Error::InvalidMdp(format!(
                "terminal state {s} out of range"
            )));
        }
        self.mdp.terminal[s] = true;
        Ok(self)
    }

    /// Marks `s` terminal and makes it absorbing with zero reward.
    pub fn absorbing(&mut self, s: usize) -> Result<&mut Self> {
        self.terminal(s)?;
        for a in 0..self.mdp.num_actions {
            self.mdp.transitions[s * self.mdp.num_actions + a] = vec![(s, 1.0)];
            self.mdp.rewards[s * self.mdp.num_actions + a] = 0.0;
        }
        Ok(self)
    }

    pub fn num_actions(&self) -> usize {
        self.mdp.num_actions
    }

    pub(crate) fn row_is_empty(&self, s: usize, a: usize) -> bool {
        self.mdp.transitions[s * self.mdp.num_actions + a].is_empty()
    }

    /// Returns the MDP without checking invariants.
    pub fn build_unchecked(self) -> TabularMdp {
        self.mdp
    }

    /// Returns the MDP if [`validate`] reports no violations.
    pub fn build(self) -> Result<TabularMdp> {
        let report = validate(&self.mdp);
        if report.is_valid() {
            Ok(self.mdp)
        } else {
            Err(Error::InvalidMdp(report.to_string()))
        }
    }
}

/// One broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyDimensions {
        num_states: usize,
        num_actions: usize,
    },
    Discount(f64),
    RowSum {
        state: usize,
        action: usize,
        sum: f64,
    },
    ProbabilityRange {
        state: usize,
        action: usize,
        next: usize,
        prob: f64,
    },
    NonFiniteReward {
        state: usize,
        action: usize,
    },
    TerminalTransition {
        state: usize,
        action: usize,
    },
    TerminalReward {
        state: usize,
        action: usize,
        reward: f64,
    },
}

impl Violation {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::EmptyDimensions { .. } => "dimensions",
            Violation::Discount(_) => "discount",
            Violation::RowSum { .. } => "row-sum",
            Violation::ProbabilityRange { .. } => "probability-range",
            Violation::NonFiniteReward { .. } => "non-finite-reward",
            Violation::TerminalTransition { .. } => "terminal-transition",
            Violation::TerminalReward { .. } => "terminal-reward",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDimensions {
                num_states,
                num_actions,
            } => {
                write!(f, "dimensions: |S|={num_states}, |A|={num_actions}")
            }
            Violation::Discount(g) => write!(f, "discount: gamma={g} not in (0,1)"),
            Violation::RowSum { state, action, sum } => {
                write!(f, "row-sum: P(.|{state},{action}) sums to {sum}")
            }
            Violation::ProbabilityRange {
                state,
                action,
                next,
                prob,
            } => {
                write!(f, "probability-range: P({next}|{state},{action})={prob}")
            }
            Violation::NonFiniteReward { state, action } => {
                write!(f, "non-finite-reward: r({state},{action})")
            }
            Violation::TerminalTransition { state, action } => {
                write!(
                    f,
                    "terminal-transition: terminal {state} does not self-loop under {action}"
                )
            }
            Violation::TerminalReward {
                state,
                action,
                reward,
            } => {
                write!(
                    f,
                    "terminal-reward: r({state},{action})={reward} on terminal state"
                )
            }
        }
    }
}

/// Outcome of [`validate`]: empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: &str) -> bool {
        self.violations.iter().any(|v| v.kind() == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of `mdp` and lists the violations.
pub fn validate(mdp: &TabularMdp) -> ValidationReport {
    let mut violations = Vec::new();
    if mdp.num_states == 0 || mdp.num_actions == 0 {
        violations.push(Violation::EmptyDimensions {
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
        });
    }
    if check_gamma(mdp.gamma).is_err() {
        violations.push(Violation::Discount(mdp.gamma));
    }
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let row = mdp.successors(s, a);
            let mut sum = 0.0;
            for &(next, p) in row {
                if !(0.0..=1.0).contains(&p) {
                    violations.push(Violation::ProbabilityRange {
                        state: s,
                        action: a,
                        next,
                        prob: p,
                    });
                }
                sum += p;
            }
            if sum.is_nan() || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                violations.push(Violation::RowSum {
                    state: s,
                    action: a,
                    sum,
                });
            }
            let r = mdp.reward(s, a);
            if !r.is_finite() {
                violations.push(Violation::NonFiniteReward {
                    state: s,
                    action: a,
                });
            }
            if mdp.is_terminal(s) {
                let self_loop = row.iter().all(|&(n, p)| n == s || p == 0.0)
                    && row.iter().any(|&(n, p)| n == s && p == 1.0);
                if !self_loop {
                    violations.push(Violation::TerminalTransition {
                        state: s,
                        action: a,
                    });
                }
                if r != 0.0 {
                    violations.push(Violation::TerminalReward {
                        state: s,
                        action: a,
                        reward: r,
                    });
                }
            }
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> MdpBuilder {
        let mut b = MdpBuilder::new(2, 1, 0.9);
        b.transition(0, 0, 1, 1.0).unwrap();
        b.reward(0, 0, 1.0).unwrap();
        b.absorbing(1).unwrap();
        b
    }

    #[test]
    fn well_formed_mdp_is_valid() {
        let mdp = two_state().build_unchecked();
        assert!(validate(&mdp).is_valid());
    }

    #[test]
    fn short_row_is_a_row_sum_violation() {
        let mut b = two_state();
        b.transition(0, 0, 1, 0.9).unwrap();
        let report = validate(&b.build_unchecked());
        assert!(report.has("row-sum"), "{report}");
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn rewarded_terminal_is_reported() {
        let mut b = two_state();
        b.reward(1, 0, 0.5).unwrap();
        let report = validate(&b.build_unchecked());
        assert!(report.has("terminal-reward"), "{report}");
    }

    #[test]
    fn terminal_must_self_loop() {
        let mut b = MdpBuilder::new(2, 1, 0.9);
        b.transition(0, 0, 1, 1.0).unwrap();
        b.transition(1, 0, 0, 1.0).unwrap();
        b.terminal(1).unwrap();
        assert!(validate(&b.build_unchecked()).has("terminal-transition"));
    }

    #[test]
    fn out_of_range_probability_and_gamma() {
        let mut b = MdpBuilder::new(2, 1, 1.0);
        b.transition(0, 0, 0, 1.5).unwrap();
        b.transition(0, 0, 1, -0.5).unwrap();
        b.absorbing(1).unwrap();
        let report = validate(&b.build_unchecked());
        assert!(report.has("probability-range"));
        assert!(report.has("discount"));
        assert!(!report.has("row-sum"));
    }

    #[test]
    fn deterministic_detection() {
        let mdp = two_state().build().unwrap();
        assert!(mdp.is_deterministic());
        assert_eq!(mdp.deterministic_successor(0, 0), Some(1));
    }
}
