//! Tabular model-free learners: greedy multi-step Q-learning and the
//! one-step, n-step and trace-based baselines, online and offline.

mod greedy;
mod offline;
mod online;

pub use greedy::{
    deterministic_greedy_sweep, gm_q_update, greedy_return_backward, suffix_greedy_return,
    GmUpdate, GreedyReturns,
};
pub use offline::offline_train;
pub use online::{run_baseline, run_gm_q_learning, run_learner};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::envs::RngSeed;
use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, DEFAULT_STORE_CAPACITY};

/// Learning algorithms, with their command-line names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// `gm`: greedy multi-step Q-learning over a trajectory store.
    GreedyMultiStep,
    /// `q`: one-step Q-learning.
    QLearning,
    /// `sarsa-n`: on-policy n-step SARSA.
    NStepSarsa,
    /// `qlambda`: Watkins Q(λ), traces cut at exploratory actions.
    WatkinsQLambda,
    /// `nstep-q`: n-step Q-learning with no off-policy correction.
    UncorrectedNStepQ,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::GreedyMultiStep,
        Algorithm::QLearning,
        Algorithm::NStepSarsa,
        Algorithm::WatkinsQLambda,
        Algorithm::UncorrectedNStepQ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::GreedyMultiStep => "gm",
            Algorithm::QLearning => "q",
            Algorithm::NStepSarsa => "sarsa-n",
            Algorithm::WatkinsQLambda => "qlambda",
            Algorithm::UncorrectedNStepQ => "nstep-q",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm `{s}`")))
    }
}

/// Bound on the bootstrap depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepLimit {
    Fixed(usize),
    /// `N = T − t`: any depth up to the end of the trajectory.
    ToEpisodeEnd,
}

impl StepLimit {
    /// Depth limit for a suffix with `remaining` rewards.
    pub fn resolve(self, remaining: usize) -> usize {
        match self {
            StepLimit::Fixed(n) => n.min(remaining),
            StepLimit::ToEpisodeEnd => remaining,
        }
    }
}

impl FromStr for StepLimit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "to-episode-end" | "end" => Ok(StepLimit::ToEpisodeEnd),
            _ => s
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .map(StepLimit::Fixed)
                .ok_or_else(|| Error::InvalidArgument(format!("bad step limit `{s}`"))),
        }
    }
}

impl fmt::Display for StepLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepLimit::Fixed(n) => write!(f, "{n}"),
            StepLimit::ToEpisodeEnd => f.write_str("to-episode-end"),
        }
    }
}

/// Linear exploration decay from `start` to `end` over `decay_episodes`
/// episodes (the whole budget when `None`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: Option<usize>,
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        Self {
            start: eps,
            end: eps,
            decay_episodes: None,
        }
    }

    pub fn at(&self, episode: usize, budget: usize) -> f64 {
        let span = self.decay_episodes.unwrap_or(budget).max(1);
        let frac = (episode as f64 / span as f64).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 0.1,
            end: 0.01,
            decay_episodes: None,
        }
    }
}

/// Hyperparameters shared by every learner.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub epsilon: EpsilonSchedule,
    /// Overrides the environment's discount when set.
    pub gamma: Option<f64>,
    /// Greedy depth limit for `gm`, `n` for the n-step baselines.
    pub max_step: StepLimit,
    pub lambda: f64,
    /// Initial Q value; `None` means `min(r) / (1 − γ)`.
    pub q_init: Option<f64>,
    pub episodes: usize,
    pub seed: RngSeed,
    /// Suffixes kept per key by `gm`; `None` keeps all.
    pub store_capacity: Option<usize>,
    /// Check the task predicate every this many episodes (or passes).
    pub eval_every: usize,
    pub stop_when_solved: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::GreedyMultiStep,
            alpha: 0.1,
            epsilon: EpsilonSchedule::default(),
            gamma: None,
            max_step: StepLimit::ToEpisodeEnd,
            lambda: 0.9,
            q_init: None,
            episodes: 500,
            seed: RngSeed(0),
            store_capacity: Some(DEFAULT_STORE_CAPACITY),
            eval_every: 10,
            stop_when_solved: false,
        }
    }
}

impl LearnerConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        let max_step = match algorithm {
            Algorithm::NStepSarsa | Algorithm::UncorrectedNStepQ => StepLimit::Fixed(3),
            _ => StepLimit::ToEpisodeEnd,
        };
        Self {
            algorithm,
            max_step,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            return bad("exploration rate must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.gamma.is_some_and(|g| !(g > 0.0 && g < 1.0)) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.max_step == StepLimit::Fixed(0) {
            return bad("step limit must be positive");
        }
        if self.q_init.is_some_and(|v| !v.is_finite()) {
            return bad("q_init must be finite");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if self.store_capacity == Some(0) {
            return bad("store capacity must be positive");
        }
        Ok(())
    }

    /// Initial Q value for `mdp`.
    pub fn initial_value(&self, mdp: &TabularMdp) -> f64 {
        self.q_init
            .unwrap_or_else(|| mdp.min_reward().min(0.0) / (1.0 - mdp.gamma()))
    }
}

/// One row of a training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Undiscounted sum of rewards.
    pub ret: f64,
    pub steps: usize,
    /// Task predicate, when evaluated this episode.
    pub solved: Option<bool>,
    /// Mean greedy depth over this episode's updates (`gm` only).
    pub mean_chosen_step: Option<f64>,
}

/// One offline pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassRecord {
    pub pass: usize,
    /// `‖Q_after − Q_before‖∞` over the pass.
    pub max_change: f64,
    pub solved: Option<bool>,
}

/// Statistics of one learner run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub episodes: Vec<EpisodeRecord>,
    pub passes: Vec<PassRecord>,
    /// 1-based episode (or pass) at which the predicate first held.
    pub solved_at: Option<usize>,
    /// The budget ran out before the predicate held (tasks with one).
    pub budget_exhausted: bool,
    /// Greedy depth of every `gm` update, in update order.
    pub chosen_steps: Vec<u32>,
    pub wall_ns: u64,
}

impl RunMetrics {
    pub fn chosen_step_histogram(&self) -> BTreeMap<u32, usize> {
        let mut h = BTreeMap::new();
        for &n in &self.chosen_steps {
            *h.entry(n).or_insert(0) += 1;
        }
        h
    }

    /// Mean chosen step over the first and last `frac` of updates.
    pub fn chosen_step_trend(&self, frac: f64) -> Option<(f64, f64)> {
        let n = self.chosen_steps.len();
        let k = ((n as f64) * frac).floor() as usize;
        if k == 0 {
            return None;
        }
        let mean = |xs: &[u32]| xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64;
        Some((
            mean(&self.chosen_steps[..k]),
            mean(&self.chosen_steps[n - k..]),
        ))
    }

    pub fn final_return(&self) -> Option<f64> {
        self.episodes.last().map(|e| e.ret)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("dqn".parse::<Algorithm>().is_err());
        assert_eq!(
            "to-episode-end".parse::<StepLimit>().unwrap(),
            StepLimit::ToEpisodeEnd
        );
        assert_eq!("4".parse::<StepLimit>().unwrap(), StepLimit::Fixed(4));
        assert!("0".parse::<StepLimit>().is_err());
    }

    #[test]
    fn schedule_is_linear_then_flat() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.at(0, 100), 0.1);
        assert!((s.at(50, 100) - 0.055).abs() < 1e-15);
        assert!((s.at(100, 100) - 0.01).abs() < 1e-15);
        assert!((s.at(500, 100) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn config_ranges() {
        assert!(LearnerConfig::default().validate().is_ok());
        let bad = [
            LearnerConfig {
                alpha: 0.0,
                ..Default::default()
            },
            LearnerConfig {
                alpha: 1.5,
                ..Default::default()
            },
            LearnerConfig {
                lambda: -0.1,
                ..Default::default()
            },
            LearnerConfig {
                epsilon: EpsilonSchedule::constant(2.0),
                ..Default::default()
            },
            LearnerConfig {
                gamma: Some(1.0),
                ..Default::default()
            },
            LearnerConfig {
                max_step: StepLimit::Fixed(0),
                ..Default::default()
            },
            LearnerConfig {
                eval_every: 0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn trend_and_histogram() {
        let m = RunMetrics {
            chosen_steps: vec![5, 4, 3, 1, 1, 1, 1, 1, 2, 1],
            ..Default::default()
        };
        assert_eq!(m.chosen_step_trend(0.1), Some((5.0, 1.0)));
        assert_eq!(m.chosen_step_trend(0.2), Some((4.5, 1.5)));
        assert_eq!(m.chosen_step_histogram()[&1], 6);
        assert_eq!(RunMetrics::default().chosen_step_trend(0.1), None);
    }
}
