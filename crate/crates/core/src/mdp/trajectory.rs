use super::TabularMdp;
use crate::error::{Error, Result};

/// One transition `(r_t, s_{t+1}, a_{t+1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub reward: f64,
    pub next_state: usize,
    /// `None` is only allowed on the final step.
    pub next_action: Option<usize>,
}

/// An episode `s_0, a_0, r_0, s_1, a_1, r_1, ..., s_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start_state: usize,
    pub start_action: usize,
    pub steps: Vec<Step>,
    /// True iff `s_T` is a terminal state (otherwise the episode was cut).
    pub terminated: bool,
}

impl Trajectory {
    pub fn new(
        start_state: usize,
        start_action: usize,
        steps: Vec<Step>,
        terminated: bool,
    ) -> Result<Self> {
        let t = Self {
            start_state,
            start_action,
            steps,
            terminated,
        };
        t.check_shape()?;
        Ok(t)
    }

    /// Builds a trajectory from `(s, a, r)` triples followed by the final
    /// state; actions are attached to the step that reaches their state.
    pub fn from_triples(
        triples: &[(usize, usize, f64)],
        final_state: usize,
        terminated: bool,
    ) -> Result<Self> {
        let (&(s0, a0, _), rest) = triples
            .split_first()
            .ok_or_else(|| Error::InvalidTrajectory("empty trajectory".into()))?;
        let mut steps = Vec::with_capacity(triples.len());
        for (i, &(_, _, r)) in triples.iter().enumerate() {
            let (next_state, next_action) = match rest.get(i) {
                Some(&(s, a, _)) => (s, Some(a)),
                None => (final_state, None),
            };
            steps.push(Step {
                reward: r,
                next_state,
                next_action,
            });
        }
        Self::new(s0, a0, steps, terminated)
    }

    fn check_shape(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::InvalidTrajectory("empty trajectory".into()));
        }
        let last = self.steps.len() - 1;
        if let Some(t) = self.steps[..last]
            .iter()
            .position(|s| s.next_action.is_none())
        {
            return Err(Error::InvalidTrajectory(format!(
                "missing action a_{}",
                t + 1
            )));
        }
        Ok(())
    }

    /// Length `T` (number of rewards).
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `s_t` for `0 ≤ t ≤ T`.
    pub fn state(&self, t: usize) -> usize {
        if t == 0 {
            self.start_state
        } else {
            self.steps[t - 1].next_state
        }
    }

    /// `a_t` for `0 ≤ t < T`, and `a_T` if it was recorded.
    pub fn action(&self, t: usize) -> Option<usize> {
        if t == 0 {
            Some(self.start_action)
        } else {
            self.steps.get(t - 1).and_then(|s| s.next_action)
        }
    }

    pub fn reward(&self, t: usize) -> f64 {
        self.steps[t].reward
    }

    /// `(s_t, a_t)` for `0 ≤ t < T`.
    pub fn key(&self, t: usize) -> (usize, usize) {
        (self.state(t), self.action(t).expect("validated trajectory"))
    }

    pub fn final_state(&self) -> usize {
        self.steps.last().expect("non-empty").next_state
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    /// `Σ_t γ^t r_t` with no bootstrap.
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.steps
            .iter()
            .rev()
            .fold(0.0, |acc, s| s.reward + gamma * acc)
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.rewards().sum()
    }

    /// The part of the episode from step `t` onward.
    pub fn suffix(&self, t: usize) -> Result<Trajectory> {
        if t >= self.len() {
            return Err(Error::InvalidTrajectory(format!(
                "suffix start {t} beyond length {}",
                self.len()
            )));
        }
        let (s, a) = self.key(t);
        Ok(Trajectory {
            start_state: s,
            start_action: a,
            steps: self.steps[t..].to_vec(),
            terminated: self.terminated,
        })
    }

    /// All `T` suffixes keyed by their starting `(s_t, a_t)`.
    pub fn suffixes(&self) -> Result<Vec<((usize, usize), Trajectory)>> {
        self.check_shape()?;
        (0..self.len())
            .map(|t| Ok((self.key(t), self.suffix(t)?)))
            .collect()
    }

    /// Checks indices and the terminal flag against `mdp`.
    pub fn validate_for(&self, mdp: &TabularMdp) -> Result<()> {
        self.check_shape()?;
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        for t in 0..=self.len() {
            let s = self.state(t);
            if s >= ns {
                return Err(Error::InvalidTrajectory(format!(
                    "state {s} at t={t} out of range"
                )));
            }
            if let Some(a) = self.action(t) {
                if a >= na {
                    return Err(Error::InvalidTrajectory(format!(
                        "action {a} at t={t} out of range"
                    )));
                }
            }
        }
        if self.terminated && !mdp.is_terminal(self.final_state()) {
            return Err(Error::InvalidTrajectory(
                "terminated flag set on a non-terminal final state".into(),
            ));
        }
        Ok(())
    }
}

/// Splits `trajectory` into its `T` suffixes, entry `t` keyed by `(s_t, a_t)`.
pub fn suffixes_of(trajectory: &Trajectory) -> Result<Vec<((usize, usize), Trajectory)>> {
    trajectory.suffixes()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_step() -> Trajectory {
        Trajectory::from_triples(&[(0, 0, 1.0), (1, 1, 2.0), (2, 0, 3.0)], 3, true).unwrap()
    }

    #[test]
    fn suffix_lengths() {
        let sufs = suffixes_of(&three_step()).unwrap();
        let lens: Vec<usize> = sufs.iter().map(|(_, s)| s.len()).collect();
        assert_eq!(lens, vec![3, 2, 1]);
    }

    #[test]
    fn length_one_suffix_is_itself() {
        let t = Trajectory::from_triples(&[(4, 1, -1.0)], 5, false).unwrap();
        let sufs = suffixes_of(&t).unwrap();
        assert_eq!(sufs.len(), 1);
        assert_eq!(sufs[0].0, (4, 1));
        assert_eq!(sufs[0].1, t);
    }

    #[test]
    fn suffix_at_one_starts_at_second_pair() {
        let t = Trajectory::from_triples(&[(0, 0, 0.0), (1, 1, 0.0)], 2, false).unwrap();
        let sufs = suffixes_of(&t).unwrap();
        assert_eq!(sufs[1].0, (1, 1));
        assert_eq!(sufs[1].1.start_state, 1);
        assert_eq!(sufs[1].1.final_state(), 2);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(Trajectory::new(0, 0, vec![], false).is_err());
        assert!(Trajectory::from_triples(&[], 0, false).is_err());
    }

    #[test]
    fn missing_intermediate_action_rejected() {
        let steps = vec![
            Step {
                reward: 0.0,
                next_state: 1,
                next_action: None,
            },
            Step {
                reward: 0.0,
                next_state: 2,
                next_action: None,
            },
        ];
        assert!(Trajectory::new(0, 0, steps, false).is_err());
    }

    #[test]
    fn discounted_return_folds_backward() {
        let t = three_step();
        assert!((t.discounted_return(0.5) - (1.0 + 0.5 * 2.0 + 0.25 * 3.0)).abs() < 1e-15);
        assert_eq!(t.undiscounted_return(), 6.0);
    }
}
