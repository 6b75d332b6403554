use rand::Rng;

use crate::error::{Error, Result};

const POLICY_ROW_TOLERANCE: f64 = 1e-12;

/// Stochastic tabular policy `π(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
    deterministic: bool,
}

impl TabularPolicy {
    /// Validates and wraps a row-major `|S| x |A|` probability matrix.
    pub fn from_probs(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || probs.len() != num_states * num_actions {
            return Err(Error::InvalidPolicy(format!(
                "expected {}x{} probabilities, got {}",
                num_states,
                num_actions,
                probs.len()
            )));
        }
        let mut deterministic = true;
        for (s, row) in probs.chunks(num_actions).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidPolicy(format!(
                    "row {s} has entries outside [0,1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > POLICY_ROW_TOLERANCE {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
            deterministic &= row.iter().filter(|&&p| p != 0.0).count() == 1;
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
            deterministic,
        })
    }

    /// One-hot policy choosing `actions[s]` in state `s`.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        if let Some(&a) = actions.iter().find(|&&a| a >= num_actions) {
            return Err(Error::InvalidPolicy(format!("action {a} out of range")));
        }
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * num_actions + a] = 1.0;
        }
        Self::from_probs(actions.len(), num_actions, probs)
    }

    pub fn constant(num_states: usize, num_actions: usize, action: usize) -> Result<Self> {
        Self::deterministic(num_actions, &vec![action; num_states])
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self {
            num_states,
            num_actions,
            probs: vec![p; num_states * num_actions],
            deterministic: num_actions == 1,
        }
    }

    /// Random policy with Dirichlet(1, ..., 1) rows.
    pub fn random_stochastic<R: Rng + ?Sized>(
        num_states: usize,
        num_actions: usize,
        rng: &mut R,
    ) -> Self {
        let mut probs = Vec::with_capacity(num_states * num_actions);
        for _ in 0..num_states {
            probs.extend(dirichlet_uniform(num_actions, rng));
        }
        Self::from_probs(num_states, num_actions, probs).expect("normalized rows")
    }

    pub fn random_deterministic<R: Rng + ?Sized>(
        num_states: usize,
        num_actions: usize,
        rng: &mut R,
    ) -> Self {
        let actions: Vec<usize> = (0..num_states)
            .map(|_| rng.random_range(0..num_actions))
            .collect();
        Self::deterministic(num_actions, &actions).expect("actions in range")
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// The chosen action when the row at `s` is one-hot.
    pub fn action(&self, s: usize) -> Option<usize> {
        let row = self.row(s);
        let mut support = row.iter().enumerate().filter(|(_, &p)| p != 0.0);
        match (support.next(), support.next()) {
            (Some((a, _)), None) => Some(a),
            _ => None,
        }
    }

    /// Actions with non-zero probability at `s`.
    pub fn support(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(s)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(a, _)| a)
    }

    /// Samples `a ~ π(·|s)`. Always consumes one uniform draw.
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = self.row(s);
        let mut acc = 0.0;
        let mut last = 0;
        for (a, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = a;
                if u < acc {
                    return a;
                }
            }
        }
        last
    }
}

/// Sample from the flat Dirichlet distribution on `k` categories.
pub(crate) fn dirichlet_uniform<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    use rand_distr::{Distribution, Exp1};
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Ordered, non-empty behavior-policy set.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    policies: Vec<TabularPolicy>,
}

impl PolicySet {
    pub fn new(policies: Vec<TabularPolicy>) -> Result<Self> {
        let first = policies.first().ok_or(Error::EmptyPolicySet)?;
        let dims = (first.num_states, first.num_actions);
        if let Some(p) = policies
            .iter()
            .find(|p| (p.num_states, p.num_actions) != dims)
        {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", dims.0, dims.1),
                found: format!("{}x{}", p.num_states, p.num_actions),
            });
        }
        Ok(Self { policies })
    }

    pub fn single(policy: TabularPolicy) -> Self {
        Self {
            policies: vec![policy],
        }
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TabularPolicy> {
        self.policies.iter()
    }

    pub fn get(&self, i: usize) -> &TabularPolicy {
        &self.policies[i]
    }

    pub fn num_states(&self) -> usize {
        self.policies[0].num_states
    }

    pub fn num_actions(&self) -> usize {
        self.policies[0].num_actions
    }

    pub fn all_deterministic(&self) -> bool {
        self.policies.iter().all(|p| p.deterministic)
    }

    pub fn push(&mut self, policy: TabularPolicy) -> Result<()> {
        if (policy.num_states, policy.num_actions) != (self.num_states(), self.num_actions()) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.num_states(), self.num_actions()),
                found: format!("{}x{}", policy.num_states, policy.num_actions),
            });
        }
        self.policies.push(policy);
        Ok(())
    }
}

impl<'a> IntoIterator for &'a PolicySet {
    type Item = &'a TabularPolicy;
    type IntoIter = std::slice::Iter<'a, TabularPolicy>;

    fn into_iter(self) -> Self::IntoIter {
        self.policies.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_unnormalized_rows() {
        assert!(TabularPolicy::from_probs(1, 2, vec![0.5, 0.4]).is_err());
        assert!(TabularPolicy::from_probs(1, 2, vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn deterministic_flag_and_action() {
        let p = TabularPolicy::deterministic(3, &[2, 0]).unwrap();
        assert!(p.is_deterministic());
        assert_eq!(p.action(0), Some(2));
        assert_eq!(p.action(1), Some(0));
        let u = TabularPolicy::uniform(2, 3);
        assert!(!u.is_deterministic());
        assert_eq!(u.action(0), None);
    }

    #[test]
    fn random_rows_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = TabularPolicy::random_stochastic(5, 4, &mut rng);
        for s in 0..5 {
            assert!((p.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_respects_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = TabularPolicy::from_probs(1, 3, vec![0.0, 0.5, 0.5]).unwrap();
        for _ in 0..200 {
            assert_ne!(p.sample(0, &mut rng), 0);
        }
    }

    #[test]
    fn empty_and_mismatched_sets() {
        assert_eq!(PolicySet::new(vec![]).unwrap_err(), Error::EmptyPolicySet);
        let a = TabularPolicy::uniform(2, 2);
        let b = TabularPolicy::uniform(3, 2);
        assert!(PolicySet::new(vec![a, b]).is_err());
    }
}
