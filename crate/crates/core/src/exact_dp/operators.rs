use crate::error::{Error, Result};
use crate::mdp::{PolicySet, QTable, TabularMdp, TabularPolicy};

/// `r(s,a) + γ Σ_{s'} P(s'|s,a) v(s')` for every `(s, a)`.
pub(crate) fn backup(mdp: &TabularMdp, v: &[f64]) -> QTable {
    let g = mdp.gamma();
    QTable::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        let ev: f64 = mdp.successors(s, a).iter().map(|&(n, p)| p * v[n]).sum();
        mdp.reward(s, a) + g * ev
    })
}

/// `max_a q(s, a)` per state.
pub(crate) fn max_values(q: &QTable) -> Vec<f64> {
    (0..q.num_states()).map(|s| q.max_value(s)).collect()
}

/// `Σ_a π(a|s) q(s, a)` per state.
pub(crate) fn policy_values(policy: &TabularPolicy, q: &QTable) -> Vec<f64> {
    (0..q.num_states())
        .map(|s| policy.row(s).iter().zip(q.row(s)).map(|(p, x)| p * x).sum())
        .collect()
}

fn check_horizon(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidHorizon(n));
    }
    Ok(())
}

fn check_policies(mdp: &TabularMdp, policies: &PolicySet) -> Result<()> {
    if policies.is_empty() {
        return Err(Error::EmptyPolicySet);
    }
    policies.iter().try_for_each(|p| mdp.check_policy_dims(p))
}

/// One-step optimality backup `BQ`.
pub fn bellman_optimality(mdp: &TabularMdp, q: &QTable) -> Result<QTable> {
    mdp.check_q_dims(q)?;
    Ok(backup(mdp, &max_values(q)))
}

/// Policy-evaluation backup `B^π Q`.
pub fn bellman_expectation(mdp: &TabularMdp, policy: &TabularPolicy, q: &QTable) -> Result<QTable> {
    mdp.check_q_dims(q)?;
    mdp.check_policy_dims(policy)?;
    Ok(backup(mdp, &policy_values(policy, q)))
}

/// `max_{π ∈ Π} max_{1 ≤ n ≤ N} (B^π)^{n-1} B Q`, evaluated by applying `B`
/// once and then folding a running elementwise max along each `B^π` chain.
pub fn greedy_multistep_operator(
    mdp: &TabularMdp,
    policies: &PolicySet,
    n: usize,
    q: &QTable,
) -> Result<QTable> {
    check_horizon(n)?;
    mdp.check_q_dims(q)?;
    check_policies(mdp, policies)?;
    let bq = backup(mdp, &max_values(q));
    let mut out = bq.clone();
    if n == 1 {
        return Ok(out);
    }
    for pi in policies {
        let mut cur = bq.clone();
        for _ in 1..n {
            cur = backup(mdp, &policy_values(pi, &cur));
            out.max_assign(&cur);
        }
    }
    Ok(out)
}

/// Variant with the max taken inside the expectation over the first
/// successor: `r + γ Σ_{s'} P(s'|s,a) max_π max_{k<N} W^π_k(s')`, where
/// `W_0 = max_a Q` and `W_k = Σ_a π(a|·) [r + γ P W_{k-1}]`. Agrees with
/// [`greedy_multistep_operator`] on deterministic MDPs and dominates it
/// otherwise.
pub fn greedy_multistep_successor_max(
    mdp: &TabularMdp,
    policies: &PolicySet,
    n: usize,
    q: &QTable,
) -> Result<QTable> {
    check_horizon(n)?;
    mdp.check_q_dims(q)?;
    check_policies(mdp, policies)?;
    let v = max_values(q);
    let mut best = v.clone();
    for pi in policies {
        let mut w = v.clone();
        for _ in 1..n {
            w = policy_values(pi, &backup(mdp, &w));
            for (b, x) in best.iter_mut().zip(&w) {
                if *x > *b {
                    *b = *x;
                }
            }
        }
    }
    Ok(backup(mdp, &best))
}

/// Fixed-depth multi-step backup `max_{π ∈ Π} (B^π)^{N-1} B Q`.
pub fn multi_step_operator(
    mdp: &TabularMdp,
    policies: &PolicySet,
    n: usize,
    q: &QTable,
) -> Result<QTable> {
    check_horizon(n)?;
    mdp.check_q_dims(q)?;
    check_policies(mdp, policies)?;
    let bq = backup(mdp, &max_values(q));
    if n == 1 {
        return Ok(bq);
    }
    let mut out: Option<QTable> = None;
    for pi in policies {
        let mut cur = bq.clone();
        for _ in 1..n {
            cur = backup(mdp, &policy_values(pi, &cur));
        }
        match out.as_mut() {
            Some(o) => o.max_assign(&cur),
            None => out = Some(cur),
        }
    }
    Ok(out.expect("policy set is non-empty"))
}

/// An operator on Q tables, as iterated by the solvers and probed by the
/// property suite.
pub trait QOperator: Sync {
    fn apply(&self, mdp: &TabularMdp, q: &QTable) -> Result<QTable>;

    fn label(&self) -> String;
}

/// The operators this crate knows how to iterate.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    OneStep,
    Expectation(TabularPolicy),
    MultiStep {
        policies: PolicySet,
        n: usize,
    },
    GreedyMultiStep {
        policies: PolicySet,
        n: usize,
        successor_max: bool,
    },
}

impl OperatorSpec {
    pub fn greedy(policies: PolicySet, n: usize) -> Self {
        OperatorSpec::GreedyMultiStep {
            policies,
            n,
            successor_max: false,
        }
    }

    pub fn multi_step(policies: PolicySet, n: usize) -> Self {
        OperatorSpec::MultiStep { policies, n }
    }

    /// Checks `N ≥ 1` and that policies fit `mdp`.
    pub fn check(&self, mdp: &TabularMdp) -> Result<()> {
        match self {
            OperatorSpec::OneStep => Ok(()),
            OperatorSpec::Expectation(pi) => mdp.check_policy_dims(pi),
            OperatorSpec::MultiStep { policies, n }
            | OperatorSpec::GreedyMultiStep { policies, n, .. } => {
                check_horizon(*n)?;
                check_policies(mdp, policies)
            }
        }
    }

    /// Sup-norm contraction factor guaranteed for this operator.
    pub fn rate_bound(&self, gamma: f64) -> f64 {
        match self {
            OperatorSpec::MultiStep { n, .. } => gamma.powi(*n as i32),
            _ => gamma,
        }
    }
}

impl QOperator for OperatorSpec {
    fn apply(&self, mdp: &TabularMdp, q: &QTable) -> Result<QTable> {
        match self {
            OperatorSpec::OneStep => bellman_optimality(mdp, q),
            OperatorSpec::Expectation(pi) => bellman_expectation(mdp, pi, q),
            OperatorSpec::MultiStep { policies, n } => multi_step_operator(mdp, policies, *n, q),
            OperatorSpec::GreedyMultiStep {
                policies,
                n,
                successor_max: false,
            } => greedy_multistep_operator(mdp, policies, *n, q),
            OperatorSpec::GreedyMultiStep {
                policies,
                n,
                successor_max: true,
            } => greedy_multistep_successor_max(mdp, policies, *n, q),
        }
    }

    fn label(&self) -> String {
        match self {
            OperatorSpec::OneStep => "B".into(),
            OperatorSpec::Expectation(_) => "B^pi".into(),
            OperatorSpec::MultiStep { policies, n } => format!("B^{n}[{}]", policies.len()),
            OperatorSpec::GreedyMultiStep {
                policies,
                n,
                successor_max,
            } => {
                let tag = if *successor_max { ",succ" } else { "" };
                format!("G^{n}[{}{tag}]", policies.len())
            }
        }
    }
}

/// `(‖op q − op q'‖∞, ‖q − q'‖∞)`.
pub fn contraction_probe<O: QOperator + ?Sized>(
    mdp: &TabularMdp,
    op: &O,
    q: &QTable,
    q2: &QTable,
) -> Result<(f64, f64)> {
    let a = op.apply(mdp, q)?;
    let b = op.apply(mdp, q2)?;
    Ok((a.max_abs_diff(&b), q.max_abs_diff(q2)))
}

/// Deterministic greedy policy of `q`, ties to the lowest action.
pub fn greedy_policy_from_q(q: &QTable) -> TabularPolicy {
    let actions: Vec<usize> = (0..q.num_states()).map(|s| q.greedy_action(s)).collect();
    TabularPolicy::deterministic(q.num_actions(), &actions).expect("greedy actions are in range")
}
