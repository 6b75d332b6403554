use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::operators::{backup, greedy_policy_from_q, max_values, QOperator};
use crate::error::{Error, Result};
use crate::mdp::{QTable, TabularMdp, TabularPolicy};

pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Outcome of an iterative solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult<T> {
    pub values: T,
    /// Number of operator applications.
    pub iterations: usize,
    /// `‖X_k − X_{k−1}‖∞` after each application.
    pub residuals: Vec<f64>,
    /// Wall time of each application in nanoseconds.
    pub wall_ns: Vec<u64>,
    pub converged: bool,
}

impl<T> SolveResult<T> {
    pub fn final_residual(&self) -> Option<f64> {
        self.residuals.last().copied()
    }

    pub fn total_wall_ns(&self) -> u64 {
        self.wall_ns.iter().sum()
    }
}

pub(crate) fn check_tolerance(eps: f64, max_iter: usize) -> Result<()> {
    if eps.is_nan() || eps <= 0.0 || max_iter == 0 {
        return Err(Error::InvalidArgument(format!(
            "need eps > 0 and max_iter >= 1, got {eps} and {max_iter}"
        )));
    }
    Ok(())
}

/// Iterates `Q_{k+1} = op(Q_k)` until `‖Q_{k+1} − Q_k‖∞ ≤ eps` or
/// `max_iter` applications. A non-converged result is returned with
/// `converged = false` rather than as an error.
pub fn value_iteration<O: QOperator + ?Sized>(
    mdp: &TabularMdp,
    op: &O,
    q0: &QTable,
    eps: f64,
    max_iter: usize,
) -> Result<SolveResult<QTable>> {
    check_tolerance(eps, max_iter)?;
    mdp.check_q_dims(q0)?;
    let mut q = q0.clone();
    let mut residuals = Vec::new();
    let mut wall_ns = Vec::new();
    let mut converged = false;
    while residuals.len() < max_iter {
        let start = Instant::now();
        let next = op.apply(mdp, &q)?;
        wall_ns.push(start.elapsed().as_nanos() as u64);
        let r = next.max_abs_diff(&q);
        residuals.push(r);
        q = next;
        if r <= eps {
            converged = true;
            break;
        }
    }
    Ok(SolveResult {
        values: q,
        iterations: residuals.len(),
        residuals,
        wall_ns,
        converged,
    })
}

/// Residual below which further sweeps cannot make progress in `f64`.
fn rounding_floor(mdp: &TabularMdp) -> f64 {
    let scale = mdp.min_reward().abs().max(mdp.max_reward().abs()) / (1.0 - mdp.gamma());
    16.0 * f64::EPSILON * scale.max(1.0)
}

/// Optimal action values within `eps` of `Q*` in sup norm.
///
/// Runs one-step value iteration from zero until the residual drops to
/// `eps (1−γ) / (2γ)`. When that threshold is below what `f64` can
/// resolve at the value scale, stops at the rounding floor instead.
pub fn solve_optimal_q(mdp: &TabularMdp, eps: f64) -> Result<QTable> {
    check_tolerance(eps, 1)?;
    let g = mdp.gamma();
    let threshold = (eps * (1.0 - g) / (2.0 * g)).max(rounding_floor(mdp));
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    for _ in 0..DEFAULT_MAX_ITER {
        let next = backup(mdp, &max_values(&q));
        let r = next.max_abs_diff(&q);
        q = next;
        if r <= threshold {
            return Ok(q);
        }
    }
    Err(Error::InvalidArgument(format!(
        "value iteration did not reach {threshold}"
    )))
}

/// Exact `Q^π` from the linear system `(I − γ P^π) V = R^π`, then
/// `Q = r + γ P V`.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<QTable> {
    mdp.check_policy_dims(policy)?;
    let (ns, na, g) = (mdp.num_states(), mdp.num_actions(), mdp.gamma());
    let mut m = DMatrix::<f64>::identity(ns, ns);
    let mut rhs = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let p = policy.prob(s, a);
            if p == 0.0 {
                continue;
            }
            rhs[s] += p * mdp.reward(s, a);
            for &(n, t) in mdp.successors(s, a) {
                m[(s, n)] -= g * p * t;
            }
        }
    }
    let v = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidMdp("singular policy-evaluation system".into()))?;
    Ok(backup(mdp, v.as_slice()))
}

/// `Q*` to near machine precision: value iteration followed by exact
/// evaluation of the greedy policy, repeated until the greedy policy is
/// stable.
pub fn optimal_q_exact(mdp: &TabularMdp) -> Result<QTable> {
    let mut q = solve_optimal_q(mdp, 1e-10)?;
    let mut policy = greedy_policy_from_q(&q);
    for _ in 0..mdp.num_states() + 1 {
        q = evaluate_policy(mdp, &policy)?;
        let next = greedy_policy_from_q(&q);
        // keep the current action on numerical ties so the loop terminates
        let stable = (0..mdp.num_states()).all(|s| {
            let cur = policy.action(s).expect("deterministic");
            q.get(s, next.action(s).expect("deterministic")) <= q.get(s, cur) + 1e-13
        });
        if stable {
            return Ok(q);
        }
        policy = next;
    }
    Ok(q)
}
