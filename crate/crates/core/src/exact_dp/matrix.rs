use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::solve::{check_tolerance, SolveResult};
use crate::error::{Error, Result};
use crate::mdp::{PolicySet, TabularMdp, TabularPolicy, VTable};

/// One affine piece `c + M V` of the state-value greedy backup.
struct Piece {
    c: DVector<f64>,
    m: DMatrix<f64>,
}

fn action_matrix(mdp: &TabularMdp, a: usize) -> DMatrix<f64> {
    let n = mdp.num_states();
    let mut t = DMatrix::zeros(n, n);
    for s in 0..n {
        for &(next, p) in mdp.successors(s, a) {
            t[(s, next)] += p;
        }
    }
    t
}

fn policy_matrix(mdp: &TabularMdp, pi: &TabularPolicy) -> (DMatrix<f64>, DVector<f64>) {
    let n = mdp.num_states();
    let mut t = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    for s in 0..n {
        for a in 0..mdp.num_actions() {
            let p = pi.prob(s, a);
            if p == 0.0 {
                continue;
            }
            r[s] += p * mdp.reward(s, a);
            for &(next, q) in mdp.successors(s, a) {
                t[(s, next)] += p * q;
            }
        }
    }
    (t, r)
}

/// Precomputes, for every action `a`, policy `π` and depth `n`,
/// `c = R^a + γ T^a Σ_{i=0}^{n−2} (γT^π)^i R^π` and `M = γ T^a (γT^π)^{n−1}`.
/// Depth 1 does not depend on `π` and is emitted once per action.
fn pieces(mdp: &TabularMdp, policies: &PolicySet, horizon: usize) -> Vec<Piece> {
    let ns = mdp.num_states();
    let g = mdp.gamma();
    let per_policy: Vec<_> = policies.iter().map(|pi| policy_matrix(mdp, pi)).collect();
    let mut out = Vec::new();
    for a in 0..mdp.num_actions() {
        let ra = DVector::from_iterator(ns, (0..ns).map(|s| mdp.reward(s, a)));
        let gta = action_matrix(mdp, a) * g;
        out.push(Piece {
            c: ra.clone(),
            m: gta.clone(),
        });
        for (tp, rp) in &per_policy {
            let gtp = tp * g;
            // w = Σ_{i<n−1} (γT^π)^i R^π, k = (γT^π)^{n−1}
            let mut w = DVector::zeros(ns);
            let mut k = DMatrix::identity(ns, ns);
            for _ in 2..=horizon {
                w += &k * rp;
                k = &gtp * &k;
                out.push(Piece {
                    c: &ra + &gta * &w,
                    m: &gta * &k,
                });
            }
        }
    }
    out
}

/// Greedy multi-step value iteration on state values,
/// `V_{k+1} = max_{a, π, n} [c_{a,π,n} + M_{a,π,n} V_k]`, from `V_0 = 0`.
/// All `c` and `M` are built before the first sweep, so a sweep costs
/// `O(|A| |Π| N |S|²)`.
pub fn greedy_multistep_vi_matrix(
    mdp: &TabularMdp,
    policies: &PolicySet,
    horizon: usize,
    eps: f64,
    max_iter: usize,
) -> Result<SolveResult<VTable>> {
    check_tolerance(eps, max_iter)?;
    if horizon == 0 {
        return Err(Error::InvalidHorizon(0));
    }
    for pi in policies {
        mdp.check_policy_dims(pi)?;
    }
    let pieces = pieces(mdp, policies, horizon);
    let ns = mdp.num_states();
    let mut v = DVector::<f64>::zeros(ns);
    let mut residuals = Vec::new();
    let mut wall_ns = Vec::new();
    let mut converged = false;
    while residuals.len() < max_iter {
        let start = Instant::now();
        let mut next = DVector::from_element(ns, f64::NEG_INFINITY);
        for p in &pieces {
            let cand = &p.c + &p.m * &v;
            next.zip_apply(&cand, |x, y| {
                if y > *x {
                    *x = y
                }
            });
        }
        wall_ns.push(start.elapsed().as_nanos() as u64);
        let r = (&next - &v).amax();
        residuals.push(r);
        v = next;
        if r <= eps {
            converged = true;
            break;
        }
    }
    Ok(SolveResult {
        values: VTable::from_vec(v.as_slice().to_vec()),
        iterations: residuals.len(),
        residuals,
        wall_ns,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_highway_chain, make_random_mdp, RngSeed};
    use crate::exact_dp::{value_iteration, OperatorSpec};
    use crate::mdp::QTable;

    #[test]
    fn horizon_one_is_plain_value_iteration() {
        let env = make_random_mdp(RngSeed(3), 7, 3, 3).unwrap();
        let pis = PolicySet::single(TabularPolicy::uniform(7, 3));
        let m = greedy_multistep_vi_matrix(env.mdp(), &pis, 1, 1e-12, 10_000).unwrap();
        let q = value_iteration(
            env.mdp(),
            &OperatorSpec::OneStep,
            &QTable::zeros(7, 3),
            1e-12,
            10_000,
        )
        .unwrap();
        assert!(m.values.max_abs_diff(&q.values.state_values()) < 1e-9);
    }

    #[test]
    fn chain_converges_fast() {
        let (env, pis) = make_highway_chain(20).unwrap();
        let m = greedy_multistep_vi_matrix(env.mdp(), &pis, 20, 1e-10, 100).unwrap();
        assert!(m.converged);
        assert!(m.iterations <= 3, "{}", m.iterations);
        assert!((m.values.get(0) - 0.9f64.powi(19)).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_horizon() {
        let (env, pis) = make_highway_chain(3).unwrap();
        assert!(matches!(
            greedy_multistep_vi_matrix(env.mdp(), &pis, 0, 1e-6, 10),
            Err(Error::InvalidHorizon(0))
        ));
    }
}
