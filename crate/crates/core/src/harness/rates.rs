use std::fmt::Write as _;

use super::stats::log_slope;
use crate::error::Result;
use crate::exact_dp::{value_iteration, OperatorSpec, QOperator};
use crate::mdp::{QTable, TabularMdp};

/// Empirical contraction of one operator.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub label: String,
    pub iterations: usize,
    pub converged: bool,
    pub residuals: Vec<f64>,
    /// `‖Q_k − Q*‖∞` per iterate, when `Q*` was supplied.
    pub errors: Vec<f64>,
    /// Least-squares slope of `ln residual` per iteration; `None` with
    /// fewer than three usable residuals.
    pub slope: Option<f64>,
    /// `ln` of the guaranteed contraction factor.
    pub bound: f64,
}

impl RateRow {
    /// Empirical per-iteration factor `exp(slope)`.
    pub fn rate(&self) -> Option<f64> {
        self.slope.map(f64::exp)
    }
}

/// Iterates every operator in `specs` from `q0` to `eps` and fits the
/// log-residual slope. Residuals at or below the `f64` resolution of the
/// value scale are left out of the fit.
pub fn rate_report(
    mdp: &TabularMdp,
    specs: &[OperatorSpec],
    q0: &QTable,
    eps: f64,
    q_star: Option<&QTable>,
) -> Result<Vec<RateRow>> {
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.check(mdp)?;
        let run = value_iteration(mdp, spec, q0, eps, crate::exact_dp::DEFAULT_MAX_ITER)?;
        let scale = run
            .values
            .as_slice()
            .iter()
            .fold(1.0f64, |m, v| m.max(v.abs()));
        let floor = 64.0 * f64::EPSILON * scale;
        let errors = match q_star {
            Some(qs) => {
                let mut q = q0.clone();
                let mut errs = Vec::with_capacity(run.iterations);
                for _ in 0..run.iterations {
                    q = spec.apply(mdp, &q)?;
                    errs.push(q.max_abs_diff(qs));
                }
                errs
            }
            None => Vec::new(),
        };
        out.push(RateRow {
            label: spec.label(),
            iterations: run.iterations,
            converged: run.converged,
            slope: log_slope(&run.residuals, floor),
            residuals: run.residuals,
            errors,
            bound: spec.rate_bound(mdp.gamma()).ln(),
        });
    }
    Ok(out)
}

pub fn render_rates(rows: &[RateRow]) -> String {
    let mut out = format!(
        "{:<14} {:>6} {:>12} {:>12}\n",
        "operator", "iters", "slope", "log bound"
    );
    for r in rows {
        let slope = r
            .slope
            .map_or_else(|| "-".to_string(), |s| format!("{s:.5}"));
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>12} {:>12.5}",
            r.label, r.iterations, slope, r.bound
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_highway_chain, make_random_mdp, RngSeed};
    use crate::exact_dp::{greedy_policy_from_q, optimal_q_exact};
    use crate::mdp::PolicySet;

    #[test]
    fn one_step_slope_matches_gamma() {
        let mdp = make_random_mdp(RngSeed(4), 30, 3, 4).unwrap().into_mdp();
        let q0 = QTable::zeros(30, 3);
        let rows = rate_report(&mdp, &[OperatorSpec::OneStep], &q0, 1e-10, None).unwrap();
        let s = rows[0].slope.unwrap();
        assert!((s / mdp.gamma().ln() - 1.0).abs() <= 0.2, "slope {s}");
        assert!(rows[0].errors.is_empty());
    }

    #[test]
    fn short_runs_have_no_slope() {
        let (env, pis) = make_highway_chain(5).unwrap();
        let mdp = env.mdp();
        let q_star = optimal_q_exact(mdp).unwrap();
        let good = PolicySet::single(greedy_policy_from_q(&q_star));
        let q0 = QTable::zeros(6, 2);
        let rows = rate_report(
            mdp,
            &[OperatorSpec::greedy(good, 5), OperatorSpec::greedy(pis, 5)],
            &q0,
            1e-12,
            Some(&q_star),
        )
        .unwrap();
        assert!(rows[0].iterations <= 3 && rows[0].slope.is_none());
        assert!(rows[0].errors.last().unwrap() < &1e-12);
        assert!(render_rates(&rows).contains(" - "));
    }
}
