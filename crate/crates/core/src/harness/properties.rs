use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::envs::{make_choice, make_gridworld, make_highway_chain, make_traceback, RngSeed};
use crate::error::Result;
use crate::exact_dp::{
    bellman_optimality, greedy_multistep_vi_matrix, greedy_policy_from_q, multi_step_operator,
    optimal_q_exact, solve_optimal_q, value_iteration, OperatorSpec, QOperator,
};
use crate::mdp::{PolicySet, QTable, TabularMdp, TabularPolicy, Trajectory};
use crate::model_free::{deterministic_greedy_sweep, greedy_return_backward};

/// Oracle accuracy used for fixed-point checks.
pub const ORACLE_EPS: f64 = 1e-9;
pub const FIXED_POINT_TOL: f64 = 10.0 * ORACLE_EPS;
/// Slack on every exact inequality, for floating-point rounding.
pub const INEQUALITY_TOL: f64 = 1e-12;
pub const MATRIX_TOL: f64 = 1e-9;
pub const CONVERGENCE_TOL: f64 = 1e-6;
pub const SUBOPTIMAL_TOL: f64 = 1e-9;
pub const HORIZONS: [usize; 3] = [1, 2, 5];
pub const EXPONENTIAL_HORIZONS: [usize; 3] = [2, 3, 5];
pub const RANDOM_BATTERY_SIZE: usize = 20;
pub const POLICY_SET_SIZE: usize = 3;

/// One MDP of the property battery, with its oracles and policy sets.
#[derive(Debug, Clone)]
pub struct BatteryEntry {
    pub name: String,
    pub mdp: TabularMdp,
    /// Value-iteration oracle within [`ORACLE_EPS`].
    pub q_star: QTable,
    /// Policy-iteration-polished `Q*`, exact up to rounding.
    pub q_exact: QTable,
    /// Random stochastic behavior policies.
    pub policies: PolicySet,
    /// Random deterministic behavior policies.
    pub det_policies: PolicySet,
}

/// 20 seeded random MDPs (`|S| ≤ 10`, `|A| ≤ 4`) and one instance of every
/// toy environment, all at `γ = 0.9` unless `gamma` overrides it.
pub fn standard_battery(gamma: Option<f64>) -> Result<Vec<BatteryEntry>> {
    let mut mdps = Vec::new();
    for i in 0..RANDOM_BATTERY_SIZE {
        let states = 2 + (i * 7) % 9;
        let actions = 1 + i % 4;
        let branching = if i % 3 == 0 { 1 } else { 1 + (i * 5) % states };
        let mdp =
            crate::envs::random_mdp(RngSeed(100 + i as u64), states, actions, branching, 0.9)?;
        mdps.push((
            format!("random:{}:{states}:{actions}:{branching}", 100 + i),
            mdp,
        ));
    }
    mdps.push(("gridworld:4".into(), make_gridworld(4)?.into_mdp()));
    mdps.push(("traceback:5".into(), make_traceback(5)?.into_mdp()));
    mdps.push(("choice:3".into(), make_choice(3)?.into_mdp()));
    mdps.push(("chain:8".into(), make_highway_chain(8)?.0.into_mdp()));
    mdps.into_iter()
        .enumerate()
        .map(|(i, (name, mdp))| {
            let mdp = match gamma {
                Some(g) => mdp.with_gamma(g)?,
                None => mdp,
            };
            let mut rng = RngSeed(7_000 + i as u64).rng();
            let (ns, na) = (mdp.num_states(), mdp.num_actions());
            let policies = PolicySet::new(
                (0..POLICY_SET_SIZE)
                    .map(|_| TabularPolicy::random_stochastic(ns, na, &mut rng))
                    .collect(),
            )?;
            let det_policies = PolicySet::new(
                (0..POLICY_SET_SIZE)
                    .map(|_| TabularPolicy::random_deterministic(ns, na, &mut rng))
                    .collect(),
            )?;
            Ok(BatteryEntry {
                name,
                q_star: solve_optimal_q(&mdp, ORACLE_EPS)?,
                q_exact: optimal_q_exact(&mdp)?,
                mdp,
                policies,
                det_policies,
            })
        })
        .collect()
}

/// Builds the greedy operator under test from `(Π̂, N)`.
pub type GreedyFactory = dyn Fn(&PolicySet, usize) -> Box<dyn QOperator> + Send + Sync;

#[derive(Clone)]
pub struct SuiteOptions {
    /// Random `(q, q')` pairs per MDP and horizon.
    pub pairs: usize,
    pub gamma: Option<f64>,
    pub seed: u64,
    /// Replaces the library's greedy operator, to check that the suite
    /// notices a broken one.
    pub greedy: Option<Arc<GreedyFactory>>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            pairs: 1000,
            gamma: None,
            seed: 0,
            greedy: None,
        }
    }
}

impl SuiteOptions {
    fn greedy_op(&self, policies: &PolicySet, n: usize) -> Box<dyn QOperator> {
        match &self.greedy {
            Some(f) => f(policies, n),
            None => Box::new(OperatorSpec::greedy(policies.clone(), n)),
        }
    }
}

/// Outcome of one property over the whole battery.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyLine {
    pub name: &'static str,
    pub checks: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub elapsed_ms: u128,
    /// Where the worst violation happened.
    pub worst: String,
}

impl PropertyLine {
    pub fn passed(&self) -> bool {
        self.checks > 0 && self.max_violation <= self.tolerance
    }
}

impl fmt::Display for PropertyLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<22} max violation {:.3e} (tol {:.0e}, {} checks, {} ms){}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_violation,
            self.tolerance,
            self.checks,
            self.elapsed_ms,
            if self.worst.is_empty() {
                String::new()
            } else {
                format!(" worst at {}", self.worst)
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub lines: Vec<PropertyLine>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(PropertyLine::passed)
    }

    pub fn line(&self, name: &str) -> Option<&PropertyLine> {
        self.lines.iter().find(|l| l.name == name)
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Largest violation seen by one property on one battery entry.
#[derive(Default, Clone, Copy)]
struct Tally {
    checks: usize,
    worst: f64,
}

impl Tally {
    fn record(&mut self, violation: f64) {
        self.checks += 1;
        // NaN counts as an infinite violation
        let v = if violation.is_nan() {
            f64::INFINITY
        } else {
            violation
        };
        self.worst = self.worst.max(v);
    }
}

type Check = fn(&BatteryEntry, &SuiteOptions) -> Result<Tally>;

const PROPERTIES: [(&str, f64, Check); 11] = [
    ("fixed-point", FIXED_POINT_TOL, fixed_point),
    ("contraction", INEQUALITY_TOL, contraction),
    ("faster-contraction", INEQUALITY_TOL, faster_contraction),
    ("exponential-rate", INEQUALITY_TOL, exponential_rate),
    ("multi-step-rate", INEQUALITY_TOL, multi_step_rate),
    (
        "multi-step-below-opt",
        SUBOPTIMAL_TOL,
        multi_step_below_optimal,
    ),
    ("monotonicity", INEQUALITY_TOL, monotonicity),
    ("convergence", CONVERGENCE_TOL, convergence),
    ("recurrence-identity", INEQUALITY_TOL, recurrence_identity),
    ("sample-operator", INEQUALITY_TOL, sample_operator),
    ("matrix-form", MATRIX_TOL, matrix_form),
];

pub fn property_names() -> Vec<&'static str> {
    PROPERTIES.iter().map(|p| p.0).collect()
}

/// Runs every operator property over the standard battery.
pub fn property_suite(opts: &SuiteOptions) -> Result<PropertyReport> {
    let battery = standard_battery(opts.gamma)?;
    run_properties(&battery, opts, &property_names())
}

/// Runs the named properties over `battery`, entries in parallel.
pub fn run_properties(
    battery: &[BatteryEntry],
    opts: &SuiteOptions,
    names: &[&str],
) -> Result<PropertyReport> {
    let mut lines = Vec::new();
    for &(name, tolerance, check) in PROPERTIES.iter().filter(|p| names.contains(&p.0)) {
        let start = Instant::now();
        let tallies: Vec<Tally> = battery
            .par_iter()
            .map(|e| check(e, opts))
            .collect::<Result<_>>()?;
        let mut line = PropertyLine {
            name,
            checks: 0,
            max_violation: 0.0,
            tolerance,
            elapsed_ms: 0,
            worst: String::new(),
        };
        for (e, t) in battery.iter().zip(&tallies) {
            line.checks += t.checks;
            if t.worst > line.max_violation {
                line.max_violation = t.worst;
                line.worst = e.name.clone();
            }
        }
        line.elapsed_ms = start.elapsed().as_millis();
        lines.push(line);
    }
    Ok(PropertyReport { lines })
}

fn entry_rng(e: &BatteryEntry, opts: &SuiteOptions, salt: u64) -> rand_chacha::ChaCha8Rng {
    let h = e
        .name
        .bytes()
        .fold(salt, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    RngSeed(opts.seed ^ h).rng()
}

fn value_scale(e: &BatteryEntry) -> f64 {
    2.0 * e
        .q_exact
        .as_slice()
        .iter()
        .fold(1.0f64, |m, v| m.max(v.abs()))
}

fn random_q<R: Rng>(e: &BatteryEntry, rng: &mut R) -> QTable {
    let r = value_scale(e);
    QTable::from_fn(e.mdp.num_states(), e.mdp.num_actions(), |_, _| {
        rng.random_range(-r..=r)
    })
}

/// Second point of a pair: independent, or a small perturbation of `q`.
fn partner<R: Rng>(e: &BatteryEntry, q: &QTable, rng: &mut R) -> QTable {
    if rng.random::<bool>() {
        random_q(e, rng)
    } else {
        let r = 0.01 * value_scale(e);
        q.map(|x| x + rng.random_range(-r..=r))
    }
}

fn fixed_point(e: &BatteryEntry, opts: &SuiteOptions) -> Result<Tally> {
    let mut t = Tally::default();
    for n in HORIZONS {
        let g = opts.greedy_op(&e.policies, n);
        t.record(g.apply(&e.mdp, &e.q_star)?.max_abs_diff(&e.q_star));
    }
    Ok(t)
}

/// `‖Gq − Gq'‖ ≤ ‖Bq − Bq'‖ ≤ γ ‖q − q'‖`.
fn contraction(e: &BatteryEntry, opts: &SuiteOptions) -> Result<Tally> {
    let mut t = Tally::default();
    let mut rng = entry_rng(e, opts, 1);
    for n in HORIZONS {
        let g = opts.greedy_op(&e.policies, n);
        for _ in 0..opts.pairs {
            let q = random_q(e, &mut rng);
            let q2 = partner(e, &q, &mut rng);
            let dg = g.apply(&e.mdp, &q)?.max_abs_diff(&g.apply(&e.mdp, &q2)?);
            let db =
                bellman_optimality(&e.mdp, &q)?.max_abs_diff(&bellman_optimality(&e.mdp, &q2)?);
            let dq = q.max_abs_diff(&q2);
            t.record((dg - db).max(db - e.mdp.gamma() * dq));
        }
    }
    Ok(t)
}

/// `‖Gq − Q*‖ ≤ ‖Bq − Q*‖`.
fn faster_contraction(e: &BatteryEntry, opts: &SuiteOptions) -> Result<Tally> {
    let mut t = Tally::default();
    let mut rng = entry_rng(e, opts, 2);
    for n in HORIZONS {
        let g = opts.greedy_op(&e.policies, n);
        for _ in 0..opts.pairs {
            let q = random_q(e, &mut rng);
            let dg = g.apply(&e.mdp, &q)?.max_abs_diff(&e.q_exact);
            let db = bellman_optimality(&e.mdp, &q)?.max_abs_diff(&e.q_exact);
            t.record(dg - db);
        }
    }
    Ok(t)
}

/// With `π* ∈ Π̂` and `q = Q* − 1`: `‖Gq − Q*‖ ≤ γ^N ‖q − Q*‖`.
fn exponential_rate(e: &BatteryEntry, opts: &SuiteOptions) -> Result<Tally> {
    let mut t = Tally::default();
    let mut set = e.policies.clone();
    set.push(greedy_policy_from_q(&e.q_exact))?;
    let q = e.q_exact.map(|x| x - 1.0);
    let dq = q.max_abs_diff(&e.q_exact);
    for n in EXPONENTIAL_HORIZONS {
        let g = opts.greedy_op(&set, n);
        let d = g.apply(&e.mdp, &q)?.max_abs_diff(&e.q_exact);
        t.record(d - e.mdp.gamma().powi(n as i32) * dq);
    }
    Ok(t)
}

/// `‖B^N q − B^N q'‖ ≤ γ^N ‖q − q'‖`.
fn multi_step_rate(e: &BatteryEntry, opts: &SuiteOptions) -> Result<Tally> {
    let mut t = Tally::default();
    let mut rng = entry_rng(e, opts, 3);
    for n in HORIZONS {
        let bound = e.mdp.gamma().powi(n as i32);
        for _ in 0..opts.pairs / 10 {
            let q = random_q(e, &mut rng);
            let q2 = partner(e, &q, &mut rng);
            let d = multi_step_operator(&e.mdp, &e.policies, n, &q)?
                .max_abs_diff(&multi_step_operator(&e.mdp, &e.policies, n, &q2)?);
            t.record(d - bound * q.max_abs_diff(&q2));
        }
    }
    Ok(t)
}

/// The fixed point of `B^N` over random policies stays below `Q*`.
fn multi_step_below_optimal(e: &BatteryEntry, _: &SuiteOptions) -> Result<Tally> {
    let mut t = Tally::default();
    let q0 = QTable::zeros(e.mdp.num_states(), e.mdp.num_actions());
    for n in HORIZONS {
        let op = OperatorSpec::multi_step(e.policies.clone(), n);
        let run = value_iteration(&e.mdp, &op, &q0, 1e-12, 100_000)?;
        t.record(if run.converged {
            run.values.max_excess_over(&e.q_exact)
        } else {
            f64::INFINITY
        });
    }
    Ok(t)
}

/// `q ≤ q'` implies `Gq ≤ Gq'`.
fn monotonicity(e: &BatteryEntry, opts: &SuiteOptions) -> Result<Tally> {
    let mut t = Tally::default();
    let mut rng = entry_rng(e, opts, 4);
    let r = value_scale(e);
    for n in HORIZONS {
        let g = opts.greedy_op(&e.policies, n);
        for _ in 0..opts.pairs / 10 {
            let q = random_q(e, &mut rng);
            let q2 = q.map(|x| x + rng.random_range(0.0..=r));
            t.record(g.apply(&e.mdp, &q)?.max_excess_over(&g.apply(&e.mdp, &q2)?));
        }
    }
    Ok(t)
}

/// Greedy value iteration from a random start reaches `Q*`.
fn convergence(e: &BatteryEntry, opts: &SuiteOptions) -> Result<Tally> {
    let mut t = Tally::default();
    let mut rng = entry_rng(e, opts, 5);
    for n in HORIZONS {
        let g = opts.greedy_op(&e.policies, n);
        let run = value_iteration(&e.mdp, g.as_ref(), &random_q(e, &mut rng), 1e-11, 100_000)?;
        t.record(if run.converged {
            run.values.max_abs_diff(&e.q_exact)
        } else {
            f64::INFINITY
        });
    }
    Ok(t)
}

/// Random trajectory through the battery MDP's index ranges. Rewards and
/// transitions are arbitrary; the identity does not need real dynamics.
fn random_trajectory<R: Rng>(e: &BatteryEntry, rng: &mut R) -> Result<Trajectory> {
    let (ns, na) = (e.mdp.num_states(), e.mdp.num_actions());
    let len = rng.random_range(1..=50);
    let triples: Vec<(usize, usize, f64)> = (0..len)
        .map(|_| {
            (
                rng.random_range(0..ns),
                rng.random_range(0..na),
                rng.random_range(-1.0..=1.0),
            )
        })
        .collect();
    Trajectory::from_triples(&triples, rng.random_range(0..ns), rng.random::<bool>())
}

/// Backward greedy returns equal the per-step maximum over every depth.
fn recurrence_identity(e: &BatteryEntry, opts: &SuiteOptions) -> Result<Tally> {
    let mut t = Tally::default();
    let mut rng = entry_rng(e, opts, 6);
    let gamma = e.mdp.gamma();
    let per_entry = opts.pairs.div_ceil(RANDOM_BATTERY_SIZE).max(1);
    for _ in 0..per_entry {
        let traj = random_trajectory(e, &mut rng)?;
        let q = random_q(e, &mut rng);
        let got = greedy_return_backward(&traj, &q, gamma)?;
        let len = traj.len();
        for (s, &value) in got.values.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for n in 1..=len - s {
                let rewards: f64 = (0..n)
                    .map(|i| gamma.powi(i as i32) * traj.reward(s + i))
                    .sum();
                let end = if s + n == len && traj.terminated {
                    0.0
                } else {
                    q.max_value(traj.state(s + n))
                };
                best = best.max(rewards + gamma.powi(n as i32) * end);
            }
            t.record((value - best).abs());
        }
    }
    Ok(t)
}

/// On deterministic MDPs with deterministic policies, one sample-based
/// sweep over exhaustive rollouts equals `G`.
fn sample_operator(e: &BatteryEntry, opts: &SuiteOptions) -> Result<Tally> {
    let mut t = Tally::default();
    if !e.mdp.is_deterministic() {
        return Ok(t);
    }
    let mut rng = entry_rng(e, opts, 7);
    for n in HORIZONS {
        let g = opts.greedy_op(&e.det_policies, n);
        for _ in 0..10 {
            let q = random_q(e, &mut rng);
            let sweep = deterministic_greedy_sweep(&e.mdp, &e.det_policies, n, &q)?;
            t.record(sweep.max_abs_diff(&g.apply(&e.mdp, &q)?));
        }
    }
    Ok(t)
}

/// The state-value matrix iteration and the Q-form iteration agree.
fn matrix_form(e: &BatteryEntry, opts: &SuiteOptions) -> Result<Tally> {
    let mut t = Tally::default();
    let q0 = QTable::zeros(e.mdp.num_states(), e.mdp.num_actions());
    for n in HORIZONS {
        let g = opts.greedy_op(&e.policies, n);
        let q = value_iteration(&e.mdp, g.as_ref(), &q0, 1e-13, 100_000)?;
        let v = greedy_multistep_vi_matrix(&e.mdp, &e.policies, n, 1e-13, 100_000)?;
        let ok = q.converged && v.converged;
        t.record(if ok {
            q.values.state_values().max_abs_diff(&v.values)
        } else {
            f64::INFINITY
        });
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_shape() {
        let b = standard_battery(None).unwrap();
        assert_eq!(b.len(), RANDOM_BATTERY_SIZE + 4);
        for e in &b[..RANDOM_BATTERY_SIZE] {
            assert!(e.mdp.num_states() <= 10 && e.mdp.num_actions() <= 4);
            assert_eq!(e.mdp.gamma(), 0.9);
        }
        assert!(b.iter().filter(|e| e.mdp.is_deterministic()).count() >= 8);
        assert!(b
            .iter()
            .all(|e| e.q_star.max_abs_diff(&e.q_exact) <= ORACLE_EPS));
        let b99 = standard_battery(Some(0.99)).unwrap();
        assert!(b99.iter().all(|e| e.mdp.gamma() == 0.99));
    }

    #[test]
    fn small_suite_passes() {
        let opts = SuiteOptions {
            pairs: 20,
            ..Default::default()
        };
        let r = property_suite(&opts).unwrap();
        assert_eq!(r.lines.len(), PROPERTIES.len());
        assert!(r.passed(), "{r}");
        assert!(r.line("contraction").unwrap().checks >= 20 * 3 * 24);
    }

    #[test]
    fn empty_line_fails() {
        let l = PropertyLine {
            name: "x",
            checks: 0,
            max_violation: 0.0,
            tolerance: 1.0,
            elapsed_ms: 0,
            worst: String::new(),
        };
        assert!(!l.passed());
        assert!(l.to_string().starts_with("FAIL"));
    }
}
