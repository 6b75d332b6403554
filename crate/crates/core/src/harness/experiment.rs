use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::config::{parse_policy_set, Assertion, ExperimentConfig, ExperimentKind};
use super::stats::Summary;
use crate::envs::{sample_episode, Env, RngSeed};
use crate::error::{Error, Result};
use crate::exact_dp::value_iteration;
use crate::mdp::{QTable, TabularPolicy, Trajectory};
use crate::model_free::{offline_train, run_learner, LearnerConfig};

/// One trial of one arm. `metric` is episodes-to-solve, passes-to-solve
/// or iterations, with `+∞` when the run never got there.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub arm: String,
    pub trial: usize,
    pub seed: u64,
    pub metric: f64,
    pub final_return: Option<f64>,
    pub mean_chosen_step: Option<f64>,
    pub wall_ns: u64,
    /// Set when the trial failed; the other fields are then placeholders.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub summary: Summary,
    /// Trials with a finite metric.
    pub finished: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssertionOutcome {
    pub assertion: Assertion,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub id: String,
    /// Ordered by trial, then by arm as configured.
    pub rows: Vec<TrialRow>,
    pub summaries: Vec<ArmSummary>,
    pub assertions: Vec<AssertionOutcome>,
}

impl ExperimentReport {
    pub fn summary(&self, arm: &str) -> Option<&ArmSummary> {
        self.summaries.iter().find(|s| s.arm == arm)
    }

    pub fn metrics(&self, arm: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.arm == arm && r.error.is_none())
            .map(|r| r.metric)
            .collect()
    }

    /// Every assertion held and no trial failed.
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed) && self.rows.iter().all(|r| r.error.is_none())
    }

    /// Per-trial CSV. Wall time is left out so equal configs give equal bytes.
    pub fn trials_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "experiment",
            "arm",
            "trial",
            "seed",
            "metric",
            "final_return",
            "mean_chosen_step",
            "error",
        ])?;
        for r in &self.rows {
            w.write_record([
                self.id.clone(),
                r.arm.clone(),
                r.trial.to_string(),
                r.seed.to_string(),
                r.metric.to_string(),
                opt(r.final_return),
                opt(r.mean_chosen_step),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        finish(w)
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "experiment",
            "arm",
            "trials",
            "finished",
            "failed",
            "median",
            "mean",
            "q1",
            "q3",
            "iqr",
        ])?;
        for s in &self.summaries {
            let m = &s.summary;
            w.write_record([
                self.id.clone(),
                s.arm.clone(),
                m.count.to_string(),
                s.finished.to_string(),
                s.failed.to_string(),
                m.median.to_string(),
                m.mean.to_string(),
                m.q1.to_string(),
                m.q3.to_string(),
                m.iqr().to_string(),
            ])?;
        }
        finish(w)
    }

    pub fn timing_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["experiment", "arm", "trial", "wall_ns"])?;
        for r in &self.rows {
            w.write_record([
                self.id.clone(),
                r.arm.clone(),
                r.trial.to_string(),
                r.wall_ns.to_string(),
            ])?;
        }
        finish(w)
    }

    /// Writes `trials.csv`, `summary.csv` and `timing.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trials.csv"), self.trials_csv()?)?;
        fs::write(dir.join("summary.csv"), self.summary_csv()?)?;
        fs::write(dir.join("timing.csv"), self.timing_csv()?)?;
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.summaries {
            let m = &s.summary;
            let _ = writeln!(
                out,
                "{:<10} median {:>10} mean {:>10.2} iqr {:>8.2} finished {}/{}",
                s.arm,
                m.median,
                m.mean,
                m.iqr(),
                s.finished,
                m.count
            );
        }
        for a in &self.assertions {
            let tag = if a.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{tag} {}: {}", a.assertion, a.detail);
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// Aggregates per-arm metrics out of raw trial rows.
pub fn summarize(arms: &[String], rows: &[TrialRow]) -> Vec<ArmSummary> {
    arms.iter()
        .filter_map(|arm| {
            let mine: Vec<&TrialRow> = rows.iter().filter(|r| &r.arm == arm).collect();
            let ok: Vec<f64> = mine
                .iter()
                .filter(|r| r.error.is_none())
                .map(|r| r.metric)
                .collect();
            Summary::of(&ok).map(|summary| ArmSummary {
                arm: arm.clone(),
                summary,
                finished: ok.iter().filter(|m| m.is_finite()).count(),
                failed: mine.len() - ok.len(),
            })
        })
        .collect()
}

fn check(a: &Assertion, summaries: &[ArmSummary]) -> AssertionOutcome {
    let med = |arm: &str| {
        summaries
            .iter()
            .find(|s| s.arm == arm)
            .map(|s| s.summary.median)
    };
    let (passed, detail) = match a {
        Assertion::MedianRatio { fast, slow, factor } => match (med(fast), med(slow)) {
            (Some(f), Some(s)) => (
                s >= factor * f,
                format!("median {fast} = {f}, median {slow} = {s}"),
            ),
            _ => (false, "no successful trials".into()),
        },
        Assertion::Median { arm, ge, bound } => match med(arm) {
            Some(m) => (
                if *ge { m >= *bound } else { m <= *bound },
                format!("median {arm} = {m}"),
            ),
            None => (false, "no successful trials".into()),
        },
    };
    AssertionOutcome {
        assertion: a.clone(),
        passed,
        detail,
    }
}

/// Uniform-policy dataset for offline trial seed `seed`.
pub fn uniform_dataset(env: &Env, episodes: usize, seed: RngSeed) -> Vec<Trajectory> {
    let mut env = env.clone();
    let pi = TabularPolicy::uniform(env.num_states(), env.num_actions());
    let mut rng = seed.rng();
    (0..episodes)
        .map(|_| sample_episode(&mut env, &pi, &mut rng))
        .collect()
}

// Datasets draw from a stream disjoint from the learner's own.
const DATASET_STREAM: u64 = 1 << 40;

fn learner_row(
    arm: &str,
    trial: usize,
    seed: u64,
    out: Result<(QTable, crate::model_free::RunMetrics)>,
) -> TrialRow {
    match out {
        Ok((_, m)) => {
            let mean = (!m.chosen_steps.is_empty()).then(|| {
                m.chosen_steps.iter().map(|&n| n as f64).sum::<f64>() / m.chosen_steps.len() as f64
            });
            TrialRow {
                arm: arm.to_string(),
                trial,
                seed,
                metric: m.solved_at.map_or(f64::INFINITY, |k| k as f64),
                final_return: m.final_return(),
                mean_chosen_step: mean,
                wall_ns: m.wall_ns,
                error: None,
            }
        }
        Err(e) => failed_row(arm, trial, seed, e),
    }
}

fn failed_row(arm: &str, trial: usize, seed: u64, e: Error) -> TrialRow {
    log::warn!("trial {trial} of `{arm}` failed: {e}");
    TrialRow {
        arm: arm.to_string(),
        trial,
        seed,
        metric: f64::NAN,
        final_return: None,
        mean_chosen_step: None,
        wall_ns: 0,
        error: Some(e.to_string()),
    }
}

fn run_trial(cfg: &ExperimentConfig, env: &Env, trial: usize) -> Vec<TrialRow> {
    let seed = cfg.seed_base.wrapping_add(trial as u64);
    let with_seed = |l: &LearnerConfig| LearnerConfig {
        seed: RngSeed(seed),
        ..l.clone()
    };
    match &cfg.kind {
        ExperimentKind::Online => cfg
            .arms
            .iter()
            .map(|a| {
                learner_row(
                    &a.name,
                    trial,
                    seed,
                    run_learner(env, &with_seed(&a.learner)),
                )
            })
            .collect(),
        ExperimentKind::Offline {
            dataset_episodes,
            passes,
        } => {
            let data =
                uniform_dataset(env, *dataset_episodes, RngSeed(seed).offset(DATASET_STREAM));
            cfg.arms
                .iter()
                .map(|a| {
                    learner_row(
                        &a.name,
                        trial,
                        seed,
                        offline_train(env, &data, &with_seed(&a.learner), *passes),
                    )
                })
                .collect()
        }
        ExperimentKind::Operators {
            kinds,
            policies,
            n,
            eps,
            max_iter,
        } => {
            let mdp = env.mdp();
            let set = match parse_policy_set(policies, mdp) {
                Ok(s) => s,
                Err(e) => {
                    return kinds
                        .iter()
                        .map(|k| failed_row(k.name(), trial, seed, e.clone()))
                        .collect()
                }
            };
            let q0 = QTable::zeros(mdp.num_states(), mdp.num_actions());
            kinds
                .iter()
                .map(|k| {
                    let op = k.spec(&set, *n);
                    match value_iteration(mdp, &op, &q0, *eps, *max_iter) {
                        Ok(r) => TrialRow {
                            arm: k.name().to_string(),
                            trial,
                            seed,
                            metric: if r.converged {
                                r.iterations as f64
                            } else {
                                f64::INFINITY
                            },
                            final_return: None,
                            mean_chosen_step: None,
                            wall_ns: r.total_wall_ns(),
                            error: None,
                        },
                        Err(e) => failed_row(k.name(), trial, seed, e),
                    }
                })
                .collect()
        }
    }
}

/// Runs every trial (trial `i` uses seed `seed_base + i`) on the rayon
/// pool, merges rows in trial order, aggregates, checks assertions and
/// writes the CSV files when an output directory is set. Failed trials
/// are recorded as rows with an error and do not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let gm_arm = cfg
        .arms
        .iter()
        .any(|a| a.learner.algorithm == crate::model_free::Algorithm::GreedyMultiStep);
    if gm_arm && !env.mdp().is_deterministic() {
        log::warn!(
            "experiment `{}` runs gm on stochastic {}; its targets are biased upward",
            cfg.id,
            cfg.env
        );
    }
    let rows: Vec<TrialRow> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, &env, t))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let summaries = summarize(&cfg.arm_names(), &rows);
    let assertions = cfg
        .assertions
        .iter()
        .map(|a| check(a, &summaries))
        .collect();
    let report = ExperimentReport {
        id: cfg.id.clone(),
        rows,
        summaries,
        assertions,
    };
    if let Some(dir) = &cfg.output_dir {
        report.write_to(dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvSpec;
    use crate::harness::config::OperatorKind;
    use crate::model_free::Algorithm;

    fn online(trials: usize) -> ExperimentConfig {
        let gm = LearnerConfig {
            alpha: 1.0,
            episodes: 60,
            eval_every: 1,
            stop_when_solved: true,
            ..LearnerConfig::new(Algorithm::GreedyMultiStep)
        };
        let q = LearnerConfig {
            episodes: 60,
            eval_every: 1,
            ..LearnerConfig::new(Algorithm::QLearning)
        };
        ExperimentConfig {
            trials,
            ..ExperimentConfig::new("t", EnvSpec::TraceBack(3), ExperimentKind::Online)
        }
        .with_arm("gm", gm)
        .with_arm("q", q)
    }

    #[test]
    fn rows_are_in_trial_then_arm_order() {
        let r = run_experiment(&online(5)).unwrap();
        let order: Vec<(usize, &str)> = r.rows.iter().map(|x| (x.trial, x.arm.as_str())).collect();
        assert_eq!(order[..4], [(0, "gm"), (0, "q"), (1, "gm"), (1, "q")]);
        assert_eq!(r.rows.len(), 10);
        assert!(r.rows.iter().all(|x| x.seed == x.trial as u64));
        assert_eq!(r.summaries.len(), 2);
    }

    #[test]
    fn same_config_same_bytes() {
        let a = run_experiment(&online(3)).unwrap();
        let b = run_experiment(&online(3)).unwrap();
        assert_eq!(a.trials_csv().unwrap(), b.trials_csv().unwrap());
        assert_eq!(a.summary_csv().unwrap(), b.summary_csv().unwrap());
    }

    #[test]
    fn assertions_are_evaluated() {
        let mut cfg = online(3);
        cfg.assertions = vec![
            "median gm <= 1000".parse().unwrap(),
            "median gm >= 1000".parse().unwrap(),
        ];
        let r = run_experiment(&cfg).unwrap();
        assert!(r.assertions[0].passed);
        assert!(!r.assertions[1].passed);
        assert!(!r.passed());
    }

    #[test]
    fn operator_experiment_counts_iterations() {
        let kind = ExperimentKind::Operators {
            kinds: vec![OperatorKind::OneStep, OperatorKind::Greedy],
            policies: "chain".into(),
            n: 20,
            eps: 1e-10,
            max_iter: 10_000,
        };
        let r = run_experiment(&ExperimentConfig::new("chain", EnvSpec::Chain(20), kind)).unwrap();
        assert!(r.metrics("b")[0] >= 20.0);
        assert!(r.metrics("g")[0] <= 3.0);
    }

    #[test]
    fn summaries_recompute_from_rows() {
        let rows: Vec<TrialRow> = [3.0, 1.0, f64::INFINITY, 2.0]
            .iter()
            .enumerate()
            .map(|(i, &m)| TrialRow {
                arm: "x".into(),
                trial: i,
                seed: i as u64,
                metric: m,
                final_return: None,
                mean_chosen_step: None,
                wall_ns: 0,
                error: None,
            })
            .collect();
        let s = &summarize(&["x".to_string()], &rows)[0];
        assert_eq!((s.summary.median, s.finished, s.failed), (2.5, 3, 0));
    }
}
