use std::path::PathBuf;
use std::str::FromStr;

use ini::{Ini, Properties};

use crate::envs::{highway_policies, EnvSpec, RngSeed};
use crate::error::{Error, Result};
use crate::exact_dp::{greedy_policy_from_q, optimal_q_exact, OperatorSpec};
use crate::mdp::{PolicySet, TabularMdp, TabularPolicy};
use crate::model_free::{Algorithm, EpsilonSchedule, LearnerConfig, StepLimit};

/// Operator names used by `bench` and `solve`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// `b`: one-step optimality.
    OneStep,
    /// `bn`: fixed-depth multi-step max over the policy set.
    MultiStep,
    /// `g`: greedy multi-step.
    Greedy,
    /// `g-succ`: greedy multi-step with the successor-side max.
    GreedySuccessorMax,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::OneStep => "b",
            OperatorKind::MultiStep => "bn",
            OperatorKind::Greedy => "g",
            OperatorKind::GreedySuccessorMax => "g-succ",
        }
    }

    pub fn spec(self, policies: &PolicySet, n: usize) -> OperatorSpec {
        match self {
            OperatorKind::OneStep => OperatorSpec::OneStep,
            OperatorKind::MultiStep => OperatorSpec::multi_step(policies.clone(), n),
            OperatorKind::Greedy => OperatorSpec::greedy(policies.clone(), n),
            OperatorKind::GreedySuccessorMax => OperatorSpec::GreedyMultiStep {
                policies: policies.clone(),
                n,
                successor_max: true,
            },
        }
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "b" => Ok(OperatorKind::OneStep),
            "bn" => Ok(OperatorKind::MultiStep),
            "g" => Ok(OperatorKind::Greedy),
            "g-succ" => Ok(OperatorKind::GreedySuccessorMax),
            _ => Err(Error::InvalidArgument(format!("unknown operator `{s}`"))),
        }
    }
}

/// Builds a policy set from a `+`-joined list of terms:
///
/// - `chain`: always-advance and uniform (highway chain only)
/// - `uniform`
/// - `optimal`: greedy policy of the exact `Q*`
/// - `const:<a>`: always action `a`
/// - `random:<k>:<seed>` / `random-det:<k>:<seed>`: `k` random stochastic
///   or deterministic policies
pub fn parse_policy_set(spec: &str, mdp: &TabularMdp) -> Result<PolicySet> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let bad = || Error::InvalidArgument(format!("bad policy spec `{spec}`"));
    let mut out = Vec::new();
    for term in spec.split('+').map(str::trim) {
        let parts: Vec<&str> = term.split(':').collect();
        let num = |i: usize| {
            parts
                .get(i)
                .and_then(|p| p.parse::<u64>().ok())
                .ok_or_else(bad)
        };
        match parts[0] {
            "chain" if parts.len() == 1 => out.extend(highway_policies(ns)?.iter().cloned()),
            "uniform" if parts.len() == 1 => out.push(TabularPolicy::uniform(ns, na)),
            "optimal" if parts.len() == 1 => out.push(greedy_policy_from_q(&optimal_q_exact(mdp)?)),
            "const" if parts.len() == 2 => {
                out.push(TabularPolicy::constant(ns, na, num(1)? as usize)?)
            }
            "random" | "random-det" if parts.len() == 3 => {
                let mut rng = RngSeed(num(2)?).rng();
                for _ in 0..num(1)? {
                    out.push(if parts[0] == "random" {
                        TabularPolicy::random_stochastic(ns, na, &mut rng)
                    } else {
                        TabularPolicy::random_deterministic(ns, na, &mut rng)
                    });
                }
            }
            _ => return Err(bad()),
        }
    }
    PolicySet::new(out)
}

/// What the trials of an experiment run.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentKind {
    /// Online learners; the metric is episodes-to-solve.
    Online,
    /// Offline learners on a uniform-policy dataset drawn per trial; the
    /// metric is passes-to-solve.
    Offline {
        dataset_episodes: usize,
        passes: usize,
    },
    /// Exact operator iteration from `Q0 ≡ 0`; the metric is iterations.
    Operators {
        kinds: Vec<OperatorKind>,
        policies: String,
        n: usize,
        eps: f64,
        max_iter: usize,
    },
}

/// A check on per-arm summaries. A failing assertion makes the whole
/// experiment fail.
#[derive(Debug, Clone, PartialEq)]
pub enum Assertion {
    /// `median(slow) ≥ factor · median(fast)`.
    MedianRatio {
        fast: String,
        slow: String,
        factor: f64,
    },
    /// `median(arm) ≤ bound` (`ge = false`) or `≥ bound`.
    Median { arm: String, ge: bool, bound: f64 },
}

impl FromStr for Assertion {
    type Err = Error;

    /// `ratio <fast> <slow> <factor>` or `median <arm> <=|>= <bound>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad assertion `{s}`"));
        let t: Vec<&str> = s.split_whitespace().collect();
        let num = |x: &str| x.parse::<f64>().map_err(|_| bad());
        match t.as_slice() {
            ["ratio", fast, slow, f] => Ok(Assertion::MedianRatio {
                fast: fast.to_string(),
                slow: slow.to_string(),
                factor: num(f)?,
            }),
            ["median", arm, op @ ("<=" | ">="), b] => Ok(Assertion::Median {
                arm: arm.to_string(),
                ge: *op == ">=",
                bound: num(b)?,
            }),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for Assertion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Assertion::MedianRatio { fast, slow, factor } => {
                write!(f, "ratio {fast} {slow} {factor}")
            }
            Assertion::Median { arm, ge, bound } => {
                write!(f, "median {arm} {} {bound}", if *ge { ">=" } else { "<=" })
            }
        }
    }
}

/// A named arm of an experiment: one learner configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub learner: LearnerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    pub env: EnvSpec,
    pub kind: ExperimentKind,
    pub trials: usize,
    pub seed_base: u64,
    /// Learner arms (ignored for operator experiments). A trial's seed is
    /// written over each arm's `seed`.
    pub arms: Vec<Arm>,
    pub output_dir: Option<PathBuf>,
    pub assertions: Vec<Assertion>,
}

impl ExperimentConfig {
    pub fn new(id: &str, env: EnvSpec, kind: ExperimentKind) -> Self {
        Self {
            id: id.to_string(),
            env,
            kind,
            trials: 1,
            seed_base: 0,
            arms: Vec::new(),
            output_dir: None,
            assertions: Vec::new(),
        }
    }

    pub fn with_arm(mut self, name: &str, learner: LearnerConfig) -> Self {
        self.arms.push(Arm {
            name: name.to_string(),
            learner,
        });
        self
    }

    pub fn arm_names(&self) -> Vec<String> {
        match &self.kind {
            ExperimentKind::Operators { kinds, .. } => {
                kinds.iter().map(|k| k.name().to_string()).collect()
            }
            _ => self.arms.iter().map(|a| a.name.clone()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.trials == 0 {
            return bad("trial count must be at least 1".into());
        }
        let env = self.env.build()?;
        match &self.kind {
            ExperimentKind::Operators {
                kinds,
                policies,
                n,
                eps,
                max_iter,
            } => {
                if kinds.is_empty() {
                    return bad("operator experiment lists no operators".into());
                }
                let set = parse_policy_set(policies, env.mdp())?;
                for k in kinds {
                    k.spec(&set, *n).check(env.mdp())?;
                }
                crate::exact_dp::check_tolerance(*eps, *max_iter)?;
            }
            ExperimentKind::Offline {
                dataset_episodes: 0,
                ..
            } => {
                return bad("offline experiments need at least one dataset episode".into());
            }
            _ => {
                if self.arms.is_empty() {
                    return bad("learner experiment lists no arms".into());
                }
            }
        }
        for a in &self.arms {
            a.learner.validate()?;
        }
        let names = self.arm_names();
        for a in &self.assertions {
            let refs: Vec<&String> = match a {
                Assertion::MedianRatio { fast, slow, .. } => vec![fast, slow],
                Assertion::Median { arm, .. } => vec![arm],
            };
            if let Some(r) = refs.into_iter().find(|r| !names.contains(r)) {
                return bad(format!("assertion `{a}` names unknown arm `{r}`"));
            }
        }
        Ok(())
    }

    /// Parses the `[section]` / `key = value` experiment format:
    ///
    /// ```text
    /// [experiment]
    /// id = traceback10
    /// env = traceback:10
    /// kind = online            ; online | offline | operators
    /// trials = 100
    /// seed = 0
    /// output = out/traceback10
    /// assert = ratio gm q 3; median gm <= 200
    ///
    /// [offline]                ; kind = offline
    /// dataset_episodes = 20
    /// passes = 500
    ///
    /// [operators]              ; kind = operators
    /// list = b, g
    /// policies = chain
    /// n = 20
    /// eps = 1e-10
    ///
    /// [arm.gm]                 ; one section per learner arm
    /// algorithm = gm
    /// alpha = 1
    /// ```
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Parse {
            line: e.line,
            msg: e.msg.to_string(),
        })?;
        let exp = ini
            .section(Some("experiment"))
            .ok_or_else(|| Error::InvalidArgument("missing [experiment] section".into()))?;
        let env: EnvSpec = required(exp, "experiment", "env")?.parse()?;
        let kind = match exp.get("kind").unwrap_or("online") {
            "online" => ExperimentKind::Online,
            "offline" => {
                let sec = ini.section(Some("offline"));
                ExperimentKind::Offline {
                    dataset_episodes: opt_parse(sec, "offline", "dataset_episodes")?.unwrap_or(20),
                    passes: opt_parse(sec, "offline", "passes")?.unwrap_or(100),
                }
            }
            "operators" => {
                let sec = ini.section(Some("operators"));
                let kinds = sec
                    .and_then(|p| p.get("list"))
                    .unwrap_or("b, g")
                    .split(',')
                    .map(|k| k.trim().parse())
                    .collect::<Result<Vec<_>>>()?;
                ExperimentKind::Operators {
                    kinds,
                    policies: sec
                        .and_then(|p| p.get("policies"))
                        .unwrap_or("uniform")
                        .to_string(),
                    n: opt_parse(sec, "operators", "n")?.unwrap_or(3),
                    eps: opt_parse(sec, "operators", "eps")?
                        .unwrap_or(crate::exact_dp::DEFAULT_EPS),
                    max_iter: opt_parse(sec, "operators", "max_iter")?
                        .unwrap_or(crate::exact_dp::DEFAULT_MAX_ITER),
                }
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown experiment kind `{other}`"
                )))
            }
        };
        let mut cfg = ExperimentConfig::new(exp.get("id").unwrap_or("experiment"), env, kind);
        cfg.trials = opt_parse(Some(exp), "experiment", "trials")?.unwrap_or(cfg.trials);
        cfg.seed_base = opt_parse(Some(exp), "experiment", "seed")?.unwrap_or(0);
        cfg.output_dir = exp.get("output").map(PathBuf::from);
        if let Some(list) = exp.get("assert") {
            cfg.assertions = list
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<Result<_>>()?;
        }
        for (name, props) in ini.iter() {
            if let Some(arm) = name.and_then(|n| n.strip_prefix("arm.")) {
                cfg.arms.push(Arm {
                    name: arm.to_string(),
                    learner: learner_from(arm, props)?,
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_ini_file(path: &std::path::Path) -> Result<Self> {
        Self::from_ini_str(&std::fs::read_to_string(path)?)
    }
}

fn required<'a>(p: &'a Properties, section: &str, key: &str) -> Result<&'a str> {
    p.get(key)
        .ok_or_else(|| Error::InvalidArgument(format!("[{section}] needs `{key}`")))
}

fn opt_parse<T: FromStr>(p: Option<&Properties>, section: &str, key: &str) -> Result<Option<T>> {
    match p.and_then(|p| p.get(key)) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| {
            Error::InvalidArgument(format!("[{section}] `{key}` has bad value `{v}`"))
        }),
    }
}

fn learner_from(arm: &str, p: &Properties) -> Result<LearnerConfig> {
    let section = format!("arm.{arm}");
    let s = section.as_str();
    let algorithm: Algorithm = p.get("algorithm").unwrap_or(arm).parse()?;
    let mut c = LearnerConfig::new(algorithm);
    let get = |k: &str| opt_parse::<f64>(Some(p), s, k);
    if let Some(v) = get("alpha")? {
        c.alpha = v;
    }
    if let Some(v) = get("epsilon")? {
        c.epsilon = EpsilonSchedule::constant(v);
    }
    if let Some(v) = get("epsilon_end")? {
        c.epsilon.end = v;
    }
    c.epsilon.decay_episodes =
        opt_parse(Some(p), s, "decay_episodes")?.or(c.epsilon.decay_episodes);
    c.gamma = get("gamma")?.or(c.gamma);
    c.lambda = get("lambda")?.unwrap_or(c.lambda);
    c.q_init = get("q_init")?.or(c.q_init);
    c.max_step = opt_parse::<StepLimit>(Some(p), s, "max_step")?.unwrap_or(c.max_step);
    c.episodes = opt_parse(Some(p), s, "episodes")?.unwrap_or(c.episodes);
    c.eval_every = opt_parse(Some(p), s, "eval_every")?.unwrap_or(c.eval_every);
    c.stop_when_solved = opt_parse(Some(p), s, "stop_when_solved")?.unwrap_or(c.stop_when_solved);
    match p.get("store_capacity") {
        Some("unbounded") => c.store_capacity = None,
        Some(_) => c.store_capacity = opt_parse(Some(p), s, "store_capacity")?,
        None => {}
    }
    Ok(c)
}
