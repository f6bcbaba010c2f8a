//! The JSON run configuration and its flag overrides.

use std::path::{Path, PathBuf};

use ampflow::harness::suite::{Fault, SuiteConfig};
use ampflow::harness::{InitSpec, InstanceSpec};
use ampflow::Algorithm;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CliError;

/// A step size or `auto` (derived from the instance at run time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Value(f64),
    Auto,
}

impl std::str::FromStr for Step {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Step::Auto);
        }
        s.parse::<f64>().map(Step::Value).map_err(|_| format!("expected a number or \"auto\", got {s:?}"))
    }
}

impl Serialize for Step {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Step::Value(v) => s.serialize_f64(*v),
            Step::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for Step {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Step::Value(v)),
            Raw::Text(t) if t == "auto" => Ok(Step::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"auto\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampling {
    Uniform,
    VarianceReducing,
    Probabilities(Vec<f64>),
}

fn default_step() -> Step {
    Step::Auto
}
fn one() -> usize {
    1
}
fn default_iters() -> usize {
    1000
}

/// One solver configuration. `step` is `mu` for AF/SAF and `alpha` for PIE;
/// Kaczmarz ignores it. A `theta` selects the decaying schedule
/// `step / (1 + t)^(1/2 + theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub label: Option<String>,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub eps: f64,
    #[serde(default = "default_step")]
    pub step: Step,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default)]
    pub sampling: Option<Sampling>,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default)]
    pub grad_tol: f64,
    #[serde(default = "one")]
    pub trace_every: usize,
    /// Target gradient norm for the reported iteration budgets.
    #[serde(default)]
    pub gamma: Option<f64>,
}

impl SolverSpec {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            label: None,
            algorithm,
            eps: 0.0,
            step: Step::Auto,
            theta: None,
            k: 1,
            sampling: None,
            iters: default_iters(),
            grad_tol: 0.0,
            trace_every: 1,
            gamma: None,
        }
    }

    pub fn label(&self, index: usize) -> String {
        self.label.clone().unwrap_or_else(|| format!("{}_{index}", self.algorithm.name()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessSection {
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; zero uses all cores.
    #[serde(default)]
    pub threads: usize,
}

impl Default for HarnessSection {
    fn default() -> Self {
        Self { trials: 1, seed: 0, threads: 0 }
    }
}

/// Overrides for the check suite; absent fields keep the suite defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    #[serde(default)]
    pub only: Option<Vec<String>>,
    #[serde(default)]
    pub fd_instances: Option<usize>,
    #[serde(default)]
    pub fd_eps: Option<Vec<f64>>,
    #[serde(default)]
    pub unbiased_resamples: Option<usize>,
    #[serde(default)]
    pub second_moment_points: Option<usize>,
    #[serde(default)]
    pub second_moment_resamples: Option<usize>,
    #[serde(default)]
    pub descent_iters: Option<usize>,
    #[serde(default)]
    pub lipschitz_pairs: Option<usize>,
    #[serde(default)]
    pub hessian_samples: Option<usize>,
    #[serde(default)]
    pub kaczmarz_steps: Option<usize>,
    #[serde(default)]
    pub pie_iters: Option<usize>,
}

fn default_init() -> InitSpec {
    InitSpec::Random { seed: 0, scale: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub instance: Option<InstanceSpec>,
    /// Previously simulated ensemble; relative paths resolve against the
    /// config file's directory. Takes precedence over `instance`.
    #[serde(default)]
    pub ensemble_file: Option<PathBuf>,
    #[serde(default = "default_init")]
    pub init: InitSpec,
    #[serde(default)]
    pub solvers: Vec<SolverSpec>,
    #[serde(default)]
    pub harness: HarnessSection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            instance: None,
            ensemble_file: None,
            init: default_init(),
            solvers: Vec::new(),
            harness: HarnessSection::default(),
            check: CheckSection::default(),
            output: None,
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub algo: Option<Algorithm>,
    pub eps: Option<f64>,
    pub mu: Option<Step>,
    pub theta: Option<f64>,
    pub alpha0: Option<f64>,
    pub iters: Option<usize>,
    pub trials: Option<usize>,
    pub k: Option<usize>,
    pub ensemble: Option<PathBuf>,
}

pub fn parse(text: &str) -> Result<CliConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("at `{path}`: {}", e.inner()))
    })
}

pub fn load(path: &Path) -> Result<CliConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = parse(&text)?;
    if let Some(f) = &cfg.ensemble_file {
        if f.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.ensemble_file = Some(base.join(f));
        }
    }
    Ok(cfg)
}

impl CliConfig {
    /// Apply flag overrides. `--algo` replaces the solver list with one
    /// default entry for that algorithm; the remaining solver flags then
    /// apply to every entry.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(p) = &o.out {
            self.output = Some(p.clone());
        }
        if let Some(p) = &o.ensemble {
            self.ensemble_file = Some(p.clone());
        }
        if let Some(s) = o.seed {
            self.harness.seed = s;
        }
        if let Some(n) = o.trials {
            self.harness.trials = n;
        }
        if let Some(a) = o.algo {
            self.solvers = vec![SolverSpec::new(a)];
        }
        if o.alpha0.is_some() && self.solvers.iter().any(|s| s.algorithm != Algorithm::Pie) {
            return Err(CliError::Config("--alpha0 applies to pie only; use --mu for other algorithms".into()));
        }
        if o.mu.is_some() && self.solvers.iter().any(|s| s.algorithm == Algorithm::Pie) {
            return Err(CliError::Config("pie takes its step from --alpha0, not --mu".into()));
        }
        for s in &mut self.solvers {
            if let Some(v) = o.eps {
                s.eps = v;
            }
            if let Some(v) = o.mu {
                s.step = v;
            }
            if let Some(v) = o.alpha0 {
                s.step = Step::Value(v);
            }
            if let Some(v) = o.theta {
                s.theta = Some(v);
            }
            if let Some(v) = o.iters {
                s.iters = v;
            }
            if let Some(v) = o.k {
                s.k = v;
            }
        }
        Ok(())
    }

    pub fn suite_config(&self, fault: Option<Fault>) -> SuiteConfig {
        let c = &self.check;
        let mut s = SuiteConfig { seed: self.harness.seed, fault, ..SuiteConfig::default() };
        if self.harness.seed == 0 {
            s.seed = SuiteConfig::default().seed;
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = c.$f.clone() { s.$f = v; })* };
        }
        set!(
            fd_instances,
            fd_eps,
            unbiased_resamples,
            second_moment_points,
            second_moment_resamples,
            descent_iters,
            lipschitz_pairs,
            hessian_samples,
            kaczmarz_steps,
            pie_iters
        );
        s
    }
}
