//! Experiment protocol: sample data, fit the posterior, draw train and test
//! ensembles, solve with every method on random train subsets and score each
//! policy by its percentile return on the test ensemble.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{sample_dataset, DomainSpec, DEFAULT_EPISODE_LENGTH};
use crate::error::{Error, Result};
use crate::mdp::{expected_return, DeterministicPolicy, Solution, TabularMdp};
use crate::posterior::{counts_from_dataset, sample_models, DirichletPosterior, ModelEnsemble, PosteriorMoments, DEFAULT_PRIOR};
use crate::robust::{
    AmbiguitySetSpec,
    bcr_ambiguity_set, hoeffding_solve, robust_value_iteration, soft_robust_solve, weighted_bcr_solve,
    HoeffdingMode, Norm, DEFAULT_OUTER_ITERATIONS,
};
use crate::var::{empirical_var_in_place, var_value_iteration, PosteriorSource, VarConfig, VarMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Var,
    Varn,
    BcrL1,
    BcrLinf,
    WbcrL1,
    WbcrLinf,
    SoftRobust,
    NaiveHoeffding,
    OptHoeffding,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Var,
        Method::Varn,
        Method::BcrL1,
        Method::BcrLinf,
        Method::WbcrL1,
        Method::WbcrLinf,
        Method::SoftRobust,
        Method::NaiveHoeffding,
        Method::OptHoeffding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Var => "var",
            Method::Varn => "varn",
            Method::BcrL1 => "bcr-l1",
            Method::BcrLinf => "bcr-linf",
            Method::WbcrL1 => "wbcr-l1",
            Method::WbcrLinf => "wbcr-linf",
            Method::SoftRobust => "soft-robust",
            Method::NaiveHoeffding => "naive-hoeffding",
            Method::OptHoeffding => "opt-hoeffding",
        }
    }

    /// Per-row confidence level used by the method at overall level `δ`:
    /// `δ/S` for the VaR solvers, `δ/(SA)` for the credible regions. The
    /// Hoeffding radius splits `δ` itself; soft-robust uses none.
    pub fn alpha(self, delta: f64, num_states: usize, num_actions: usize) -> Option<f64> {
        match self {
            Method::Var | Method::Varn => Some(delta / num_states as f64),
            Method::BcrL1 | Method::BcrLinf | Method::WbcrL1 | Method::WbcrLinf => {
                Some(delta / (num_states * num_actions) as f64)
            }
            Method::NaiveHoeffding | Method::OptHoeffding => Some(delta),
            Method::SoftRobust => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

fn default_discount() -> f64 {
    0.95
}
fn default_deltas() -> Vec<f64> {
    vec![0.05, 0.15, 0.3]
}
fn default_epsilon() -> f64 {
    1e-3
}
fn default_train_models() -> usize {
    80
}
fn default_test_models() -> usize {
    200
}
fn default_train_datasets() -> usize {
    10
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_prior() -> f64 {
    DEFAULT_PRIOR
}
fn default_n_tuples() -> usize {
    3000
}
fn default_episode_length() -> usize {
    DEFAULT_EPISODE_LENGTH
}
fn default_outer_iterations() -> usize {
    DEFAULT_OUTER_ITERATIONS
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// M: posterior models drawn for training.
    #[serde(default = "default_train_models")]
    pub train_models: usize,
    /// K: posterior models held out for evaluation.
    #[serde(default = "default_test_models")]
    pub test_models: usize,
    /// L: random train subsets.
    #[serde(default = "default_train_datasets")]
    pub train_datasets: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_prior")]
    pub prior: f64,
    #[serde(default = "default_n_tuples")]
    pub n_tuples: usize,
    #[serde(default = "default_episode_length")]
    pub episode_length: usize,
    #[serde(default = "default_outer_iterations")]
    pub outer_iterations: usize,
    /// Write measured wall time; disable for byte-identical outputs.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn new(domain: DomainSpec) -> Self {
        ExperimentConfig {
            domain,
            discount: default_discount(),
            deltas: default_deltas(),
            epsilon: default_epsilon(),
            train_models: default_train_models(),
            test_models: default_test_models(),
            train_datasets: default_train_datasets(),
            train_fraction: default_train_fraction(),
            methods: default_methods(),
            seed: 0,
            prior: default_prior(),
            n_tuples: default_n_tuples(),
            episode_length: default_episode_length(),
            outer_iterations: default_outer_iterations(),
            record_timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.discount >= 0.0 && self.discount < 1.0) {
            return bad(format!("discount {} outside [0, 1)", self.discount));
        }
        if self.deltas.is_empty() {
            return bad("deltas must be nonempty".into());
        }
        if let Some(d) = self.deltas.iter().find(|d| !(**d > 0.0 && **d < 0.5)) {
            return bad(format!("delta {d} outside (0, 0.5)"));
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        if self.train_models == 0 || self.test_models == 0 || self.train_datasets == 0 {
            return bad("train_models, test_models and train_datasets must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train_fraction {} outside (0, 1]", self.train_fraction));
        }
        if self.methods.is_empty() {
            return bad("methods must be nonempty".into());
        }
        if !(self.prior > 0.0) {
            return bad("prior must be positive".into());
        }
        if self.n_tuples == 0 || self.episode_length == 0 {
            return bad("n_tuples and episode_length must be positive".into());
        }
        Ok(())
    }

    pub fn subset_size(&self) -> usize {
        ((self.train_fraction * self.train_models as f64).round() as usize).clamp(1, self.train_models)
    }
}

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    let mut z = parent ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub root: u64,
    pub data: u64,
    pub train_ensemble: u64,
    pub test_ensemble: u64,
    pub subsets: Vec<u64>,
}

impl SeedRecord {
    pub fn derive(root: u64, runs: usize) -> Self {
        let subset_root = derive_seed(root, 4);
        SeedRecord {
            root,
            data: derive_seed(root, 1),
            train_ensemble: derive_seed(root, 2),
            test_ensemble: derive_seed(root, 3),
            subsets: (0..runs as u64).map(|r| derive_seed(subset_root, r)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub delta: f64,
    pub alpha: Option<f64>,
    pub robust_returns: Vec<f64>,
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub policies: Vec<DeterministicPolicy>,
    pub walltime_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub seeds: SeedRecord,
    pub results: Vec<MethodResult>,
}

/// `mean ± 1.96·sd/√L`, with sample standard deviation and zero halfwidth
/// for a single value.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

/// Empirical `δ`-quantile of the exact returns of `policy` under each test
/// model.
pub fn robust_performance(
    mdp: &TabularMdp,
    policy: &DeterministicPolicy,
    test_models: &ModelEnsemble,
    delta: f64,
) -> Result<f64> {
    let mut returns = test_models
        .models()
        .iter()
        .map(|m| expected_return(mdp, m, policy))
        .collect::<Result<Vec<_>>>()?;
    empirical_var_in_place(&mut returns, delta)
}

/// Shared inputs for solving with any method.
pub struct SolveContext<'a> {
    pub mdp: &'a TabularMdp,
    pub train: &'a ModelEnsemble,
    pub posterior: &'a DirichletPosterior,
    pub epsilon: f64,
    pub outer_iterations: usize,
}

pub fn solve_method(method: Method, ctx: &SolveContext<'_>, delta: f64) -> Result<Solution> {
    solve_method_with_set(method, ctx, delta).map(|(sol, _)| sol)
}

/// Like [`solve_method`], also returning the ambiguity set for the robust
/// methods that build one.
pub fn solve_method_with_set(
    method: Method,
    ctx: &SolveContext<'_>,
    delta: f64,
) -> Result<(Solution, Option<AmbiguitySetSpec>)> {
    let (ns, na) = (ctx.mdp.num_states(), ctx.mdp.num_actions());
    let alpha = method.alpha(delta, ns, na);
    let eps = ctx.epsilon;
    match method {
        Method::Var | Method::Varn => {
            let mode = if method == Method::Var { VarMode::Empirical } else { VarMode::Gaussian };
            let cfg = VarConfig::new(alpha.unwrap_or(delta), eps, mode)?;
            Ok((var_value_iteration(ctx.mdp, PosteriorSource::Ensemble(ctx.train), &cfg)?, None))
        }
        Method::BcrL1 | Method::BcrLinf => {
            let norm = if method == Method::BcrL1 { Norm::L1 } else { Norm::LInf };
            let spec = bcr_ambiguity_set(ctx.train, norm, alpha.unwrap_or(delta))?;
            Ok((robust_value_iteration(ctx.mdp, &spec, eps)?, Some(spec)))
        }
        Method::WbcrL1 | Method::WbcrLinf => {
            let norm = if method == Method::WbcrL1 { Norm::L1 } else { Norm::LInf };
            let (sol, spec) =
                weighted_bcr_solve(ctx.mdp, ctx.train, norm, alpha.unwrap_or(delta), eps, ctx.outer_iterations)?;
            Ok((sol, Some(spec)))
        }
        Method::SoftRobust => Ok((
            soft_robust_solve(ctx.mdp, &PosteriorMoments::from_ensemble(ctx.train), eps)?,
            None,
        )),
        Method::NaiveHoeffding | Method::OptHoeffding => {
            let mode = if method == Method::NaiveHoeffding { HoeffdingMode::Naive } else { HoeffdingMode::Optimized };
            let (sol, spec) = hoeffding_solve(ctx.mdp, ctx.posterior, delta, mode, eps, ctx.outer_iterations)?;
            Ok((sol, Some(spec)))
        }
    }
}

struct TaskOutcome {
    robust_return: f64,
    policy: DeterministicPolicy,
    seconds: f64,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let seeds = SeedRecord::derive(cfg.seed, cfg.train_datasets);
    let (mdp, truth) = cfg.domain.build(cfg.discount)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let data = sample_dataset(&mdp, &truth, cfg.n_tuples, cfg.episode_length, seeds.data)?;
    let posterior = counts_from_dataset(&data, ns, na, cfg.prior)?;
    let d1 = sample_models(&posterior, cfg.train_models, seeds.train_ensemble)?;
    let d2 = sample_models(&posterior, cfg.test_models, seeds.test_ensemble)?;
    let k = cfg.subset_size();
    let subsets = seeds
        .subsets
        .iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut idx = sample(&mut rng, cfg.train_models, k).into_vec();
            idx.sort_unstable();
            d1.subset(&idx)
        })
        .collect::<Result<Vec<_>>>()?;

    let tasks: Vec<(usize, usize, usize)> = (0..cfg.deltas.len())
        .flat_map(|d| (0..cfg.methods.len()).flat_map(move |m| (0..cfg.train_datasets).map(move |r| (d, m, r))))
        .collect();
    let outcomes = tasks
        .par_iter()
        .map(|&(d, m, r)| {
            let start = Instant::now();
            let ctx = SolveContext {
                mdp: &mdp,
                train: &subsets[r],
                posterior: &posterior,
                epsilon: cfg.epsilon,
                outer_iterations: cfg.outer_iterations,
            };
            let delta = cfg.deltas[d];
            let sol = solve_method(cfg.methods[m], &ctx, delta)?;
            let robust_return = robust_performance(&mdp, &sol.policy, &d2, delta)?;
            Ok(TaskOutcome {
                robust_return,
                policy: sol.policy,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let runs = cfg.train_datasets;
    let mut results = Vec::with_capacity(cfg.deltas.len() * cfg.methods.len());
    for (chunk, (d, m, _)) in outcomes.chunks(runs).zip(tasks.iter().step_by(runs)) {
        let robust_returns: Vec<f64> = chunk.iter().map(|o| o.robust_return).collect();
        let (mean, ci_halfwidth) = confidence_interval(&robust_returns)?;
        let method = cfg.methods[*m];
        results.push(MethodResult {
            method,
            delta: cfg.deltas[*d],
            alpha: method.alpha(cfg.deltas[*d], ns, na),
            robust_returns,
            mean,
            ci_halfwidth,
            policies: chunk.iter().map(|o| o.policy.clone()).collect(),
            walltime_s: if cfg.record_timing { chunk.iter().map(|o| o.seconds).sum() } else { 0.0 },
        });
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        seeds,
        results,
    })
}

pub fn runs_csv(results: &[MethodResult]) -> String {
    let mut out = String::from("method,delta,run,robust_return\n");
    for r in results {
        for (i, v) in r.robust_returns.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", r.method, r.delta, i, v);
        }
    }
    out
}

pub fn summary_csv(results: &[MethodResult]) -> String {
    let mut out = String::from("method,delta,mean,ci_halfwidth,walltime_s\n");
    for r in results {
        let _ = writeln!(out, "{},{},{},{},{}", r.method, r.delta, r.mean, r.ci_halfwidth, r.walltime_s);
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    seeds: &'a SeedRecord,
    alphas: Vec<AlphaEntry>,
    git_describe: String,
    version: &'static str,
}

#[derive(Serialize)]
struct AlphaEntry {
    method: Method,
    delta: f64,
    alpha: Option<f64>,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

pub fn manifest_json(output: &ExperimentOutput) -> Result<String> {
    let manifest = Manifest {
        config: &output.config,
        seeds: &output.seeds,
        alphas: output
            .results
            .iter()
            .map(|r| AlphaEntry {
                method: r.method,
                delta: r.delta,
                alpha: r.alpha,
            })
            .collect(),
        git_describe: git_describe(),
        version: env!("CARGO_PKG_VERSION"),
    };
    Ok(serde_json::to_string_pretty(&manifest)? + "\n")
}

/// Writes `runs.csv`, `summary.csv` and `manifest.json` into `dir`.
pub fn write_outputs(output: &ExperimentOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("runs.csv"), runs_csv(&output.results))?;
    fs::write(dir.join("summary.csv"), summary_csv(&output.results))?;
    fs::write(dir.join("manifest.json"), manifest_json(output)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::RiverswimParams;
    use crate::mdp::value_iteration;
    use crate::testutil::random_instance;

    #[test]
    fn ci_examples() {
        assert_eq!(confidence_interval(&[3.0, 3.0, 3.0]).unwrap(), (3.0, 0.0));
        let (m, h) = confidence_interval(&[0.0, 2.0]).unwrap();
        assert_eq!(m, 1.0);
        assert!((h - 1.96).abs() < 1e-12);
        assert_eq!(confidence_interval(&[4.5]).unwrap(), (4.5, 0.0));
        assert!(confidence_interval(&[]).is_err());
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        assert!(matches!("worst-rmdp".parse::<Method>(), Err(Error::Config(_))));
    }

    #[test]
    fn confidence_split() {
        assert_eq!(Method::Var.alpha(0.1, 5, 2), Some(0.02));
        assert_eq!(Method::BcrLinf.alpha(0.1, 5, 2), Some(0.01));
        assert_eq!(Method::SoftRobust.alpha(0.1, 5, 2), None);
    }

    #[test]
    fn robust_performance_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mdp, model) = random_instance(&mut rng, 4, 2, 0.9);
        let pi = DeterministicPolicy(vec![0, 1, 0, 1]);
        let truth = expected_return(&mdp, &model, &pi).unwrap();
        let one = ModelEnsemble::new(vec![model.clone()], 0).unwrap();
        assert_eq!(robust_performance(&mdp, &pi, &one, 0.05).unwrap(), truth);
        let same = ModelEnsemble::new(vec![model; 7], 0).unwrap();
        assert_eq!(robust_performance(&mdp, &pi, &same, 0.3).unwrap(), truth);
        let ens = crate::testutil::random_ensemble(&mut rng, 4, 2, 30);
        let worst = ens
            .models()
            .iter()
            .map(|m| expected_return(&mdp, m, &pi).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(robust_performance(&mdp, &pi, &ens, 1e-6).unwrap(), worst);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::new(DomainSpec::Riverswim(RiverswimParams::default()));
        cfg.validate().unwrap();
        cfg.train_fraction = 0.0;
        assert!(cfg.validate().is_err());
        cfg.train_fraction = 0.8;
        cfg.deltas = vec![0.6];
        assert!(cfg.validate().is_err());
        cfg.deltas = vec![0.1];
        cfg.methods.clear();
        assert!(cfg.validate().is_err());
        let text = r#"{"domain":{"name":"riverswim"},"methods":["var","nope"]}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
        let text = r#"{"domain":{"name":"riverswim"},"extra":1}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = SeedRecord::derive(7, 5);
        assert_eq!(a, SeedRecord::derive(7, 5));
        let mut all = vec![a.data, a.train_ensemble, a.test_ensemble];
        all.extend(&a.subsets);
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
        assert_ne!(SeedRecord::derive(8, 5).data, a.data);
    }

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(DomainSpec::Riverswim(RiverswimParams::default()));
        cfg.deltas = vec![0.1];
        cfg.train_models = 20;
        cfg.test_models = 30;
        cfg.train_datasets = 3;
        cfg.n_tuples = 400;
        cfg.epsilon = 1e-2;
        cfg.outer_iterations = 2;
        cfg.record_timing = false;
        cfg.seed = 11;
        cfg
    }

    #[test]
    fn experiment_is_deterministic() {
        let cfg = small_config();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(runs_csv(&a.results), runs_csv(&b.results));
        assert_eq!(summary_csv(&a.results), summary_csv(&b.results));
        assert_eq!(a.results.len(), Method::ALL.len());
        for r in &a.results {
            assert_eq!(r.robust_returns.len(), 3);
            assert!(r.ci_halfwidth >= 0.0);
            assert_eq!(r.walltime_s, 0.0);
        }
        let mut other = cfg.clone();
        other.seed = 12;
        assert_ne!(runs_csv(&run_experiment(&other).unwrap().results), runs_csv(&a.results));
    }

    #[test]
    fn single_run_has_zero_halfwidth() {
        let mut cfg = small_config();
        cfg.train_datasets = 1;
        cfg.methods = vec![Method::Var, Method::SoftRobust];
        let out = run_experiment(&cfg).unwrap();
        assert!(out.results.iter().all(|r| r.ci_halfwidth == 0.0));
    }

    #[test]
    fn soft_robust_near_optimal_on_concentrated_posterior() {
        let (mdp, truth) = crate::domains::riverswim(&RiverswimParams::default(), 0.9).unwrap();
        let big: Vec<f64> = truth.probs().iter().map(|p| 1e7 * p + 1e-6).collect();
        let post = DirichletPosterior::new(5, 2, 1e-6, big).unwrap();
        let train = sample_models(&post, 20, 3).unwrap();
        let test = sample_models(&post, 50, 4).unwrap();
        let ctx = SolveContext {
            mdp: &mdp,
            train: &train,
            posterior: &post,
            epsilon: 1e-6,
            outer_iterations: 1,
        };
        let sol = solve_method(Method::SoftRobust, &ctx, 0.1).unwrap();
        let perf = robust_performance(&mdp, &sol.policy, &test, 0.1).unwrap();
        let opt = value_iteration(&mdp, &truth, 1e-10).unwrap();
        let best = expected_return(&mdp, &truth, &opt.policy).unwrap();
        assert!((perf - best).abs() < 1e-2 * best.abs().max(1.0), "{perf} vs {best}");
    }

    #[test]
    fn var_beats_bcr_linf_on_one_step_example() {
        // One decision state, two actions: a safe zero-reward action and the
        // risky Dirichlet(10, 10, 1) gamble with rewards [0.25, 0.25, -1].
        let ns = 4;
        let mut rewards = vec![0.0; ns * 2 * ns];
        rewards[ns + 1] = 0.25;
        rewards[ns + 2] = 0.25;
        rewards[ns + 3] = -1.0;
        rewards[0] = 0.1;
        let mdp = TabularMdp::new(ns, 2, 0.0, vec![1.0, 0.0, 0.0, 0.0], rewards).unwrap();
        let mut conc = vec![1e-3; ns * 2 * ns];
        conc[0] = 1e6;
        conc[ns + 1] = 10.0;
        conc[ns + 2] = 10.0;
        conc[ns + 3] = 1.0;
        for s in 1..ns {
            for a in 0..2 {
                conc[(s * 2 + a) * ns + s] = 1e6;
            }
        }
        let post = DirichletPosterior::new(ns, 2, 0.0, conc).unwrap();
        let train = sample_models(&post, 2000, 5).unwrap();
        let test = sample_models(&post, 2000, 6).unwrap();
        let ctx = SolveContext {
            mdp: &mdp,
            train: &train,
            posterior: &post,
            epsilon: 1e-6,
            outer_iterations: 1,
        };
        // δ = 0.8 gives the VaR level δ/S = 0.2 at the single decision state.
        let var = solve_method(Method::Var, &ctx, 0.8).unwrap();
        let spec = bcr_ambiguity_set(&train, Norm::LInf, 0.2).unwrap();
        let bcr = robust_value_iteration(&mdp, &spec, 1e-6).unwrap();
        assert_eq!(var.policy[0], 1);
        let var_perf = robust_performance(&mdp, &var.policy, &test, 0.2).unwrap();
        let bcr_perf = robust_performance(&mdp, &bcr.policy, &test, 0.2).unwrap();
        assert!((var_perf - 0.17).abs() < 0.05, "{var_perf}");
        assert!(var_perf > bcr_perf, "{var_perf} vs {bcr_perf}");
    }

    #[test]
    fn outputs_written() {
        let mut cfg = small_config();
        cfg.methods = vec![Method::Var, Method::BcrLinf];
        let out = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&out, dir.path()).unwrap();
        let runs = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
        assert!(runs.starts_with("method,delta,run,robust_return\n"));
        assert_eq!(runs.lines().count(), 1 + 2 * 3);
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(summary.starts_with("method,delta,mean,ci_halfwidth,walltime_s\n"));
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["seeds"]["root"], 11);
        assert!(manifest["git_describe"].is_string());
    }
}
