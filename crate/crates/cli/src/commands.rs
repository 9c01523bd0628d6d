use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use varmdp_core::analysis::radius_ratio;
use varmdp_core::domains::{sample_dataset, DomainSpec, DEFAULT_EPISODE_LENGTH};
use varmdp_core::harness::{
    derive_seed, run_experiment as run_protocol, solve_method_with_set, write_outputs, ExperimentConfig, Method,
    SolveContext,
};
use varmdp_core::mdp::{expected_return, DeterministicPolicy, ValueFunction};
use varmdp_core::posterior::{counts_from_dataset, sample_models, BatchDataset, DEFAULT_PRIOR};
use varmdp_core::robust::DEFAULT_OUTER_ITERATIONS;
use varmdp_core::var::empirical_var;
use varmdp_core::{DirichletPosterior, ModelEnsemble, TabularMdp, TransitionModel};

use crate::error::{CliError, CliResult};
use crate::io::{from_table, read_json, read_toml, read_toml_table, to_json, write_all};

const DATA_SEED_TAG: u64 = 1;
const TRAIN_SEED_TAG: u64 = 2;

fn output_dir(flag: Option<PathBuf>, config: Option<&PathBuf>) -> PathBuf {
    flag.or_else(|| config.cloned()).unwrap_or_else(|| PathBuf::from("."))
}

fn check_dims(what: &str, mdp: &TabularMdp, states: usize, actions: usize) -> CliResult<()> {
    if (states, actions) != (mdp.num_states(), mdp.num_actions()) {
        return Err(CliError::Config(format!(
            "{what} is {states}x{actions} but the MDP is {}x{}",
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(())
}

fn load_ensemble(path: &Path) -> CliResult<ModelEnsemble> {
    ModelEnsemble::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Args, Debug)]
pub struct GenerateDomainArgs {
    /// riverswim, inventory or population.
    name: String,
    /// TOML file with domain parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    discount: f64,
}

pub fn generate_domain(args: &GenerateDomainArgs, out: Option<PathBuf>) -> CliResult<Vec<PathBuf>> {
    let spec = match &args.params {
        None => DomainSpec::from_name(&args.name)?,
        Some(path) => {
            DomainSpec::from_name(&args.name)?;
            let mut table = read_toml_table(path)?;
            match table.get("name").and_then(|v| v.as_str()) {
                Some(n) if n != args.name => {
                    return Err(CliError::Config(format!(
                        "{}: parameters are for '{n}', not '{}'",
                        path.display(),
                        args.name
                    )))
                }
                _ => {}
            }
            table.insert("name".into(), toml::Value::String(args.name.clone()));
            from_table(table, path)?
        }
    };
    let (mdp, kernel) = spec.build(args.discount)?;
    write_all(
        &output_dir(out, None),
        &[
            ("mdp.json", to_json(&mdp)?.into_bytes()),
            ("kernel.json", to_json(&kernel)?.into_bytes()),
        ],
    )
}

#[derive(Args, Debug)]
pub struct SampleDataArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    kernel: PathBuf,
    #[arg(long, default_value_t = 3000)]
    tuples: usize,
    #[arg(long, default_value_t = DEFAULT_EPISODE_LENGTH)]
    episode_length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn sample_data(args: &SampleDataArgs, out: Option<PathBuf>) -> CliResult<Vec<PathBuf>> {
    let mdp: TabularMdp = read_json(&args.mdp)?;
    let kernel: TransitionModel = read_json(&args.kernel)?;
    check_dims("kernel", &mdp, kernel.num_states(), kernel.num_actions())?;
    let data = sample_dataset(
        &mdp,
        &kernel,
        args.tuples,
        args.episode_length,
        derive_seed(args.seed, DATA_SEED_TAG),
    )?;
    let mut bytes = Vec::new();
    data.write_csv(&mut bytes)?;
    write_all(&output_dir(out, None), &[("data.csv", bytes)])
}

#[derive(Args, Debug)]
pub struct FitPosteriorArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PRIOR)]
    prior: f64,
    /// Also draw this many models into `ensemble.bin`.
    #[arg(long)]
    models: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn fit_posterior(args: &FitPosteriorArgs, out: Option<PathBuf>) -> CliResult<Vec<PathBuf>> {
    let mdp: TabularMdp = read_json(&args.mdp)?;
    let data = BatchDataset::load(&args.data)?;
    let posterior = counts_from_dataset(&data, mdp.num_states(), mdp.num_actions(), args.prior)?;
    let mut files = vec![("posterior.json", to_json(&posterior)?.into_bytes())];
    if let Some(m) = args.models {
        let ensemble = sample_models(&posterior, m, derive_seed(args.seed, TRAIN_SEED_TAG))?;
        let mut bytes = Vec::new();
        ensemble.write_to(&mut bytes)?;
        files.push(("ensemble.bin", bytes));
    }
    write_all(&output_dir(out, None), &files)
}

fn default_epsilon() -> f64 {
    1e-3
}

fn default_outer() -> usize {
    DEFAULT_OUTER_ITERATIONS
}

fn default_train_models() -> usize {
    80
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub mdp: PathBuf,
    pub method: Method,
    pub delta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_outer")]
    pub outer_iterations: usize,
    /// Required by the Hoeffding methods, and to sample an ensemble when
    /// `ensemble` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<PathBuf>,
    #[serde(default = "default_train_models")]
    pub train_models: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SolveOverrides {
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub method: Method,
    pub delta: f64,
    pub alpha: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the stopping rule fired after a single sweep.
    pub single_iteration: bool,
    pub objective: f64,
    pub policy: DeterministicPolicy,
    pub value: ValueFunction,
    pub config: SolveConfig,
}

pub fn solve(config: &Path, overrides: &SolveOverrides, out: Option<PathBuf>) -> CliResult<Vec<PathBuf>> {
    let mut cfg: SolveConfig = read_toml(config)?;
    if let Some(m) = overrides.method {
        cfg.method = m;
    }
    if let Some(d) = overrides.delta {
        cfg.delta = d;
    }
    if let Some(e) = overrides.epsilon {
        cfg.epsilon = e;
    }
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(CliError::Config(format!("delta {} must lie in (0, 1)", cfg.delta)));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(CliError::Config(format!("epsilon {} must be positive", cfg.epsilon)));
    }
    let needs_posterior = matches!(cfg.method, Method::NaiveHoeffding | Method::OptHoeffding);
    if needs_posterior && cfg.posterior.is_none() {
        return Err(CliError::Config(format!("method {} requires `posterior`", cfg.method)));
    }
    if cfg.ensemble.is_none() && cfg.posterior.is_none() {
        return Err(CliError::Config("one of `ensemble` or `posterior` is required".into()));
    }

    let mdp: TabularMdp = read_json(&cfg.mdp)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let posterior = match &cfg.posterior {
        Some(path) => {
            let p: DirichletPosterior = read_json(path)?;
            check_dims("posterior", &mdp, p.num_states(), p.num_actions())?;
            p
        }
        None => DirichletPosterior::uniform_rows(ns, na, &vec![1.0; ns])?,
    };
    let train = match &cfg.ensemble {
        Some(path) => load_ensemble(path)?,
        None => sample_models(&posterior, cfg.train_models, derive_seed(cfg.seed, TRAIN_SEED_TAG))?,
    };
    check_dims("ensemble", &mdp, train.num_states(), train.num_actions())?;

    let ctx = SolveContext {
        mdp: &mdp,
        train: &train,
        posterior: &posterior,
        epsilon: cfg.epsilon,
        outer_iterations: cfg.outer_iterations,
    };
    let (sol, set) = solve_method_with_set(cfg.method, &ctx, cfg.delta)?;
    let report = SolutionFile {
        method: cfg.method,
        delta: cfg.delta,
        alpha: cfg.method.alpha(cfg.delta, ns, na),
        iterations: sol.iterations,
        converged: sol.converged,
        single_iteration: sol.iterations <= 1,
        objective: mdp.initial_dist().iter().zip(sol.value.iter()).map(|(p, v)| p * v).sum(),
        policy: sol.policy,
        value: sol.value,
        config: cfg.clone(),
    };
    let mut files = vec![("solution.json", to_json(&report)?.into_bytes())];
    if let Some(set) = set {
        files.push(("ambiguity_set.json", to_json(&set)?.into_bytes()));
    }
    write_all(&output_dir(out, cfg.output_dir.as_ref()), &files)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub mdp: PathBuf,
    /// A `solution.json` written by `solve`.
    pub solution: PathBuf,
    pub ensemble: PathBuf,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateOverrides {
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Deserialize)]
struct PolicyOnly {
    policy: DeterministicPolicy,
}

#[derive(Serialize)]
struct EvaluationFile<'a> {
    delta: f64,
    num_models: usize,
    robust_return: f64,
    mean_return: f64,
    config: &'a EvaluateConfig,
}

pub fn evaluate(config: &Path, overrides: &EvaluateOverrides, out: Option<PathBuf>) -> CliResult<Vec<PathBuf>> {
    let mut cfg: EvaluateConfig = read_toml(config)?;
    if let Some(d) = overrides.delta {
        cfg.delta = d;
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(CliError::Config(format!("delta {} must lie in (0, 1)", cfg.delta)));
    }
    let mdp: TabularMdp = read_json(&cfg.mdp)?;
    let policy = read_json::<PolicyOnly>(&cfg.solution)?.policy;
    let test = load_ensemble(&cfg.ensemble)?;
    check_dims("ensemble", &mdp, test.num_states(), test.num_actions())?;
    let returns = test
        .models()
        .iter()
        .map(|m| expected_return(&mdp, m, &policy))
        .collect::<varmdp_core::Result<Vec<_>>>()?;
    let report = EvaluationFile {
        delta: cfg.delta,
        num_models: returns.len(),
        robust_return: empirical_var(&returns, cfg.delta)?,
        mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
        config: &cfg,
    };
    let mut csv = String::from("model,return\n");
    for (i, r) in returns.iter().enumerate() {
        csv.push_str(&format!("{i},{r}\n"));
    }
    write_all(
        &output_dir(out, cfg.output_dir.as_ref()),
        &[
            ("evaluation.json", to_json(&report)?.into_bytes()),
            ("returns.csv", csv.into_bytes()),
        ],
    )
}

#[derive(Args, Debug)]
pub struct ExperimentOverrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Comma-separated confidence levels.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// L: number of train subsets.
    #[arg(long)]
    train_datasets: Option<usize>,
}

pub fn run_experiment(config: &Path, overrides: &ExperimentOverrides, out: Option<PathBuf>) -> CliResult<Vec<PathBuf>> {
    let mut table = read_toml_table(config)?;
    let config_dir = match table.remove("output_dir") {
        None => None,
        Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
        Some(other) => {
            return Err(CliError::Config(format!(
                "{}: output_dir must be a string, found {}",
                config.display(),
                other.type_str()
            )))
        }
    };
    let mut cfg: ExperimentConfig = from_table(table, config)?;
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(m) = &overrides.methods {
        cfg.methods = m.clone();
    }
    if let Some(d) = &overrides.deltas {
        cfg.deltas = d.clone();
    }
    if let Some(l) = overrides.train_datasets {
        cfg.train_datasets = l;
    }
    cfg.validate()?;
    let output = run_protocol(&cfg)?;
    let dir = output_dir(out, config_dir.as_ref());
    write_outputs(&output, &dir)?;
    Ok(["runs.csv", "summary.csv", "manifest.json"].iter().map(|f| dir.join(f)).collect())
}

#[derive(Args, Debug)]
pub struct RadiusArgs {
    #[arg(long, default_value_t = 3)]
    s_min: usize,
    #[arg(long, default_value_t = 100)]
    s_max: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

pub fn radius_analysis(args: &RadiusArgs, out: Option<PathBuf>) -> CliResult<Vec<PathBuf>> {
    if args.s_min < 2 || args.s_min > args.s_max {
        return Err(CliError::Config(format!(
            "state range {}..={} must satisfy 2 <= s-min <= s-max",
            args.s_min, args.s_max
        )));
    }
    if !(args.alpha > 0.0 && args.alpha < 0.5) {
        return Err(CliError::Config(format!("alpha {} must lie in (0, 0.5)", args.alpha)));
    }
    let mut csv = String::from("S,alpha,ratio\n");
    for s in args.s_min..=args.s_max {
        csv.push_str(&format!("{s},{},{}\n", args.alpha, radius_ratio(s, args.alpha)?));
    }
    write_all(&output_dir(out, None), &[("radius.csv", csv.into_bytes())])
}
