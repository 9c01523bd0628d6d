//! Benchmark MDP generators and the batch-data sampler.
//!
//! All three domains are reconstructions with documented constants:
//!
//! * Riverswim: five river positions, `left = 0` is deterministic, `right = 1`
//!   advances with probability 0.3, stays with 0.6 and slips back with 0.1 at
//!   interior states. Reward `0.005` for swimming left at the bank and `10`
//!   for staying at the far end while swimming right.
//! * Inventory: levels `0..cap`, orders clipped to the free capacity, demand
//!   binned from a normal with mean `price/4` and sd `price/6`.
//! * Population: pest counts `0..50`, growth `x·g·(1 − kill_a) + immigration`
//!   with binned normal noise and saturation at the top state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::std_normal_cdf;
use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TransitionModel};
use crate::posterior::{BatchDataset, Transition};

pub const DEFAULT_EPISODE_LENGTH: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiverswimParams {
    pub num_states: usize,
    pub advance: f64,
    pub slip: f64,
    pub left_reward: f64,
    pub right_reward: f64,
}

impl Default for RiverswimParams {
    fn default() -> Self {
        RiverswimParams {
            num_states: 5,
            advance: 0.3,
            slip: 0.1,
            left_reward: 0.005,
            right_reward: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InventoryParams {
    pub capacity: usize,
    pub sale_price: f64,
    pub holding_cost: f64,
    pub purchase_cost: f64,
    /// Read the demand mean and sd as `level/4` and `level/6` instead of
    /// `price/4` and `price/6`.
    pub demand_from_level: bool,
}

impl Default for InventoryParams {
    fn default() -> Self {
        InventoryParams {
            capacity: 30,
            sale_price: 3.99,
            holding_cost: 0.03,
            purchase_cost: 2.219,
            demand_from_level: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationParams {
    pub num_states: usize,
    pub growth_rate: f64,
    pub immigration: f64,
    /// Fraction of the population removed by each control action.
    pub kill_rates: Vec<f64>,
    pub noise_sd_floor: f64,
    pub noise_cv: f64,
    pub extinction_floor: f64,
    pub damage_cost: f64,
    pub action_cost: f64,
}

impl Default for PopulationParams {
    fn default() -> Self {
        PopulationParams {
            num_states: 50,
            growth_rate: 1.4,
            immigration: 1.0,
            kill_rates: vec![0.0, 0.15, 0.3, 0.45, 0.6],
            noise_sd_floor: 1.0,
            noise_cv: 0.2,
            extinction_floor: 0.5,
            damage_cost: 10.0,
            action_cost: 25.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum DomainSpec {
    Riverswim(RiverswimParams),
    Inventory(InventoryParams),
    Population(PopulationParams),
}

impl DomainSpec {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "riverswim" => Ok(DomainSpec::Riverswim(RiverswimParams::default())),
            "inventory" => Ok(DomainSpec::Inventory(InventoryParams::default())),
            "population" => Ok(DomainSpec::Population(PopulationParams::default())),
            other => Err(Error::Config(format!("unknown domain '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DomainSpec::Riverswim(_) => "riverswim",
            DomainSpec::Inventory(_) => "inventory",
            DomainSpec::Population(_) => "population",
        }
    }

    pub fn build(&self, discount: f64) -> Result<(TabularMdp, TransitionModel)> {
        match self {
            DomainSpec::Riverswim(p) => riverswim(p, discount),
            DomainSpec::Inventory(p) => inventory(p, discount),
            DomainSpec::Population(p) => population_model(p, discount),
        }
    }
}

fn check_probability(x: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("{what} {x} outside [0, 1]")));
    }
    Ok(())
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn riverswim(params: &RiverswimParams, discount: f64) -> Result<(TabularMdp, TransitionModel)> {
    let n = params.num_states;
    if n < 2 {
        return Err(Error::Domain("riverswim needs at least two states".into()));
    }
    check_probability(params.advance, "advance probability")?;
    check_probability(params.slip, "slip probability")?;
    if params.advance + params.slip > 1.0 {
        return Err(Error::Domain("advance + slip exceeds one".into()));
    }
    let (na, left, right) = (2, 0, 1);
    let mut probs = vec![0.0; n * na * n];
    let mut rewards = vec![0.0; n * na * n];
    let idx = |s: usize, a: usize, t: usize| (s * na + a) * n + t;
    for s in 0..n {
        probs[idx(s, left, s.saturating_sub(1))] = 1.0;
        if s == 0 {
            probs[idx(s, right, 1)] = params.advance;
            probs[idx(s, right, 0)] = 1.0 - params.advance;
        } else if s == n - 1 {
            probs[idx(s, right, s - 1)] = params.slip;
            probs[idx(s, right, s)] = 1.0 - params.slip;
        } else {
            probs[idx(s, right, s + 1)] = params.advance;
            probs[idx(s, right, s - 1)] = params.slip;
            probs[idx(s, right, s)] = 1.0 - params.advance - params.slip;
        }
    }
    rewards[idx(0, left, 0)] = params.left_reward;
    rewards[idx(n - 1, right, n - 1)] = params.right_reward;
    Ok((
        TabularMdp::new(n, na, discount, uniform(n), rewards)?,
        TransitionModel::new(n, na, probs)?,
    ))
}

/// Normal probability mass on `{0, …, n−1}` by CDF differences over unit
/// bins, with both tails folded into the end bins.
pub fn binned_normal(mean: f64, sd: f64, n: usize) -> Vec<f64> {
    if sd <= 0.0 {
        let at = mean.round().clamp(0.0, (n - 1) as f64) as usize;
        let mut out = vec![0.0; n];
        out[at] = 1.0;
        return out;
    }
    let cdf = |x: f64| std_normal_cdf((x - mean) / sd);
    let mut out = Vec::with_capacity(n);
    let mut below = 0.0;
    for k in 0..n {
        let upper = if k + 1 == n { 1.0 } else { cdf(k as f64 + 0.5) };
        out.push((upper - below).max(0.0));
        below = upper;
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

pub fn inventory(params: &InventoryParams, discount: f64) -> Result<(TabularMdp, TransitionModel)> {
    let cap = params.capacity;
    if cap < 2 {
        return Err(Error::Domain("inventory capacity must be at least 2".into()));
    }
    let (n, na) = (cap, cap);
    let price_demand = binned_normal(params.sale_price / 4.0, params.sale_price / 6.0, n);
    let mut probs = vec![0.0; n * na * n];
    let mut rewards = vec![0.0; n * na * n];
    for level in 0..n {
        let demand = if params.demand_from_level {
            binned_normal(level as f64 / 4.0, level as f64 / 6.0, n)
        } else {
            price_demand.clone()
        };
        for a in 0..na {
            let purchased = a.min(cap - 1 - level);
            let stock = level + purchased;
            let row = (level * na + a) * n;
            for (d, pd) in demand.iter().enumerate() {
                let sales = d.min(stock);
                probs[row + stock - sales] += pd;
            }
            for next in 0..=stock {
                let sales = (stock - next) as f64;
                rewards[row + next] = params.sale_price * sales
                    - params.holding_cost * next as f64
                    - params.purchase_cost * purchased as f64;
            }
        }
    }
    Ok((
        TabularMdp::new(n, na, discount, uniform(n), rewards)?,
        TransitionModel::new(n, na, probs)?,
    ))
}

pub fn population_model(params: &PopulationParams, discount: f64) -> Result<(TabularMdp, TransitionModel)> {
    let n = params.num_states;
    let na = params.kill_rates.len();
    if n < 2 || na == 0 {
        return Err(Error::Domain("population needs at least two states and one action".into()));
    }
    for k in &params.kill_rates {
        check_probability(*k, "kill rate")?;
    }
    check_probability(params.extinction_floor, "extinction floor")?;
    if !(params.growth_rate >= 0.0) || !(params.immigration >= 0.0) || !(params.noise_sd_floor >= 0.0) || !(params.noise_cv >= 0.0) {
        return Err(Error::Domain("population rates must be nonnegative".into()));
    }
    let mut probs = Vec::with_capacity(n * na * n);
    let mut rewards = Vec::with_capacity(n * na * n);
    for x in 0..n {
        for (a, kill) in params.kill_rates.iter().enumerate() {
            let mean = x as f64 * params.growth_rate * (1.0 - kill) + params.immigration;
            let sd = params.noise_sd_floor.max(params.noise_cv * mean);
            let mut row = binned_normal(mean, sd, n);
            if x == 0 {
                row.iter_mut().for_each(|p| *p *= 1.0 - params.extinction_floor);
                row[0] += params.extinction_floor;
            }
            probs.extend(row);
            rewards.extend((0..n).map(|next| -params.damage_cost * next as f64 - params.action_cost * a as f64));
        }
    }
    Ok((
        TabularMdp::new(n, na, discount, uniform(n), rewards)?,
        TransitionModel::new(n, na, probs)?,
    ))
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// `n_tuples` transitions from a uniformly random behavior policy, restarting
/// from `p0` every `episode_length` steps.
pub fn sample_dataset(
    mdp: &TabularMdp,
    model: &TransitionModel,
    n_tuples: usize,
    episode_length: usize,
    seed: u64,
) -> Result<BatchDataset> {
    if n_tuples == 0 || episode_length == 0 {
        return Err(Error::Domain("tuple count and episode length must be positive".into()));
    }
    if model.num_states() != mdp.num_states() || model.num_actions() != mdp.num_actions() {
        return Err(Error::Shape("kernel does not match the MDP".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tuples = Vec::with_capacity(n_tuples);
    let mut s = sample_index(&mut rng, mdp.initial_dist());
    for i in 0..n_tuples {
        if i > 0 && i % episode_length == 0 {
            s = sample_index(&mut rng, mdp.initial_dist());
        }
        let a = rng.gen_range(0..mdp.num_actions());
        let s_next = sample_index(&mut rng, model.row(s, a));
        tuples.push(Transition {
            s,
            a,
            r: mdp.reward_row(s, a)[s_next],
            s_next,
        });
        s = s_next;
    }
    Ok(BatchDataset::new(tuples))
}
