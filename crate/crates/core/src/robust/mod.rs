//! Robust-MDP baselines over SA-rectangular weighted-norm ambiguity sets:
//! Bayesian credible regions (BCR), weighted BCR, Hoeffding sets and the
//! soft-robust mean-model solver.

mod inner;

pub use inner::{weighted_norm_distance, worst_case_l1, worst_case_linf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    argmax_actions, check_simplex, default_iteration_cap, dot, flatten_tensor, iterate_to_fixed_point,
    nest_tensor, one_step_returns_into, value_iteration, DeterministicPolicy, Solution,
    TabularMdp, TransitionModel, ValueFunction,
};
use crate::posterior::{DirichletPosterior, ModelEnsemble, PosteriorMoments};

pub type RobustSolution = Solution;

/// Floor added to every value-spread weight before normalization.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Default number of weight refits for the weighted solvers.
pub const DEFAULT_OUTER_ITERATIONS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "linf")]
    LInf,
}

/// `P_{s,a} = { p ∈ Δ : ‖p − p̄_{s,a}‖_{q,b_{s,a}} ≤ ψ_{s,a} }` for every row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AmbiguityDocument", into = "AmbiguityDocument")]
pub struct AmbiguitySetSpec {
    norm: Norm,
    num_states: usize,
    num_actions: usize,
    centers: Vec<f64>,
    weights: Vec<f64>,
    radii: Vec<f64>,
}

impl AmbiguitySetSpec {
    pub fn new(
        norm: Norm,
        num_states: usize,
        num_actions: usize,
        centers: Vec<f64>,
        weights: Vec<f64>,
        radii: Vec<f64>,
    ) -> Result<Self> {
        let rows = num_states * num_actions;
        if rows == 0 {
            return Err(Error::Shape("ambiguity set needs states and actions".into()));
        }
        if centers.len() != rows * num_states || weights.len() != rows * num_states {
            return Err(Error::Shape("centers and weights must be S*A*S".into()));
        }
        if radii.len() != rows {
            return Err(Error::Shape(format!("expected {rows} radii, got {}", radii.len())));
        }
        for row in centers.chunks_exact(num_states) {
            check_simplex(row, "ambiguity center")?;
        }
        if weights.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::InvalidModel("norm weights must be positive and finite".into()));
        }
        if radii.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidModel("radii must be nonnegative and finite".into()));
        }
        Ok(AmbiguitySetSpec {
            norm,
            num_states,
            num_actions,
            centers,
            weights,
            radii,
        })
    }

    /// Unit-weight set around `centers` with the given radii.
    pub fn unweighted(norm: Norm, centers: &TransitionModel, radii: Vec<f64>) -> Result<Self> {
        let weights = vec![1.0; centers.probs().len()];
        Self::new(
            norm,
            centers.num_states(),
            centers.num_actions(),
            centers.probs().to_vec(),
            weights,
            radii,
        )
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    fn offset(&self, s: usize, a: usize) -> usize {
        (s * self.num_actions + a) * self.num_states
    }

    pub fn center(&self, s: usize, a: usize) -> &[f64] {
        let o = self.offset(s, a);
        &self.centers[o..o + self.num_states]
    }

    pub fn weight_row(&self, s: usize, a: usize) -> &[f64] {
        let o = self.offset(s, a);
        &self.weights[o..o + self.num_states]
    }

    pub fn radius(&self, s: usize, a: usize) -> f64 {
        self.radii[s * self.num_actions + a]
    }

    /// Whether `p` lies in the set of row `(s, a)`, with absolute slack `tol`.
    pub fn contains(&self, s: usize, a: usize, p: &[f64], tol: f64) -> bool {
        weighted_norm_distance(p, self.center(s, a), self.weight_row(s, a), self.norm)
            <= self.radius(s, a) + tol
    }

    /// Minimizer and value of `pᵀw` over the set of row `(s, a)`.
    pub fn worst_case(&self, s: usize, a: usize, w: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (center, b, r) = (self.center(s, a), self.weight_row(s, a), self.radius(s, a));
        match self.norm {
            Norm::L1 => worst_case_l1(center, w, r, b),
            Norm::LInf => worst_case_linf(center, w, r, b),
        }
    }

    fn check_mdp(&self, mdp: &TabularMdp) -> Result<()> {
        if self.num_states != mdp.num_states() || self.num_actions != mdp.num_actions() {
            return Err(Error::Shape(format!(
                "ambiguity set is {}x{}, MDP is {}x{}",
                self.num_states,
                self.num_actions,
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AmbiguityDocument {
    norm: Norm,
    num_states: usize,
    num_actions: usize,
    centers: Vec<Vec<Vec<f64>>>,
    weights: Vec<Vec<Vec<f64>>>,
    radii: Vec<Vec<f64>>,
}

impl TryFrom<AmbiguityDocument> for AmbiguitySetSpec {
    type Error = Error;

    fn try_from(doc: AmbiguityDocument) -> Result<Self> {
        let centers = flatten_tensor(doc.centers, doc.num_states, doc.num_actions, "centers")?;
        let weights = flatten_tensor(doc.weights, doc.num_states, doc.num_actions, "weights")?;
        if doc.radii.len() != doc.num_states || doc.radii.iter().any(|r| r.len() != doc.num_actions) {
            return Err(Error::Shape("radii must be num_states x num_actions".into()));
        }
        let radii = doc.radii.into_iter().flatten().collect();
        AmbiguitySetSpec::new(doc.norm, doc.num_states, doc.num_actions, centers, weights, radii)
    }
}

impl From<AmbiguitySetSpec> for AmbiguityDocument {
    fn from(spec: AmbiguitySetSpec) -> Self {
        AmbiguityDocument {
            norm: spec.norm,
            num_states: spec.num_states,
            num_actions: spec.num_actions,
            centers: nest_tensor(&spec.centers, spec.num_states, spec.num_actions),
            weights: nest_tensor(&spec.weights, spec.num_states, spec.num_actions),
            radii: spec.radii.chunks_exact(spec.num_actions).map(<[f64]>::to_vec).collect(),
        }
    }
}

/// Rank of the fitted radius: `⌈(1−α)M⌉`, within `[1, M]`.
pub fn coverage_rank(num_models: usize, alpha: f64) -> usize {
    let k = ((1.0 - alpha) * num_models as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(num_models)
}

/// Per-row radius `ψ_{s,a}` as the `⌈(1−α)M⌉`-th smallest ensemble distance
/// from the center, so the closed ball holds at least that many members.
pub fn fit_bcr_radius(
    ensemble: &ModelEnsemble,
    centers: &[f64],
    weights: &[f64],
    norm: Norm,
    alpha: f64,
) -> Result<Vec<f64>> {
    let (ns, na) = (ensemble.num_states(), ensemble.num_actions());
    if centers.len() != ns * na * ns || weights.len() != centers.len() {
        return Err(Error::Shape("centers and weights must match the ensemble".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    let k = coverage_rank(ensemble.len(), alpha);
    Ok((0..ns * na)
        .into_par_iter()
        .map(|row| {
            let (s, a) = (row / na, row % na);
            let range = row * ns..(row + 1) * ns;
            let mut dist: Vec<f64> = ensemble
                .models()
                .iter()
                .map(|m| weighted_norm_distance(m.row(s, a), &centers[range.clone()], &weights[range.clone()], norm))
                .collect();
            let (_, kth, _) = dist.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect())
}

/// Credible-region set centered at the ensemble mean with unit weights.
pub fn bcr_ambiguity_set(ensemble: &ModelEnsemble, norm: Norm, alpha: f64) -> Result<AmbiguitySetSpec> {
    let centers = ensemble.mean_model();
    let weights = vec![1.0; centers.probs().len()];
    let radii = fit_bcr_radius(ensemble, centers.probs(), &weights, norm, alpha)?;
    AmbiguitySetSpec::unweighted(norm, &centers, radii)
}

/// Robust Bellman optimality update `max_a min_{p ∈ P_{s,a}} pᵀw_{s,a}`.
pub fn robust_bellman_update(
    mdp: &TabularMdp,
    spec: &AmbiguitySetSpec,
    v: &ValueFunction,
) -> Result<(ValueFunction, DeterministicPolicy)> {
    spec.check_mdp(mdp)?;
    mdp.check_value(v)?;
    let results = (0..mdp.num_states())
        .into_par_iter()
        .map(|s| {
            let mut w = vec![0.0; mdp.num_states()];
            argmax_actions(mdp.num_actions(), |a| {
                one_step_returns_into(mdp, v, s, a, &mut w);
                Ok(spec.worst_case(s, a, &w)?.1)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (values, actions) = results.into_iter().unzip();
    Ok((ValueFunction(values), DeterministicPolicy(actions)))
}

/// Robust value iteration from `u₀ = 0`.
pub fn robust_value_iteration(mdp: &TabularMdp, spec: &AmbiguitySetSpec, epsilon: f64) -> Result<RobustSolution> {
    robust_value_iteration_from(mdp, spec, epsilon, ValueFunction::zeros(mdp.num_states()))
}

pub fn robust_value_iteration_from(
    mdp: &TabularMdp,
    spec: &AmbiguitySetSpec,
    epsilon: f64,
    init: ValueFunction,
) -> Result<RobustSolution> {
    spec.check_mdp(mdp)?;
    mdp.check_value(&init)?;
    iterate_to_fixed_point(
        mdp.discount(),
        epsilon,
        default_iteration_cap(mdp, epsilon),
        init,
        |v| robust_bellman_update(mdp, spec, v),
    )
}

/// Worst-case kernel selected by the robust update at `v`.
pub fn worst_case_model(mdp: &TabularMdp, spec: &AmbiguitySetSpec, v: &ValueFunction) -> Result<TransitionModel> {
    spec.check_mdp(mdp)?;
    mdp.check_value(v)?;
    let ns = mdp.num_states();
    let mut probs = Vec::with_capacity(ns * mdp.num_actions() * ns);
    let mut w = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..mdp.num_actions() {
            one_step_returns_into(mdp, v, s, a, &mut w);
            probs.extend(spec.worst_case(s, a, &w)?.0);
        }
    }
    TransitionModel::new(ns, mdp.num_actions(), probs)
}

/// Value-spread weights `b_i = |w_i − p̄ᵀw| + κ`, normalized to mean one in
/// every row.
pub fn weights_from_values(mdp: &TabularMdp, centers: &[f64], v: &ValueFunction) -> Result<Vec<f64>> {
    mdp.check_value(v)?;
    let ns = mdp.num_states();
    if centers.len() != ns * mdp.num_actions() * ns {
        return Err(Error::Shape("centers must be S*A*S".into()));
    }
    let mut out = Vec::with_capacity(centers.len());
    let mut w = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..mdp.num_actions() {
            one_step_returns_into(mdp, v, s, a, &mut w);
            let center = &centers[(s * mdp.num_actions() + a) * ns..][..ns];
            let mean: f64 = center.iter().zip(&w).map(|(p, x)| p * x).sum();
            let raw: Vec<f64> = w.iter().map(|x| (x - mean).abs() + WEIGHT_FLOOR).collect();
            let avg = raw.iter().sum::<f64>() / ns as f64;
            out.extend(raw.iter().map(|b| b / avg));
        }
    }
    Ok(out)
}

/// Weights for the weighted credible region, centered at the ensemble mean.
pub fn optimize_weights(mdp: &TabularMdp, ensemble: &ModelEnsemble, v: &ValueFunction) -> Result<Vec<f64>> {
    weights_from_values(mdp, ensemble.mean_model().probs(), v)
}

/// Alternates weight refits with robust solves, starting from `spec` and
/// `sol`. A refit is kept only when it raises the robust return estimate
/// `p0ᵀv`; iteration stops at the first rejected refit, when the value moves
/// by at most `ε`, or after `outer_iterations` refits.
fn refine_weights<F>(
    mdp: &TabularMdp,
    mut spec: AmbiguitySetSpec,
    mut sol: RobustSolution,
    epsilon: f64,
    outer_iterations: usize,
    refit: F,
) -> Result<(RobustSolution, AmbiguitySetSpec)>
where
    F: Fn(&ValueFunction) -> Result<AmbiguitySetSpec>,
{
    let objective = |v: &ValueFunction| dot(mdp.initial_dist(), v);
    for _ in 0..outer_iterations {
        let next_spec = refit(&sol.value)?;
        let next = robust_value_iteration_from(mdp, &next_spec, epsilon, sol.value.clone())?;
        if objective(&next.value) <= objective(&sol.value) {
            break;
        }
        let change = next.value.sup_distance(&sol.value);
        spec = next_spec;
        sol = next;
        if change <= epsilon {
            break;
        }
    }
    Ok((sol, spec))
}

/// Weighted-BCR: starting from the unweighted credible region, refit
/// value-spread weights and the matching radii from the ensemble.
pub fn weighted_bcr_solve(
    mdp: &TabularMdp,
    ensemble: &ModelEnsemble,
    norm: Norm,
    alpha: f64,
    epsilon: f64,
    outer_iterations: usize,
) -> Result<(RobustSolution, AmbiguitySetSpec)> {
    let spec = bcr_ambiguity_set(ensemble, norm, alpha)?;
    let sol = robust_value_iteration(mdp, &spec, epsilon)?;
    let centers = spec.centers.clone();
    let (ns, na) = (spec.num_states, spec.num_actions);
    refine_weights(mdp, spec, sol, epsilon, outer_iterations, |v| {
        let weights = weights_from_values(mdp, &centers, v)?;
        let radii = fit_bcr_radius(ensemble, &centers, &weights, norm, alpha)?;
        AmbiguitySetSpec::new(norm, ns, na, centers.clone(), weights, radii)
    })
}

/// `ℓ1` concentration radius `√((2/n)·ln(SA·2^S/δ))` per row, `2` for rows
/// without data.
pub fn hoeffding_radius(posterior: &DirichletPosterior, delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta {delta} outside (0, 1)")));
    }
    let (ns, na) = (posterior.num_states(), posterior.num_actions());
    let log_term = ((ns * na) as f64).ln() + ns as f64 * std::f64::consts::LN_2 - delta.ln();
    let mut radii = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let n = posterior.visit_count(s, a);
            radii.push(if n > 0.0 { ((2.0 / n) * log_term).sqrt().min(2.0) } else { 2.0 });
        }
    }
    Ok(radii)
}

/// Empirical transition frequencies, falling back to the posterior mean on
/// unvisited rows.
pub fn hoeffding_centers(posterior: &DirichletPosterior) -> TransitionModel {
    let mean = PosteriorMoments::from_dirichlet(posterior);
    let (ns, na) = (posterior.num_states(), posterior.num_actions());
    let mut probs = Vec::with_capacity(ns * na * ns);
    for s in 0..ns {
        for a in 0..na {
            match posterior.empirical_frequencies(s, a) {
                Some(freq) => probs.extend(freq),
                None => probs.extend_from_slice(mean.mean_row(s, a)),
            }
        }
    }
    TransitionModel::from_rows_unchecked(ns, na, probs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoeffdingMode {
    Naive,
    Optimized,
}

/// Factor turning the unit-weight Hoeffding radius into a valid radius for
/// the `b`-weighted `ℓ1` norm: `(b₍₁₎ + b₍₂₎)/2`, half the largest range of
/// `Σ σ_i b_i 1{X = i}` over sign vectors `σ`.
pub fn weighted_hoeffding_scale(weights: &[f64]) -> f64 {
    let (mut first, mut second) = (0.0f64, 0.0f64);
    for &b in weights {
        if b > first {
            second = first;
            first = b;
        } else if b > second {
            second = b;
        }
    }
    if weights.len() < 2 {
        first
    } else {
        0.5 * (first + second)
    }
}

/// Hoeffding-set robust solve. The optimized mode reweights successor states
/// by value spread (largest weight one) and rescales each radius by
/// [`weighted_hoeffding_scale`], which keeps the concentration guarantee.
pub fn hoeffding_solve(
    mdp: &TabularMdp,
    posterior: &DirichletPosterior,
    delta: f64,
    mode: HoeffdingMode,
    epsilon: f64,
    outer_iterations: usize,
) -> Result<(RobustSolution, AmbiguitySetSpec)> {
    let centers = hoeffding_centers(posterior);
    let base_radii = hoeffding_radius(posterior, delta)?;
    let spec = AmbiguitySetSpec::unweighted(Norm::L1, &centers, base_radii.clone())?;
    let sol = robust_value_iteration(mdp, &spec, epsilon)?;
    if mode == HoeffdingMode::Naive {
        return Ok((sol, spec));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    refine_weights(mdp, spec, sol, epsilon, outer_iterations, |v| {
        let mut weights = weights_from_values(mdp, centers.probs(), v)?;
        let mut radii = base_radii.clone();
        for (row, r) in weights.chunks_exact_mut(ns).zip(radii.iter_mut()) {
            let top = row.iter().copied().fold(0.0, f64::max);
            row.iter_mut().for_each(|b| *b /= top);
            *r *= weighted_hoeffding_scale(row);
        }
        AmbiguitySetSpec::new(Norm::L1, ns, na, centers.probs().to_vec(), weights, radii)
    })
}

/// Value iteration on the posterior mean kernel.
pub fn soft_robust_solve(mdp: &TabularMdp, moments: &PosteriorMoments, epsilon: f64) -> Result<RobustSolution> {
    value_iteration(mdp, &moments.mean_model(), epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::bellman_optimality_update;
    use crate::posterior::sample_models;
    use crate::testutil::{random_ensemble, random_instance};
    use crate::var::empirical_var;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example_mdp() -> TabularMdp {
        let mut rewards = vec![0.0; 16];
        rewards[1] = 0.25;
        rewards[2] = 0.25;
        rewards[3] = -1.0;
        TabularMdp::new(4, 1, 0.0, vec![1.0, 0.0, 0.0, 0.0], rewards).unwrap()
    }

    fn example_posterior() -> DirichletPosterior {
        let mut conc = vec![1e-3; 16];
        conc[1] = 10.0;
        conc[2] = 10.0;
        conc[3] = 1.0;
        for t in 1..4 {
            conc[t * 4 + t] = 1e6;
        }
        DirichletPosterior::new(4, 1, 0.0, conc).unwrap()
    }

    #[test]
    fn coverage_rank_edges() {
        assert_eq!(coverage_rank(100, 0.2), 80);
        assert_eq!(coverage_rank(100, 1e-9), 100);
        assert_eq!(coverage_rank(10, 0.95), 1);
        assert_eq!(coverage_rank(7, 0.5), 4);
    }

    #[test]
    fn fitted_radius_covers_exact_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let ens = random_ensemble(&mut rng, 4, 2, 37);
            let centers = ens.mean_model();
            let weights: Vec<f64> = (0..centers.probs().len()).map(|_| rng.gen_range(0.5..2.0)).collect();
            let norm = if trial % 2 == 0 { Norm::L1 } else { Norm::LInf };
            let alpha = 0.15;
            let radii = fit_bcr_radius(&ens, centers.probs(), &weights, norm, alpha).unwrap();
            let spec = AmbiguitySetSpec::new(norm, 4, 2, centers.probs().to_vec(), weights, radii).unwrap();
            let need = coverage_rank(37, alpha);
            for s in 0..4 {
                for a in 0..2 {
                    let inside = ens.models().iter().filter(|m| spec.contains(s, a, m.row(s, a), 0.0)).count();
                    assert!(inside >= need, "row ({s},{a}): {inside} < {need}");
                }
            }
        }
    }

    #[test]
    fn point_mass_ensemble_has_zero_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let one = random_ensemble(&mut rng, 3, 2, 1);
        let ens = ModelEnsemble::new(vec![one.models()[0].clone(); 15], 0).unwrap();
        let spec = bcr_ambiguity_set(&ens, Norm::L1, 0.1).unwrap();
        assert!(spec.radii().iter().all(|r| *r < 1e-15));
        let spec = bcr_ambiguity_set(&ens, Norm::LInf, 1e-6).unwrap();
        assert!(spec.radii().iter().all(|r| *r < 1e-15));
    }

    #[test]
    fn tiny_alpha_radius_is_max_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ens = random_ensemble(&mut rng, 3, 1, 20);
        let spec = bcr_ambiguity_set(&ens, Norm::L1, 1e-6).unwrap();
        let max = ens
            .models()
            .iter()
            .map(|m| weighted_norm_distance(m.row(0, 0), spec.center(0, 0), spec.weight_row(0, 0), Norm::L1))
            .fold(0.0, f64::max);
        assert_eq!(spec.radius(0, 0), max);
    }

    #[test]
    fn example_radius_and_robust_value() {
        let mdp = example_mdp();
        let mut radii = Vec::new();
        let mut values = Vec::new();
        for seed in 0..20 {
            let ens = sample_models(&example_posterior(), 100, seed).unwrap();
            let spec = bcr_ambiguity_set(&ens, Norm::L1, 0.2).unwrap();
            radii.push(spec.radius(0, 0));
            values.push(robust_value_iteration(&mdp, &spec, 1e-6).unwrap().value[0]);
        }
        let mean_r = radii.iter().sum::<f64>() / 20.0;
        let mean_v = values.iter().sum::<f64>() / 20.0;
        assert!((mean_r - 0.277).abs() < 0.05, "radius {mean_r}");
        assert!((mean_v - 0.025).abs() < 0.05, "value {mean_v}");
    }

    #[test]
    fn zero_radius_is_classical_vi() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let (mdp, model) = random_instance(&mut rng, 5, 3, 0.8);
            let spec = AmbiguitySetSpec::unweighted(Norm::L1, &model, vec![0.0; 15]).unwrap();
            let robust = robust_value_iteration(&mdp, &spec, 1e-8).unwrap();
            let classic = value_iteration(&mdp, &model, 1e-8).unwrap();
            assert!(robust.value.sup_distance(&classic.value) < 1e-12);
            assert_eq!(robust.policy, classic.policy);
        }
    }

    #[test]
    fn robust_update_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..30 {
            let (mdp, model) = random_instance(&mut rng, 5, 2, 0.9);
            let norm = if trial % 2 == 0 { Norm::L1 } else { Norm::LInf };
            let radii: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..0.6)).collect();
            let weights: Vec<f64> = (0..50).map(|_| rng.gen_range(0.5..2.0)).collect();
            let spec = AmbiguitySetSpec::new(norm, 5, 2, model.probs().to_vec(), weights.clone(), radii.clone()).unwrap();
            let wider = AmbiguitySetSpec::new(
                norm,
                5,
                2,
                model.probs().to_vec(),
                weights,
                radii.iter().map(|r| r + 0.1).collect(),
            )
            .unwrap();
            let u = ValueFunction((0..5).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let v = ValueFunction((0..5).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let (tu, _) = robust_bellman_update(&mdp, &spec, &u).unwrap();
            let (tv, _) = robust_bellman_update(&mdp, &spec, &v).unwrap();
            assert!(tu.sup_distance(&tv) <= 0.9 * u.sup_distance(&v) + 1e-12);
            let (nominal, _) = bellman_optimality_update(&mdp, &model, &u).unwrap();
            let (wide, _) = robust_bellman_update(&mdp, &wider, &u).unwrap();
            for s in 0..5 {
                assert!(tu[s] <= nominal[s] + 1e-12);
                assert!(wide[s] <= tu[s] + 1e-12);
            }
        }
    }

    #[test]
    fn weight_examples() {
        let mdp = TabularMdp::new(3, 1, 0.0, vec![1.0, 0.0, 0.0], {
            let mut r = vec![0.0; 9];
            r[0] = 1.0;
            r
        })
        .unwrap();
        let centers = vec![1.0 / 3.0; 9];
        let w = weights_from_values(&mdp, &centers, &ValueFunction::zeros(3)).unwrap();
        let raw = [2.0 / 3.0 + WEIGHT_FLOOR, 1.0 / 3.0 + WEIGHT_FLOOR, 1.0 / 3.0 + WEIGHT_FLOOR];
        let avg = raw.iter().sum::<f64>() / 3.0;
        for i in 0..3 {
            assert!((w[i] - raw[i] / avg).abs() < 1e-12);
        }
        // Constant returns give equal weights.
        for i in 3..9 {
            assert!((w[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_always_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (mdp, _) = random_instance(&mut rng, 6, 3, 0.9);
            let ens = random_ensemble(&mut rng, 6, 3, 10);
            let v = ValueFunction((0..6).map(|_| rng.gen_range(-10.0..10.0)).collect());
            let w = optimize_weights(&mdp, &ens, &v).unwrap();
            assert!(w.iter().all(|b| *b > 0.0));
            for row in w.chunks_exact(6) {
                assert!((row.iter().sum::<f64>() / 6.0 - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weighted_bcr_keeps_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mdp, _) = random_instance(&mut rng, 4, 2, 0.8);
        let ens = random_ensemble(&mut rng, 4, 2, 60);
        let (sol, spec) = weighted_bcr_solve(&mdp, &ens, Norm::L1, 0.1, 1e-6, 5).unwrap();
        assert!(sol.converged);
        let need = coverage_rank(60, 0.1);
        for s in 0..4 {
            for a in 0..2 {
                let inside = ens.models().iter().filter(|m| spec.contains(s, a, m.row(s, a), 0.0)).count();
                assert!(inside >= need);
            }
        }
    }

    #[test]
    fn hoeffding_radius_examples() {
        let mut conc = vec![0.5; 8];
        conc[0] += 5.0;
        conc[1] += 3.0;
        let post = DirichletPosterior::new(2, 2, 0.5, conc).unwrap();
        let radii = hoeffding_radius(&post, 0.1).unwrap();
        let expected = (0.25 * (2.0 * 2.0 * 4.0 / 0.1f64).ln()).sqrt();
        assert!((radii[0] - expected.min(2.0)).abs() < 1e-12);
        assert_eq!(radii[1], 2.0);

        let post = DirichletPosterior::new(2, 1, 1.0, vec![5.0, 5.0, 1.0, 1.0]).unwrap();
        let radii = hoeffding_radius(&post, 0.1).unwrap();
        assert!((radii[0] - 1.046_664_539_701_460_6).abs() < 1e-12);
        let big = DirichletPosterior::new(2, 1, 1.0, vec![1e12, 1e12, 1.0, 1.0]).unwrap();
        assert!(hoeffding_radius(&big, 0.1).unwrap()[0] < 1e-4);
    }

    #[test]
    fn hoeffding_centers_fall_back_to_mean() {
        let post = DirichletPosterior::new(2, 1, 1.0, vec![4.0, 2.0, 1.0, 1.0]).unwrap();
        let c = hoeffding_centers(&post);
        assert_eq!(c.row(0, 0), &[0.75, 0.25]);
        assert_eq!(c.row(1, 0), &[0.5, 0.5]);
    }

    #[test]
    fn weighted_hoeffding_scale_examples() {
        assert_eq!(weighted_hoeffding_scale(&[1.0, 1.0, 1.0]), 1.0);
        assert_eq!(weighted_hoeffding_scale(&[0.2, 1.0, 0.6]), 0.8);
        assert_eq!(weighted_hoeffding_scale(&[0.5]), 0.5);
    }

    #[test]
    fn weighted_hoeffding_ball_covers_simplex_when_unvisited() {
        // Scaled diameter radius still contains every vertex.
        let center = [0.1, 0.6, 0.3];
        let b = [0.3, 1.0, 0.7];
        let r = 2.0 * weighted_hoeffding_scale(&b);
        for k in 0..3 {
            let mut e = [0.0; 3];
            e[k] = 1.0;
            assert!(weighted_norm_distance(&e, &center, &b, Norm::L1) <= r + 1e-12);
        }
    }

    #[test]
    fn weighted_hoeffding_deviation_bound_holds_empirically() {
        // Frequencies from n draws stay inside the weighted ball far more
        // often than 1 − δ.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = [0.5, 0.3, 0.2];
        let b = [0.2, 1.0, 0.5];
        let n = 50;
        let delta = 0.1;
        let post = DirichletPosterior::new(3, 1, 1.0, vec![1.0 + n as f64, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let radius = hoeffding_radius(&post, delta).unwrap()[0] * weighted_hoeffding_scale(&b);
        let trials = 2000;
        let mut inside = 0;
        for _ in 0..trials {
            let mut counts = [0.0; 3];
            for _ in 0..n {
                let u: f64 = rng.gen();
                let i = if u < p[0] { 0 } else if u < p[0] + p[1] { 1 } else { 2 };
                counts[i] += 1.0;
            }
            let freq: Vec<f64> = counts.iter().map(|c| c / n as f64).collect();
            if weighted_norm_distance(&freq, &p, &b, Norm::L1) <= radius {
                inside += 1;
            }
        }
        assert!(inside as f64 / trials as f64 >= 1.0 - delta);
    }

    #[test]
    fn refined_solvers_never_lower_the_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let (mdp, _) = random_instance(&mut rng, 4, 2, 0.8);
            let conc: Vec<f64> = (0..32).map(|_| 1.0 + rng.gen_range(0..20) as f64).collect();
            let post = DirichletPosterior::new(4, 2, 1.0, conc).unwrap();
            let p0 = mdp.initial_dist().to_vec();
            let (naive, _) = hoeffding_solve(&mdp, &post, 0.05, HoeffdingMode::Naive, 1e-8, 0).unwrap();
            let (opt, spec) = hoeffding_solve(&mdp, &post, 0.05, HoeffdingMode::Optimized, 1e-8, 5).unwrap();
            assert!(spec.weights().iter().all(|b| *b > 0.0 && *b <= 1.0 + 1e-15));
            assert!(dot(&p0, &opt.value) >= dot(&p0, &naive.value) - 1e-12);

            let ens = sample_models(&post, 40, 3).unwrap();
            let plain = robust_value_iteration(&mdp, &bcr_ambiguity_set(&ens, Norm::LInf, 0.05).unwrap(), 1e-8).unwrap();
            let (weighted, _) = weighted_bcr_solve(&mdp, &ens, Norm::LInf, 0.05, 1e-8, 5).unwrap();
            assert!(dot(&p0, &weighted.value) >= dot(&p0, &plain.value) - 1e-12);
        }
    }

    #[test]
    fn soft_robust_matches_mean_model_vi_and_dominates_var_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (mdp, _) = random_instance(&mut rng, 5, 2, 0.9);
            let ens = random_ensemble(&mut rng, 5, 2, 40);
            let moments = PosteriorMoments::from_ensemble(&ens);
            let soft = soft_robust_solve(&mdp, &moments, 1e-8).unwrap();
            let vi = value_iteration(&mdp, &ens.mean_model(), 1e-8).unwrap();
            assert!(soft.value.sup_distance(&vi.value) < 1e-8);
            let v = ValueFunction((0..5).map(|_| rng.gen_range(-2.0..2.0)).collect());
            for s in 0..5 {
                for a in 0..2 {
                    let mut w = vec![0.0; 5];
                    one_step_returns_into(&mdp, &v, s, a, &mut w);
                    let returns: Vec<f64> = ens.models().iter().map(|m| crate::mdp::dot(m.row(s, a), &w)).collect();
                    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
                    assert!(empirical_var(&returns, 0.2).unwrap() <= mean + 1e-12);
                }
            }
        }
    }

    #[test]
    fn spec_json_roundtrip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ens = random_ensemble(&mut rng, 3, 2, 10);
        let spec = bcr_ambiguity_set(&ens, Norm::LInf, 0.2).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: AmbiguitySetSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
        assert!(text.contains("\"linf\""));
        let bad = text.replace("\"norm\"", "\"nrom\"");
        assert!(serde_json::from_str::<AmbiguitySetSpec>(&bad).is_err());
        assert!(AmbiguitySetSpec::new(Norm::L1, 2, 1, vec![0.5, 0.5, 0.5, 0.5], vec![1.0, 0.0, 1.0, 1.0], vec![0.1, 0.1]).is_err());
        assert!(AmbiguitySetSpec::new(Norm::L1, 2, 1, vec![0.5, 0.5, 0.5, 0.5], vec![1.0; 4], vec![-0.1, 0.1]).is_err());
    }
}
