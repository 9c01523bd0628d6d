//! Dirichlet posterior over transition kernels: conjugate updates from batch
//! data, reproducible ensemble sampling and per-(s,a) moments.
//!
//! # File formats
//!
//! Datasets are CSV with header `s,a,r,s_next`.
//!
//! Ensembles are little-endian binary:
//!
//! ```text
//! offset  size      field
//! 0       8         magic "VARENS01"
//! 8       8         num_states (u64)
//! 16      8         num_actions (u64)
//! 24      8         num_models (u64)
//! 32      8         seed (u64)
//! 40      8*M*S*A*S probabilities (f64), model-major then s, a, s'
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TransitionModel, SIMPLEX_TOLERANCE};

pub const ENSEMBLE_MAGIC: &[u8; 8] = b"VARENS01";

/// Default Dirichlet prior pseudo-count per successor state.
pub const DEFAULT_PRIOR: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchDataset {
    pub tuples: Vec<Transition>,
}

impl BatchDataset {
    pub fn new(tuples: Vec<Transition>) -> Self {
        Self { tuples }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn validate(&self, num_states: usize, num_actions: usize) -> Result<()> {
        for t in &self.tuples {
            if t.s >= num_states {
                return Err(Error::IndexOutOfRange {
                    what: "state",
                    index: t.s,
                    bound: num_states,
                });
            }
            if t.s_next >= num_states {
                return Err(Error::IndexOutOfRange {
                    what: "next state",
                    index: t.s_next,
                    bound: num_states,
                });
            }
            if t.a >= num_actions {
                return Err(Error::IndexOutOfRange {
                    what: "action",
                    index: t.a,
                    bound: num_actions,
                });
            }
            if !t.r.is_finite() {
                return Err(Error::InvalidModel("dataset reward is not finite".into()));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        for t in &self.tuples {
            out.serialize(t)?;
        }
        if self.tuples.is_empty() {
            out.write_record(["s", "a", "r", "s_next"])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        let headers = input.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["s", "a", "r", "s_next"] {
            return Err(Error::Format(format!(
                "dataset header must be s,a,r,s_next, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let tuples = input
            .deserialize()
            .collect::<std::result::Result<Vec<Transition>, _>>()?;
        Ok(Self { tuples })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Independent Dirichlet posteriors, one per `(s, a)` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PosteriorDocument", into = "PosteriorDocument")]
pub struct DirichletPosterior {
    num_states: usize,
    num_actions: usize,
    prior: f64,
    concentration: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PosteriorDocument {
    num_states: usize,
    num_actions: usize,
    prior: f64,
    concentration: Vec<f64>,
}

impl TryFrom<PosteriorDocument> for DirichletPosterior {
    type Error = Error;

    fn try_from(doc: PosteriorDocument) -> Result<Self> {
        DirichletPosterior::new(doc.num_states, doc.num_actions, doc.prior, doc.concentration)
    }
}

impl From<DirichletPosterior> for PosteriorDocument {
    fn from(p: DirichletPosterior) -> Self {
        PosteriorDocument {
            num_states: p.num_states,
            num_actions: p.num_actions,
            prior: p.prior,
            concentration: p.concentration,
        }
    }
}

impl DirichletPosterior {
    /// `concentration` is flattened `α[s][a][s']`; `prior` is the pseudo-count
    /// already folded into it (used to recover visit counts).
    pub fn new(num_states: usize, num_actions: usize, prior: f64, concentration: Vec<f64>) -> Result<Self> {
        if concentration.len() != num_states * num_actions * num_states {
            return Err(Error::Shape(format!(
                "concentration has {} entries, expected {}",
                concentration.len(),
                num_states * num_actions * num_states
            )));
        }
        if concentration.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::InvalidModel(
                "Dirichlet concentrations must be positive and finite".into(),
            ));
        }
        if !(prior >= 0.0) {
            return Err(Error::Domain(format!("prior {prior} must be nonnegative")));
        }
        Ok(Self {
            num_states,
            num_actions,
            prior,
            concentration,
        })
    }

    /// A posterior whose every row is the same Dirichlet.
    pub fn uniform_rows(num_states: usize, num_actions: usize, row: &[f64]) -> Result<Self> {
        if row.len() != num_states {
            return Err(Error::Shape("row length must equal num_states".into()));
        }
        let concentration = row.repeat(num_states * num_actions);
        Self::new(num_states, num_actions, 0.0, concentration)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn concentration(&self) -> &[f64] {
        &self.concentration
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.concentration[start..start + self.num_states]
    }

    /// Observed transitions out of `(s, a)`.
    pub fn visit_count(&self, s: usize, a: usize) -> f64 {
        self.row(s, a).iter().map(|c| (c - self.prior).max(0.0)).sum()
    }

    /// Maximum-likelihood transition frequencies, `None` for unvisited rows.
    pub fn empirical_frequencies(&self, s: usize, a: usize) -> Option<Vec<f64>> {
        let n = self.visit_count(s, a);
        if n <= 0.0 {
            return None;
        }
        Some(
            self.row(s, a)
                .iter()
                .map(|c| (c - self.prior).max(0.0) / n)
                .collect(),
        )
    }
}

/// Conjugate update: `α[s][a][s'] = prior + #{(s, a, s')}`.
pub fn counts_from_dataset(
    dataset: &BatchDataset,
    num_states: usize,
    num_actions: usize,
    prior_pseudocount: f64,
) -> Result<DirichletPosterior> {
    if !(prior_pseudocount > 0.0) {
        return Err(Error::Domain(format!(
            "prior pseudo-count {prior_pseudocount} must be positive"
        )));
    }
    dataset.validate(num_states, num_actions)?;
    let mut concentration = vec![prior_pseudocount; num_states * num_actions * num_states];
    for t in &dataset.tuples {
        concentration[(t.s * num_actions + t.a) * num_states + t.s_next] += 1.0;
    }
    DirichletPosterior::new(num_states, num_actions, prior_pseudocount, concentration)
}

/// M transition kernels drawn from the posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelEnsemble {
    num_states: usize,
    num_actions: usize,
    seed: u64,
    models: Vec<TransitionModel>,
}

impl ModelEnsemble {
    pub fn new(models: Vec<TransitionModel>, seed: u64) -> Result<Self> {
        let first = models.first().ok_or(Error::Empty("model ensemble"))?;
        let (num_states, num_actions) = (first.num_states(), first.num_actions());
        if models
            .iter()
            .any(|m| m.num_states() != num_states || m.num_actions() != num_actions)
        {
            return Err(Error::Shape("ensemble members differ in shape".into()));
        }
        Ok(Self {
            num_states,
            num_actions,
            seed,
            models,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[TransitionModel] {
        &self.models
    }

    /// Members at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let models = indices
            .iter()
            .map(|&i| {
                self.models.get(i).cloned().ok_or(Error::IndexOutOfRange {
                    what: "ensemble member",
                    index: i,
                    bound: self.models.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(models, self.seed)
    }

    /// Posterior mean kernel.
    pub fn mean_model(&self) -> TransitionModel {
        let mut probs = vec![0.0; self.models[0].probs().len()];
        for m in &self.models {
            for (acc, p) in probs.iter_mut().zip(m.probs()) {
                *acc += p;
            }
        }
        let inv = 1.0 / self.models.len() as f64;
        probs.iter_mut().for_each(|p| *p *= inv);
        TransitionModel::from_rows_unchecked(self.num_states, self.num_actions, probs)
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(ENSEMBLE_MAGIC)?;
        for field in [
            self.num_states as u64,
            self.num_actions as u64,
            self.models.len() as u64,
            self.seed,
        ] {
            writer.write_all(&field.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(8 * self.models[0].probs().len());
        for m in &self.models {
            buf.clear();
            for p in m.probs() {
                buf.extend_from_slice(&p.to_le_bytes());
            }
            writer.write_all(&buf)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut reader: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic)?;
        if &magic != ENSEMBLE_MAGIC {
            return Err(Error::Format("not an ensemble file (bad magic)".into()));
        }
        let mut header = [0u64; 4];
        for field in header.iter_mut() {
            let mut bytes = [0u8; 8];
            reader.read_exact(&mut bytes)?;
            *field = u64::from_le_bytes(bytes);
        }
        let [num_states, num_actions, num_models, seed] = header;
        let (num_states, num_actions, num_models) =
            (num_states as usize, num_actions as usize, num_models as usize);
        if num_models == 0 || num_states == 0 || num_actions == 0 {
            return Err(Error::Format("ensemble header has a zero dimension".into()));
        }
        let per_model = num_states * num_actions * num_states;
        let mut bytes = vec![0u8; 8 * per_model];
        let mut models = Vec::with_capacity(num_models);
        for _ in 0..num_models {
            reader.read_exact(&mut bytes)?;
            let probs = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            models.push(TransitionModel::new(num_states, num_actions, probs)?);
        }
        let mut trailing = [0u8; 1];
        if reader.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after ensemble payload".into()));
        }
        Self::new(models, seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Draws `num_models` kernels. Row `(s, a)` uses its own ChaCha stream
/// (`seed`, stream `s·A + a`), so the result is independent of scheduling.
pub fn sample_models(posterior: &DirichletPosterior, num_models: usize, seed: u64) -> Result<ModelEnsemble> {
    if num_models == 0 {
        return Err(Error::Domain("ensemble size must be at least 1".into()));
    }
    let (ns, na) = (posterior.num_states, posterior.num_actions);
    let rows: Vec<Vec<f64>> = (0..ns * na)
        .into_par_iter()
        .map(|row| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(row as u64);
            let alpha = &posterior.concentration[row * ns..(row + 1) * ns];
            sample_dirichlet_rows(&mut rng, alpha, num_models)
        })
        .collect::<Result<_>>()?;

    let models = (0..num_models)
        .map(|m| {
            let mut probs = Vec::with_capacity(ns * na * ns);
            for row in &rows {
                probs.extend_from_slice(&row[m * ns..(m + 1) * ns]);
            }
            TransitionModel::from_rows_unchecked(ns, na, probs)
        })
        .collect();
    ModelEnsemble::new(models, seed)
}

fn sample_dirichlet_rows(rng: &mut ChaCha8Rng, alpha: &[f64], count: usize) -> Result<Vec<f64>> {
    let gammas = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::Domain(format!("Dirichlet parameter {a}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(count * alpha.len());
    let mut draw = vec![0.0; alpha.len()];
    for _ in 0..count {
        for (d, g) in draw.iter_mut().zip(&gammas) {
            *d = g.sample(rng);
        }
        let total: f64 = draw.iter().sum();
        if total > 0.0 && total.is_finite() {
            out.extend(draw.iter().map(|d| d / total));
        } else {
            // Every coordinate underflowed; only reachable for tiny concentrations.
            let top = alpha
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(y.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            out.extend((0..alpha.len()).map(|i| if i == top { 1.0 } else { 0.0 }));
        }
    }
    Ok(out)
}

/// Per-(s,a) mean vectors and covariance matrices of the transition posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMoments {
    num_states: usize,
    num_actions: usize,
    mean: Vec<f64>,
    cov: Vec<f64>,
}

impl PosteriorMoments {
    /// `mean` is flattened `p̄[s][a][i]`, `cov` is `Σ[s][a][i][j]`.
    pub fn new(num_states: usize, num_actions: usize, mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let rows = num_states * num_actions;
        if mean.len() != rows * num_states || cov.len() != rows * num_states * num_states {
            return Err(Error::Shape("moment tensors do not match (S, A)".into()));
        }
        for row in mean.chunks_exact(num_states) {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::InvalidModel(format!("mean row sums to {total}")));
            }
        }
        for block in cov.chunks_exact(num_states * num_states) {
            for i in 0..num_states {
                for j in 0..i {
                    if (block[i * num_states + j] - block[j * num_states + i]).abs() > 1e-8 {
                        return Err(Error::InvalidModel("covariance is not symmetric".into()));
                    }
                }
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            mean,
            cov,
        })
    }

    /// Closed-form Dirichlet moments: `m = α/α₀`, `Σ = (diag(m) − m mᵀ)/(α₀ + 1)`.
    pub fn from_dirichlet(posterior: &DirichletPosterior) -> Self {
        let n = posterior.num_states;
        let rows = n * posterior.num_actions;
        let mut mean = Vec::with_capacity(rows * n);
        let mut cov = Vec::with_capacity(rows * n * n);
        for alpha in posterior.concentration.chunks_exact(n) {
            let total: f64 = alpha.iter().sum();
            let m: Vec<f64> = alpha.iter().map(|a| a / total).collect();
            let scale = 1.0 / (total + 1.0);
            for i in 0..n {
                for j in 0..n {
                    let diag = if i == j { m[i] } else { 0.0 };
                    cov.push((diag - m[i] * m[j]) * scale);
                }
            }
            mean.extend(m);
        }
        Self {
            num_states: n,
            num_actions: posterior.num_actions,
            mean,
            cov,
        }
    }

    /// Sample mean and unbiased sample covariance; a single-member ensemble
    /// yields zero covariance.
    pub fn from_ensemble(ensemble: &ModelEnsemble) -> Self {
        let n = ensemble.num_states;
        let rows = n * ensemble.num_actions;
        let count = ensemble.len();
        let mean_model = ensemble.mean_model();
        let mean = mean_model.probs().to_vec();
        let mut cov = vec![0.0; rows * n * n];
        if count > 1 {
            let denom = 1.0 / (count - 1) as f64;
            for row in 0..rows {
                let m = &mean[row * n..(row + 1) * n];
                let block = &mut cov[row * n * n..(row + 1) * n * n];
                for model in ensemble.models() {
                    let p = &model.probs()[row * n..(row + 1) * n];
                    for i in 0..n {
                        let di = p[i] - m[i];
                        if di == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            block[i * n + j] += di * (p[j] - m[j]);
                        }
                    }
                }
                block.iter_mut().for_each(|c| *c *= denom);
            }
        }
        Self {
            num_states: n,
            num_actions: ensemble.num_actions,
            mean,
            cov,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn mean_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.mean[start..start + self.num_states]
    }

    pub fn cov_block(&self, s: usize, a: usize) -> &[f64] {
        let n = self.num_states;
        let start = (s * self.num_actions + a) * n * n;
        &self.cov[start..start + n * n]
    }

    /// Mean kernel as a transition model.
    pub fn mean_model(&self) -> TransitionModel {
        TransitionModel::from_rows_unchecked(self.num_states, self.num_actions, self.mean.clone())
    }

    /// `wᵀ Σ_{s,a} w`, unclamped.
    pub fn quadratic_form(&self, s: usize, a: usize, w: &[f64]) -> f64 {
        let n = self.num_states;
        let block = self.cov_block(s, a);
        let mut total = 0.0;
        for i in 0..n {
            let row = &block[i * n..(i + 1) * n];
            total += w[i] * row.iter().zip(w).map(|(c, x)| c * x).sum::<f64>();
        }
        total
    }
}
