//! Exact inner minimizations `min { pᵀw : p ∈ Δ, ‖p − p̄‖_{q,b} ≤ ψ }`.

use crate::error::{Error, Result};
use crate::mdp::dot;

const PIVOT_TOL: f64 = 1e-12;

/// `Σ b_i |p_i − p̄_i|` for `q = 1`, `max_i b_i |p_i − p̄_i|` for `q = ∞`.
pub fn weighted_norm_distance(p: &[f64], center: &[f64], weights: &[f64], norm: super::Norm) -> f64 {
    let terms = p
        .iter()
        .zip(center)
        .zip(weights)
        .map(|((x, c), b)| b * (x - c).abs());
    match norm {
        super::Norm::L1 => terms.sum(),
        super::Norm::LInf => terms.fold(0.0, f64::max),
    }
}

fn check_inputs(center: &[f64], w: &[f64], radius: f64, weights: &[f64]) -> Result<()> {
    if center.is_empty() || center.len() != w.len() || center.len() != weights.len() {
        return Err(Error::Shape("center, returns and weights must share a nonzero length".into()));
    }
    if weights.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
        return Err(Error::Domain("norm weights must be positive and finite".into()));
    }
    if !(radius >= 0.0) {
        return Err(Error::Domain(format!("radius {radius} must be nonnegative")));
    }
    if w.iter().any(|x| x.is_nan()) {
        return Err(Error::NaN("returns"));
    }
    Ok(())
}

fn argmin_first(w: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in w.iter().enumerate() {
        if *x < w[best] {
            best = i;
        }
    }
    best
}

fn vertex(len: usize, at: usize) -> Vec<f64> {
    let mut p = vec![0.0; len];
    p[at] = 1.0;
    p
}

/// Worst case over a weighted `ℓ∞` ball: start from the lower box bounds and
/// pour the remaining mass into successors in ascending-`w` order.
pub fn worst_case_linf(center: &[f64], w: &[f64], radius: f64, weights: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_inputs(center, w, radius, weights)?;
    let n = center.len();
    let lower: Vec<f64> = center
        .iter()
        .zip(weights)
        .map(|(c, b)| (c - radius / b).max(0.0))
        .collect();
    let upper: Vec<f64> = center
        .iter()
        .zip(weights)
        .map(|(c, b)| (c + radius / b).min(1.0))
        .collect();
    if upper.iter().sum::<f64>() < 1.0 - 1e-12 {
        return Err(Error::Infeasible("upper box bounds sum below one".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[i].total_cmp(&w[j]).then(i.cmp(&j)));
    let mut p = lower.clone();
    let mut residual = 1.0 - lower.iter().sum::<f64>();
    for i in order {
        if residual <= 0.0 {
            break;
        }
        let add = (upper[i] - lower[i]).min(residual);
        p[i] += add;
        residual -= add;
    }
    let value = dot(&p, w);
    Ok((p, value))
}

/// Worst case over a weighted `ℓ1` ball, solved exactly as a two-row
/// bounded-variable linear program.
///
/// Writing `p = p̄ + x − y` with `x ≥ 0` the mass received and
/// `0 ≤ y ≤ p̄` the mass donated, the problem is
/// `min wᵀ(x − y)` subject to `Σx − Σy = 0` and `Σb(x + y) ≤ ψ`.
pub fn worst_case_l1(center: &[f64], w: &[f64], radius: f64, weights: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_inputs(center, w, radius, weights)?;
    let n = center.len();
    if radius == 0.0 || n == 1 {
        return Ok((center.to_vec(), dot(center, w)));
    }
    let b_max = weights.iter().copied().fold(0.0, f64::max);
    if radius >= 2.0 * b_max {
        let at = argmin_first(w);
        return Ok((vertex(n, at), w[at]));
    }
    let lp = TwoRowLp::for_l1(center, w, radius, weights);
    let z = lp.solve()?;
    let mut p: Vec<f64> = (0..n)
        .map(|i| (center[i] + z[i] - z[n + i]).max(0.0))
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    let value = dot(&p, w);
    Ok((p, value))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

/// `min cᵀz` s.t. `A z = rhs` (two rows), `0 ≤ z ≤ upper`.
struct TwoRowLp {
    cost: Vec<f64>,
    rows: [Vec<f64>; 2],
    rhs: [f64; 2],
    upper: Vec<f64>,
    basis: [usize; 2],
}

impl TwoRowLp {
    fn for_l1(center: &[f64], w: &[f64], radius: f64, weights: &[f64]) -> Self {
        let n = center.len();
        let m = 2 * n + 1;
        let mut cost = vec![0.0; m];
        let mut row0 = vec![0.0; m];
        let mut row1 = vec![0.0; m];
        let mut upper = vec![f64::INFINITY; m];
        for i in 0..n {
            cost[i] = w[i];
            cost[n + i] = -w[i];
            row0[i] = 1.0;
            row0[n + i] = -1.0;
            row1[i] = weights[i];
            row1[n + i] = weights[i];
            upper[n + i] = center[i];
        }
        row1[2 * n] = 1.0;
        TwoRowLp {
            cost,
            rows: [row0, row1],
            rhs: [0.0, radius],
            upper,
            basis: [0, 2 * n],
        }
    }

    fn column(&self, j: usize) -> [f64; 2] {
        [self.rows[0][j], self.rows[1][j]]
    }

    fn solve(mut self) -> Result<Vec<f64>> {
        let m = self.cost.len();
        let mut status = vec![Status::AtLower; m];
        for &j in &self.basis {
            status[j] = Status::Basic;
        }
        let max_pivots = 50 * m + 100;
        for _ in 0..max_pivots {
            let [c0, c1] = [self.column(self.basis[0]), self.column(self.basis[1])];
            let det = c0[0] * c1[1] - c1[0] * c0[1];
            if det.abs() < PIVOT_TOL {
                return Err(Error::Numerical("singular basis in l1 inner problem".into()));
            }
            let solve = |v: [f64; 2]| [(v[0] * c1[1] - c1[0] * v[1]) / det, (c0[0] * v[1] - v[0] * c0[1]) / det];

            let mut reduced_rhs = self.rhs;
            for j in 0..m {
                if status[j] == Status::AtUpper {
                    reduced_rhs[0] -= self.rows[0][j] * self.upper[j];
                    reduced_rhs[1] -= self.rows[1][j] * self.upper[j];
                }
            }
            let xb = solve(reduced_rhs);
            // Duals π solve Bᵀπ = c_B.
            let cb = [self.cost[self.basis[0]], self.cost[self.basis[1]]];
            let pi = [(cb[0] * c1[1] - cb[1] * c0[1]) / det, (cb[1] * c0[0] - cb[0] * c1[0]) / det];

            let scale = 1.0 + self.cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
            let entering = (0..m).find_map(|j| {
                let d = self.cost[j] - pi[0] * self.rows[0][j] - pi[1] * self.rows[1][j];
                match status[j] {
                    Status::AtLower if d < -PIVOT_TOL * scale && self.upper[j] > 0.0 => Some((j, 1.0)),
                    Status::AtUpper if d > PIVOT_TOL * scale => Some((j, -1.0)),
                    _ => None,
                }
            });
            let Some((j, dir)) = entering else {
                let mut z = vec![0.0; m];
                for k in 0..m {
                    if status[k] == Status::AtUpper {
                        z[k] = self.upper[k];
                    }
                }
                z[self.basis[0]] = xb[0];
                z[self.basis[1]] = xb[1];
                return Ok(z);
            };

            let alpha = solve(self.column(j));
            let mut step = self.upper[j];
            let mut leave: Option<(usize, Status)> = None;
            for r in 0..2 {
                let rate = -dir * alpha[r];
                let k = self.basis[r];
                let (limit, hits) = if rate < -PIVOT_TOL {
                    ((xb[r].max(0.0)) / -rate, Status::AtLower)
                } else if rate > PIVOT_TOL && self.upper[k].is_finite() {
                    (((self.upper[k] - xb[r]).max(0.0)) / rate, Status::AtUpper)
                } else {
                    continue;
                };
                let better = match leave {
                    None => limit < step || (limit == step && step.is_finite()),
                    Some((prev, _)) => {
                        limit < step || (limit == step && self.basis[r] < self.basis[prev])
                    }
                };
                if better {
                    step = limit;
                    leave = Some((r, hits));
                }
            }
            if !step.is_finite() {
                return Err(Error::Numerical("unbounded l1 inner problem".into()));
            }
            match leave {
                None => {
                    status[j] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
                }
                Some((r, hits)) => {
                    status[self.basis[r]] = hits;
                    self.basis[r] = j;
                    status[j] = Status::Basic;
                }
            }
        }
        Err(Error::Numerical("l1 inner problem exceeded pivot budget".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robust::Norm;
    use crate::testutil::random_simplex;
    use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lp_oracle(center: &[f64], w: &[f64], radius: f64, weights: &[f64], norm: Norm) -> f64 {
        let n = center.len();
        let mut problem = Problem::new(OptimizationDirection::Minimize);
        let p: Vec<_> = (0..n)
            .map(|i| match norm {
                Norm::L1 => problem.add_var(w[i], (0.0, 1.0)),
                Norm::LInf => {
                    let half = radius / weights[i];
                    problem.add_var(w[i], ((center[i] - half).max(0.0), (center[i] + half).min(1.0)))
                }
            })
            .collect();
        let mut total = LinearExpr::empty();
        for v in &p {
            total.add(*v, 1.0);
        }
        problem.add_constraint(total, ComparisonOp::Eq, 1.0);
        if norm == Norm::L1 {
            let d: Vec<_> = (0..n).map(|_| problem.add_var(0.0, (0.0, f64::INFINITY))).collect();
            let mut budget = LinearExpr::empty();
            for i in 0..n {
                problem.add_constraint([(d[i], 1.0), (p[i], -1.0)], ComparisonOp::Ge, -center[i]);
                problem.add_constraint([(d[i], 1.0), (p[i], 1.0)], ComparisonOp::Ge, center[i]);
                budget.add(d[i], weights[i]);
            }
            problem.add_constraint(budget, ComparisonOp::Le, radius);
        }
        problem.solve().unwrap().objective()
    }

    fn random_case(rng: &mut ChaCha8Rng, weighted: bool) -> (Vec<f64>, Vec<f64>, f64, Vec<f64>) {
        let n = rng.gen_range(2..=6);
        let center = random_simplex(rng, n);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let weights: Vec<f64> = if weighted {
            (0..n).map(|_| rng.gen_range(0.2..3.0)).collect()
        } else {
            vec![1.0; n]
        };
        let radius = rng.gen_range(0.0..1.5);
        (center, w, radius, weights)
    }

    fn assert_feasible(p: &[f64], center: &[f64], weights: &[f64], radius: f64, norm: Norm) {
        assert!(p.iter().all(|x| *x >= -1e-9));
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(weighted_norm_distance(p, center, weights, norm) <= radius + 1e-9);
    }

    #[test]
    fn norm_distance_examples() {
        assert_eq!(weighted_norm_distance(&[0.3, 0.7], &[0.3, 0.7], &[1.0, 1.0], Norm::L1), 0.0);
        assert_eq!(weighted_norm_distance(&[1.0, 0.0], &[0.5, 0.5], &[1.0, 1.0], Norm::L1), 1.0);
        let d = weighted_norm_distance(&[0.6, 0.4], &[0.5, 0.5], &[2.0, 1.0], Norm::LInf);
        assert!((d - 0.2).abs() < 1e-15);
    }

    #[test]
    fn l1_examples() {
        let (p, v) = worst_case_l1(&[0.5, 0.5], &[1.0, 0.0], 0.2, &[1.0, 1.0]).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-12 && (p[1] - 0.6).abs() < 1e-12);
        assert!((v - 0.4).abs() < 1e-12);
        let (p, v) = worst_case_l1(&[0.2, 0.3, 0.5], &[3.0, -1.0, 2.0], 0.0, &[1.0; 3]).unwrap();
        assert_eq!(p, vec![0.2, 0.3, 0.5]);
        assert!((v - 1.3).abs() < 1e-12);
        let (p, v) = worst_case_l1(&[0.2, 0.3, 0.5], &[3.0, -1.0, 2.0], 2.0, &[1.0; 3]).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
        assert_eq!(v, -1.0);
    }

    #[test]
    fn l1_needs_two_receivers() {
        // Receiver 0 is cheap per unit of value but capped by its weight;
        // the optimum splits donated mass between two receivers.
        let center = [0.0, 0.0, 1.0];
        let w = [0.0, 0.5, 1.0];
        let weights = [10.0, 1.0, 1.0];
        let (p, v) = worst_case_l1(&center, &w, 1.1, &weights).unwrap();
        let oracle = lp_oracle(&center, &w, 1.1, &weights, Norm::L1);
        assert!((v - oracle).abs() < 1e-8, "{v} vs {oracle}");
        assert_feasible(&p, &center, &weights, 1.1, Norm::L1);
    }

    #[test]
    fn linf_examples() {
        let (p, v) = worst_case_linf(&[0.5, 0.5], &[1.0, 0.0], 0.1, &[1.0, 1.0]).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-12 && (p[1] - 0.6).abs() < 1e-12);
        assert!((v - 0.4).abs() < 1e-12);
        let (p, _) = worst_case_linf(&[0.2, 0.3, 0.5], &[3.0, -1.0, 2.0], 0.0, &[1.0; 3]).unwrap();
        assert_eq!(p, vec![0.2, 0.3, 0.5]);
        let (p, v) = worst_case_linf(&[0.2, 0.3, 0.5], &[3.0, -1.0, 2.0], 1.0, &[1.0; 3]).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
        assert_eq!(v, -1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(worst_case_l1(&[0.5, 0.5], &[1.0, 0.0], -0.1, &[1.0, 1.0]).is_err());
        assert!(worst_case_l1(&[0.5, 0.5], &[1.0, 0.0], 0.1, &[0.0, 1.0]).is_err());
        assert!(worst_case_linf(&[0.5, 0.5], &[1.0], 0.1, &[1.0, 1.0]).is_err());
        assert!(worst_case_linf(&[0.5, 0.5], &[f64::NAN, 0.0], 0.1, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn matches_lp_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..400 {
            let (center, w, radius, weights) = random_case(&mut rng, trial % 2 == 0);
            for norm in [Norm::L1, Norm::LInf] {
                let (p, v) = match norm {
                    Norm::L1 => worst_case_l1(&center, &w, radius, &weights).unwrap(),
                    Norm::LInf => worst_case_linf(&center, &w, radius, &weights).unwrap(),
                };
                let oracle = lp_oracle(&center, &w, radius, &weights, norm);
                assert!((v - oracle).abs() <= 1e-8, "{norm:?} trial {trial}: {v} vs {oracle}");
                assert_feasible(&p, &center, &weights, radius, norm);
            }
        }
    }

    #[test]
    fn value_monotone_in_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (center, w, _, weights) = random_case(&mut rng, true);
            let mut prev = f64::INFINITY;
            for k in 0..20 {
                let r = 0.1 * k as f64;
                let (_, v) = worst_case_l1(&center, &w, r, &weights).unwrap();
                assert!(v <= prev + 1e-12);
                prev = v;
            }
        }
    }
}
