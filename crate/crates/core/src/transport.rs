//! Divergences between empirical measures: exact 1-Wasserstein by
//! assignment, entropic Sinkhorn, the critic-based WGAN estimate, and the
//! closed-form IPM over quadratic critics.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::domains::SampleSet;
use crate::error::{Error, Result};
use crate::nn::{Architecture, Mlp, Optimizer, Trace};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DivergenceMethod {
    ExactAssignment,
    Sinkhorn { epsilon: f64 },
    Critic { critic_steps: usize, clip_c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub method: DivergenceMethod,
    pub n: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

impl DivergenceEstimate {
    fn new(value: f64, method: DivergenceMethod, n: usize) -> DivergenceEstimate {
        DivergenceEstimate {
            value,
            method,
            n,
            diagnostics: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, value: f64) -> DivergenceEstimate {
        self.diagnostics.insert(key.to_string(), value);
        self
    }
}

fn check_pair(s1: &SampleSet, s2: &SampleSet) -> Result<()> {
    if s1.dim() != s2.dim() {
        return Err(Error::contract(format!(
            "sample sets have dimensions {} and {}",
            s1.dim(),
            s2.dim()
        )));
    }
    if s1.len() != s2.len() {
        return Err(Error::contract(format!(
            "empirical measures must have equal size, got {} and {}",
            s1.len(),
            s2.len()
        )));
    }
    if s1.is_empty() {
        return Err(Error::contract("empirical measures must be nonempty"));
    }
    Ok(())
}

fn euclidean_costs(s1: &SampleSet, s2: &SampleSet) -> Vec<f64> {
    let n = s1.len();
    let mut cost = Vec::with_capacity(n * s2.len());
    for a in s1.rows() {
        for b in s2.rows() {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            cost.push(d.sqrt());
        }
    }
    cost
}

/// Minimum-cost perfect matching on a square row-major cost matrix
/// (Hungarian method with potentials, O(n³)). Returns the column assigned to
/// each row and the total cost.
pub fn assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    // 1-based rows/columns; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    let total = row_to_col.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    (row_to_col, total)
}

/// Exact `W1` between two equal-size uniform empirical measures.
pub fn exact_w1(s1: &SampleSet, s2: &SampleSet) -> Result<DivergenceEstimate> {
    check_pair(s1, s2)?;
    let n = s1.len();
    let cost = euclidean_costs(s1, s2);
    let (matching, _) = assignment(&cost, n);
    // Summing in sorted order makes the value exactly symmetric in its arguments.
    let mut matched: Vec<f64> = matching.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    matched.sort_by(f64::total_cmp);
    let total: f64 = matched.iter().sum();
    Ok(DivergenceEstimate::new(
        (total / n as f64).max(0.0),
        DivergenceMethod::ExactAssignment,
        n,
    ))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT cost `⟨P, C⟩` with uniform marginals, solved in the log
/// domain. Diagnostics: `iterations`, `marginal_violation` (L1, rows) and
/// `converged` (1 or 0). Non-convergence is flagged, not an error.
pub fn sinkhorn_w1(
    s1: &SampleSet,
    s2: &SampleSet,
    epsilon: f64,
    max_iters: usize,
) -> Result<DivergenceEstimate> {
    check_pair(s1, s2)?;
    if !(epsilon > 0.0) {
        return Err(Error::contract(format!("sinkhorn epsilon must be positive, got {epsilon}")));
    }
    let n = s1.len();
    let cost = euclidean_costs(s1, s2);
    let log_w = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        for i in 0..n {
            let row = &cost[i * n..(i + 1) * n];
            f[i] = -epsilon * log_sum_exp((0..n).map(|j| (g[j] - row[j]) / epsilon + log_w));
        }
        for j in 0..n {
            g[j] = -epsilon * log_sum_exp((0..n).map(|i| (f[i] - cost[i * n + j]) / epsilon + log_w));
        }
        // Columns are exact after the g update; measure the rows.
        violation = (0..n)
            .map(|i| {
                let row_mass: f64 = (0..n)
                    .map(|j| ((f[i] + g[j] - cost[i * n + j]) / epsilon + 2.0 * log_w).exp())
                    .sum();
                (row_mass - 1.0 / n as f64).abs()
            })
            .sum();
        if violation < 1e-8 {
            break;
        }
    }
    let mut value = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = cost[i * n + j];
            value += ((f[i] + g[j] - c) / epsilon + 2.0 * log_w).exp() * c;
        }
    }
    Ok(
        DivergenceEstimate::new(value, DivergenceMethod::Sinkhorn { epsilon }, n)
            .with("iterations", iterations as f64)
            .with("marginal_violation", violation)
            .with("converged", if violation < 1e-8 { 1.0 } else { 0.0 }),
    )
}

/// Learning rate of the stand-alone critic estimator.
pub const CRITIC_LEARNING_RATE: f64 = 5e-3;

/// Accumulate the gradient of `mean_{S1} d − mean_{S2} d` into `grad` and
/// return the objective.
pub(crate) fn critic_objective_grad(
    critic: &Mlp,
    s1: &[&[f64]],
    s2: &[&[f64]],
    grad: &mut [f64],
    trace: &mut Trace,
) -> Result<f64> {
    let mut objective = 0.0;
    for (set, sign) in [(s1, 1.0), (s2, -1.0)] {
        let w = sign / set.len() as f64;
        for x in set {
            critic.trace_into(x, trace);
            objective += w * trace.output()[0];
            critic.backward_from(trace, &[w], Some(grad))?;
        }
    }
    Ok(objective)
}

/// WGAN estimate of `W1(S1, S2)`: train a clipped critic by RMSProp ascent on
/// `mean_{S1} d − mean_{S2} d` for `steps` full-batch steps, then divide the
/// objective by the critic's Lipschitz upper bound.
pub fn critic_divergence(
    s1: &SampleSet,
    s2: &SampleSet,
    critic_arch: &Architecture,
    steps: usize,
    clip_c: f64,
    seed: u64,
) -> Result<DivergenceEstimate> {
    check_pair(s1, s2)?;
    if steps == 0 {
        return Err(Error::contract("critic needs at least one step"));
    }
    if critic_arch.input_dim != s1.dim() || critic_arch.output_dim != 1 {
        return Err(Error::contract(format!(
            "critic {critic_arch} does not map {} -> 1",
            s1.dim()
        )));
    }
    let mut rng = rng::stream(seed, 7);
    let mut critic = Mlp::init(critic_arch.clone(), &mut rng)?;
    critic.clip_weights(clip_c)?;
    let mut opt = Optimizer::rmsprop(CRITIC_LEARNING_RATE, critic.params().len())?;
    let a: Vec<&[f64]> = s1.rows().collect();
    let b: Vec<&[f64]> = s2.rows().collect();
    let mut grad = vec![0.0; critic.params().len()];
    let mut trace = Trace::default();
    let mut objective = 0.0;
    for step in 0..=steps {
        grad.fill(0.0);
        objective = critic_objective_grad(&critic, &a, &b, &mut grad, &mut trace)?;
        if !objective.is_finite() {
            return Err(Error::Numeric {
                layer: critic.arch().depth() - 1,
                context: format!("critic objective is {objective} at step {step}"),
            });
        }
        if step == steps {
            break;
        }
        grad.iter_mut().for_each(|g| *g = -*g);
        opt.step(critic.params_mut(), &grad);
        critic.clip_weights(clip_c)?;
    }
    let lip = critic.lipschitz_upper_bound();
    let value = if lip > 0.0 { objective / lip } else { 0.0 };
    Ok(DivergenceEstimate::new(
        value,
        DivergenceMethod::Critic {
            critic_steps: steps,
            clip_c,
        },
        s1.len(),
    )
    .with("raw_objective", objective)
    .with("lipschitz_bound", lip))
}

/// `d(z) = ½ zᵀMz + bᵀz` with `M` symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCritic {
    pub m: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QuadraticCritic {
    pub fn new(m: DMatrix<f64>, b: DVector<f64>) -> Result<QuadraticCritic> {
        if !m.is_square() || m.nrows() != b.len() {
            return Err(Error::contract("quadratic critic needs square M matching b"));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(QuadraticCritic { m: sym, b })
    }

    pub fn zero(dim: usize) -> QuadraticCritic {
        QuadraticCritic {
            m: DMatrix::zeros(dim, dim),
            b: DVector::zeros(dim),
        }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let z = DVector::from_column_slice(z);
        0.5 * z.dot(&(&self.m * &z)) + self.b.dot(&z)
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let z = DVector::from_column_slice(z);
        (&self.m * z + &self.b).iter().copied().collect()
    }

    /// `β(d) = ‖∇²d‖₂ = ‖M‖₂`.
    pub fn beta(&self) -> f64 {
        self.m.symmetric_eigenvalues().iter().fold(0.0, |a, l| a.max(l.abs()))
    }

    /// `E[d]` under a distribution with the given mean and uncentered second
    /// moment.
    pub fn expectation(&self, mean: &DVector<f64>, second_moment: &DMatrix<f64>) -> f64 {
        0.5 * (&self.m * second_moment).trace() + self.b.dot(mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticIpm {
    pub value: f64,
    pub critic: QuadraticCritic,
}

/// Supremum of `E_1[d] − E_2[d]` over quadratic critics with `‖M‖₂ ≤ beta_cap`
/// and `‖b‖₂ ≤ b_cap`, given the mean gap and the uncentered second-moment
/// gap of the two distributions.
///
/// The objective separates: `b` contributes `b_cap‖Δμ‖` along `Δμ`, and `M`
/// contributes `½ tr(MΔ₂)`, maximized by `β·sign(Δ₂)` in `Δ₂`'s eigenbasis for
/// a value of `½β` times the nuclear norm of `Δ₂`.
pub fn ipm_quadratic_moments(
    mean_gap: &DVector<f64>,
    second_gap: &DMatrix<f64>,
    beta_cap: f64,
    b_cap: f64,
) -> Result<QuadraticIpm> {
    if !(beta_cap >= 0.0) || !(b_cap >= 0.0) {
        return Err(Error::contract("IPM caps must be nonnegative"));
    }
    let dim = mean_gap.len();
    let sym = (second_gap + second_gap.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let signs = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| {
        if l > 0.0 {
            beta_cap
        } else if l < 0.0 {
            -beta_cap
        } else {
            0.0
        }
    }));
    let m = &eig.eigenvectors * signs * eig.eigenvectors.transpose();
    let gap_norm = mean_gap.norm();
    let b = if gap_norm > 0.0 {
        mean_gap * (b_cap / gap_norm)
    } else {
        DVector::zeros(dim)
    };
    let nuclear: f64 = eig.eigenvalues.iter().map(|l| l.abs()).sum();
    Ok(QuadraticIpm {
        value: b_cap * gap_norm + 0.5 * beta_cap * nuclear,
        critic: QuadraticCritic::new(m, b)?,
    })
}

/// Empirical moments of a sample set as nalgebra types.
pub fn moments(s: &SampleSet) -> (DVector<f64>, DMatrix<f64>) {
    let d = s.dim();
    (
        DVector::from_vec(s.mean()),
        DMatrix::from_row_slice(d, d, &s.second_moment()),
    )
}

/// Quadratic-class IPM between two empirical measures (sizes may differ).
pub fn ipm_quadratic(s1: &SampleSet, s2: &SampleSet, beta_cap: f64, b_cap: f64) -> Result<QuadraticIpm> {
    if s1.dim() != s2.dim() || s1.is_empty() || s2.is_empty() {
        return Err(Error::contract("IPM needs nonempty sample sets of equal dimension"));
    }
    let (m1, q1) = moments(s1);
    let (m2, q2) = moments(s2);
    ipm_quadratic_moments(&(m1 - m2), &(q1 - q2), beta_cap, b_cap)
}

/// Default cap on the linear part of a quadratic critic.
pub fn default_b_cap(support_radius: f64) -> f64 {
    10.0 * support_radius
}
