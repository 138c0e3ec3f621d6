//! Bound estimation (the stopping criterion, the additive surrogate, the
//! per-sample bound) and numeric checks of the inequalities behind them.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domains::{squared_distance, AffineMap, DomainPair, SampleSet, Side, TargetMap};
use crate::error::{Error, Result};
use crate::nn::{Architecture, Mlp};
use crate::rng;
use crate::training::{
    empirical_risk, train_per_sample_adversary_on, EpochLosses, InputSampler, RiskAnchor, TrainConfig,
    TrainingData, Wgan,
};
use crate::transport::{exact_w1, ipm_quadratic_moments, QuadraticCritic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub epoch: usize,
    /// `R[h1, h2]` on held-out A samples.
    pub pair_risk: f64,
    pub div_h1: f64,
    pub div_h2: f64,
    pub bound: f64,
    pub feasible: bool,
    /// Evaluation only.
    pub gt_risk: f64,
    /// `min_{y ∈ T} R[h1, y]` in the non-unique setting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_target_risk: Option<f64>,
}

impl BoundReport {
    /// Report whose bound is the pair risk alone (`ε₀` is a constant offset).
    pub fn risk_form(epoch: usize, pair_risk: f64, div_h1: f64, div_h2: f64, epsilon0: f64, gt_risk: f64) -> BoundReport {
        BoundReport {
            epoch,
            pair_risk,
            div_h1,
            div_h2,
            bound: pair_risk,
            feasible: div_h1 <= epsilon0 && div_h2 <= epsilon0,
            gt_risk,
            min_target_risk: None,
        }
    }

    /// Report whose bound is `pair_risk + div_h1`.
    pub fn surrogate_form(
        epoch: usize,
        pair_risk: f64,
        div_h1: f64,
        div_h2: f64,
        epsilon0: f64,
        gt_risk: f64,
    ) -> BoundReport {
        BoundReport {
            bound: pair_risk + div_h1,
            ..BoundReport::risk_form(epoch, pair_risk, div_h1, div_h2, epsilon0, gt_risk)
        }
    }
}

/// `epoch,pair_risk,div_h1,div_h2,bound,feasible,gt_risk`, plus
/// `min_target_risk` when any report carries it.
pub fn reports_csv(reports: &[BoundReport]) -> String {
    let with_targets = reports.iter().any(|r| r.min_target_risk.is_some());
    let mut out = String::from("epoch,pair_risk,div_h1,div_h2,bound,feasible,gt_risk");
    if with_targets {
        out.push_str(",min_target_risk");
    }
    out.push('\n');
    for r in reports {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, r.pair_risk, r.div_h1, r.div_h2, r.bound, r.feasible, r.gt_risk
        )
        .expect("writing to a String cannot fail");
        if with_targets {
            write!(out, ",{}", r.min_target_risk.unwrap_or(f64::NAN)).expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

/// Index of the feasible report with the smallest bound. Ties go to the
/// earliest epoch.
pub fn select_epoch(reports: &[BoundReport]) -> Option<usize> {
    reports
        .iter()
        .enumerate()
        .filter(|(_, r)| r.feasible)
        .min_by(|(_, a), (_, b)| a.bound.total_cmp(&b.bound))
        .map(|(i, _)| i)
}

#[derive(Debug, Clone)]
pub struct StopOutcome {
    pub selected_epoch: usize,
    pub h1: Mlp,
    pub reports: Vec<BoundReport>,
    /// Training losses of `h1`, one entry per epoch.
    pub h1_losses: Vec<EpochLosses>,
}

/// Decide when to stop training `h1`: after every epoch of `h1`, continue
/// the adversary `h2` for `T2` epochs against it, then pick the epoch with
/// the smallest `R[h1, h2]` among those where both held-out divergences are
/// within `ε₀`. `cfg.epochs` is `T1` and `cfg.adversary_epochs` is `T2`.
pub fn stopping_criterion(pair: &DomainPair, arch: &Architecture, cfg: &TrainConfig) -> Result<StopOutcome> {
    cfg.validate()?;
    if cfg.adversary_epochs == 0 {
        return Err(Error::contract("the adversary needs at least one epoch per round"));
    }
    let data = TrainingData::new(pair, cfg)?;
    let mut h1 = Wgan::init(arch, cfg)?;
    let h2_cfg = cfg.reseeded("h2");
    let mut h2 = Wgan::init(arch, &h2_cfg)?;
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::with_capacity(cfg.epochs);
    let mut h1_losses = Vec::with_capacity(cfg.epochs);
    for t in 1..=cfg.epochs {
        let losses = h1.epoch(&data.train_a, &data.train_b, InputSampler::Uniform, RiskAnchor::None, cfg)?;
        h1_losses.push(losses);
        let frozen = h1.generator.clone();
        let anchor = RiskAnchor::Net {
            anchor: &frozen,
            weight: -cfg.lambda,
        };
        for _ in 0..cfg.adversary_epochs {
            h2.epoch(&data.train_a, &data.train_b, InputSampler::Uniform, anchor, &h2_cfg)?;
        }
        let report = BoundReport::risk_form(
            t,
            empirical_risk(&frozen, &h2.generator, &data.holdout_a)?,
            data.divergence(&frozen)?,
            data.divergence(&h2.generator)?,
            cfg.epsilon0,
            pair.ground_truth_risk(&frozen, cfg.n_eval, data.eval_seed)?,
        );
        reports.push(report);
        snapshots.push(frozen);
    }
    match select_epoch(&reports) {
        Some(i) => Ok(StopOutcome {
            selected_epoch: reports[i].epoch,
            h1: snapshots.swap_remove(i),
            reports,
            h1_losses,
        }),
        None => Err(Error::NoFeasibleEpoch { reports }),
    }
}

/// `R[h1, h2] + W(h1 ∘ S_A', S_B')` on held-out samples of size `n_div`
/// drawn from `seed`; the pair risk uses its own A-sample.
pub fn thm1_surrogate(
    h1: &Mlp,
    h2: &Mlp,
    pair: &DomainPair,
    n_div: usize,
    seed: u64,
    epsilon0: f64,
) -> Result<BoundReport> {
    pair.check_generator(h1)?;
    pair.check_generator(h2)?;
    let risk_seed = rng::derive_seed(seed, rng::tag("surrogate-risk"));
    let div_seed = rng::derive_seed(seed, rng::tag("surrogate-div"));
    let s_risk = pair.sample(Side::A, n_div, risk_seed)?;
    let s_a = pair.sample(Side::A, n_div, div_seed)?;
    let s_b = pair.sample(Side::B, n_div, div_seed)?;
    let div_h1 = exact_w1(&s_a.map(h1), &s_b)?.value;
    let div_h2 = exact_w1(&s_a.map(h2), &s_b)?.value;
    Ok(BoundReport::surrogate_form(
        0,
        empirical_risk(h1, h2, &s_risk)?,
        div_h1,
        div_h2,
        epsilon0,
        pair.ground_truth_risk(h1, n_div.max(1024), rng::derive_seed(seed, rng::tag("surrogate-gt")))?,
    ))
}

#[derive(Debug, Clone)]
pub struct PerSampleBound {
    pub x: Vec<f64>,
    /// `ℓ(h1(x), h2(x))`.
    pub bound: f64,
    /// `ℓ(h1(x), y(x))`, evaluation only.
    pub true_loss: f64,
    pub h2: Mlp,
}

/// Bound the loss of `h1` at `x` by training a per-sample adversary.
pub fn per_sample_bound(
    h1: &Mlp,
    pair: &DomainPair,
    x: &[f64],
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<PerSampleBound> {
    let data = TrainingData::new(pair, cfg)?;
    per_sample_bound_on(&data, h1, pair, x, arch, cfg)
}

pub fn per_sample_bound_on(
    data: &TrainingData,
    h1: &Mlp,
    pair: &DomainPair,
    x: &[f64],
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<PerSampleBound> {
    let h2 = train_per_sample_adversary_on(data, h1, pair, x, arch, cfg)?;
    let h1x = h1.eval(x);
    Ok(PerSampleBound {
        x: x.to_vec(),
        bound: squared_distance(&h1x, &h2.eval(x)),
        true_loss: squared_distance(&h1x, &pair.target.apply(x)),
        h2,
    })
}

/// A finite parametric family of closed-form hypotheses.
#[derive(Debug, Clone)]
pub struct GridHypothesisFamily {
    pub name: String,
    /// `(parameter, map)` per grid point.
    pub members: Vec<(f64, TargetMap)>,
}

impl GridHypothesisFamily {
    /// Rotations by `0°, step°, 2·step°, ...` below 360°.
    pub fn rotations(step_degrees: f64) -> GridHypothesisFamily {
        let n = (360.0 / step_degrees).round() as usize;
        GridHypothesisFamily {
            name: format!("rotation/{step_degrees}deg"),
            members: (0..n)
                .map(|i| {
                    let deg = i as f64 * step_degrees;
                    (deg, TargetMap::rotation(deg.to_radians()))
                })
                .collect(),
        }
    }

    /// Smooth warps with fixed blend `alpha` over a rotation-angle grid.
    pub fn warps(alpha: f64, step_degrees: f64) -> GridHypothesisFamily {
        let n = (360.0 / step_degrees).round() as usize;
        GridHypothesisFamily {
            name: format!("warp(alpha={alpha})/{step_degrees}deg"),
            members: (0..n)
                .map(|i| {
                    let deg = i as f64 * step_degrees;
                    (
                        deg,
                        TargetMap::SmoothWarp {
                            angle: deg.to_radians(),
                            alpha,
                        },
                    )
                })
                .collect(),
        }
    }

    /// The family whose kind matches the pair's target.
    pub fn for_pair(pair: &DomainPair, step_degrees: f64) -> GridHypothesisFamily {
        match pair.target {
            TargetMap::SmoothWarp { alpha, .. } => GridHypothesisFamily::warps(alpha, step_degrees),
            _ => GridHypothesisFamily::rotations(step_degrees),
        }
    }
}

/// Divergences and mapped samples of every grid member, shared by the
/// inequality checks.
#[derive(Debug, Clone)]
pub struct GridEvaluation {
    pub parameters: Vec<f64>,
    pub divergences: Vec<f64>,
    /// `h(S_A)` per member on the risk sample.
    mapped: Vec<SampleSet>,
    /// `y(S_A)` on the risk sample.
    truth: SampleSet,
    risk_sample: SampleSet,
}

impl GridEvaluation {
    /// Divergences use `n_div` held-out points; risks use `n_risk` points.
    pub fn new(
        family: &GridHypothesisFamily,
        pair: &DomainPair,
        n_div: usize,
        n_risk: usize,
        seed: u64,
    ) -> Result<GridEvaluation> {
        for (_, m) in &family.members {
            m.check_dim(pair.dim())?;
        }
        let div_seed = rng::derive_seed(seed, rng::tag("grid-div"));
        let s_a = pair.sample(Side::A, n_div, div_seed)?;
        let s_b = pair.sample(Side::B, n_div, div_seed)?;
        let risk_sample = pair.sample(Side::A, n_risk, rng::derive_seed(seed, rng::tag("grid-risk")))?;
        let mut divergences = Vec::with_capacity(family.members.len());
        let mut mapped = Vec::with_capacity(family.members.len());
        for (_, m) in &family.members {
            divergences.push(exact_w1(&s_a.map(m), &s_b)?.value);
            mapped.push(risk_sample.map(m));
        }
        Ok(GridEvaluation {
            parameters: family.members.iter().map(|(p, _)| *p).collect(),
            divergences,
            mapped,
            truth: risk_sample.map(&pair.target),
            risk_sample,
        })
    }

    /// Indices of members with divergence at most `epsilon0`.
    pub fn feasible_set(&self, epsilon0: f64) -> Vec<usize> {
        (0..self.divergences.len()).filter(|&i| self.divergences[i] <= epsilon0).collect()
    }

    fn risk(&self, a: &SampleSet, b: &SampleSet) -> f64 {
        let n = a.len() as f64;
        a.rows().zip(b.rows()).map(|(p, q)| squared_distance(p, q)).sum::<f64>() / n
    }

    pub fn pair_risk(&self, i: usize, j: usize) -> f64 {
        self.risk(&self.mapped[i], &self.mapped[j])
    }

    pub fn target_risk(&self, i: usize) -> f64 {
        self.risk(&self.mapped[i], &self.truth)
    }

    /// The A-sample behind the risks; per-sample checks index its rows.
    pub fn risk_sample(&self) -> &SampleSet {
        &self.risk_sample
    }

    fn point_loss(&self, i: usize, j: Option<usize>, row: usize) -> f64 {
        let a = self.mapped[i].row(row);
        let b = match j {
            Some(j) => self.mapped[j].row(row),
            None => self.truth.row(row),
        };
        squared_distance(a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCheck {
    pub family: String,
    pub epsilon0: f64,
    pub feasible_count: usize,
    /// Empty feasible set: nothing to check.
    pub vacuous: bool,
    pub holds: bool,
    pub violations: usize,
    /// Largest `lhs − rhs` over the feasible set (≤ 0 when the check holds).
    pub worst_margin: f64,
    /// Parameter of the member attaining `worst_margin`.
    pub worst_parameter: Option<f64>,
    /// Diameter check, `sup R[h1, h2] ≤ 6 sup R[h, y]` (lemma grid only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diameter: Option<(f64, f64)>,
}

const SLACK: f64 = 1e-9;

impl GridCheck {
    fn vacuous(family: &str, epsilon0: f64) -> GridCheck {
        GridCheck {
            family: family.to_string(),
            epsilon0,
            feasible_count: 0,
            vacuous: true,
            holds: true,
            violations: 0,
            worst_margin: f64::NEG_INFINITY,
            worst_parameter: None,
            diameter: None,
        }
    }
}

/// For every `h1 ∈ P`: `R[h1, y] ≤ 3 max_{h2∈P} R[h1, h2] + 3 min_{h∈P} R[h, y]`,
/// plus the diameter bound `sup_{h1,h2∈P} R[h1, h2] ≤ 6 sup_{h∈P} R[h, y]`.
pub fn verify_lemma1_grid(eval: &GridEvaluation, family: &str, epsilon0: f64) -> GridCheck {
    let p = eval.feasible_set(epsilon0);
    if p.is_empty() {
        return GridCheck::vacuous(family, epsilon0);
    }
    let target: Vec<f64> = p.iter().map(|&i| eval.target_risk(i)).collect();
    let min_target = target.iter().copied().fold(f64::INFINITY, f64::min);
    let max_target = target.iter().copied().fold(0.0, f64::max);
    let mut check = GridCheck {
        feasible_count: p.len(),
        vacuous: false,
        ..GridCheck::vacuous(family, epsilon0)
    };
    let mut diameter: f64 = 0.0;
    for (k, &i) in p.iter().enumerate() {
        let sup_pair = p.iter().map(|&j| eval.pair_risk(i, j)).fold(0.0, f64::max);
        diameter = diameter.max(sup_pair);
        let margin = target[k] - (3.0 * sup_pair + 3.0 * min_target);
        check.record(margin, eval.parameters[i]);
    }
    let diameter_rhs = 6.0 * max_target;
    if diameter > diameter_rhs + SLACK {
        check.violations += 1;
        check.holds = false;
    }
    check.diameter = Some((diameter, diameter_rhs));
    check
}

/// The per-sample analogue at row `row` of the risk sample:
/// `ℓ(h1(x), y(x)) ≤ 3 sup_{h2∈P} ℓ(h1(x), h2(x)) + 3 inf_{h∈P} ℓ(h(x), y(x))`.
pub fn verify_per_sample_lemma_grid(eval: &GridEvaluation, family: &str, row: usize, epsilon0: f64) -> GridCheck {
    let p = eval.feasible_set(epsilon0);
    if p.is_empty() {
        return GridCheck::vacuous(family, epsilon0);
    }
    let min_target = p.iter().map(|&i| eval.point_loss(i, None, row)).fold(f64::INFINITY, f64::min);
    let mut check = GridCheck {
        feasible_count: p.len(),
        vacuous: false,
        ..GridCheck::vacuous(family, epsilon0)
    };
    for &i in &p {
        let sup_pair = p.iter().map(|&j| eval.point_loss(i, Some(j), row)).fold(0.0, f64::max);
        let margin = eval.point_loss(i, None, row) - (3.0 * sup_pair + 3.0 * min_target);
        check.record(margin, eval.parameters[i]);
    }
    check
}

impl GridCheck {
    fn record(&mut self, margin: f64, parameter: f64) {
        if margin > self.worst_margin {
            self.worst_margin = margin;
            self.worst_parameter = Some(parameter);
        }
        if margin > SLACK {
            self.violations += 1;
            self.holds = false;
        }
    }
}

/// Mean and covariance of a Gaussian on `X_A`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpmBoundCheck {
    /// `R[h, y]`.
    pub lhs: f64,
    pub rhs: f64,
    /// `ρ_C(h ∘ D_A, D_B)` for the quadratic class.
    pub rho_c: f64,
    /// `R_{D_B}[h ∘ y⁻¹ − Id, ∇d]`.
    pub gradient_mismatch: f64,
    /// `sup_{‖u‖ ≤ R} ‖h(u) − y(u)‖`.
    pub sup_gap: f64,
    pub beta: f64,
    /// `ρ_C` from the untruncated Gaussian moments, for reference.
    pub rho_c_gaussian: f64,
    pub holds: bool,
}

/// `E‖Gx + g‖²` under mean `mu` and uncentered second moment `s`.
fn quadratic_expectation(g_mat: &DMatrix<f64>, g: &DVector<f64>, mu: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    (g_mat * s * g_mat.transpose()).trace() + 2.0 * g.dot(&(g_mat * mu)) + g.norm_squared()
}

/// `E[(Ax + c)(Ax + c)ᵀ]`.
fn pushed_second_moment(a: &DMatrix<f64>, c: &DVector<f64>, mu: &DVector<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    let amu = a * mu;
    a * s * a.transpose() + &amu * c.transpose() + c * amu.transpose() + c * c.transpose()
}

/// `max_{‖u‖ ≤ r} ‖Gu + g‖`.
///
/// A convex function peaks on the sphere; stationarity gives
/// `u = (λI − GᵀG)⁻¹ Gᵀg` with `λ ≥ λ_max(GᵀG)`, solved by bisection on the
/// secular equation `‖u(λ)‖ = r`, with the degenerate case handled by
/// filling the top eigenspace.
pub fn sup_affine_norm_on_ball(g_mat: &DMatrix<f64>, g: &DVector<f64>, r: f64) -> f64 {
    let gram = g_mat.transpose() * g_mat;
    let eig = SymmetricEigen::new(gram);
    let lambdas = eig.eigenvalues.clone();
    let w = eig.eigenvectors.transpose() * (g_mat.transpose() * g);
    let top = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = top.abs().max(1.0);
    let tol = 1e-12 * scale;
    let on_top = |i: usize| (top - lambdas[i]).abs() <= tol;
    let norm2 = |lam: f64| -> f64 {
        (0..w.len())
            .map(|i| {
                let d = lam - lambdas[i];
                w[i] * w[i] / (d * d)
            })
            .sum()
    };
    let degenerate = (0..w.len()).all(|i| !on_top(i) || w[i].abs() <= 1e-14 * (1.0 + w.norm()));
    let u_eig: DVector<f64> = if degenerate {
        let mut u = DVector::zeros(w.len());
        for i in 0..w.len() {
            if !on_top(i) {
                u[i] = w[i] / (top - lambdas[i]);
            }
        }
        let rest = r * r - u.norm_squared();
        if rest >= 0.0 {
            let k = (0..w.len()).find(|&i| on_top(i)).expect("some eigenvalue is the top one");
            u[k] = rest.sqrt();
            u
        } else {
            secular_solution(&w, &lambdas, top, r, &norm2)
        }
    } else {
        secular_solution(&w, &lambdas, top, r, &norm2)
    };
    let u = &eig.eigenvectors * u_eig;
    let candidate = (g_mat * &u + g).norm();
    // The secular root is the global maximizer; guard against rounding by
    // also trying the antipode.
    candidate.max((g_mat * (-&u) + g).norm())
}

fn secular_solution(
    w: &DVector<f64>,
    lambdas: &DVector<f64>,
    top: f64,
    r: f64,
    norm2: &dyn Fn(f64) -> f64,
) -> DVector<f64> {
    let mut lo = top;
    let mut step = w.norm() / r + 1e-300;
    let mut hi = top + step;
    while norm2(hi) > r * r {
        step *= 2.0;
        hi = top + step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm2(mid) > r * r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = hi;
    DVector::from_iterator(w.len(), (0..w.len()).map(|i| w[i] / (lam - lambdas[i])))
}

/// Check the IPM lemma for affine `h`, `y` and a quadratic critic `d`:
///
/// `R[h, y] ≤ 2ρ_C/(2 − β(d)) + 2 sup_u‖h(u) − y(u)‖/(2 − β(d)) · sqrt(R_{D_B}[h∘y⁻¹ − Id, ∇d])`
///
/// `D_A` is the empirical measure of `n` draws from the Gaussian truncated to
/// the ball of radius `support_radius`. All expectations are quadratic, so
/// they are evaluated in closed form from that measure's first two moments;
/// `ρ_C` is the quadratic-class IPM with caps `beta_cap`, `b_cap`, which must
/// admit `d`.
#[allow(clippy::too_many_arguments)]
pub fn verify_ipm_bound_affine(
    h: &AffineMap,
    y: &AffineMap,
    d: &QuadraticCritic,
    moments: &GaussianMoments,
    support_radius: f64,
    beta_cap: f64,
    b_cap: f64,
    n: usize,
    seed: u64,
) -> Result<IpmBoundCheck> {
    let dim = y.dim();
    if h.dim() != dim || d.b.len() != dim || moments.mean.len() != dim {
        return Err(Error::contract("dimensions of h, y, d and D_A must agree"));
    }
    let beta = d.beta();
    if beta >= 2.0 {
        return Err(Error::contract(format!("critic smoothness β(d) = {beta} must be below 2")));
    }
    if beta > beta_cap + 1e-12 || d.b.norm() > b_cap + 1e-12 {
        return Err(Error::contract("critic lies outside the quadratic class"));
    }
    let chol = moments
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::contract("covariance must be positive definite"))?;
    let l = chol.l();
    let mut rng = rng::stream(seed, 11);
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let z = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = &moments.mean + &l * z;
        if x.norm() <= support_radius {
            rows.push(x.iter().copied().collect::<Vec<f64>>());
        }
    }
    let sample = SampleSet::from_rows(&rows)?;
    let mu = DVector::from_vec(sample.mean());
    let s = DMatrix::from_row_slice(dim, dim, &sample.second_moment());

    let (ah, ch) = (h.matrix(), h.offset());
    let (ay, cy) = (y.matrix(), y.offset());
    let gap_mat = ah - ay;
    let gap_off = ch - cy;
    let lhs = quadratic_expectation(&gap_mat, &gap_off, &mu, &s);

    // (h − y)(x) − ∇d(y(x)) = (A_h − A_y − M A_y) x + (c_h − c_y − M c_y − b)
    let mis_mat = &gap_mat - &d.m * ay;
    let mis_off = &gap_off - &d.m * cy - &d.b;
    let gradient_mismatch = quadratic_expectation(&mis_mat, &mis_off, &mu, &s).max(0.0);

    let mean_gap = &gap_mat * &mu + &gap_off;
    let second_gap = pushed_second_moment(ah, ch, &mu, &s) - pushed_second_moment(ay, cy, &mu, &s);
    let rho_c = ipm_quadratic_moments(&mean_gap, &second_gap, beta_cap, b_cap)?.value;

    let s_gauss = &moments.cov + &moments.mean * moments.mean.transpose();
    let rho_c_gaussian = ipm_quadratic_moments(
        &(&gap_mat * &moments.mean + &gap_off),
        &(pushed_second_moment(ah, ch, &moments.mean, &s_gauss)
            - pushed_second_moment(ay, cy, &moments.mean, &s_gauss)),
        beta_cap,
        b_cap,
    )?
    .value;

    let sup_gap = sup_affine_norm_on_ball(&gap_mat, &gap_off, support_radius);
    let rhs = 2.0 * rho_c / (2.0 - beta) + 2.0 * sup_gap / (2.0 - beta) * gradient_mismatch.sqrt();
    Ok(IpmBoundCheck {
        lhs,
        rhs,
        rho_c,
        gradient_mismatch,
        sup_gap,
        beta,
        rho_c_gaussian,
        holds: lhs <= rhs + 1e-6,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCheck {
    /// `‖J_h − J_y‖₂`.
    pub premise_lhs: f64,
    /// `1 / ‖J_y⁻¹‖₂`.
    pub premise_rhs: f64,
    pub premise: bool,
    /// `‖J_h J_y⁻¹ − I‖₂`.
    pub conclusion_lhs: f64,
    pub conclusion: bool,
    pub implication_holds: bool,
}

fn operator_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// For affine maps: `‖J_h − J_y‖ ≤ 1/‖J_y⁻¹‖` implies `‖J_h J_y⁻¹ − I‖ ≤ 1`.
pub fn verify_lipschitz_lemma(h: &AffineMap, y: &AffineMap) -> Result<LipschitzCheck> {
    if h.dim() != y.dim() {
        return Err(Error::contract("h and y must have the same dimension"));
    }
    let jy_inv = y.inverse_matrix();
    let premise_lhs = operator_norm(&(h.matrix() - y.matrix()));
    let premise_rhs = 1.0 / operator_norm(jy_inv);
    let id = DMatrix::identity(y.dim(), y.dim());
    let conclusion_lhs = operator_norm(&(h.matrix() * jy_inv - id));
    // Relative rounding slack: both sides come from SVDs.
    let premise = premise_lhs <= premise_rhs;
    let conclusion = conclusion_lhs <= 1.0 + 1e-12;
    Ok(LipschitzCheck {
        premise_lhs,
        premise_rhs,
        premise,
        conclusion_lhs,
        conclusion,
        implication_holds: !premise || conclusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::registered;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn report(epoch: usize, pair_risk: f64, feasible: bool) -> BoundReport {
        let div = if feasible { 0.1 } else { 0.5 };
        BoundReport::risk_form(epoch, pair_risk, div, 0.1, 0.2, 0.0)
    }

    #[test]
    fn selection_examples() {
        let table = vec![report(1, 0.1, false), report(2, 0.9, true), report(3, 0.4, true)];
        assert_eq!(select_epoch(&table), Some(2));
        assert_eq!(select_epoch(&[report(1, 5.0, true)]), Some(0));
        assert_eq!(select_epoch(&[report(1, 5.0, false), report(2, 1.0, false)]), None);
    }

    #[test]
    fn report_forms() {
        let r = BoundReport::surrogate_form(1, 0.5, 0.125, 0.3, 0.2, 1.0);
        assert_eq!(r.bound, 0.625);
        assert!(!r.feasible);
        let q = BoundReport::risk_form(1, 0.5, 0.125, 0.2, 0.2, 1.0);
        assert_eq!(q.bound, 0.5);
        assert!(q.feasible);
    }

    #[test]
    fn csv_layout() {
        let csv = reports_csv(&[report(1, 0.5, true)]);
        assert_eq!(
            csv,
            "epoch,pair_risk,div_h1,div_h2,bound,feasible,gt_risk\n1,0.5,0.1,0.1,0.5,true,0\n"
        );
    }

    fn affine(m: [f64; 4], c: [f64; 2]) -> AffineMap {
        AffineMap::new(2, &m, &c).unwrap()
    }

    #[test]
    fn lipschitz_examples() {
        let y = affine([2.0, 0.0, 0.0, 2.0], [0.0, 0.0]);
        let h = affine([3.0, 0.0, 0.0, 3.0], [0.0, 0.0]);
        let c = verify_lipschitz_lemma(&h, &y).unwrap();
        assert!((c.premise_lhs - 1.0).abs() < 1e-12 && (c.premise_rhs - 2.0).abs() < 1e-12);
        assert!((c.conclusion_lhs - 0.5).abs() < 1e-12);
        assert!(c.premise && c.conclusion && c.implication_holds);
        let same = verify_lipschitz_lemma(&y, &y).unwrap();
        assert!(same.premise_lhs < 1e-12 && same.conclusion_lhs < 1e-12);
    }

    #[test]
    fn sup_on_ball_matches_dense_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let g = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-2.0..2.0));
            let c = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let exact = sup_affine_norm_on_ball(&g, &c, 3.0);
            let dense = (0..20_000)
                .map(|k| {
                    let t = k as f64 / 20_000.0 * std::f64::consts::TAU;
                    (&g * DVector::from_vec(vec![3.0 * t.cos(), 3.0 * t.sin()]) + &c).norm()
                })
                .fold(0.0, f64::max);
            assert!(exact >= dense - 1e-9, "{exact} < {dense}");
            assert!(exact <= dense + 1e-3, "{exact} > {dense}");
        }
    }

    #[test]
    fn sup_on_ball_degenerate_case() {
        // G = diag(1, 0), g = (0, 1): gᵀG... = 0, maximum at u = (3, 0).
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let c = DVector::from_vec(vec![0.0, 1.0]);
        assert!((sup_affine_norm_on_ball(&g, &c, 3.0) - 10f64.sqrt()).abs() < 1e-9);
    }

    fn standard_moments() -> GaussianMoments {
        GaussianMoments {
            mean: DVector::from_vec(vec![0.5, -0.5]),
            cov: DMatrix::identity(2, 2) * 0.5,
        }
    }

    #[test]
    fn ipm_bound_identity_case() {
        let y = affine([0.0, -1.0, 1.0, 0.0], [0.2, 0.1]);
        let check = verify_ipm_bound_affine(
            &y,
            &y,
            &QuadraticCritic::zero(2),
            &standard_moments(),
            6.0,
            1.0,
            60.0,
            4096,
            0,
        )
        .unwrap();
        assert!(check.lhs.abs() < 1e-12 && check.rhs.abs() < 1e-9);
        assert!(check.holds);
    }

    #[test]
    fn ipm_bound_shift_case() {
        let y = affine([1.0, 0.5, -0.5, 1.0], [0.0, 0.0]);
        let v = [0.3, -0.4];
        let h = affine([1.0, 0.5, -0.5, 1.0], v);
        let d = QuadraticCritic::new(DMatrix::zeros(2, 2), DVector::from_vec(v.to_vec())).unwrap();
        let check =
            verify_ipm_bound_affine(&h, &y, &d, &standard_moments(), 6.0, 1.0, 60.0, 4096, 1).unwrap();
        assert!(check.gradient_mismatch < 1e-20);
        assert!((check.lhs - 0.25).abs() < 1e-12);
        // Mean-shift dual value with the b cap.
        assert!(check.rho_c >= 60.0 * 0.5 - 1e-9);
        assert!(check.holds);
    }

    #[test]
    fn ipm_bound_rejects_rough_critics() {
        let y = affine([1.0, 0.0, 0.0, 1.0], [0.0, 0.0]);
        let d = QuadraticCritic::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2)).unwrap();
        let r = verify_ipm_bound_affine(&y, &y, &d, &standard_moments(), 6.0, 3.0, 60.0, 64, 0);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn lemma1_grid_on_twin_pair() {
        let pair = registered("twin-moons-rotation").unwrap();
        let family = GridHypothesisFamily::rotations(5.0);
        let eval = GridEvaluation::new(&family, &pair, 128, 256, 0).unwrap();
        let check = verify_lemma1_grid(&eval, &family.name, 0.3);
        assert!(!check.vacuous, "{check:?}");
        assert!(check.holds, "{check:?}");
        let tiny = verify_lemma1_grid(&eval, &family.name, 0.0);
        assert!(tiny.vacuous && tiny.holds);
    }
}
