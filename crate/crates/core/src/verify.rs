//! The inequality suite: every numeric check of the bounds module plus the
//! ambiguity demonstration, run per domain pair.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    verify_ipm_bound_affine, verify_lemma1_grid, verify_lipschitz_lemma, verify_per_sample_lemma_grid,
    GaussianMoments, GridCheck, GridEvaluation, GridHypothesisFamily,
};
use crate::domains::{ambiguity_demo, AffineMap, AmbiguityRecord, DomainPair, Side};
use crate::error::Result;
use crate::rng;
use crate::transport::{default_b_cap, QuadraticCritic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    pub grid_step_degrees: f64,
    pub epsilon0: f64,
    /// Held-out size for grid divergences.
    pub n_div: usize,
    /// Sample size for grid risks.
    pub n_risk: usize,
    /// Rows of the risk sample used as per-sample probe points.
    pub probe_points: usize,
    pub ipm_trials: usize,
    /// Sample size of the empirical `D_A` in the IPM check.
    pub ipm_n: usize,
    /// Critic smoothness cap of the quadratic class.
    pub ipm_beta_cap: f64,
    pub lipschitz_pairs: usize,
    pub ambiguity_n: usize,
    pub seed: u64,
}

impl Default for VerifySettings {
    fn default() -> VerifySettings {
        VerifySettings {
            grid_step_degrees: 1.0,
            epsilon0: 0.2,
            n_div: 256,
            n_risk: 512,
            probe_points: 16,
            ipm_trials: 100,
            ipm_n: 4096,
            ipm_beta_cap: 1.9,
            lipschitz_pairs: 500,
            ambiguity_n: 512,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub violations: usize,
    /// Largest `lhs − rhs` seen.
    pub worst_margin: f64,
}

impl TrialSummary {
    pub fn passes(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSuite {
    pub pair: String,
    pub lemma1: GridCheck,
    pub per_sample: Vec<GridCheck>,
    pub ipm: TrialSummary,
    pub lipschitz: TrialSummary,
    pub ambiguity: AmbiguityRecord,
    pub ambiguity_demonstrated: bool,
}

impl PairSuite {
    pub fn passes(&self) -> bool {
        self.lemma1.holds
            && self.per_sample.iter().all(|c| c.holds)
            && self.ipm.passes()
            && self.lipschitz.passes()
            && self.ambiguity_demonstrated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub settings: VerifySettings,
    pub pairs: Vec<PairSuite>,
}

impl SuiteReport {
    pub fn passes(&self) -> bool {
        self.pairs.iter().all(PairSuite::passes)
    }
}

/// Ambiguity thresholds: the wrong map must fit the marginals to within
/// this divergence while being at least this far from the target.
pub const AMBIGUITY_DIVERGENCE_TOL: f64 = 0.1;
pub const AMBIGUITY_MIN_RISK: f64 = 1.0;

pub fn run_suite(pairs: &[DomainPair], settings: &VerifySettings) -> Result<SuiteReport> {
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        out.push(run_pair(pair, settings)?);
    }
    Ok(SuiteReport {
        settings: settings.clone(),
        pairs: out,
    })
}

pub fn run_pair(pair: &DomainPair, settings: &VerifySettings) -> Result<PairSuite> {
    let seed = rng::derive_seed(settings.seed, rng::tag(&pair.name));
    let family = GridHypothesisFamily::for_pair(pair, settings.grid_step_degrees);
    let eval = GridEvaluation::new(&family, pair, settings.n_div, settings.n_risk, seed)?;
    let lemma1 = verify_lemma1_grid(&eval, &family.name, settings.epsilon0);
    let rows = settings.probe_points.min(eval.risk_sample().len());
    let per_sample = (0..rows)
        .map(|row| verify_per_sample_lemma_grid(&eval, &family.name, row, settings.epsilon0))
        .collect();
    let ambiguity = ambiguity_demo(pair, settings.ambiguity_n, seed)?;
    Ok(PairSuite {
        pair: pair.name.clone(),
        lemma1,
        per_sample,
        ipm: ipm_trials(pair, settings, seed)?,
        lipschitz: lipschitz_trials(pair.dim(), settings.lipschitz_pairs, seed),
        ambiguity_demonstrated: ambiguity.demonstrates_ambiguity(AMBIGUITY_DIVERGENCE_TOL, AMBIGUITY_MIN_RISK),
        ambiguity,
    })
}

fn random_matrix(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-scale..scale))
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(-scale..scale))
}

/// Well-conditioned random invertible matrix.
fn random_invertible(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    loop {
        let m = random_matrix(rng, dim, 1.5);
        let sv = m.singular_values();
        let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if lo > 0.1 {
            return m;
        }
    }
}

fn affine(m: &DMatrix<f64>, c: &DVector<f64>) -> AffineMap {
    let dim = c.len();
    let rows: Vec<f64> = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
    AffineMap::new(dim, &rows, c.as_slice()).expect("square matrix and matching offset")
}

/// The IPM lemma over random affine `h` and quadratic `d`, with `D_A`
/// matched to the pair's first two moments and `y` the pair's target when
/// it is affine.
fn ipm_trials(pair: &DomainPair, settings: &VerifySettings, seed: u64) -> Result<TrialSummary> {
    let dim = pair.dim();
    let s = pair.sample(Side::A, 4096, rng::derive_seed(seed, rng::tag("moments")))?;
    let mean = DVector::from_vec(s.mean());
    let second = DMatrix::from_row_slice(dim, dim, &s.second_moment());
    let moments = GaussianMoments {
        cov: &second - &mean * mean.transpose(),
        mean,
    };
    let mut rng = rng::stream(rng::derive_seed(seed, rng::tag("ipm")), 0);
    let b_cap = default_b_cap(pair.support_radius);
    let mut summary = TrialSummary {
        trials: settings.ipm_trials,
        violations: 0,
        worst_margin: f64::NEG_INFINITY,
    };
    for k in 0..settings.ipm_trials {
        let (ay, cy) = match pair.target.as_affine(dim) {
            Some(yc) if k % 2 == 0 => yc,
            _ => (random_invertible(&mut rng, dim), random_vector(&mut rng, dim, 0.5)),
        };
        let spread: f64 = rng.random_range(0.0..1.0);
        let ah = &ay + random_matrix(&mut rng, dim, spread);
        let ch = &cy + random_vector(&mut rng, dim, spread);
        let raw = random_matrix(&mut rng, dim, 1.0);
        let sym = (&raw + raw.transpose()) * 0.5;
        let norm = sym.singular_values().iter().copied().fold(0.0, f64::max).max(1e-12);
        let beta: f64 = rng.random_range(0.0..settings.ipm_beta_cap);
        let b = random_vector(&mut rng, dim, 2.0);
        let d = QuadraticCritic::new(sym * (beta / norm), b)?;
        let check = verify_ipm_bound_affine(
            &affine(&ah, &ch),
            &affine(&ay, &cy),
            &d,
            &moments,
            pair.support_radius,
            settings.ipm_beta_cap,
            b_cap,
            settings.ipm_n,
            rng::derive_seed(seed, k as u64),
        )?;
        summary.worst_margin = summary.worst_margin.max(check.lhs - check.rhs);
        if !check.holds {
            summary.violations += 1;
        }
    }
    Ok(summary)
}

/// The Lipschitz implication over random affine pairs whose premise holds:
/// `h = y + E` with `‖E‖` a random fraction of `1/‖J_y⁻¹‖`.
pub fn lipschitz_trials(dim: usize, n: usize, seed: u64) -> TrialSummary {
    let mut rng = rng::stream(rng::derive_seed(seed, rng::tag("lipschitz")), 0);
    let mut summary = TrialSummary {
        trials: n,
        violations: 0,
        worst_margin: f64::NEG_INFINITY,
    };
    let mut done = 0;
    while done < n {
        let ay = random_invertible(&mut rng, dim);
        let y = affine(&ay, &random_vector(&mut rng, dim, 1.0));
        let e = random_matrix(&mut rng, dim, 1.0);
        let e_norm = e.singular_values().iter().copied().fold(0.0, f64::max).max(1e-12);
        let y_inv_norm = y.inverse_matrix().singular_values().iter().copied().fold(0.0, f64::max);
        let target: f64 = rng.random_range(0.0..1.0) / y_inv_norm;
        let h = affine(&(&ay + e * (target / e_norm)), &random_vector(&mut rng, dim, 1.0));
        let check = verify_lipschitz_lemma(&h, &y).expect("dimensions match");
        if !check.premise {
            continue;
        }
        done += 1;
        summary.worst_margin = summary.worst_margin.max(check.conclusion_lhs - 1.0);
        if !check.implication_holds {
            summary.violations += 1;
        }
    }
    summary
}
