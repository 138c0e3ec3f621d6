//! Complexity-regularized alignment: find the shallowest generator that
//! fits the target distribution, then train a deeper student that fits it
//! too while staying close to that shallow teacher.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::DomainPair;
use crate::error::{Error, Result};
use crate::nn::{Architecture, Mlp};
use crate::training::{empirical_risk, train_generator_on, train_student_on, TrainConfig, TrainingData};

/// Factor applied to `ε₀` when searching for the minimal depth.
pub const LIBERAL_FACTOR: f64 = 1.5;
/// Epochs per probed depth.
pub const DEPTH_BUDGET: usize = 150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalDepth {
    pub k1: usize,
    pub threshold: f64,
    /// `(depth, held-out divergence)` for every probed depth.
    pub table: Vec<(usize, f64)>,
}

/// First depth in `depths` (ascending) whose generator, trained for
/// `cfg.epochs`, reaches held-out divergence `≤ 1.5 ε₀`. Depths are probed
/// in parallel on the current rayon pool.
pub fn find_minimal_complexity(
    pair: &DomainPair,
    depths: &[usize],
    width: usize,
    cfg: &TrainConfig,
) -> Result<MinimalDepth> {
    if depths.is_empty() || depths.windows(2).any(|w| w[0] >= w[1]) || depths[0] == 0 {
        return Err(Error::contract("depth range must be nonempty, positive and ascending"));
    }
    let data = TrainingData::new(pair, cfg)?;
    let threshold = LIBERAL_FACTOR * cfg.epsilon0;
    let divs: Vec<Result<f64>> = depths
        .par_iter()
        .map(|&d| {
            let arch = Architecture::generator(pair.dim(), d, width);
            let (h, _) = train_generator_on(&data, pair, &arch, cfg)?;
            data.divergence(&h)
        })
        .collect();
    let mut table = Vec::with_capacity(depths.len());
    for (&d, div) in depths.iter().zip(divs) {
        table.push((d, div?));
    }
    match table.iter().find(|(_, div)| *div <= threshold) {
        Some(&(k1, _)) => Ok(MinimalDepth { k1, threshold, table }),
        None => Err(Error::NoMinimalDepth { threshold, table }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
    pub div_g: f64,
    pub div_h: f64,
    pub risk_h_g: f64,
    pub gt_risk_g: f64,
    pub gt_risk_h: f64,
}

#[derive(Debug, Clone)]
pub struct Distilled {
    pub teacher: Mlp,
    pub student: Mlp,
    pub report: DistillReport,
}

/// Train a depth-`k1` teacher by plain WGAN fitting, then a depth-`k2`
/// student on divergence plus `cfg.lambda · R[h, g]` with the teacher frozen.
pub fn distill_train(pair: &DomainPair, k1: usize, k2: usize, width: usize, cfg: &TrainConfig) -> Result<Distilled> {
    if k1 == 0 || k2 <= k1 {
        return Err(Error::contract(format!("student depth {k2} must exceed teacher depth {k1}")));
    }
    let data = TrainingData::new(pair, cfg)?;
    let (teacher, _) = train_generator_on(&data, pair, &Architecture::generator(pair.dim(), k1, width), cfg)?;
    distill_from_teacher(&data, pair, teacher, k1, k2, width, cfg)
}

/// The student step alone, for a teacher trained elsewhere.
pub fn distill_from_teacher(
    data: &TrainingData,
    pair: &DomainPair,
    teacher: Mlp,
    k1: usize,
    k2: usize,
    width: usize,
    cfg: &TrainConfig,
) -> Result<Distilled> {
    let student_cfg = cfg.reseeded("student");
    let (student, _) =
        train_student_on(data, &teacher, pair, &Architecture::generator(pair.dim(), k2, width), &student_cfg)?;
    let report = DistillReport {
        k1,
        k2,
        lambda: cfg.lambda,
        div_g: data.divergence(&teacher)?,
        div_h: data.divergence(&student)?,
        risk_h_g: empirical_risk(&student, &teacher, &data.holdout_a)?,
        gt_risk_g: pair.ground_truth_risk(&teacher, cfg.n_eval, data.eval_seed)?,
        gt_risk_h: pair.ground_truth_risk(&student, cfg.n_eval, data.eval_seed)?,
    };
    Ok(Distilled {
        teacher,
        student,
        report,
    })
}

/// λ values tried by [`distill_tuned`].
pub const LAMBDA_GRID: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone)]
pub struct DistillTuning {
    pub chosen: Distilled,
    /// One report per probed λ, in probe order.
    pub probes: Vec<DistillReport>,
}

/// Train one teacher, then a student per λ in `lambdas`, and keep the largest
/// λ whose student stays within `ε₀` (the least divergent one if none does).
/// Only unsupervised quantities enter the choice.
pub fn distill_tuned(
    pair: &DomainPair,
    k1: usize,
    k2: usize,
    width: usize,
    cfg: &TrainConfig,
    lambdas: &[f64],
) -> Result<DistillTuning> {
    if lambdas.is_empty() {
        return Err(Error::contract("no λ values to probe"));
    }
    if k1 == 0 || k2 <= k1 {
        return Err(Error::contract(format!("student depth {k2} must exceed teacher depth {k1}")));
    }
    let data = TrainingData::new(pair, cfg)?;
    let (teacher, _) = train_generator_on(&data, pair, &Architecture::generator(pair.dim(), k1, width), cfg)?;
    let runs: Vec<Distilled> = lambdas
        .par_iter()
        .map(|&l| distill_from_teacher(&data, pair, teacher.clone(), k1, k2, width, &cfg.with_lambda(l)))
        .collect::<Result<_>>()?;
    let feasible = runs
        .iter()
        .enumerate()
        .filter(|(_, d)| d.report.div_h <= cfg.epsilon0)
        .max_by(|a, b| a.1.report.lambda.total_cmp(&b.1.report.lambda))
        .map(|(i, _)| i);
    let pick = feasible.unwrap_or_else(|| {
        (0..runs.len())
            .min_by(|&a, &b| runs[a].report.div_h.total_cmp(&runs[b].report.div_h))
            .expect("at least one probe")
    });
    let probes = runs.iter().map(|d| d.report.clone()).collect();
    Ok(DistillTuning {
        chosen: runs.into_iter().nth(pick).expect("index in range"),
        probes,
    })
}
