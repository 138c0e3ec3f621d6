//! Multi-run studies: depth sweeps, the correlation ledger of the stopping
//! criterion, and per-sample bound scatter.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{per_sample_bound_on, BoundReport, StopOutcome};
use crate::domains::{DomainPair, Side};
use crate::error::{Error, Result};
use crate::evalstats::{correlation_ledger, pearson_r, scatter_csv, Ledger};
use crate::nn::{Architecture, Mlp};
use crate::rng;
use crate::training::{train_generator_on, TrainConfig, TrainingData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub depth: usize,
    pub seed: u64,
    pub div: f64,
    pub gt_risk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub depth: usize,
    /// Medians over seeds.
    pub div: f64,
    pub gt_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSweep {
    pub runs: Vec<SweepRun>,
    pub rows: Vec<SweepRow>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One generator per `(depth, seed)`; `cfg.seed` is replaced by each seed.
/// Runs execute in parallel on the current rayon pool.
pub fn depth_sweep(
    pair: &DomainPair,
    depths: &[usize],
    width: usize,
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<DepthSweep> {
    if depths.is_empty() || seeds.is_empty() {
        return Err(Error::contract("depth sweep needs depths and seeds"));
    }
    let jobs: Vec<(usize, u64)> = depths.iter().flat_map(|&d| seeds.iter().map(move |&s| (d, s))).collect();
    let runs: Vec<Result<SweepRun>> = jobs
        .par_iter()
        .map(|&(depth, seed)| {
            let run_cfg = TrainConfig {
                seed,
                data_seed: None,
                ..cfg.clone()
            };
            let data = TrainingData::new(pair, &run_cfg)?;
            let arch = Architecture::generator(pair.dim(), depth, width);
            let (h, _) = train_generator_on(&data, pair, &arch, &run_cfg)?;
            Ok(SweepRun {
                depth,
                seed,
                div: data.divergence(&h)?,
                gt_risk: pair.ground_truth_risk(&h, run_cfg.n_eval, data.eval_seed)?,
            })
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = depths
        .iter()
        .map(|&depth| {
            let of: Vec<&SweepRun> = runs.iter().filter(|r| r.depth == depth).collect();
            SweepRow {
                depth,
                div: median(&of.iter().map(|r| r.div).collect::<Vec<_>>()),
                gt_risk: median(&of.iter().map(|r| r.gt_risk).collect::<Vec<_>>()),
            }
        })
        .collect();
    Ok(DepthSweep { runs, rows })
}

impl DepthSweep {
    /// `depth,div,gt_risk` with per-depth medians.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth,div,gt_risk\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.depth, r.div, r.gt_risk).expect("writing to a String cannot fail");
        }
        out
    }

    /// `depth,seed,div,gt_risk`, one row per run.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("depth,seed,div,gt_risk\n");
        for r in &self.runs {
            writeln!(out, "{},{},{},{}", r.depth, r.seed, r.div, r.gt_risk).expect("writing to a String cannot fail");
        }
        out
    }

    /// Smallest depth whose median divergence is within `epsilon0`.
    pub fn minimal_feasible_depth(&self, epsilon0: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.div <= epsilon0).map(|r| r.depth)
    }

    pub fn row(&self, depth: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.depth == depth)
    }
}

/// Correlate the stopping criterion's bound with the ground truth over the
/// feasible epochs, against the generator and critic losses of `h1`.
pub fn stop_ledger(outcome: &StopOutcome, n_perms: usize, seed: u64) -> Result<Ledger> {
    let feasible: Vec<usize> = (0..outcome.reports.len()).filter(|&i| outcome.reports[i].feasible).collect();
    let reports: Vec<BoundReport> = feasible.iter().map(|&i| outcome.reports[i].clone()).collect();
    let competing = vec![
        (
            "loss_gen".to_string(),
            feasible.iter().map(|&i| outcome.h1_losses[i].loss_gen).collect(),
        ),
        (
            "loss_critic".to_string(),
            feasible.iter().map(|&i| outcome.h1_losses[i].loss_critic).collect(),
        ),
    ];
    correlation_ledger(&reports, &competing, n_perms, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub x: Vec<f64>,
    pub bound: f64,
    pub true_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSampleStudy {
    pub probes: Vec<ProbePoint>,
    /// `None` when either series is constant.
    pub r: Option<f64>,
    pub r_squared: Option<f64>,
}

impl PerSampleStudy {
    /// `x,y` with the bound as `x` and the true loss as `y`.
    pub fn scatter_csv(&self) -> String {
        let (b, t): (Vec<f64>, Vec<f64>) = self.probes.iter().map(|p| (p.bound, p.true_loss)).unzip();
        scatter_csv(&b, &t).expect("equal lengths by construction")
    }
}

/// Per-sample bounds of `h1` at `n_probes` held-out A points, one adversary
/// each (trained with `adv_cfg`), in parallel on the current rayon pool.
pub fn per_sample_study(
    h1: &Mlp,
    pair: &DomainPair,
    arch: &Architecture,
    n_probes: usize,
    adv_cfg: &TrainConfig,
) -> Result<PerSampleStudy> {
    let data = TrainingData::new(pair, adv_cfg)?;
    let probe_seed = rng::derive_seed(adv_cfg.data_seed(), rng::tag("probes"));
    let xs = pair.sample(Side::A, n_probes, probe_seed)?;
    let results: Vec<Result<ProbePoint>> = (0..xs.len())
        .into_par_iter()
        .map(|i| {
            let cfg = adv_cfg.reseeded(&format!("probe{i}"));
            let b = per_sample_bound_on(&data, h1, pair, xs.row(i), arch, &cfg)?;
            Ok(ProbePoint {
                x: b.x,
                bound: b.bound,
                true_loss: b.true_loss,
            })
        })
        .collect();
    let probes = results.into_iter().collect::<Result<Vec<_>>>()?;
    let (b, t): (Vec<f64>, Vec<f64>) = probes.iter().map(|p| (p.bound, p.true_loss)).unzip();
    let r = match pearson_r(&b, &t) {
        Ok(r) => Some(r),
        Err(Error::UndefinedCorrelation(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(PerSampleStudy {
        probes,
        r,
        r_squared: r.map(|r| r * r),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
