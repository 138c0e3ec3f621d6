//! Correlation statistics for comparing a bound against the ground truth and
//! against competing training signals.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_PERMUTATIONS: usize = 9999;

fn centered(v: &[f64]) -> (Vec<f64>, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let ss = c.iter().map(|x| x * x).sum::<f64>();
    (c, ss)
}

fn check(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::contract(format!("series lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::contract("correlation needs at least three points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::contract("series contain non-finite values"));
    }
    Ok(())
}

/// Centered series and their norms, or an error if either is constant.
fn prepare(xs: &[f64], ys: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    check(xs, ys)?;
    let (cx, sx) = centered(xs);
    let (cy, sy) = centered(ys);
    // Relative test, so that tiny-but-varying series are still accepted.
    let scale = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    if !(sx > 1e-24 * scale(xs)) {
        return Err(Error::UndefinedCorrelation("first series has zero variance".into()));
    }
    if !(sy > 1e-24 * scale(ys)) {
        return Err(Error::UndefinedCorrelation("second series has zero variance".into()));
    }
    Ok((cx, cy, (sx * sy).sqrt()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sample Pearson correlation.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let (cx, cy, norm) = prepare(xs, ys)?;
    Ok((dot(&cx, &cy) / norm).clamp(-1.0, 1.0))
}

pub fn r_squared(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let r = pearson_r(xs, ys)?;
    Ok(r * r)
}

/// Two-sided permutation p-value of `|r|`, with the observed arrangement
/// counted once, so the smallest possible value is `1/(n_perms + 1)`.
pub fn p_value(xs: &[f64], ys: &[f64], n_perms: usize, seed: u64) -> Result<f64> {
    if n_perms < 99 {
        return Err(Error::contract("use at least 99 permutations"));
    }
    let (cx, mut cy, norm) = prepare(xs, ys)?;
    let observed = (dot(&cx, &cy) / norm).abs();
    // Ties from rounding should count as ties.
    let cut = observed * (1.0 - 1e-12);
    let mut rng = rng::stream(seed, 0);
    let mut hits = 0usize;
    for _ in 0..n_perms {
        cy.shuffle(&mut rng);
        if (dot(&cx, &cy) / norm).abs() >= cut {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (n_perms + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub signal: String,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub n: usize,
    pub is_bound: bool,
    /// Why no correlation was computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub rows: Vec<LedgerRow>,
}

pub const BOUND_SIGNAL: &str = "bound";

/// Correlate the bound and every competing signal with the ground-truth
/// risk of the same reports.
pub fn correlation_ledger(
    reports: &[BoundReport],
    competing: &[(String, Vec<f64>)],
    n_perms: usize,
    seed: u64,
) -> Result<Ledger> {
    let gt: Vec<f64> = reports.iter().map(|r| r.gt_risk).collect();
    let bound: Vec<f64> = reports.iter().map(|r| r.bound).collect();
    let mut series = vec![(BOUND_SIGNAL.to_string(), bound)];
    for (name, values) in competing {
        if values.len() != reports.len() {
            return Err(Error::contract(format!(
                "signal {name:?} has {} values for {} reports",
                values.len(),
                reports.len()
            )));
        }
        series.push((name.clone(), values.clone()));
    }
    let mut rows = Vec::with_capacity(series.len());
    for (i, (name, values)) in series.into_iter().enumerate() {
        let stream = rng::derive_seed(seed, rng::tag(&name));
        let (r, p, excluded) = match pearson_r(&values, &gt) {
            Ok(r) => (Some(r), Some(p_value(&values, &gt, n_perms, stream)?), None),
            Err(Error::UndefinedCorrelation(_)) => (None, None, Some("zero variance".to_string())),
            Err(e) => return Err(e),
        };
        rows.push(LedgerRow {
            signal: name,
            r,
            p,
            n: values.len(),
            is_bound: i == 0,
            excluded,
        });
    }
    Ok(Ledger { rows })
}

impl Ledger {
    pub fn bound(&self) -> &LedgerRow {
        self.rows.iter().find(|r| r.is_bound).expect("ledgers always carry the bound row")
    }

    /// Whether the bound's `r` is strictly above every competing signal's.
    pub fn bound_dominates(&self) -> bool {
        let Some(rb) = self.bound().r else {
            return false;
        };
        self.rows.iter().filter(|r| !r.is_bound).all(|r| r.r.is_none_or(|x| rb > x))
    }

    /// `signal,r,p,n`; excluded signals have empty `r` and `p`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("signal,r,p,n\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            writeln!(out, "{},{},{},{}", row.signal, opt(row.r), opt(row.p), row.n)
                .expect("writing to a String cannot fail");
        }
        out
    }
}

/// `x,y` rows for external plotting.
pub fn scatter_csv(xs: &[f64], ys: &[f64]) -> Result<String> {
    if xs.len() != ys.len() {
        return Err(Error::contract("scatter series lengths differ"));
    }
    let mut out = String::from("x,y\n");
    for (x, y) in xs.iter().zip(ys) {
        writeln!(out, "{x},{y}").expect("writing to a String cannot fail");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let doubled: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let negated: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson_r(&xs, &doubled).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_r(&xs, &negated).unwrap() + 1.0).abs() < 1e-15);
        // Centered (-1.5,-0.5,0.5,1.5) against (-1.5,0.5,-0.5,1.5): 4 / 5.
        assert!((pearson_r(&xs, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!((r_squared(&xs, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.64).abs() < 1e-15);
        assert!(matches!(
            r_squared(&xs, &[2.0; 4]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(pearson_r(&xs[..2], &xs[..2]), Err(Error::Contract(_))));
    }

    #[test]
    fn permutation_floor_and_symmetry() {
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
        assert_eq!(p_value(&xs, &ys, 999, 1).unwrap(), 0.001);
        let noisy: Vec<f64> = xs.iter().map(|x| (x * 1.7).sin()).collect();
        let flipped: Vec<f64> = noisy.iter().map(|y| -y).collect();
        let p1 = p_value(&xs, &noisy, 999, 5).unwrap();
        assert_eq!(p1, p_value(&xs, &noisy, 999, 5).unwrap());
        // Only |r| matters.
        assert_eq!(p1, p_value(&xs, &flipped, 999, 5).unwrap());
        assert!(p1 >= 0.001);
        assert!(p_value(&xs, &ys, 50, 1).is_err());
    }

    fn report(bound: f64, gt: f64) -> BoundReport {
        BoundReport::risk_form(0, bound, 0.1, 0.1, 0.2, gt)
    }

    #[test]
    fn ledger_rows() {
        let reports: Vec<BoundReport> = (0..10).map(|i| report(i as f64, i as f64)).collect();
        let competing = vec![
            ("flat".to_string(), vec![1.0; 10]),
            ("noise".to_string(), (0..10).map(|i| ((i * 7) % 10) as f64).collect()),
        ];
        let ledger = correlation_ledger(&reports, &competing, 199, 0).unwrap();
        assert_eq!(ledger.bound().r, Some(1.0));
        assert_eq!(ledger.rows[1].excluded.as_deref(), Some("zero variance"));
        assert!(ledger.bound_dominates());
        let csv = ledger.to_csv();
        assert!(csv.starts_with("signal,r,p,n\nbound,1,0.005,10\nflat,,,10\n"), "{csv}");

        let short = vec![("short".to_string(), vec![1.0, 2.0])];
        let err = correlation_ledger(&reports, &short, 199, 0).unwrap_err();
        assert!(err.to_string().contains("short"));
    }

    #[test]
    fn scatter_layout() {
        assert_eq!(scatter_csv(&[1.0, 2.5], &[0.0, -1.0]).unwrap(), "x,y\n1,0\n2.5,-1\n");
    }
}
