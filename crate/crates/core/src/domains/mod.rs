//! Synthetic domain pairs with known ground-truth maps.
//!
//! `D_A` is a truncated Gaussian mixture and `D_B = y ∘ D_A` exactly: a
//! B-sample is `y` applied to a fresh A-draw from an independent stream.
//! Knowing `y` is what makes the ground-truth risk computable; it is only
//! ever used for evaluation.

mod samples;
mod symmetry;
mod target;

pub use samples::{mean_squared_gap, norm, squared_distance, Mapping, SampleSet};
pub use symmetry::{ambiguity_demo, AmbiguityRecord, ClosedFormMap, MapStep, Symmetry, SymmetryPermutation};
pub use target::{AffineMap, InverseTarget, TargetMap, TargetSpec};

use std::f64::consts::FRAC_PI_4;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng;

impl Mapping for Mlp {
    fn map_point(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x)
    }
}

pub const DEFAULT_STD: f64 = 0.25;
pub const DEFAULT_SUPPORT_RADIUS: f64 = 6.0;
const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// Isotropic Gaussian mixture with a shared standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub means: Vec<Vec<f64>>,
    pub std: f64,
    pub weights: Vec<f64>,
    /// Declared symmetry of the mixture in A-space, if any.
    pub symmetry: Option<Symmetry>,
}

impl GaussianMixture {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        if self.means.is_empty() || self.means.len() != self.weights.len() {
            return Err(Error::contract("mixture needs one weight per component"));
        }
        let d = self.dim();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::contract("mixture means must share a positive dimension"));
        }
        if !(self.std > 0.0) || self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::contract("mixture std and weights must be positive"));
        }
        Ok(())
    }

    /// Component index per sample: counts follow the weights by largest
    /// remainder, order shuffled.
    fn stratified_components<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let total: f64 = self.weights.iter().sum();
        let exact: Vec<f64> = self.weights.iter().map(|w| w / total * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut rest = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        // Stable: larger remainder first, ties by index.
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &k in &order {
            if rest == 0 {
                break;
            }
            counts[k] += 1;
            rest -= 1;
        }
        let mut comps: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
            .collect();
        comps.shuffle(rng);
        comps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub name: String,
    pub mixture: GaussianMixture,
    /// The target map `y`; `D_B = y ∘ D_A`.
    pub target: TargetMap,
    /// Alternative targets `T` for the non-unique setting. Empty means `{y}`.
    pub alternatives: Vec<TargetMap>,
    pub support_radius: f64,
}

impl DomainPair {
    pub fn new(
        name: impl Into<String>,
        mixture: GaussianMixture,
        target: TargetMap,
        alternatives: Vec<TargetMap>,
        support_radius: f64,
    ) -> Result<DomainPair> {
        mixture.validate()?;
        let dim = mixture.dim();
        if dim > 8 {
            return Err(Error::contract(format!("dimension {dim} exceeds the supported maximum 8")));
        }
        target.check_dim(dim)?;
        for t in &alternatives {
            t.check_dim(dim)?;
        }
        if !(support_radius > 0.0) {
            return Err(Error::contract("support radius must be positive"));
        }
        Ok(DomainPair {
            name: name.into(),
            mixture,
            target,
            alternatives,
            support_radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.mixture.dim()
    }

    /// The target family `T`.
    pub fn targets(&self) -> Vec<&TargetMap> {
        if self.alternatives.is_empty() {
            vec![&self.target]
        } else {
            self.alternatives.iter().collect()
        }
    }

    fn admissible(&self, x: &[f64]) -> bool {
        let r = self.support_radius;
        norm(x) <= r && self.targets().iter().all(|t| norm(&t.apply(x)) <= r)
    }

    fn draw_a<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let comps = self.mixture.stratified_components(n, rng);
        let mut out = Vec::with_capacity(n);
        for k in comps {
            let mean = &self.mixture.means[k];
            let mut accepted = None;
            for _ in 0..MAX_REJECTIONS {
                let x: Vec<f64> = mean
                    .iter()
                    .map(|m| m + self.mixture.std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                if self.admissible(&x) {
                    accepted = Some(x);
                    break;
                }
            }
            out.push(accepted.ok_or_else(|| {
                Error::contract(format!(
                    "component {k} has negligible mass inside the support radius {}",
                    self.support_radius
                ))
            })?);
        }
        Ok(out)
    }

    /// `n` samples from `D_A` or `D_B`. A and B use independent streams of
    /// the same seed.
    pub fn sample(&self, side: Side, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::contract("sample size must be at least 1"));
        }
        let stream_id = match side {
            Side::A => 1,
            Side::B => 2,
        };
        let mut rng = rng::stream(seed, stream_id);
        let xs = self.draw_a(n, &mut rng)?;
        let rows: Vec<Vec<f64>> = match side {
            Side::A => xs,
            Side::B => xs.iter().map(|x| self.target.apply(x)).collect(),
        };
        SampleSet::from_rows(&rows)
    }

    /// `(1/n) Σ ‖h(x_i) − y(x_i)‖²` over a seeded A-sample. Evaluation only.
    pub fn ground_truth_risk(&self, h: &dyn Mapping, n: usize, seed: u64) -> Result<f64> {
        let xs = self.sample(Side::A, n, seed)?;
        Ok(mean_squared_gap(h, &self.target, &xs))
    }

    /// Same as [`ground_truth_risk`](Self::ground_truth_risk) for a network,
    /// with a dimension check.
    pub fn ground_truth_risk_net(&self, h: &Mlp, n: usize, seed: u64) -> Result<f64> {
        self.check_generator(h)?;
        self.ground_truth_risk(h, n, seed)
    }

    pub fn check_generator(&self, h: &Mlp) -> Result<()> {
        if h.input_dim() != self.dim() || h.output_dim() != self.dim() {
            return Err(Error::contract(format!(
                "network maps {} -> {}, domain pair is {}-dimensional",
                h.input_dim(),
                h.output_dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn make_symmetry_permutation(&self) -> Result<SymmetryPermutation> {
        SymmetryPermutation::for_pair(self)
    }
}

/// Registry entry plus overrides, as declared in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl DomainSpec {
    pub fn named(name: &str) -> DomainSpec {
        DomainSpec {
            name: name.into(),
            dim: None,
            std: None,
            support_radius: None,
            angle: None,
            alpha: None,
        }
    }

    pub fn build(&self) -> Result<DomainPair> {
        let dim = self.dim.unwrap_or(2);
        if !(2..=8).contains(&dim) {
            return Err(Error::Config(format!("domain dimension must be in [2, 8], got {dim}")));
        }
        let std = self.std.unwrap_or(DEFAULT_STD);
        let radius = self.support_radius.unwrap_or(DEFAULT_SUPPORT_RADIUS);
        let angle = self.angle.unwrap_or(FRAC_PI_4);
        let axis_point = |axis: usize, v: f64| {
            let mut p = vec![0.0; dim];
            p[axis] = v;
            p
        };
        let origin = vec![0.0; dim];
        let twin = |symmetry| GaussianMixture {
            means: vec![axis_point(0, 2.0), axis_point(0, -2.0)],
            std,
            weights: vec![0.5, 0.5],
            symmetry,
        };
        match self.name.as_str() {
            "twin-moons-rotation" => DomainPair::new(
                &self.name,
                twin(Some(Symmetry::PointReflection { center: origin })),
                TargetMap::rotation(angle),
                vec![],
                radius,
            ),
            "warp" => DomainPair::new(
                &self.name,
                twin(Some(Symmetry::PointReflection { center: origin })),
                TargetSpec::SmoothWarp {
                    angle,
                    alpha: self.alpha.unwrap_or(0.3),
                }
                .build()?,
                vec![],
                radius,
            ),
            "multi-target" => {
                // Invariant under quarter turns, so every rotation in T pushes
                // D_A onto the same D_B.
                let cross = GaussianMixture {
                    means: vec![
                        axis_point(0, 2.0),
                        axis_point(1, 2.0),
                        axis_point(0, -2.0),
                        axis_point(1, -2.0),
                    ],
                    std,
                    weights: vec![0.25; 4],
                    symmetry: Some(Symmetry::PointReflection { center: origin }),
                };
                DomainPair::new(
                    &self.name,
                    cross,
                    TargetMap::rotation(angle),
                    vec![TargetMap::rotation(angle), TargetMap::rotation(-angle)],
                    radius,
                )
            }
            "single-gaussian" => DomainPair::new(
                &self.name,
                GaussianMixture {
                    means: vec![axis_point(0, 1.0)],
                    std: self.std.unwrap_or(0.5),
                    weights: vec![1.0],
                    symmetry: Some(Symmetry::PointReflection {
                        center: axis_point(0, 1.0),
                    }),
                },
                TargetMap::rotation(angle),
                vec![],
                radius,
            ),
            other => Err(Error::Config(format!("unknown domain pair {other:?}"))),
        }
    }
}

/// Names of the built-in domain pairs.
pub const REGISTRY: &[&str] = &["twin-moons-rotation", "warp", "multi-target", "single-gaussian"];

pub fn registered(name: &str) -> Result<DomainPair> {
    DomainSpec::named(name).build()
}
