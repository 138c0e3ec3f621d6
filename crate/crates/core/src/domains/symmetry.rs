//! Distribution-preserving permutations of `D_B` and the alignment
//! ambiguity they create.

use serde::{Deserialize, Serialize};

use super::samples::{mean_squared_gap, Mapping, SampleSet};
use super::target::TargetMap;
use super::{DomainPair, Side};
use crate::error::{Error, Result};
use crate::transport::exact_w1;

/// Declared symmetry `S` of the A-side mixture, `S ∘ D_A = D_A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Symmetry {
    /// `x ↦ 2c − x`.
    PointReflection { center: Vec<f64> },
    /// `x_axis ↦ 2·offset − x_axis`, other coordinates fixed.
    Mirror { axis: usize, offset: f64 },
}

impl Symmetry {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Symmetry::PointReflection { center } => {
                x.iter().zip(center).map(|(xi, ci)| 2.0 * ci - xi).collect()
            }
            Symmetry::Mirror { axis, offset } => {
                let mut z = x.to_vec();
                z[*axis] = 2.0 * offset - z[*axis];
                z
            }
        }
    }
}

/// `Π = y ∘ S ∘ y⁻¹`: transports the A-side symmetry to B, so
/// `Π ∘ D_B = y ∘ S ∘ D_A = y ∘ D_A = D_B`. Both symmetries are involutions,
/// hence so is `Π`. For affine `y` and a point reflection about `c` this is
/// `Π(z) = 2·y(c) − z`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryPermutation {
    target: TargetMap,
    symmetry: Symmetry,
}

impl SymmetryPermutation {
    pub fn for_pair(pair: &DomainPair) -> Result<SymmetryPermutation> {
        let symmetry = pair.mixture.symmetry.clone().ok_or_else(|| {
            Error::Unsupported(format!("domain pair {:?} declares no symmetry", pair.name))
        })?;
        if let Symmetry::Mirror { axis, .. } = symmetry {
            if axis >= pair.dim() {
                return Err(Error::contract(format!("mirror axis {axis} out of range")));
            }
        }
        Ok(SymmetryPermutation {
            target: pair.target.clone(),
            symmetry,
        })
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.target.apply(&self.symmetry.apply(&self.target.inverse(z)))
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        self.apply(z)
    }

    pub fn symmetry(&self) -> &Symmetry {
        &self.symmetry
    }
}

impl Mapping for SymmetryPermutation {
    fn map_point(&self, z: &[f64]) -> Vec<f64> {
        self.apply(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapStep {
    Target,
    TargetInverse,
    Perm,
    PermInverse,
}

impl MapStep {
    fn inverse(self) -> MapStep {
        match self {
            MapStep::Target => MapStep::TargetInverse,
            MapStep::TargetInverse => MapStep::Target,
            MapStep::Perm => MapStep::PermInverse,
            MapStep::PermInverse => MapStep::Perm,
        }
    }
}

/// A composition of `y`, `y⁻¹`, `Π`, `Π⁻¹`, in application order. Kept
/// symbolic so that compositions like `y⁻¹ ∘ Π⁻¹ ∘ Π ∘ y` collapse to the
/// identity exactly rather than up to rounding.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClosedFormMap {
    steps: Vec<MapStep>,
}

impl ClosedFormMap {
    pub fn new(steps: Vec<MapStep>) -> ClosedFormMap {
        ClosedFormMap { steps }
    }

    /// `other ∘ self`: apply `self` first.
    pub fn then(&self, other: &ClosedFormMap) -> ClosedFormMap {
        let mut steps = self.steps.clone();
        steps.extend_from_slice(&other.steps);
        ClosedFormMap { steps }
    }

    /// Cancel adjacent inverse pairs.
    pub fn simplified(&self) -> ClosedFormMap {
        let mut out: Vec<MapStep> = Vec::with_capacity(self.steps.len());
        for &s in &self.steps {
            if out.last() == Some(&s.inverse()) {
                out.pop();
            } else {
                out.push(s);
            }
        }
        ClosedFormMap { steps: out }
    }

    pub fn is_identity(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[MapStep] {
        &self.steps
    }

    pub fn bind<'a>(&'a self, target: &'a TargetMap, perm: &'a SymmetryPermutation) -> BoundMap<'a> {
        BoundMap {
            map: self,
            target,
            perm,
        }
    }
}

pub struct BoundMap<'a> {
    map: &'a ClosedFormMap,
    target: &'a TargetMap,
    perm: &'a SymmetryPermutation,
}

impl Mapping for BoundMap<'_> {
    fn map_point(&self, x: &[f64]) -> Vec<f64> {
        self.map.steps.iter().fold(x.to_vec(), |z, step| match step {
            MapStep::Target => self.target.apply(&z),
            MapStep::TargetInverse => self.target.inverse(&z),
            MapStep::Perm => self.perm.apply(&z),
            MapStep::PermInverse => self.perm.inverse(&z),
        })
    }
}

/// The four circularity-objective terms for the wrong pair
/// `ĥ = Π ∘ y`, `ĥ' = y⁻¹ ∘ Π⁻¹`, plus the ground-truth risk of `ĥ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityRecord {
    pub n: usize,
    /// `W(ĥ ∘ S_A, S_B)`.
    pub divergence_of_wrong_map: f64,
    /// `W(ĥ' ∘ S_B, S_A)`.
    pub divergence_of_wrong_inverse: f64,
    /// `R_{D_A}[ĥ' ∘ ĥ, Id]` from the simplified composition.
    pub circularity_a: f64,
    /// `R_{D_B}[ĥ ∘ ĥ', Id]` from the simplified composition.
    pub circularity_b: f64,
    /// The same two risks evaluated step by step in floating point.
    pub circularity_a_numeric: f64,
    pub circularity_b_numeric: f64,
    pub gt_risk_of_wrong_map: f64,
    /// `W(Π ∘ S_B, S_B)`.
    pub permutation_self_divergence: f64,
}

impl AmbiguityRecord {
    /// Wrong map satisfies every loss while being far from `y`.
    pub fn demonstrates_ambiguity(&self, divergence_tol: f64, min_gt_risk: f64) -> bool {
        self.circularity_a == 0.0
            && self.circularity_b == 0.0
            && self.divergence_of_wrong_map < divergence_tol
            && self.divergence_of_wrong_inverse < divergence_tol
            && self.gt_risk_of_wrong_map >= min_gt_risk
    }
}

pub fn ambiguity_demo(pair: &DomainPair, n: usize, seed: u64) -> Result<AmbiguityRecord> {
    let perm = pair.make_symmetry_permutation()?;
    let wrong = ClosedFormMap::new(vec![MapStep::Target, MapStep::Perm]);
    let wrong_inverse = ClosedFormMap::new(vec![MapStep::PermInverse, MapStep::TargetInverse]);
    let round_a = wrong.then(&wrong_inverse);
    let round_b = wrong_inverse.then(&wrong);

    let s_a = pair.sample(Side::A, n, seed)?;
    let s_b = pair.sample(Side::B, n, seed)?;
    let identity = |x: &[f64]| x.to_vec();
    let risk = |map: &ClosedFormMap, s: &SampleSet| {
        mean_squared_gap(&map.bind(&pair.target, &perm), &identity, s)
    };

    let pushed_a = s_a.map(&wrong.bind(&pair.target, &perm));
    let pushed_b = s_b.map(&wrong_inverse.bind(&pair.target, &perm));
    Ok(AmbiguityRecord {
        n,
        divergence_of_wrong_map: exact_w1(&pushed_a, &s_b)?.value,
        divergence_of_wrong_inverse: exact_w1(&pushed_b, &s_a)?.value,
        circularity_a: risk(&round_a.simplified(), &s_a),
        circularity_b: risk(&round_b.simplified(), &s_b),
        circularity_a_numeric: risk(&round_a, &s_a),
        circularity_b_numeric: risk(&round_b, &s_b),
        gt_risk_of_wrong_map: mean_squared_gap(&wrong.bind(&pair.target, &perm), &pair.target, &s_a),
        permutation_self_divergence: exact_w1(&s_b.map(&perm), &s_b)?.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{registered, DomainSpec, GaussianMixture};

    #[test]
    fn twin_pair_permutation_is_point_reflection() {
        let pair = registered("twin-moons-rotation").unwrap();
        let perm = pair.make_symmetry_permutation().unwrap();
        let z = [0.7, -1.1];
        let p = perm.apply(&z);
        assert!((p[0] + 0.7).abs() < 1e-12 && (p[1] - 1.1).abs() < 1e-12);
        let back = perm.apply(&p);
        assert!((back[0] - z[0]).abs() < 1e-12 && (back[1] - z[1]).abs() < 1e-12);

        let s_b = pair.sample(Side::B, 512, 4).unwrap();
        let w = exact_w1(&s_b.map(&perm), &s_b).unwrap().value;
        assert!(w < 0.1, "W1 = {w}");
    }

    #[test]
    fn single_gaussian_reflection_preserves_distribution() {
        let pair = registered("single-gaussian").unwrap();
        let perm = pair.make_symmetry_permutation().unwrap();
        // Reflection about y(center) = rotated (1, 0).
        let c = pair.target.apply(&[1.0, 0.0]);
        let p = perm.apply(&c);
        assert!((p[0] - c[0]).abs() < 1e-12 && (p[1] - c[1]).abs() < 1e-12);
        let s_b = pair.sample(Side::B, 512, 2).unwrap();
        let w = exact_w1(&s_b.map(&perm), &s_b).unwrap().value;
        assert!(w < 0.15, "W1 = {w}");
    }

    #[test]
    fn permutation_is_an_involution_for_every_pair() {
        for name in crate::domains::REGISTRY {
            let pair = registered(name).unwrap();
            let perm = pair.make_symmetry_permutation().unwrap();
            for x in pair.sample(Side::B, 100, 0).unwrap().rows() {
                let back = perm.apply(&perm.apply(x));
                for (a, b) in back.iter().zip(x) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn missing_symmetry_is_unsupported() {
        let mut pair = registered("twin-moons-rotation").unwrap();
        pair.mixture.symmetry = None;
        assert!(matches!(pair.make_symmetry_permutation(), Err(Error::Unsupported(_))));
        assert!(ambiguity_demo(&pair, 16, 0).is_err());
    }

    #[test]
    fn compositions_collapse_symbolically() {
        let wrong = ClosedFormMap::new(vec![MapStep::Target, MapStep::Perm]);
        let inv = ClosedFormMap::new(vec![MapStep::PermInverse, MapStep::TargetInverse]);
        assert!(wrong.then(&inv).simplified().is_identity());
        assert!(inv.then(&wrong).simplified().is_identity());
        assert!(!wrong.simplified().is_identity());
    }

    #[test]
    fn ambiguity_on_default_pair() {
        let pair = registered("twin-moons-rotation").unwrap();
        let rec = ambiguity_demo(&pair, 512, 0).unwrap();
        assert_eq!(rec.circularity_a, 0.0);
        assert_eq!(rec.circularity_b, 0.0);
        assert!(rec.circularity_a_numeric < 1e-25);
        assert!(rec.divergence_of_wrong_map < 0.1, "{rec:?}");
        assert!(rec.divergence_of_wrong_inverse < 0.1, "{rec:?}");
        // 4 E‖x‖² with means at distance 2.
        assert!(rec.gt_risk_of_wrong_map >= 1.0);
        assert!((rec.gt_risk_of_wrong_map - 4.0 * (4.0 + 2.0 * 0.0625)).abs() < 0.5);
    }

    #[test]
    fn mirror_symmetry_variant() {
        let mut spec = DomainSpec::named("twin-moons-rotation");
        spec.std = Some(0.25);
        let mut pair = spec.build().unwrap();
        pair.mixture = GaussianMixture {
            symmetry: Some(Symmetry::Mirror { axis: 1, offset: 0.0 }),
            ..pair.mixture.clone()
        };
        let rec = ambiguity_demo(&pair, 512, 1).unwrap();
        // Mirror flips the within-blob coordinate only: risk 4σ².
        assert!((rec.gt_risk_of_wrong_map - 0.25).abs() < 0.05, "{rec:?}");
        assert!(rec.divergence_of_wrong_map < 0.1);
    }
}
