use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::samples::Mapping;
use crate::error::{Error, Result};

/// Invertible affine map `x ↦ A x + c` with its inverse cached.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
    inverse: DMatrix<f64>,
}

impl AffineMap {
    /// `matrix` is row-major `dim x dim`.
    pub fn new(dim: usize, matrix: &[f64], offset: &[f64]) -> Result<AffineMap> {
        if matrix.len() != dim * dim || offset.len() != dim {
            return Err(Error::contract(format!(
                "affine map of dimension {dim} needs {} matrix and {dim} offset entries",
                dim * dim
            )));
        }
        let matrix = DMatrix::from_row_slice(dim, dim, matrix);
        let inverse = matrix
            .clone()
            .try_inverse()
            .filter(|inv| inv.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::contract("affine target map is singular"))?;
        Ok(AffineMap {
            matrix,
            offset: DVector::from_column_slice(offset),
            inverse,
        })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(x) + &self.offset)
            .iter()
            .copied()
            .collect()
    }

    fn invert(&self, z: &[f64]) -> Vec<f64> {
        (&self.inverse * (DVector::from_column_slice(z) - &self.offset))
            .iter()
            .copied()
            .collect()
    }
}

/// Closed-form C¹ diffeomorphisms used as ground-truth maps.
///
/// Rotations act in the `(x1, x2)` plane and fix the other coordinates. The
/// smooth warp is a rotation applied after an additive tanh coupling,
/// `u_i = x_i + α·tanh(x_{i+1})` for `i < d`, `u_d = x_d`; the coupling is
/// unit upper-triangular, so it inverts back-to-front in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetMap {
    Rotation { angle: f64 },
    Affine(AffineMap),
    SmoothWarp { angle: f64, alpha: f64 },
}

/// Serializable description of a target map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Rotation { angle: f64 },
    Affine { dim: usize, matrix: Vec<f64>, offset: Vec<f64> },
    SmoothWarp { angle: f64, alpha: f64 },
}

impl TargetSpec {
    pub fn build(&self) -> Result<TargetMap> {
        match self {
            TargetSpec::Rotation { angle } => Ok(TargetMap::Rotation { angle: *angle }),
            TargetSpec::Affine { dim, matrix, offset } => {
                Ok(TargetMap::Affine(AffineMap::new(*dim, matrix, offset)?))
            }
            TargetSpec::SmoothWarp { angle, alpha } => {
                if !(alpha.abs() < 1.0) {
                    return Err(Error::contract(format!("warp blend |α| must be < 1, got {alpha}")));
                }
                Ok(TargetMap::SmoothWarp {
                    angle: *angle,
                    alpha: *alpha,
                })
            }
        }
    }
}

fn rotate(angle: f64, x: &mut [f64]) {
    let (s, c) = angle.sin_cos();
    let (a, b) = (x[0], x[1]);
    x[0] = c * a - s * b;
    x[1] = s * a + c * b;
}

impl TargetMap {
    pub fn rotation(angle: f64) -> TargetMap {
        TargetMap::Rotation { angle }
    }

    /// Fixed dimension, if the map has one.
    pub fn fixed_dim(&self) -> Option<usize> {
        match self {
            TargetMap::Affine(a) => Some(a.dim()),
            _ => None,
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self.fixed_dim() {
            Some(d) if d != dim => Err(Error::contract(format!(
                "target map has dimension {d}, domain has {dim}"
            ))),
            None if dim < 2 => Err(Error::contract("planar maps need dimension >= 2")),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TargetMap::Rotation { angle } => {
                let mut z = x.to_vec();
                rotate(*angle, &mut z);
                z
            }
            TargetMap::Affine(a) => a.apply(x),
            TargetMap::SmoothWarp { angle, alpha } => {
                let d = x.len();
                let mut u: Vec<f64> = (0..d)
                    .map(|i| if i + 1 < d { x[i] + alpha * x[i + 1].tanh() } else { x[i] })
                    .collect();
                rotate(*angle, &mut u);
                u
            }
        }
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        match self {
            TargetMap::Rotation { angle } => {
                let mut x = z.to_vec();
                rotate(-*angle, &mut x);
                x
            }
            TargetMap::Affine(a) => a.invert(z),
            TargetMap::SmoothWarp { angle, alpha } => {
                let mut x = z.to_vec();
                rotate(-*angle, &mut x);
                let d = x.len();
                for i in (0..d.saturating_sub(1)).rev() {
                    x[i] -= alpha * x[i + 1].tanh();
                }
                x
            }
        }
    }

    /// Jacobian at `x`, row-major `d x d`.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut rot = vec![0.0; d * d];
        for i in 0..d {
            rot[i * d + i] = 1.0;
        }
        let set_rotation = |rot: &mut [f64], angle: f64| {
            let (s, c) = angle.sin_cos();
            rot[0] = c;
            rot[1] = -s;
            rot[d] = s;
            rot[d + 1] = c;
        };
        match self {
            TargetMap::Rotation { angle } => {
                set_rotation(&mut rot, *angle);
                rot
            }
            TargetMap::Affine(a) => {
                let mut j = Vec::with_capacity(d * d);
                for r in 0..d {
                    for c in 0..d {
                        j.push(a.matrix[(r, c)]);
                    }
                }
                j
            }
            TargetMap::SmoothWarp { angle, alpha } => {
                set_rotation(&mut rot, *angle);
                // Coupling Jacobian: identity plus α·sech²(x_{i+1}) above the diagonal.
                let mut coupling = vec![0.0; d * d];
                for i in 0..d {
                    coupling[i * d + i] = 1.0;
                    if i + 1 < d {
                        let t = x[i + 1].tanh();
                        coupling[i * d + i + 1] = alpha * (1.0 - t * t);
                    }
                }
                let mut j = vec![0.0; d * d];
                for r in 0..d {
                    for c in 0..d {
                        j[r * d + c] = (0..d).map(|k| rot[r * d + k] * coupling[k * d + c]).sum();
                    }
                }
                j
            }
        }
    }

    /// Constant Jacobian and offset when the map is affine.
    pub fn as_affine(&self, dim: usize) -> Option<(DMatrix<f64>, DVector<f64>)> {
        match self {
            TargetMap::Rotation { .. } => {
                let zero = vec![0.0; dim];
                let j = self.jacobian(&zero);
                Some((DMatrix::from_row_slice(dim, dim, &j), DVector::zeros(dim)))
            }
            TargetMap::Affine(a) => Some((a.matrix.clone(), a.offset.clone())),
            TargetMap::SmoothWarp { .. } => None,
        }
    }

    pub fn inverse_map(&self) -> InverseTarget<'_> {
        InverseTarget(self)
    }
}

impl Mapping for TargetMap {
    fn map_point(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x)
    }
}

/// `y⁻¹` viewed as a [`Mapping`].
pub struct InverseTarget<'a>(&'a TargetMap);

impl Mapping for InverseTarget<'_> {
    fn map_point(&self, x: &[f64]) -> Vec<f64> {
        self.0.inverse(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn all_maps() -> Vec<TargetMap> {
        vec![
            TargetMap::rotation(FRAC_PI_4),
            TargetMap::Affine(AffineMap::new(2, &[1.5, 0.3, -0.2, 0.8], &[0.5, -1.0]).unwrap()),
            TargetMap::SmoothWarp {
                angle: FRAC_PI_4,
                alpha: 0.3,
            },
        ]
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for map in all_maps() {
            for _ in 0..1000 {
                let x = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
                let back = map.apply(&map.inverse(&x));
                let fwd = map.inverse(&map.apply(&x));
                for k in 0..2 {
                    assert!((back[k] - x[k]).abs() < 1e-10, "{map:?}");
                    assert!((fwd[k] - x[k]).abs() < 1e-10, "{map:?}");
                }
            }
        }
    }

    #[test]
    fn warp_inverse_in_higher_dimension() {
        let map = TargetMap::SmoothWarp { angle: 0.7, alpha: 0.3 };
        let x = [0.4, -1.3, 2.2, 0.9, -0.5];
        let back = map.inverse(&map.apply(&x));
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn warp_jacobian_matches_finite_differences() {
        let map = TargetMap::SmoothWarp { angle: 0.9, alpha: 0.3 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-6;
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let j = map.jacobian(&x);
            for c in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let (fp, fm) = (map.apply(&xp), map.apply(&xm));
                for r in 0..3 {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    assert!((fd - j[r * 3 + c]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn singular_affine_is_rejected() {
        assert!(AffineMap::new(2, &[1.0, 2.0, 2.0, 4.0], &[0.0, 0.0]).is_err());
    }
}
