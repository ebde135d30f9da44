//! Random low-rank projections and the Bernoulli side selection.

use std::fmt;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_projector, pinv_psd, sym_eig_range, ParamMatrix};
use crate::problems::gaussian;
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    /// i.i.d. standard normal entries.
    Gaussian,
    /// `r` distinct columns of the identity, uniformly at random.
    CoordinateSubset,
}

impl Distribution {
    pub fn name(self) -> &'static str {
        match self {
            Distribution::Gaussian => "gaussian",
            Distribution::CoordinateSubset => "coordinate-subset",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchSpec {
    pub distribution: Distribution,
    pub rank: usize,
}

impl SketchSpec {
    pub fn validate(&self, dim: usize, field: &str) -> Result<()> {
        if self.rank == 0 || self.rank > dim {
            return Err(Error::config(
                field,
                format!("rank {} must lie in 1..={dim}", self.rank),
            ));
        }
        Ok(())
    }

    /// `E[H] = (r/d) I` holds for both distributions.
    pub fn expected_scale(&self, dim: usize) -> f64 {
        self.rank as f64 / dim as f64
    }
}

/// Draw a `dim x r` factor whose column space is the sketched subspace.
pub fn sample_factor(spec: &SketchSpec, dim: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    match spec.distribution {
        Distribution::Gaussian => gaussian(rng, dim, spec.rank),
        Distribution::CoordinateSubset => {
            let mut idx = index::sample(rng, dim, spec.rank).into_vec();
            idx.sort_unstable();
            let mut f = DMatrix::zeros(dim, spec.rank);
            for (k, &i) in idx.iter().enumerate() {
                f[(i, k)] = 1.0;
            }
            f
        }
    }
}

/// Projector for a factor. Coordinate factors give an exact 0/1 diagonal.
pub fn projector(spec: &SketchSpec, factor: &DMatrix<f64>) -> DMatrix<f64> {
    match spec.distribution {
        Distribution::Gaussian => column_projector(factor),
        Distribution::CoordinateSubset => {
            let dim = factor.nrows();
            let mut h = DMatrix::zeros(dim, dim);
            for col in factor.column_iter() {
                if let Some(i) = col.iter().position(|&v| v != 0.0) {
                    h[(i, i)] = 1.0;
                }
            }
            h
        }
    }
}

/// One realized sketch. For the left side `factor` is `B` (m x r); for the
/// right side it is `A^T` (n x r).
#[derive(Clone, Debug)]
pub struct Sketch {
    pub side: Side,
    pub factor: DMatrix<f64>,
    pub projection: DMatrix<f64>,
}

impl Sketch {
    /// `H_B G` or `G H_A`.
    pub fn apply(&self, g: &ParamMatrix) -> ParamMatrix {
        match self.side {
            Side::Left => &self.projection * g,
            Side::Right => g * &self.projection,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliSketcher {
    /// Probability of the left sketch.
    pub p: f64,
    pub left: SketchSpec,
    pub right: SketchSpec,
}

impl BernoulliSketcher {
    pub fn validate(&self, shape: (usize, usize)) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) || self.p.is_nan() {
            return Err(Error::config("p", format!("{} is outside [0, 1]", self.p)));
        }
        if self.p > 0.0 {
            self.left.validate(shape.0, "left.rank")?;
        }
        if self.p < 1.0 {
            self.right.validate(shape.1, "right.rank")?;
        }
        Ok(())
    }

    pub fn draw(&self, shape: (usize, usize), coin: &mut StreamRng, rng: &mut StreamRng) -> Sketch {
        let side = if coin.random_bool(self.p) {
            Side::Left
        } else {
            Side::Right
        };
        let (spec, dim) = match side {
            Side::Left => (&self.left, shape.0),
            Side::Right => (&self.right, shape.1),
        };
        let factor = sample_factor(spec, dim, rng);
        let projection = projector(spec, &factor);
        Sketch {
            side,
            factor,
            projection,
        }
    }

    /// Mixed extreme eigenvalues `p * lambda(E H_B) + (1-p) * lambda(E H_A)`
    /// using the exact scalar expectations.
    pub fn spectral_weights(&self, shape: (usize, usize)) -> (f64, f64) {
        let l = if self.p > 0.0 {
            self.left.expected_scale(shape.0)
        } else {
            0.0
        };
        let r = if self.p < 1.0 {
            self.right.expected_scale(shape.1)
        } else {
            0.0
        };
        let v = self.p * l + (1.0 - self.p) * r;
        (v, v)
    }
}

pub fn mix_weights(p: f64, left: (f64, f64), right: (f64, f64)) -> (f64, f64) {
    (p * left.0 + (1.0 - p) * right.0, p * left.1 + (1.0 - p) * right.1)
}

/// Monte-Carlo estimate of `E[H]` and its extreme eigenvalues.
#[derive(Clone, Debug)]
pub struct ExpectedProjection {
    pub mean: DMatrix<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub draws: usize,
}

pub fn estimate_expected_projection(
    spec: &SketchSpec,
    dim: usize,
    draws: usize,
    rng: &mut StreamRng,
) -> ExpectedProjection {
    let mut mean = DMatrix::zeros(dim, dim);
    for _ in 0..draws {
        let f = sample_factor(spec, dim, rng);
        mean += projector(spec, &f);
    }
    mean /= draws.max(1) as f64;
    let (lambda_min, lambda_max) = sym_eig_range(&mean);
    ExpectedProjection {
        mean,
        lambda_min,
        lambda_max,
        draws,
    }
}

/// Exact `E[H]` for coordinate subsets by enumerating all `C(d, r)` subsets.
/// Returns `None` when there are more than `limit` subsets.
pub fn enumerate_coordinate_expectation(dim: usize, rank: usize, limit: usize) -> Option<DMatrix<f64>> {
    let count = binomial(dim, rank)?;
    if count > limit as u128 || rank == 0 || rank > dim {
        return None;
    }
    let mut sum = DMatrix::zeros(dim, dim);
    let mut subset: Vec<usize> = (0..rank).collect();
    loop {
        for &i in &subset {
            sum[(i, i)] += 1.0;
        }
        // next combination in lexicographic order
        let mut k = rank;
        loop {
            if k == 0 {
                return Some(sum / count as f64);
            }
            k -= 1;
            if subset[k] < dim - rank + k {
                break;
            }
        }
        subset[k] += 1;
        for j in k + 1..rank {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Result of the factored (low-rank adapter) form of one update.
#[derive(Clone, Debug)]
pub struct FactoredUpdate {
    pub w_next: ParamMatrix,
    /// Trained factor: `A_hat` (r x n) on the left side, `B_hat` (m x r) on the right.
    pub trained: DMatrix<f64>,
    /// Effective step `alpha * eta / r`.
    pub gamma: f64,
}

/// `W + (alpha/r) B A_hat` with `A_hat = -eta (B^T B)^+ B^T G`, or
/// `W + (alpha/r) B_hat A` with `B_hat = -eta G A^T (A A^T)^+`.
pub fn factored_update(w: &ParamMatrix, g: &ParamMatrix, sketch: &Sketch, alpha: f64, eta: f64) -> FactoredUpdate {
    let f = &sketch.factor;
    let r = f.ncols() as f64;
    let gram_pinv = pinv_psd(&f.tr_mul(f));
    let (w_next, trained) = match sketch.side {
        Side::Left => {
            let a_hat = -eta * (&gram_pinv * f.transpose() * g);
            (w + (alpha / r) * (f * &a_hat), a_hat)
        }
        Side::Right => {
            let b_hat = -eta * (g * f * &gram_pinv);
            (w + (alpha / r) * (&b_hat * f.transpose()), b_hat)
        }
    };
    FactoredUpdate {
        w_next,
        trained,
        gamma: alpha * eta / r,
    }
}

/// `W - gamma * H G` or `W - gamma * G H`.
pub fn projected_step(w: &ParamMatrix, g: &ParamMatrix, sketch: &Sketch, gamma: f64) -> ParamMatrix {
    w - sketch.apply(g) * gamma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn coordinate_enumeration_is_exact() {
        let e = enumerate_coordinate_expectation(4, 2, 100).unwrap();
        assert_eq!(e, DMatrix::identity(4, 4) * 0.5);
        assert_eq!(binomial(4, 2), Some(6));
        assert!(enumerate_coordinate_expectation(40, 20, 1000).is_none());
    }

    #[test]
    fn coordinate_projector_is_diagonal_indicator() {
        let spec = SketchSpec {
            distribution: Distribution::CoordinateSubset,
            rank: 2,
        };
        let mut rng = stream(1, Stream::Sketch);
        let f = sample_factor(&spec, 5, &mut rng);
        let h = projector(&spec, &f);
        assert_eq!(h.trace(), 2.0);
        assert_eq!(&h * &h, h);
    }

    #[test]
    fn full_rank_is_identity() {
        let spec = SketchSpec {
            distribution: Distribution::Gaussian,
            rank: 3,
        };
        let mut rng = stream(2, Stream::Sketch);
        let f = sample_factor(&spec, 3, &mut rng);
        let h = projector(&spec, &f);
        assert!((h - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_rank_and_probability() {
        let s = SketchSpec {
            distribution: Distribution::Gaussian,
            rank: 5,
        };
        let b = BernoulliSketcher {
            p: 0.5,
            left: s,
            right: s,
        };
        assert!(b.validate((4, 6)).is_err());
        assert!(BernoulliSketcher { p: 1.5, ..b }.validate((8, 8)).is_err());
        // an unused side is not validated
        assert!(BernoulliSketcher { p: 0.0, ..b }.validate((4, 6)).is_ok());
    }

    #[test]
    fn spectral_weights_mix_sides() {
        let b = BernoulliSketcher {
            p: 0.25,
            left: SketchSpec {
                distribution: Distribution::Gaussian,
                rank: 2,
            },
            right: SketchSpec {
                distribution: Distribution::CoordinateSubset,
                rank: 1,
            },
        };
        let (lo, hi) = b.spectral_weights((4, 8));
        assert_eq!(lo, 0.25 * 0.5 + 0.75 * 0.125);
        assert_eq!(lo, hi);
        assert_eq!(mix_weights(0.5, (0.0, 1.0), (1.0, 1.0)), (0.5, 1.0));
    }
}
