//! Compression operators on matrices flattened in row-major order.

use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ParamMatrix;
use crate::rng::StreamRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Compressor {
    Identity,
    /// `k` coordinates uniformly without replacement, scaled by `d/k`.
    RandK {
        k: usize,
    },
    /// `k` largest magnitudes, ties broken by the lowest flat index.
    TopK {
        k: usize,
    },
    /// Unbiased random rounding to `levels` levels on `[0, max|x|]`.
    Dither {
        levels: u32,
    },
    /// `Q / (omega + 1)` for an unbiased `Q`, contractive with `beta = 1/(omega+1)`.
    Scaled {
        inner: Box<Compressor>,
    },
}

impl fmt::Display for Compressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Compressor::Identity => write!(f, "identity"),
            Compressor::RandK { k } => write!(f, "rand-{k}"),
            Compressor::TopK { k } => write!(f, "top-{k}"),
            Compressor::Dither { levels } => write!(f, "dither-{levels}"),
            Compressor::Scaled { inner } => write!(f, "scaled-{inner}"),
        }
    }
}

impl Compressor {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            Compressor::RandK { k } | Compressor::TopK { k } if *k == 0 || *k > d => {
                Err(Error::config("compressor.k", format!("k = {k} must lie in 1..={d}")))
            }
            Compressor::Dither { levels: 0 } => Err(Error::config("compressor.levels", "need at least one level")),
            Compressor::Scaled { inner } => {
                if inner.omega(d).is_none() {
                    return Err(Error::config("compressor", "only unbiased compressors can be scaled"));
                }
                inner.validate(d)
            }
            _ => Ok(()),
        }
    }

    /// Variance parameter for unbiased compressors, `None` otherwise.
    pub fn omega(&self, d: usize) -> Option<f64> {
        match self {
            Compressor::Identity => Some(0.0),
            Compressor::RandK { k } => Some(d as f64 / *k as f64 - 1.0),
            Compressor::Dither { levels } => {
                let s = f64::from(*levels);
                let d = d as f64;
                Some((d / (4.0 * s * s)).min(d.sqrt() / s))
            }
            Compressor::TopK { k } if *k == d => Some(0.0),
            _ => None,
        }
    }

    /// Contraction parameter, `None` for compressors that are not contractive.
    pub fn beta(&self, d: usize) -> Option<f64> {
        match self {
            Compressor::Identity => Some(1.0),
            Compressor::TopK { k } => Some(*k as f64 / d as f64),
            Compressor::RandK { k } if *k == d => Some(1.0),
            Compressor::Scaled { inner } => inner.omega(d).map(|w| 1.0 / (w + 1.0)),
            _ => None,
        }
    }

    /// Contractive version: unchanged if already contractive, else scaled.
    pub fn as_contractive(&self, d: usize) -> Compressor {
        if self.beta(d).is_some() {
            self.clone()
        } else {
            Compressor::Scaled {
                inner: Box::new(self.clone()),
            }
        }
    }

    /// True if the output always equals the input.
    pub fn is_lossless(&self, d: usize) -> bool {
        match self {
            Compressor::Identity => true,
            Compressor::RandK { k } | Compressor::TopK { k } => *k == d,
            _ => false,
        }
    }

    /// Scalars sent per message. Sparse messages count value and index.
    /// Dithered entries count `log2(levels + 1)` bits against 64.
    pub fn comm_scalars(&self, d: usize) -> f64 {
        match self {
            Compressor::Identity => d as f64,
            Compressor::RandK { k } | Compressor::TopK { k } => 2.0 * *k as f64,
            Compressor::Dither { levels } => d as f64 * f64::from(levels + 1).log2() / 64.0,
            Compressor::Scaled { inner } => inner.comm_scalars(d),
        }
    }

    pub fn compress(&self, x: &ParamMatrix, rng: &mut StreamRng) -> ParamMatrix {
        let (m, n) = x.shape();
        let d = m * n;
        let at = |k: usize| x[(k / n, k % n)];
        match self {
            Compressor::Identity => x.clone(),
            Compressor::RandK { k } => {
                let mut out = ParamMatrix::zeros(m, n);
                let scale = d as f64 / *k as f64;
                for i in index::sample(rng, d, *k) {
                    out[(i / n, i % n)] = at(i) * scale;
                }
                out
            }
            Compressor::TopK { k } => {
                let mut order: Vec<usize> = (0..d).collect();
                order.sort_by(|&a, &b| at(b).abs().total_cmp(&at(a).abs()).then(a.cmp(&b)));
                let mut out = ParamMatrix::zeros(m, n);
                for &i in &order[..*k] {
                    out[(i / n, i % n)] = at(i);
                }
                out
            }
            Compressor::Dither { levels } => {
                let top = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let mut out = ParamMatrix::zeros(m, n);
                if top == 0.0 {
                    return out;
                }
                let s = f64::from(*levels);
                // row-major traversal keeps the draw order independent of storage
                for i in 0..m {
                    for j in 0..n {
                        let v = x[(i, j)];
                        let a = v.abs() / top * s;
                        let lo = a.floor();
                        let up = rng.random::<f64>() < a - lo;
                        let level = if up { lo + 1.0 } else { lo };
                        out[(i, j)] = v.signum() * top * level / s;
                    }
                }
                out
            }
            Compressor::Scaled { inner } => {
                let w = inner.omega(d).expect("validated unbiased compressor");
                inner.compress(x, rng) / (w + 1.0)
            }
        }
    }
}
