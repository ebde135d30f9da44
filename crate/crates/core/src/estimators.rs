//! Single-node gradient estimators: GD, SGD, MVR and PAGE.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ParamMatrix;
use crate::problems::Problem;
use crate::rng::RunStreams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "kebab-case")]
pub enum EstimatorKind {
    Gd,
    Sgd,
    /// Momentum variance reduction with momentum weight `b` in (0, 1].
    Mvr {
        b: f64,
    },
    /// Full-gradient probability `q` in (0, 1].
    Page {
        q: f64,
    },
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Gd => "gd",
            EstimatorKind::Sgd => "sgd",
            EstimatorKind::Mvr { .. } => "mvr",
            EstimatorKind::Page { .. } => "page",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EstimatorKind::Mvr { b } if !(b > 0.0 && b <= 1.0) => {
                Err(Error::config("b", format!("{b} is outside (0, 1]")))
            }
            EstimatorKind::Page { q } if !(q > 0.0 && q <= 1.0) => {
                Err(Error::config("q", format!("{q} is outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    #[serde(flatten)]
    pub kind: EstimatorKind,
    /// Minibatch size, indices drawn uniformly with replacement.
    pub batch: usize,
}

#[derive(Clone, Debug)]
pub struct Estimator {
    cfg: EstimatorConfig,
    g: ParamMatrix,
    /// `b = 1` makes MVR coincide with SGD; the correction term is skipped.
    sgd_equivalent: bool,
}

pub(crate) fn draw_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..n)).collect()
}

impl Estimator {
    pub fn new(cfg: EstimatorConfig, problem: &Problem, w0: &ParamMatrix, init: Option<&ParamMatrix>) -> Result<Self> {
        cfg.kind.validate()?;
        if cfg.batch == 0 {
            return Err(Error::config("batch", "must be at least 1"));
        }
        problem.check_shape(w0)?;
        let g = match init {
            Some(g) => {
                problem.check_shape(g)?;
                g.clone()
            }
            None => problem.grad(w0),
        };
        Ok(Estimator {
            cfg,
            g,
            sgd_equivalent: matches!(cfg.kind, EstimatorKind::Mvr { b } if b == 1.0),
        })
    }

    pub fn current(&self) -> &ParamMatrix {
        &self.g
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    /// Move the estimate from `w_old` to `w_new`.
    pub fn advance(&mut self, problem: &Problem, w_new: &ParamMatrix, w_old: &ParamMatrix, streams: &mut RunStreams) {
        let n = problem.n_samples();
        let batch = self.cfg.batch;
        match self.cfg.kind {
            EstimatorKind::Gd => self.g = problem.grad(w_new),
            EstimatorKind::Sgd => {
                let idx = draw_batch(&mut streams.data, n, batch);
                self.g = problem.sample_grad(w_new, &idx);
            }
            EstimatorKind::Mvr { b } => {
                let idx = draw_batch(&mut streams.data, n, batch);
                let fresh = problem.sample_grad(w_new, &idx);
                if self.sgd_equivalent {
                    self.g = fresh;
                } else {
                    let old = problem.sample_grad(w_old, &idx);
                    self.g = fresh + (&self.g - old) * (1.0 - b);
                }
            }
            EstimatorKind::Page { q } => {
                if streams.coin.random_bool(q) {
                    self.g = problem.grad(w_new);
                } else {
                    let idx = draw_batch(&mut streams.data, n, batch);
                    let diff = problem.sample_grad(w_new, &idx) - problem.sample_grad(w_old, &idx);
                    self.g += diff;
                }
            }
        }
    }
}
