//! Objectives used by the optimizers.
//!
//! All three objectives share one representation: a design matrix whose rows
//! are samples, a target vector, and a per-sample loss (squared or absolute)
//! acting on `vec(W)` taken in row-major order. Regularized linear regression
//! adds `reg * sum_j x_j^2 / (1 + x_j^2)`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, pinv_psd, sym_eig_range, unvec_row_major, vec_row_major, ParamMatrix};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    RegularizedLinreg,
    QuadraticPl,
    NonsmoothL1,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::RegularizedLinreg => "regularized-linreg",
            ProblemKind::QuadraticPl => "quadratic-pl",
            ProblemKind::NonsmoothL1 => "nonsmooth-l1",
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, ProblemKind::NonsmoothL1)
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a constant came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Closed form or exact enumeration.
    Analytic,
    /// Numerical solve (e.g. a long gradient descent run).
    Estimated,
    /// Measured at a finite set of probe points.
    Empirical,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Analytic => "analytic",
            Provenance::Estimated => "estimated",
            Provenance::Empirical => "empirical",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Known {
    pub value: f64,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Loss {
    Squared,
    Absolute,
}

#[derive(Clone, Debug)]
pub struct Problem {
    kind: ProblemKind,
    shape: (usize, usize),
    /// Column `i` is sample `i`.
    design_t: DMatrix<f64>,
    target: DVector<f64>,
    loss: Loss,
    /// Data term is `scale * sum_i loss(r_i)`, loss being `r^2/2` or `|r|`.
    scale: f64,
    reg: f64,
    pub smoothness: Option<f64>,
    pub pl_constant: Option<f64>,
    pub lipschitz: Option<f64>,
    pub optimum: Option<Known>,
    pub minimizer: Option<ParamMatrix>,
}

fn reg_value(x: f64) -> f64 {
    let s = x * x;
    s / (1.0 + s)
}

fn reg_slope(x: f64) -> f64 {
    let d = 1.0 + x * x;
    2.0 * x / (d * d)
}

fn reg_curvature(x: f64) -> f64 {
    let s = x * x;
    (2.0 - 6.0 * s) / (1.0 + s).powi(3)
}

/// `sup |d^2/dx^2 (x^2/(1+x^2))|` found on a uniform grid over [-10, 10].
///
/// The maximum sits at the origin, where the value is exactly 2.
pub fn regularizer_curvature_bound() -> f64 {
    (-100_000i32..=100_000)
        .map(|k| reg_curvature(f64::from(k) * 1e-4).abs())
        .fold(0.0, f64::max)
}

/// `sup |d/dx (x^2/(1+x^2))|`, attained at `x = 1/sqrt(3)`.
pub fn regularizer_slope_bound() -> f64 {
    reg_slope(1.0 / 3f64.sqrt())
}

impl Problem {
    fn build(
        kind: ProblemKind,
        shape: (usize, usize),
        design: &DMatrix<f64>,
        target: DVector<f64>,
        loss: Loss,
        scale: f64,
        reg: f64,
    ) -> Result<Self> {
        let d = shape.0 * shape.1;
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::config("shape", "dimensions must be positive"));
        }
        if design.ncols() != d {
            return Err(Error::config(
                "shape",
                format!(
                    "{}x{} needs {} features, data has {}",
                    shape.0,
                    shape.1,
                    d,
                    design.ncols()
                ),
            ));
        }
        if design.nrows() != target.len() || design.nrows() == 0 {
            return Err(Error::config(
                "samples",
                "design rows and target length differ or are zero",
            ));
        }
        let mut p = Problem {
            kind,
            shape,
            design_t: design.transpose(),
            target,
            loss,
            scale,
            reg,
            smoothness: None,
            pl_constant: None,
            lipschitz: None,
            optimum: None,
            minimizer: None,
        };
        p.fill_constants();
        Ok(p)
    }

    fn fill_constants(&mut self) {
        match self.loss {
            Loss::Squared => {
                let gram = &self.design_t * self.design_t.transpose() * self.scale;
                let (lo, hi) = sym_eig_range(&gram);
                self.smoothness = Some(hi.max(0.0) + self.reg * regularizer_curvature_bound());
                if self.reg == 0.0 {
                    // Least squares: closed-form optimum and the smallest
                    // positive curvature as PL constant.
                    let ev = gram.clone().symmetric_eigenvalues();
                    let tol = 1e-10 * hi.max(f64::MIN_POSITIVE);
                    let mu = if lo > tol {
                        lo
                    } else {
                        ev.iter().cloned().filter(|&v| v > tol).fold(f64::INFINITY, f64::min)
                    };
                    self.pl_constant = mu.is_finite().then_some(mu);
                    let rhs = &self.design_t * &self.target * self.scale;
                    let x = pinv_psd(&gram) * rhs;
                    let w = unvec_row_major(x.as_slice(), self.shape);
                    self.optimum = Some(Known {
                        value: self.eval(&w),
                        provenance: Provenance::Analytic,
                    });
                    self.minimizer = Some(w);
                }
            }
            Loss::Absolute => {
                let l0 = self.design_t.column_iter().map(|c| c.norm()).sum::<f64>() * self.scale;
                self.lipschitz = Some(l0);
            }
        }
    }

    /// `f(W) = 1/2 ||C vec(W) - d||^2`.
    pub fn quadratic(c: &DMatrix<f64>, d: DVector<f64>, shape: (usize, usize)) -> Result<Self> {
        Problem::build(ProblemKind::QuadraticPl, shape, c, d, Loss::Squared, 1.0, 0.0)
    }

    pub fn quadratic_random(cfg: &QuadraticConfig) -> Result<Self> {
        let d = cfg.shape.0 * cfg.shape.1;
        let rows = cfg.rows.unwrap_or(d);
        if rows < d {
            return Err(Error::config(
                "rows",
                "need at least m*n rows for a positive PL constant",
            ));
        }
        if !(cfg.mu > 0.0 && cfg.l >= cfg.mu) {
            return Err(Error::config("mu", "need 0 < mu <= L"));
        }
        let mut rng = stream(cfg.seed, Stream::Data);
        let u = gaussian(&mut rng, rows, d).qr().q();
        let v = gaussian(&mut rng, d, d).qr().q();
        let eig = DVector::from_fn(d, |i, _| {
            if d == 1 {
                cfg.l
            } else {
                cfg.mu * (cfg.l / cfg.mu).powf(i as f64 / (d - 1) as f64)
            }
        });
        let c = u * DMatrix::from_diagonal(&eig.map(f64::sqrt)) * v.transpose();
        let w_star = gaussian(&mut rng, d, 1);
        let target = &c * w_star.column(0);
        let mut p = Problem::quadratic(&c, target, cfg.shape)?;
        p.minimizer = Some(unvec_row_major(w_star.as_slice(), cfg.shape));
        Ok(p)
    }

    /// Regularized least squares on a dataset, `x = vec(W)`.
    pub fn linreg(data: &Dataset, shape: (usize, usize), reg: RegWeight) -> Result<Self> {
        let m = data.features.nrows();
        let reg = match reg {
            RegWeight::Value(v) if v >= 0.0 => v,
            RegWeight::Value(_) => return Err(Error::config("reg_weight", "must be nonnegative")),
            RegWeight::Spectral => linalg::spectral_norm_sq(&data.features).sqrt(),
        };
        Problem::build(
            ProblemKind::RegularizedLinreg,
            shape,
            &data.features,
            data.target.clone(),
            Loss::Squared,
            1.0 / m as f64,
            reg,
        )
    }

    /// `f(W) = (1/m) ||D vec(W) - b||_1`.
    pub fn l1(d: &DMatrix<f64>, b: DVector<f64>, shape: (usize, usize)) -> Result<Self> {
        let m = d.nrows();
        Problem::build(
            ProblemKind::NonsmoothL1,
            shape,
            d,
            b,
            Loss::Absolute,
            1.0 / m as f64,
            0.0,
        )
    }

    /// l1 residual with a planted minimizer, so `f* = 0` exactly.
    pub fn l1_random(cfg: &L1Config) -> Result<Self> {
        let dim = cfg.shape.0 * cfg.shape.1;
        let mut rng = stream(cfg.seed, Stream::Data);
        let d = gaussian(&mut rng, cfg.rows, dim);
        let w_star = gaussian(&mut rng, dim, 1);
        let b = &d * w_star.column(0);
        let mut p = Problem::l1(&d, b, cfg.shape)?;
        p.optimum = Some(Known {
            value: 0.0,
            provenance: Provenance::Analytic,
        });
        p.minimizer = Some(unvec_row_major(w_star.as_slice(), cfg.shape));
        Ok(p)
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn n_samples(&self) -> usize {
        self.target.len()
    }

    pub fn reg_weight(&self) -> f64 {
        self.reg
    }

    pub fn f_star(&self) -> Option<f64> {
        self.optimum.map(|k| k.value)
    }

    pub fn check_shape(&self, w: &ParamMatrix) -> Result<()> {
        if w.shape() != self.shape {
            return Err(Error::Shape {
                expected: self.shape,
                got: w.shape(),
            });
        }
        Ok(())
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.design_t.tr_mul(x) - &self.target
    }

    fn loss_slope(&self, r: f64) -> f64 {
        match self.loss {
            Loss::Squared => r,
            // subgradient 0 at the kink
            Loss::Absolute => {
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn eval(&self, w: &ParamMatrix) -> f64 {
        debug_assert_eq!(w.shape(), self.shape);
        let x = vec_row_major(w);
        let r = self.residual(&x);
        let data: f64 = match self.loss {
            Loss::Squared => 0.5 * r.norm_squared(),
            Loss::Absolute => r.iter().map(|v| v.abs()).sum(),
        };
        let mut f = self.scale * data;
        if self.reg != 0.0 {
            f += self.reg * x.iter().map(|&v| reg_value(v)).sum::<f64>();
        }
        f
    }

    fn reg_grad_into(&self, x: &DVector<f64>, g: &mut DVector<f64>) {
        if self.reg != 0.0 {
            for (gi, &xi) in g.iter_mut().zip(x.iter()) {
                *gi += self.reg * reg_slope(xi);
            }
        }
    }

    /// Gradient, or for the l1 objective the subgradient with sign(0) = 0.
    pub fn grad(&self, w: &ParamMatrix) -> ParamMatrix {
        debug_assert_eq!(w.shape(), self.shape);
        let x = vec_row_major(w);
        let mut r = self.residual(&x);
        for v in r.iter_mut() {
            *v = self.loss_slope(*v);
        }
        let mut g = &self.design_t * r * self.scale;
        self.reg_grad_into(&x, &mut g);
        unvec_row_major(g.as_slice(), self.shape)
    }

    /// Mean of the per-sample gradients `grad f_i` over `idx` (repeats allowed).
    ///
    /// `f_i = N * scale * loss(r_i) + reg * R(x)`, so the uniform average of
    /// the `f_i` is `f`.
    pub fn sample_grad(&self, w: &ParamMatrix, idx: &[usize]) -> ParamMatrix {
        debug_assert_eq!(w.shape(), self.shape);
        assert!(!idx.is_empty(), "empty minibatch");
        let x = vec_row_major(w);
        let coef = self.n_samples() as f64 * self.scale / idx.len() as f64;
        let mut g = DVector::zeros(self.dim());
        for &i in idx {
            let col = self.design_t.column(i);
            let r = col.dot(&x) - self.target[i];
            g.axpy(coef * self.loss_slope(r), &col, 1.0);
        }
        self.reg_grad_into(&x, &mut g);
        unvec_row_major(g.as_slice(), self.shape)
    }

    /// `(1/N) sum_i ||grad f_i(W) - grad f(W)||^2`, by enumeration.
    pub fn sample_variance(&self, w: &ParamMatrix) -> f64 {
        let full = vec_row_major(&self.grad(w));
        let x = vec_row_major(w);
        let n = self.n_samples();
        let mut reg = DVector::zeros(self.dim());
        self.reg_grad_into(&x, &mut reg);
        let data_full = full - reg;
        let coef = n as f64 * self.scale;
        let mut acc = 0.0;
        for i in 0..n {
            let col = self.design_t.column(i);
            let r = col.dot(&x) - self.target[i];
            let gi = col * (coef * self.loss_slope(r));
            acc += (gi - &data_full).norm_squared();
        }
        acc / n as f64
    }

    /// Split the samples into `m` contiguous, near-equal blocks.
    ///
    /// Client objectives are weighted so that their plain average is `f`.
    /// Client optima are filled in when they can be computed.
    pub fn partition(&self, m: usize) -> Result<Vec<Problem>> {
        let n = self.n_samples();
        if m == 0 || m > n {
            return Err(Error::config("clients", format!("need 1 <= M <= {n}, got {m}")));
        }
        let base = n / m;
        let extra = n % m;
        let mut start = 0;
        let mut out = Vec::with_capacity(m);
        for l in 0..m {
            let len = base + usize::from(l < extra);
            let cols = self.design_t.columns(start, len).transpose();
            let tgt = self.target.rows(start, len).into_owned();
            let mut p = Problem::build(
                self.kind,
                self.shape,
                &cols,
                tgt,
                self.loss,
                self.scale * m as f64,
                self.reg,
            )?;
            if self.loss == Loss::Absolute {
                if let (Some(w), Some(opt)) = (&self.minimizer, self.optimum) {
                    if opt.value == 0.0 && p.eval(w) == 0.0 {
                        p.optimum = Some(opt);
                        p.minimizer = Some(w.clone());
                    }
                }
            }
            out.push(p);
            start += len;
        }
        Ok(out)
    }

    /// Gradient descent with step `1/L` until `||grad||^2 <= tol` or
    /// `max_iter` steps. Returns the final point and whether it converged.
    pub fn descend(&self, w0: &ParamMatrix, tol: f64, max_iter: usize) -> (ParamMatrix, bool) {
        let l = self.smoothness.expect("descend needs a smooth objective");
        let mut w = w0.clone();
        for _ in 0..max_iter {
            let g = self.grad(&w);
            if linalg::frob_sq(&g) <= tol {
                return (w, true);
            }
            w -= g / l;
        }
        let g = self.grad(&w);
        let ok = linalg::frob_sq(&g) <= tol;
        (w, ok)
    }

    /// Fill `optimum` and `minimizer` by gradient descent when no closed form
    /// exists. No-op if they are already known.
    pub fn estimate_optimum(&mut self, w0: &ParamMatrix) {
        if self.optimum.is_some() || !self.kind.is_smooth() {
            return;
        }
        let (w, _) = self.descend(w0, 1e-24, 200_000);
        let value = self.eval(&w);
        self.optimum = Some(Known {
            value,
            provenance: Provenance::Estimated,
        });
        self.minimizer = Some(w);
    }
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // fill in row-major order so the draw sequence does not depend on storage
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegWeight {
    /// `lambda = ||D||_2`.
    Spectral,
    Value(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticConfig {
    pub shape: (usize, usize),
    /// Number of rows of `C`; defaults to `m * n`.
    #[serde(default)]
    pub rows: Option<usize>,
    pub mu: f64,
    pub l: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L1Config {
    pub shape: (usize, usize),
    pub rows: usize,
    pub seed: u64,
}

/// Synthetic regression data: a low-rank Gaussian factor plus a full-rank
/// tail, standardized per column, then optionally shifted and rescaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinRegConfig {
    pub samples: usize,
    pub features: usize,
    #[serde(default = "defaults::noise")]
    pub noise: f64,
    #[serde(default)]
    pub effective_rank: Option<usize>,
    #[serde(default = "defaults::tail")]
    pub tail_strength: f64,
    #[serde(default)]
    pub bias: f64,
    /// Column mean after standardization.
    #[serde(default)]
    pub scale_mean: f64,
    /// Column standard deviation after standardization.
    #[serde(default = "defaults::one")]
    pub scale_std: f64,
    pub seed: u64,
}

mod defaults {
    pub fn noise() -> f64 {
        1.0
    }
    pub fn tail() -> f64 {
        0.5
    }
    pub fn one() -> f64 {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub target: DVector<f64>,
    pub seed: u64,
}

const DATASET_MAGIC: &[u8; 8] = b"BLORADS1";

impl Dataset {
    pub fn generate(cfg: &LinRegConfig) -> Result<Self> {
        let (m, n) = (cfg.samples, cfg.features);
        if m == 0 || n == 0 {
            return Err(Error::config("samples", "samples and features must be positive"));
        }
        if cfg.noise < 0.0 || cfg.scale_std <= 0.0 {
            return Err(Error::config("noise", "noise must be >= 0 and scale_std > 0"));
        }
        let k = cfg.effective_rank.unwrap_or(n).clamp(1, n);
        let mut rng = stream(cfg.seed, Stream::Data);
        let z = gaussian(&mut rng, m, k);
        let v = gaussian(&mut rng, k, n) / (k as f64).sqrt();
        let tail = gaussian(&mut rng, m, n);
        let mut x = z * v + tail * cfg.tail_strength;
        for mut col in x.column_iter_mut() {
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for v in col.iter_mut() {
                *v = (*v - mean) / sd * cfg.scale_std + cfg.scale_mean;
            }
        }
        let coef = gaussian(&mut rng, n, 1);
        let eps = gaussian(&mut rng, m, 1);
        let target = &x * coef.column(0) + eps.column(0) * cfg.noise + DVector::repeat(m, cfg.bias);
        Ok(Dataset {
            features: x,
            target,
            seed: cfg.seed,
        })
    }

    /// 32-byte header (magic, m, n, seed as little-endian u64), then the
    /// features in row-major order and the target, all little-endian f64.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        let (m, n) = self.features.shape();
        out.write_all(DATASET_MAGIC)?;
        for v in [m as u64, n as u64, self.seed] {
            out.write_all(&v.to_le_bytes())?;
        }
        for i in 0..m {
            for j in 0..n {
                out.write_all(&self.features[(i, j)].to_le_bytes())?;
            }
        }
        for v in self.target.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let ctx = "dataset";
        let mut head = [0u8; 32];
        input.read_exact(&mut head).map_err(|e| Error::io(ctx, e))?;
        if &head[..8] != DATASET_MAGIC {
            return Err(Error::Parse {
                context: ctx.into(),
                message: "bad magic".into(),
            });
        }
        let word = |k: usize| u64::from_le_bytes(head[8 * k..8 * k + 8].try_into().unwrap());
        let (m, n, seed) = (word(1) as usize, word(2) as usize, word(3));
        let mut buf = Vec::new();
        input.read_to_end(&mut buf).map_err(|e| Error::io(ctx, e))?;
        if buf.len() != 8 * (m * n + m) {
            return Err(Error::Parse {
                context: ctx.into(),
                message: format!("expected {} payload bytes, found {}", 8 * (m * n + m), buf.len()),
            });
        }
        let vals: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Dataset {
            features: DMatrix::from_row_slice(m, n, &vals[..m * n]),
            target: DVector::from_column_slice(&vals[m * n..]),
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Dataset::read_from(std::io::BufReader::new(f))
    }
}
