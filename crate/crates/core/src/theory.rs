//! Stepsize rules, rate bounds, Lyapunov weights and assumption checks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::compression::Compressor;
use crate::error::{Error, Result};
use crate::linalg::{frob_sq, ParamMatrix};
use crate::problems::{Problem, Provenance};
use crate::rng::StreamRng;
use crate::sketch::{self, BernoulliSketcher, Distribution, SketchSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Gd,
    Sgd,
    Mvr,
    Page,
    Qgd,
    Marina,
    Ef21,
    /// Subgradient method with a constant step.
    Nonsmooth,
    /// Subgradient method with the Polyak step.
    NonsmoothPolyak,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Theorem {
    pub method: Method,
    /// Use the Polyak-Lojasiewicz variant.
    pub pl: bool,
}

const METHOD_NAMES: [(&str, Method); 9] = [
    ("gd", Method::Gd),
    ("sgd", Method::Sgd),
    ("mvr", Method::Mvr),
    ("page", Method::Page),
    ("qgd", Method::Qgd),
    ("marina", Method::Marina),
    ("ef21", Method::Ef21),
    ("nonsmooth", Method::Nonsmooth),
    ("nonsmooth-polyak", Method::NonsmoothPolyak),
];

impl Method {
    pub fn name(self) -> &'static str {
        METHOD_NAMES.iter().find(|(_, m)| *m == self).unwrap().0
    }
}

impl FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, pl) = match s.strip_suffix("-pl") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let method = METHOD_NAMES
            .iter()
            .find(|(n, _)| *n == base)
            .map(|(_, m)| *m)
            .ok_or_else(|| Error::config("theorem", format!("unknown theorem `{s}`")))?;
        if pl && matches!(method, Method::Nonsmooth | Method::NonsmoothPolyak) {
            return Err(Error::config("theorem", "the subgradient results have no PL variant"));
        }
        Ok(Theorem { method, pl })
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.method.name())?;
        if self.pl {
            f.write_str("-pl")?;
        }
        Ok(())
    }
}

macro_rules! params {
    ($($field:ident => $key:literal),* $(,)?) => {
        /// Constants entering the theorems. Missing values are `None`.
        #[derive(Clone, Debug, Default, PartialEq)]
        pub struct TheoryParams {
            $(pub $field: Option<f64>,)*
            pub provenance: BTreeMap<&'static str, Provenance>,
        }

        impl TheoryParams {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Set a constant by its display name (case-insensitive).
            pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
                $(if key.eq_ignore_ascii_case($key) {
                    self.$field = Some(value);
                    return Ok(());
                })*
                Err(Error::config(key, format!("unknown constant; expected one of {}", Self::KEYS.join(", "))))
            }

            pub fn entries(&self) -> Vec<(&'static str, Option<f64>)> {
                vec![$(($key, self.$field)),*]
            }
        }
    };
}

params! {
    l => "L",
    mu => "mu",
    l0 => "L0",
    lambda_min => "lambda_min",
    lambda_max => "lambda_max",
    alpha => "alpha",
    a1 => "A1",
    b1 => "B1",
    c1 => "C1",
    sigma_sq => "sigma_sq",
    omega => "omega",
    beta => "beta",
    clients => "M",
    q => "q",
    b => "b",
    horizon => "T",
    delta0 => "delta0",
    gap0 => "gap0",
    delta_star => "delta_star",
    r0 => "R0",
}

fn need(v: Option<f64>, key: &str) -> Result<f64> {
    match v {
        Some(x) if x.is_finite() => Ok(x),
        Some(x) => Err(Error::config(key, format!("{x} is not finite"))),
        None => Err(Error::MissingConstant(key.to_string())),
    }
}

fn positive(v: Option<f64>, key: &str) -> Result<f64> {
    let x = need(v, key)?;
    if x <= 0.0 {
        return Err(Error::config(key, format!("{x} must be positive")));
    }
    Ok(x)
}

fn unit(v: Option<f64>, key: &str) -> Result<f64> {
    let x = need(v, key)?;
    if !(x > 0.0 && x <= 1.0) {
        return Err(Error::config(key, format!("{x} is outside (0, 1]")));
    }
    Ok(x)
}

/// `1/x` with `1/0 = inf`, for terms that vanish in the `min`.
fn recip(x: f64) -> f64 {
    if x == 0.0 {
        f64::INFINITY
    } else {
        1.0 / x
    }
}

impl TheoryParams {
    pub fn set_with(&mut self, key: &'static str, value: f64, provenance: Provenance) {
        self.set(key, value).expect("known key");
        self.provenance.insert(key, provenance);
    }

    fn ratio(&self) -> Result<(f64, f64, f64)> {
        let lo = positive(self.lambda_min, "lambda_min")?;
        let hi = positive(self.lambda_max, "lambda_max")?;
        Ok((lo, hi, hi / lo))
    }
}

/// Largest stepsize allowed by a theorem.
pub fn stepsize(th: Theorem, p: &TheoryParams) -> Result<f64> {
    use Method::*;
    if matches!(th.method, Nonsmooth) {
        let r0 = need(p.r0, "R0")?;
        let l0 = positive(p.l0, "L0")?;
        let alpha = positive(p.alpha, "alpha")?;
        let t = positive(p.horizon, "T")?;
        return Ok(r0 / (l0 * (alpha * t).sqrt()));
    }
    if matches!(th.method, NonsmoothPolyak) {
        return Err(Error::config("theorem", "the Polyak step is adaptive, not a constant"));
    }
    let l = positive(p.l, "L")?;
    let g = match (th.method, th.pl) {
        (Gd, _) => 1.0 / l,
        (Sgd, false) => {
            let (_, hi, ratio) = p.ratio()?;
            let a1 = need(p.a1, "A1")?;
            let b1 = positive(p.b1, "B1")?;
            let t = positive(p.horizon, "T")?;
            recip((l * a1 * hi * t).sqrt()).min(1.0 / (l * b1 * ratio))
        }
        (Sgd, true) => {
            let (lo, hi, ratio) = p.ratio()?;
            let a1 = need(p.a1, "A1")?;
            let b1 = positive(p.b1, "B1")?;
            let mu = positive(p.mu, "mu")?;
            (mu * lo * recip(2.0 * l * a1 * hi))
                .min(2.0 / (mu * lo))
                .min(1.0 / (l * b1 * ratio))
        }
        (Mvr, false) => {
            let hi = positive(p.lambda_max, "lambda_max")?;
            let b = unit(p.b, "b")?;
            1.0 / (l * (1.0 + (2.0 * hi * (1.0 - b).powi(2) / b).sqrt()))
        }
        (Mvr, true) => {
            let (lo, hi, _) = p.ratio()?;
            let b = unit(p.b, "b")?;
            let mu = positive(p.mu, "mu")?;
            let s = (2.0 * (1.0 - b).powi(2) / (b * (2.0 - b)) * hi).sqrt();
            (1.0 / (l * (1.0 + s))).min(b / (2.0 * mu * lo))
        }
        (Page, pl) => {
            let hi = positive(p.lambda_max, "lambda_max")?;
            let q = unit(p.q, "q")?;
            let s = ((1.0 - q) / q * hi).sqrt();
            if pl {
                let lo = positive(p.lambda_min, "lambda_min")?;
                let mu = positive(p.mu, "mu")?;
                (1.0 / (l * (1.0 + 2.0 * s))).min(q / (2.0 * mu * lo))
            } else {
                1.0 / (l * (1.0 + s))
            }
        }
        (Qgd, false) => {
            let (_, hi, ratio) = p.ratio()?;
            let w = need(p.omega, "omega")?;
            let m = positive(p.clients, "M")?;
            let t = positive(p.horizon, "T")?;
            recip(l * (w / m * hi * t).sqrt()).min(1.0 / (l * ratio))
        }
        (Qgd, true) => {
            let (lo, _, ratio) = p.ratio()?;
            let w = need(p.omega, "omega")?;
            let m = positive(p.clients, "M")?;
            let mu = positive(p.mu, "mu")?;
            (mu * recip(2.0 * l * l * w / m) / ratio)
                .min(2.0 / (mu * lo))
                .min(1.0 / (l * ratio))
        }
        (Marina, pl) => {
            let hi = positive(p.lambda_max, "lambda_max")?;
            let q = unit(p.q, "q")?;
            let w = need(p.omega, "omega")?;
            let m = positive(p.clients, "M")?;
            let k = if pl { 2.0 } else { 1.0 };
            let first = 1.0 / (l * (1.0 + (k * hi * (1.0 - q) / q * w / m).sqrt()));
            if pl {
                let lo = positive(p.lambda_min, "lambda_min")?;
                let mu = positive(p.mu, "mu")?;
                first.min(q / (2.0 * mu * lo))
            } else {
                first
            }
        }
        (Ef21, pl) => {
            let hi = positive(p.lambda_max, "lambda_max")?;
            let beta = unit(p.beta, "beta")?;
            let s = (1.0 - beta).sqrt();
            let k = if pl { 2.0 } else { 1.0 };
            let first = 1.0 / (l * (1.0 + (k * hi * (1.0 - beta)).sqrt() / (1.0 - s)));
            if pl {
                let lo = positive(p.lambda_min, "lambda_min")?;
                let mu = positive(p.mu, "mu")?;
                first.min((1.0 + s) / (2.0 * mu * lo))
            } else {
                first
            }
        }
        (Nonsmooth | NonsmoothPolyak, _) => unreachable!(),
    };
    Ok(g)
}

/// Weight `c` in `Phi = f - f* + c * gap`, where `gap` is `||G - grad f||^2`
/// (or its client average for EF21).
pub fn lyapunov_weight(th: Theorem, gamma: f64, p: &TheoryParams) -> Result<f64> {
    use Method::*;
    let half = if th.pl { 1.0 } else { 0.5 };
    let w = match th.method {
        Page | Marina => {
            let hi = need(p.lambda_max, "lambda_max")?;
            half * gamma * hi / unit(p.q, "q")?
        }
        Mvr => {
            let hi = need(p.lambda_max, "lambda_max")?;
            let b = unit(p.b, "b")?;
            half * gamma * hi / (b * (2.0 - b))
        }
        Ef21 => {
            let hi = need(p.lambda_max, "lambda_max")?;
            let beta = unit(p.beta, "beta")?;
            half * gamma * hi / (1.0 - (1.0 - beta).sqrt())
        }
        _ => 0.0,
    };
    Ok(w)
}

/// Right-hand side of a theorem at stepsize `gamma`.
///
/// Non-convex results bound the average squared gradient norm over the
/// first `T` iterates, PL results bound `E f(W^T) - f*`, and the
/// subgradient results bound `E f(W_avg) - f*`.
pub fn rate_bound(th: Theorem, gamma: f64, p: &TheoryParams) -> Result<f64> {
    use Method::*;
    match th.method {
        Nonsmooth => {
            let r0 = need(p.r0, "R0")?;
            let l0 = need(p.l0, "L0")?;
            let a = positive(p.alpha, "alpha")?;
            let t = positive(p.horizon, "T")?;
            return Ok(r0 * r0 / (2.0 * gamma * a * t) + gamma * l0 * l0 / 2.0);
        }
        NonsmoothPolyak => {
            let r0 = need(p.r0, "R0")?;
            let l0 = need(p.l0, "L0")?;
            let a = positive(p.alpha, "alpha")?;
            let t = positive(p.horizon, "T")?;
            return Ok(r0 * l0 / (a * t).sqrt());
        }
        _ => {}
    }
    let (lo, _, ratio) = p.ratio()?;
    let d0 = need(p.delta0, "delta0")?;
    let t = positive(p.horizon, "T")?;
    let gap0 = || need(p.gap0, "gap0");
    if !th.pl {
        let base = 2.0 * d0 / (gamma * lo * t);
        return Ok(match th.method {
            Gd => base,
            Sgd => 3.0 * base + gamma * need(p.l, "L")? * need(p.c1, "C1")? * ratio,
            Mvr => {
                let b = unit(p.b, "b")?;
                base + (gap0()? / (b * (2.0 - b) * t) + 2.0 * b * need(p.sigma_sq, "sigma_sq")? / (2.0 - b)) * ratio
            }
            Page | Marina => base + gap0()? / (unit(p.q, "q")? * t) * ratio,
            Qgd => {
                let l = need(p.l, "L")?;
                let w = need(p.omega, "omega")?;
                let m = positive(p.clients, "M")?;
                3.0 * base + 2.0 * gamma * l * w * need(p.delta_star, "delta_star")? / m * ratio
            }
            Ef21 => {
                let beta = unit(p.beta, "beta")?;
                base + gap0()? / ((1.0 - (1.0 - beta).sqrt()) * t) * ratio
            }
            Nonsmooth | NonsmoothPolyak => unreachable!(),
        });
    }
    let mu = positive(p.mu, "mu")?;
    let contraction = 1.0 - gamma * mu * lo;
    let phi0 = || -> Result<f64> { Ok(d0 + lyapunov_weight(th, gamma, p)? * gap0()?) };
    Ok(match th.method {
        Gd => contraction.powf(t) * d0,
        Sgd | Qgd => {
            let c1 = match th.method {
                Sgd => need(p.c1, "C1")?,
                _ => {
                    2.0 * need(p.l, "L")? * need(p.omega, "omega")? * need(p.delta_star, "delta_star")?
                        / positive(p.clients, "M")?
                }
            };
            (1.0 - 0.5 * gamma * mu * lo).powf(t) * d0 + gamma * need(p.l, "L")? * c1 / mu * ratio
        }
        Mvr => {
            let b = unit(p.b, "b")?;
            contraction.powf(t) * phi0()? + b * need(p.sigma_sq, "sigma_sq")? / ((2.0 - b) * mu) * ratio
        }
        Page | Marina | Ef21 => contraction.powf(t) * phi0()?,
        Nonsmooth | NonsmoothPolyak => unreachable!(),
    })
}

/// Expected-smoothness constants of the quantized estimator
/// `(1/M) sum_l Q_l(grad f_l)`.
pub fn qgd_abc(l: f64, omega: f64, clients: f64, delta_star: f64) -> (f64, f64, f64) {
    (l * omega / clients, 1.0, 2.0 * l * omega * delta_star / clients)
}

/// `f* - (1/M) sum_l f_l*`; clients without a known optimum are estimated.
pub fn function_dissimilarity(
    global: &Problem,
    clients: &mut [Problem],
    w0: &ParamMatrix,
) -> Option<(f64, Provenance)> {
    let f_star = global.optimum?;
    let mut prov = f_star.provenance;
    let mut sum = 0.0;
    for c in clients.iter_mut() {
        c.estimate_optimum(w0);
        let k = c.optimum?;
        if k.provenance != Provenance::Analytic {
            prov = Provenance::Estimated;
        }
        sum += k.value;
    }
    Some((f_star.value - sum / clients.len() as f64, prov))
}

/// Constants that follow from the problem and the sketch.
///
/// `batch` scales the empirical variance; SGD uses `A1 = 0`, `B1 = 1`,
/// `C1 = 2 sigma^2 / batch` with the variance measured at `w0` and at the
/// minimizer when known.
pub fn derive_constants(
    problem: &Problem,
    sketcher: &BernoulliSketcher,
    w0: &ParamMatrix,
    batch: usize,
) -> TheoryParams {
    let mut p = TheoryParams::default();
    let shape = problem.shape();
    let (lo, hi) = sketcher.spectral_weights(shape);
    p.set_with("lambda_min", lo, Provenance::Analytic);
    p.set_with("lambda_max", hi, Provenance::Analytic);
    p.set_with("alpha", lo, Provenance::Analytic);
    if let Some(l) = problem.smoothness {
        p.set_with("L", l, Provenance::Analytic);
    }
    if let Some(mu) = problem.pl_constant {
        p.set_with("mu", mu, Provenance::Analytic);
    }
    if let Some(l0) = problem.lipschitz {
        p.set_with("L0", l0, Provenance::Analytic);
    }
    if let Some(k) = problem.optimum {
        p.set_with("delta0", problem.eval(w0) - k.value, k.provenance);
    }
    if let Some(w) = &problem.minimizer {
        let prov = problem.optimum.map_or(Provenance::Estimated, |k| k.provenance);
        p.set_with("R0", frob_sq(&(w0 - w)).sqrt(), prov);
    }
    if problem.kind().is_smooth() {
        let mut s = problem.sample_variance(w0);
        if let Some(w) = &problem.minimizer {
            s = s.max(problem.sample_variance(w));
        }
        let s = s / batch.max(1) as f64;
        p.set_with("sigma_sq", s, Provenance::Empirical);
        p.set_with("A1", 0.0, Provenance::Empirical);
        p.set_with("B1", 1.0, Provenance::Empirical);
        p.set_with("C1", 2.0 * s, Provenance::Empirical);
    }
    p
}

/// Fill the compressor constants for `d = m * n`.
pub fn set_compressor_constants(p: &mut TheoryParams, c: &Compressor, d: usize) {
    if let Some(w) = c.omega(d) {
        p.set_with("omega", w, Provenance::Analytic);
    }
    if let Some(b) = c.as_contractive(d).beta(d) {
        p.set_with("beta", b, Provenance::Analytic);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub name: &'static str,
    /// Worst observed ratio of the two sides; at most 1 when the assumption holds
    /// (for `lower-bounded`, `function-dissimilarity` and `convex` it is a margin,
    /// nonnegative when it holds).
    pub ratio: f64,
    pub holds: bool,
    pub detail: String,
}

pub const ASSUMPTIONS: &[&str] = &[
    "positive-expected-projection",
    "lower-bounded",
    "lipschitz-smooth",
    "expected-smoothness",
    "bounded-variance",
    "pl",
    "minimizer-exists",
    "function-dissimilarity",
    "scalar-expected-projection",
    "convex",
    "lipschitz-continuous",
];

pub struct CheckContext<'a> {
    pub problem: &'a Problem,
    pub clients: &'a [Problem],
    pub sketcher: &'a BernoulliSketcher,
    pub params: &'a TheoryParams,
    pub batch: usize,
}

const CHECK_TOL: f64 = 1e-9;

fn probe_point(ctx: &CheckContext, rng: &mut StreamRng) -> ParamMatrix {
    let (m, n) = ctx.problem.shape();
    let center = ctx.problem.minimizer.clone().unwrap_or_else(|| DMatrix::zeros(m, n));
    let scale = (frob_sq(&center) / (m * n) as f64).sqrt().max(1.0);
    center + DMatrix::from_fn(m, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn expected_projection_side(spec: &SketchSpec, dim: usize, draws: usize, rng: &mut StreamRng) -> (DMatrix<f64>, bool) {
    if spec.distribution == Distribution::CoordinateSubset {
        if let Some(e) = sketch::enumerate_coordinate_expectation(dim, spec.rank, 100_000) {
            return (e, true);
        }
    }
    (
        sketch::estimate_expected_projection(spec, dim, draws.max(1), rng).mean,
        false,
    )
}

pub fn check_assumption(
    name: &str,
    ctx: &CheckContext,
    probes: usize,
    rng: &mut StreamRng,
) -> Result<AssumptionReport> {
    let key = ASSUMPTIONS
        .iter()
        .copied()
        .find(|a| *a == name)
        .ok_or_else(|| Error::config("assumption", format!("unknown assumption `{name}`")))?;
    let pb = ctx.problem;
    let probes = probes.max(1);
    let f_star = || pb.f_star().ok_or_else(|| Error::MissingConstant("f*".into()));
    let report = |ratio: f64, holds: bool, detail: String| AssumptionReport {
        name: key,
        ratio,
        holds,
        detail,
    };
    let r = match key {
        "positive-expected-projection" | "scalar-expected-projection" => {
            let (m, n) = pb.shape();
            let mut worst_ratio: f64 = 0.0;
            let mut lo_all = f64::INFINITY;
            let mut exact_all = true;
            let mut dev_all: f64 = 0.0;
            let mut sides = Vec::new();
            if ctx.sketcher.p > 0.0 {
                sides.push((ctx.sketcher.left, m));
            }
            if ctx.sketcher.p < 1.0 {
                sides.push((ctx.sketcher.right, n));
            }
            for (spec, dim) in sides {
                let (e, exact) = expected_projection_side(&spec, dim, probes, rng);
                let (lo, hi) = crate::linalg::sym_eig_range(&e);
                let alpha = spec.expected_scale(dim);
                let dev = (e - DMatrix::identity(dim, dim) * alpha).abs().max();
                lo_all = lo_all.min(lo);
                worst_ratio = worst_ratio.max(hi / lo);
                exact_all &= exact;
                dev_all = dev_all.max(dev);
            }
            let how = if exact_all { "enumeration" } else { "monte-carlo" };
            if key == "positive-expected-projection" {
                report(lo_all, lo_all > 0.0, format!("smallest eigenvalue of E[H] by {how}"))
            } else {
                let tol = if exact_all { 1e-12 } else { 5.0 / (probes as f64).sqrt() };
                report(
                    worst_ratio,
                    dev_all <= tol,
                    format!("max |E[H] - alpha I| = {dev_all:e} by {how}"),
                )
            }
        }
        "lower-bounded" => {
            let fs = f_star()?;
            let mut margin = f64::INFINITY;
            for _ in 0..probes {
                margin = margin.min(pb.eval(&probe_point(ctx, rng)) - fs);
            }
            report(margin, margin >= -CHECK_TOL * fs.abs().max(1.0), "min f(W) - f*".into())
        }
        "lipschitz-smooth" => {
            let l = need(ctx.params.l, "L")?;
            let mut worst: f64 = 0.0;
            for _ in 0..probes {
                let w = probe_point(ctx, rng);
                let v = probe_point(ctx, rng);
                let num = frob_sq(&(pb.grad(&w) - pb.grad(&v))).sqrt();
                let den = l * frob_sq(&(&w - &v)).sqrt();
                if den > 0.0 {
                    worst = worst.max(num / den);
                }
            }
            report(
                worst,
                worst <= 1.0 + CHECK_TOL,
                "max ||grad f(W) - grad f(V)|| / (L ||W - V||)".into(),
            )
        }
        "expected-smoothness" => {
            let fs = f_star()?;
            let a1 = need(ctx.params.a1, "A1")?;
            let b1 = need(ctx.params.b1, "B1")?;
            let c1 = need(ctx.params.c1, "C1")?;
            let mut worst: f64 = 0.0;
            for _ in 0..probes {
                let w = probe_point(ctx, rng);
                let g = frob_sq(&pb.grad(&w));
                let lhs = g + pb.sample_variance(&w) / ctx.batch.max(1) as f64;
                let rhs = 2.0 * a1 * (pb.eval(&w) - fs) + b1 * g + c1;
                worst = worst.max(lhs / rhs);
            }
            report(
                worst,
                worst <= 1.0 + CHECK_TOL,
                "max E||g||^2 / (2 A1 (f - f*) + B1 ||grad f||^2 + C1)".into(),
            )
        }
        "bounded-variance" => {
            let s = need(ctx.params.sigma_sq, "sigma_sq")?;
            let mut worst: f64 = 0.0;
            for _ in 0..probes {
                let v = pb.sample_variance(&probe_point(ctx, rng)) / ctx.batch.max(1) as f64;
                worst = worst.max(if s > 0.0 {
                    v / s
                } else if v > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                });
            }
            report(worst, worst <= 1.0 + CHECK_TOL, "max variance / sigma^2".into())
        }
        "pl" => {
            let fs = f_star()?;
            let mu = need(ctx.params.mu, "mu")?;
            let mut worst: f64 = 0.0;
            for _ in 0..probes {
                let w = probe_point(ctx, rng);
                let g = 0.5 * frob_sq(&pb.grad(&w));
                if g > 0.0 {
                    worst = worst.max(mu * (pb.eval(&w) - fs) / g);
                }
            }
            report(
                worst,
                worst <= 1.0 + CHECK_TOL,
                "max mu (f - f*) / (||grad f||^2 / 2)".into(),
            )
        }
        "minimizer-exists" => {
            let fs = f_star()?;
            let w = pb
                .minimizer
                .as_ref()
                .ok_or_else(|| Error::MissingConstant("W*".into()))?;
            let gap = pb.eval(w) - fs;
            report(gap, gap.abs() <= CHECK_TOL * fs.abs().max(1.0), "f(W*) - f*".into())
        }
        "function-dissimilarity" => {
            let d = need(ctx.params.delta_star, "delta_star")?;
            report(d, d >= -CHECK_TOL, format!("delta* over {} clients", ctx.clients.len()))
        }
        "convex" => {
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..probes {
                let w = probe_point(ctx, rng);
                let v = probe_point(ctx, rng);
                let mid = (&w + &v) * 0.5;
                let gap = 0.5 * (pb.eval(&w) + pb.eval(&v)) - pb.eval(&mid);
                worst = worst.max(-gap);
            }
            let margin = -worst;
            report(
                margin,
                margin >= -CHECK_TOL,
                "min (f(W) + f(V))/2 - f((W + V)/2)".into(),
            )
        }
        "lipschitz-continuous" => {
            let l0 = need(ctx.params.l0, "L0")?;
            let mut worst: f64 = 0.0;
            for _ in 0..probes {
                worst = worst.max(frob_sq(&pb.grad(&probe_point(ctx, rng))).sqrt() / l0);
            }
            report(worst, worst <= 1.0 + CHECK_TOL, "max ||subgradient|| / L0".into())
        }
        _ => unreachable!(),
    };
    Ok(r)
}
