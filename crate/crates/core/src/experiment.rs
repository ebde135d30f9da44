//! Turning a configuration into problems, run specifications and output files.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::{
    EstimatorName, ExperimentConfig, InitKind, MethodSection, ProblemSection, RegField, StepField, StepName,
};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind};
use crate::federated::{FederatedConfig, FederatedKind};
use crate::linalg::ParamMatrix;
use crate::optimizer::{run, MethodSpec, Outcome, RunSpec, StepRule, Trace, DEFAULT_STOP_GRAD_SQ};
use crate::output::{self, BoundMetric, MethodMeta};
use crate::problems::{Dataset, L1Config, Problem, ProblemKind, Provenance, QuadraticConfig, RegWeight};
use crate::rng::{stream, Stream};
use crate::sketch::{BernoulliSketcher, SketchSpec};
use crate::theory::{self, CheckContext, Method, Theorem, TheoryParams};

pub struct Prepared {
    pub problem: Problem,
    pub clients: Vec<Problem>,
    pub w0: ParamMatrix,
    pub methods: Vec<PreparedMethod>,
}

pub struct PreparedMethod {
    pub name: String,
    pub spec: RunSpec,
    pub theorem: Theorem,
    pub params: TheoryParams,
    pub batch: usize,
    pub gamma: Option<f64>,
    pub bound: Option<f64>,
    pub metric: BoundMetric,
}

fn default_shape(features: usize) -> (usize, usize) {
    let s = (features as f64).sqrt().round() as usize;
    if s * s == features {
        (s, s)
    } else {
        (features, 1)
    }
}

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(format!("problem.{key}"), "required for this problem kind"))
}

/// Build the objective and the starting point.
pub fn build_problem(sec: &ProblemSection, base: Option<&Path>) -> Result<(Problem, ParamMatrix)> {
    let mut problem = match sec.kind {
        ProblemKind::RegularizedLinreg => {
            let data = match &sec.dataset {
                Some(p) => {
                    let path = base.map_or_else(|| PathBuf::from(p), |b| b.join(p));
                    Dataset::load(&path)?
                }
                None => Dataset::generate(&sec.linreg_config()?)?,
            };
            let shape = sec.shape.unwrap_or_else(|| default_shape(data.features.ncols()));
            Problem::linreg(&data, shape, reg_weight(sec.reg_weight))?
        }
        ProblemKind::QuadraticPl => Problem::quadratic_random(&QuadraticConfig {
            shape: required(sec.shape, "shape")?,
            rows: sec.rows,
            mu: required(sec.mu, "mu")?,
            l: required(sec.l, "L")?,
            seed: sec.seed,
        })?,
        ProblemKind::NonsmoothL1 => Problem::l1_random(&L1Config {
            shape: required(sec.shape, "shape")?,
            rows: required(sec.rows, "rows")?,
            seed: sec.seed,
        })?,
    };
    let (m, n) = problem.shape();
    let w0 = match sec.init {
        InitKind::Zero => DMatrix::zeros(m, n),
        InitKind::Random => {
            let mut rng = stream(sec.init_seed.unwrap_or(sec.seed), Stream::Data);
            let s = sec.init_scale.unwrap_or(1.0);
            DMatrix::from_fn(m, n, |_, _| s * rng.sample::<f64, _>(StandardNormal))
        }
        InitKind::Pretrain => {
            if sec.kind != ProblemKind::RegularizedLinreg {
                return Err(Error::config(
                    "problem.init",
                    "pretrain is only defined for regularized-linreg",
                ));
            }
            let pre = sec
                .pretrain
                .as_ref()
                .ok_or_else(|| Error::config("problem.pretrain", "required when init = \"pretrain\""))?;
            let data = Dataset::generate(pre)?;
            let p = Problem::linreg(&data, (m, n), reg_weight(sec.reg_weight))?;
            p.descend(&DMatrix::zeros(m, n), 1e-20, 100_000).0
        }
    };
    problem.estimate_optimum(&w0);
    Ok((problem, w0))
}

fn reg_weight(f: Option<RegField>) -> RegWeight {
    match f {
        Some(RegField::Value(v)) => RegWeight::Value(v),
        _ => RegWeight::Spectral,
    }
}

fn method_spec(m: &MethodSection, n_samples: usize, batch: usize) -> Result<MethodSpec> {
    let single = |kind| MethodSpec::Single(EstimatorConfig { kind, batch });
    let fed = |kind| -> Result<MethodSpec> {
        Ok(MethodSpec::Federated(FederatedConfig {
            kind,
            compressor: m.compressor()?,
        }))
    };
    Ok(match m.estimator {
        EstimatorName::Gd => single(EstimatorKind::Gd),
        EstimatorName::Sgd => single(EstimatorKind::Sgd),
        EstimatorName::Mvr => single(EstimatorKind::Mvr {
            b: m.b.ok_or_else(|| Error::config("method.b", "required by mvr"))?,
        }),
        EstimatorName::Page => single(EstimatorKind::Page {
            q: m.q.unwrap_or(batch as f64 / (n_samples + batch) as f64),
        }),
        EstimatorName::DistributedGd => fed(FederatedKind::DistributedGd)?,
        EstimatorName::Qgd => fed(FederatedKind::Qgd)?,
        EstimatorName::Marina => fed(FederatedKind::Marina {
            q: m.q.ok_or_else(|| Error::config("method.q", "required by marina"))?,
        })?,
        EstimatorName::Ef21 => fed(FederatedKind::Ef21)?,
        EstimatorName::Subgradient => MethodSpec::Subgradient,
    })
}

fn theorem_for(m: &MethodSection) -> Theorem {
    let method = match m.estimator {
        EstimatorName::Gd | EstimatorName::DistributedGd => Method::Gd,
        EstimatorName::Sgd => Method::Sgd,
        EstimatorName::Mvr => Method::Mvr,
        EstimatorName::Page => Method::Page,
        EstimatorName::Qgd => Method::Qgd,
        EstimatorName::Marina => Method::Marina,
        EstimatorName::Ef21 => Method::Ef21,
        EstimatorName::Subgradient => {
            if m.stepsize == StepField::Named(StepName::Polyak) {
                Method::NonsmoothPolyak
            } else {
                Method::Nonsmooth
            }
        }
    };
    let pl = m.pl && !matches!(method, Method::Nonsmooth | Method::NonsmoothPolyak);
    Theorem { method, pl }
}

pub fn prepare_method(
    m: &MethodSection,
    problem: &Problem,
    clients: &[Problem],
    w0: &ParamMatrix,
    delta_star: Option<(f64, Provenance)>,
    stop_grad_sq: f64,
) -> Result<PreparedMethod> {
    let (rows, cols) = problem.shape();
    let sketcher = BernoulliSketcher {
        p: m.p,
        left: SketchSpec {
            distribution: m.left,
            rank: m.left_rank.or(m.rank).unwrap_or(1),
        },
        right: SketchSpec {
            distribution: m.right,
            rank: m.right_rank.or(m.rank).unwrap_or(1),
        },
    };
    sketcher.validate((rows, cols))?;
    let batch = m.batch.unwrap_or(1);
    let method = method_spec(m, problem.n_samples(), batch)?;
    let theorem = theorem_for(m);
    let mut params = theory::derive_constants(problem, &sketcher, w0, batch);
    params.set_with("T", m.horizon as f64, Provenance::Analytic);
    params.set_with("gap0", 0.0, Provenance::Analytic);
    match &method {
        MethodSpec::Single(c) => match c.kind {
            EstimatorKind::Mvr { b } => params.set_with("b", b, Provenance::Analytic),
            EstimatorKind::Page { q } => params.set_with("q", q, Provenance::Analytic),
            _ => {}
        },
        MethodSpec::Federated(c) => {
            if clients.is_empty() {
                return Err(Error::config("problem.clients", "required by multi-client methods"));
            }
            let d = rows * cols;
            c.compressor.validate(d)?;
            theory::set_compressor_constants(&mut params, &c.compressor, d);
            params.set_with("M", clients.len() as f64, Provenance::Analytic);
            if let FederatedKind::Marina { q } = c.kind {
                params.set_with("q", q, Provenance::Analytic);
            }
            if let Some((ds, prov)) = delta_star {
                params.set_with("delta_star", ds, prov);
            }
            if c.kind == FederatedKind::Qgd {
                if let (Some(l), Some(w), Some((ds, prov))) = (params.l, params.omega, delta_star) {
                    let (a1, b1, c1) = theory::qgd_abc(l, w, clients.len() as f64, ds);
                    params.set_with("A1", a1, Provenance::Analytic);
                    params.set_with("B1", b1, Provenance::Analytic);
                    params.set_with("C1", c1, prov);
                }
            }
        }
        MethodSpec::Subgradient => {}
    }
    let scale = m.scale.unwrap_or(1.0);
    let step = match m.stepsize {
        StepField::Value(v) => StepRule::Constant { gamma: v },
        StepField::Named(StepName::Theorem) => StepRule::Constant {
            gamma: scale * theory::stepsize(theorem, &params)?,
        },
        StepField::Named(StepName::InverseL) => StepRule::Constant {
            gamma: scale / params.l.ok_or_else(|| Error::MissingConstant("L".into()))?,
        },
        StepField::Named(StepName::Polyak) => StepRule::Polyak,
    };
    let gamma = match step {
        StepRule::Constant { gamma } => Some(gamma),
        StepRule::Polyak => None,
    };
    let mut spec = RunSpec::new(method, sketcher, step, m.horizon, w0.clone());
    spec.stop_grad_sq = stop_grad_sq;
    if let Some(g) = gamma {
        spec.lyapunov_weight = theory::lyapunov_weight(theorem, g, &params)?;
        if theorem.method == Method::Sgd {
            if let (Some(l), Some(a1), Some(hi)) = (params.l, params.a1, params.lambda_max) {
                spec.weight_decay = Some(1.0 + g * g * l * a1 * hi);
            }
        }
    }
    let metric = match theorem.method {
        Method::Nonsmooth | Method::NonsmoothPolyak => BoundMetric::AveragedGap,
        _ if theorem.pl => BoundMetric::FinalGap,
        _ => BoundMetric::AvgGradSq,
    };
    let bound = match gamma {
        Some(g) => theory::rate_bound(theorem, g, &params).ok(),
        None => theory::rate_bound(theorem, 0.0, &params).ok(),
    };
    Ok(PreparedMethod {
        name: m.display_name(),
        spec,
        theorem,
        params,
        batch,
        gamma,
        bound,
        metric,
    })
}

pub fn prepare(cfg: &ExperimentConfig, base: Option<&Path>, stop_grad_sq: Option<f64>) -> Result<Prepared> {
    let (problem, w0) = build_problem(&cfg.problem, base)?;
    let federated = cfg.methods.iter().any(|m| {
        matches!(
            m.estimator,
            EstimatorName::DistributedGd | EstimatorName::Qgd | EstimatorName::Marina | EstimatorName::Ef21
        )
    });
    let mut clients = Vec::new();
    let mut delta_star = None;
    if federated {
        let m = cfg
            .problem
            .clients
            .ok_or_else(|| Error::config("problem.clients", "required by multi-client methods"))?;
        clients = problem.partition(m)?;
        if cfg.methods.iter().any(|m| m.estimator == EstimatorName::Qgd) {
            delta_star = theory::function_dissimilarity(&problem, &mut clients, &w0);
        }
    }
    let stop = stop_grad_sq.or(cfg.stop_grad_sq).unwrap_or(DEFAULT_STOP_GRAD_SQ);
    let methods = cfg
        .methods
        .iter()
        .map(|m| prepare_method(m, &problem, &clients, &w0, delta_star, stop))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        problem,
        clients,
        w0,
        methods,
    })
}

pub struct SeedRun {
    pub method: usize,
    pub seed: u64,
    pub trace: Trace,
}

/// Run every (method, seed) pair on up to `jobs` threads. The result order
/// does not depend on scheduling.
pub fn execute(prep: &Prepared, seeds: &[u64], jobs: usize) -> Result<Vec<SeedRun>> {
    let work: Vec<(usize, u64)> = (0..prep.methods.len())
        .flat_map(|m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| {
        work.par_iter()
            .map(|&(m, seed)| {
                let pm = &prep.methods[m];
                let trace = run(&prep.problem, &prep.clients, &pm.spec, seed)?;
                Ok(SeedRun { method: m, seed, trace })
            })
            .collect()
    })
}

fn outcome_text(o: Outcome) -> String {
    match o {
        Outcome::Completed => "completed".into(),
        Outcome::Converged => "converged".into(),
        Outcome::Diverged { iter } => format!("diverged at {iter}"),
    }
}

/// Write traces, medians and side files; returns the summary text.
pub fn write_outputs(prep: &Prepared, runs: &[SeedRun], out: &Path, probes: usize, check_seed: u64) -> Result<String> {
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    for (k, pm) in prep.methods.iter().enumerate() {
        let dir = out.join(&pm.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(dir.display().to_string(), e))? {
            let p = entry.map_err(|e| Error::io(dir.display().to_string(), e))?.path();
            let stale = p
                .file_name()
                .and_then(|s| s.to_str())
                .is_some_and(|s| s.starts_with("seed-") && s.ends_with(".csv"));
            if stale {
                fs::remove_file(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
            }
        }
        let mine: Vec<&SeedRun> = runs.iter().filter(|r| r.method == k).collect();
        let mut meta = MethodMeta {
            method: pm.name.clone(),
            theorem: Some(pm.theorem.to_string()),
            stepsize: pm.gamma,
            bound: pm.bound,
            bound_metric: Some(pm.metric),
            f_star: prep.problem.f_star(),
            delta0: pm.params.delta0,
            threshold: Some(pm.spec.stop_grad_sq),
            horizon: Some(pm.spec.horizon),
            ..MethodMeta::default()
        };
        let mut traces = Vec::new();
        for r in &mine {
            output::write_trace(&dir.join(format!("seed-{}.csv", r.seed)), &r.trace.rows)?;
            meta.outcomes.insert(r.seed.to_string(), outcome_text(r.trace.outcome));
            if let Some(fs) = prep.problem.f_star() {
                let v = match pm.metric {
                    BoundMetric::AveragedGap => Some(r.trace.f_averaged - fs),
                    BoundMetric::FinalGap => Some(prep.problem.eval(&r.trace.final_w) - fs),
                    BoundMetric::AvgGradSq => None,
                };
                if let Some(v) = v {
                    meta.observed.insert(r.seed.to_string(), v);
                }
            }
            traces.push(r.trace.rows.clone());
        }
        output::write_aggregate(&dir.join(output::MEDIAN_FILE), &output::aggregate(&traces))?;
        meta.save(&dir.join(output::META_FILE))?;
    }
    let rows = output::summarize_dir(out)?;
    let mut text = output::render_table(&rows);
    text.push('\n');
    text.push_str(&assumption_block(prep, probes, check_seed));
    output::write_text(&out.join(output::SUMMARY_FILE), &text)?;
    Ok(text)
}

fn applicable(prep: &Prepared, pm: &PreparedMethod) -> Vec<&'static str> {
    let mut v = vec!["positive-expected-projection"];
    if prep.problem.kind().is_smooth() {
        v.extend(["lower-bounded", "lipschitz-smooth"]);
        match pm.theorem.method {
            Method::Sgd => v.push("expected-smoothness"),
            Method::Mvr => v.push("bounded-variance"),
            Method::Qgd => v.push("function-dissimilarity"),
            _ => {}
        }
        if pm.theorem.pl {
            v.push("pl");
        }
    } else {
        v.extend([
            "scalar-expected-projection",
            "minimizer-exists",
            "convex",
            "lipschitz-continuous",
        ]);
    }
    v
}

/// Human-readable assumption reports, one block per method.
pub fn assumption_block(prep: &Prepared, probes: usize, seed: u64) -> String {
    let mut out = String::from("assumptions\n");
    for pm in &prep.methods {
        out.push_str(&format!("[{}] theorem {}\n", pm.name, pm.theorem));
        let ctx = CheckContext {
            problem: &prep.problem,
            clients: &prep.clients,
            sketcher: &pm.spec.sketcher,
            params: &pm.params,
            batch: pm.batch,
        };
        let mut rng = stream(seed, Stream::Sketch);
        for name in applicable(prep, pm) {
            let line = match theory::check_assumption(name, &ctx, probes, &mut rng) {
                Ok(r) => format!(
                    "  {:<30} {}  value {:.6e}  ({})\n",
                    r.name,
                    if r.holds { "holds" } else { "FAILS" },
                    r.ratio,
                    r.detail
                ),
                Err(e) => format!("  {name:<30} n/a  ({e})\n"),
            };
            out.push_str(&line);
        }
        for (k, v) in pm.params.entries() {
            if let Some(v) = v {
                let prov = pm
                    .params
                    .provenance
                    .get(k)
                    .map_or("given".to_string(), |p| p.to_string());
                out.push_str(&format!("  const {k:<12} {v:.6e}  {prov}\n"));
            }
        }
    }
    out
}
