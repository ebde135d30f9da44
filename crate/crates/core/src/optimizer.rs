//! The outer loop: estimate, sketch, step, record.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Estimator, EstimatorConfig};
use crate::federated::{FederatedConfig, FederatedEstimator, FederatedKind};
use crate::linalg::{all_finite, frob_sq, ParamMatrix};
use crate::problems::Problem;
use crate::rng::RunStreams;
use crate::sketch::{projected_step, BernoulliSketcher, Side};

/// Stopping threshold on `||grad f||^2` used when none is given.
pub const DEFAULT_STOP_GRAD_SQ: f64 = 5e-16;

#[derive(Clone, Debug, PartialEq)]
pub enum MethodSpec {
    Single(EstimatorConfig),
    Federated(FederatedConfig),
    /// Plain (sub)gradient, for the nonsmooth setting.
    Subgradient,
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Single(c) => c.kind.name(),
            MethodSpec::Federated(c) => c.kind.name(),
            MethodSpec::Subgradient => "subgradient",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum StepRule {
    Constant {
        gamma: f64,
    },
    /// `(f(W) - f*) / ||g||^2`; needs `f*`.
    Polyak,
}

#[derive(Clone, Debug)]
pub struct RunSpec {
    pub method: MethodSpec,
    pub sketcher: BernoulliSketcher,
    pub step: StepRule,
    pub horizon: usize,
    pub stop_grad_sq: f64,
    pub w0: ParamMatrix,
    pub init_estimator: Option<ParamMatrix>,
    /// `c` in `Phi = f - f* + c * gap`; the gap is the client average for EF21.
    pub lyapunov_weight: f64,
    /// Reporting weights `w_t = w_{t-1} / decay`; `None` means uniform.
    pub weight_decay: Option<f64>,
}

impl RunSpec {
    pub fn new(
        method: MethodSpec,
        sketcher: BernoulliSketcher,
        step: StepRule,
        horizon: usize,
        w0: ParamMatrix,
    ) -> Self {
        RunSpec {
            method,
            sketcher,
            step,
            horizon,
            stop_grad_sq: DEFAULT_STOP_GRAD_SQ,
            w0,
            init_estimator: None,
            lyapunov_weight: 0.0,
            weight_decay: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub f: f64,
    pub grad_sq_norm: f64,
    pub estimator_gap: f64,
    pub lyapunov: f64,
    pub stepsize: f64,
    /// Scalars sent up to and including the round that formed this estimate.
    pub comm_scalars: f64,
    pub side: Side,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Ran all `T` iterations.
    Completed,
    /// `||grad f||^2` fell below the threshold, or `f = f*` under the Polyak step.
    Converged,
    /// A non-finite value appeared at the given iteration.
    Diverged { iter: usize },
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub outcome: Outcome,
    pub final_w: ParamMatrix,
    /// Mean of the iterates over the horizon.
    pub averaged_w: ParamMatrix,
    pub f_averaged: f64,
    pub weighted_grad_sq: f64,
    pub uniform_grad_sq: f64,
}

/// What an observer sees at every recorded iteration.
pub struct StepView<'a> {
    pub iter: usize,
    pub w: &'a ParamMatrix,
    pub g: &'a ParamMatrix,
}

enum State {
    Single(Estimator),
    Federated(FederatedEstimator),
    Subgradient(ParamMatrix),
}

impl State {
    fn current(&self) -> &ParamMatrix {
        match self {
            State::Single(e) => e.current(),
            State::Federated(e) => e.current(),
            State::Subgradient(g) => g,
        }
    }
}

pub fn run(problem: &Problem, clients: &[Problem], spec: &RunSpec, seed: u64) -> Result<Trace> {
    run_observed(problem, clients, spec, seed, |_| {})
}

pub fn run_observed<F: FnMut(&StepView)>(
    problem: &Problem,
    clients: &[Problem],
    spec: &RunSpec,
    seed: u64,
    mut observe: F,
) -> Result<Trace> {
    let shape = problem.shape();
    problem.check_shape(&spec.w0)?;
    spec.sketcher.validate(shape)?;
    if spec.horizon == 0 {
        return Err(Error::config("T", "need at least one iteration"));
    }
    let f_star = problem.f_star();
    match spec.step {
        StepRule::Constant { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
            return Err(Error::config(
                "stepsize",
                format!("{gamma} is not a positive finite number"),
            ));
        }
        StepRule::Polyak if f_star.is_none() => {
            return Err(Error::MissingConstant("f* (needed by the Polyak step)".into()));
        }
        _ => {}
    }
    let n_clients = match spec.method {
        MethodSpec::Federated(_) => clients.len(),
        _ => 0,
    };
    let mut streams = RunStreams::new(seed, n_clients);
    let init = spec.init_estimator.as_ref();
    let mut state = match &spec.method {
        MethodSpec::Single(cfg) => State::Single(Estimator::new(*cfg, problem, &spec.w0, init)?),
        MethodSpec::Federated(cfg) => State::Federated(FederatedEstimator::new(cfg, clients, &spec.w0, init)?),
        MethodSpec::Subgradient => State::Subgradient(problem.grad(&spec.w0)),
    };

    let mut w = spec.w0.clone();
    let mut sum_w = ParamMatrix::zeros(shape.0, shape.1);
    let mut rows = Vec::with_capacity(spec.horizon);
    let mut comm = 0.0;
    let mut outcome = Outcome::Completed;
    let (mut wsum, mut wgrad, mut weight) = (0.0, 0.0, 1.0);

    for t in 0..spec.horizon {
        let f = problem.eval(&w);
        let full = problem.grad(&w);
        let grad_sq = frob_sq(&full);
        let g = state.current();
        if !f.is_finite() || !grad_sq.is_finite() || !all_finite(g) {
            outcome = Outcome::Diverged { iter: t };
            break;
        }
        let gap = frob_sq(&(g - &full));
        let lyap_gap = match (&state, &spec.method) {
            (State::Federated(e), MethodSpec::Federated(c)) if c.kind == FederatedKind::Ef21 => {
                e.client_gap(clients, &w)
            }
            _ => gap,
        };
        let gamma = match spec.step {
            StepRule::Constant { gamma } => gamma,
            StepRule::Polyak => {
                let g2 = frob_sq(g);
                if g2 > 0.0 {
                    (f - f_star.unwrap()) / g2
                } else {
                    0.0
                }
            }
        };
        let sketch = spec.sketcher.draw(shape, &mut streams.bernoulli, &mut streams.sketch);
        let lyapunov = match f_star {
            Some(fs) => f - fs + spec.lyapunov_weight * lyap_gap,
            None => f64::NAN,
        };
        rows.push(TraceRow {
            iter: t,
            f,
            grad_sq_norm: grad_sq,
            estimator_gap: gap,
            lyapunov,
            stepsize: gamma,
            comm_scalars: comm,
            side: sketch.side,
        });
        observe(&StepView { iter: t, w: &w, g });
        sum_w += &w;
        wsum += weight;
        wgrad += weight * grad_sq;
        if let Some(d) = spec.weight_decay {
            weight /= d;
        }

        let at_optimum = matches!(spec.step, StepRule::Polyak) && f - f_star.unwrap() <= 0.0;
        if grad_sq <= spec.stop_grad_sq || at_optimum {
            outcome = Outcome::Converged;
            break;
        }
        let w_next = projected_step(&w, g, &sketch, gamma);
        if !all_finite(&w_next) {
            outcome = Outcome::Diverged { iter: t + 1 };
            break;
        }
        comm += match &mut state {
            State::Single(e) => {
                e.advance(problem, &w_next, &w, &mut streams);
                0.0
            }
            State::Federated(e) => e.advance(clients, &w_next, &w, &mut streams),
            State::Subgradient(g) => {
                *g = problem.grad(&w_next);
                0.0
            }
        };
        w = w_next;
    }

    // A run stopped early holds its last state for the rest of the horizon.
    let held = spec.horizon.saturating_sub(rows.len()) as f64;
    let k = (rows.len() as f64 + held).max(1.0);
    let last = rows.last().map_or(0.0, |r| r.grad_sq_norm);
    let averaged_w = (sum_w + &w * held) / k;
    let f_averaged = problem.eval(&averaged_w);
    let uniform_grad_sq = (rows.iter().map(|r| r.grad_sq_norm).sum::<f64>() + held * last) / k;
    Ok(Trace {
        rows,
        outcome,
        final_w: w,
        averaged_w,
        f_averaged,
        weighted_grad_sq: if wsum > 0.0 { wgrad / wsum } else { f64::NAN },
        uniform_grad_sq,
    })
}
