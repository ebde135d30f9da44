//! Moments of one estimator step, checked by Monte Carlo against exact values
//! computed from the per-sample gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use bernoulli_lora::compression::Compressor;
use bernoulli_lora::estimators::{Estimator, EstimatorConfig, EstimatorKind};
use bernoulli_lora::federated::{FederatedConfig, FederatedEstimator, FederatedKind};
use bernoulli_lora::linalg::{frob_sq, ParamMatrix};
use bernoulli_lora::problems::{Dataset, LinRegConfig, Problem, RegWeight};
use bernoulli_lora::rng::{stream, RunStreams, Stream, StreamRng};

const DRAWS: u64 = 20_000;

fn gaussian(rng: &mut StreamRng, m: usize, n: usize) -> ParamMatrix {
    ParamMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
}

struct Setup {
    problem: Problem,
    clients: Vec<Problem>,
    w_old: ParamMatrix,
    w_new: ParamMatrix,
    g0: ParamMatrix,
}

fn setup() -> Setup {
    let data = Dataset::generate(&LinRegConfig {
        samples: 24,
        features: 6,
        noise: 2.0,
        effective_rank: Some(3),
        tail_strength: 0.5,
        bias: 0.5,
        scale_mean: 0.0,
        scale_std: 1.0,
        seed: 17,
    })
    .unwrap();
    let problem = Problem::linreg(&data, (2, 3), RegWeight::Value(0.3)).unwrap();
    let clients = problem.partition(3).unwrap();
    let mut rng = stream(17, Stream::Data);
    let w_old = gaussian(&mut rng, 2, 3);
    let w_new = &w_old + gaussian(&mut rng, 2, 3) * 0.3;
    let g0 = problem.grad(&w_old) + gaussian(&mut rng, 2, 3) * 0.5;
    Setup {
        problem,
        clients,
        w_old,
        w_new,
        g0,
    }
}

/// Variance of the per-sample values of `h` around their mean.
fn sample_variance(p: &Problem, h: impl Fn(usize) -> ParamMatrix) -> f64 {
    let n = p.n_samples();
    let all: Vec<_> = (0..n).map(h).collect();
    let mean = all
        .iter()
        .fold(ParamMatrix::zeros(all[0].nrows(), all[0].ncols()), |a, x| a + x)
        / n as f64;
    all.iter().map(|x| frob_sq(&(x - &mean))).sum::<f64>() / n as f64
}

fn assert_close(samples: &[f64], exact: f64, what: &str) {
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    let se = (samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!(
        (m - exact).abs() <= 5.0 * se + 1e-12,
        "{what}: mean {m} vs exact {exact} (se {se})"
    );
}

fn single_gaps(s: &Setup, kind: EstimatorKind, batch: usize) -> (Vec<f64>, ParamMatrix) {
    let cfg = EstimatorConfig { kind, batch };
    let target = s.problem.grad(&s.w_new);
    let mut sum = ParamMatrix::zeros(2, 3);
    let gaps = (0..DRAWS)
        .map(|seed| {
            let mut e = Estimator::new(cfg, &s.problem, &s.w_old, Some(&s.g0)).unwrap();
            e.advance(&s.problem, &s.w_new, &s.w_old, &mut RunStreams::new(seed, 0));
            sum += e.current();
            frob_sq(&(e.current() - &target))
        })
        .collect();
    (gaps, sum / DRAWS as f64)
}

#[test]
fn page_gap_recursion() {
    let s = setup();
    let (q, b) = (0.3, 2);
    let e0 = frob_sq(&(&s.g0 - s.problem.grad(&s.w_old)));
    let var = sample_variance(&s.problem, |i| {
        s.problem.sample_grad(&s.w_new, &[i]) - s.problem.sample_grad(&s.w_old, &[i])
    });
    let (gaps, _) = single_gaps(&s, EstimatorKind::Page { q }, b);
    assert_close(&gaps, (1.0 - q) * (e0 + var / b as f64), "page");
}

#[test]
fn mvr_gap_recursion() {
    let s = setup();
    let (mom, b) = (0.4, 3);
    let e0 = frob_sq(&(&s.g0 - s.problem.grad(&s.w_old)));
    let var = sample_variance(&s.problem, |i| {
        s.problem.sample_grad(&s.w_new, &[i]) - s.problem.sample_grad(&s.w_old, &[i]) * (1.0 - mom)
    });
    let (gaps, _) = single_gaps(&s, EstimatorKind::Mvr { b: mom }, b);
    assert_close(&gaps, (1.0 - mom).powi(2) * e0 + var / b as f64, "mvr");
}

#[test]
fn sgd_is_unbiased_with_batch_variance() {
    let s = setup();
    let var = sample_variance(&s.problem, |i| s.problem.sample_grad(&s.w_new, &[i]));
    let (gaps, mean) = single_gaps(&s, EstimatorKind::Sgd, 4);
    assert_close(&gaps, var / 4.0, "sgd");
    let bias = (mean - s.problem.grad(&s.w_new)).norm();
    assert!(bias < 10.0 * (var / 4.0 / DRAWS as f64).sqrt(), "sgd bias {bias}");
}

fn federated(s: &Setup, kind: FederatedKind, compressor: Compressor, seed: u64) -> FederatedEstimator {
    let cfg = FederatedConfig { kind, compressor };
    let mut f = FederatedEstimator::new(&cfg, &s.clients, &s.w_old, Some(&s.g0)).unwrap();
    f.advance(
        &s.clients,
        &s.w_new,
        &s.w_old,
        &mut RunStreams::new(seed, s.clients.len()),
    );
    f
}

#[test]
fn marina_client_gap_recursion() {
    let s = setup();
    let (q, k, d) = (0.25, 2, 6);
    let omega = d as f64 / k as f64 - 1.0;
    let m = s.clients.len() as f64;
    let exact: f64 = s
        .clients
        .iter()
        .map(|c| {
            let e = frob_sq(&(&s.g0 - c.grad(&s.w_old)));
            let delta = frob_sq(&(c.grad(&s.w_new) - c.grad(&s.w_old)));
            (1.0 - q) * (e + omega * delta)
        })
        .sum::<f64>()
        / m;
    let gaps: Vec<f64> = (0..DRAWS)
        .map(|seed| {
            federated(&s, FederatedKind::Marina { q }, Compressor::RandK { k }, seed).client_gap(&s.clients, &s.w_new)
        })
        .collect();
    assert_close(&gaps, exact, "marina");
}

#[test]
fn ef21_contracts_every_client_every_round() {
    let s = setup();
    let (k, d) = (2, 6);
    let beta = k as f64 / d as f64;
    for seed in 0..50 {
        let f = federated(&s, FederatedKind::Ef21, Compressor::TopK { k }, seed);
        for (g, c) in f.local().iter().zip(&s.clients) {
            let fresh = c.grad(&s.w_new);
            assert!(frob_sq(&(g - &fresh)) <= (1.0 - beta) * frob_sq(&(&s.g0 - &fresh)) + 1e-12);
        }
    }
}

#[test]
fn qgd_is_unbiased() {
    let s = setup();
    let target = s.problem.grad(&s.w_new);
    let k = 3;
    let omega = 6.0 / k as f64 - 1.0;
    let mut sum = ParamMatrix::zeros(2, 3);
    let mut gaps = Vec::new();
    for seed in 0..DRAWS {
        let f = federated(&s, FederatedKind::Qgd, Compressor::RandK { k }, seed);
        sum += f.current();
        gaps.push(frob_sq(&(f.current() - &target)));
    }
    // independent clients: the server error is the mean of client errors
    let m = s.clients.len() as f64;
    let exact = s
        .clients
        .iter()
        .map(|c| omega * frob_sq(&c.grad(&s.w_new)))
        .sum::<f64>()
        / (m * m);
    assert_close(&gaps, exact, "qgd");
    let bias = (sum / DRAWS as f64 - target).norm();
    assert!(bias < 10.0 * (exact / DRAWS as f64).sqrt(), "qgd bias {bias}");
}
