//! Worked examples checked against independent computations in this file.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};

use bernoulli_lora::compression::Compressor;
use bernoulli_lora::linalg::{frob_sq, ParamMatrix};
use bernoulli_lora::optimizer::{run, MethodSpec, RunSpec, StepRule};
use bernoulli_lora::problems::{regularizer_curvature_bound, Dataset, LinRegConfig, Problem, RegWeight};
use bernoulli_lora::rng::{stream, Stream};
use bernoulli_lora::sketch::{
    enumerate_coordinate_expectation, projector, BernoulliSketcher, Distribution, SketchSpec,
};
use bernoulli_lora::theory::{self, qgd_abc, Theorem, TheoryParams};

fn params(kv: &[(&str, f64)]) -> TheoryParams {
    let mut p = TheoryParams::default();
    for (k, v) in kv {
        p.set(k, *v).unwrap();
    }
    p
}

fn scalar_linreg(reg: f64) -> Problem {
    let data = Dataset {
        features: DMatrix::from_element(1, 1, 1.0),
        target: DVector::from_element(1, 0.0),
        seed: 0,
    };
    Problem::linreg(&data, (1, 1), RegWeight::Value(reg)).unwrap()
}

#[test]
fn scalar_regression_value_and_slope() {
    let p = scalar_linreg(1.0);
    let at = |x: f64| DMatrix::from_element(1, 1, x);
    assert_eq!(p.eval(&at(0.0)), 0.0);
    assert_eq!(p.grad(&at(0.0))[(0, 0)], 0.0);
    // 1/2 * 1 + 1 * 1/(1+1)
    assert_relative_eq!(p.eval(&at(1.0)), 1.0, max_relative = 1e-15);
    // (1 - 0) + 2 * 1 / (1 + 1)^2
    assert_relative_eq!(p.grad(&at(1.0))[(0, 0)], 1.5, max_relative = 1e-15);
}

#[test]
fn identity_quadratic() {
    let p = Problem::quadratic(&DMatrix::identity(2, 2), DVector::zeros(2), (2, 1)).unwrap();
    let w = DMatrix::from_row_slice(2, 1, &[3.0, 4.0]);
    assert_eq!(p.eval(&w), 12.5);
    assert_eq!(p.grad(&w), w);
    assert_eq!(p.f_star(), Some(0.0));
    assert_eq!(p.smoothness, Some(1.0));
    assert_eq!(p.pl_constant, Some(1.0));
}

/// `max |phi''|` on a fine grid, `phi(x) = x^2 / (1 + x^2)`.
fn curvature_by_grid() -> f64 {
    let mut best = 0.0f64;
    let mut x: f64 = -10.0;
    while x <= 10.0 {
        let x2 = x * x;
        let d2 = (2.0 - 6.0 * x2) / (1.0 + x2).powi(3);
        best = best.max(d2.abs());
        x += 1e-4;
    }
    best
}

fn power_iteration_sq(d: &DMatrix<f64>) -> f64 {
    let g = d.transpose() * d;
    let mut v = DVector::from_element(g.ncols(), 1.0).normalize();
    let mut lam = 0.0;
    for _ in 0..2000 {
        let u = &g * &v;
        lam = u.norm();
        v = u / lam;
    }
    lam
}

#[test]
fn reduced_regression_smoothness() {
    let data = Dataset::generate(&LinRegConfig {
        samples: 500,
        features: 64,
        noise: 50.0,
        effective_rank: Some(4),
        tail_strength: 0.9,
        bias: 10.0,
        scale_mean: 1.0,
        scale_std: 2.0,
        seed: 84,
    })
    .unwrap();
    let p = Problem::linreg(&data, (8, 8), RegWeight::Spectral).unwrap();
    let s2 = power_iteration_sq(&data.features);
    let lambda = s2.sqrt();
    assert_relative_eq!(p.reg_weight(), lambda, max_relative = 1e-8);
    let curv = curvature_by_grid();
    assert_relative_eq!(curv, 2.0, max_relative = 1e-12);
    assert_eq!(regularizer_curvature_bound(), curv);
    let oracle = s2 / 500.0 + lambda * curv;
    assert_relative_eq!(p.smoothness.unwrap(), oracle, max_relative = 1e-8);
}

#[test]
fn rank_one_projector_on_the_diagonal() {
    let spec = SketchSpec {
        distribution: Distribution::Gaussian,
        rank: 1,
    };
    let h = projector(&spec, &DMatrix::from_element(2, 1, 1.0));
    assert_relative_eq!(h, DMatrix::from_element(2, 2, 0.5), max_relative = 1e-15);
}

#[test]
fn coordinate_expectation_over_all_subsets() {
    // d = 4, r = 2: each index lies in 3 of the 6 subsets.
    let e = enumerate_coordinate_expectation(4, 2, 100).unwrap();
    assert_eq!(e, DMatrix::identity(4, 4) * 0.5);
    assert!(enumerate_coordinate_expectation(30, 15, 1000).is_none());
}

#[test]
fn left_only_weights_are_r_over_m() {
    let g = SketchSpec {
        distribution: Distribution::Gaussian,
        rank: 2,
    };
    let sk = BernoulliSketcher {
        p: 1.0,
        left: g,
        right: g,
    };
    let (lo, hi) = sk.spectral_weights((10, 7));
    assert_relative_eq!(lo, 0.2, max_relative = 1e-15);
    assert_relative_eq!(hi, 0.2, max_relative = 1e-15);
    let mixed = BernoulliSketcher {
        p: 0.25,
        left: g,
        right: g,
    }
    .spectral_weights((10, 4));
    assert_relative_eq!(mixed.0, 0.25 * 0.2 + 0.75 * 0.5, max_relative = 1e-15);
}

/// All `C(d, k)` masks of `d` coordinates.
fn subsets(d: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << d)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..d).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

#[test]
fn rand_k_moments_by_enumeration() {
    for (x, k) in [(vec![2.0, 0.0], 1usize), (vec![1.0, -2.0, 0.5, 3.0], 2)] {
        let d = x.len();
        let outcomes: Vec<Vec<f64>> = subsets(d, k)
            .into_iter()
            .map(|s| {
                (0..d)
                    .map(|i| {
                        if s.contains(&i) {
                            x[i] * d as f64 / k as f64
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let n = outcomes.len() as f64;
        let mean: Vec<f64> = (0..d).map(|i| outcomes.iter().map(|o| o[i]).sum::<f64>() / n).collect();
        for (m, xi) in mean.iter().zip(&x) {
            assert_relative_eq!(*m, *xi, epsilon = 1e-15);
        }
        let xsq: f64 = x.iter().map(|v| v * v).sum();
        let var = outcomes
            .iter()
            .map(|o| o.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n;
        let omega = Compressor::RandK { k }.omega(d).unwrap();
        assert_relative_eq!(omega, d as f64 / k as f64 - 1.0);
        assert_relative_eq!(var, omega * xsq, max_relative = 1e-15);

        // The sampled operator only ever produces enumerated outcomes.
        let xm = DMatrix::from_row_slice(1, d, &x);
        let c = Compressor::RandK { k };
        let mut rng = stream(3, Stream::Compressor);
        for _ in 0..200 {
            let y: Vec<f64> = c.compress(&xm, &mut rng).iter().copied().collect();
            assert!(outcomes.iter().any(|o| o == &y), "{y:?}");
        }
    }
}

#[test]
fn scaled_rand_k_is_contractive() {
    let c = Compressor::RandK { k: 2 }.as_contractive(4);
    // omega = 1, so beta = 1/2
    assert_eq!(c.beta(4), Some(0.5));
    let x = DMatrix::from_row_slice(1, 4, &[1.0, -2.0, 0.5, 3.0]);
    let mut worst = 0.0f64;
    let mut rng = stream(1, Stream::Compressor);
    for _ in 0..500 {
        let y = c.compress(&x, &mut rng);
        worst = worst.max(frob_sq(&(&y - &x)) / frob_sq(&x));
    }
    // With k = 2 of 4 kept and halved, the error is at most 1 - beta only in expectation.
    let mean_bound: f64 = subsets(4, 2)
        .iter()
        .map(|s| {
            (0..4)
                .map(|i| {
                    let yi = if s.contains(&i) { x[(0, i)] } else { 0.0 };
                    (yi - x[(0, i)]).powi(2)
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        / 6.0
        / frob_sq(&x);
    assert_relative_eq!(mean_bound, 0.5, max_relative = 1e-15);
    assert!(worst < 1.0);
}

#[test]
fn payload_accounting() {
    assert_eq!(Compressor::RandK { k: 5 }.comm_scalars(20), 10.0);
    assert_eq!(Compressor::TopK { k: 3 }.comm_scalars(20), 6.0);
    assert_eq!(Compressor::Identity.comm_scalars(20), 20.0);
    assert_eq!(Compressor::Dither { levels: 1 }.comm_scalars(64), 1.0);
}

#[test]
fn qgd_constants() {
    assert_eq!(qgd_abc(1.0, 0.0, 2.0, 0.7), (0.0, 1.0, 0.0));
    // rand-k d = 4, k = 2 has omega = 1; L = 1, M = 2, no dissimilarity
    let omega = Compressor::RandK { k: 2 }.omega(4).unwrap();
    assert_eq!(qgd_abc(1.0, omega, 2.0, 0.0), (0.5, 1.0, 0.0));
    let (a, b, c) = qgd_abc(2.0, 3.0, 4.0, 0.5);
    assert_relative_eq!(a, 1.5);
    assert_eq!(b, 1.0);
    assert_relative_eq!(c, 1.5);
}

#[test]
fn stepsize_examples() {
    let gd: Theorem = "gd".parse().unwrap();
    assert_eq!(theory::stepsize(gd, &params(&[("L", 4.0)])).unwrap(), 0.25);
    let page: Theorem = "page".parse().unwrap();
    let g = theory::stepsize(page, &params(&[("L", 1.0), ("q", 0.5), ("lambda_max", 1.0)])).unwrap();
    assert_relative_eq!(g, 0.5, max_relative = 1e-15);
    // q = 1 removes the variance term
    let g = theory::stepsize(page, &params(&[("L", 3.0), ("q", 1.0), ("lambda_max", 0.4)])).unwrap();
    assert_relative_eq!(g, 1.0 / 3.0, max_relative = 1e-15);
    // beta = 1 makes the error-feedback term vanish
    let ef: Theorem = "ef21".parse().unwrap();
    let g = theory::stepsize(ef, &params(&[("L", 2.0), ("beta", 1.0), ("lambda_max", 1.0)])).unwrap();
    assert_relative_eq!(g, 0.5, max_relative = 1e-15);
    // b = 1 reduces momentum to plain steps
    let mvr: Theorem = "mvr".parse().unwrap();
    let g = theory::stepsize(mvr, &params(&[("L", 5.0), ("b", 1.0), ("lambda_max", 0.5)])).unwrap();
    assert_relative_eq!(g, 0.2, max_relative = 1e-15);
}

#[test]
fn missing_constants_are_named() {
    let page: Theorem = "page".parse().unwrap();
    let e = theory::stepsize(page, &params(&[("L", 1.0)])).unwrap_err();
    assert!(e.is_config());
    let msg = e.to_string();
    assert!(msg.contains("q") || msg.contains("lambda_max"), "{msg}");
}

#[test]
fn polyak_step_solves_abs_in_one_move() {
    let p = Problem::l1(&DMatrix::from_element(1, 1, 1.0), DVector::zeros(1), (1, 1)).unwrap();
    let mut p = p;
    p.optimum = Some(bernoulli_lora::problems::Known {
        value: 0.0,
        provenance: bernoulli_lora::problems::Provenance::Analytic,
    });
    let full = SketchSpec {
        distribution: Distribution::Gaussian,
        rank: 1,
    };
    let sk = BernoulliSketcher {
        p: 0.5,
        left: full,
        right: full,
    };
    let spec = RunSpec::new(
        MethodSpec::Subgradient,
        sk,
        StepRule::Polyak,
        5,
        ParamMatrix::from_element(1, 1, 3.0),
    );
    let t = run(&p, &[], &spec, 0).unwrap();
    assert_eq!(t.rows[0].f, 3.0);
    // (f - f*) / ||g||^2 = 3 / 1
    assert_relative_eq!(t.rows[0].stepsize, 3.0, max_relative = 1e-15);
    assert_eq!(t.rows[1].f, 0.0);
    assert_eq!(t.rows.len(), 2);
}

#[test]
fn variance_matches_enumeration() {
    let data = Dataset::generate(&LinRegConfig {
        samples: 4,
        features: 3,
        noise: 1.0,
        effective_rank: None,
        tail_strength: 0.5,
        bias: 0.0,
        scale_mean: 0.0,
        scale_std: 1.0,
        seed: 2,
    })
    .unwrap();
    let p = Problem::linreg(&data, (3, 1), RegWeight::Value(0.3)).unwrap();
    let w = DMatrix::from_row_slice(3, 1, &[0.2, -1.0, 0.7]);
    let full = p.grad(&w);
    let per: Vec<ParamMatrix> = (0..4).map(|i| p.sample_grad(&w, &[i])).collect();
    let avg = per.iter().fold(ParamMatrix::zeros(3, 1), |a, g| a + g) / 4.0;
    assert_relative_eq!(avg, full, epsilon = 1e-12);
    let var = per.iter().map(|g| frob_sq(&(g - &full))).sum::<f64>() / 4.0;
    assert_relative_eq!(p.sample_variance(&w), var, max_relative = 1e-12);
}

#[test]
fn eight_samples_over_four_clients() {
    let data = Dataset::generate(&LinRegConfig {
        samples: 8,
        features: 2,
        noise: 1.0,
        effective_rank: None,
        tail_strength: 0.5,
        bias: 0.0,
        scale_mean: 0.0,
        scale_std: 1.0,
        seed: 5,
    })
    .unwrap();
    let p = Problem::linreg(&data, (1, 2), RegWeight::Value(0.1)).unwrap();
    let parts = p.partition(4).unwrap();
    assert!(parts.iter().all(|c| c.n_samples() == 2));
    let w = DMatrix::from_row_slice(1, 2, &[0.4, -0.9]);
    let avg = parts.iter().fold(ParamMatrix::zeros(1, 2), |a, c| a + c.grad(&w)) / 4.0;
    assert_relative_eq!(avg, p.grad(&w), epsilon = 1e-12);
    assert!(p.partition(9).unwrap_err().is_config());
}

#[test]
fn bernoulli_side_frequency() {
    let g = SketchSpec {
        distribution: Distribution::CoordinateSubset,
        rank: 1,
    };
    let sk = BernoulliSketcher {
        p: 0.5,
        left: g,
        right: g,
    };
    let mut coin = stream(11, Stream::Bernoulli);
    let mut rng = stream(11, Stream::Sketch);
    let left = (0..10_000)
        .filter(|_| sk.draw((3, 3), &mut coin, &mut rng).side == bernoulli_lora::sketch::Side::Left)
        .count();
    assert!((left as f64 / 1e4 - 0.5).abs() <= 0.015, "{left}");
}
