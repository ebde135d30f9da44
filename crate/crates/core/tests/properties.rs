use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use bernoulli_lora::compression::Compressor;
use bernoulli_lora::linalg::{frob_sq, ParamMatrix};
use bernoulli_lora::output::{fmt_f64, quantile};
use bernoulli_lora::problems::{Dataset, L1Config, LinRegConfig, Problem, QuadraticConfig, RegWeight};
use bernoulli_lora::rng::{stream, Stream};
use bernoulli_lora::sketch::{
    factored_update, projected_step, projector, sample_factor, BernoulliSketcher, Distribution, SketchSpec,
};
use bernoulli_lora::theory::{self, Method, Theorem, TheoryParams};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = ParamMatrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (2usize..7, 2usize..7).prop_flat_map(|(m, n)| (Just(m), Just(n), 1..=m.min(n)))
}

fn dist() -> impl Strategy<Value = Distribution> {
    prop_oneof![Just(Distribution::Gaussian), Just(Distribution::CoordinateSubset)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projector_is_symmetric_idempotent_with_trace_r(d in 1usize..9, r in 1usize..9, seed: u64, dist in dist()) {
        let r = r.min(d);
        let spec = SketchSpec { distribution: dist, rank: r };
        let f = sample_factor(&spec, d, &mut stream(seed, Stream::Sketch));
        let h = projector(&spec, &f);
        prop_assert!((&h - h.transpose()).amax() <= 1e-12);
        prop_assert!((&h * &h - &h).amax() <= 1e-10);
        prop_assert!((h.trace() - r as f64).abs() <= 1e-9);
    }

    #[test]
    fn factored_and_projected_updates_agree(
        (m, n, r) in dims(),
        seed: u64,
        p in 0.0f64..=1.0,
        alpha in 0.1f64..4.0,
        eta in 0.01f64..2.0,
        dist in dist(),
    ) {
        let mut rng = stream(seed, Stream::Data);
        let w = ParamMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let g = ParamMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let spec = SketchSpec { distribution: dist, rank: r };
        let sk = BernoulliSketcher { p, left: spec, right: spec };
        let s = sk.draw((m, n), &mut stream(seed, Stream::Bernoulli), &mut stream(seed, Stream::Sketch));
        let fac = factored_update(&w, &g, &s, alpha, eta);
        let proj = projected_step(&w, &g, &s, fac.gamma);
        let rel = (&fac.w_next - &proj).norm() / proj.norm().max(1e-300);
        prop_assert!(rel <= 1e-10, "relative discrepancy {rel}");
    }

    #[test]
    fn top_k_is_contractive(x in matrix(3, 4), k in 1usize..=12) {
        let c = Compressor::TopK { k };
        let y = c.compress(&x, &mut stream(0, Stream::Compressor));
        let beta = c.beta(12).unwrap();
        prop_assert!(frob_sq(&(&y - &x)) <= (1.0 - beta) * frob_sq(&x) * (1.0 + 1e-12) + 1e-300);
        prop_assert!(y.iter().filter(|v| **v != 0.0).count() <= k);
    }

    #[test]
    fn rand_k_keeps_k_scaled_entries(x in matrix(2, 5), k in 1usize..=10, seed: u64) {
        prop_assume!(x.iter().all(|v| *v != 0.0));
        let c = Compressor::RandK { k };
        let y = c.compress(&x, &mut stream(seed, Stream::Compressor));
        let kept: Vec<_> = x.iter().zip(y.iter()).filter(|(_, b)| **b != 0.0).collect();
        prop_assert_eq!(kept.len(), k);
        for (a, b) in kept {
            prop_assert!((b - a * 10.0 / k as f64).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn client_average_matches_global(seed: u64, clients in 1usize..6, w in matrix(2, 3)) {
        let data = Dataset::generate(&LinRegConfig {
            samples: 30,
            features: 6,
            noise: 1.0,
            effective_rank: Some(3),
            tail_strength: 0.5,
            bias: 0.0,
            scale_mean: 0.0,
            scale_std: 1.0,
            seed,
        }).unwrap();
        let p = Problem::linreg(&data, (2, 3), RegWeight::Spectral).unwrap();
        let parts = p.partition(clients).unwrap();
        let favg = parts.iter().map(|c| c.eval(&w)).sum::<f64>() / clients as f64;
        let gavg = parts.iter().map(|c| c.grad(&w)).fold(ParamMatrix::zeros(2, 3), |a, g| a + g) / clients as f64;
        let f = p.eval(&w);
        prop_assert!((favg - f).abs() <= 1e-10 * f.abs().max(1.0));
        prop_assert!((gavg - p.grad(&w)).amax() <= 1e-10 * p.grad(&w).amax().max(1.0));
    }

    #[test]
    fn linreg_gradient_matches_finite_differences(seed: u64, w in matrix(2, 2)) {
        let data = Dataset::generate(&LinRegConfig {
            samples: 12,
            features: 4,
            noise: 0.5,
            effective_rank: None,
            tail_strength: 0.5,
            bias: 1.0,
            scale_mean: 0.0,
            scale_std: 1.0,
            seed,
        }).unwrap();
        let p = Problem::linreg(&data, (2, 2), RegWeight::Value(0.7)).unwrap();
        let g = p.grad(&w);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..2 {
                let mut a = w.clone();
                let mut b = w.clone();
                a[(i, j)] += h;
                b[(i, j)] -= h;
                let fd = (p.eval(&a) - p.eval(&b)) / (2.0 * h);
                prop_assert!((fd - g[(i, j)]).abs() <= 1e-5 * (1.0 + g[(i, j)].abs()), "{fd} vs {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn quadratic_is_l_smooth_and_pl(seed: u64, w in matrix(2, 3)) {
        let p = Problem::quadratic_random(&QuadraticConfig { shape: (2, 3), rows: None, mu: 0.2, l: 3.0, seed }).unwrap();
        let fs = p.f_star().unwrap();
        let g = p.grad(&w);
        // 1/2 ||grad||^2 >= mu (f - f*)
        prop_assert!(0.5 * frob_sq(&g) >= 0.2 * (p.eval(&w) - fs) * (1.0 - 1e-9) - 1e-12);
        let v = ParamMatrix::zeros(2, 3);
        prop_assert!((&g - p.grad(&v)).norm() <= 3.0 * (&w - &v).norm() * (1.0 + 1e-9));
    }

    #[test]
    fn l1_subgradient_is_bounded_by_l0(seed: u64, w in matrix(2, 2)) {
        let p = Problem::l1_random(&L1Config { shape: (2, 2), rows: 9, seed }).unwrap();
        prop_assert!(p.grad(&w).norm() <= p.lipschitz.unwrap() * (1.0 + 1e-12));
        prop_assert!(p.eval(&w) >= 0.0);
    }

    #[test]
    fn float_format_round_trips(x: f64) {
        prop_assume!(x.is_finite());
        prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn quantiles_are_ordered_and_bounded(v in prop::collection::vec(-1e6f64..1e6, 1..40)) {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (a, b, c) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        prop_assert!(lo <= a && a <= b && b <= c && c <= hi);
    }

    #[test]
    fn gd_stepsize_shrinks_as_smoothness_grows(l in 0.01f64..100.0, k in 1.01f64..10.0) {
        let th = Theorem { method: Method::Gd, pl: false };
        let mut p = TheoryParams::default();
        p.set("L", l).unwrap();
        let a = theory::stepsize(th, &p).unwrap();
        p.set("L", l * k).unwrap();
        prop_assert!(theory::stepsize(th, &p).unwrap() < a);
    }
}

#[test]
fn dataset_bytes_round_trip() {
    let data = Dataset {
        features: DMatrix::from_row_slice(2, 3, &[1.0, -0.0, 2.5, f64::MIN_POSITIVE, 1e300, -7.0]),
        target: DVector::from_column_slice(&[0.5, -0.25]),
        seed: 99,
    };
    let mut buf = Vec::new();
    data.write_to(&mut buf).unwrap();
    assert_eq!(buf.len(), 32 + 8 * 8);
    assert_eq!(&buf[..8], b"BLORADS1");
    let back = Dataset::read_from(buf.as_slice()).unwrap();
    assert_eq!(back, data);
}
