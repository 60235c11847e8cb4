use std::collections::BTreeMap;

use grasswalk_core::hypergroup::{Hypergroup, WeightMeasure};
use grasswalk_core::polynomials::ModelParams;
use grasswalk_core::walk::{martingale_check, simulate, WalkConfig};
use grasswalk_core::weights::Weight;
use proptest::prelude::*;

fn w(parts: &[i64]) -> Weight {
    Weight::new(parts).unwrap()
}

/// Law of a ±1 walk on ℤ₊ started at 0 that moves from 0 to 1 surely.
fn reflected_walk_law(n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n + 2];
    p[0] = 1.0;
    for _ in 0..n {
        let mut next = vec![0.0; n + 2];
        for k in 0..=n {
            if p[k] == 0.0 {
                continue;
            }
            if k == 0 {
                next[1] += p[k];
            } else {
                next[k - 1] += 0.5 * p[k];
                next[k + 1] += 0.5 * p[k];
            }
        }
        p = next;
    }
    p
}

fn convolution_power(hg: &Hypergroup, nu: &WeightMeasure, n: usize) -> WeightMeasure {
    let q = hg.params().q;
    let mut acc = WeightMeasure::dirac(Weight::zero(q));
    for _ in 0..n {
        acc = hg.convolve(&acc, nu).unwrap();
    }
    acc
}

#[test]
fn chebyshev_convolution_powers_are_the_reflected_walk() {
    let params = ModelParams::new(1, 1.0, 1).unwrap();
    let hg = Hypergroup::build(&params, 24).unwrap();
    let nu = WeightMeasure::dirac(w(&[2]));
    for n in 0..=12 {
        let law = convolution_power(&hg, &nu, n);
        let exact = reflected_walk_law(n);
        for (k, &pk) in exact.iter().enumerate() {
            let got = law.mass(&w(&[2 * k as i64]));
            assert!((got - pk).abs() < 1e-12, "n={n} k={k}: {got} vs {pk}");
        }
    }
}

#[test]
fn empirical_laws_match_convolution_powers() {
    let cases = [
        (ModelParams::new(1, 1.0, 1).unwrap(), "2:1"),
        (ModelParams::new(2, 3.0, 1).unwrap(), "2:0.4;4:0.6"),
        (ModelParams::new(4, 2.5, 1).unwrap(), "0:0.2;2:0.8"),
        (ModelParams::new(1, 2.0, 2).unwrap(), "2,0:1"),
        (ModelParams::new(2, 3.0, 2).unwrap(), "2,0:0.5;2,2:0.5"),
    ];
    let trajectories = 20_000;
    for (params, nu) in cases {
        let nu = WeightMeasure::parse(nu, params.q).unwrap();
        let cap = 3 * nu.max_first();
        let hg = Hypergroup::build(&params, cap).unwrap();
        for n in 1..=3 {
            let cfg = WalkConfig::new(params, nu.clone(), n, trajectories, 17 + n as u64)
                .unwrap()
                .with_degree_cap(cap);
            let sample = simulate(&cfg, &hg).unwrap();
            let mut counts: BTreeMap<Weight, usize> = BTreeMap::new();
            for e in &sample.endpoints {
                *counts.entry(e.clone()).or_default() += 1;
            }
            let exact = convolution_power(&hg, &nu, n);
            for tau in counts.keys() {
                assert!(exact.mass(tau) > 0.0, "{params:?} n={n}: visited {tau} outside the support");
            }
            for (tau, p) in exact.iter() {
                let freq = counts.get(tau).copied().unwrap_or(0) as f64 / trajectories as f64;
                let sd = (p * (1.0 - p) / trajectories as f64).sqrt();
                assert!(
                    (freq - p).abs() <= 3.0 * sd + 1e-12,
                    "{params:?} n={n} τ={tau}: {freq} vs {p} (sd {sd})"
                );
            }
        }
    }
}

#[test]
fn mean_moment_grows_linearly() {
    for (d, p, q, nu) in [
        (1, 1.0, 1, "2:1"),
        (2, 2.5, 1, "2:0.5;4:0.5"),
        (4, 3.0, 1, "2:1"),
        (1, 2.0, 2, "2,0:1"),
        (2, 4.5, 2, "2,0:0.3;2,2:0.7"),
    ] {
        let params = ModelParams::new(d, p, q).unwrap();
        let nu = WeightMeasure::parse(nu, q).unwrap();
        let cfg = WalkConfig::new(params, nu, 20, 4000, 3).unwrap();
        let hg = Hypergroup::build(&params, cfg.degree_cap).unwrap();
        let sample = simulate(&cfg, &hg).unwrap();
        let sigma2 = hg.modified_variance(&cfg.step_law).unwrap();
        let report = martingale_check(&sample, sigma2, &[1, 2, 5, 10, 20]);
        assert!(report.all_within, "{params:?}: {report:?}");
        assert!((sample.m_trace[1] - sigma2).abs() < 4.0 * report.rows[0].se + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn walks_are_reproducible_and_respect_the_cap(seed in any::<u64>(), n in 1usize..12, heavy in 0.0f64..1.0) {
        let params = ModelParams::new(2, 3.0, 1).unwrap();
        let nu = WeightMeasure::from_pairs([(w(&[2]), 1.0 - heavy), (w(&[4]), heavy)]).unwrap();
        let cfg = WalkConfig::new(params, nu.clone(), n, 40, seed).unwrap();
        let hg = Hypergroup::build(&params, cfg.degree_cap).unwrap();
        let a = simulate(&cfg, &hg).unwrap();
        let b = simulate(&cfg, &hg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.endpoints.len(), 40);
        prop_assert!(a.max_first <= cfg.degree_cap);
        let one = WalkConfig::new(params, nu.clone(), 1, 40, seed).unwrap();
        for e in simulate(&one, &hg).unwrap().endpoints {
            prop_assert!(nu.mass(&e) > 0.0);
        }
    }
}
