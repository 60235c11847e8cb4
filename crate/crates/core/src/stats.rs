//! Sample summaries and Kolmogorov–Smirnov distances.

use serde::{Deserialize, Serialize};

/// Mean, unbiased variance and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    pub se: f64,
}

impl Summary {
    pub fn of<I: IntoIterator<Item = f64>>(values: I) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len();
        if n == 0 {
            return Summary {
                n,
                mean: f64::NAN,
                var: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Summary {
            n,
            mean,
            var,
            se: (var / n as f64).sqrt(),
        }
    }
}

/// `sup_t |F_n(t) − F(t)|` for the empirical distribution of `samples`.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max((j as f64 / n - f).abs());
        i = j;
    }
    d
}

/// Kolmogorov–Smirnov distance for samples on a lattice, with a continuity
/// correction: the empirical CDF after each atom is compared with the
/// reference at the midpoint to the next atom (or half the previous gap
/// beyond the last one). Without it, every atom contributes about half its
/// own mass, a floor that does not shrink with the sample size.
pub fn ks_distance_lattice<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut atoms: Vec<(f64, usize)> = Vec::new();
    for (k, &x) in xs.iter().enumerate() {
        match atoms.last_mut() {
            Some((v, end)) if *v == x => *end = k + 1,
            _ => atoms.push((x, k + 1)),
        }
    }
    let mut d: f64 = 0.0;
    for (a, &(x, end)) in atoms.iter().enumerate() {
        let mid = match atoms.get(a + 1) {
            Some(&(next, _)) => 0.5 * (x + next),
            None if a > 0 => x + 0.5 * (x - atoms[a - 1].0),
            None => continue,
        };
        d = d.max((end as f64 / n - cdf(mid)).abs());
    }
    d
}

/// Empirical `p`-quantile (nearest rank, `p ∈ [0, 1]`).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let k = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ks_of_uniform_samples_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.random()).collect();
        let d = ks_distance(&xs, |t| t.clamp(0.0, 1.0));
        assert!(d < 1.63 / (xs.len() as f64).sqrt(), "{d}");
        assert_eq!(ks_distance(&[0.5], |t| t), 0.5);
    }

    #[test]
    fn lattice_correction_removes_the_atom_floor() {
        // a binomial-type lattice law against its normal limit
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100;
        let xs: Vec<f64> = (0..20_000)
            .map(|_| {
                let heads = (0..n).filter(|_| rng.random::<bool>()).count() as f64;
                (2.0 * heads - n as f64) / (n as f64).sqrt()
            })
            .collect();
        let phi = |t: f64| 0.5 * (1.0 + statrs::function::erf::erf(t / 2f64.sqrt()));
        let raw = ks_distance(&xs, phi);
        let corrected = ks_distance_lattice(&xs, phi);
        assert!(raw > 0.03, "{raw}");
        assert!(corrected < 0.015, "{corrected}");
    }

    #[test]
    fn summaries_and_quantiles() {
        let s = Summary::of([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.var - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert!((slope(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 2.0).abs() < 1e-15);
    }
}
