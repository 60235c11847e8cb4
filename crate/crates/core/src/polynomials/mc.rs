//! Monte Carlo evaluation of `R_λ^p` through
//! `R_λ^p(x) = ∫∫ Δ_{λ/2}(g_{ix}(u, w)) dm_p(w) du` with
//! `g_{ix}(u,w) = u⁻¹ (cos x̲ + w* i sin x̲)(cos x̲ + i sin x̲ w) u`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{BallSampler, HaarSampler, SmallMat};
use super::{BallMatrix, ModelParams};
use crate::error::Result;
use crate::weights::{ChamberPoint, Weight};

/// Monte Carlo mean of a complex integrand: real part as the estimate,
/// imaginary part as a diagnostic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub imag: f64,
    pub imag_stderr: f64,
    pub n_samples: usize,
}

impl McEstimate {
    pub fn exact(value: f64, n_samples: usize) -> Self {
        McEstimate {
            estimate: value,
            stderr: 0.0,
            imag: 0.0,
            imag_stderr: 0.0,
            n_samples,
        }
    }
}

/// Running sums for a complex sample mean.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct ComplexMean {
    n: usize,
    re: f64,
    re2: f64,
    im: f64,
    im2: f64,
}

impl ComplexMean {
    #[inline]
    pub fn push(&mut self, z: Complex64) {
        self.n += 1;
        self.re += z.re;
        self.re2 += z.re * z.re;
        self.im += z.im;
        self.im2 += z.im * z.im;
    }

    pub fn finish(&self) -> McEstimate {
        let n = self.n as f64;
        let se = |s: f64, s2: f64| {
            if self.n < 2 {
                return 0.0;
            }
            let mean = s / n;
            ((s2 / n - mean * mean).max(0.0) * n / (n - 1.0) / n).sqrt()
        };
        McEstimate {
            estimate: self.re / n,
            stderr: se(self.re, self.re2),
            imag: self.im / n,
            imag_stderr: se(self.im, self.im2),
            n_samples: self.n,
        }
    }
}

/// `sample_mp`: one draw from `m_p` on the matrix ball.
pub fn sample_mp<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> Result<BallMatrix> {
    Ok(BallSampler::new(params, rng)?.sample(rng))
}

/// Integrand `Δ_{λ/2}(g_{ix}(u,w))` for fixed `x`.
pub(crate) struct JacobiIntegrand {
    exps: Vec<u32>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl JacobiIntegrand {
    pub fn new(lambda: &Weight, x: &[f64]) -> Self {
        let half = lambda.halved();
        let exps = (0..half.len())
            .map(|r| half[r] - half.get(r + 1).copied().unwrap_or(0))
            .collect();
        JacobiIntegrand {
            exps,
            cos: x.iter().map(|v| v.cos()).collect(),
            sin: x.iter().map(|v| v.sin()).collect(),
        }
    }

    pub fn eval(&self, u: &SmallMat, w: &SmallMat) -> Complex64 {
        let q = u.n;
        let i = Complex64::i();
        let mut right = SmallMat::zero(q);
        let mut left = SmallMat::zero(q);
        for r in 0..q {
            for c in 0..q {
                // (cos x̲ + i sin x̲ w)_{rc} and (cos x̲ + w* i sin x̲)_{rc}
                right.a[r][c] = i * self.sin[r] * w.a[r][c];
                left.a[r][c] = i * w.a[c][r].conj() * self.sin[c];
            }
            right.a[r][r] += self.cos[r];
            left.a[r][r] += self.cos[r];
        }
        let g = u.adjoint().mul(&left).mul(&right).mul(u);
        g.minor_power(&self.exps)
    }
}

/// `jacobi_eval_mc`: Monte Carlo estimate of `R_λ^p(x)` for `d ∈ {1, 2}`.
pub fn jacobi_eval_mc<R: Rng + ?Sized>(
    lambda: &Weight,
    params: &ModelParams,
    x: &ChamberPoint,
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    params.require_rank(lambda)?;
    let haar = HaarSampler::new(params.q, params.d)?;
    let mut ball = BallSampler::new(params, rng)?;
    if lambda.is_zero() || x.coords.iter().all(|&v| v == 0.0) {
        return Ok(McEstimate::exact(1.0, n_samples));
    }
    let integrand = JacobiIntegrand::new(lambda, &x.coords);
    let mut acc = ComplexMean::default();
    for _ in 0..n_samples {
        let u = haar.sample(rng);
        let w = ball.sample_small(rng);
        acc.push(integrand.eval(&u, &w));
    }
    Ok(acc.finish())
}
