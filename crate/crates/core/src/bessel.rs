//! Bessel functions `φ̃_λ^p` (the flat limit of `R_λ^p`), the Laguerre
//! ensemble `ρ_{d,p}` and the Gaussian transform `∫ φ̃_λ dρ_{d,p} = e^{−|λ|²/2}`.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::polynomials::{BallSampler, HaarSampler, McEstimate, ModelParams, SmallMat};
use crate::polynomials::{orthonormalize_real, ComplexMean};
use crate::quadrature::make_grid;
use crate::weights::ChamberPoint;

/// Largest `|z|` accepted by the rank-one series.
pub const SERIES_RANGE: f64 = 50.0;
const SERIES_TERMS: usize = 80;

/// `bessel_eval_rank_one`: `j_α(z) = Σ_m (−z²/4)^m / (m! (α+1)_m)` at `z = λx`
/// with `α = dp/2 − 1`.
///
/// The alternating terms reach `~e^{|z|}` before they decay, so the sum runs
/// in double-double arithmetic.
pub fn bessel_eval_rank_one(lambda: f64, x: f64, params: &ModelParams) -> Result<f64> {
    if params.q != 1 {
        return Err(Error::RankNotOne(params.q));
    }
    let z = lambda * x;
    if z == 0.0 {
        return Ok(1.0);
    }
    if !z.is_finite() || z.abs() > SERIES_RANGE {
        return Err(Error::SeriesRange { z });
    }
    let a1 = params.d as f64 * params.p / 2.0;
    let h = -TwoFloat::new_mul(z, z) / 4.0;
    let mut term = TwoFloat::from(1.0);
    let mut sum = term;
    for m in 0..SERIES_TERMS {
        term = term * h / ((m as f64 + 1.0) * (a1 + m as f64));
        sum += term;
    }
    Ok(sum.hi() + sum.lo())
}

/// Phase `Re tr(w x̲ u λ̲) = Σ_{ij} λ_i x_j Re(w_{ij} u_{ji})`.
pub(crate) struct BesselIntegrand {
    q: usize,
    coef: [[f64; 4]; 4],
}

impl BesselIntegrand {
    pub fn new(lambda: &[f64], x: &[f64]) -> Self {
        let mut coef = [[0.0; 4]; 4];
        for (i, &l) in lambda.iter().enumerate() {
            for (j, &xj) in x.iter().enumerate() {
                coef[i][j] = l * xj;
            }
        }
        BesselIntegrand { q: x.len(), coef }
    }

    #[inline]
    fn phase(&self, u: &SmallMat, w: &SmallMat) -> f64 {
        let mut phase = 0.0;
        for i in 0..self.q {
            for j in 0..self.q {
                let wu = w.a[i][j] * u.a[j][i];
                phase += self.coef[i][j] * wu.re;
            }
        }
        phase
    }

    #[inline]
    pub fn eval(&self, u: &SmallMat, w: &SmallMat) -> C {
        let (s, c) = self.phase(u, w).sin_cos();
        C::new(c, s)
    }

    #[inline]
    pub fn eval_re(&self, u: &SmallMat, w: &SmallMat) -> f64 {
        self.phase(u, w).cos()
    }
}

/// Real `(u, w)` pairs for `d = 1` and integer `p`: `u` Haar on `O(q)`, `w`
/// the top block of a Haar isometry `ℝ^q → ℝ^p`. Yields the same law as
/// `HaarSampler` with a truncation `BallSampler`, without complex arithmetic.
struct RealPairs {
    q: usize,
    p: usize,
}

impl RealPairs {
    fn new(params: &ModelParams) -> Option<Self> {
        let p = params.p as usize;
        (params.d == 1 && params.p_is_integer() && p * params.q <= 64).then_some(RealPairs { q: params.q, p })
    }

    /// `cos Re tr(w x̲ u λ̲)` for one fresh pair.
    #[inline]
    fn eval_re<R: Rng + ?Sized>(&self, coef: &[[f64; 4]; 4], rng: &mut R) -> f64 {
        let (q, p) = (self.q, self.p);
        let mut u = [0.0; 16];
        match q {
            1 => u[0] = if rng.random::<bool>() { 1.0 } else { -1.0 },
            2 => {
                // a normalized Gaussian pair is uniform on the circle
                let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                let r = 1.0 / a.hypot(b);
                let (c, s) = (a * r, b * r);
                let flip = if rng.random::<bool>() { -1.0 } else { 1.0 };
                // column-major [[c, -s f], [s, c f]]
                u[..4].copy_from_slice(&[c, s, -s * flip, c * flip]);
            }
            _ => {
                for v in &mut u[..q * q] {
                    *v = rng.sample(StandardNormal);
                }
                orthonormalize_real(&mut u[..q * q], q, q);
            }
        }
        let mut w = [0.0; 64];
        let w = &mut w[..p * q];
        for v in w.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        orthonormalize_real(w, p, q);
        let mut phase = 0.0;
        for (i, row) in coef.iter().enumerate().take(q) {
            for (j, &c) in row.iter().enumerate().take(q) {
                // w_{ij} u_{ji}, both column-major
                phase += c * w[j * p + i] * u[i * q + j];
            }
        }
        phase.cos()
    }
}

fn require_rank(params: &ModelParams, p: &ChamberPoint) -> Result<()> {
    if p.rank() != params.q {
        return Err(Error::RankMismatch {
            expected: params.q,
            found: p.rank(),
        });
    }
    Ok(())
}

/// `bessel_eval_mc`: Monte Carlo estimate of
/// `φ̃_λ^p(x) = ∫∫ e^{i Re tr(w x̲ u λ̲)} dm_p(w) du` for `d ∈ {1, 2}`.
pub fn bessel_eval_mc<R: Rng + ?Sized>(
    lambda: &ChamberPoint,
    x: &ChamberPoint,
    params: &ModelParams,
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    require_rank(params, lambda)?;
    require_rank(params, x)?;
    let haar = HaarSampler::new(params.q, params.d)?;
    let mut ball = BallSampler::new(params, rng)?;
    if lambda.coords.iter().all(|&v| v == 0.0) || x.coords.iter().all(|&v| v == 0.0) {
        return Ok(McEstimate::exact(1.0, n_samples));
    }
    let integrand = BesselIntegrand::new(&lambda.coords, &x.coords);
    let mut acc = ComplexMean::default();
    for _ in 0..n_samples {
        let u = haar.sample(rng);
        let w = ball.sample_small(rng);
        acc.push(integrand.eval(&u, &w));
    }
    Ok(acc.finish())
}

/// Truncation radius and nodes per axis of the chamber quadrature.
const RADIUS: f64 = 8.0;

fn chamber_nodes(q: usize) -> usize {
    match q {
        1 | 2 => 400,
        3 => 96,
        _ => 32,
    }
}

/// `Σ f(x) w(x)` over the region `r ≥ x₁ ≥ ⋯ ≥ x_q ≥ 0` through the collapsed
/// map `x₁ = r s`, `x_k = x_{k−1} t_k` on a Gauss–Legendre product rule.
fn chamber_integral<F: FnMut(&[f64]) -> f64>(q: usize, r: f64, nodes: usize, mut f: F) -> f64 {
    let grid = make_grid(1, nodes).expect("fixed node count");
    let (t, w) = grid.unit_rule();
    let n = t.len();
    let mut idx = vec![0usize; q];
    let mut x = vec![0.0; q];
    let mut total = 0.0;
    loop {
        let mut weight = r * w[idx[0]];
        x[0] = r * t[idx[0]];
        for k in 1..q {
            weight *= x[k - 1] * w[idx[k]];
            x[k] = x[k - 1] * t[idx[k]];
        }
        total += weight * f(&x);
        let mut k = q;
        loop {
            if k == 0 {
                return total;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// The law `ρ_{d,p}` of the decreasingly ordered singular values of a
/// standard Gaussian `p × q` matrix over `F`, with density proportional to
/// `Π_j x_j^{d(p−q+1)−1} Π_{i<j} (x_i² − x_j²)^d e^{−|x|²/2}` on the chamber.
#[derive(Debug)]
pub struct LaguerreEnsemble {
    params: ModelParams,
    norm: OnceLock<f64>,
}

impl Clone for LaguerreEnsemble {
    fn clone(&self) -> Self {
        let norm = OnceLock::new();
        if let Some(&c) = self.norm.get() {
            let _ = norm.set(c);
        }
        LaguerreEnsemble {
            params: self.params,
            norm,
        }
    }
}

impl LaguerreEnsemble {
    pub fn new(params: &ModelParams) -> Result<Self> {
        if params.q > 4 {
            return Err(Error::InvalidParams(format!("ensemble rank {} exceeds 4", params.q)));
        }
        Ok(LaguerreEnsemble {
            params: *params,
            norm: OnceLock::new(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Exponent `d(p−q+1) − 1` of each coordinate.
    pub fn coord_power(&self) -> f64 {
        let p = &self.params;
        p.d as f64 * (p.p - p.q as f64 + 1.0) - 1.0
    }

    /// Truncation radius of the normalization integral: 8, widened when the
    /// Frobenius norm `√(dpq)` puts visible mass beyond it.
    pub fn radius(&self) -> f64 {
        let p = &self.params;
        RADIUS.max((p.d as f64 * p.p * p.q as f64).sqrt() + 6.0)
    }

    fn unnormalized(&self, x: &[f64]) -> f64 {
        let a = self.coord_power();
        let d = self.params.d as i32;
        let mut v = (-0.5 * x.iter().map(|t| t * t).sum::<f64>()).exp();
        for (i, &xi) in x.iter().enumerate() {
            v *= xi.powf(a);
            for &xj in &x[i + 1..] {
                v *= (xi * xi - xj * xj).powi(d);
            }
        }
        v
    }

    /// `c_{d,p}`: the chamber integral of the unnormalized density on `[0, R]^q`.
    pub fn normalization(&self) -> f64 {
        *self.norm.get_or_init(|| {
            let q = self.params.q;
            chamber_integral(q, self.radius(), chamber_nodes(q), |x| self.unnormalized(x))
        })
    }

    /// Expectation of `f` under the density, by the normalization quadrature.
    pub fn expectation<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        let q = self.params.q;
        let s = chamber_integral(q, self.radius(), chamber_nodes(q), |x| f(x) * self.unnormalized(x));
        s / self.normalization()
    }

    /// `P(x₁ ≤ t)`: the regularized incomplete gamma function for `q = 1`,
    /// quadrature of the density over `[0, t]^q ∩ C` otherwise.
    pub fn lambda1_cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let q = self.params.q;
        if q == 1 {
            return statrs::function::gamma::gamma_lr((self.coord_power() + 1.0) / 2.0, t * t / 2.0);
        }
        let nodes = chamber_nodes(q).min(160);
        let s = chamber_integral(q, t.min(self.radius()), nodes, |x| self.unnormalized(x));
        (s / self.normalization()).min(1.0)
    }

    /// Draws the ordered singular values (integer `p` only).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ChamberPoint> {
        let ModelParams { d, p, q } = self.params;
        if !self.params.p_is_integer() {
            return Err(Error::NonIntegerP(p));
        }
        let p = p as usize;
        let mut sv: Vec<f64> = match d {
            1 => DMatrix::<f64>::from_fn(p, q, |_, _| rng.sample(StandardNormal))
                .singular_values()
                .iter()
                .copied()
                .collect(),
            2 => DMatrix::<C>::from_fn(p, q, |_, _| C::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .singular_values()
                .iter()
                .copied()
                .collect(),
            _ => quaternion_embedding(p, q, rng).singular_values().iter().copied().collect(),
        };
        sv.sort_by(|a, b| b.total_cmp(a));
        if d == 4 {
            // the complex embedding doubles every singular value
            sv = sv.into_iter().step_by(2).collect();
        }
        Ok(ChamberPoint { coords: sv })
    }
}

/// The `2p × 2q` complex matrix of a standard Gaussian quaternionic `p × q`
/// matrix, each entry `a + b j` becoming `[[a, b], [−b̄, ā]]`.
fn quaternion_embedding<R: Rng + ?Sized>(p: usize, q: usize, rng: &mut R) -> DMatrix<C> {
    let mut m = DMatrix::<C>::zeros(2 * p, 2 * q);
    for i in 0..p {
        for j in 0..q {
            let a = C::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let b = C::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            m[(2 * i, 2 * j)] = a;
            m[(2 * i, 2 * j + 1)] = b;
            m[(2 * i + 1, 2 * j)] = -b.conj();
            m[(2 * i + 1, 2 * j + 1)] = a.conj();
        }
    }
    m
}

/// `laguerre_density`: the normalized density of `ρ_{d,p}` at `x ∈ C`.
pub fn laguerre_density(x: &ChamberPoint, ens: &LaguerreEnsemble) -> Result<f64> {
    require_rank(&ens.params, x)?;
    ChamberPoint::chamber(x.coords.clone())?;
    Ok(ens.unnormalized(&x.coords) / ens.normalization())
}

/// `laguerre_sample`: one draw from `ρ_{d,p}`.
pub fn laguerre_sample<R: Rng + ?Sized>(ens: &LaguerreEnsemble, rng: &mut R) -> Result<ChamberPoint> {
    ens.sample(rng)
}

/// Outcome of the Gaussian-transform check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianTransformReport {
    pub lambda: Vec<f64>,
    pub target: f64,
    pub estimate: f64,
    /// Standard error of the outer mean of inner Bessel means, which
    /// carries both sampling stages.
    pub stderr: f64,
    pub residual: f64,
    pub n_samples: usize,
    pub n_inner: usize,
    pub seed: u64,
}

impl GaussianTransformReport {
    pub fn within(&self, sigmas: f64) -> bool {
        self.residual <= sigmas * self.stderr
    }
}

/// Random stream for item `index` of a seeded experiment.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `gaussian_transform_residual`: averages `n_inner`-sample Monte Carlo values
/// of `φ̃_λ(x)` over `n_samples` draws `x ~ ρ_{d,p}` and compares with
/// `e^{−(λ₁² + ⋯ + λ_q²)/2}`. Draw `i` uses its own stream of `seed`.
pub fn gaussian_transform_residual(
    lambda: &ChamberPoint,
    params: &ModelParams,
    n_samples: usize,
    n_inner: usize,
    seed: u64,
) -> Result<GaussianTransformReport> {
    require_rank(params, lambda)?;
    if n_samples < 2 || n_inner == 0 {
        return Err(Error::InvalidParams("need at least two outer and one inner sample".into()));
    }
    let ens = LaguerreEnsemble::new(params)?;
    let haar = HaarSampler::new(params.q, params.d)?;
    if !params.p_is_integer() {
        return Err(Error::NonIntegerP(params.p));
    }
    let target = (-0.5 * lambda.coords.iter().map(|l| l * l).sum::<f64>()).exp();
    if lambda.coords.iter().all(|&l| l == 0.0) {
        // the integrand is identically one
        return Ok(GaussianTransformReport {
            lambda: lambda.coords.clone(),
            target,
            estimate: 1.0,
            stderr: 0.0,
            residual: 0.0,
            n_samples,
            n_inner,
            seed,
        });
    }
    let real = RealPairs::new(params);
    let means: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = stream_rng(seed, i as u64);
            let x = ens.sample(&mut rng)?;
            let integrand = BesselIntegrand::new(&lambda.coords, &x.coords);
            let mut s = 0.0;
            if let Some(pairs) = &real {
                for _ in 0..n_inner {
                    s += pairs.eval_re(&integrand.coef, &mut rng);
                }
            } else {
                let mut ball = BallSampler::new(params, &mut rng)?;
                for _ in 0..n_inner {
                    let u = haar.sample(&mut rng);
                    let w = ball.sample_small(&mut rng);
                    s += integrand.eval_re(&u, &w);
                }
            }
            Ok(s / n_inner as f64)
        })
        .collect::<Result<_>>()?;
    let n = n_samples as f64;
    let estimate = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - estimate).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(GaussianTransformReport {
        lambda: lambda.coords.clone(),
        target,
        estimate,
        stderr: (var / n).sqrt(),
        residual: (estimate - target).abs(),
        n_samples,
        n_inner,
        seed,
    })
}
