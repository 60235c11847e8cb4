//! Small real/complex matrices for the matrix-ball integral representations:
//! Haar samplers on `O(q)`, `U(q)`, samplers for `m_p` on the ball
//! `B_q = {w : w*w < I}` and the power functions `Δ_κ`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ModelParams;
use crate::error::{Error, Result};

type C = Complex64;

/// Largest rank handled by the fixed-size Monte Carlo kernels.
pub(crate) const MAXQ: usize = 4;

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

/// A square matrix of order at most `MAXQ`, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct SmallMat {
    pub n: usize,
    pub a: [[C; MAXQ]; MAXQ],
}

impl SmallMat {
    pub fn zero(n: usize) -> Self {
        debug_assert!(n <= MAXQ);
        SmallMat {
            n,
            a: [[ZERO; MAXQ]; MAXQ],
        }
    }

    #[cfg(test)]
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zero(n);
        for i in 0..n {
            m.a[i][i] = ONE;
        }
        m
    }

    pub fn mul(&self, o: &SmallMat) -> SmallMat {
        let n = self.n;
        let mut m = Self::zero(n);
        for i in 0..n {
            for k in 0..n {
                let x = self.a[i][k];
                if x == ZERO {
                    continue;
                }
                for j in 0..n {
                    m.a[i][j] += x * o.a[k][j];
                }
            }
        }
        m
    }

    pub fn adjoint(&self) -> SmallMat {
        let mut m = Self::zero(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i][j] = self.a[j][i].conj();
            }
        }
        m
    }

    /// Determinant of the leading `r × r` block, by elimination with partial pivoting.
    pub fn leading_minor(&self, r: usize) -> C {
        let mut m = self.a;
        let mut det = ONE;
        for col in 0..r {
            let piv = (col..r)
                .max_by(|&i, &j| m[i][col].norm_sqr().total_cmp(&m[j][col].norm_sqr()))
                .expect("non-empty range");
            if m[piv][col] == ZERO {
                return ZERO;
            }
            if piv != col {
                m.swap(piv, col);
                det = -det;
            }
            let p = m[col][col];
            det *= p;
            for i in col + 1..r {
                let f = m[i][col] / p;
                if f == ZERO {
                    continue;
                }
                for j in col + 1..r {
                    let t = m[col][j];
                    m[i][j] -= f * t;
                }
            }
        }
        det
    }

    /// `Π_r Δ_r^{e_r}` for non-negative exponents `e_r`.
    pub fn minor_power(&self, exps: &[u32]) -> C {
        let mut v = ONE;
        for (r, &e) in exps.iter().enumerate() {
            if e > 0 {
                v *= self.leading_minor(r + 1).powu(e);
            }
        }
        v
    }

    /// `det(I − w*w)` if `I − w*w` is positive definite.
    pub fn ball_defect(&self) -> Option<f64> {
        let n = self.n;
        let ww = self.adjoint().mul(self);
        let mut h = [[ZERO; MAXQ]; MAXQ];
        for i in 0..n {
            for j in 0..n {
                h[i][j] = if i == j { ONE } else { ZERO } - ww.a[i][j];
            }
        }
        // Cholesky of a Hermitian matrix; all pivots must be positive
        let mut det = 1.0;
        for j in 0..n {
            let mut d = h[j][j].re;
            for k in 0..j {
                d -= h[j][k].norm_sqr();
            }
            if !(d > 0.0) {
                return None;
            }
            let l = d.sqrt();
            det *= d;
            h[j][j] = C::new(l, 0.0);
            for i in j + 1..n {
                let mut s = h[i][j];
                for k in 0..j {
                    s -= h[i][k] * h[j][k].conj();
                }
                h[i][j] = s / l;
            }
        }
        Some(det)
    }

    pub fn to_dmatrix(&self) -> DMatrix<C> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.a[i][j])
    }

}

fn check_algebra(d: u32) -> Result<()> {
    match d {
        1 | 2 => Ok(()),
        _ => Err(Error::UnsupportedAlgebra(d)),
    }
}

fn check_order(q: usize) -> Result<()> {
    if q == 0 || q > MAXQ {
        return Err(Error::InvalidParams(format!(
            "matrix Monte Carlo supports 1 <= q <= {MAXQ}, got {q}"
        )));
    }
    Ok(())
}

/// A standard Gaussian scalar over `ℝ` (`d = 1`) or `ℂ` (`d = 2`, independent
/// `N(0,1)` real and imaginary parts).
#[inline]
pub(crate) fn gaussian<R: Rng + ?Sized>(d: u32, rng: &mut R) -> C {
    let re: f64 = StandardNormal.sample(rng);
    if d == 1 {
        C::new(re, 0.0)
    } else {
        C::new(re, StandardNormal.sample(rng))
    }
}

/// Orthonormalizes the `cols` columns (length `rows`, column-major in `buf`)
/// by Gram–Schmidt with one reorthogonalization. The implied triangular
/// factor has positive diagonal, so a Gaussian input yields Haar columns.
fn orthonormalize_columns(buf: &mut [C], rows: usize, cols: usize) {
    for j in 0..cols {
        for _ in 0..2 {
            for k in 0..j {
                let mut proj = ZERO;
                for i in 0..rows {
                    proj += buf[k * rows + i].conj() * buf[j * rows + i];
                }
                for i in 0..rows {
                    let t = buf[k * rows + i];
                    buf[j * rows + i] -= proj * t;
                }
            }
        }
        let norm: f64 = (0..rows).map(|i| buf[j * rows + i].norm_sqr()).sum::<f64>().sqrt();
        for i in 0..rows {
            buf[j * rows + i] /= norm;
        }
    }
}

/// Real-arithmetic twin of `orthonormalize_columns`.
pub(crate) fn orthonormalize_real(buf: &mut [f64], rows: usize, cols: usize) {
    for j in 0..cols {
        for _ in 0..2 {
            for k in 0..j {
                let proj: f64 = (0..rows).map(|i| buf[k * rows + i] * buf[j * rows + i]).sum();
                for i in 0..rows {
                    buf[j * rows + i] -= proj * buf[k * rows + i];
                }
            }
        }
        let inv = 1.0 / (0..rows).map(|i| buf[j * rows + i].powi(2)).sum::<f64>().sqrt();
        for v in &mut buf[j * rows..(j + 1) * rows] {
            *v *= inv;
        }
    }
}

/// Haar measure on `O(q)` (`d = 1`) or `U(q)` (`d = 2`).
#[derive(Clone, Copy, Debug)]
pub(crate) struct HaarSampler {
    q: usize,
    d: u32,
}

impl HaarSampler {
    pub fn new(q: usize, d: u32) -> Result<Self> {
        check_algebra(d)?;
        check_order(q)?;
        Ok(HaarSampler { q, d })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SmallMat {
        let mut m = SmallMat::zero(self.q);
        match (self.q, self.d) {
            (1, 1) => {
                m.a[0][0] = if rng.random::<bool>() { ONE } else { -ONE };
            }
            (1, _) => {
                let t = rng.random::<f64>() * std::f64::consts::TAU;
                m.a[0][0] = C::from_polar(1.0, t);
            }
            (2, 1) => {
                let t = rng.random::<f64>() * std::f64::consts::TAU;
                let (s, c) = t.sin_cos();
                let flip = if rng.random::<bool>() { -1.0 } else { 1.0 };
                m.a[0][0] = C::new(c, 0.0);
                m.a[1][0] = C::new(s, 0.0);
                m.a[0][1] = C::new(-s * flip, 0.0);
                m.a[1][1] = C::new(c * flip, 0.0);
            }
            (q, d) => {
                let mut buf = [ZERO; MAXQ * MAXQ];
                for v in buf.iter_mut().take(q * q) {
                    *v = gaussian(d, rng);
                }
                orthonormalize_columns(&mut buf[..q * q], q, q);
                for j in 0..q {
                    for i in 0..q {
                        m.a[i][j] = buf[j * q + i];
                    }
                }
            }
        }
        m
    }
}

/// `sample_haar_unitary`: a Haar-distributed element of `O(q)` or `U(q)`.
pub fn sample_haar_unitary<R: Rng + ?Sized>(q: usize, d: u32, rng: &mut R) -> Result<DMatrix<C>> {
    check_algebra(d)?;
    if q == 0 {
        return Err(Error::InvalidParams("q must be at least 1".into()));
    }
    if q <= MAXQ {
        return Ok(HaarSampler::new(q, d)?.sample(rng).to_dmatrix());
    }
    let mut buf: Vec<C> = (0..q * q).map(|_| gaussian(d, rng)).collect();
    orthonormalize_columns(&mut buf, q, q);
    Ok(DMatrix::from_column_slice(q, q, &buf))
}

/// An element of the matrix ball `B_q` over `ℝ` or `ℂ`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallMatrix {
    pub d: u32,
    pub entries: DMatrix<C>,
}

impl BallMatrix {
    /// Operator norm (largest singular value).
    pub fn op_norm(&self) -> f64 {
        self.entries.clone().singular_values().max()
    }
}

/// Metropolis tuning and diagnostics.
const BURN_IN: usize = 1000;
const THIN: usize = 10;
const TUNE_ROUNDS: usize = 60;
const TUNE_STEPS: usize = 200;
const TARGET_ACCEPT: f64 = 0.35;
const ACCEPT_RANGE: (f64, f64) = (0.2, 0.5);

#[derive(Clone, Debug)]
enum BallKind {
    /// Top-left `q × q` block of a Haar element of `U(p)`; `buf` holds `p × q`.
    Truncation { p: usize, buf: Vec<C> },
    /// Random-walk Metropolis on the density `det(I − w*w)^{pd/2−γ}`.
    Metropolis {
        state: SmallMat,
        log_density: f64,
        eps: f64,
        exponent: f64,
    },
}

/// Sampler for the probability measure `m_p` on `B_q` (`d ∈ {1, 2}`).
///
/// Integer `p` uses the exact pushforward of Haar measure on `U(p, F)`;
/// non-integer `p > 2q − 1` uses a tuned random-walk Metropolis chain.
#[derive(Clone, Debug)]
pub struct BallSampler {
    q: usize,
    d: u32,
    kind: BallKind,
    acceptance: Option<f64>,
}

impl BallSampler {
    pub fn new<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> Result<Self> {
        check_algebra(params.d)?;
        check_order(params.q)?;
        if params.p_is_integer() {
            let p = params.p as usize;
            Ok(BallSampler {
                q: params.q,
                d: params.d,
                kind: BallKind::Truncation {
                    p,
                    buf: vec![ZERO; p * params.q],
                },
                acceptance: None,
            })
        } else {
            Self::metropolis(params, rng)
        }
    }

    /// Metropolis sampler, also available at integer `p > 2q − 1` for validation.
    pub fn metropolis<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> Result<Self> {
        check_algebra(params.d)?;
        check_order(params.q)?;
        let top = 2.0 * params.q as f64 - 1.0;
        if params.p <= top {
            return Err(Error::UnsupportedParameter {
                p: params.p,
                reason: format!("the ball density needs p > 2q-1 = {top}"),
            });
        }
        let exponent = params.p * params.d as f64 / 2.0 - params.gamma();
        let state = SmallMat::zero(params.q);
        let mut s = BallSampler {
            q: params.q,
            d: params.d,
            kind: BallKind::Metropolis {
                state,
                log_density: 0.0,
                eps: 0.5 / (params.q as f64).sqrt(),
                exponent,
            },
            acceptance: None,
        };
        let mut log_eps = (0.5 / (params.q as f64).sqrt()).ln();
        for round in 0..TUNE_ROUNDS {
            s.set_eps(log_eps.exp());
            let acc = s.run(TUNE_STEPS, rng);
            log_eps += (acc - TARGET_ACCEPT) * 2.0 / ((round + 1) as f64).sqrt();
        }
        s.set_eps(log_eps.exp());
        let acc = s.run(BURN_IN, rng);
        s.acceptance = Some(acc);
        if acc < ACCEPT_RANGE.0 || acc > ACCEPT_RANGE.1 {
            return Err(Error::NotConverged(format!(
                "burn-in acceptance {acc:.3} outside [{}, {}]",
                ACCEPT_RANGE.0, ACCEPT_RANGE.1
            )));
        }
        Ok(s)
    }

    fn set_eps(&mut self, e: f64) {
        if let BallKind::Metropolis { eps, .. } = &mut self.kind {
            *eps = e;
        }
    }

    /// Advances the chain `steps` times; returns the acceptance rate.
    fn run<R: Rng + ?Sized>(&mut self, steps: usize, rng: &mut R) -> f64 {
        let (q, d) = (self.q, self.d);
        let BallKind::Metropolis {
            state,
            log_density,
            eps,
            exponent,
        } = &mut self.kind
        else {
            return 1.0;
        };
        let mut accepted = 0;
        for _ in 0..steps {
            let mut prop = *state;
            for i in 0..q {
                for j in 0..q {
                    prop.a[i][j] += gaussian(d, rng) * *eps;
                }
            }
            if let Some(det) = prop.ball_defect() {
                let lp = *exponent * det.ln();
                let u: f64 = rng.random();
                if u.ln() < lp - *log_density {
                    *state = prop;
                    *log_density = lp;
                    accepted += 1;
                }
            }
        }
        accepted as f64 / steps as f64
    }

    /// Acceptance rate during burn-in (Metropolis only).
    pub fn acceptance(&self) -> Option<f64> {
        self.acceptance
    }

    fn truncate<R: Rng + ?Sized>(buf: &mut [C], p: usize, q: usize, d: u32, rng: &mut R) -> SmallMat {
        for v in buf.iter_mut() {
            *v = gaussian(d, rng);
        }
        orthonormalize_columns(buf, p, q);
        let mut w = SmallMat::zero(q);
        for j in 0..q {
            for i in 0..q {
                w.a[i][j] = buf[j * p + i];
            }
        }
        w
    }

    pub(crate) fn sample_small<R: Rng + ?Sized>(&mut self, rng: &mut R) -> SmallMat {
        let q = self.q;
        let d = self.d;
        match &mut self.kind {
            BallKind::Truncation { p, buf } if d == 1 => {
                let p = *p;
                let mut real = [0.0; 64];
                if p * q <= real.len() {
                    let real = &mut real[..p * q];
                    for v in real.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    orthonormalize_real(real, p, q);
                    let mut w = SmallMat::zero(q);
                    for j in 0..q {
                        for i in 0..q {
                            w.a[i][j] = C::new(real[j * p + i], 0.0);
                        }
                    }
                    return w;
                }
                Self::truncate(buf, p, q, d, rng)
            }
            BallKind::Truncation { p, buf } => {
                let p = *p;
                Self::truncate(buf, p, q, d, rng)
            }
            BallKind::Metropolis { .. } => {
                self.run(THIN, rng);
                match &self.kind {
                    BallKind::Metropolis { state, .. } => *state,
                    BallKind::Truncation { .. } => unreachable!(),
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> BallMatrix {
        BallMatrix {
            d: self.d,
            entries: self.sample_small(rng).to_dmatrix(),
        }
    }
}

/// `power_function`: `Δ_κ(a) = Δ₁(a)^{κ₁−κ₂} ⋯ Δ_q(a)^{κ_q}` with leading
/// principal minors `Δ_r`.
pub fn power_function(a: &DMatrix<C>, kappa: &[i64]) -> Result<C> {
    let n = a.nrows();
    if a.ncols() != n || kappa.len() != n {
        return Err(Error::RankMismatch {
            expected: n,
            found: kappa.len(),
        });
    }
    let mut value = ONE;
    for r in 0..n {
        let e = kappa[r] - kappa.get(r + 1).copied().unwrap_or(0);
        if e == 0 {
            continue;
        }
        let minor = a.view((0, 0), (r + 1, r + 1)).determinant();
        if minor == ZERO && e < 0 {
            return Err(Error::SingularMinor { order: r + 1 });
        }
        value *= minor.powi(e as i32);
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn haar_samples_are_unitary() {
        let mut r = rng(1);
        for (q, d) in [(1, 1), (1, 2), (2, 1), (2, 2), (3, 1), (3, 2), (4, 2), (6, 2)] {
            for _ in 0..20 {
                let u = sample_haar_unitary(q, d, &mut r).unwrap();
                let err = (u.adjoint() * &u - DMatrix::<C>::identity(q, q)).camax();
                assert!(err < 1e-12, "q={q} d={d}: {err}");
                if d == 1 {
                    assert!(u.iter().all(|z| z.im == 0.0));
                }
            }
        }
        assert_eq!(sample_haar_unitary(2, 4, &mut r).unwrap_err(), Error::UnsupportedAlgebra(4));
    }

    #[test]
    fn haar_on_o1_is_a_fair_sign() {
        let mut r = rng(2);
        let n = 20_000;
        let plus = (0..n)
            .filter(|_| sample_haar_unitary(1, 1, &mut r).unwrap()[(0, 0)].re > 0.0)
            .count();
        let se = (0.25 / n as f64).sqrt();
        assert!((plus as f64 / n as f64 - 0.5).abs() < 4.0 * se);
    }

    #[test]
    fn haar_first_entry_has_mean_square_one_over_q() {
        let mut r = rng(3);
        let n = 100_000;
        for (q, d) in [(2, 1), (3, 2), (4, 1)] {
            let s = HaarSampler::new(q, d).unwrap();
            let xs: Vec<f64> = (0..n).map(|_| s.sample(&mut r).a[0][0].norm_sqr()).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - 1.0 / q as f64).abs() < 3.0 * se + 1e-12, "q={q} d={d}: {mean}");
        }
    }

    #[test]
    fn power_function_examples() {
        let id = DMatrix::<C>::identity(3, 3);
        assert_eq!(power_function(&id, &[6, 4, 2]).unwrap(), ONE);
        let a = DMatrix::from_row_slice(2, 2, &[C::new(2.0, 1.0), C::new(0.5, 0.0), C::new(-1.0, 0.3), C::new(3.0, 0.0)]);
        let v = power_function(&a, &[2, 0]).unwrap();
        assert!((v - a[(0, 0)].powi(2)).norm() < 1e-14);
        let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        assert!((power_function(&a, &[2, 2]).unwrap() - det.powi(2)).norm() < 1e-13);
        let singular = DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ONE]);
        assert_eq!(
            power_function(&singular, &[-2, 0]).unwrap_err(),
            Error::SingularMinor { order: 1 }
        );
    }

    #[test]
    fn small_minors_match_nalgebra() {
        let mut r = rng(4);
        for n in 1..=4 {
            let mut m = SmallMat::zero(n);
            for i in 0..n {
                for j in 0..n {
                    m.a[i][j] = gaussian(2, &mut r);
                }
            }
            let dm = m.to_dmatrix();
            for k in 1..=n {
                let expect = dm.view((0, 0), (k, k)).determinant();
                assert!((m.leading_minor(k) - expect).norm() < 1e-12 * (1.0 + expect.norm()));
            }
            let kappa: Vec<i64> = (0..n).map(|i| 2 * (n - i) as i64).collect();
            let exps: Vec<u32> = (0..n).map(|_| 2).collect();
            let a = power_function(&dm, &kappa).unwrap();
            assert!((m.minor_power(&exps) - a).norm() < 1e-10 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn truncation_samples_lie_in_ball() {
        let mut r = rng(5);
        for (d, p, q) in [(1, 3.0, 1), (2, 4.0, 2), (1, 5.0, 3), (2, 3.0, 2)] {
            let params = ModelParams::new(d, p, q).unwrap();
            let mut s = BallSampler::new(&params, &mut r).unwrap();
            for _ in 0..50 {
                // for p < 2q the block keeps 2q - p unit singular values
                let norm = s.sample(&mut r).op_norm();
                if p >= 2.0 * q as f64 {
                    assert!(norm < 1.0, "d={d} p={p} q={q}");
                } else {
                    assert!((norm - 1.0).abs() < 1e-12, "d={d} p={p} q={q}: {norm}");
                }
            }
        }
    }

    #[test]
    fn ball_defect_rejects_outside() {
        let mut m = SmallMat::identity(2);
        assert!(m.ball_defect().is_none());
        m.a[0][0] = C::new(0.5, 0.0);
        m.a[1][1] = C::new(0.0, 0.5);
        assert!((m.ball_defect().unwrap() - 0.75 * 0.75).abs() < 1e-15);
    }
}
