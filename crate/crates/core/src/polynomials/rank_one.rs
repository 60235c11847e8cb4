//! Rank one: `R_λ(x) = R_{λ/2}^{(α,β)}(cos 2x)` with the classical Jacobi
//! polynomial normalized by `R_n(1) = 1`.

use super::ModelParams;
use crate::error::{Error, Result};
use crate::weights::Weight;

fn require_rank_one(params: &ModelParams) -> Result<()> {
    if params.q != 1 {
        return Err(Error::RankNotOne(params.q));
    }
    Ok(())
}

/// `R_0(u), …, R_{n_max}(u)` at `u = cos 2x` by the three-term recurrence,
/// rescaled so that every term equals one at `u = 1`:
///
/// `2(n+a+b+1)(2n+a+b)(n+a+1) R_{n+1}
///    = (2n+a+b+1)((2n+a+b+2)(2n+a+b)u + a²−b²) R_n − 2n(n+b)(2n+a+b+2) R_{n−1}`.
pub fn rank_one_values(n_max: usize, params: &ModelParams, x: f64) -> Result<Vec<f64>> {
    require_rank_one(params)?;
    let (a, b) = (params.alpha(), params.beta());
    let u = (2.0 * x).cos();
    let mut r = Vec::with_capacity(n_max + 1);
    r.push(1.0);
    if n_max == 0 {
        return Ok(r);
    }
    r.push(1.0 + (a + b + 2.0) * (u - 1.0) / (2.0 * (a + 1.0)));
    for n in 1..n_max {
        let nf = n as f64;
        let s = 2.0 * nf + a + b;
        let lhs = 2.0 * (nf + a + b + 1.0) * s * (nf + a + 1.0);
        let c1 = (s + 1.0) * ((s + 2.0) * s * u + a * a - b * b);
        let c0 = 2.0 * nf * (nf + b) * (s + 2.0);
        r.push((c1 * r[n] - c0 * r[n - 1]) / lhs);
    }
    Ok(r)
}

/// `jacobi_eval_rank_one`: value of `R_λ^p` at `x` for `q = 1`.
pub fn jacobi_eval_rank_one(lambda: &Weight, params: &ModelParams, x: f64) -> Result<f64> {
    require_rank_one(params)?;
    params.require_rank(lambda)?;
    let n = (lambda.first() / 2) as usize;
    Ok(rank_one_values(n, params, x)?[n])
}

/// `m(λ) = λ(λ + dp + d − 2)/(dp)` for `q = 1`.
pub fn moment_m_rank_one(lambda: &Weight, params: &ModelParams) -> Result<f64> {
    require_rank_one(params)?;
    params.require_rank(lambda)?;
    let l = lambda.first() as f64;
    let dp = params.d as f64 * params.p;
    Ok(l * (l + dp + params.d as f64 - 2.0) / dp)
}
