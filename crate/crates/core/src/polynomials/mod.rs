//! Jacobi polynomials `R_λ^p` of type BC: expansions over normalized orbit
//! sums, the rank-one recurrence, the matrix-ball Monte Carlo representation
//! and the second moment function `m`.

mod matrix;
mod mc;
mod rank_one;
mod table;

pub use matrix::{power_function, sample_haar_unitary, BallMatrix, BallSampler};
pub use mc::{jacobi_eval_mc, sample_mp, McEstimate};
pub use rank_one::{jacobi_eval_rank_one, moment_m_rank_one, rank_one_values};
pub use table::{gram_matrix, JacobiTable, LinearizedRow, TableDiagnostics, NEGATIVE_TOL, PRUNE};

pub(crate) use matrix::{orthonormalize_real, HaarSampler, SmallMat};
pub(crate) use mc::ComplexMean;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{validate_grid, MultiplicityTriple, QuadratureGrid};
use crate::weights::{orbit_sum_parts, weights_below, weyl_orbit, ChamberPoint, Weight};

/// Model parameters `(d, p, q)`: `d = dim_ℝ F ∈ {1, 2, 4}`, real `p ≥ q`, rank `q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: u32,
    pub p: f64,
    pub q: usize,
}

impl ModelParams {
    pub fn new(d: u32, p: f64, q: usize) -> Result<Self> {
        if ![1, 2, 4].contains(&d) {
            return Err(Error::InvalidParams(format!("d must be 1, 2 or 4, got {d}")));
        }
        if q == 0 {
            return Err(Error::InvalidParams("q must be at least 1".into()));
        }
        if !p.is_finite() || p < q as f64 {
            return Err(Error::InvalidParams(format!("p must be finite and at least q = {q}, got {p}")));
        }
        Ok(ModelParams { d, p, q })
    }

    fn df(&self) -> f64 {
        self.d as f64
    }

    /// `k(p) = (d(p−q)/2, (d−1)/2, d/2)`.
    pub fn k(&self) -> MultiplicityTriple {
        let d = self.df();
        MultiplicityTriple {
            k1: d * (self.p - self.q as f64) / 2.0,
            k2: (d - 1.0) / 2.0,
            k3: d / 2.0,
        }
    }

    /// `ρ_i = (d/2)(p + q + 2 − 2i) − 1` for `i = 1..q`.
    pub fn rho(&self) -> Vec<f64> {
        (1..=self.q)
            .map(|i| self.df() / 2.0 * (self.p + self.q as f64 + 2.0 - 2.0 * i as f64) - 1.0)
            .collect()
    }

    /// `γ = d(q − 1/2) + 1`.
    pub fn gamma(&self) -> f64 {
        self.df() * (self.q as f64 - 0.5) + 1.0
    }

    /// Rank-one Jacobi index `α = (dp − 2)/2`.
    pub fn alpha(&self) -> f64 {
        (self.df() * self.p - 2.0) / 2.0
    }

    /// Rank-one Jacobi index `β = (d − 2)/2`.
    pub fn beta(&self) -> f64 {
        (self.df() - 2.0) / 2.0
    }

    pub fn p_is_integer(&self) -> bool {
        self.p.fract() == 0.0
    }

    /// `p ∈ {q, …, 2q−1} ∪ (2q−1, ∞)`, the range of the Mehler–Heine bound.
    pub fn in_theorem_range(&self) -> bool {
        let top = 2.0 * self.q as f64 - 1.0;
        self.p > top || self.p_is_integer()
    }

    pub fn require_theorem_range(&self) -> Result<()> {
        if self.in_theorem_range() {
            Ok(())
        } else {
            Err(Error::UnsupportedParameter {
                p: self.p,
                reason: format!("non-integer p must exceed 2q-1 = {}", 2 * self.q - 1),
            })
        }
    }

    pub(crate) fn require_rank(&self, lambda: &Weight) -> Result<()> {
        if lambda.rank() != self.q {
            return Err(Error::RankMismatch {
                expected: self.q,
                found: lambda.rank(),
            });
        }
        Ok(())
    }
}

/// One orbit-sum coefficient `c_{λμ}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitCoeff {
    pub mu: Weight,
    pub c: f64,
}

/// `R_λ^p = Σ_{μ≤λ} c_{λμ} M̃_μ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobiExpansion {
    pub lambda: Weight,
    pub params: ModelParams,
    /// Coefficients in the crate's total order of `μ`; zero entries omitted.
    pub coeffs: Vec<OrbitCoeff>,
    pub grid_nodes: usize,
    pub tolerance: f64,
}

/// Declared accuracy of orbit coefficients computed by quadrature.
pub const EXPANSION_TOLERANCE: f64 = 1e-8;

impl JacobiExpansion {
    pub fn coeff(&self, mu: &Weight) -> f64 {
        self.coeffs.iter().find(|t| &t.mu == mu).map_or(0.0, |t| t.c)
    }

    pub fn coeff_sum(&self) -> f64 {
        self.coeffs.iter().map(|t| t.c).sum()
    }

    pub fn min_coeff(&self) -> f64 {
        self.coeffs.iter().map(|t| t.c).fold(f64::INFINITY, f64::min)
    }
}

/// `jacobi_expand`: Gram–Schmidt of the orbit sums `M̃_μ`, `μ ∈ weights_below(λ)`,
/// normalized to `R_λ(0) = 1`.
pub fn jacobi_expand(lambda: &Weight, params: &ModelParams, grid: &QuadratureGrid) -> Result<JacobiExpansion> {
    params.require_rank(lambda)?;
    if grid.q() != params.q {
        return Err(Error::RankMismatch {
            expected: params.q,
            found: grid.q(),
        });
    }
    let k = params.k();
    validate_grid(grid, &k, lambda.first()).into_result()?;
    let basis = weights_below(lambda);
    let (coeffs, ..) = table::orthogonalize_refined(&basis, grid, &k)?;
    let last = basis.len() - 1;
    Ok(JacobiExpansion {
        lambda: lambda.clone(),
        params: *params,
        coeffs: basis
            .iter()
            .enumerate()
            .filter(|&(j, _)| coeffs[(last, j)] != 0.0)
            .map(|(j, mu)| OrbitCoeff {
                mu: mu.clone(),
                c: coeffs[(last, j)],
            })
            .collect(),
        grid_nodes: grid.nodes_per_axis(),
        tolerance: EXPANSION_TOLERANCE,
    })
}

/// `jacobi_eval`: `Σ_μ c_{λμ} M̃_μ(x)`.
pub fn jacobi_eval(expansion: &JacobiExpansion, x: &ChamberPoint) -> f64 {
    jacobi_eval_at(expansion, &x.coords)
}

/// Evaluation at an arbitrary point of `ℝ^q` (no chamber check).
pub fn jacobi_eval_at(expansion: &JacobiExpansion, x: &[f64]) -> f64 {
    expansion
        .coeffs
        .iter()
        .map(|t| t.c * orbit_sum_parts(t.mu.parts(), x))
        .sum()
}

/// `m(λ) = Σ_μ (c_{λμ}/|Wμ|) Σ_{τ∈Wμ} τ₁²`.
pub fn moment_m(expansion: &JacobiExpansion) -> f64 {
    expansion
        .coeffs
        .iter()
        .map(|t| {
            let orbit = weyl_orbit(&t.mu);
            let s: f64 = orbit.iter().map(|tau| (tau[0] * tau[0]) as f64).sum();
            t.c * s / orbit.len() as f64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{make_grid, resolved_grid};
    use crate::weights::enumerate_weights;

    fn w(parts: &[i64]) -> Weight {
        Weight::new(parts).unwrap()
    }

    #[test]
    fn derived_parameters() {
        let m = ModelParams::new(2, 5.0, 3).unwrap();
        let k = m.k();
        assert_eq!((k.k1, k.k2, k.k3), (2.0, 0.5, 1.0));
        assert_eq!(m.rho(), vec![7.0, 5.0, 3.0]);
        assert_eq!(m.gamma(), 6.0);
        let r1 = ModelParams::new(1, 3.0, 1).unwrap();
        assert_eq!((r1.alpha(), r1.beta()), (0.5, -0.5));
        assert!(ModelParams::new(3, 2.0, 1).is_err());
        assert!(ModelParams::new(1, 1.5, 2).is_err());
        assert!(!ModelParams::new(1, 2.5, 2).unwrap().in_theorem_range());
        assert!(ModelParams::new(1, 3.5, 2).unwrap().in_theorem_range());
        assert!(ModelParams::new(1, 2.0, 2).unwrap().in_theorem_range());
    }

    #[test]
    fn expand_examples() {
        let cheb = ModelParams::new(1, 1.0, 1).unwrap();
        let grid = make_grid(1, 64).unwrap();
        let r0 = jacobi_expand(&w(&[0]), &cheb, &grid).unwrap();
        assert_eq!(r0.coeffs, vec![OrbitCoeff { mu: w(&[0]), c: 1.0 }]);

        let r2 = jacobi_expand(&w(&[2]), &cheb, &grid).unwrap();
        assert!(r2.coeff(&w(&[0])).abs() < 1e-12);
        assert!((r2.coeff(&w(&[2])) - 1.0).abs() < 1e-12);
        let v = jacobi_eval(&r2, &ChamberPoint::alcove(vec![std::f64::consts::FRAC_PI_4]).unwrap());
        assert!(v.abs() < 1e-12);

        // α = 1/2, β = −1/2: R_1(u) = 1 − (α+β+2)(1−u)/(2(α+1)) = 1/3 + (2/3) u
        let p3 = ModelParams::new(1, 3.0, 1).unwrap();
        let r = jacobi_expand(&w(&[2]), &p3, &grid).unwrap();
        assert!((r.coeff(&w(&[0])) - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.coeff(&w(&[2])) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn expansion_normalized_and_invariant() {
        let params = ModelParams::new(1, 3.0, 2).unwrap();
        let grid = make_grid(2, 64).unwrap();
        let e = jacobi_expand(&w(&[6, 2]), &params, &grid).unwrap();
        assert!((jacobi_eval(&e, &ChamberPoint::origin(2)) - 1.0).abs() < 1e-14);
        let a = jacobi_eval_at(&e, &[0.9, 0.3]);
        let b = jacobi_eval_at(&e, &[0.3, 0.9]);
        let c = jacobi_eval_at(&e, &[-0.3, 0.9]);
        assert!((a - b).abs() < 1e-14 && (a - c).abs() < 1e-14);
        assert!(e.coeffs.iter().all(|t| crate::weights::dominance_leq(&t.mu, &e.lambda).unwrap()));
        assert!(e.coeff(&e.lambda) > 0.0);
    }

    #[test]
    fn orthogonal_on_refined_grid() {
        // orthogonality checked against an independent, finer quadrature
        let params = ModelParams::new(1, 2.0, 2).unwrap();
        let k = params.k();
        let grid = make_grid(2, 64).unwrap();
        let fine = make_grid(2, 96).unwrap();
        let exps: Vec<_> = enumerate_weights(2, 6)
            .iter()
            .map(|l| jacobi_expand(l, &params, &grid).unwrap())
            .collect();
        for a in &exps {
            for b in &exps {
                let ip = |f: &JacobiExpansion, g: &JacobiExpansion| {
                    crate::quadrature::inner_product(
                        |x| jacobi_eval_at(f, x),
                        |x| jacobi_eval_at(g, x),
                        &fine,
                        &k,
                    )
                };
                let r = ip(a, b) / (ip(a, a) * ip(b, b)).sqrt();
                if a.lambda != b.lambda {
                    assert!(r.abs() < 1e-10, "{} {}: {r}", a.lambda, b.lambda);
                }
            }
        }
    }

    #[test]
    fn moment_examples() {
        let grid = make_grid(1, 64).unwrap();
        for (d, p, lambda, m) in [(1, 1.0, 2, 4.0), (1, 2.0, 2, 3.0), (2, 3.0, 4, 20.0 / 3.0)] {
            let params = ModelParams::new(d, p, 1).unwrap();
            let e = jacobi_expand(&w(&[lambda]), &params, &grid).unwrap();
            assert!((moment_m(&e) - m).abs() < 1e-10, "d={d} p={p}");
        }
        let params = ModelParams::new(1, 2.0, 1).unwrap();
        assert_eq!(moment_m(&jacobi_expand(&w(&[0]), &params, &grid).unwrap()), 0.0);
    }

    #[test]
    fn moment_matches_second_derivative() {
        let params = ModelParams::new(2, 2.0, 2).unwrap();
        let grid = resolved_grid(2, 8, &params.k()).unwrap();
        let h = 1e-4;
        for lambda in enumerate_weights(2, 8) {
            let e = jacobi_expand(&lambda, &params, &grid).unwrap();
            let f = |t: f64| jacobi_eval_at(&e, &[t, 0.0]);
            let d2 = (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h)) / (12.0 * h * h);
            let m = moment_m(&e);
            assert!((d2 + m).abs() < 1e-6 * (1.0 + m), "{lambda}: {d2} vs {m}");
            assert!(m <= (lambda.first() as f64).powi(2) + 1e-9);
            if !lambda.is_zero() {
                assert!(m > 0.0);
            }
        }
    }

    #[test]
    fn expand_rejects_coarse_grid() {
        let params = ModelParams::new(1, 21.0, 1).unwrap();
        let grid = make_grid(1, 16).unwrap();
        assert!(matches!(
            jacobi_expand(&w(&[16]), &params, &grid),
            Err(Error::GridUnderResolved { .. })
        ));
    }

    #[test]
    fn expansion_json_shape() {
        let params = ModelParams::new(1, 1.0, 1).unwrap();
        let e = jacobi_expand(&w(&[2]), &params, &make_grid(1, 64).unwrap()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["lambda"], "2");
        assert_eq!(v["params"]["d"], 1);
        assert!(v["coeffs"][0]["mu"].is_string());
        assert_eq!(v["grid_nodes"], 64);
        let back: JacobiExpansion = serde_json::from_value(v).unwrap();
        assert_eq!(back, e);
    }
}
