//! Gauss–Legendre quadrature on `[0, π/2]^q` against the type-BC density.
//!
//! Two rules share one axis rule. `integrate_cube` is the plain tensor
//! product over the cube. Inner products instead integrate over the ordered
//! region `π/2 ≥ x₁ ≥ ⋯ ≥ x_q ≥ 0` through the collapsed map
//! `x₁ = s`, `x_k = x_{k−1} t_k`, and sum the integrand over all coordinate
//! permutations of each node. The result is the cube integral again, but the
//! factors `|sin(x_i − x_j)|^{2k₃}` (not smooth across the diagonal when
//! `2k₃` is odd) only ever meet the boundary of the integration domain, so
//! the rule keeps spectral convergence.

use std::f64::consts::FRAC_PI_2;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::{orbit_sum_parts, permutations};

/// Root multiplicities `(k₁, k₂, k₃)` of the short, long and middle roots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityTriple {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl MultiplicityTriple {
    pub fn new(k1: f64, k2: f64, k3: f64) -> Result<Self> {
        if [k1, k2, k3].iter().any(|k| !k.is_finite() || *k < 0.0) {
            return Err(Error::InvalidParams(format!(
                "multiplicities must be finite and non-negative, got ({k1}, {k2}, {k3})"
            )));
        }
        Ok(MultiplicityTriple { k1, k2, k3 })
    }

    /// All exponents zero: the density is identically one.
    pub fn is_trivial(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.k3 == 0.0
    }
}

/// Gauss–Legendre axis rule on `[0, π/2]` for rank `q`.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    q: usize,
    nodes: Vec<f64>,
    axis_weights: Vec<f64>,
    unit_nodes: Vec<f64>,
    unit_weights: Vec<f64>,
}

/// `make_grid`: Gauss–Legendre nodes and weights mapped affinely to `[0, π/2]`.
pub fn make_grid(q: usize, nodes_per_axis: usize) -> Result<QuadratureGrid> {
    if nodes_per_axis < 2 {
        return Err(Error::InvalidNodeCount(nodes_per_axis));
    }
    if q == 0 {
        return Err(Error::InvalidParams("rank q must be at least 1".into()));
    }
    let n = NonZeroUsize::new(nodes_per_axis).expect("checked above");
    let rule = GaussLegendre::new(n);
    // gauss-quad lists nodes on [-1, 1]; sort so the grid is laid out increasingly
    let mut pairs: Vec<(f64, f64)> = rule.iter().map(|(x, w)| (*x, *w)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let unit_nodes: Vec<f64> = pairs.iter().map(|(x, _)| 0.5 * (x + 1.0)).collect();
    let unit_weights: Vec<f64> = pairs.iter().map(|(_, w)| 0.5 * w).collect();
    Ok(QuadratureGrid {
        q,
        nodes: unit_nodes.iter().map(|t| FRAC_PI_2 * t).collect(),
        axis_weights: unit_weights.iter().map(|w| FRAC_PI_2 * w).collect(),
        unit_nodes,
        unit_weights,
    })
}

/// Default axis resolution for polynomials with first part up to `max_first`.
pub fn default_nodes(max_first: u32) -> usize {
    64.max(2 * max_first as usize + 32)
}

impl QuadratureGrid {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn axis_weights(&self) -> &[f64] {
        &self.axis_weights
    }

    /// The axis rule on `[0, 1]` before scaling to `[0, π/2]`.
    pub(crate) fn unit_rule(&self) -> (&[f64], &[f64]) {
        (&self.unit_nodes, &self.unit_weights)
    }

    /// Same rank, twice the nodes per axis.
    pub fn refined(&self) -> QuadratureGrid {
        make_grid(self.q, 2 * self.nodes_per_axis()).expect("refinement of a valid grid")
    }

    /// Tensor-product rule over the whole cube `[0, π/2]^q`.
    pub fn integrate_cube<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        let n = self.nodes.len();
        let mut idx = vec![0usize; self.q];
        let mut x = vec![0.0; self.q];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for (i, &j) in idx.iter().enumerate() {
                x[i] = self.nodes[j];
                w *= self.axis_weights[j];
            }
            total += w * f(&x);
            if !advance(&mut idx, n) {
                return total;
            }
        }
    }

    /// Nodes and weights of the collapsed rule on the ordered region
    /// `π/2 ≥ x₁ ≥ ⋯ ≥ x_q ≥ 0`; weights include the Jacobian but not the density.
    pub fn ordered_nodes(&self) -> OrderedNodes {
        let n = self.nodes.len();
        let q = self.q;
        let total = n.pow(q as u32);
        let mut points = Vec::with_capacity(total * q);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; q];
        loop {
            let mut x = self.nodes[idx[0]];
            let mut w = self.axis_weights[idx[0]];
            points.push(x);
            for &j in &idx[1..] {
                w *= x * self.unit_weights[j];
                x *= self.unit_nodes[j];
                points.push(x);
            }
            weights.push(w);
            if !advance(&mut idx, n) {
                break;
            }
        }
        OrderedNodes { q, points, weights }
    }

    /// Ordered nodes with the density folded into the weights. Points where
    /// the density vanishes are dropped.
    pub fn density_nodes(&self, k: &MultiplicityTriple) -> OrderedNodes {
        let raw = self.ordered_nodes();
        let mut points = Vec::with_capacity(raw.points.len());
        let mut weights = Vec::with_capacity(raw.weights.len());
        for (x, w) in raw.iter() {
            let wd = w * bc_weight_density(x, k);
            if wd > 0.0 {
                points.extend_from_slice(x);
                weights.push(wd);
            }
        }
        OrderedNodes {
            q: raw.q,
            points,
            weights,
        }
    }
}

/// Odometer increment over `{0..n}^len`; false once it wraps around.
fn advance(idx: &mut [usize], n: usize) -> bool {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < n {
            return true;
        }
        idx[i] = 0;
    }
    false
}

/// Flattened quadrature nodes (`q` coordinates each) with their weights.
#[derive(Clone, Debug)]
pub struct OrderedNodes {
    pub q: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl OrderedNodes {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.chunks_exact(self.q).zip(self.weights.iter().copied())
    }

    /// Total weight: with density weights this is `⟨1, 1⟩ / q!`.
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// `δ_k(x) = Π_i |2 sin x_i|^{2k₁} |2 sin 2x_i|^{2k₂} Π_{i<j} |2 sin(x_i−x_j)|^{2k₃} |2 sin(x_i+x_j)|^{2k₃}`.
pub fn bc_weight_density(x: &[f64], k: &MultiplicityTriple) -> f64 {
    if k.is_trivial() {
        return 1.0;
    }
    let pow = |base: f64, e: f64| if e == 0.0 { 1.0 } else { base.abs().powf(e) };
    let mut value = 1.0;
    for (i, &xi) in x.iter().enumerate() {
        value *= pow(2.0 * xi.sin(), 2.0 * k.k1) * pow(2.0 * (2.0 * xi).sin(), 2.0 * k.k2);
        for &xj in &x[i + 1..] {
            value *= pow(
                4.0 * (xi - xj).sin() * (xi + xj).sin(),
                2.0 * k.k3,
            );
        }
    }
    value
}

/// `⟨f, g⟩ = ∫_{[0,π/2]^q} f g δ_k dx`, evaluated with the collapsed ordered rule
/// and summed over the permutations of each node.
pub fn inner_product<F, G>(f: F, g: G, grid: &QuadratureGrid, k: &MultiplicityTriple) -> f64
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> f64,
{
    let nodes = grid.density_nodes(k);
    let perms = permutations(grid.q());
    let mut y = vec![0.0; grid.q()];
    let mut total = 0.0;
    for (x, w) in nodes.iter() {
        let mut s = 0.0;
        for perm in &perms {
            for (yi, &j) in y.iter_mut().zip(perm) {
                *yi = x[j];
            }
            s += f(&y) * g(&y);
        }
        total += w * s;
    }
    total
}

/// Inner product for integrands that are already permutation invariant.
pub(crate) fn symmetric_integral<F: Fn(&[f64]) -> f64>(nodes: &OrderedNodes, f: F) -> f64 {
    let factorial: usize = (1..=nodes.q).product();
    factorial as f64 * nodes.iter().map(|(x, w)| w * f(x)).sum::<f64>()
}

/// Grid convergence diagnostics from comparing a grid with its refinement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDiagnostics {
    pub nodes_per_axis: usize,
    pub degree: u32,
    /// Relative change of `⟨1, 1⟩`.
    pub norm_change: f64,
    /// Largest relative change of `⟨M̃_λ, M̃_λ⟩` over the probe weights.
    pub orbit_change: f64,
    pub tolerance: f64,
}

impl GridDiagnostics {
    pub fn change(&self) -> f64 {
        self.norm_change.max(self.orbit_change)
    }

    pub fn passed(&self) -> bool {
        self.change() <= self.tolerance
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::GridUnderResolved {
                degree: self.degree,
                change: self.change(),
                tolerance: self.tolerance,
            })
        }
    }
}

pub const GRID_TOLERANCE: f64 = 1e-10;

fn probe_integrals(grid: &QuadratureGrid, k: &MultiplicityTriple, probes: &[Vec<u32>]) -> Vec<f64> {
    let nodes = grid.density_nodes(k);
    let mut out = vec![symmetric_integral(&nodes, |_| 1.0)];
    for lambda in probes {
        out.push(symmetric_integral(&nodes, |x| orbit_sum_parts(lambda, x).powi(2)));
    }
    out
}

/// Relative change of `⟨1,1⟩` and `⟨M̃_λ,M̃_λ⟩` (for `λ = (degree,0,…)` and
/// `(degree,…,degree)`) when the nodes per axis double.
pub fn validate_grid(grid: &QuadratureGrid, k: &MultiplicityTriple, degree: u32) -> GridDiagnostics {
    let q = grid.q();
    let top = degree - degree % 2;
    let mut probes = vec![{
        let mut v = vec![0; q];
        v[0] = top;
        v
    }];
    if q > 1 {
        probes.push(vec![top; q]);
    }
    // a mixed weight exercises unequal frequencies
    if q > 1 && top >= 2 {
        let mut mid = vec![0; q];
        mid[0] = top;
        mid[1] = 2;
        if !probes.contains(&mid) {
            probes.push(mid);
        }
    }
    let coarse = probe_integrals(grid, k, &probes);
    let fine = probe_integrals(&grid.refined(), k, &probes);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    GridDiagnostics {
        nodes_per_axis: grid.nodes_per_axis(),
        degree,
        norm_change: rel(coarse[0], fine[0]),
        orbit_change: coarse[1..]
            .iter()
            .zip(&fine[1..])
            .map(|(a, b)| rel(*a, *b))
            .fold(0.0, f64::max),
        tolerance: GRID_TOLERANCE,
    }
}

/// Smallest grid, starting from the default resolution and doubling, that
/// passes `validate_grid` for `degree`.
pub fn resolved_grid(q: usize, degree: u32, k: &MultiplicityTriple) -> Result<QuadratureGrid> {
    let limit = match q {
        1 => 1 << 14,
        2 => 1 << 10,
        _ => 1 << 8,
    };
    let mut n = default_nodes(degree);
    loop {
        let grid = make_grid(q, n)?;
        let diag = validate_grid(&grid, k, degree);
        if diag.passed() {
            return Ok(grid);
        }
        if 2 * n > limit {
            return diag.into_result().map(|_| grid);
        }
        n *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn k(k1: f64, k2: f64, k3: f64) -> MultiplicityTriple {
        MultiplicityTriple::new(k1, k2, k3).unwrap()
    }

    #[test]
    fn grid_rejects_too_few_nodes() {
        assert_eq!(make_grid(1, 1).unwrap_err(), Error::InvalidNodeCount(1));
    }

    #[test]
    fn grid_integrates_simple_functions() {
        let g = make_grid(1, 64).unwrap();
        assert!(g.nodes().iter().all(|&x| x > 0.0 && x < FRAC_PI_2));
        assert!(g.axis_weights().iter().all(|&w| w > 0.0));
        assert!((g.axis_weights().iter().sum::<f64>() - FRAC_PI_2).abs() < 1e-14);
        assert!((g.integrate_cube(|_| 1.0) - FRAC_PI_2).abs() < 1e-14);
        assert!(g.integrate_cube(|x| (2.0 * x[0]).cos()).abs() < 1e-12);
        let g2 = make_grid(2, 64).unwrap();
        assert!((g2.integrate_cube(|_| 1.0) - FRAC_PI_2 * FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn ordered_rule_covers_the_cube() {
        for q in 1..=3 {
            let g = make_grid(q, 24).unwrap();
            let nodes = g.ordered_nodes();
            let vol = symmetric_integral(&nodes, |_| 1.0);
            assert!((vol - FRAC_PI_2.powi(q as i32)).abs() < 1e-12, "q = {q}");
            for x in nodes.points.chunks(q) {
                assert!(x.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn density_examples() {
        assert_eq!(bc_weight_density(&[0.3], &k(0.0, 0.0, 0.5)), 1.0);
        assert_eq!(bc_weight_density(&[0.0], &k(0.5, 0.0, 0.5)), 0.0);
        let v = bc_weight_density(&[PI / 4.0], &k(0.5, 0.0, 0.5));
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
        // coincident coordinates make the interaction term vanish
        assert_eq!(bc_weight_density(&[0.4, 0.4], &k(0.5, 0.0, 0.5)), 0.0);
    }

    #[test]
    fn inner_product_examples() {
        let g = make_grid(1, 64).unwrap();
        let flat = k(0.0, 0.0, 0.5);
        assert!((inner_product(|_| 1.0, |_| 1.0, &g, &flat) - FRAC_PI_2).abs() < 1e-12);
        assert!(inner_product(|x| (2.0 * x[0]).cos(), |_| 1.0, &g, &flat).abs() < 1e-12);

        let g2 = make_grid(2, 32).unwrap();
        let kk = k(0.5, 0.0, 0.5);
        let f = |x: &[f64]| (x[0] * 1.3).sin() + x[1] * x[1];
        let h = |x: &[f64]| (x[0] - 2.0 * x[1]).exp();
        assert_eq!(inner_product(f, h, &g2, &kk), inner_product(h, f, &g2, &kk));
    }

    #[test]
    fn ordered_rule_matches_cube_rule_for_smooth_density() {
        // d = 2: every exponent is an even integer, so the plain tensor rule
        // converges spectrally too and both rules must agree
        let kk = k(1.0, 0.5, 1.0);
        let g = make_grid(2, 48).unwrap();
        let f = |x: &[f64]| orbit_sum_parts(&[4, 2], x) * orbit_sum_parts(&[2, 0], x);
        let cube = g.integrate_cube(|x| f(x) * bc_weight_density(x, &kk));
        let ordered = inner_product(f, |_| 1.0, &g, &kk);
        assert!((cube - ordered).abs() < 1e-12 * cube.abs().max(1.0));
    }

    #[test]
    fn rank_one_reduces_to_jacobi_weight() {
        // with u = cos 2x the mass becomes 2^{k₁+2k₂-1} ∫_{-1}^{1} (1-u)^α (1+u)^β du,
        // and the Jacobi mass is 2^{α+β+1} B(α+1, β+1)
        for (d, p) in [(1.0, 2.0), (2.0, 3.0), (4.0, 1.0), (1.0, 3.5)] {
            let kk = k(d * (p - 1.0) / 2.0, (d - 1.0) / 2.0, d / 2.0);
            let alpha = (d * p - 2.0) / 2.0;
            let beta = (d - 2.0) / 2.0;
            let g = make_grid(1, 400).unwrap();
            let lhs = inner_product(|_| 1.0, |_| 1.0, &g, &kk);
            use statrs::function::beta::beta as beta_fn;
            let jacobi_mass = 2f64.powf(alpha + beta + 1.0) * beta_fn(alpha + 1.0, beta + 1.0);
            let rhs = 2f64.powf(2.0 * kk.k1 + 2.0 * kk.k2) * 2f64.powf(-kk.k1) * 0.5 * jacobi_mass;
            assert!((lhs - rhs).abs() < 1e-9 * rhs, "d={d} p={p}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn validate_grid_examples() {
        let diag = validate_grid(&make_grid(1, 64).unwrap(), &k(0.5, 0.0, 0.5), 8);
        assert!(diag.change() < 1e-10, "{diag:?}");
        let diag = validate_grid(&make_grid(1, 64).unwrap(), &k(0.0, 0.0, 0.5), 8);
        assert!(diag.change() < 1e-13, "{diag:?}");
        let heavy = k(10.0, 0.0, 0.5);
        let diag = validate_grid(&make_grid(1, 16).unwrap(), &heavy, 16);
        assert!(!diag.passed(), "{diag:?}");
        assert!(matches!(diag.into_result(), Err(Error::GridUnderResolved { .. })));
    }

    #[test]
    fn residuals_shrink_under_refinement() {
        let kk = k(1.25, 0.0, 0.5);
        let mut last = f64::INFINITY;
        for n in [8, 16, 32] {
            let c = validate_grid(&make_grid(2, n).unwrap(), &kk, 8).change();
            assert!(c <= last * 1.0001, "n = {n}: {c} after {last}");
            last = c;
        }
    }

    #[test]
    fn resolved_grid_doubles_when_needed() {
        let g = resolved_grid(1, 8, &k(0.0, 0.0, 0.5)).unwrap();
        assert_eq!(g.nodes_per_axis(), 64);
        let g = resolved_grid(1, 8, &k(0.75, 0.0, 0.5)).unwrap();
        assert!(validate_grid(&g, &k(0.75, 0.0, 0.5), 8).passed());
    }
}
