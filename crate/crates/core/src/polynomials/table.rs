//! Batch orthogonalization over every weight with `λ₁ ≤ cap`, and
//! linearization of products `R_λ R_μ` in the resulting basis.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{JacobiExpansion, ModelParams, OrbitCoeff, EXPANSION_TOLERANCE};
use crate::error::{Error, Result};
use crate::quadrature::{validate_grid, MultiplicityTriple, OrderedNodes, QuadratureGrid};
use crate::weights::{dominance_leq_parts, enumerate_weights, permutations, weyl_orbit, Weight};

/// Quadrature nodes per block when assembling Gram matrices.
const CHUNK: usize = 1024;
/// Blocks summed per parallel round; rounds are reduced in a fixed order.
const ROUND: usize = 8;
/// Relative size of a Gram–Schmidt residual norm treated as breakdown.
const BREAKDOWN: f64 = 1e-14;
/// Support leak and normalized orthogonality defect above which the
/// orthogonalization is refined, and the number of refinement passes allowed.
const REFINE_LEAK: f64 = 1e-14;
const REFINE_DEFECT: f64 = 1e-13;
const REFINE_PASSES: usize = 3;
/// Linearization coefficients below this magnitude are rounding noise.
pub const PRUNE: f64 = 1e-12;
/// Coefficients at or below `-NEGATIVE_TOL` are reported as genuinely negative.
pub const NEGATIVE_TOL: f64 = 1e-8;

/// Per-node cosine tables `cos(2m x_i)`, `m = 0..=half_max`.
fn cos_table(x: &[f64], half_max: usize, out: &mut [f64]) {
    let stride = half_max + 1;
    for (i, &xi) in x.iter().enumerate() {
        let row = &mut out[i * stride..(i + 1) * stride];
        for (m, slot) in row.iter_mut().enumerate() {
            *slot = (2.0 * m as f64 * xi).cos();
        }
    }
}

/// Evaluates every basis orbit sum from a cosine table.
struct OrbitEvaluator {
    q: usize,
    stride: usize,
    perms: Vec<Vec<usize>>,
    halves: Vec<Vec<usize>>,
}

impl OrbitEvaluator {
    fn new(basis: &[Weight]) -> Self {
        let q = basis.first().map_or(1, Weight::rank);
        let half_max = basis.iter().map(|w| w.first() / 2).max().unwrap_or(0) as usize;
        OrbitEvaluator {
            q,
            stride: half_max + 1,
            perms: permutations(q),
            halves: basis
                .iter()
                .map(|w| w.parts().iter().map(|&v| (v / 2) as usize).collect())
                .collect(),
        }
    }

    fn eval_all(&self, table: &[f64], out: &mut [f64]) {
        let s = self.stride;
        match self.q {
            1 => {
                for (o, h) in out.iter_mut().zip(&self.halves) {
                    *o = table[h[0]];
                }
            }
            2 => {
                for (o, h) in out.iter_mut().zip(&self.halves) {
                    *o = 0.5 * (table[h[0]] * table[s + h[1]] + table[h[1]] * table[s + h[0]]);
                }
            }
            _ => {
                let inv = 1.0 / self.perms.len() as f64;
                for (o, h) in out.iter_mut().zip(&self.halves) {
                    let mut acc = 0.0;
                    for perm in &self.perms {
                        let mut prod = 1.0;
                        for (i, &j) in perm.iter().enumerate() {
                            prod *= table[i * s + h[j]];
                        }
                        acc += prod;
                    }
                    *o = acc * inv;
                }
            }
        }
    }
}

fn node_values(nodes: &OrderedNodes, eval: &OrbitEvaluator, range: std::ops::Range<usize>, n: usize) -> DMatrix<f64> {
    let rows = range.len();
    let mut v = DMatrix::<f64>::zeros(rows, n);
    let mut table = vec![0.0; eval.q * eval.stride];
    let mut vals = vec![0.0; n];
    for (r, idx) in range.enumerate() {
        let x = &nodes.points[idx * nodes.q..(idx + 1) * nodes.q];
        cos_table(x, eval.stride - 1, &mut table);
        eval.eval_all(&table, &mut vals);
        let sw = nodes.weights[idx].sqrt();
        for (a, val) in vals.iter().enumerate() {
            v[(r, a)] = sw * val;
        }
    }
    v
}

/// Sums `f(block)` over fixed node blocks, in an order that depends only on
/// the grid, never on the thread count.
fn reduce_blocks<F>(nodes: &OrderedNodes, init: Vec<DMatrix<f64>>, f: F) -> Vec<DMatrix<f64>>
where
    F: Fn(std::ops::Range<usize>) -> Vec<DMatrix<f64>> + Sync,
{
    let total = nodes.len();
    let blocks: Vec<_> = (0..total)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(total))
        .collect();
    let mut acc = init;
    for round in blocks.chunks(ROUND) {
        let partials: Vec<Vec<DMatrix<f64>>> = round.par_iter().map(|r| f(r.clone())).collect();
        for p in partials {
            for (a, m) in acc.iter_mut().zip(p) {
                *a += m;
            }
        }
    }
    acc
}

/// `⟨R_a, R_b⟩` and `⟨M̃_a, R_b⟩` for the expansions in the rows of `coeffs`,
/// from the polynomial values at the nodes rather than from the Gram matrix.
fn expansion_products(
    basis: &[Weight],
    grid: &QuadratureGrid,
    k: &MultiplicityTriple,
    coeffs: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let nodes = grid.density_nodes(k);
    let eval = OrbitEvaluator::new(basis);
    let n = basis.len();
    let zero = DMatrix::<f64>::zeros(n, n);
    let mut acc = reduce_blocks(&nodes, vec![zero.clone(), zero], |r| {
        let v = node_values(&nodes, &eval, r, n);
        let u = &v * coeffs.transpose();
        vec![u.tr_mul(&u), v.tr_mul(&u)]
    });
    let factorial: f64 = (1..=grid.q()).product::<usize>() as f64;
    let overlap = acc.pop().expect("two sums") * factorial;
    let products = acc.pop().expect("two sums") * factorial;
    (products, overlap)
}

/// Largest `|⟨R_a, R_b⟩| / ‖R_a‖‖R_b‖` over `a ≠ b`.
fn orthogonality_defect(products: &DMatrix<f64>) -> f64 {
    let n = products.nrows();
    let mut worst: f64 = 0.0;
    for b in 0..n {
        for a in 0..b {
            let r = products[(a, b)] / (products[(a, a)] * products[(b, b)]).sqrt();
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// Orthogonalizes `basis` on `grid` and returns the coefficient rows, the
/// overlaps `⟨M̃_a, R_b⟩`, the final support leak and whether the Cholesky
/// fallback was used. An ill-conditioned Gram matrix (large multiplicities)
/// leaves the polynomials slightly non-orthogonal or leaking outside the
/// dominance support; the computed polynomials are then re-orthogonalized
/// under their own inner products, taken from node values.
pub(crate) fn orthogonalize_refined(
    basis: &[Weight],
    grid: &QuadratureGrid,
    k: &MultiplicityTriple,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64, bool)> {
    let gram = gram_matrix(basis, grid, k);
    let (mut coeffs, mut leak, fallback) = orthogonalize_with_leak(basis, &gram)?;
    drop(gram);
    let mut overlap = None;
    for pass in 0..=REFINE_PASSES {
        let (products, ov) = expansion_products(basis, grid, k, &coeffs);
        if pass == REFINE_PASSES || (leak <= REFINE_LEAK && orthogonality_defect(&products) <= REFINE_DEFECT) {
            overlap = Some(ov);
            break;
        }
        let (t, l, _) = orthogonalize_with_leak(basis, &products)?;
        coeffs = &t * coeffs;
        leak = l;
    }
    Ok((coeffs, overlap.expect("set on the last pass"), leak, fallback))
}

/// Gram matrix `⟨M̃_a, M̃_b⟩` of the orbit sums over `basis`.
///
/// The summation order depends only on the grid, never on the thread count.
pub fn gram_matrix(basis: &[Weight], grid: &QuadratureGrid, k: &MultiplicityTriple) -> DMatrix<f64> {
    let nodes = grid.density_nodes(k);
    let eval = OrbitEvaluator::new(basis);
    let n = basis.len();
    let mut acc = reduce_blocks(&nodes, vec![DMatrix::<f64>::zeros(n, n)], |r| {
        let v = node_values(&nodes, &eval, r, n);
        vec![v.tr_mul(&v)]
    });
    let factorial: usize = (1..=grid.q()).product();
    acc.pop().expect("one sum") * factorial as f64
}

/// Orthogonalizes the orbit sums of `basis` (sorted in the crate's total
/// order, closed under dominance). Row `b` holds the coefficients of
/// `R_{basis[b]}`, normalized to coefficient sum one. Also returns the largest
/// coefficient discarded outside the dominance support and whether the
/// Cholesky fallback was used.
fn orthogonalize_with_leak(basis: &[Weight], gram: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64, bool)> {
    let (q_mat, fallback) = match gram_schmidt(gram) {
        Ok(q) => (q, false),
        Err(_) => (cholesky_basis(basis, gram)?, true),
    };
    let n = basis.len();
    let mut coeffs = DMatrix::<f64>::zeros(n, n);
    let mut leak: f64 = 0.0;
    for b in 0..n {
        let mut sum = 0.0;
        let mut row_leak: f64 = 0.0;
        for a in 0..=b {
            let c = q_mat[(a, b)];
            if dominance_leq_parts(basis[a].parts(), basis[b].parts()) {
                coeffs[(b, a)] = c;
                sum += c;
            } else {
                row_leak = row_leak.max(c.abs());
            }
        }
        if !sum.is_finite() || sum.abs() < f64::MIN_POSITIVE {
            return Err(breakdown(&basis[b]));
        }
        leak = leak.max(row_leak / sum.abs());
        for a in 0..=b {
            coeffs[(b, a)] /= sum;
        }
        if coeffs[(b, b)] <= 0.0 {
            return Err(breakdown(&basis[b]));
        }
    }
    Ok((coeffs, leak, fallback))
}

fn breakdown(w: &Weight) -> Error {
    Error::NumericBreakdown { weight: w.to_string() }
}

/// Classical Gram–Schmidt with one reorthogonalization pass, in coefficient
/// space under the Gram inner product. Column `b` of the result holds the
/// coefficients of the `b`-th orthonormal function.
fn gram_schmidt(gram: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, usize> {
    let n = gram.nrows();
    let mut q = DMatrix::<f64>::zeros(n, n);
    let mut gq = DMatrix::<f64>::zeros(n, n);
    for b in 0..n {
        let mut v = DVector::<f64>::zeros(b + 1);
        v[b] = 1.0;
        if b > 0 {
            let h = DVector::<f64>::from_iterator(b, (0..b).map(|j| gq[(b, j)]));
            let qb = q.view((0, 0), (b + 1, b));
            v.gemv(-1.0, &qb, &h, 1.0);
            let h2 = gq.view((0, 0), (b + 1, b)).tr_mul(&v);
            v.gemv(-1.0, &qb, &h2, 1.0);
        }
        let gv = gram.view((0, 0), (n, b + 1)) * &v;
        let nrm2 = v.dot(&gv.rows(0, b + 1));
        if !nrm2.is_finite() || nrm2 <= BREAKDOWN * gram[(b, b)] {
            return Err(b);
        }
        let inv = 1.0 / nrm2.sqrt();
        q.view_mut((0, b), (b + 1, 1)).copy_from(&(v * inv));
        gq.set_column(b, &(gv * inv));
    }
    Ok(q)
}

fn cholesky_basis(basis: &[Weight], gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| breakdown(&basis[n.saturating_sub(1)]))?;
    let l = chol.l();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| breakdown(&basis[n - 1]))?;
    Ok(linv.transpose())
}

/// Dense lookup from weights with `λ₁ ≤ cap` to basis positions.
#[derive(Clone, Debug)]
struct DenseIndex {
    q: usize,
    radix: usize,
    slots: Vec<u32>,
}

impl DenseIndex {
    fn new(basis: &[Weight], cap: u32) -> Self {
        let q = basis.first().map_or(1, Weight::rank);
        let radix = (cap / 2) as usize + 1;
        let mut slots = vec![u32::MAX; radix.pow(q as u32)];
        let mut index = DenseIndex { q, radix, slots: Vec::new() };
        for (i, w) in basis.iter().enumerate() {
            slots[index.key(w.parts()).expect("basis within cap")] = i as u32;
        }
        index.slots = slots;
        index
    }

    fn key(&self, parts: &[u32]) -> Option<usize> {
        let mut key = 0;
        for &v in parts.iter().rev() {
            let h = (v / 2) as usize;
            if h >= self.radix {
                return None;
            }
            key = key * self.radix + h;
        }
        Some(key)
    }

    fn get(&self, parts: &[u32]) -> Option<usize> {
        debug_assert_eq!(parts.len(), self.q);
        let k = self.key(parts)?;
        let v = self.slots[k];
        (v != u32::MAX).then_some(v as usize)
    }
}

/// Quality figures of a table build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableDiagnostics {
    pub basis_len: usize,
    pub nodes_per_axis: usize,
    /// Relative change of the probe integrals when the grid is refined.
    pub grid_change: f64,
    /// Largest coefficient discarded outside the dominance support.
    pub support_leak: f64,
    pub cholesky_fallback: bool,
}

/// One linearization `R_λ R_μ = Σ_τ c_{λ,μ,τ} R_τ` after the noise policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearizedRow {
    pub lambda: Weight,
    pub mu: Weight,
    /// `(τ, c)` in the crate's total order of `τ`.
    pub entries: Vec<(Weight, f64)>,
    /// Most negative raw coefficient and where it occurred.
    pub min_coeff: f64,
    pub min_tau: Option<Weight>,
    /// Sum of the raw coefficients before clamping and renormalizing.
    pub raw_sum: f64,
}

impl LinearizedRow {
    /// No coefficient at or below `-NEGATIVE_TOL`.
    pub fn is_admissible(&self) -> bool {
        self.min_coeff > -NEGATIVE_TOL
    }
}

/// Raw index-based linearization, before the noise policy.
#[derive(Clone, Debug)]
pub(crate) struct RawRow {
    pub taus: Vec<usize>,
    pub coeffs: Vec<f64>,
}

/// Jacobi polynomials for every weight with `λ₁ ≤ cap` together with the
/// overlaps `⟨M̃_a, R_τ⟩` needed to linearize products.
#[derive(Clone, Debug)]
pub struct JacobiTable {
    params: ModelParams,
    cap: u32,
    basis: Vec<Weight>,
    index: DenseIndex,
    rows: Vec<Vec<(u32, f64)>>,
    overlap: DMatrix<f64>,
    norms: Vec<f64>,
    moments: Vec<f64>,
    diagnostics: TableDiagnostics,
}

impl JacobiTable {
    /// Builds the table on `grid`, which must be resolved for degree `cap`.
    pub fn build(params: &ModelParams, cap: u32, grid: &QuadratureGrid) -> Result<Self> {
        if grid.q() != params.q {
            return Err(Error::RankMismatch {
                expected: params.q,
                found: grid.q(),
            });
        }
        let cap = cap - cap % 2;
        let k = params.k();
        let diag = validate_grid(grid, &k, cap).into_result()?;
        let basis = enumerate_weights(params.q, cap);
        let (coeffs, overlap, leak, fallback) = orthogonalize_refined(&basis, grid, &k)?;
        Ok(Self::assemble(
            *params,
            cap,
            basis,
            coeffs,
            overlap,
            TableDiagnostics {
                basis_len: 0,
                nodes_per_axis: grid.nodes_per_axis(),
                grid_change: diag.change(),
                support_leak: leak,
                cholesky_fallback: fallback,
            },
        ))
    }

    fn assemble(
        params: ModelParams,
        cap: u32,
        basis: Vec<Weight>,
        coeffs: DMatrix<f64>,
        overlap: DMatrix<f64>,
        mut diagnostics: TableDiagnostics,
    ) -> Self {
        let n = basis.len();
        let rows: Vec<Vec<(u32, f64)>> = (0..n)
            .map(|b| {
                (0..=b)
                    .filter(|&a| coeffs[(b, a)] != 0.0)
                    .map(|a| (a as u32, coeffs[(b, a)]))
                    .collect()
            })
            .collect();
        let norms = rows
            .iter()
            .enumerate()
            .map(|(t, row)| row.iter().map(|&(a, c)| c * overlap[(a as usize, t)]).sum())
            .collect();
        let q = params.q as f64;
        let moments = rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&(a, c)| {
                        let sq: f64 = basis[a as usize].parts().iter().map(|&v| (v as f64).powi(2)).sum();
                        c * sq / q
                    })
                    .sum()
            })
            .collect();
        diagnostics.basis_len = n;
        JacobiTable {
            params,
            cap,
            index: DenseIndex::new(&basis, cap),
            basis,
            rows,
            overlap,
            norms,
            moments,
            diagnostics,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn basis(&self) -> &[Weight] {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn diagnostics(&self) -> &TableDiagnostics {
        &self.diagnostics
    }

    pub fn index_of(&self, w: &Weight) -> Option<usize> {
        if w.rank() != self.params.q {
            return None;
        }
        self.index.get(w.parts())
    }

    pub(crate) fn require_index(&self, w: &Weight) -> Result<usize> {
        self.params.require_rank(w)?;
        self.index_of(w).ok_or_else(|| Error::DegreeCapExceeded {
            weight: w.to_string(),
            cap: self.cap,
            progress: String::new(),
        })
    }

    pub fn weight(&self, idx: usize) -> &Weight {
        &self.basis[idx]
    }

    pub fn expansion(&self, idx: usize) -> JacobiExpansion {
        JacobiExpansion {
            lambda: self.basis[idx].clone(),
            params: self.params,
            coeffs: self.rows[idx]
                .iter()
                .map(|&(a, c)| OrbitCoeff {
                    mu: self.basis[a as usize].clone(),
                    c,
                })
                .collect(),
            grid_nodes: self.diagnostics.nodes_per_axis,
            tolerance: EXPANSION_TOLERANCE,
        }
    }

    /// `R_λ(x)` for `λ = basis[idx]`.
    pub fn eval(&self, idx: usize, x: &[f64]) -> f64 {
        self.rows[idx]
            .iter()
            .map(|&(a, c)| c * crate::weights::orbit_sum_parts(self.basis[a as usize].parts(), x))
            .sum()
    }

    /// Values `R_λ(x)` for every basis weight, sharing one cosine table.
    pub fn eval_all(&self, x: &[f64]) -> Vec<f64> {
        let eval = OrbitEvaluator::new(&self.basis);
        let mut table = vec![0.0; eval.q * eval.stride];
        cos_table(x, eval.stride - 1, &mut table);
        let mut orbit = vec![0.0; self.len()];
        eval.eval_all(&table, &mut orbit);
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(a, c)| c * orbit[a as usize]).sum())
            .collect()
    }

    /// `m(λ)` for `λ = basis[idx]`, via `Σ_μ c_{λμ} |μ|²/q` (the orbit average of `τ₁²`).
    pub fn moment(&self, idx: usize) -> f64 {
        self.moments[idx]
    }

    /// `⟨R_λ, R_λ⟩` on the table's quadrature.
    pub fn norm_sq(&self, idx: usize) -> f64 {
        self.norms[idx]
    }

    /// `h(λ) = ⟨1, 1⟩ / ⟨R_λ, R_λ⟩`.
    pub fn haar_weight(&self, idx: usize) -> f64 {
        self.norms[0] / self.norms[idx]
    }

    /// `⟨R_i, R_j⟩ / (‖R_i‖ ‖R_j‖)` from the table's Gram data.
    pub fn orthogonality_residual(&self, i: usize, j: usize) -> f64 {
        let ip: f64 = self.rows[i].iter().map(|&(a, c)| c * self.overlap[(a as usize, j)]).sum();
        ip / (self.norms[i] * self.norms[j]).sqrt()
    }

    /// Orbit-sum expansion of `R_i R_j` as a dense vector over the basis.
    pub(crate) fn product_orbits(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        let top = self.basis[i].first() + self.basis[j].first();
        if top > self.cap {
            return Err(Error::DegreeCapExceeded {
                weight: self.basis[i].add(&self.basis[j])?.to_string(),
                cap: self.cap,
                progress: String::new(),
            });
        }
        // iterate over the shorter expansion's orbits
        let (i, j) = if self.rows[i].len() >= self.rows[j].len() { (i, j) } else { (j, i) };
        let q = self.params.q;
        let mut f = vec![0.0; self.len()];
        let mut sum = vec![0i64; q];
        for &(b, cb) in &self.rows[j] {
            let orbit = weyl_orbit(&self.basis[b as usize]);
            let share = cb / orbit.len() as f64;
            for &(a, ca) in &self.rows[i] {
                let pa = self.basis[a as usize].parts();
                let w = ca * share;
                for beta in &orbit {
                    let mut parts = [0u32; 8];
                    for t in 0..q {
                        sum[t] = pa[t] as i64 + beta[t];
                        parts[t] = sum[t].unsigned_abs() as u32;
                    }
                    let parts = &mut parts[..q];
                    parts.sort_unstable_by(|x, y| y.cmp(x));
                    let idx = self.index.get(parts).expect("product stays within cap");
                    f[idx] += w;
                }
            }
        }
        Ok(f)
    }

    /// Raw `c_{λ,μ,τ} = ⟨R_λ R_μ, R_τ⟩ / ⟨R_τ, R_τ⟩` over `τ ≤ λ + μ`.
    pub(crate) fn linearize_raw(&self, i: usize, j: usize) -> Result<RawRow> {
        let f = self.product_orbits(i, j)?;
        let top: Vec<u32> = self.basis[i]
            .parts()
            .iter()
            .zip(self.basis[j].parts())
            .map(|(a, b)| a + b)
            .collect();
        let last = self.index.get(&top).expect("λ+μ within cap");
        let support: Vec<usize> = (0..=last).filter(|&a| f[a] != 0.0).collect();
        let mut taus = Vec::new();
        let mut coeffs = Vec::new();
        for t in 0..=last {
            if !dominance_leq_parts(self.basis[t].parts(), &top) {
                continue;
            }
            let col = self.overlap.column(t);
            let s: f64 = support.iter().filter(|&&a| a >= t).map(|&a| f[a] * col[a]).sum();
            taus.push(t);
            coeffs.push(s / self.norms[t]);
        }
        Ok(RawRow { taus, coeffs })
    }

    /// Linearization with the noise policy: `|c| < PRUNE` dropped, values in
    /// `(-NEGATIVE_TOL, 0)` clamped to zero, genuine negatives kept and
    /// reported, remaining coefficients renormalized to sum one.
    pub fn linearize_idx(&self, i: usize, j: usize) -> Result<LinearizedRow> {
        let raw = self.linearize_raw(i, j)?;
        let raw_sum: f64 = raw.coeffs.iter().sum();
        let mut min_coeff = f64::INFINITY;
        let mut min_tau = None;
        let mut kept = Vec::new();
        for (&t, &c) in raw.taus.iter().zip(&raw.coeffs) {
            if c < min_coeff {
                min_coeff = c;
                min_tau = Some(t);
            }
            if c.abs() < PRUNE || (c < 0.0 && c > -NEGATIVE_TOL) {
                continue;
            }
            kept.push((t, c));
        }
        let total: f64 = kept.iter().map(|(_, c)| c).sum();
        Ok(LinearizedRow {
            lambda: self.basis[i].clone(),
            mu: self.basis[j].clone(),
            entries: kept
                .into_iter()
                .map(|(t, c)| (self.basis[t].clone(), c / total))
                .collect(),
            min_coeff,
            min_tau: min_tau.map(|t| self.basis[t].clone()),
            raw_sum,
        })
    }

    pub fn linearize(&self, lambda: &Weight, mu: &Weight) -> Result<LinearizedRow> {
        let i = self.require_index(lambda)?;
        let j = self.require_index(mu)?;
        self.linearize_idx(i, j)
    }

    /// Writes the table in a little-endian binary format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        let header = TableHeader {
            params: self.params,
            cap: self.cap,
            diagnostics: self.diagnostics.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Io(e.to_string()))?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for row in &self.rows {
            out.write_all(&(row.len() as u32).to_le_bytes())?;
            for &(a, c) in row {
                out.write_all(&a.to_le_bytes())?;
                out.write_all(&c.to_le_bytes())?;
            }
        }
        for v in self.overlap.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a table written by `save`, checking it was built for `params`, `cap`.
    pub fn load(path: &Path, params: &ModelParams, cap: u32) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse(format!("{} is not a coefficient table", path.display())));
        }
        let len = read_u64(&mut input)? as usize;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json)?;
        let header: TableHeader = serde_json::from_slice(&json).map_err(|e| Error::Parse(e.to_string()))?;
        if header.params != *params || header.cap != cap - cap % 2 {
            return Err(Error::Parse(format!("{} was built for other parameters", path.display())));
        }
        let basis = enumerate_weights(params.q, header.cap);
        let n = basis.len();
        let mut coeffs = DMatrix::<f64>::zeros(n, n);
        for b in 0..n {
            let len = read_u32(&mut input)? as usize;
            for _ in 0..len {
                let a = read_u32(&mut input)? as usize;
                if a > b {
                    return Err(Error::Parse("corrupt coefficient row".into()));
                }
                coeffs[(b, a)] = read_f64(&mut input)?;
            }
        }
        let mut overlap = DMatrix::<f64>::zeros(n, n);
        for v in overlap.iter_mut() {
            *v = read_f64(&mut input)?;
        }
        Ok(Self::assemble(*params, header.cap, basis, coeffs, overlap, header.diagnostics))
    }
}

const MAGIC: &[u8; 8] = b"GWTABLE2";

#[derive(Serialize, Deserialize)]
struct TableHeader {
    params: ModelParams,
    cap: u32,
    diagnostics: TableDiagnostics,
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomials::jacobi_expand;
    use crate::quadrature::{make_grid, resolved_grid};

    fn w(parts: &[i64]) -> Weight {
        Weight::new(parts).unwrap()
    }

    #[test]
    fn table_rows_match_single_expansions() {
        // weights_below(λ) and the full down-set give the same R_λ
        let params = ModelParams::new(1, 3.0, 2).unwrap();
        let grid = make_grid(2, 64).unwrap();
        let table = JacobiTable::build(&params, 8, &grid).unwrap();
        for lambda in [w(&[4, 2]), w(&[6, 0]), w(&[8, 8]), w(&[2, 2])] {
            let single = jacobi_expand(&lambda, &params, &grid).unwrap();
            let row = table.expansion(table.index_of(&lambda).unwrap());
            for t in &single.coeffs {
                assert!((row.coeff(&t.mu) - t.c).abs() < 1e-11, "{lambda} at {}", t.mu);
            }
            assert_eq!(row.coeffs.len(), single.coeffs.len());
        }
        assert!(table.diagnostics().support_leak < 1e-10);
        assert!(!table.diagnostics().cholesky_fallback);
    }

    #[test]
    fn cholesky_agrees_with_gram_schmidt() {
        let params = ModelParams::new(2, 2.5, 2).unwrap();
        let grid = make_grid(2, 48).unwrap();
        let basis = enumerate_weights(2, 8);
        let gram = gram_matrix(&basis, &grid, &params.k());
        let a = gram_schmidt(&gram).unwrap();
        let b = cholesky_basis(&basis, &gram).unwrap();
        assert!((a - b).amax() < 1e-8);
    }

    #[test]
    fn breakdown_on_singular_gram() {
        let basis = enumerate_weights(1, 4);
        let mut gram = DMatrix::<f64>::identity(3, 3);
        gram[(2, 2)] = 0.0;
        assert!(matches!(orthogonalize_with_leak(&basis, &gram), Err(Error::NumericBreakdown { .. })));
    }

    #[test]
    fn gram_is_deterministic_across_pools() {
        let params = ModelParams::new(1, 2.0, 2).unwrap();
        let grid = make_grid(2, 80).unwrap();
        let basis = enumerate_weights(2, 10);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| gram_matrix(&basis, &grid, &params.k()));
        let b = four.install(|| gram_matrix(&basis, &grid, &params.k()));
        assert_eq!(a, b);
    }

    #[test]
    fn chebyshev_linearization() {
        let params = ModelParams::new(1, 1.0, 1).unwrap();
        let grid = make_grid(1, 64).unwrap();
        let table = JacobiTable::build(&params, 12, &grid).unwrap();
        let row = table.linearize(&w(&[2]), &w(&[2])).unwrap();
        assert_eq!(row.entries.len(), 2, "{row:?}");
        assert_eq!(row.entries[0].0, w(&[0]));
        assert_eq!(row.entries[1].0, w(&[4]));
        assert!((row.entries[0].1 - 0.5).abs() < 1e-12);
        assert!((row.entries[1].1 - 0.5).abs() < 1e-12);
        assert!((table.haar_weight(1) - 2.0).abs() < 1e-12);
        assert_eq!(table.haar_weight(0), 1.0);
    }

    #[test]
    fn save_and_load_round_trip() {
        let params = ModelParams::new(4, 2.5, 2).unwrap();
        let grid = resolved_grid(2, 6, &params.k()).unwrap();
        let table = JacobiTable::build(&params, 6, &grid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        table.save(&path).unwrap();
        let back = JacobiTable::load(&path, &params, 6).unwrap();
        assert_eq!(back.rows, table.rows);
        assert_eq!(back.overlap, table.overlap);
        assert_eq!(back.diagnostics, table.diagnostics);
        let other = ModelParams::new(4, 3.0, 2).unwrap();
        assert!(JacobiTable::load(&path, &other, 6).is_err());
    }

    #[test]
    fn dense_index_round_trip() {
        let basis = enumerate_weights(3, 10);
        let idx = DenseIndex::new(&basis, 10);
        for (i, b) in basis.iter().enumerate() {
            assert_eq!(idx.get(b.parts()), Some(i));
        }
        assert_eq!(idx.get(&[12, 0, 0]), None);
    }
}
