//! The convolution `δ_λ *_{d,p} δ_μ = Σ_τ c_{λ,μ,τ} δ_τ` on dominant weights,
//! with Haar weights, admissibility scans, the modified variance and the
//! spherical Fourier transform of finitely supported measures.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polynomials::{JacobiTable, LinearizedRow, ModelParams, NEGATIVE_TOL};
use crate::quadrature::resolved_grid;
use crate::weights::{enumerate_weights, ChamberPoint, Weight};

/// Tolerance on the total mass of a probability measure.
pub const MASS_TOLERANCE: f64 = 1e-10;

/// A finitely supported signed measure on `P₊`, kept in the crate's total
/// order of weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightMeasure {
    masses: BTreeMap<Weight, f64>,
}

impl WeightMeasure {
    pub fn dirac(w: Weight) -> Self {
        WeightMeasure {
            masses: BTreeMap::from([(w, 1.0)]),
        }
    }

    /// Sums repeated weights; all weights must share one rank.
    pub fn from_pairs<I: IntoIterator<Item = (Weight, f64)>>(pairs: I) -> Result<Self> {
        let mut masses = BTreeMap::new();
        let mut rank = None;
        for (w, m) in pairs {
            if !m.is_finite() {
                return Err(Error::InvalidMeasure(format!("mass {m} at {w}")));
            }
            match rank {
                None => rank = Some(w.rank()),
                Some(r) if r != w.rank() => {
                    return Err(Error::RankMismatch {
                        expected: r,
                        found: w.rank(),
                    })
                }
                _ => {}
            }
            *masses.entry(w).or_insert(0.0) += m;
        }
        Ok(WeightMeasure { masses })
    }

    /// A probability measure: masses above `-NEGATIVE_TOL` are clamped at
    /// zero, anything lower is rejected, and the total must be one.
    pub fn probability<I: IntoIterator<Item = (Weight, f64)>>(pairs: I) -> Result<Self> {
        let mut m = Self::from_pairs(pairs)?;
        for (w, v) in m.masses.iter_mut() {
            if *v < -NEGATIVE_TOL {
                return Err(Error::InvalidMeasure(format!("negative mass {v} at {w}")));
            }
            *v = v.max(0.0);
        }
        m.masses.retain(|_, v| *v > 0.0);
        if m.masses.is_empty() {
            return Err(Error::InvalidMeasure("empty support".into()));
        }
        let total = m.total();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidMeasure(format!("total mass {total} is not 1")));
        }
        Ok(m)
    }

    /// Parses `"2,0:0.5;4,2:0.5"` as a probability measure of rank `q`.
    pub fn parse(s: &str, q: usize) -> Result<Self> {
        let mut pairs = Vec::new();
        for item in s.split(';').map(str::trim).filter(|t| !t.is_empty()) {
            let (w, m) = item
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("expected weight:mass, got {item:?}")))?;
            let w: Weight = w.trim().parse()?;
            if w.rank() != q {
                return Err(Error::RankMismatch {
                    expected: q,
                    found: w.rank(),
                });
            }
            let m: f64 = m
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad mass {m:?}")))?;
            pairs.push((w, m));
        }
        Self::probability(pairs)
    }

    pub fn mass(&self, w: &Weight) -> f64 {
        self.masses.get(w).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Weight, f64)> + '_ {
        self.masses.iter().map(|(w, &m)| (w, m))
    }

    pub fn support(&self) -> impl Iterator<Item = &Weight> + '_ {
        self.masses.keys()
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.masses.values().sum()
    }

    pub fn rank(&self) -> Option<usize> {
        self.masses.keys().next().map(Weight::rank)
    }

    /// Largest first part over the support.
    pub fn max_first(&self) -> u32 {
        self.masses.keys().map(Weight::first).max().unwrap_or(0)
    }

    pub fn is_dirac_zero(&self) -> bool {
        self.masses.len() == 1 && self.masses.iter().all(|(w, &m)| w.is_zero() && m == 1.0)
    }

    /// Largest absolute mass difference over the union of supports.
    pub fn distance(&self, other: &WeightMeasure) -> f64 {
        self.masses
            .keys()
            .chain(other.masses.keys())
            .map(|w| (self.mass(w) - other.mass(w)).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for WeightMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.masses.iter().map(|(w, m)| format!("{w}:{m}")).collect();
        f.write_str(&items.join(";"))
    }
}

/// One cached linearization row with its sampling table.
#[derive(Debug)]
pub(crate) struct CachedRow {
    pub row: LinearizedRow,
    pub taus: Vec<u32>,
    pub cdf: Vec<f64>,
}

/// The hypergroup `(P₊, *_{d,p})` up to a degree cap, backed by one
/// `JacobiTable` and a shared cache of linearization rows.
#[derive(Debug)]
pub struct Hypergroup {
    table: Arc<JacobiTable>,
    rows: RwLock<HashMap<(u32, u32), Arc<CachedRow>>>,
}

/// File name of the cached table for `(d, p, q, cap, nodes)`.
pub fn table_file_name(params: &ModelParams, cap: u32, nodes: usize) -> String {
    format!("table-d{}-p{}-q{}-cap{}-n{}.bin", params.d, params.p, params.q, cap, nodes)
}

impl Hypergroup {
    pub fn new(table: JacobiTable) -> Self {
        Hypergroup {
            table: Arc::new(table),
            rows: RwLock::new(HashMap::new()),
        }
    }

    /// Builds the table on a grid resolved for `cap`.
    pub fn build(params: &ModelParams, cap: u32) -> Result<Self> {
        Self::open(params, cap, None)
    }

    /// Loads the table from `cache_dir` when present, otherwise builds it and
    /// stores it there (written to a temporary file, then renamed).
    pub fn open(params: &ModelParams, cap: u32, cache_dir: Option<&Path>) -> Result<Self> {
        let cap = cap - cap % 2;
        let grid = resolved_grid(params.q, cap, &params.k())?;
        let path: Option<PathBuf> = cache_dir.map(|d| d.join(table_file_name(params, cap, grid.nodes_per_axis())));
        if let Some(path) = &path {
            if path.exists() {
                if let Ok(t) = JacobiTable::load(path, params, cap) {
                    return Ok(Self::new(t));
                }
            }
        }
        let table = JacobiTable::build(params, cap, &grid)?;
        if let (Some(dir), Some(path)) = (cache_dir, &path) {
            std::fs::create_dir_all(dir)?;
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            table.save(&tmp)?;
            std::fs::rename(&tmp, path)?;
        }
        Ok(Self::new(table))
    }

    pub fn table(&self) -> &JacobiTable {
        &self.table
    }

    pub fn params(&self) -> &ModelParams {
        self.table.params()
    }

    pub fn cap(&self) -> u32 {
        self.table.cap()
    }

    pub(crate) fn cached_row(&self, i: usize, j: usize) -> Result<Arc<CachedRow>> {
        // the computation is not symmetric in rounding, so fix one order
        let key = (i.min(j) as u32, i.max(j) as u32);
        if let Some(r) = self.rows.read().expect("row cache poisoned").get(&key) {
            return Ok(r.clone());
        }
        let row = self.table.linearize_idx(key.0 as usize, key.1 as usize)?;
        let mut taus = Vec::with_capacity(row.entries.len());
        let mut cdf = Vec::with_capacity(row.entries.len());
        let mut acc = 0.0;
        for (t, c) in &row.entries {
            taus.push(self.table.index_of(t).expect("row stays in the table") as u32);
            acc += c.max(0.0);
            cdf.push(acc);
        }
        let cached = Arc::new(CachedRow { row, taus, cdf });
        let mut rows = self.rows.write().expect("row cache poisoned");
        Ok(rows.entry(key).or_insert(cached).clone())
    }

    /// The linearization row of `(λ, μ)` with the noise policy applied.
    pub fn row(&self, lambda: &Weight, mu: &Weight) -> Result<LinearizedRow> {
        let i = self.table.require_index(lambda)?;
        let j = self.table.require_index(mu)?;
        let mut row = self.cached_row(i, j)?.row.clone();
        row.lambda = lambda.clone();
        row.mu = mu.clone();
        Ok(row)
    }

    /// `linearize`: `δ_λ * δ_μ` as a measure.
    pub fn linearize(&self, lambda: &Weight, mu: &Weight) -> Result<WeightMeasure> {
        let row = self.row(lambda, mu)?;
        WeightMeasure::from_pairs(row.entries)
    }

    /// `convolve`: `Σ ν₁(λ) ν₂(μ) δ_λ * δ_μ`.
    pub fn convolve(&self, nu1: &WeightMeasure, nu2: &WeightMeasure) -> Result<WeightMeasure> {
        let mut acc: BTreeMap<Weight, f64> = BTreeMap::new();
        for (l, a) in nu1.iter() {
            for (m, b) in nu2.iter() {
                if l.is_zero() {
                    *acc.entry(m.clone()).or_insert(0.0) += a * b;
                    continue;
                }
                if m.is_zero() {
                    *acc.entry(l.clone()).or_insert(0.0) += a * b;
                    continue;
                }
                for (t, c) in self.row(l, m)?.entries {
                    *acc.entry(t).or_insert(0.0) += a * b * c;
                }
            }
        }
        WeightMeasure::from_pairs(acc)
    }

    /// `h(λ) = ⟨1, 1⟩ / ⟨R_λ, R_λ⟩`.
    pub fn haar_weight(&self, lambda: &Weight) -> Result<f64> {
        Ok(self.table.haar_weight(self.table.require_index(lambda)?))
    }

    /// `m(λ)`.
    pub fn moment(&self, lambda: &Weight) -> Result<f64> {
        Ok(self.table.moment(self.table.require_index(lambda)?))
    }

    /// `σ²(ν) = Σ_λ m(λ) ν({λ})`.
    pub fn modified_variance(&self, nu: &WeightMeasure) -> Result<f64> {
        nu.iter().map(|(w, m)| Ok(self.moment(w)? * m)).sum()
    }

    /// `Fν(x) = Σ_λ R_λ(x) ν({λ})`.
    pub fn fourier_transform(&self, nu: &WeightMeasure, x: &ChamberPoint) -> Result<f64> {
        nu.iter()
            .map(|(w, m)| Ok(self.table.eval(self.table.require_index(w)?, &x.coords) * m))
            .sum()
    }

    /// `check_admissible`: scans `δ_λ * δ_μ` for every `λ ∈ supp ν` and every
    /// `μ` with `μ₁ ≤ degree_cap`.
    pub fn check_admissible(&self, nu: &WeightMeasure, degree_cap: u32) -> Result<AdmissibilityReport> {
        let q = self.params().q;
        let mut report = AdmissibilityReport {
            degree_cap,
            rows_checked: 0,
            min_coeff: 0.0,
            worst: None,
            negative_rows: 0,
            admissible_up_to_cap: true,
        };
        for lambda in nu.support() {
            for mu in enumerate_weights(q, degree_cap) {
                let row = self.row(lambda, &mu)?;
                report.rows_checked += 1;
                if !row.is_admissible() {
                    report.negative_rows += 1;
                    report.admissible_up_to_cap = false;
                }
                if row.min_coeff < report.min_coeff {
                    report.min_coeff = row.min_coeff;
                    report.worst = Some(WorstCoefficient {
                        lambda: lambda.clone(),
                        mu: mu.clone(),
                        tau: row.min_tau.clone(),
                    });
                }
            }
        }
        Ok(report)
    }

    /// `C₁ = min m(λ)/λ₁²` over the table, and the largest ratio, which the
    /// bound `m(λ) ≤ λ₁²` keeps at most one.
    pub fn moment_bounds(&self) -> MomentBounds {
        let mut b = MomentBounds {
            c1: f64::INFINITY,
            max_ratio: 0.0,
            weights: 0,
        };
        for i in 1..self.table.len() {
            let l1 = self.table.weight(i).first() as f64;
            let r = self.table.moment(i) / (l1 * l1);
            b.c1 = b.c1.min(r);
            b.max_ratio = b.max_ratio.max(r);
            b.weights += 1;
        }
        b
    }
}

/// Where the most negative coefficient of an admissibility scan occurred.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCoefficient {
    pub lambda: Weight,
    pub mu: Weight,
    pub tau: Option<Weight>,
}

/// Result of `check_admissible`. Admissibility is only ever certified up to
/// the scanned cap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub degree_cap: u32,
    pub rows_checked: usize,
    pub min_coeff: f64,
    pub worst: Option<WorstCoefficient>,
    pub negative_rows: usize,
    pub admissible_up_to_cap: bool,
}

/// Empirical constants of `C₁ λ₁² ≤ m(λ) ≤ λ₁²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentBounds {
    pub c1: f64,
    pub max_ratio: f64,
    pub weights: usize,
}

impl FromStr for WeightMeasure {
    type Err = Error;

    /// Parses with the rank taken from the first weight.
    fn from_str(s: &str) -> Result<Self> {
        let first = s
            .split(';')
            .map(str::trim)
            .find(|t| !t.is_empty())
            .and_then(|t| t.split_once(':'))
            .ok_or_else(|| Error::Parse(format!("expected weight:mass pairs, got {s:?}")))?;
        let q = first.0.split(',').count();
        Self::parse(s, q)
    }
}
