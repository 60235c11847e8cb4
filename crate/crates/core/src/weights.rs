//! Dominant even weights of type BC, the hyperoctahedral Weyl group action
//! on them, dominance order and normalized orbit sums.
//!
//! A weight is a weakly decreasing vector of non-negative even integers.
//! Weights are totally ordered by `(sum, lexicographic)`, a linear extension
//! of dominance; every basis enumeration in the crate uses that order.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A dominant weight `λ ∈ P₊`: even, non-negative, weakly decreasing.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Weight {
    parts: Vec<u32>,
}

impl Weight {
    /// Validates `parts` as an element of `P₊`.
    pub fn new(parts: &[i64]) -> Result<Self> {
        for (index, &value) in parts.iter().enumerate() {
            if value < 0 {
                return Err(Error::NegativeEntry { index, value });
            }
            if value % 2 != 0 {
                return Err(Error::OddEntry { index, value });
            }
            if index > 0 && value > parts[index - 1] {
                return Err(Error::NotDecreasing { index });
            }
        }
        Ok(Weight {
            parts: parts.iter().map(|&v| v as u32).collect(),
        })
    }

    pub fn zero(q: usize) -> Self {
        Weight { parts: vec![0; q] }
    }

    /// Builds a weight from parts already known to be dominant and even.
    pub(crate) fn from_parts_unchecked(parts: Vec<u32>) -> Self {
        debug_assert!(parts.windows(2).all(|w| w[0] >= w[1]));
        debug_assert!(parts.iter().all(|v| v % 2 == 0));
        Weight { parts }
    }

    pub fn parts(&self) -> &[u32] {
        &self.parts
    }

    pub fn rank(&self) -> usize {
        self.parts.len()
    }

    /// `λ₁`, the largest part (0 for rank zero).
    pub fn first(&self) -> u32 {
        self.parts.first().copied().unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.parts.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.parts.iter().all(|&v| v == 0)
    }

    /// `λ/2` as a (not necessarily even) partition.
    pub fn halved(&self) -> Vec<u32> {
        self.parts.iter().map(|v| v / 2).collect()
    }

    /// Componentwise scaling `nλ`.
    pub fn scaled(&self, n: u32) -> Weight {
        Weight::from_parts_unchecked(self.parts.iter().map(|v| v * n).collect())
    }

    /// Componentwise sum `λ + μ`, again dominant.
    pub fn add(&self, other: &Weight) -> Result<Weight> {
        check_rank(self, other)?;
        Ok(Weight::from_parts_unchecked(
            self.parts.iter().zip(&other.parts).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Euclidean norm of the weight as a vector.
    pub fn norm(&self) -> f64 {
        self.parts
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// `make_weight`: validates membership in `P₊` for a model of rank `q`.
pub fn make_weight(parts: &[i64], q: usize) -> Result<Weight> {
    if parts.len() != q {
        return Err(Error::RankMismatch {
            expected: q,
            found: parts.len(),
        });
    }
    Weight::new(parts)
}

impl Ord for Weight {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total()
            .cmp(&other.total())
            .then_with(|| self.parts.cmp(&other.parts))
    }
}

impl PartialOrd for Weight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.parts.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for Weight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<i64>()
                    .map_err(|e| Error::Parse(format!("weight entry {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Weight::new(&parts)
    }
}

impl Serialize for Weight {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Weight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_rank(a: &Weight, b: &Weight) -> Result<()> {
    if a.rank() != b.rank() {
        return Err(Error::RankMismatch {
            expected: b.rank(),
            found: a.rank(),
        });
    }
    Ok(())
}

/// A point of the Weyl chamber `C` (or of the alcove `A₀` when validated as such).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChamberPoint {
    pub coords: Vec<f64>,
}

impl ChamberPoint {
    /// Point of the chamber: `x₁ ≥ ⋯ ≥ x_q ≥ 0`.
    pub fn chamber(coords: Vec<f64>) -> Result<Self> {
        check_ordered(&coords, "chamber")?;
        Ok(ChamberPoint { coords })
    }

    /// Point of the alcove: chamber point with `x₁ ≤ π/2`.
    pub fn alcove(coords: Vec<f64>) -> Result<Self> {
        check_ordered(&coords, "alcove")?;
        if coords.first().is_some_and(|&x| x > std::f64::consts::FRAC_PI_2) {
            return Err(Error::NotInChamber {
                region: "alcove",
                reason: format!("x1 = {} exceeds pi/2", coords[0]),
            });
        }
        Ok(ChamberPoint { coords })
    }

    pub fn origin(q: usize) -> Self {
        ChamberPoint {
            coords: vec![0.0; q],
        }
    }

    pub fn rank(&self) -> usize {
        self.coords.len()
    }

    pub fn scaled(&self, c: f64) -> ChamberPoint {
        ChamberPoint {
            coords: self.coords.iter().map(|x| x * c).collect(),
        }
    }
}

fn check_ordered(coords: &[f64], region: &'static str) -> Result<()> {
    for (i, &x) in coords.iter().enumerate() {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::NotInChamber {
                region,
                reason: format!("coordinate {i} = {x} is negative or not finite"),
            });
        }
        if i > 0 && x > coords[i - 1] {
            return Err(Error::NotInChamber {
                region,
                reason: format!("coordinates not decreasing at {i}"),
            });
        }
    }
    Ok(())
}

/// Dominance order: `μ ≤ λ` iff every prefix sum of `μ` is at most that of `λ`.
pub fn dominance_leq(mu: &Weight, lambda: &Weight) -> Result<bool> {
    check_rank(mu, lambda)?;
    Ok(dominance_leq_parts(&mu.parts, &lambda.parts))
}

pub(crate) fn dominance_leq_parts(mu: &[u32], lambda: &[u32]) -> bool {
    let (mut sm, mut sl) = (0u64, 0u64);
    for (a, b) in mu.iter().zip(lambda) {
        sm += *a as u64;
        sl += *b as u64;
        if sm > sl {
            return false;
        }
    }
    true
}

/// All permutations of `0..q`, in a fixed order.
pub(crate) fn permutations(q: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(q), &mut vec![false; q], &mut out);
    out
}

/// The orbit `W·λ` under signed permutations, deduplicated and sorted.
pub fn weyl_orbit(lambda: &Weight) -> Vec<Vec<i64>> {
    let q = lambda.rank();
    let mut orbit = BTreeSet::new();
    for perm in permutations(q) {
        for signs in 0u32..(1 << q) {
            let v: Vec<i64> = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| {
                    let x = lambda.parts[j] as i64;
                    if signs & (1 << i) != 0 {
                        -x
                    } else {
                        x
                    }
                })
                .collect();
            orbit.insert(v);
        }
    }
    orbit.into_iter().collect()
}

/// Normalized orbit sum `M̃_λ(x) = |Wλ|⁻¹ Σ_{μ∈Wλ} e^{i⟨μ,x⟩}`.
///
/// Sign changes pair every exponential with its conjugate, so the value is
/// the permutation average of `Π_i cos(λ_{σ(i)} x_i)`.
pub fn orbit_sum_eval(lambda: &Weight, x: &ChamberPoint) -> f64 {
    orbit_sum_parts(&lambda.parts, &x.coords)
}

pub(crate) fn orbit_sum_parts(parts: &[u32], x: &[f64]) -> f64 {
    let q = parts.len();
    debug_assert_eq!(q, x.len());
    match q {
        0 => 1.0,
        1 => (parts[0] as f64 * x[0]).cos(),
        2 => {
            let (a, b) = (parts[0] as f64, parts[1] as f64);
            0.5 * ((a * x[0]).cos() * (b * x[1]).cos() + (b * x[0]).cos() * (a * x[1]).cos())
        }
        _ => {
            let perms = permutations(q);
            let total: f64 = perms
                .iter()
                .map(|p| {
                    p.iter()
                        .enumerate()
                        .map(|(i, &j)| (parts[j] as f64 * x[i]).cos())
                        .product::<f64>()
                })
                .sum();
            total / perms.len() as f64
        }
    }
}

/// All `λ ∈ P₊` of rank `q` with `λ₁ ≤ max_first`, in the crate's total order.
pub fn enumerate_weights(q: usize, max_first: u32) -> Vec<Weight> {
    fn rec(q: usize, bound: u32, prefix: &mut Vec<u32>, out: &mut Vec<Weight>) {
        if prefix.len() == q {
            out.push(Weight::from_parts_unchecked(prefix.clone()));
            return;
        }
        let mut v = 0;
        while v <= bound {
            prefix.push(v);
            rec(q, v, prefix, out);
            prefix.pop();
            v += 2;
        }
    }
    let mut out = Vec::new();
    rec(q, max_first - max_first % 2, &mut Vec::with_capacity(q), &mut out);
    out.sort();
    out
}

/// All `μ ∈ P₊` with `μ ≤ λ` in dominance, sorted by the total order; `λ` is last.
pub fn weights_below(lambda: &Weight) -> Vec<Weight> {
    enumerate_weights(lambda.rank(), lambda.first())
        .into_iter()
        .filter(|mu| dominance_leq_parts(&mu.parts, &lambda.parts))
        .collect()
}
