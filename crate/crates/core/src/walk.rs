//! Random walks on `(P₊, *_{d,p})` and the experiments built on them: the
//! martingale identity for `m`, the central limit theorem against the
//! Laguerre ensemble, the strong-law statistic and the Mehler–Heine harness.
//!
//! Trajectory `i` of a run with seed `s` draws from its own random stream
//! `(s, i)`, and trajectories are processed in fixed chunks whose partial sums
//! are combined in chunk order, so results do not depend on the thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bessel::{bessel_eval_mc, bessel_eval_rank_one, stream_rng, LaguerreEnsemble};
use crate::error::{Error, Result};
use crate::hypergroup::{Hypergroup, WeightMeasure};
use crate::polynomials::{rank_one_values, JacobiTable, ModelParams};
use crate::stats::{ks_distance, ks_distance_lattice, quantile, slope, Summary};
use crate::weights::{ChamberPoint, Weight};

const CHUNK: usize = 256;

/// Parameters of a walk `S_0 = 0, S_1, …, S_n` with step law `ν`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub params: ModelParams,
    pub step_law: WeightMeasure,
    pub n_steps: usize,
    pub n_trajectories: usize,
    pub seed: u64,
    /// Largest `λ₁` a trajectory may reach.
    pub degree_cap: u32,
    pub record_trajectories: bool,
}

impl WalkConfig {
    /// A configuration with the default degree cap.
    pub fn new(
        params: ModelParams,
        step_law: WeightMeasure,
        n_steps: usize,
        n_trajectories: usize,
        seed: u64,
    ) -> Result<Self> {
        if step_law.rank() != Some(params.q) {
            return Err(Error::RankMismatch {
                expected: params.q,
                found: step_law.rank().unwrap_or(0),
            });
        }
        if (step_law.total() - 1.0).abs() > crate::hypergroup::MASS_TOLERANCE {
            return Err(Error::InvalidMeasure(format!("total mass {} is not one", step_law.total())));
        }
        let degree_cap = default_degree_cap(n_steps, &step_law);
        Ok(WalkConfig {
            params,
            step_law,
            n_steps,
            n_trajectories,
            seed,
            degree_cap,
            record_trajectories: false,
        })
    }

    pub fn with_degree_cap(mut self, cap: u32) -> Self {
        self.degree_cap = cap;
        self
    }

    pub fn with_trajectories(mut self, record: bool) -> Self {
        self.record_trajectories = record;
        self
    }
}

/// `min(n·s, 6√n·s)` rounded up to an even integer, where `s` is the largest
/// `λ₁` in the support of `ν`. The first term is never exceeded.
pub fn default_degree_cap(n_steps: usize, step_law: &WeightMeasure) -> u32 {
    let s = step_law.max_first() as f64;
    let n = n_steps as f64;
    let soft = (6.0 * n.sqrt() * s / 2.0).ceil() * 2.0;
    (n * s).min(soft) as u32
}

/// Endpoints and the per-step mean of `m(S_n)` over all trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkSample {
    pub params: ModelParams,
    pub n_steps: usize,
    pub seed: u64,
    pub endpoints: Vec<Weight>,
    pub trajectories: Option<Vec<Vec<Weight>>>,
    /// Mean of `m(S_n)` for `n = 0, …, n_steps`.
    pub m_trace: Vec<f64>,
    /// Sample variance of `m(S_n)` for `n = 0, …, n_steps`.
    pub m_var: Vec<f64>,
    /// Largest `λ₁` visited.
    pub max_first: u32,
}

/// The step law resolved against a table.
struct Walker<'a> {
    hg: &'a Hypergroup,
    law_idx: Vec<usize>,
    law_first: Vec<u32>,
    law_cdf: Vec<f64>,
    cap: u32,
}

fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    let target = u * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= target).min(cdf.len() - 1)
}

impl<'a> Walker<'a> {
    fn new(hg: &'a Hypergroup, nu: &WeightMeasure, cap: u32) -> Result<Self> {
        if cap > hg.cap() {
            return Err(Error::InvalidParams(format!(
                "degree cap {cap} exceeds the table cap {}",
                hg.cap()
            )));
        }
        let table = hg.table();
        let mut law_idx = Vec::new();
        let mut law_first = Vec::new();
        let mut law_cdf = Vec::new();
        let mut acc = 0.0;
        for (w, m) in nu.iter() {
            law_idx.push(table.require_index(w)?);
            law_first.push(w.first());
            acc += m;
            law_cdf.push(acc);
        }
        if law_idx.is_empty() {
            return Err(Error::InvalidMeasure("empty step law".into()));
        }
        Ok(Walker {
            hg,
            law_idx,
            law_first,
            law_cdf,
            cap,
        })
    }

    fn table(&self) -> &JacobiTable {
        self.hg.table()
    }

    /// One transition: `μ ~ ν`, then `τ ~ δ_λ * δ_μ`.
    fn step_idx<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Result<usize> {
        let k = if self.law_idx.len() == 1 {
            0
        } else {
            sample_cdf(&self.law_cdf, rng.random())
        };
        let mu = self.law_idx[k];
        if s == 0 {
            return Ok(mu);
        }
        if mu == 0 {
            return Ok(s);
        }
        let table = self.table();
        if table.weight(s).first() + self.law_first[k] > self.cap {
            return Err(Error::DegreeCapExceeded {
                weight: table.weight(s).to_string(),
                cap: self.cap,
                progress: String::new(),
            });
        }
        let row = self.hg.cached_row(s, mu)?;
        if !row.row.is_admissible() {
            return Err(Error::InadmissibleRow {
                lambda: table.weight(s).to_string(),
                mu: table.weight(mu).to_string(),
                tau: row.row.min_tau.as_ref().map(|t| t.to_string()).unwrap_or_default(),
                value: row.row.min_coeff,
            });
        }
        Ok(row.taus[sample_cdf(&row.cdf, rng.random())] as usize)
    }

    /// Runs every trajectory of `cfg`, feeding `(trajectory in chunk, n,
    /// state)` to `visit` for `n = 0, …, n_steps`. Returns each chunk's
    /// accumulator with the chunk's endpoints, in chunk order.
    fn run<A, I, V>(&self, cfg: &WalkConfig, init: I, visit: V) -> Result<Vec<(A, Vec<u32>)>>
    where
        A: Send,
        I: Fn(usize) -> A + Sync,
        V: Fn(&mut A, usize, usize, usize) + Sync,
    {
        let n_chunks = cfg.n_trajectories.div_ceil(CHUNK);
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(cfg.n_trajectories);
                let mut acc = init(hi - lo);
                let mut ends = Vec::with_capacity(hi - lo);
                for t in lo..hi {
                    let mut rng = stream_rng(cfg.seed, t as u64);
                    let mut s = 0;
                    visit(&mut acc, t - lo, 0, s);
                    for n in 1..=cfg.n_steps {
                        s = self.step_idx(s, &mut rng).map_err(|e| match e {
                            Error::DegreeCapExceeded { weight, cap, .. } => Error::DegreeCapExceeded {
                                weight,
                                cap,
                                progress: format!(" (trajectory {t}, step {n})"),
                            },
                            e => e,
                        })?;
                        visit(&mut acc, t - lo, n, s);
                    }
                    ends.push(s as u32);
                }
                Ok((acc, ends))
            })
            .collect::<Vec<Result<_>>>()
            .into_iter()
            .collect()
    }
}

/// `step`: one transition of the walk from `λ` with step law `ν`, limited by
/// the table's cap.
pub fn step<R: Rng + ?Sized>(lambda: &Weight, nu: &WeightMeasure, hg: &Hypergroup, rng: &mut R) -> Result<Weight> {
    let walker = Walker::new(hg, nu, hg.cap())?;
    let s = hg.table().require_index(lambda)?;
    Ok(hg.table().weight(walker.step_idx(s, rng)?).clone())
}

struct TraceAcc {
    m_sum: Vec<f64>,
    m_sq: Vec<f64>,
    paths: Vec<Vec<u32>>,
    max_first: u32,
}

/// `simulate`: all trajectories of `cfg` from `S_0 = 0`. Aborts with
/// `DegreeCapExceeded` when a step could leave the degree cap.
pub fn simulate(cfg: &WalkConfig, hg: &Hypergroup) -> Result<WalkSample> {
    let walker = Walker::new(hg, &cfg.step_law, cfg.degree_cap)?;
    let table = hg.table();
    let moments: Vec<f64> = (0..table.len()).map(|i| table.moment(i)).collect();
    let firsts: Vec<u32> = (0..table.len()).map(|i| table.weight(i).first()).collect();
    let steps = cfg.n_steps + 1;
    let chunks = walker.run(
        cfg,
        |len| TraceAcc {
            m_sum: vec![0.0; steps],
            m_sq: vec![0.0; steps],
            paths: if cfg.record_trajectories {
                vec![Vec::with_capacity(steps); len]
            } else {
                Vec::new()
            },
            max_first: 0,
        },
        |acc, t, n, s| {
            let m = moments[s];
            acc.m_sum[n] += m;
            acc.m_sq[n] += m * m;
            acc.max_first = acc.max_first.max(firsts[s]);
            if cfg.record_trajectories {
                acc.paths[t].push(s as u32);
            }
        },
    )?;
    let mut m_sum = vec![0.0; steps];
    let mut m_sq = vec![0.0; steps];
    let mut endpoints = Vec::with_capacity(cfg.n_trajectories);
    let mut paths = Vec::new();
    let mut max_first = 0;
    for (acc, ends) in chunks {
        for n in 0..steps {
            m_sum[n] += acc.m_sum[n];
            m_sq[n] += acc.m_sq[n];
        }
        max_first = max_first.max(acc.max_first);
        endpoints.extend(ends.into_iter().map(|s| table.weight(s as usize).clone()));
        paths.extend(acc.paths);
    }
    let count = cfg.n_trajectories as f64;
    let m_trace: Vec<f64> = m_sum.iter().map(|s| s / count).collect();
    let m_var = m_sq
        .iter()
        .zip(&m_trace)
        .map(|(sq, mean)| {
            if cfg.n_trajectories > 1 {
                ((sq - count * mean * mean) / (count - 1.0)).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let trajectories = cfg.record_trajectories.then(|| {
        paths
            .into_iter()
            .map(|p| p.into_iter().map(|s| table.weight(s as usize).clone()).collect())
            .collect()
    });
    Ok(WalkSample {
        params: cfg.params,
        n_steps: cfg.n_steps,
        seed: cfg.seed,
        endpoints,
        trajectories,
        m_trace,
        m_var,
        max_first,
    })
}

/// One checkpoint of `martingale_check`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleRow {
    pub n: usize,
    pub mean: f64,
    pub expected: f64,
    pub residual: f64,
    pub se: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub sigma2: f64,
    pub n_trajectories: usize,
    pub rows: Vec<MartingaleRow>,
    pub all_within: bool,
}

/// `martingale_check`: compares the mean of `m(S_n)` with `nσ²` at each
/// checkpoint (every step when `checkpoints` is empty), flagging residuals
/// beyond four standard errors.
pub fn martingale_check(sample: &WalkSample, sigma2: f64, checkpoints: &[usize]) -> MartingaleReport {
    let count = sample.endpoints.len();
    let ns: Vec<usize> = if checkpoints.is_empty() {
        (0..=sample.n_steps).collect()
    } else {
        checkpoints.iter().copied().filter(|&n| n <= sample.n_steps).collect()
    };
    let rows: Vec<MartingaleRow> = ns
        .into_iter()
        .map(|n| {
            let mean = sample.m_trace[n];
            let expected = n as f64 * sigma2;
            let residual = (mean - expected).abs();
            let se = (sample.m_var[n] / count as f64).sqrt();
            let slack = 1e-9 * expected.abs().max(1.0);
            MartingaleRow {
                n,
                mean,
                expected,
                residual,
                se,
                flagged: residual > 4.0 * se + slack,
            }
        })
        .collect();
    MartingaleReport {
        sigma2,
        n_trajectories: count,
        all_within: rows.iter().all(|r| !r.flagged),
        rows,
    }
}

/// Settings of `clt_experiment`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltOptions {
    /// Draws from the matrix sampler for the reference (integer `p` only).
    pub reference_draws: usize,
    pub reference_seed: u64,
    /// Levels `a` of the occupancy check `P(λ₁(S_n) > a√n)`.
    pub occupancy_levels: Vec<f64>,
}

impl Default for CltOptions {
    fn default() -> Self {
        CltOptions {
            reference_draws: 100_000,
            reference_seed: 0x5eed,
            occupancy_levels: vec![2.0, 4.0, 6.0, 8.0],
        }
    }
}

/// Empirical statistic of the rescaled endpoints next to its references.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentComparison {
    pub name: String,
    pub empirical: Summary,
    /// Matrix-sampler reference.
    pub sampler: Option<Summary>,
    /// Quadrature of the density.
    pub density: Option<f64>,
}

impl MomentComparison {
    /// The preferred reference: the sampler when present.
    pub fn reference(&self) -> Option<f64> {
        self.sampler.map(|s| s.mean).or(self.density)
    }

    pub fn relative_error(&self) -> Option<f64> {
        self.reference().map(|r| (self.empirical.mean - r).abs() / r.abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub a: f64,
    /// Fraction of endpoints with `λ₁ > a√n`.
    pub fraction: f64,
    /// `σ²/(C₁a²)`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub config: WalkConfig,
    pub sigma2: f64,
    /// `1/√(nσ²)`.
    pub scale: f64,
    /// Per-coordinate means, then `E[x₁² + ⋯ + x_q²]`.
    pub moments: Vec<MomentComparison>,
    /// Kolmogorov–Smirnov distance of the rescaled `λ₁` to the limit
    /// marginal, raw and with the lattice correction (`q ≤ 2`).
    pub ks_raw: Option<f64>,
    pub ks_corrected: Option<f64>,
    pub c1: f64,
    pub occupancy: Vec<Occupancy>,
    pub max_first: u32,
    /// Rescaled endpoints.
    pub samples: Vec<Vec<f64>>,
}

/// `clt_experiment`: rescales endpoints by `1/√(nσ²)` and compares them with
/// the Laguerre ensemble `ρ_{d,p}`.
pub fn clt_experiment(cfg: &WalkConfig, hg: &Hypergroup, options: &CltOptions) -> Result<CltReport> {
    let sigma2 = hg.modified_variance(&cfg.step_law)?;
    if sigma2 <= 0.0 {
        return Err(Error::InvalidMeasure("σ² = 0: the step law is δ_0".into()));
    }
    let sample = simulate(cfg, hg)?;
    let q = cfg.params.q;
    let n = cfg.n_steps as f64;
    let scale = 1.0 / (n * sigma2).sqrt();
    let samples: Vec<Vec<f64>> = sample
        .endpoints
        .iter()
        .map(|w| w.parts().iter().map(|&v| v as f64 * scale).collect())
        .collect();

    let ens = LaguerreEnsemble::new(&cfg.params)?;
    let reference: Option<Vec<Vec<f64>>> = if cfg.params.p_is_integer() && options.reference_draws > 1 {
        Some(
            (0..options.reference_draws)
                .into_par_iter()
                .map(|i| ens.sample(&mut stream_rng(options.reference_seed, i as u64)).map(|x| x.coords))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let stat = |j: usize, x: &[f64]| -> f64 {
        if j < q {
            x[j]
        } else {
            x.iter().map(|v| v * v).sum()
        }
    };
    let moments = (0..=q)
        .map(|j| MomentComparison {
            name: if j < q {
                format!("E[x{}]", j + 1)
            } else {
                "E[|x|^2]".into()
            },
            empirical: Summary::of(samples.iter().map(|x| stat(j, x))),
            sampler: reference.as_ref().map(|r| Summary::of(r.iter().map(|x| stat(j, x)))),
            density: (q <= 3).then(|| ens.expectation(|x| stat(j, x))),
        })
        .collect();

    let (ks_raw, ks_corrected) = if q <= 2 {
        let firsts: Vec<f64> = samples.iter().map(|x| x[0]).collect();
        let cdf = |t: f64| ens.lambda1_cdf(t);
        (Some(ks_distance(&firsts, cdf)), Some(ks_distance_lattice(&firsts, cdf)))
    } else {
        (None, None)
    };

    let c1 = hg.moment_bounds().c1;
    let occupancy = options
        .occupancy_levels
        .iter()
        .map(|&a| {
            let limit = a * n.sqrt();
            let hits = sample.endpoints.iter().filter(|w| w.first() as f64 > limit).count();
            Occupancy {
                a,
                fraction: hits as f64 / sample.endpoints.len() as f64,
                bound: sigma2 / (c1 * a * a),
            }
        })
        .collect();

    Ok(CltReport {
        config: cfg.clone(),
        sigma2,
        scale,
        moments,
        ks_raw,
        ks_corrected,
        c1,
        occupancy,
        max_first: sample.max_first,
        samples,
    })
}

/// Cross-trajectory quantiles of `max_{c ≤ n < 2c} ‖S_n‖/n^ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SllnCheckpoint {
    pub n: usize,
    pub block_end: usize,
    pub median: f64,
    pub q90: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SllnReport {
    pub epsilon: f64,
    pub n0: usize,
    pub checkpoints: Vec<SllnCheckpoint>,
    /// Medians strictly decrease from one checkpoint to the next.
    pub median_decreasing: bool,
}

/// `slln_check`: for checkpoints `c = n₀, 2n₀, 4n₀, … ≤ n_steps`, the
/// per-trajectory maximum of `‖S_n‖/n^ε` over the block `c ≤ n < 2c`
/// (truncated at `n_steps`), summarized across trajectories.
pub fn slln_check(cfg: &WalkConfig, hg: &Hypergroup, epsilon: f64, n0: usize) -> Result<SllnReport> {
    if epsilon <= 0.5 {
        return Err(Error::InvalidParams(format!("ε must exceed 1/2, got {epsilon}")));
    }
    if n0 == 0 || n0 > cfg.n_steps {
        return Err(Error::InvalidParams(format!("n₀ = {n0} outside 1..={}", cfg.n_steps)));
    }
    let mut starts = Vec::new();
    let mut c = n0;
    while c <= cfg.n_steps {
        starts.push(c);
        c *= 2;
    }
    let ends: Vec<usize> = starts.iter().map(|&c| (2 * c - 1).min(cfg.n_steps)).collect();
    let mut block_of = vec![usize::MAX; cfg.n_steps + 1];
    for (b, (&s, &e)) in starts.iter().zip(&ends).enumerate() {
        block_of[s..=e].fill(b);
    }
    let walker = Walker::new(hg, &cfg.step_law, cfg.degree_cap)?;
    let table = hg.table();
    let norms: Vec<f64> = (0..table.len()).map(|i| table.weight(i).norm()).collect();
    let nb = starts.len();
    let chunks = walker.run(
        cfg,
        |len| vec![0.0f64; len * nb],
        |acc, t, n, s| {
            let b = block_of[n];
            if b != usize::MAX {
                let v = norms[s] / (n as f64).powf(epsilon);
                let slot = &mut acc[t * nb + b];
                *slot = slot.max(v);
            }
        },
    )?;
    let all: Vec<f64> = chunks.into_iter().flat_map(|(a, _)| a).collect();
    let checkpoints: Vec<SllnCheckpoint> = (0..nb)
        .map(|b| {
            let col: Vec<f64> = all.iter().skip(b).step_by(nb).copied().collect();
            SllnCheckpoint {
                n: starts[b],
                block_end: ends[b],
                median: quantile(&col, 0.5),
                q90: quantile(&col, 0.9),
                max: col.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect();
    let median_decreasing = checkpoints.windows(2).all(|w| w[1].median < w[0].median);
    Ok(SllnReport {
        epsilon,
        n0,
        checkpoints,
        median_decreasing,
    })
}

/// Settings of `mehler_heine_experiment`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MehlerHeineOptions {
    /// Monte Carlo samples per Bessel value for `q ≥ 2`.
    pub mc_samples: usize,
    pub seed: u64,
    /// Largest `nλ₁` for `q ≥ 2`.
    pub degree_cap: u32,
}

impl Default for MehlerHeineOptions {
    fn default() -> Self {
        MehlerHeineOptions {
            mc_samples: 1_000_000,
            seed: 1,
            degree_cap: 64,
        }
    }
}

/// `φ̃_λ(x)` at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesselReference {
    pub x: Vec<f64>,
    pub value: f64,
    pub stderr: f64,
}

/// Errors `|R_{nλ}(x/n) − φ̃_λ(x)|` for one `n` across the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MehlerHeineRow {
    pub n: u32,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub sup_error: f64,
    /// Bessel standard error at the point of the supremum.
    pub sup_stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MehlerHeineReport {
    pub params: ModelParams,
    pub lambda: Weight,
    pub bessel: Vec<BesselReference>,
    pub rows: Vec<MehlerHeineRow>,
    /// Least-squares slope of `log sup_error` against `log n`.
    pub slope: f64,
}

impl MehlerHeineReport {
    pub fn row(&self, n: u32) -> Option<&MehlerHeineRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    /// `sup_error(n) / sup_error(2n)` for each `n` with `2n` also present.
    pub fn doubling_ratios(&self) -> Vec<(u32, f64)> {
        self.rows
            .iter()
            .filter_map(|r| self.row(2 * r.n).map(|s| (r.n, s.sup_error / r.sup_error)))
            .collect()
    }
}

/// `mehler_heine_experiment`: `err(n, x) = |R_{nλ}(x/n) − φ̃_λ(x)|` over the
/// grid, with the Bessel reference from the series at rank one and from
/// Monte Carlo otherwise (point `i` on stream `(seed, i)`).
pub fn mehler_heine_experiment(
    lambda: &Weight,
    x_grid: &[ChamberPoint],
    params: &ModelParams,
    n_list: &[u32],
    options: &MehlerHeineOptions,
) -> Result<MehlerHeineReport> {
    params.require_rank(lambda)?;
    if n_list.is_empty() || x_grid.is_empty() {
        return Err(Error::InvalidParams("empty n list or x grid".into()));
    }
    let n_max = *n_list.iter().max().expect("non-empty");
    for x in x_grid {
        if x.rank() != params.q {
            return Err(Error::RankMismatch {
                expected: params.q,
                found: x.rank(),
            });
        }
        let n_min = *n_list.iter().min().expect("non-empty");
        ChamberPoint::alcove(x.coords.iter().map(|v| v / n_min as f64).collect())?;
    }
    let lam: Vec<f64> = lambda.parts().iter().map(|&v| v as f64).collect();
    let bessel: Vec<BesselReference> = if params.q == 1 {
        x_grid
            .iter()
            .map(|x| {
                Ok(BesselReference {
                    x: x.coords.clone(),
                    value: bessel_eval_rank_one(lam[0], x.coords[0], params)?,
                    stderr: 0.0,
                })
            })
            .collect::<Result<_>>()?
    } else {
        let lp = ChamberPoint::chamber(lam.clone())?;
        x_grid
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut rng = stream_rng(options.seed, i as u64);
                let est = bessel_eval_mc(&lp, x, params, options.mc_samples, &mut rng)?;
                Ok(BesselReference {
                    x: x.coords.clone(),
                    value: est.estimate,
                    stderr: est.stderr,
                })
            })
            .collect::<Result<_>>()?
    };

    let hg = if params.q == 1 {
        None
    } else {
        let top = lambda.first() * n_max;
        if top > options.degree_cap {
            return Err(Error::DegreeCapExceeded {
                weight: lambda.scaled(n_max).to_string(),
                cap: options.degree_cap,
                progress: String::new(),
            });
        }
        Some(Hypergroup::build(params, top)?)
    };
    let value = |n: u32, x: &[f64]| -> Result<f64> {
        let y: Vec<f64> = x.iter().map(|v| v / n as f64).collect();
        match &hg {
            None => {
                let k = (lambda.first() * n / 2) as usize;
                Ok(rank_one_values(k, params, y[0])?[k])
            }
            Some(hg) => {
                let idx = hg.table().require_index(&lambda.scaled(n))?;
                Ok(hg.table().eval(idx, &y))
            }
        }
    };

    let mut rows = Vec::new();
    for &n in n_list {
        let mut values = Vec::with_capacity(x_grid.len());
        let mut errors = Vec::with_capacity(x_grid.len());
        for (x, b) in x_grid.iter().zip(&bessel) {
            let v = value(n, &x.coords)?;
            values.push(v);
            errors.push((v - b.value).abs());
        }
        let (arg, &sup_error) = errors
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty grid");
        let sup_stderr = bessel[arg].stderr;
        if sup_stderr > sup_error / 3.0 {
            return Err(Error::BesselUncertain {
                n,
                stderr: sup_stderr,
                error: sup_error,
            });
        }
        rows.push(MehlerHeineRow {
            n,
            values,
            errors,
            sup_error,
            sup_stderr,
        });
    }
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.sup_error > 0.0)
        .map(|r| ((r.n as f64).ln(), r.sup_error.ln()))
        .collect();
    let slope = if fit.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = fit.into_iter().unzip();
        slope(&xs, &ys)
    } else {
        f64::NAN
    };
    Ok(MehlerHeineReport {
        params: *params,
        lambda: lambda.clone(),
        bessel,
        rows,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chebyshev() -> ModelParams {
        ModelParams::new(1, 1.0, 1).unwrap()
    }

    fn w(parts: &[i64]) -> Weight {
        Weight::new(parts).unwrap()
    }

    #[test]
    fn single_steps_match_linearization() {
        let hg = Hypergroup::build(&chebyshev(), 12).unwrap();
        let nu = WeightMeasure::dirac(w(&[2]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(step(&w(&[0]), &nu, &hg, &mut rng).unwrap(), w(&[2]));
        let mut up = 0;
        for _ in 0..4000 {
            let t = step(&w(&[4]), &nu, &hg, &mut rng).unwrap();
            assert!(t == w(&[2]) || t == w(&[6]));
            up += (t == w(&[6])) as usize;
        }
        // ½ ± 4 standard errors
        assert!((up as f64 / 4000.0 - 0.5).abs() < 4.0 * 0.5 / 4000f64.sqrt());
    }

    #[test]
    fn zero_step_law_stays_at_the_origin() {
        let params = ModelParams::new(2, 2.0, 2).unwrap();
        let hg = Hypergroup::build(&params, 4).unwrap();
        let cfg = WalkConfig::new(params, WeightMeasure::dirac(Weight::zero(2)), 20, 50, 1).unwrap();
        let s = simulate(&cfg, &hg).unwrap();
        assert!(s.endpoints.iter().all(Weight::is_zero));
        let report = martingale_check(&s, 0.0, &[]);
        assert!(report.all_within);
        assert!(report.rows.iter().all(|r| r.residual == 0.0));
    }

    #[test]
    fn reflected_walk_returns_with_probability_one_half() {
        let hg = Hypergroup::build(&chebyshev(), 8).unwrap();
        let cfg = WalkConfig::new(chebyshev(), WeightMeasure::dirac(w(&[2])), 2, 20_000, 9).unwrap();
        let s = simulate(&cfg, &hg).unwrap();
        let back = s.endpoints.iter().filter(|e| e.is_zero()).count() as f64 / 20_000.0;
        assert!((back - 0.5).abs() < 4.0 * 0.5 / 20_000f64.sqrt(), "{back}");
    }

    #[test]
    fn degree_cap_aborts() {
        let hg = Hypergroup::build(&chebyshev(), 20).unwrap();
        let cfg = WalkConfig::new(chebyshev(), WeightMeasure::dirac(w(&[2])), 50, 100, 1)
            .unwrap()
            .with_degree_cap(4);
        assert!(matches!(simulate(&cfg, &hg), Err(Error::DegreeCapExceeded { cap: 4, .. })));
        let too_big = cfg.clone().with_degree_cap(40);
        assert!(matches!(simulate(&too_big, &hg), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn default_cap_is_even_and_never_below_one_step() {
        let nu = WeightMeasure::dirac(w(&[2]));
        assert_eq!(default_degree_cap(1, &nu), 2);
        assert_eq!(default_degree_cap(2000, &nu), 538);
        for n in 1..200 {
            let c = default_degree_cap(n, &nu);
            assert_eq!(c % 2, 0);
            assert!(c >= 2 && c as usize <= 2 * n);
        }
    }

    #[test]
    fn simulation_is_reproducible_and_chunk_independent() {
        let params = ModelParams::new(2, 3.0, 1).unwrap();
        let hg = Hypergroup::build(&params, 40).unwrap();
        let nu = WeightMeasure::from_pairs([(w(&[2]), 0.5), (w(&[4]), 0.5)]).unwrap();
        let cfg = WalkConfig::new(params, nu, 10, 600, 5)
            .unwrap()
            .with_degree_cap(40)
            .with_trajectories(true);
        let a = simulate(&cfg, &hg).unwrap();
        let b = simulate(&cfg, &hg).unwrap();
        assert_eq!(a, b);
        let paths = a.trajectories.as_ref().unwrap();
        assert_eq!(paths.len(), 600);
        assert!(paths.iter().zip(&a.endpoints).all(|(p, e)| p.len() == 11 && p[10] == *e));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| simulate(&cfg, &hg).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn slln_statistic_is_zero_for_the_trivial_walk() {
        let hg = Hypergroup::build(&chebyshev(), 4).unwrap();
        let cfg = WalkConfig::new(chebyshev(), WeightMeasure::dirac(w(&[0])), 64, 10, 1).unwrap();
        let r = slln_check(&cfg, &hg, 0.75, 4).unwrap();
        assert_eq!(r.checkpoints.iter().map(|c| c.n).collect::<Vec<_>>(), vec![4, 8, 16, 32, 64]);
        assert!(r.checkpoints.iter().all(|c| c.max == 0.0));
        assert!(slln_check(&cfg, &hg, 0.5, 4).is_err());
    }

    #[test]
    fn mehler_heine_vanishes_at_the_origin_and_decays() {
        let params = ModelParams::new(1, 3.0, 1).unwrap();
        let grid: Vec<ChamberPoint> = [0.0, 0.4, 0.8, 1.2]
            .iter()
            .map(|&x| ChamberPoint::chamber(vec![x]).unwrap())
            .collect();
        let r = mehler_heine_experiment(&w(&[2]), &grid, &params, &[4, 8, 16, 32, 64], &Default::default()).unwrap();
        assert!(r.rows.iter().all(|row| row.errors[0] < 1e-15));
        assert!(r.slope < -0.9, "{}", r.slope);
        for (n, ratio) in r.doubling_ratios() {
            if n >= 16 {
                assert!((0.35..=0.65).contains(&ratio), "{n}: {ratio}");
            }
        }
    }
}
