use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use grasswalk_core::bessel::{
    bessel_eval_mc, bessel_eval_rank_one, gaussian_transform_residual, stream_rng, LaguerreEnsemble,
};
use grasswalk_core::hypergroup::{Hypergroup, WeightMeasure};
use grasswalk_core::polynomials::{jacobi_eval, jacobi_eval_mc, jacobi_eval_rank_one, jacobi_expand, ModelParams};
use grasswalk_core::quadrature::resolved_grid;
use grasswalk_core::stats::Summary;
use grasswalk_core::walk::{
    clt_experiment, martingale_check, mehler_heine_experiment, simulate, slln_check, CltOptions,
    MehlerHeineOptions, WalkConfig,
};
use grasswalk_core::weights::{ChamberPoint, Weight};

use crate::config;
use crate::output::{headers, num, out_dir, write_csv, write_json};

pub enum Outcome {
    Pass,
    ToleranceFail,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::ToleranceFail
        }
    }
}

pub struct Context {
    pub cache_dir: PathBuf,
    pub out_dir: Option<PathBuf>,
}

impl Context {
    fn hypergroup(&self, params: &ModelParams, cap: u32) -> Result<Hypergroup> {
        Ok(Hypergroup::open(params, cap, Some(&self.cache_dir))?)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ModelArgs {
    /// Real dimension of the division algebra (1, 2 or 4).
    #[arg(long)]
    pub d: u32,
    #[arg(long)]
    pub p: f64,
    /// Rank.
    #[arg(long)]
    pub q: usize,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams> {
        Ok(ModelParams::new(self.d, self.p, self.q)?)
    }
}

fn parse_reals(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("invalid number {t:?}")))
        .collect()
}

fn parse_points(s: &str) -> Result<Vec<ChamberPoint>> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| Ok(ChamberPoint::chamber(parse_reals(t)?)?))
        .collect()
}

fn parse_list(s: &str) -> Result<Vec<u32>> {
    s.split(',')
        .map(|t| t.trim().parse::<u32>().with_context(|| format!("invalid integer {t:?}")))
        .collect()
}

fn weight_cells(w: &Weight) -> impl Iterator<Item = String> + '_ {
    w.parts().iter().map(|v| v.to_string())
}

/// Writes `config.txt` and `<name>.json` when an output directory is set and
/// prints the one-line summary.
fn finish<A: Serialize>(ctx: &Context, name: &str, args: &A, report: Value, summary: Value, pass: bool) -> Result<Outcome> {
    let echo = config::echo(args);
    if let Some(dir) = out_dir(&ctx.out_dir)? {
        std::fs::write(dir.join("config.txt"), config::render(&echo))?;
        let cfg: serde_json::Map<String, Value> = echo.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        write_json(
            &dir.join(format!("{name}.json")),
            &json!({ "command": name, "config": cfg, "pass": pass, "report": report }),
        )?;
    }
    let mut line = json!({ "command": name, "pass": pass });
    if let (Value::Object(l), Value::Object(s)) = (&mut line, summary) {
        l.extend(s);
    }
    println!("{line}");
    Ok(Outcome::from_pass(pass))
}

fn csv_path(ctx: &Context, file: &str) -> Result<Option<PathBuf>> {
    Ok(out_dir(&ctx.out_dir)?.map(|d: &Path| d.join(file)))
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Jacobi,
    Bessel,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Closed forms at rank one, the expansion (Jacobi) or Monte Carlo
    /// (Bessel) otherwise.
    Auto,
    Mc,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Comma-separated parts of λ.
    #[arg(long)]
    pub lambda: String,
    /// Comma-separated coordinates of x.
    #[arg(long)]
    pub x: String,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: Method,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

pub fn eval(_ctx: &Context, a: &EvalArgs) -> Result<Outcome> {
    let params = a.model.params()?;
    let coords = parse_reals(&a.x)?;
    let mut rng = stream_rng(a.seed, 0);
    let (value, stderr) = match (a.kind, a.method) {
        (Kind::Jacobi, Method::Auto) => {
            let lambda: Weight = a.lambda.parse()?;
            let x = ChamberPoint::alcove(coords)?;
            if params.q == 1 {
                (jacobi_eval_rank_one(&lambda, &params, x.coords[0])?, None)
            } else {
                let grid = resolved_grid(params.q, lambda.first(), &params.k())?;
                (jacobi_eval(&jacobi_expand(&lambda, &params, &grid)?, &x), None)
            }
        }
        (Kind::Jacobi, Method::Mc) => {
            let lambda: Weight = a.lambda.parse()?;
            let x = ChamberPoint::alcove(coords)?;
            let e = jacobi_eval_mc(&lambda, &params, &x, a.samples, &mut rng)?;
            (e.estimate, Some(e.stderr))
        }
        (Kind::Bessel, method) => {
            let lambda = ChamberPoint::chamber(parse_reals(&a.lambda)?)?;
            let x = ChamberPoint::chamber(coords)?;
            if params.q == 1 && matches!(method, Method::Auto) {
                (bessel_eval_rank_one(lambda.coords[0], x.coords[0], &params)?, None)
            } else {
                let e = bessel_eval_mc(&lambda, &x, &params, a.samples, &mut rng)?;
                (e.estimate, Some(e.stderr))
            }
        }
    };
    let line = match stderr {
        Some(s) => json!({ "value": value, "stderr": s }),
        None => json!({ "value": value }),
    };
    println!("{line}");
    Ok(Outcome::Pass)
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct LinearizeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub lambda: Weight,
    #[arg(long)]
    pub mu: Weight,
}

pub fn linearize(ctx: &Context, a: &LinearizeArgs) -> Result<Outcome> {
    let params = a.model.params()?;
    let hg = ctx.hypergroup(&params, a.lambda.first() + a.mu.first())?;
    let row = hg.row(&a.lambda, &a.mu)?;
    let mut header = headers("tau", params.q);
    header.push("coefficient".into());
    let rows: Vec<Vec<String>> = row
        .entries
        .iter()
        .map(|(t, c)| weight_cells(t).chain([num(*c)]).collect())
        .collect();
    match csv_path(ctx, "linearize.csv")? {
        Some(path) => write_csv(&path, &header, rows)?,
        None => {
            println!("{}", header.join(","));
            for r in rows {
                println!("{}", r.join(","));
            }
            return Ok(Outcome::Pass);
        }
    }
    finish(
        ctx,
        "linearize",
        a,
        serde_json::to_value(&row)?,
        json!({ "entries": row.entries.len(), "min_coeff": row.min_coeff, "admissible": row.is_admissible() }),
        true,
    )
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct WalkArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Step law as `weight:mass` pairs separated by `;` (parts by `,`).
    #[arg(long)]
    pub nu: String,
    /// Number of steps.
    #[arg(long)]
    pub n: usize,
    /// Number of trajectories.
    #[arg(long)]
    pub traj: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub degree_cap: Option<u32>,
    /// Also write every visited state.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub record_trajectories: bool,
    /// Steps at which the martingale identity is checked (default: powers of ten).
    #[arg(long)]
    pub checkpoints: Option<String>,
}

fn walk_config(model: &ModelArgs, nu: &str, n: usize, traj: usize, seed: u64, cap: Option<u32>) -> Result<WalkConfig> {
    let params = model.params()?;
    let nu = WeightMeasure::parse(nu, params.q)?;
    let mut cfg = WalkConfig::new(params, nu, n, traj, seed)?;
    if let Some(c) = cap {
        cfg = cfg.with_degree_cap(c);
    }
    Ok(cfg)
}

pub fn walk(ctx: &Context, a: &WalkArgs) -> Result<Outcome> {
    let cfg = walk_config(&a.model, &a.nu, a.n, a.traj, a.seed, a.degree_cap)?.with_trajectories(a.record_trajectories);
    let hg = ctx.hypergroup(&cfg.params, cfg.degree_cap)?;
    let sample = simulate(&cfg, &hg)?;
    let sigma2 = hg.modified_variance(&cfg.step_law)?;
    let checkpoints: Vec<usize> = match &a.checkpoints {
        Some(s) => parse_list(s)?.into_iter().map(|v| v as usize).collect(),
        None => std::iter::successors(Some(1usize), |&c| Some(c * 10)).take_while(|&c| c <= a.n).collect(),
    };
    let mart = martingale_check(&sample, sigma2, &checkpoints);
    let q = cfg.params.q;

    let mut counts: std::collections::BTreeMap<&Weight, usize> = Default::default();
    for e in &sample.endpoints {
        *counts.entry(e).or_default() += 1;
    }
    let mut top: Vec<(&Weight, usize)> = counts.into_iter().collect();
    top.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(y.0)));
    let histogram: Vec<Value> = top
        .iter()
        .take(10)
        .map(|(w, c)| json!([w.to_string(), *c as f64 / a.traj as f64]))
        .collect();

    if let Some(dir) = out_dir(&ctx.out_dir)? {
        let mut header = vec!["trajectory".to_string()];
        header.extend(headers("l", q));
        write_csv(
            &dir.join("endpoints.csv"),
            &header,
            sample
                .endpoints
                .iter()
                .enumerate()
                .map(|(i, w)| std::iter::once(i.to_string()).chain(weight_cells(w)).collect()),
        )?;
        let header: Vec<String> = ["n", "mean_m", "var_m", "expected"].iter().map(|s| s.to_string()).collect();
        write_csv(
            &dir.join("m_trace.csv"),
            &header,
            (0..=a.n).map(|n| {
                vec![
                    n.to_string(),
                    num(sample.m_trace[n]),
                    num(sample.m_var[n]),
                    num(n as f64 * sigma2),
                ]
            }),
        )?;
        if let Some(paths) = &sample.trajectories {
            let mut header = vec!["trajectory".to_string(), "n".to_string()];
            header.extend(headers("l", q));
            write_csv(
                &dir.join("trajectories.csv"),
                &header,
                paths.iter().enumerate().flat_map(|(i, p)| {
                    p.iter().enumerate().map(move |(n, w)| {
                        [i.to_string(), n.to_string()].into_iter().chain(weight_cells(w)).collect()
                    })
                }),
            )?;
        }
    }
    finish(
        ctx,
        "walk",
        a,
        json!({
            "sigma2": sigma2,
            "degree_cap": cfg.degree_cap,
            "max_first": sample.max_first,
            "histogram": histogram,
            "martingale": mart,
        }),
        json!({ "histogram": histogram, "sigma2": sigma2, "max_first": sample.max_first, "martingale_within": mart.all_within }),
        mart.all_within,
    )
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CltArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub nu: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub traj: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub degree_cap: Option<u32>,
    /// Matrix-sampler draws for the reference (integer p).
    #[arg(long, default_value_t = 100_000)]
    pub reference_draws: usize,
    #[arg(long, default_value_t = 0x5eed)]
    pub reference_seed: u64,
    /// Bound on the lattice-corrected KS distance (rank one).
    #[arg(long, default_value_t = 0.02)]
    pub ks_tol: f64,
    /// Bound on the relative moment errors (rank two and higher).
    #[arg(long, default_value_t = 0.1)]
    pub moment_tol: f64,
}

pub fn clt(ctx: &Context, a: &CltArgs) -> Result<Outcome> {
    let cfg = walk_config(&a.model, &a.nu, a.n, a.traj, a.seed, a.degree_cap)?;
    let hg = ctx.hypergroup(&cfg.params, cfg.degree_cap)?;
    let options = CltOptions {
        reference_draws: a.reference_draws,
        reference_seed: a.reference_seed,
        ..Default::default()
    };
    let report = clt_experiment(&cfg, &hg, &options)?;
    let q = cfg.params.q;
    let rel: Vec<Option<f64>> = report.moments.iter().map(|m| m.relative_error()).collect();
    let pass = if q == 1 {
        report.ks_corrected.is_some_and(|k| k < a.ks_tol)
    } else {
        rel.iter().all(|r| r.is_some_and(|r| r <= a.moment_tol))
    };
    if let Some(dir) = out_dir(&ctx.out_dir)? {
        let mut header = vec!["trajectory".to_string()];
        header.extend(headers("x", q));
        write_csv(
            &dir.join("samples.csv"),
            &header,
            report
                .samples
                .iter()
                .enumerate()
                .map(|(i, x)| std::iter::once(i.to_string()).chain(x.iter().map(|v| num(*v))).collect()),
        )?;
    }
    let mut body = serde_json::to_value(&report)?;
    if let Value::Object(m) = &mut body {
        m.remove("samples");
    }
    let moments: Vec<Value> = report
        .moments
        .iter()
        .zip(&rel)
        .map(|(m, r)| json!([m.name, m.empirical.mean, m.reference(), r]))
        .collect();
    finish(
        ctx,
        "clt",
        a,
        body,
        json!({ "ks_raw": report.ks_raw, "ks_corrected": report.ks_corrected, "moments": moments }),
        pass,
    )
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SllnArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub nu: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub traj: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub degree_cap: Option<u32>,
    #[arg(long)]
    pub epsilon: f64,
    /// First checkpoint; later ones double it.
    #[arg(long)]
    pub n0: usize,
}

pub fn slln(ctx: &Context, a: &SllnArgs) -> Result<Outcome> {
    let cfg = walk_config(&a.model, &a.nu, a.n, a.traj, a.seed, a.degree_cap)?;
    let hg = ctx.hypergroup(&cfg.params, cfg.degree_cap)?;
    let report = slln_check(&cfg, &hg, a.epsilon, a.n0)?;
    if let Some(path) = csv_path(ctx, "slln.csv")? {
        let header: Vec<String> = ["n", "block_end", "median", "q90", "max"].iter().map(|s| s.to_string()).collect();
        write_csv(
            &path,
            &header,
            report.checkpoints.iter().map(|c| {
                vec![
                    c.n.to_string(),
                    c.block_end.to_string(),
                    num(c.median),
                    num(c.q90),
                    num(c.max),
                ]
            }),
        )?;
    }
    let medians: Vec<f64> = report.checkpoints.iter().map(|c| c.median).collect();
    let pass = report.median_decreasing;
    finish(ctx, "slln", a, serde_json::to_value(&report)?, json!({ "medians": medians }), pass)
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct MehlerHeineArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub lambda: Weight,
    /// Points separated by `;`, coordinates by `,`.
    #[arg(long)]
    pub x_grid: String,
    #[arg(long, default_value = "4,8,16,32,64")]
    pub n_list: String,
    /// Monte Carlo samples per Bessel value (rank two and higher).
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Largest nλ₁ for rank two and higher.
    #[arg(long, default_value_t = 64)]
    pub degree_cap: u32,
    /// Largest acceptable fitted log-log slope.
    #[arg(long, default_value_t = -0.9, allow_negative_numbers = true)]
    pub max_slope: f64,
}

pub fn mehler_heine(ctx: &Context, a: &MehlerHeineArgs) -> Result<Outcome> {
    let params = a.model.params()?;
    let grid = parse_points(&a.x_grid)?;
    let n_list = parse_list(&a.n_list)?;
    let options = MehlerHeineOptions {
        mc_samples: a.samples,
        seed: a.seed,
        degree_cap: a.degree_cap,
    };
    let report = mehler_heine_experiment(&a.lambda, &grid, &params, &n_list, &options)?;
    if let Some(path) = csv_path(ctx, "mehler_heine.csv")? {
        let mut header = vec!["n".to_string()];
        header.extend(headers("x", params.q));
        header.extend(["value", "bessel", "bessel_stderr", "err"].iter().map(|s| s.to_string()));
        let rows = report.rows.iter().flat_map(|r| {
            report.bessel.iter().enumerate().map(move |(i, b)| {
                std::iter::once(r.n.to_string())
                    .chain(b.x.iter().map(|v| num(*v)))
                    .chain([num(r.values[i]), num(b.value), num(b.stderr), num(r.errors[i])])
                    .collect()
            })
        });
        write_csv(&path, &header, rows)?;
    }
    let sup: Vec<Value> = report.rows.iter().map(|r| json!([r.n, r.sup_error])).collect();
    let pass = report.slope <= a.max_slope;
    finish(
        ctx,
        "mehler-heine",
        a,
        serde_json::to_value(&report)?,
        json!({ "slope": report.slope, "sup_error": sup }),
        pass,
    )
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct LaguerreArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Matrix-sampler draws (integer p only).
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

pub fn laguerre(ctx: &Context, a: &LaguerreArgs) -> Result<Outcome> {
    use rayon::prelude::*;
    let params = a.model.params()?;
    let q = params.q;
    let ens = LaguerreEnsemble::new(&params)?;
    let draws: Option<Vec<Vec<f64>>> = if params.p_is_integer() && a.draws > 1 {
        Some(
            (0..a.draws)
                .into_par_iter()
                .map(|i| ens.sample(&mut stream_rng(a.seed, i as u64)).map(|x| x.coords))
                .collect::<std::result::Result<_, _>>()?,
        )
    } else {
        None
    };
    let mut pass = true;
    let mut moments = Vec::new();
    for j in 0..=q {
        let stat = |x: &[f64]| if j < q { x[j] } else { x.iter().map(|v| v * v).sum() };
        let density = ens.expectation(stat);
        let sampler = draws.as_ref().map(|d| Summary::of(d.iter().map(|x| stat(x))));
        if let Some(s) = &sampler {
            pass &= (s.mean - density).abs() <= 4.0 * s.se + 1e-9;
        }
        let name = if j < q { format!("E[x{}]", j + 1) } else { "E[|x|^2]".to_string() };
        moments.push(json!({ "name": name, "density": density, "sampler": sampler }));
    }
    if let (Some(d), Some(path)) = (&draws, csv_path(ctx, "laguerre.csv")?) {
        let mut header = vec!["draw".to_string()];
        header.extend(headers("x", q));
        write_csv(
            &path,
            &header,
            d.iter()
                .enumerate()
                .map(|(i, x)| std::iter::once(i.to_string()).chain(x.iter().map(|v| num(*v))).collect()),
        )?;
    }
    let report = json!({ "normalization": ens.normalization(), "moments": moments });
    finish(ctx, "laguerre", a, report.clone(), report, pass)
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct AdmissibleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub nu: String,
    /// Rows δ_λ * δ_μ are scanned for μ₁ up to this cap.
    #[arg(long)]
    pub degree_cap: u32,
}

pub fn admissible(ctx: &Context, a: &AdmissibleArgs) -> Result<Outcome> {
    let params = a.model.params()?;
    let nu = WeightMeasure::parse(&a.nu, params.q)?;
    let hg = ctx.hypergroup(&params, a.degree_cap + nu.max_first())?;
    let report = hg.check_admissible(&nu, a.degree_cap)?;
    let pass = report.admissible_up_to_cap;
    finish(
        ctx,
        "admissible",
        a,
        serde_json::to_value(&report)?,
        json!({ "rows_checked": report.rows_checked, "min_coeff": report.min_coeff }),
        pass,
    )
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GaussianArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Comma-separated coordinates of λ.
    #[arg(long)]
    pub lambda: String,
    /// Ensemble draws.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Bessel samples per draw.
    #[arg(long, default_value_t = 10_000)]
    pub inner: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Passes when the residual is within this many standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub sigmas: f64,
}

pub fn gaussian(ctx: &Context, a: &GaussianArgs) -> Result<Outcome> {
    let params = a.model.params()?;
    let lambda = ChamberPoint::chamber(parse_reals(&a.lambda)?)?;
    let report = gaussian_transform_residual(&lambda, &params, a.samples, a.inner, a.seed)?;
    let pass = report.within(a.sigmas);
    finish(
        ctx,
        "gaussian",
        a,
        serde_json::to_value(&report)?,
        json!({ "target": report.target, "estimate": report.estimate, "stderr": report.stderr }),
        pass,
    )
}
