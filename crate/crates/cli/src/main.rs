mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use commands::Outcome;

#[derive(Parser, Debug)]
#[command(name = "grasswalk", version, about = "Jacobi polynomials, Bessel functions and random walks on dominant weights")]
#[command(args_override_self = true)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Coefficient table cache (default: $GRASSWALK_CACHE, else ./.cache/coeffs).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Flat key=value file with the subcommand's settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for CSV/JSON outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate a Jacobi polynomial or a Bessel function.
    Eval(commands::EvalArgs),
    /// Linearization coefficients of R_λ R_μ.
    Linearize(commands::LinearizeArgs),
    /// Simulate the walk and check the martingale identity.
    Walk(commands::WalkArgs),
    /// Central limit theorem experiment.
    Clt(commands::CltArgs),
    /// Strong-law statistic ‖S_n‖/n^ε.
    Slln(commands::SllnArgs),
    /// Error table |R_{nλ}(x/n) − φ̃_λ(x)|.
    MehlerHeine(commands::MehlerHeineArgs),
    /// Draws and moments of the Laguerre ensemble.
    Laguerre(commands::LaguerreArgs),
    /// Scan linearization rows of a step law for negative coefficients.
    Admissible(commands::AdmissibleArgs),
    /// Gaussian transform identity of the Bessel functions.
    Gaussian(commands::GaussianArgs),
}

const SUBCOMMANDS: &[&str] = &[
    "eval",
    "linearize",
    "walk",
    "clt",
    "slln",
    "mehler-heine",
    "laguerre",
    "admissible",
    "gaussian",
];

fn error_json(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn parse() -> Result<Cli, ExitCode> {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::splice_config(&argv, SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{}", error_json("Config", &format!("{e:#}")));
            return Err(ExitCode::from(1));
        }
    };
    let matches = Cli::command().try_get_matches_from(&argv);
    match matches.and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => Ok(cli),
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            Err(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("{}", error_json("Usage", e.to_string().trim()));
            Err(ExitCode::from(1))
        }
    }
}

fn main() -> ExitCode {
    let cli = match parse() {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", error_json("Threads", &e.to_string()));
            return ExitCode::from(1);
        }
    }
    let ctx = commands::Context {
        cache_dir: cli
            .cache_dir
            .or_else(|| std::env::var_os("GRASSWALK_CACHE").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("./.cache/coeffs")),
        out_dir: cli.out_dir,
    };
    let result = match &cli.command {
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Linearize(a) => commands::linearize(&ctx, a),
        Command::Walk(a) => commands::walk(&ctx, a),
        Command::Clt(a) => commands::clt(&ctx, a),
        Command::Slln(a) => commands::slln(&ctx, a),
        Command::MehlerHeine(a) => commands::mehler_heine(&ctx, a),
        Command::Laguerre(a) => commands::laguerre(&ctx, a),
        Command::Admissible(a) => commands::admissible(&ctx, a),
        Command::Gaussian(a) => commands::gaussian(&ctx, a),
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::ToleranceFail) => ExitCode::from(2),
        Err(e) => {
            let kind = match e.downcast_ref::<grasswalk_core::Error>() {
                Some(core) => variant_name(core),
                None => "Io".to_string(),
            };
            eprintln!("{}", error_json(&kind, &format!("{e:#}")));
            ExitCode::from(1)
        }
    }
}

fn variant_name(e: &grasswalk_core::Error) -> String {
    let debug = format!("{e:?}");
    debug
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("Error")
        .to_string()
}
