//! Command-line front end. `run` takes the raw argument list and returns the
//! process exit code: 0 ok, 1 usage, 2 input error, 3 validation failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{Format, RunConfig};
use crate::diagnostics::{diagnose, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::experiment::{to_densities, CallSpec};
use crate::limit_law::{estimate_limit_law, translation_spec, LimitLaw, TranslationSpec};
use crate::market_sim::{read_ensemble, write_binary, write_csv, PathEnsemble};
use crate::pricing::{price_noncalm, pricing_pipeline, PipelineReport, Quote};
use crate::report::{
    fmt10, to_report_json, write_convergence_csv, write_lindeberg_csv, write_summary_csv,
    write_text, FileDigest, Manifest,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "riskneutral", version, about = "Density experiments, limit laws and call prices from price ensembles")]
pub struct Cli {
    /// Worker threads (defaults to the available cores). Results do not
    /// depend on this setting.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; every key is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set generator.seed=7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a price ensemble from the generator block.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the calmness, UAN and contiguity diagnostics on an ensemble.
    Diagnose {
        #[arg(long)]
        ensemble: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the limit law and its risk-neutral translation.
    Estimate {
        #[arg(long)]
        ensemble: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Price the configured strikes from an ensemble, a simulated bed or a law file.
    Price {
        #[arg(long, conflicts_with = "law")]
        ensemble: Option<PathBuf>,
        /// A `limit_law.json` written by `estimate`.
        #[arg(long)]
        law: Option<PathBuf>,
        /// Exit with status 3 unless every oracle check passes.
        #[arg(long)]
        validate: bool,
        /// Use the calm formulas even if the diagnostics reject calmness.
        #[arg(long)]
        calm_only: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Shorthand for `price --validate`.
    Validate {
        #[arg(long)]
        ensemble: Option<PathBuf>,
        #[arg(long)]
        calm_only: bool,
        #[command(flatten)]
        common: Common,
    },
}

/// What `estimate` writes and `price --law` reads back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawFile {
    pub spot: f64,
    pub log_a: f64,
    pub delta_t: f64,
    pub rate: f64,
    pub law: LimitLaw,
    pub translation: TranslationSpec,
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return EXIT_USAGE;
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let threads = pool.current_num_threads();
    match pool.install(|| dispatch(cli.command, threads)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    command: &'static str,
    threads: usize,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn new(common: &Common, command: &'static str, threads: usize) -> Result<Ctx> {
        let cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
        let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let inputs = common.config.iter().cloned().collect();
        Ok(Ctx {
            cfg,
            out,
            command,
            threads,
            inputs,
            outputs: vec![],
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn emit_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        write_text(&p, &to_report_json(value)?)?;
        self.outputs.push(p);
        Ok(())
    }

    fn finish(self, seed: u64) -> Result<()> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            config_hash: self.cfg.hash(),
            seed,
            threads: self.threads,
            config: serde_json::to_value(&self.cfg)?,
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
        };
        manifest.write(&self.out)?;
        Ok(())
    }
}

fn digest(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    Manifest::digest_all(paths)
}

fn load_ensemble(ctx: &mut Ctx, path: &Path) -> Result<PathEnsemble> {
    let ens = read_ensemble(path)?;
    ctx.inputs.push(path.to_path_buf());
    Ok(ens)
}

fn dispatch(command: Command, threads: usize) -> Result<i32> {
    match command {
        Command::Simulate { common } => cmd_simulate(Ctx::new(&common, "simulate", threads)?),
        Command::Diagnose { ensemble, common } => {
            cmd_diagnose(Ctx::new(&common, "diagnose", threads)?, &ensemble)
        }
        Command::Estimate { ensemble, common } => {
            cmd_estimate(Ctx::new(&common, "estimate", threads)?, &ensemble)
        }
        Command::Price {
            ensemble,
            law,
            validate,
            calm_only,
            common,
        } => {
            let ctx = Ctx::new(&common, "price", threads)?;
            match law {
                Some(l) => cmd_price_law(ctx, &l),
                None => cmd_price(ctx, ensemble.as_deref(), validate, calm_only),
            }
        }
        Command::Validate {
            ensemble,
            calm_only,
            common,
        } => cmd_price(Ctx::new(&common, "validate", threads)?, ensemble.as_deref(), true, calm_only),
    }
}

fn cmd_simulate(mut ctx: Ctx) -> Result<i32> {
    let ens = ctx.cfg.generate()?;
    for f in ctx.cfg.output.formats.clone() {
        let p = match f {
            Format::Csv => {
                let p = ctx.path("ensemble.csv");
                write_csv(&ens, &p)?;
                p
            }
            Format::Bin => {
                let p = ctx.path("ensemble.bin");
                write_binary(&ens, &p)?;
                p
            }
        };
        println!("wrote {} paths x {} times to {}", ens.n_paths(), ens.k() + 1, p.display());
        ctx.outputs.push(p);
    }
    let seed = ctx.cfg.generator.seed;
    ctx.finish(seed)?;
    Ok(EXIT_OK)
}

fn print_diagnostics(r: &DiagnosticsReport) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "k = {} (coarse {}), n_paths = {}", r.k, r.coarse_k, r.n_paths);
    let _ = writeln!(out, "{:>12} {:>18} {:>18} {:>18} {:>18}  calm", "eps", "Y fine", "Y coarse", "U fine", "U coarse");
    for row in &r.lindeberg {
        let _ = writeln!(
            out,
            "{:>12} {:>18} {:>18} {:>18} {:>18}  {}",
            fmt10(row.eps),
            fmt10(row.y_fine),
            fmt10(row.y_coarse),
            fmt10(row.u_fine),
            fmt10(row.u_coarse),
            row.calm
        );
    }
    let _ = writeln!(out, "sup 2h^2 = {}, sum 2h^2 = {}", fmt10(r.hellinger.sup_h2 * 2.0), fmt10(r.hellinger.sum_2h2));
    let _ = writeln!(out, "median sup|Y| = {}", fmt10(r.uan.median_sup));
    let v = &r.verdicts;
    let _ = writeln!(
        out,
        "verdict: calm={} (Y {}, U {}), contiguous_both_ways={}",
        v.calm, v.calm_y, v.calm_u, v.contiguous_both_ways
    );
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

fn cmd_diagnose(mut ctx: Ctx, ensemble: &Path) -> Result<i32> {
    let ens = load_ensemble(&mut ctx, ensemble)?;
    let exp = to_densities(&ens)?;
    let report = diagnose(&exp, &ctx.cfg.diagnostics)?;
    ctx.emit_json("diagnostics.json", &report)?;
    let p = ctx.path("lindeberg.csv");
    write_lindeberg_csv(&report, &p)?;
    ctx.outputs.push(p);
    print_diagnostics(&report);
    ctx.finish(ens.seed)?;
    Ok(EXIT_OK)
}

fn cmd_estimate(mut ctx: Ctx, ensemble: &Path) -> Result<i32> {
    let ens = load_ensemble(&mut ctx, ensemble)?;
    let exp = to_densities(&ens)?;
    let law = estimate_limit_law(&exp, ctx.cfg.diagnostics.tau)?;
    let log_a = exp.a_factor.ln();
    let delta_t = exp.mesh.span();
    let rate = ctx.cfg.pricing.rate;
    let translation = translation_spec(&law, rate, delta_t, log_a)?;
    let file = LawFile {
        spot: ctx.cfg.pricing.spot.unwrap_or(exp.es[0]),
        log_a,
        delta_t,
        rate,
        law,
        translation,
    };
    ctx.emit_json("limit_law.json", &file)?;
    let p = ctx.path("experiment_summary.csv");
    write_summary_csv(&exp.summary(), &p)?;
    ctx.outputs.push(p);

    let l = &file.law;
    println!("mu = {}, sigma2 = {}", fmt10(l.mu), fmt10(l.sigma2));
    println!(
        "mu_interval = {}, sigma2_interval = {}",
        fmt10(l.mu_interval),
        fmt10(l.sigma2_interval)
    );
    for a in &l.atoms_t0 {
        println!("atom y = {}, intensity = {}", fmt10(a.y), fmt10(a.intensity));
    }
    println!("translation amount = {}", fmt10(file.translation.amount));
    ctx.finish(ens.seed)?;
    Ok(EXIT_OK)
}

fn print_quotes(quotes: &[Quote]) {
    println!(
        "{:>10} {:>18} {:>18} {:>18} {:>18}",
        "strike", "trader", "buyer_lower_bound", "fair_trader", "fair_buyer_lb"
    );
    for q in quotes {
        println!(
            "{:>10} {:>18} {:>18} {:>18} {:>18}",
            fmt10(q.strike),
            fmt10(q.trader_price),
            fmt10(q.buyer_lower_bound),
            fmt10(q.fair_trader_price),
            fmt10(q.fair_buyer_lower_bound)
        );
    }
}

fn print_pipeline(r: &PipelineReport) {
    println!("branch: {:?}, k = {}, n_paths = {}", r.branch, r.k, r.n_paths);
    print_quotes(&r.quotes);
    if !r.convergence.is_empty() {
        println!(
            "{:>10} {:>6} {:>18} {:>18} {:>18} {:>14}",
            "strike", "k_n", "finite_n_price", "limit_price", "oracle_price", "rel_err"
        );
        for c in &r.convergence {
            println!(
                "{:>10} {:>6} {:>18} {:>18} {:>18} {:>14}",
                fmt10(c.strike),
                c.k_n,
                fmt10(c.finite_n_price),
                fmt10(c.limit_price),
                fmt10(c.oracle_price),
                fmt10(c.rel_err)
            );
        }
    }
    for c in &r.oracle_checks {
        let strike = c.strike.map(fmt10).unwrap_or_else(|| "-".into());
        println!(
            "{} {} strike={} value={} tol={}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            strike,
            fmt10(c.value),
            fmt10(c.tolerance)
        );
    }
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

fn cmd_price(mut ctx: Ctx, ensemble: Option<&Path>, validate: bool, calm_only: bool) -> Result<i32> {
    let ens = match ensemble {
        Some(p) => load_ensemble(&mut ctx, p)?,
        None => ctx.cfg.generate()?,
    };
    let mut pcfg = ctx.cfg.pricing.clone();
    pcfg.calm_only |= calm_only;
    let report = pricing_pipeline(&ens, &ctx.cfg.diagnostics, &pcfg)?;
    ctx.emit_json("price_report.json", &report)?;
    let p = ctx.path("convergence.csv");
    write_convergence_csv(&report.convergence, &p)?;
    ctx.outputs.push(p);
    print_pipeline(&report);
    ctx.finish(ens.seed)?;
    if validate && !report.all_checks_pass() {
        eprintln!("validation failed: at least one oracle check is out of tolerance");
        return Ok(EXIT_VALIDATION);
    }
    Ok(EXIT_OK)
}

fn cmd_price_law(mut ctx: Ctx, law_path: &Path) -> Result<i32> {
    let text = fs::read_to_string(law_path).map_err(|e| Error::io(law_path, e))?;
    let file: LawFile = serde_json::from_str(&text)?;
    ctx.inputs.push(law_path.to_path_buf());
    let pcfg = ctx.cfg.pricing.clone();
    let spot = pcfg.spot.unwrap_or(file.spot);
    let quotes = pcfg
        .strikes
        .iter()
        .map(|&strike| {
            let call = CallSpec {
                spot,
                strike,
                rate: pcfg.rate,
                delta_t: file.delta_t,
            };
            price_noncalm(&call, &file.law, file.log_a, pcfg.mode)
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.emit_json("quotes.json", &quotes)?;
    print_quotes(&quotes);
    ctx.finish(0)?;
    Ok(EXIT_OK)
}
