use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use convmode::dgp::{generate, replication_rng, PopulationOracle, SimConfig};
use convmode::mode::ModeSearch;
use convmode::montecarlo::{default_levels, qq_table, MIN_QQ_DRAWS};
use convmode::sqre::fit_from;
use convmode::stats::{mean, sample_sd};
use convmode::{rot_bandwidth, BandwidthPolicy, SolverOptions, TauGrid};

use crate::config::{parse_list, ConfigFile};
use crate::csvio::{self, fmt_f64, write_table, LoadedData};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "convmode", version, about = "Conditional mode regression via smoothed quantile regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the smoothed quantile regression at one quantile level.
    Fit(FitArgs),
    /// Estimate the conditional mode at a design point.
    Mode(ModeArgs),
    /// Run the Monte Carlo study on the simulation design.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Input CSV with a header row.
    pub input: Option<PathBuf>,
    /// Response column name [default: y].
    #[arg(long)]
    pub response_col: Option<String>,
    /// Comma-separated covariate columns [default: all but the response].
    #[arg(long, value_delimiter = ',')]
    pub covariate_cols: Option<Vec<String>>,
    /// Do not prepend an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
    /// key = value settings, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Gradient-norm convergence threshold [default: 1e-8].
    #[arg(long)]
    pub foc_tol: Option<f64>,
    /// Newton iteration cap [default: 100].
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Quantile level in (0, 1).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Fixed bandwidth.
    #[arg(long, conflicts_with = "rot")]
    pub h: Option<f64>,
    /// Rule-of-thumb bandwidth at `tau`.
    #[arg(long)]
    pub rot: bool,
    /// Directory for fit.csv and manifest.json (nothing is written if absent).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ModeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Design point, comma-separated. The leading 1 may be omitted when an
    /// intercept is added.
    #[arg(long, allow_hyphen_values = true)]
    pub at: Option<String>,
    /// Trimming constant: the grid covers [alpha, 1 - alpha] [default: 0.05].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Grid spacing [default: 0.01].
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// One bandwidth for every quantile level.
    #[arg(long, conflicts_with = "rot")]
    pub fixed_h: Option<f64>,
    /// Rule-of-thumb bandwidth per quantile level (the default).
    #[arg(long)]
    pub rot: bool,
    /// Skip golden-section refinement inside the best grid cell.
    #[arg(long)]
    pub no_refine: bool,
    /// Directory for curve.csv and manifest.json [default: .].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct SimulateArgs {
    /// Sample size per replication.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of replications.
    #[arg(long)]
    pub it: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skew-normal shape of the error [default: 2].
    #[arg(long, allow_hyphen_values = true)]
    pub shape: Option<f64>,
    /// [default: 0.01]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// [default: 0.01]
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Fixed bandwidth instead of the per-level rule of thumb.
    #[arg(long)]
    pub fixed_h: Option<f64>,
    /// Worker threads [default: all cores]. Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write the first replication's sample to data.csv.
    #[arg(long)]
    pub emit_data: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// [default: .]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Executes a parsed command line. Reports go to `out`, warnings to `err`.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a, out, err),
        Command::Mode(a) => cmd_mode(&a, out, err),
        Command::Simulate(a) => cmd_simulate(&a, out, err),
    }
}

fn load_config(path: Option<&Path>, allowed: &[&str]) -> CliResult<ConfigFile> {
    match path {
        Some(p) => {
            let c = ConfigFile::load(p)?;
            c.check_keys(allowed)?;
            Ok(c)
        }
        None => Ok(ConfigFile::default()),
    }
}

const DATA_KEYS: [&str; 6] = ["input", "response_col", "covariate_cols", "intercept", "foc_tol", "max_iter"];

struct ResolvedData {
    loaded: LoadedData,
    input: PathBuf,
    solver: SolverOptions,
    covariates: Option<Vec<String>>,
}

fn resolve_data(a: &DataArgs, cfg: &ConfigFile, err: &mut dyn Write) -> CliResult<ResolvedData> {
    let input = a
        .input
        .clone()
        .or_else(|| cfg.raw("input").map(PathBuf::from))
        .ok_or_else(|| CliError::Input("no input CSV given".into()))?;
    let response = a
        .response_col
        .clone()
        .or_else(|| cfg.raw("response_col").map(str::to_string))
        .unwrap_or_else(|| "y".to_string());
    let covariates = a.covariate_cols.clone().or_else(|| cfg.get_strings("covariate_cols"));
    let intercept = if a.no_intercept {
        false
    } else {
        cfg.get::<bool>("intercept")?.unwrap_or(true)
    };
    let mut solver = SolverOptions::default();
    if let Some(t) = a.foc_tol.or(cfg.get("foc_tol")?) {
        solver.foc_tol = t;
    }
    if let Some(m) = a.max_iter.or(cfg.get("max_iter")?) {
        solver.max_iter = m;
    }
    let loaded = csvio::load(&input, &response, covariates.as_deref(), intercept)?;
    for w in loaded.data.positivity_warnings() {
        writeln!(err, "warning: {w}").ok();
    }
    Ok(ResolvedData {
        loaded,
        input,
        solver,
        covariates,
    })
}

fn record_data(m: &mut RunManifest, r: &ResolvedData) {
    m.input_digest = Some(r.loaded.digest.clone());
    m.set("input", r.input.display().to_string());
    m.set("response_col", r.loaded.response.clone());
    if let Some(c) = &r.covariates {
        m.set("covariate_cols", c.join(","));
    }
    m.set("intercept", r.loaded.intercept);
    m.set("foc_tol", r.solver.foc_tol);
    m.set("max_iter", r.solver.max_iter);
}

fn warn_undersmoothing(err: &mut dyn Write, n: usize, h: f64, tau: f64) {
    let nf = n as f64;
    if nf * h.powi(3) / nf.ln() < 10.0 {
        writeln!(
            err,
            "warning: bandwidth {h} at tau = {tau} is small for n = {n} (n h^3 / log n < 10)"
        )
        .ok();
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io("create output directory", dir, e))
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

pub fn cmd_fit(a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let mut keys = DATA_KEYS.to_vec();
    keys.extend(["tau", "h", "rot"]);
    let cfg = load_config(a.data.config.as_deref(), &keys)?;
    let tau = a
        .tau
        .or(cfg.get("tau")?)
        .ok_or_else(|| CliError::Input("--tau is required".into()))?;
    let rot = if a.h.is_some() {
        false
    } else {
        a.rot || cfg.get::<bool>("rot")?.unwrap_or(false)
    };
    let fixed = if rot { None } else { a.h.or(cfg.get("h")?) };
    if !rot && fixed.is_none() {
        return Err(CliError::Input("give a bandwidth with --h or use --rot".into()));
    }
    let r = resolve_data(&a.data, &cfg, err)?;
    let data = &r.loaded.data;

    let mut manifest = RunManifest::new("fit");
    record_data(&mut manifest, &r);
    manifest.set("tau", tau);
    let h = match fixed {
        Some(h) => {
            manifest.set("h", h);
            warn_undersmoothing(err, data.n(), h, tau);
            h
        }
        None => {
            manifest.set("rot", true);
            let bw = rot_bandwidth(data, tau)?;
            manifest.derive("h", bw.h);
            manifest.derive("s_hat", bw.s_hat);
            warn_undersmoothing(err, data.n(), bw.h, tau);
            bw.h
        }
    };
    let start = convmode::sqre::least_squares(data)?;
    let fit = fit_from(data, tau, h, &start, &r.solver)?;

    writeln!(out, "tau: {}", fmt_f64(tau)).ok();
    writeln!(out, "h: {}", fmt_f64(h)).ok();
    for (name, b) in r.loaded.columns.iter().zip(&fit.beta) {
        writeln!(out, "beta[{name}]: {}", fmt_f64(*b)).ok();
    }
    writeln!(out, "objective: {}", fmt_f64(fit.objective)).ok();
    writeln!(out, "grad_norm: {}", fmt_f64(fit.grad_norm)).ok();
    writeln!(out, "iterations: {}", fit.iterations).ok();
    writeln!(out, "converged: {}", fit.converged).ok();

    if let Some(dir) = &a.out_dir {
        ensure_dir(dir)?;
        let rows: Vec<Vec<String>> = r
            .loaded
            .columns
            .iter()
            .zip(&fit.beta)
            .map(|(c, b)| vec![c.clone(), fmt_f64(*b)])
            .collect();
        let digest = write_table(&dir.join("fit.csv"), &["column", "beta"], &rows)?;
        manifest.outputs.insert("fit.csv".into(), digest);
        manifest.derive("grad_norm", fit.grad_norm);
        manifest.derive("iterations", fit.iterations);
        manifest.derive("converged", fit.converged);
        manifest.write(dir)?;
    }

    if fit.converged {
        Ok(())
    } else {
        Err(CliError::NonConvergence(format!(
            "fit did not converge: gradient norm {} after {} iterations",
            fit.grad_norm, fit.iterations
        )))
    }
}

pub fn cmd_mode(a: &ModeArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let mut keys = DATA_KEYS.to_vec();
    keys.extend(["at", "alpha", "grid_step", "fixed_h", "rot", "refine"]);
    let cfg = load_config(a.data.config.as_deref(), &keys)?;
    let at = match &a.at {
        Some(s) => parse_list(s)?,
        None => cfg
            .get_list("at")?
            .ok_or_else(|| CliError::Input("--at is required".into()))?,
    };
    let alpha = a.alpha.or(cfg.get("alpha")?).unwrap_or(0.05);
    let step = a.grid_step.or(cfg.get("grid_step")?).unwrap_or(0.01);
    let fixed_h = if a.rot { None } else { a.fixed_h.or(cfg.get("fixed_h")?) };
    let refine = !a.no_refine && cfg.get::<bool>("refine")?.unwrap_or(true);
    let grid = TauGrid::new(alpha, step)?;
    let r = resolve_data(&a.data, &cfg, err)?;
    let data = &r.loaded.data;

    let d = data.d();
    let x = if at.len() == d {
        at.clone()
    } else if r.loaded.intercept && at.len() + 1 == d {
        std::iter::once(1.0).chain(at.iter().copied()).collect()
    } else {
        return Err(CliError::Input(format!(
            "--at has {} entries; the design has {d} columns ({})",
            at.len(),
            r.loaded.columns.join(", ")
        )));
    };

    let policy = match fixed_h {
        Some(h) => BandwidthPolicy::Fixed(h),
        None => BandwidthPolicy::RuleOfThumb,
    };
    let search = ModeSearch {
        solver: r.solver,
        refine,
        ..ModeSearch::default()
    };
    let est = search.estimate_mode(data, &x, &grid, policy)?;

    let mut manifest = RunManifest::new("mode");
    record_data(&mut manifest, &r);
    manifest.set("at", x.clone());
    manifest.set("alpha", alpha);
    manifest.set("grid_step", step);
    match fixed_h {
        Some(h) => manifest.set("fixed_h", h),
        None => manifest.set("rot", true),
    }
    manifest.set("refine", refine);

    warn_undersmoothing(err, data.n(), est.h_at_tau_hat, est.tau_hat);
    let failures = est.curve.failures();
    if failures > 0 {
        writeln!(err, "warning: {failures} grid point(s) failed and were skipped").ok();
    }

    writeln!(out, "x: {}", join_f64(&x)).ok();
    writeln!(out, "tau_hat: {}", fmt_f64(est.tau_hat)).ok();
    writeln!(out, "m_hat: {}", fmt_f64(est.m_hat)).ok();
    writeln!(out, "h: {}", fmt_f64(est.h_at_tau_hat)).ok();
    writeln!(out, "s_hat: {}", fmt_f64(est.s_hat)).ok();
    writeln!(out, "refined: {}", est.refined).ok();
    writeln!(out, "failed_grid_points: {failures}").ok();

    let dir = a.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let rows: Vec<Vec<String>> = grid
        .points()
        .iter()
        .enumerate()
        .map(|(i, tau)| {
            let converged = est.curve.fits[i].as_ref().is_some_and(|f| f.converged);
            vec![
                fmt_f64(*tau),
                opt(est.curve.values[i]),
                opt(est.curve.bandwidths[i]),
                converged.to_string(),
            ]
        })
        .collect();
    let digest = write_table(&dir.join("curve.csv"), &["tau", "s_hat", "h", "converged"], &rows)?;
    manifest.outputs.insert("curve.csv".into(), digest);
    manifest.derive("tau_hat", est.tau_hat);
    manifest.derive("m_hat", est.m_hat);
    manifest.derive("h_at_tau_hat", est.h_at_tau_hat);
    manifest.derive("failed_grid_points", failures);
    manifest.write(&dir)?;
    Ok(())
}

const SIM_KEYS: [&str; 8] = ["n", "it", "seed", "shape", "alpha", "grid_step", "fixed_h", "emit_data"];

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let cfg_file = load_config(a.config.as_deref(), &SIM_KEYS)?;
    let n = a
        .n
        .or(cfg_file.get("n")?)
        .ok_or_else(|| CliError::Input("--n is required".into()))?;
    let it = a
        .it
        .or(cfg_file.get("it")?)
        .ok_or_else(|| CliError::Input("--it is required".into()))?;
    let seed = a.seed.or(cfg_file.get("seed")?).unwrap_or(1);
    let shape = a.shape.or(cfg_file.get("shape")?).unwrap_or(2.0);
    let alpha = a.alpha.or(cfg_file.get("alpha")?).unwrap_or(0.01);
    let step = a.grid_step.or(cfg_file.get("grid_step")?).unwrap_or(0.01);
    let fixed_h = a.fixed_h.or(cfg_file.get("fixed_h")?);
    let emit_data = a.emit_data || cfg_file.get::<bool>("emit_data")?.unwrap_or(false);
    if n == 0 || it == 0 {
        return Err(CliError::Input("--n and --it must be positive".into()));
    }
    if a.threads == Some(0) {
        return Err(CliError::Input("--threads must be positive".into()));
    }

    let mut config = SimConfig::reference(n, it, seed);
    config.shape = shape;
    config.tau_grid = TauGrid::new(alpha, step)?;
    if let Some(h) = fixed_h {
        config.bandwidth_policy = BandwidthPolicy::Fixed(h);
    }
    config.validate()?;
    let oracle = PopulationOracle::new(&config)?;

    let dir = a.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;

    let started = Instant::now();
    let result = match a.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Input(format!("cannot start {t} threads: {e}")))?
            .install(|| convmode::montecarlo::run(&config)),
        None => convmode::montecarlo::run(&config),
    }?;
    let elapsed = started.elapsed().as_secs_f64();

    for rep in &result.failed_replications {
        writeln!(err, "warning: replication {rep} (seed {seed}, stream {rep}) failed").ok();
    }

    let mut manifest = RunManifest::new("simulate");
    manifest.seed = Some(seed);
    manifest.set("n", n);
    manifest.set("it", it);
    manifest.set("seed", seed);
    manifest.set("shape", shape);
    manifest.set("alpha", alpha);
    manifest.set("grid_step", step);
    if let Some(h) = fixed_h {
        manifest.set("fixed_h", h);
    }
    manifest.set("emit_data", emit_data);
    manifest.derive("beta", config.beta.clone());
    manifest.derive("x_eval", config.x_eval.clone());
    manifest.derive("failures", result.failures);
    manifest.derive("failed_replications", result.failed_replications.clone());
    manifest.derive("oracle_mode", oracle.mode(&config.x_eval));
    manifest.derive("oracle_tau", oracle.tau_mode);

    let rows: Vec<Vec<String>> = result
        .replications
        .iter()
        .enumerate()
        .map(|(k, rep)| {
            vec![
                rep.to_string(),
                fmt_f64(result.m_hats[k]),
                fmt_f64(result.tau_hats[k]),
                fmt_f64(result.h_hats[k]),
            ]
        })
        .collect();
    let digest = write_table(&dir.join("draws.csv"), &["replication", "m_hat", "tau_hat", "h"], &rows)?;
    manifest.outputs.insert("draws.csv".into(), digest);

    let mut correlation = None;
    if result.m_hats.len() >= MIN_QQ_DRAWS {
        let table = qq_table(&result, &default_levels())?;
        let corr = fmt_f64(table.correlation);
        let rows: Vec<Vec<String>> = table
            .rows
            .iter()
            .map(|r| {
                vec![
                    fmt_f64(r.p),
                    fmt_f64(r.sample_quantile),
                    fmt_f64(r.normal_quantile),
                    corr.clone(),
                ]
            })
            .collect();
        let digest = write_table(
            &dir.join("qq.csv"),
            &["p", "sample_quantile", "normal_quantile", "correlation"],
            &rows,
        )?;
        manifest.outputs.insert("qq.csv".into(), digest);
        manifest.derive("qq_correlation", table.correlation);
        correlation = Some(table.correlation);
    } else {
        writeln!(
            err,
            "warning: {} successful replications; qq.csv needs at least {MIN_QQ_DRAWS}",
            result.m_hats.len()
        )
        .ok();
    }

    if emit_data {
        let data = generate(&config, &mut replication_rng(seed, 0))?;
        let rows: Vec<Vec<String>> = data
            .rows()
            .map(|(row, y)| vec![fmt_f64(y), fmt_f64(row[1])])
            .collect();
        let digest = write_table(&dir.join("data.csv"), &["y", "x"], &rows)?;
        manifest.outputs.insert("data.csv".into(), digest);
    }
    manifest.write(&dir)?;

    let timing: BTreeMap<&str, Value> = BTreeMap::from([
        ("total_seconds", json!(elapsed)),
        ("threads", json!(a.threads.unwrap_or_else(rayon::current_num_threads))),
        ("replication_seconds", json!(result.wall_times)),
    ]);
    let mut text = serde_json::to_string_pretty(&timing).expect("timing serialises");
    text.push('\n');
    csvio::write_bytes(&dir.join("timing.json"), text.as_bytes())?;

    let successes = result.m_hats.len();
    writeln!(out, "replications: {it}").ok();
    writeln!(out, "failures: {}", result.failures).ok();
    if successes > 0 {
        writeln!(out, "mean_m_hat: {}", fmt_f64(mean(&result.m_hats))).ok();
        writeln!(out, "mean_tau_hat: {}", fmt_f64(mean(&result.tau_hats))).ok();
    }
    if successes > 1 {
        writeln!(out, "sd_m_hat: {}", fmt_f64(sample_sd(&result.m_hats))).ok();
    }
    writeln!(out, "oracle_mode: {}", fmt_f64(oracle.mode(&config.x_eval))).ok();
    writeln!(out, "oracle_tau: {}", fmt_f64(oracle.tau_mode)).ok();
    if let Some(c) = correlation {
        writeln!(out, "qq_correlation: {}", fmt_f64(c)).ok();
    }
    writeln!(out, "seconds: {elapsed:.2}").ok();

    if successes == 0 {
        return Err(CliError::Estimation("every replication failed".into()));
    }
    Ok(())
}
