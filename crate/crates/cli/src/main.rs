//! `gaplab`: temperature sweeps, invariant suites, gap fits, densities and approximation tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gaplab::approximations::{
    compute_potential_stats, delta_method_gap, lognormal_gap, lognormal_gap_upper_bounds, lognormal_tv,
    mean_dataset_density, write_comparison_csv, ComparisonRow, PotentialAnchor,
};
use gaplab::averaging::{gap_direct, gap_upper_bound, population_loss_std, AveragingEnsemble};
use gaplab::data_sampling::{resample_datasets, sample_dataset};
use gaplab::grid::BoundaryPolicy;
use gaplab::harness::fit::fit_gap_model;
use gaplab::harness::sweep::run_sweep;
use gaplab::harness::verify::{run_suite, Suite};
use gaplab::harness::SweepConfig;
use gaplab::langevin::LangevinParams;
use gaplab::steady_state::{boltzmann_auto, EffectivePotential, GridSpec};
use gaplab::Error;

#[derive(Parser)]
#[command(name = "gaplab", version, about = "Generalization-gap laboratory for SGD on toy models")]
struct Cli {
    /// Overrides the configuration's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the configuration's `output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all outputs are independent of this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Identities,
    SteadyState,
    Approximations,
    MomentumContrast,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Run a temperature sweep; writes runs.csv and summary.json.
    Sweep { config: PathBuf },
    /// Run invariant suites; writes report.json and exits 2 on any failed check.
    Verify {
        #[arg(value_enum, default_value = "all")]
        suite: SuiteArg,
    },
    /// Fit the gap model to a CSV with `T` and `gap` columns (rows at equal T are averaged).
    Fit { input: PathBuf },
    /// Boltzmann densities of plain SGD for every learning pair on the first data set.
    Density { config: PathBuf },
    /// Approximation-versus-exact table for every temperature of a configuration.
    Approx {
        config: PathBuf,
        /// Data-set replications per temperature.
        #[arg(long, default_value_t = 1000)]
        replications: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load(cli: &Cli, path: &Path) -> Result<SweepConfig, Error> {
    let mut cfg = SweepConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&SweepConfig>) -> PathBuf {
    cli.out.clone().or_else(|| cfg.and_then(|c| c.output.clone())).unwrap_or_else(|| PathBuf::from("."))
}

/// `Ok(false)` signals a verification failure.
fn dispatch(cli: &Cli) -> Result<bool, Error> {
    match &cli.command {
        Command::Sweep { config } => {
            let cfg = load(cli, config)?;
            let dir = out_dir(cli, Some(&cfg));
            let output = run_sweep(&cfg)?;
            output.write(&dir)?;
            let p = &output.summary.predictions;
            println!("{} runs -> {}", output.rows.len(), dir.display());
            for (name, c) in [("gap_model", &p.gap_model), ("interior_optimum", &p.interior_optimum), ("train_loss_monotone", &p.train_loss_monotone)] {
                println!("{name}: {} ({})", if c.passed { "pass" } else { "fail" }, c.detail);
            }
            Ok(true)
        }
        Command::Verify { suite } => {
            let suites: Vec<Suite> = match suite {
                SuiteArg::Identities => vec![Suite::Identities],
                SuiteArg::SteadyState => vec![Suite::SteadyState],
                SuiteArg::Approximations => vec![Suite::Approximations],
                SuiteArg::MomentumContrast => vec![Suite::MomentumContrast],
                SuiteArg::All => Suite::ALL.to_vec(),
            };
            let seed = cli.seed.unwrap_or(0);
            let reports = suites.iter().map(|s| run_suite(*s, seed)).collect::<Result<Vec<_>, _>>()?;
            let dir = out_dir(cli, None);
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("report.json"), serde_json::to_string_pretty(&reports)? + "\n")?;
            let mut all = true;
            for c in reports.iter().flat_map(|r| &r.checks) {
                println!("{} {}/{}: {:.6e} (tolerance {:.6e}) {}", if c.passed { "PASS" } else { "FAIL" }, c.suite, c.name, c.value, c.tolerance, c.detail);
                all &= c.passed;
            }
            Ok(all)
        }
        Command::Fit { input } => {
            let points = read_gap_points(input)?;
            let fit = fit_gap_model(&points, None)?;
            let json = serde_json::to_string_pretty(&fit)?;
            if let Some(dir) = &cli.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("fit.json"), json.clone() + "\n")?;
            }
            println!("{json}");
            Ok(true)
        }
        Command::Density { config } => {
            let cfg = load(cli, config)?;
            let dir = out_dir(cli, Some(&cfg));
            fs::create_dir_all(&dir)?;
            let model = cfg.model.build()?;
            let s = &cfg.sampling;
            let data = sample_dataset(&model, s.mode, s.n_train, s.n_test, cfg.base_seed)?;
            let spec = if model.dim() == 1 { GridSpec::default() } else { GridSpec::two_dimensional() };
            for (k, pair) in cfg.learning_pairs().iter().enumerate() {
                let params = LangevinParams { lambda: pair.lambda, temperature: pair.temperature(), alpha: cfg.optimizer.alpha, beta: cfg.optimizer.beta };
                let density = boltzmann_auto(&EffectivePotential::new(&model, &data.train, &params)?, &spec)?;
                let path = dir.join(format!("density_{k:03}.csv"));
                density.write_csv(fs::File::create(&path)?)?;
                println!("T={:.6e} -> {}", pair.temperature(), path.display());
            }
            Ok(true)
        }
        Command::Approx { config, replications } => {
            let cfg = load(cli, config)?;
            let dir = out_dir(cli, Some(&cfg));
            fs::create_dir_all(&dir)?;
            let rows = approximation_table(&cfg, *replications)?;
            write_comparison_csv(&rows, fs::File::create(dir.join("approx.csv"))?)?;
            println!("{} rows -> {}", rows.len(), dir.join("approx.csv").display());
            Ok(true)
        }
    }
}

fn read_gap_points(path: &Path) -> Result<Vec<(f64, f64)>, Error> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Config(format!("{} has no `{name}` column", path.display())))
    };
    let (ti, gi) = (col("T")?, col("gap")?);
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let parse = |i: usize| rec.get(i).and_then(|v| v.parse::<f64>().ok());
        let (Some(t), Some(g)) = (parse(ti), parse(gi)) else { continue };
        match groups.iter_mut().find(|(u, _)| *u == t) {
            Some((_, v)) => v.push(g),
            None => groups.push((t, vec![g])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(groups.into_iter().map(|(t, v)| (t, v.iter().sum::<f64>() / v.len() as f64)).collect())
}

fn approximation_table(cfg: &SweepConfig, replications: usize) -> Result<Vec<ComparisonRow>, Error> {
    let model = cfg.model.build()?;
    let s = &cfg.sampling;
    let spec = if model.dim() == 1 { GridSpec::default() } else { GridSpec::two_dimensional() };
    let mut rows = Vec::new();
    for pair in cfg.learning_pairs() {
        let t = pair.temperature();
        let params = LangevinParams { lambda: pair.lambda, temperature: t, alpha: cfg.optimizer.alpha, beta: cfg.optimizer.beta };
        let data = resample_datasets(&model, s.mode, s.n_train, s.n_test, replications, cfg.base_seed)?;
        let ens = AveragingEnsemble::sgd_boltzmann(&model, data, &params, &spec)?;
        let stats = compute_potential_stats(&ens, PotentialAnchor::Normalized)?;
        let exact = gap_direct(&ens)?.value;
        let ln = lognormal_gap(&stats, &ens.rho_bar)?;
        let label = |q: &str| format!("{q}@T={t:.6e}");
        rows.push(ComparisonRow::new(label("gap_lognormal"), exact, ln.value, format!("{:?} exponent={:.3e}", ln.regime, ln.mean_exponent)));
        rows.push(ComparisonRow::new(label("gap_lognormal_small_branch"), exact, ln.small_branch_sgd, format!("{:?}", ln.regime)));
        let at_mean = mean_dataset_density(&model, &params, ens.geometry(), BoundaryPolicy::Ignore);
        if let Ok(at_mean) = at_mean {
            let dg = delta_method_gap(&stats, &at_mean)?;
            rows.push(ComparisonRow::new(label("gap_delta_method"), exact, dg.value, "small sigma_gu"));
        }
        let sigma_ell = population_loss_std(&model, ens.geometry(), 100_000, cfg.base_seed)?;
        let bounds = lognormal_gap_upper_bounds(&stats, &ens.rho_bar, &sigma_ell, s.n_train)?;
        let exact_bound = gap_upper_bound(&ens, 100_000, cfg.base_seed)?;
        let validity = format!("{:?} mean_sigma_g2={:.3e}", bounds.regime, bounds.mean_g_var);
        rows.push(ComparisonRow::new(label("bound_lognormal"), exact_bound, bounds.generic, validity.clone()));
        rows.push(ComparisonRow::new(label("bound_sgd_large"), exact_bound, bounds.sgd_large, validity.clone()));
        rows.push(ComparisonRow::new(label("bound_sgd_small"), exact_bound, bounds.sgd_small, validity));
        let tv = lognormal_tv(&stats, &ens, BoundaryPolicy::Ignore)?;
        rows.push(ComparisonRow::new(label("rho_bar_lognormal_tv"), 0.0, tv, "total variation"));
    }
    Ok(rows)
}
