use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use volcontagion::config::{grid_from_doc, joint_sim_from_doc, windows_from_doc, KvDoc};
use volcontagion::contagion::{CovarianceKind, CrisisWindows};
use volcontagion::diagnostics::model_comparison;
use volcontagion::esv::GridSpec;
use volcontagion::factors::{build_factor_panel, FactorFit, FactorPanel};
use volcontagion::ingest::{load_series, CsvFormat, LoadOptions, ReturnPanel};
use volcontagion::model::{FilterOutput, MeanEstimate};
use volcontagion::pipeline::{fit_factor, run_pipeline, write_contagion_outputs, PipelineConfig, VolModel};
use volcontagion::simulate::sim_joint_panel;
use volcontagion::{Error, MeanModelSpec};

#[derive(Parser, Debug)]
#[command(name = "volcontagion", version, about = "Heavy-tailed volatility factors and contagion regressions")]
struct Cli {
    /// Seed for every random stream; overrides configuration files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a joint factor and country panel with known truths.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit the asymmetric GARCH-in-mean model to one series.
    FitGarch {
        #[command(flatten)]
        input: SeriesInput,
        #[arg(long, default_value = "1a")]
        spec: MeanModelSpec,
    },
    /// Fit the heavy-tailed (or Gaussian) stochastic volatility model by
    /// particle filtering over a parameter grid.
    FitEsv {
        #[command(flatten)]
        input: SeriesInput,
        #[arg(long, default_value = "1a")]
        spec: MeanModelSpec,
        /// Degrees of freedom of the half-t scale; `inf` gives Gaussian SV.
        #[arg(long, default_value_t = 2.0)]
        nu: f64,
        #[arg(long, default_value_t = 10_000)]
        particles: usize,
        /// Key-value file with a `[grid]` section.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Residual moment tests and model comparison table from fit CSVs.
    Diagnose {
        /// Fit CSVs (date, return, mu, sigma, shock, std_residual). A JSON
        /// file with the same stem supplies coefficients and loglik.
        #[arg(long, required = true, num_args = 1..)]
        residuals: Vec<PathBuf>,
    },
    /// Build the volatility factor panel from the two factor fits.
    BuildFactors {
        #[arg(long)]
        us_fit: PathBuf,
        #[arg(long)]
        eu_fit: PathBuf,
        /// Panel whose dates the factors are aligned to.
        #[arg(long)]
        panel: PathBuf,
    },
    /// Static and crisis-window contagion regressions.
    FitContagion {
        #[arg(long)]
        factors: PathBuf,
        #[arg(long)]
        panel: PathBuf,
        /// Key-value file with a `[windows]` section.
        #[arg(long)]
        windows: Option<PathBuf>,
        /// Rolling correlation window in trading days.
        #[arg(long, default_value_t = 42)]
        window: usize,
        /// Columns of the panel to leave out (e.g. factor columns).
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        /// Heteroskedasticity-robust standard errors.
        #[arg(long)]
        robust: bool,
    },
    /// Full two-stage pipeline from a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        from_stage: u8,
    },
}

#[derive(Args, Debug)]
struct SeriesInput {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    column: String,
    #[arg(long, default_value = "wide")]
    format: CsvFormat,
    #[arg(long, default_value = "RF")]
    rf_column: String,
}

impl SeriesInput {
    fn load(&self) -> anyhow::Result<(Vec<chrono::NaiveDate>, Vec<f64>)> {
        let opts = LoadOptions {
            rf_column: Some(self.rf_column.clone()),
            price_columns: Vec::new(),
            columns: Some(vec![self.column.clone()]),
        };
        let series = load_series(&self.input, self.format, &opts)?;
        let s = series
            .into_iter()
            .find(|s| s.ticker == self.column)
            .ok_or_else(|| Error::InvalidConfig(vec![format!("column '{}' not found in {}", self.column, self.input.display())]))?;
        Ok((s.dates, s.values))
    }
}

fn out_dir(cli_out: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let dir = cli_out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_doc(path: &Path) -> anyhow::Result<KvDoc> {
    KvDoc::load(path).with_context(|| format!("reading {}", path.display()))
}

fn fit_one(
    cli: &Cli,
    input: &SeriesInput,
    vol: VolModel,
    spec: &MeanModelSpec,
    cfg: &PipelineConfig,
    seed: u64,
    stem: &str,
) -> anyhow::Result<()> {
    let (dates, x) = input.load()?;
    let (output, mut summary) = fit_factor(&x, vol, spec, cfg, seed)?;
    summary.label = format!("{} {vol} {spec}", input.column);
    let dir = out_dir(&cli.out)?;
    FactorFit::new(dates, x, output)?.save(&dir.join(format!("{stem}.csv")))?;
    write_json(&dir.join(format!("{stem}.json")), &summary)?;
    println!(
        "{}: loglik {:.4}; wrote {}",
        summary.label,
        summary.loglik,
        dir.join(format!("{stem}.{{csv,json}}")).display()
    );
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn base_config(cli: &Cli) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_doc(&KvDoc::default(), Path::new(".")).expect("empty document is valid");
    cfg.seed = cli.seed;
    cfg
}

fn read_summary(path: &Path) -> Option<(f64, Vec<MeanEstimate>)> {
    let text = std::fs::read_to_string(path.with_extension("json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    let loglik = v.get("loglik")?.as_f64()?;
    let estimates = serde_json::from_value(v.get("estimates")?.clone()).ok()?;
    Some((loglik, estimates))
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Simulate { config } => {
            let mut cfg = joint_sim_from_doc(&load_doc(config)?)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let panel = sim_joint_panel(&cfg)?;
            let dir = out_dir(&cli.out)?;
            for p in panel.save_dir(&cfg, &dir)? {
                println!("wrote {}", p.display());
            }
        }
        Command::FitGarch { input, spec } => {
            fit_one(cli, input, VolModel::Garch, spec, &base_config(cli), 0, "fit_garch")?;
        }
        Command::FitEsv {
            input,
            spec,
            nu,
            particles,
            grid,
        } => {
            let seed = cli
                .seed
                .ok_or_else(|| Error::InvalidConfig(vec!["fit-esv needs --seed".to_string()]))?;
            let mut cfg = base_config(cli);
            cfg.nu = *nu;
            cfg.particles = *particles;
            cfg.grid = match grid {
                Some(p) => grid_from_doc(&load_doc(p)?)?.unwrap_or_default(),
                None => GridSpec::default(),
            };
            let vol = if nu.is_infinite() { VolModel::Sv } else { VolModel::Esv };
            fit_one(cli, input, vol, spec, &cfg, seed, "fit_esv")?;
        }
        Command::Diagnose { residuals } => {
            let mut rows: Vec<(String, FilterOutput)> = Vec::new();
            for path in residuals {
                let mut fit = FactorFit::load(path)?;
                if let Some((loglik, estimates)) = read_summary(path) {
                    fit.output.loglik = loglik;
                    fit.output.mean_estimates = estimates;
                }
                let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                rows.push((label, fit.output));
            }
            let table = model_comparison(&rows)?;
            let dir = out_dir(&cli.out)?;
            table.write_csv(std::fs::File::create(dir.join("diagnostics.csv"))?)?;
            let text = table.to_text();
            std::fs::write(dir.join("diagnostics.txt"), &text)?;
            print!("{text}");
        }
        Command::BuildFactors { us_fit, eu_fit, panel } => {
            let us = FactorFit::load(us_fit)?;
            let eu = FactorFit::load(eu_fit)?;
            let dates = ReturnPanel::load(panel)?.dates;
            let factors = build_factor_panel(&us, &eu, &dates)?;
            let path = out_dir(&cli.out)?.join("factors.csv");
            factors.save(&path)?;
            println!("EU-on-US shock slope {:.6}; wrote {}", factors.orth_slope, path.display());
        }
        Command::FitContagion {
            factors,
            panel,
            windows,
            window,
            exclude,
            robust,
        } => {
            let factors = FactorPanel::load(factors)?;
            let panel = ReturnPanel::load(panel)?;
            let windows = match windows {
                Some(p) => windows_from_doc(&load_doc(p)?)?.unwrap_or(CrisisWindows { windows: Vec::new() }),
                None => CrisisWindows::default(),
            };
            let issues = windows.issues();
            if !issues.is_empty() {
                return Err(Error::InvalidConfig(issues).into());
            }
            let countries: Vec<String> = panel.columns.iter().filter(|c| !exclude.contains(c)).cloned().collect();
            let cov = if *robust { CovarianceKind::Hc0 } else { CovarianceKind::Classical };
            let dir = out_dir(&cli.out)?;
            write_contagion_outputs(&dir, &panel, &factors, &countries, &windows, cov, *window)?;
            print!("{}", std::fs::read_to_string(dir.join("contagion.txt"))?);
        }
        Command::Run { config, from_stage } => {
            let mut cfg = PipelineConfig::load(config)?;
            if cli.seed.is_some() {
                cfg.seed = cli.seed;
            }
            if let Some(out) = &cli.out {
                cfg.out_dir = out.clone();
            }
            let manifest = run_pipeline(&cfg, *from_stage)?;
            println!("wrote {} artifacts to {}", manifest.outputs.len() + 1, cfg.out_dir.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
