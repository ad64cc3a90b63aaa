//! `coda`: simulation studies, two-sample analysis and diagnostics.
//!
//! Exit status is 0 on success, 1 for invalid input or usage, 2 when a
//! numerical routine fails.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coda_core::data::{load_auxiliary, load_primary};
use coda_core::nuisance::cio_diagnostic;
use coda_core::search::analyze;
use coda_core::simulation::study::table_rows;
use coda_core::simulation::{mc_true_value, run_study, write_summary_csv, Design, ScenarioSpec};
use coda_core::{CodaError, Config, DecisionRule, ModeChoice};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "coda",
    version,
    about = "Calibrated optimal decision making with auxiliary samples"
)]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, global = true, default_value_t = Format::Json)]
    format: Format,
    /// JSON configuration file; absent fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for replications.
    #[arg(long, global = true, env = "CODA_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DesignArg {
    Homogeneous,
    Heterogeneous,
}

impl From<DesignArg> for Design {
    fn from(d: DesignArg) -> Self {
        match d {
            DesignArg::Homogeneous => Design::Homogeneous,
            DesignArg::Heterogeneous => Design::Heterogeneous,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Ho,
    He,
    Auto,
}

impl From<ModeArg> for ModeChoice {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ho => ModeChoice::Ho,
            ModeArg::He => ModeChoice::He,
            ModeArg::Auto => ModeChoice::Auto,
        }
    }
}

/// Overrides applied on top of the configuration file.
#[derive(Args, Debug)]
struct Tuning {
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a replication study on a built-in scenario.
    Simulate {
        #[arg(long)]
        scenario: u8,
        #[arg(long, value_enum, default_value_t = DesignArg::Homogeneous)]
        design: DesignArg,
        #[arg(long, default_value_t = 1000)]
        ne: usize,
        #[arg(long, default_value_t = 2000)]
        nu: usize,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Learn a calibrated rule from a primary and an auxiliary CSV.
    Fit {
        #[arg(long)]
        primary: PathBuf,
        #[arg(long)]
        auxiliary: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Also write the learned rule to this JSON file.
        #[arg(long)]
        rule_out: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Compare the intermediate-outcome regressions of the two samples.
    CioCheck {
        #[arg(long)]
        primary: PathBuf,
        #[arg(long)]
        auxiliary: PathBuf,
    },
    /// Monte Carlo value of a rule under a built-in scenario.
    TrueValue {
        #[arg(long)]
        scenario: u8,
        #[arg(long, value_enum, default_value_t = DesignArg::Homogeneous)]
        design: DesignArg,
        /// Rule JSON as written by `fit`; the optimal rule when absent.
        #[arg(long)]
        rule: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        n_mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>, base: Config) -> Result<Config, CodaError> {
    match path {
        Some(p) => Config::from_json(&std::fs::read_to_string(p)?),
        None => Ok(base),
    }
}

fn apply(mut cfg: Config, t: &Tuning) -> Result<Config, CodaError> {
    if let Some(d) = t.depth {
        cfg.depth = d;
    }
    if let Some(a) = t.alpha {
        cfg.alpha = a;
    }
    if let Some(s) = t.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Rows printed for the csv and table formats.
type Rows = Vec<Vec<String>>;

fn kv(pairs: &[(&str, String)]) -> Rows {
    let mut rows = vec![vec!["field".to_string(), "value".to_string()]];
    rows.extend(pairs.iter().map(|(k, v)| vec![k.to_string(), v.clone()]));
    rows
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

struct Output {
    json: serde_json::Value,
    rows: Rows,
}

fn run(cli: &Cli) -> Result<Output, CodaError> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Simulate {
            scenario,
            design,
            ne,
            nu,
            reps,
            tuning,
        } => {
            let spec = ScenarioSpec::new(*scenario, (*design).into())?;
            let cfg = apply(load_config(config, spec.recommended_config())?, tuning)?;
            let seed = cfg.seed;
            let summary = run_study(&spec, *ne, *nu, *reps, &cfg, seed)?;
            let rows = if cli.format == Format::Csv {
                let mut buf = Vec::new();
                write_summary_csv(&summary, &mut buf)?;
                vec![vec![String::from_utf8_lossy(&buf).into_owned()]]
            } else {
                table_rows(&summary)
            };
            Ok(Output {
                json: serde_json::to_value(&summary)?,
                rows,
            })
        }
        Command::Fit {
            primary,
            auxiliary,
            mode,
            rule_out,
            tuning,
        } => {
            let mut cfg = apply(load_config(config, Config::default())?, tuning)?;
            if let Some(m) = mode {
                cfg.mode = (*m).into();
            }
            let e = load_primary(primary)?;
            let u = load_auxiliary(auxiliary)?;
            let analysis = analyze(&e, &u, &cfg)?;
            let s = &analysis.search;
            if let Some(path) = rule_out {
                std::fs::write(path, serde_json::to_string_pretty(&s.result.rule)?)?;
            }
            let r = &s.report;
            let rows = kv(&[
                ("mode", format!("{:?}", analysis.mode).to_uppercase()),
                ("value", r.value.to_string()),
                ("sd", r.sd().to_string()),
                ("ci_lo", r.ci_lo.to_string()),
                ("ci_hi", r.ci_hi.to_string()),
                ("value_primary_only", s.initial_report.value.to_string()),
                ("sd_primary_only", s.initial_report.sd().to_string()),
                ("rho", join(&r.rho)),
                ("iterations", s.result.iterations_used.to_string()),
                ("converged", s.result.converged.to_string()),
                ("rule", serde_json::to_string(&s.result.rule)?),
            ]);
            Ok(Output {
                json: json!({
                    "mode": analysis.mode,
                    "report": r,
                    "primary_only_report": s.initial_report,
                    "rule": s.result.rule,
                    "iterations_used": s.result.iterations_used,
                    "converged": s.result.converged,
                    "objective_trace": s.result.trace,
                }),
                rows,
            })
        }
        Command::CioCheck { primary, auxiliary } => {
            let cfg = load_config(config, Config::default())?;
            cfg.validate()?;
            let e = load_primary(primary)?;
            let u = load_auxiliary(auxiliary)?;
            let rep = cio_diagnostic(&e, &u, &cfg)?;
            let mut rows = vec![vec!["outcome".to_string(), "relative_mse".to_string()]];
            rows.extend(
                rep.relative_mse
                    .iter()
                    .enumerate()
                    .map(|(k, v)| vec![k.to_string(), v.to_string()]),
            );
            Ok(Output {
                json: serde_json::to_value(&rep)?,
                rows,
            })
        }
        Command::TrueValue {
            scenario,
            design,
            rule,
            n_mc,
            seed,
        } => {
            let spec = ScenarioSpec::new(*scenario, (*design).into())?;
            let rule: DecisionRule = match rule {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => spec.optimal_rule(),
            };
            let v = mc_true_value(&spec, &rule, *n_mc, *seed)?;
            Ok(Output {
                json: serde_json::to_value(v)?,
                rows: kv(&[
                    ("value", v.value.to_string()),
                    ("se", v.se.to_string()),
                    ("n_mc", v.n_mc.to_string()),
                ]),
            })
        }
    }
}

fn render(out: &Output, format: Format, w: &mut impl Write) -> std::io::Result<()> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, &out.json)?;
            writeln!(w)
        }
        // A single cell holds pre-rendered CSV.
        Format::Csv if out.rows.len() == 1 && out.rows[0].len() == 1 => write!(w, "{}", out.rows[0][0]),
        Format::Csv => {
            let mut cw = csv::Writer::from_writer(w);
            for r in &out.rows {
                cw.write_record(r)?;
            }
            cw.flush()
        }
        Format::Table => {
            let cols = out.rows.iter().map(Vec::len).max().unwrap_or(0);
            let widths: Vec<usize> = (0..cols)
                .map(|j| {
                    out.rows
                        .iter()
                        .filter_map(|r| r.get(j))
                        .map(|c| c.chars().count())
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            for r in &out.rows {
                let line: Vec<String> = r
                    .iter()
                    .enumerate()
                    .map(|(j, c)| format!("{c:<w$}", w = widths[j]))
                    .collect();
                writeln!(w, "{}", line.join("  ").trim_end())?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure {t} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(out) => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            match render(&out, cli.format, &mut lock) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
