//! Command-line front end: `estimate`, `simulate` and `scenarios`.
//!
//! Reports go to stdout (or `--out`), diagnostics to stderr. Exit codes:
//! 0 on a complete report, 2 for input errors, 3 for identification or
//! weighting failures, 1 otherwise.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cd_classic::cd_fit;
use crate::dataset::{load_csv, ColumnRoles, Dataset, InstrumentColumns};
use crate::error::{Error, Result};
use crate::gmm::{fit, FitOptions, Weighting};
use crate::moments::MomentSpec;
use crate::simulate::{
    default_estimators, default_replicates, fmt_sig, run_monte_carlo, Estimator, McReport, ScenarioConfig,
    ScenarioFile, SCENARIO_NAMES,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_IDENTIFICATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "causal-gmm", version, about = "IV, Causal Dantzig, GCD and hybrid estimators as GMM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Gcd,
    Cd,
    Iv,
    Tsls,
    Hybrid,
    Ols,
    All,
}

impl Method {
    const EACH: [Method; 6] = [Method::Gcd, Method::Cd, Method::Iv, Method::Tsls, Method::Hybrid, Method::Ols];

    fn name(self) -> &'static str {
        match self {
            Method::Gcd => "gcd",
            Method::Cd => "cd",
            Method::Iv => "iv",
            Method::Tsls => "tsls",
            Method::Hybrid => "hybrid",
            Method::Ols => "ols",
            Method::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Tsv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit estimators on a CSV file.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        response: String,
        /// Comma-separated exposure columns.
        #[arg(long, value_delimiter = ',', required = true)]
        exposures: Vec<String>,
        /// Categorical environment column.
        #[arg(long, conflicts_with = "instruments", required_unless_present = "instruments")]
        env: Option<String>,
        /// Comma-separated numeric instrument columns (centered on load).
        #[arg(long, value_delimiter = ',')]
        instruments: Option<Vec<String>>,
        #[arg(long, value_enum, default_value_t = Method::All)]
        method: Method,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also center exposures and response.
        #[arg(long)]
        center_xy: bool,
    },
    /// Run a Monte Carlo study for a named scenario or a config file.
    Simulate {
        /// One of: fig2, table1, model1, model2, do.
        scenario: Option<String>,
        /// Scenario config file (flat key = value).
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of replicates.
        #[arg(long = "N", alias = "replicates")]
        replicates: Option<usize>,
        /// Comma-separated estimators, e.g. gcd,gcd_e1,ols.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        #[arg(long)]
        level: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        /// Output prefix: writes PREFIX.tsv, PREFIX.json and PREFIX.estimates.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List named scenarios with their parameters.
    Scenarios,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Parse(_) | Error::Io(_) => EXIT_INPUT,
        Error::Identification { .. } | Error::Weight(_) | Error::DegenerateWeight(_) | Error::Inference(_) => {
            EXIT_IDENTIFICATION
        }
        Error::Simulation(_) => EXIT_FAILURE,
    }
}

/// Parse arguments from the process and run.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(cli, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Estimate {
            input,
            response,
            exposures,
            env,
            instruments,
            method,
            level,
            format,
            out: out_path,
            center_xy,
        } => {
            let roles = ColumnRoles {
                response,
                exposures,
                instruments: match (env, instruments) {
                    (Some(e), _) => InstrumentColumns::Environment(e),
                    (None, Some(i)) => InstrumentColumns::Numeric(i),
                    (None, None) => unreachable!("clap requires --env or --instruments"),
                },
            };
            cmd_estimate(&input, &roles, method, level, format, center_xy, err).and_then(|text| emit(&text, out_path, out))
        }
        Command::Simulate {
            scenario,
            config,
            seed,
            replicates,
            estimators,
            level,
            format,
            out: prefix,
        } => {
            let args = SimulateArgs {
                scenario,
                config,
                seed,
                replicates,
                estimators,
                level,
            };
            cmd_simulate(&args, err).and_then(|report| write_simulation(&report, format, prefix.as_ref(), out))
        }
        Command::Scenarios => {
            let mut text = String::new();
            for name in SCENARIO_NAMES {
                let cfg = ScenarioConfig::named(name).expect("named scenario");
                let ests: Vec<String> = default_estimators(name).iter().map(Estimator::name).collect();
                text.push_str(&format!(
                    "# {name}: N = {}, estimators = {}\n{}\n",
                    default_replicates(name),
                    ests.join(","),
                    cfg.to_toml()
                ));
            }
            emit(&text, None, out)
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn emit(text: &str, path: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(&p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => out.write_all(text.as_bytes()).map_err(Error::from),
    }
}

/// One coefficient of one method in an `estimate` report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub method: String,
    pub coefficient: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub identification: String,
    pub n: usize,
    pub level: f64,
}

fn method_rows(method: Method, data: &Dataset, level: f64, err: &mut dyn Write) -> Result<Vec<EstimateRow>> {
    let names = data.exposure_names();
    let mut gmm = |spec: MomentSpec, weighting: Weighting| -> Result<Vec<EstimateRow>> {
        let f = fit(&spec, data, &FitOptions { weighting, level })?;
        if f.diagnostics.weak_identification {
            let _ = writeln!(
                err,
                "warning: {}: weak identification (strength {:.3})",
                method.name(),
                f.diagnostics.identification_strength
            );
        }
        Ok((0..data.p())
            .map(|j| EstimateRow {
                method: method.name().into(),
                coefficient: names[j].clone(),
                estimate: f.beta_hat[j],
                se: f.se[j],
                ci_low: f.ci_low[j],
                ci_high: f.ci_high[j],
                p_value: f.p_values[j],
                identification: f.identification.as_str().into(),
                n: f.n,
                level,
            })
            .collect())
    };
    match method {
        Method::Gcd => gmm(MomentSpec::gcd(), Weighting::TwoStep),
        Method::Iv => gmm(MomentSpec::iv(), Weighting::TwoStep),
        Method::Tsls => gmm(MomentSpec::iv(), Weighting::Tsls),
        Method::Hybrid => gmm(MomentSpec::hybrid(), Weighting::TwoStep),
        Method::Ols => gmm(MomentSpec::ols(), Weighting::TwoStep),
        Method::Cd => {
            let f = cd_fit(data, level)?;
            let ident = match f.mode {
                crate::cd_classic::CdMode::TwoEnv => "just-identified",
                crate::cd_classic::CdMode::OneVsRest => "one-vs-rest",
            };
            Ok((0..data.p())
                .map(|j| EstimateRow {
                    method: "cd".into(),
                    coefficient: names[j].clone(),
                    estimate: f.beta_hat[j],
                    se: f.se[j],
                    ci_low: f.ci_low[j],
                    ci_high: f.ci_high[j],
                    p_value: f.p_values[j],
                    identification: ident.into(),
                    n: data.n(),
                    level,
                })
                .collect())
        }
        Method::All => unreachable!("expanded by caller"),
    }
}

/// Fit the requested method(s) and render the report.
///
/// With `Method::All`, methods that do not apply to the data (e.g. `cd`
/// without environment labels, `iv` with fewer instruments than exposures)
/// are skipped with a note on `err`.
pub fn cmd_estimate(
    input: &std::path::Path,
    roles: &ColumnRoles,
    method: Method,
    level: f64,
    format: Format,
    center_xy: bool,
    err: &mut dyn Write,
) -> Result<String> {
    crate::gmm::normal_quantile(level)?;
    let data = load_csv(input, roles)?;
    let data = if center_xy { data.center_xy() } else { data };
    let mut rows = Vec::new();
    match method {
        Method::All => {
            let mut first_err = None;
            for m in Method::EACH {
                match method_rows(m, &data, level, err) {
                    Ok(r) => rows.extend(r),
                    Err(e) => {
                        let _ = writeln!(err, "note: skipping {}: {e}", m.name());
                        first_err.get_or_insert(e);
                    }
                }
            }
            if rows.is_empty() {
                return Err(first_err.expect("at least one method ran"));
            }
        }
        m => rows = method_rows(m, &data, level, err)?,
    }
    render_estimates(&rows, format)
}

pub const ESTIMATE_HEADER: &str = "method\tcoefficient\testimate\tse\tci_low\tci_high\tp_value\tidentification\tn\tlevel";

fn render_estimates(rows: &[EstimateRow], format: Format) -> Result<String> {
    match format {
        Format::Json => serde_json::to_string_pretty(rows)
            .map(|s| s + "\n")
            .map_err(|e| Error::Io(e.to_string())),
        Format::Tsv => {
            let mut s = String::from(ESTIMATE_HEADER);
            s.push('\n');
            for r in rows {
                let fields = [
                    r.method.clone(),
                    r.coefficient.clone(),
                    fmt_sig(r.estimate, 6),
                    fmt_sig(r.se, 6),
                    fmt_sig(r.ci_low, 6),
                    fmt_sig(r.ci_high, 6),
                    fmt_sig(r.p_value, 6),
                    r.identification.clone(),
                    r.n.to_string(),
                    fmt_sig(r.level, 6),
                ];
                s.push_str(&fields.join("\t"));
                s.push('\n');
            }
            Ok(s)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub scenario: Option<String>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub estimators: Option<Vec<String>>,
    pub level: Option<f64>,
}

/// Resolve the scenario and run the study.
pub fn cmd_simulate(args: &SimulateArgs, err: &mut dyn Write) -> Result<McReport> {
    let (mut scenario, file_n, file_est, file_level, default_name) = match (&args.scenario, &args.config) {
        (Some(name), _) => (ScenarioConfig::named(name)?, None, None, None, name.as_str()),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let f = ScenarioFile::parse(&text)?;
            (f.scenario, f.replicates, f.estimators, f.level, "")
        }
        (None, None) => return Err(Error::InvalidInput("give a scenario name or --config".into())),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let replicates = args
        .replicates
        .or(file_n)
        .unwrap_or_else(|| default_replicates(default_name));
    let estimators = match args.estimators.clone().or(file_est) {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<Vec<Estimator>>>()?,
        None => default_estimators(default_name),
    };
    let level = args.level.or(file_level).unwrap_or(0.95);
    let _ = writeln!(
        err,
        "running {replicates} replicates of {:?} (n = {}, seed = {})",
        scenario.model, scenario.n, scenario.seed
    );
    let report = run_monte_carlo(&scenario, &estimators, replicates, level)?;
    for est in &report.estimators {
        if est.failures > 0 {
            let _ = writeln!(err, "note: {} failed on {} replicate(s)", est.name, est.failures);
        }
    }
    Ok(report)
}

fn write_simulation(report: &McReport, format: Format, prefix: Option<&PathBuf>, out: &mut dyn Write) -> Result<()> {
    if let Some(prefix) = prefix {
        let with_ext = |ext: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        let write = |path: PathBuf, text: &str| std::fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())));
        write(with_ext(".tsv"), &report.to_tsv())?;
        write(with_ext(".json"), &report.to_json()?)?;
        write(with_ext(".estimates.tsv"), &report.estimates_tsv())?;
    }
    let text = match format {
        Format::Tsv => report.summary_table(),
        Format::Json => report.to_json()? + "\n",
    };
    out.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let cli = match Cli::try_parse_from(args) {
            Ok(c) => c,
            Err(e) => return (EXIT_INPUT, String::new(), e.to_string()),
        };
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(cli, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_scenario_lists_names() {
        let (code, _, err) = run_args(&["causal-gmm", "simulate", "fig9"]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("fig2, table1, model1, model2, do"), "{err}");
    }

    #[test]
    fn scenarios_listing() {
        let (code, out, _) = run_args(&["causal-gmm", "scenarios"]);
        assert_eq!(code, EXIT_OK);
        for name in SCENARIO_NAMES {
            assert!(out.contains(&format!("# {name}:")));
        }
    }

    #[test]
    fn missing_instrument_role_is_usage_error() {
        let (code, _, _) = run_args(&["causal-gmm", "estimate", "--input", "x.csv", "--response", "y", "--exposures", "x"]);
        assert_eq!(code, EXIT_INPUT);
    }

    #[test]
    fn missing_file_is_input_error() {
        let (code, _, err) = run_args(&[
            "causal-gmm",
            "estimate",
            "--input",
            "/nonexistent/file.csv",
            "--response",
            "y",
            "--exposures",
            "x",
            "--env",
            "env",
        ]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("nonexistent"));
    }
}
