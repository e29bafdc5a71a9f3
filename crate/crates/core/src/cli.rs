//! Command-line front end: config ingestion, experiment execution, simplex
//! sweeps, oracle checks, GHZ runs, and report emission.
//!
//! JSON is the canonical output format. Reports are serialized by hand with
//! a fixed key order and floats printed at 17 significant digits, so a fixed
//! `(config, seed)` pair yields byte-identical output regardless of thread
//! count or machine.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::channels::{NoiseParams, PhaseDist};
use crate::error::{Error, Result};
use crate::oracle::{cross_check, ORACLE_TOL};
use crate::protocol::{run_experiment, Branch, RunConfig, RunStats};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

impl OutputFormat {
    pub fn label(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::Config(format!(
                "unknown format `{other}` (expected json|csv)"
            ))),
        }
    }
}

/// Fully resolved experiment configuration: engine parameters plus output
/// disposition.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
}

#[derive(Parser, Debug)]
#[command(
    name = "timebin-epp",
    version,
    about = "Simulate deterministic polarization-entanglement purification via time-bin encoding"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one Monte Carlo experiment and emit a report.
    Run(CommonArgs),
    /// Run experiments over the Bell-diagonal simplex grid.
    Sweep(SweepArgs),
    /// Compare the sparse engine against the density-matrix oracle.
    OracleCheck(OracleArgs),
    /// Run the multipartite GHZ pipeline.
    Ghz(CommonArgs),
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// TOML config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bell-diagonal weight of the unflipped component.
    #[arg(long = "F")]
    pub big_f: Option<f64>,
    /// Bell-diagonal phase-flip weight.
    #[arg(long)]
    pub a: Option<f64>,
    /// Bell-diagonal bit-flip weight.
    #[arg(long)]
    pub b: Option<f64>,
    /// Bell-diagonal combined-flip weight.
    #[arg(long)]
    pub c: Option<f64>,
    /// Per-side transmission phase distribution: zero|uniform.
    #[arg(long = "theta-dist")]
    pub theta_dist: Option<String>,
    /// Adversarial time-bin dephasing angle in radians.
    #[arg(long)]
    pub dephasing: Option<f64>,
    /// Number of Monte Carlo trials.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Master seed; trial i uses stream (seed, i).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fix the spatial branch: a1a2|a1b2|a2b1|b1b2.
    #[arg(long)]
    pub branch: Option<String>,
    /// Number of parties (2 for the bipartite protocol).
    #[arg(long)]
    pub parties: Option<usize>,
    /// Output format: json|csv.
    #[arg(long)]
    pub format: Option<String>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Simplex grid step (must divide 1 evenly).
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    /// Master seed for the randomized draw suite.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of randomized (noise, branch, phases) draws.
    #[arg(long, default_value_t = 100)]
    pub draws: u64,
    /// Write the check report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileNoise {
    #[serde(rename = "F")]
    f: Option<f64>,
    a: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    noise: Option<FileNoise>,
    theta_dist: Option<String>,
    dephasing: Option<f64>,
    trials: Option<u64>,
    seed: Option<u64>,
    parties: Option<usize>,
    branch: Option<String>,
    format: Option<String>,
}

/// Merge defaults, an optional TOML file, and flag overrides into a
/// validated configuration. Flag values win over file values.
pub fn parse_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let file_noise = file.noise.unwrap_or_default();
    let noise = NoiseParams::new(
        args.big_f.or(file_noise.f).unwrap_or(1.0),
        args.a.or(file_noise.a).unwrap_or(0.0),
        args.b.or(file_noise.b).unwrap_or(0.0),
        args.c.or(file_noise.c).unwrap_or(0.0),
    )?;
    let theta_dist = match args.theta_dist.as_deref().or(file.theta_dist.as_deref()) {
        Some(s) => PhaseDist::parse(s)?,
        None => PhaseDist::Zero,
    };
    let branch = match args.branch.as_deref().or(file.branch.as_deref()) {
        Some(s) => Some(s.parse::<Branch>()?),
        None => None,
    };
    let format = match args.format.as_deref().or(file.format.as_deref()) {
        Some(s) => OutputFormat::parse(s)?,
        None => OutputFormat::Json,
    };
    let run = RunConfig {
        noise,
        theta_dist,
        dephasing: args.dephasing.or(file.dephasing),
        trials: args.trials.or(file.trials).unwrap_or(1000),
        seed: args.seed.or(file.seed).unwrap_or(0),
        parties: args.parties.or(file.parties).unwrap_or(2),
        branch,
    };
    run.validate()?;
    Ok(ExperimentConfig {
        run,
        format,
        out: args.out.clone(),
    })
}

/// One experiment's emitted record: the config echo plus aggregates.
#[derive(Debug, Clone)]
pub struct Report {
    pub config: RunConfig,
    pub stats: RunStats,
}

/// 17 significant digits, stable across platforms.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl Report {
    /// Fixed-key-order JSON object. No unknown fields ever appear.
    pub fn to_json(&self) -> String {
        let cfg = &self.config;
        let mut s = String::new();
        s.push('{');
        let _ = write!(
            s,
            "\"engine_version\":{},",
            json_string(ENGINE_VERSION)
        );
        s.push_str("\"config\":{");
        let _ = write!(
            s,
            "\"noise\":{{\"F\":{},\"a\":{},\"b\":{},\"c\":{}}},",
            fmt_f64(cfg.noise.f),
            fmt_f64(cfg.noise.a),
            fmt_f64(cfg.noise.b),
            fmt_f64(cfg.noise.c)
        );
        let _ = write!(s, "\"theta_dist\":{},", json_string(cfg.theta_dist.label()));
        match cfg.dephasing {
            Some(phi) => {
                let _ = write!(s, "\"dephasing\":{},", fmt_f64(phi));
            }
            None => s.push_str("\"dephasing\":null,"),
        }
        let _ = write!(s, "\"trials\":{},", cfg.trials);
        let _ = write!(s, "\"seed\":{},", cfg.seed);
        let _ = write!(s, "\"parties\":{},", cfg.parties);
        match cfg.branch {
            Some(b) => {
                let _ = write!(s, "\"branch\":{}", json_string(b.label()));
            }
            None => s.push_str("\"branch\":null"),
        }
        s.push_str("},");
        let _ = write!(
            s,
            "\"success_probability\":{},",
            fmt_f64(self.stats.success_probability)
        );
        let _ = write!(
            s,
            "\"mean_corrected_fidelity\":{},",
            fmt_f64(self.stats.mean_corrected_fidelity)
        );
        let _ = write!(s, "\"success_count\":{},", self.stats.success_count);
        s.push_str("\"pattern_counts\":{");
        let mut first = true;
        for (k, v) in &self.stats.pattern_counts {
            if !first {
                s.push(',');
            }
            first = false;
            let _ = write!(s, "{}:{}", json_string(k), v);
        }
        s.push_str("},\"branch_counts\":{");
        first = true;
        for (k, v) in &self.stats.branch_counts {
            if !first {
                s.push(',');
            }
            first = false;
            let _ = write!(s, "{}:{}", json_string(k), v);
        }
        s.push_str("}}");
        s
    }

    pub fn csv_row(&self) -> String {
        let cfg = &self.config;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(cfg.noise.f),
            fmt_f64(cfg.noise.a),
            fmt_f64(cfg.noise.b),
            fmt_f64(cfg.noise.c),
            cfg.theta_dist.label(),
            cfg.dephasing.map(fmt_f64).unwrap_or_default(),
            cfg.trials,
            cfg.seed,
            cfg.parties,
            cfg.branch.map(Branch::label).unwrap_or(""),
            fmt_f64(self.stats.success_probability),
            fmt_f64(self.stats.mean_corrected_fidelity),
            self.stats.success_count
        )
    }
}

pub const CSV_HEADER: &str = "F,a,b,c,theta_dist,dephasing,trials,seed,parties,branch,\
success_probability,mean_corrected_fidelity,success_count";

fn render_reports(reports: &[Report], format: OutputFormat, extra: Option<&str>) -> String {
    match format {
        OutputFormat::Json => {
            if reports.len() == 1 && extra.is_none() {
                let mut doc = reports[0].to_json();
                doc.push('\n');
                doc
            } else {
                let mut doc = String::new();
                doc.push('{');
                let _ = write!(doc, "\"engine_version\":{},", json_string(ENGINE_VERSION));
                if let Some(e) = extra {
                    doc.push_str(e);
                    doc.push(',');
                }
                doc.push_str("\"reports\":[");
                for (i, r) in reports.iter().enumerate() {
                    if i > 0 {
                        doc.push(',');
                    }
                    doc.push_str(&r.to_json());
                }
                doc.push_str("]}\n");
                doc
            }
        }
        OutputFormat::Csv => {
            let mut doc = String::from(CSV_HEADER);
            doc.push('\n');
            for r in reports {
                doc.push_str(&r.csv_row());
                doc.push('\n');
            }
            doc
        }
    }
}

fn emit(doc: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, doc)?,
        None => print!("{doc}"),
    }
    Ok(())
}

/// Execute one experiment and render its report.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<String> {
    let stats = run_experiment(&cfg.run)?;
    let report = Report {
        config: cfg.run.clone(),
        stats,
    };
    Ok(render_reports(&[report], cfg.format, None))
}

/// Enumerate the simplex grid {F,a,b,c ≥ 0, F+a+b+c = 1} with the given
/// step as integer compositions of 1/step into four parts.
pub fn simplex_grid(step: f64) -> Result<Vec<NoiseParams>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("step {step} out of (0, 1]")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("step {step} does not divide 1")));
    }
    let n = n as u32;
    let mut grid = Vec::new();
    for i in 0..=n {
        for j in 0..=n - i {
            for k in 0..=n - i - j {
                let l = n - i - j - k;
                grid.push(NoiseParams::new(
                    f64::from(i) / f64::from(n),
                    f64::from(j) / f64::from(n),
                    f64::from(k) / f64::from(n),
                    f64::from(l) / f64::from(n),
                )?);
            }
        }
    }
    Ok(grid)
}

/// Run one experiment per simplex grid point and render them as a single
/// document.
pub fn cmd_sweep(cfg: &ExperimentConfig, step: f64) -> Result<String> {
    let grid = simplex_grid(step)?;
    let mut reports = Vec::with_capacity(grid.len());
    for noise in grid {
        let mut run = cfg.run.clone();
        run.noise = noise;
        let stats = run_experiment(&run)?;
        reports.push(Report { config: run, stats });
    }
    let extra = format!(
        "\"step\":{},\"points\":{}",
        fmt_f64(step),
        reports.len()
    );
    Ok(render_reports(&reports, cfg.format, Some(&extra)))
}

/// Randomized engine/oracle agreement suite: Dirichlet-ish simplex draws,
/// uniform branch, uniform per-side phases and dephasing angle.
pub fn cmd_oracle_check(seed: u64, draws: u64) -> Result<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_dev = 0.0f64;
    for _ in 0..draws {
        let raw: [f64; 4] = std::array::from_fn(|_| -rng.gen::<f64>().max(1e-12).ln());
        let total: f64 = raw.iter().sum();
        let p = NoiseParams::new(
            raw[0] / total,
            raw[1] / total,
            raw[2] / total,
            1.0 - raw[0] / total - raw[1] / total - raw[2] / total,
        )?;
        let branch = Branch::ALL[rng.gen_range(0..4)];
        let thetas = (
            rng.gen::<f64>() * std::f64::consts::TAU,
            rng.gen::<f64>() * std::f64::consts::TAU,
        );
        let dephasing = rng.gen::<f64>() * std::f64::consts::TAU;
        let dev = cross_check(&p, branch, thetas, dephasing)?;
        max_dev = max_dev.max(dev);
    }
    let pass = max_dev < ORACLE_TOL;
    let doc = format!(
        "{{\"engine_version\":{},\"seed\":{},\"draws\":{},\"max_deviation\":{},\"pass\":{}}}\n",
        json_string(ENGINE_VERSION),
        seed,
        draws,
        fmt_f64(max_dev),
        pass
    );
    Ok((doc, max_dev))
}

/// Dispatch a parsed command line. Returns the process exit code.
pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = parse_config(&args)?;
            let doc = cmd_run(&cfg)?;
            emit(&doc, cfg.out.as_ref())
        }
        Command::Ghz(mut args) => {
            // the GHZ subcommand defaults to three parties
            args.parties = args.parties.or(Some(3));
            let cfg = parse_config(&args)?;
            let doc = cmd_run(&cfg)?;
            emit(&doc, cfg.out.as_ref())
        }
        Command::Sweep(args) => {
            let cfg = parse_config(&args.common)?;
            let doc = cmd_sweep(&cfg, args.step)?;
            emit(&doc, cfg.out.as_ref())
        }
        Command::OracleCheck(args) => {
            let (doc, max_dev) = cmd_oracle_check(args.seed, args.draws)?;
            emit(&doc, args.out.as_ref())?;
            if max_dev >= ORACLE_TOL {
                return Err(Error::InternalConsistency(format!(
                    "engine/oracle deviation {max_dev} exceeds {ORACLE_TOL}"
                )));
            }
            Ok(())
        }
    }
}

/// Entry point shared with the binary: parse, dispatch, map errors to the
/// documented exit codes (0 success, 1 config, 2 internal).
pub fn run_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                eprint!("{e}");
                return 1;
            }
            // --help / --version
            print!("{e}");
            return 0;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, &str)]) -> CommonArgs {
        let mut argv: Vec<String> = vec!["timebin-epp".into(), "run".into()];
        for (k, v) in pairs {
            argv.push(format!("--{k}"));
            argv.push(v.to_string());
        }
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Run(args) => args,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_build_valid_config() {
        let args = flags(&[
            ("F", "0.7"),
            ("a", "0.1"),
            ("b", "0.1"),
            ("c", "0.1"),
            ("trials", "1000"),
            ("seed", "42"),
        ]);
        let cfg = parse_config(&args).unwrap();
        assert_eq!(cfg.run.trials, 1000);
        assert_eq!(cfg.run.seed, 42);
        assert!((cfg.run.noise.f - 0.7).abs() < 1e-15);
        assert_eq!(cfg.format, OutputFormat::Json);
    }

    #[test]
    fn simplex_violation_is_a_config_error() {
        let args = flags(&[("F", "0.7"), ("a", "0.7")]);
        let err = parse_config(&args).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn flag_overrides_file_value() {
        let dir = std::env::temp_dir().join("timebin-epp-cli-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("config.toml");
        fs::write(
            &path,
            "trials = 50\nseed = 99\n\n[noise]\nF = 0.5\na = 0.5\n",
        )
        .unwrap();
        let mut args = flags(&[("seed", "7")]);
        args.config = Some(path);
        let cfg = parse_config(&args).unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.run.trials, 50);
        assert!((cfg.run.noise.a - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unknown_file_field_is_diagnosed() {
        let dir = std::env::temp_dir().join("timebin-epp-cli-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.toml");
        fs::write(&path, "trails = 50\n").unwrap();
        let mut args = CommonArgs::default();
        args.config = Some(path);
        let err = parse_config(&args).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("trails"));
    }

    #[test]
    fn simplex_grid_counts() {
        assert_eq!(simplex_grid(0.25).unwrap().len(), 35);
        assert_eq!(simplex_grid(0.1).unwrap().len(), 286);
        assert!(simplex_grid(0.3).is_err());
        for p in simplex_grid(0.5).unwrap() {
            p.validate().unwrap();
        }
    }

    #[test]
    fn json_report_round_trips_through_generic_parser() {
        let args = flags(&[("trials", "10")]);
        let cfg = parse_config(&args).unwrap();
        let doc = cmd_run(&cfg).unwrap();
        let value: serde_json::Value = serde_json::from_str(&doc).unwrap();
        assert_eq!(value["config"]["trials"], 10);
        assert!(value["success_probability"].as_f64().unwrap() >= 0.0);
        let keys: std::collections::BTreeSet<&str> =
            value.as_object().unwrap().keys().map(String::as_str).collect();
        let expected: std::collections::BTreeSet<&str> = [
            "engine_version",
            "config",
            "success_probability",
            "mean_corrected_fidelity",
            "success_count",
            "pattern_counts",
            "branch_counts",
        ]
        .into_iter()
        .collect();
        assert_eq!(keys, expected);
    }

    #[test]
    fn identical_seeds_yield_identical_documents() {
        let args = flags(&[("trials", "64"), ("seed", "5"), ("theta-dist", "uniform")]);
        let cfg = parse_config(&args).unwrap();
        assert_eq!(cmd_run(&cfg).unwrap(), cmd_run(&cfg).unwrap());
    }

    #[test]
    fn csv_has_fixed_header_and_one_row_per_point() {
        let args = flags(&[("trials", "8"), ("format", "csv")]);
        let cfg = parse_config(&args).unwrap();
        let doc = cmd_sweep(&cfg, 0.5).unwrap();
        let lines: Vec<&str> = doc.trim_end().lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + simplex_grid(0.5).unwrap().len());
    }

    #[test]
    fn float_formatting_is_17_significant_digits() {
        assert_eq!(fmt_f64(0.25), "2.5000000000000000e-1");
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        let parsed: f64 = fmt_f64(std::f64::consts::PI).parse().unwrap();
        assert_eq!(parsed, std::f64::consts::PI);
    }
}
