//! Command-line front end: simulate trees, estimate from tree CSV files,
//! compute limit objects, run the verification checks, and report derived
//! moments. Exit codes: 0 success, 2 input/validation failure, 3 a
//! verification check failed.

mod config;

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use binar::experiments::{run_verify, stream_domain, CheckKind};
use binar::limits::limit_matrices_mc;
use binar::model::{derive_moments, validate_hypotheses};
use binar::rng::RngStream;
use binar::tree::{simulate_tree, BinarTree};
use config::Config;

#[derive(Parser)]
#[command(
    name = "binar",
    version,
    about = "Simulation, estimation and asymptotic verification for tree-indexed integer autoregressions"
)]
struct Cli {
    /// TOML configuration file; the built-in defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving output files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Result format: structured json or flat key,value csv.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a tree and write it as CSV.
    Simulate {
        /// Tree depth (generations below the ancestor).
        #[arg(long)]
        depth: Option<u32>,
        /// Output file; defaults to <out>/tree.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Estimate parameters from an observed tree CSV.
    Estimate {
        /// Tree file with header label,generation,value.
        #[arg(long)]
        tree: PathBuf,
        /// Generation to estimate at; defaults to the tree depth.
        #[arg(long)]
        n: Option<u32>,
    },
    /// Compute the limit objects by Monte Carlo.
    Limits {
        /// Number of limit-variable draws.
        #[arg(long)]
        draws: Option<u64>,
    },
    /// Run the configured verification checks.
    Verify {
        /// Comma-separated subset: rate,variance,qsl,clt.
        #[arg(long, value_delimiter = ',', value_parser = parse_check)]
        checks: Option<Vec<CheckKind>>,
    },
    /// Report derived moments and the assumption checks.
    Moments,
}

fn parse_check(s: &str) -> Result<CheckKind, String> {
    match s {
        "rate" => Ok(CheckKind::Rate),
        "variance" => Ok(CheckKind::Variance),
        "qsl" => Ok(CheckKind::Qsl),
        "clt" => Ok(CheckKind::Clt),
        other => Err(format!(
            "unknown check `{other}` (expected rate, variance, qsl or clt)"
        )),
    }
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn invalid(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn internal(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}

/// Where and how results are written.
struct OutputCtx {
    out: PathBuf,
    format: Format,
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let config_text = match &cli.config {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(invalid)?,
        None => config::DEFAULT_CONFIG.to_string(),
    };
    let config = Config::parse(&config_text).map_err(invalid)?;
    let seed = cli.seed.unwrap_or(config.experiment.seed);
    let ctx = OutputCtx {
        out: cli.out.clone(),
        format: cli.format,
    };

    match cli.command {
        Command::Simulate { depth, output } => {
            let params = config.model_params().map_err(invalid)?;
            let depth = depth.unwrap_or(config.simulate.depth);
            let stream = RngStream::new(seed)
                .substream(stream_domain::REPLICATES)
                .substream(0);
            let tree = simulate_tree(&params, depth, stream).map_err(|e| invalid(anyhow!(e)))?;
            let path = output.unwrap_or_else(|| ctx.out.join("tree.csv"));
            let mut buf = Vec::new();
            tree.write_csv(&mut buf).map_err(|e| internal(anyhow!(e)))?;
            write_file(&path, &buf)?;
            eprintln!(
                "wrote {} ({} nodes, depth {})",
                path.display(),
                tree.node_count(),
                tree.depth()
            );
            Ok(0)
        }
        Command::Estimate { tree, n } => {
            let file = File::open(&tree)
                .with_context(|| format!("opening {}", tree.display()))
                .map_err(invalid)?;
            let tree =
                BinarTree::read_csv(BufReader::new(file)).map_err(|e| invalid(anyhow!(e)))?;
            let n = n.unwrap_or(tree.depth());
            let estimates = binar::estimate_all(&tree, n).map_err(|e| invalid(anyhow!(e)))?;
            emit(&ctx, "estimates", &estimates)?;
            Ok(0)
        }
        Command::Limits { draws } => {
            let params = config.model_params().map_err(invalid)?;
            let draws = draws.unwrap_or(config.limits.draws);
            let stream = RngStream::new(seed).substream(stream_domain::LIMITS);
            let objects =
                limit_matrices_mc(&params, draws, stream).map_err(|e| invalid(anyhow!(e)))?;
            emit(&ctx, "limits", &objects)?;
            Ok(0)
        }
        Command::Moments => {
            let params = config.model_params().map_err(invalid)?;
            let moments = derive_moments(&params);
            let hypotheses = validate_hypotheses(&moments);
            let report = serde_json::json!({
                "moments": moments,
                "hypotheses": hypotheses,
            });
            emit(&ctx, "moments", &report)?;
            Ok(0)
        }
        Command::Verify { checks } => {
            let mut experiment = config.experiment_config(cli.seed).map_err(invalid)?;
            if let Some(checks) = checks {
                experiment.checks = checks;
            }
            let (report, trajectories) =
                run_verify(&experiment).map_err(|e| invalid(anyhow!(e)))?;
            emit(&ctx, "verify_report", &report)?;
            let mut buf = Vec::new();
            binar::experiments::write_trajectories_csv(&trajectories, &mut buf)
                .map_err(|e| internal(anyhow!(e)))?;
            let traj_path = ctx.out.join("trajectories.csv");
            write_file(&traj_path, &buf)?;
            eprintln!("wrote {}", traj_path.display());
            for (name, passed) in [
                ("rate", report.rate.as_ref().map(|r| r.passed)),
                ("variance", report.variance.as_ref().map(|r| r.passed)),
                ("qsl", report.qsl.as_ref().map(|r| r.passed)),
                ("clt", report.clt.as_ref().map(|r| r.passed)),
            ] {
                if let Some(passed) = passed {
                    println!("check {name}: {}", if passed { "PASS" } else { "FAIL" });
                }
            }
            Ok(if report.passed { 0 } else { 3 })
        }
    }
}

/// Serialize a result under <out>/<name>.{json,csv}, echoing it to stdout.
fn emit<T: serde::Serialize>(ctx: &OutputCtx, name: &str, value: &T) -> Result<(), Failure> {
    let json = serde_json::to_value(value).map_err(|e| internal(anyhow!(e)))?;
    let (bytes, extension) = match ctx.format {
        Format::Json => {
            let mut text = serde_json::to_string_pretty(&json).map_err(|e| internal(anyhow!(e)))?;
            text.push('\n');
            (text.into_bytes(), "json")
        }
        Format::Csv => (flatten_csv(&json).into_bytes(), "csv"),
    };
    let path = ctx.out.join(format!("{name}.{extension}"));
    write_file(&path, &bytes)?;
    std::io::stdout()
        .write_all(&bytes)
        .map_err(|e| internal(anyhow!(e)))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))
                .map_err(internal)?;
        }
    }
    fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(internal)
}

/// Flatten a JSON document into `key,value` rows with dotted paths, arrays
/// indexed numerically. Deterministic: object keys are emitted in map order.
fn flatten_csv(value: &serde_json::Value) -> String {
    let mut out = String::from("key,value\n");
    flatten_into(value, "", &mut out);
    out
}

fn flatten_into(value: &serde_json::Value, prefix: &str, out: &mut String) {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            for (key, v) in map {
                let path = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                flatten_into(v, &path, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten_into(v, &format!("{prefix}.{i}"), out);
            }
        }
        Value::String(s) => {
            out.push_str(prefix);
            out.push(',');
            out.push('"');
            out.push_str(&s.replace('"', "\"\""));
            out.push('"');
            out.push('\n');
        }
        other => {
            out.push_str(prefix);
            out.push(',');
            out.push_str(&other.to_string());
            out.push('\n');
        }
    }
}
