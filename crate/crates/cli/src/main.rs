//! `mobility`: runs scenario documents and writes their artifacts plus a
//! run manifest.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use mobility_core::scenario::spec::Kind;
use mobility_core::scenario::{output_dir, parse_scenario, RunReport, Scenario};
use mobility_core::Error;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "mobility", version, about = "Traffic flow, routing and platoon scheduling scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Network simulation with static splits or routing policies.
    Simulate(RunArgs),
    /// Day-to-day equilibration over a sweep of routed fractions.
    Equilibrium(RunArgs),
    /// Backlog-minimizing splits and departure rates.
    SocialOpt(RunArgs),
    /// Truck speed control that concentrates the truck flow.
    PlatoonFlow(RunArgs),
    /// Delay scheduling by log-linear learning.
    Schedule(RunArgs),
    /// Delay scheduling with encrypted occupancy counts.
    SchedulePrivate(RunArgs),
    /// Checks a scenario of any kind without running it.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's `output`, else
    /// `out/<scenario name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    threads: Option<usize>,
    /// Parse and validate only.
    #[arg(long)]
    validate_only: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    bytes: u64,
    sha256: String,
}

/// Failure reported as JSON on stderr.
struct Failure {
    kind: &'static str,
    code: u8,
    detail: serde_json::Value,
}

impl Failure {
    fn usage(message: String) -> Self {
        Self {
            kind: "usage",
            code: 2,
            detail: json!({ "message": message }),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::Schema {
                field,
                line,
                column,
                message,
            } => Self {
                kind: "schema",
                code: 2,
                detail: json!({ "field": field, "line": line, "column": column, "message": message }),
            },
            Error::Io(_) => Self {
                kind: "io",
                code: 1,
                detail: json!({ "message": e.to_string() }),
            },
            _ => Self {
                kind: "compute",
                code: 1,
                detail: json!({ "message": e.to_string() }),
            },
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load(path: &Path) -> Result<(Scenario, String), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read scenario {}: {e}", path.display())))?;
    let scenario = parse_scenario(&text)?;
    Ok((scenario, sha256_hex(text.as_bytes())))
}

fn validate(args: &ValidateArgs) -> Result<(), Failure> {
    let (scenario, digest) = load(&args.scenario)?;
    scenario.validate()?;
    println!(
        "{}",
        json!({ "valid": true, "kind": scenario.kind.name(), "scenario_sha256": digest })
    );
    Ok(())
}

fn write_manifest(
    out: &Path,
    scenario_path: &Path,
    digest: &str,
    report: &RunReport,
    threads: usize,
    wall: f64,
) -> Result<(), Failure> {
    let artifacts = report
        .artifacts
        .iter()
        .filter(|p| p.as_path() != Path::new("manifest.json"))
        .map(|p| {
            let bytes = std::fs::read(out.join(p)).map_err(Error::from)?;
            Ok(Artifact {
                path: p.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64() - wall)
        .unwrap_or(0.0);
    let manifest = json!({
        "kind": report.kind.name(),
        "scenario": { "path": scenario_path.to_string_lossy(), "sha256": digest },
        "seed": report.seed,
        "versions": {
            "mobility-cli": env!("CARGO_PKG_VERSION"),
            "mobility-core": mobility_core::VERSION,
        },
        "threads": threads,
        "started_unix": started,
        "wall_time_s": wall,
        "artifacts": artifacts,
        "summary": report.summary,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    std::fs::write(out.join("manifest.json"), text + "\n").map_err(Error::from)?;
    Ok(())
}

fn run(expected: Kind, args: &RunArgs) -> Result<(), Failure> {
    let (scenario, digest) = load(&args.scenario)?;
    if scenario.kind != expected {
        return Err(Failure::usage(format!(
            "scenario is of kind `{}`, run it with `mobility {}`",
            scenario.kind.name(),
            scenario.kind.name()
        )));
    }
    if args.validate_only {
        scenario.validate()?;
        println!("{}", json!({ "valid": true, "kind": scenario.kind.name(), "scenario_sha256": digest }));
        return Ok(());
    }
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot configure threads: {e}")))?;
    }
    let fallback = Path::new("out").join(args.scenario.file_stem().unwrap_or_default());
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| output_dir(&scenario, Path::new("."), &fallback));
    let start = Instant::now();
    let report = scenario.run(&out, args.seed)?;
    let wall = start.elapsed().as_secs_f64();
    write_manifest(&out, &args.scenario, &digest, &report, rayon::current_num_threads(), wall)?;
    println!(
        "{}",
        json!({
            "kind": report.kind.name(),
            "out": out.to_string_lossy(),
            "artifacts": report.artifacts.len() + 1,
            "wall_time_s": wall,
        })
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => run(Kind::Simulate, a),
        Command::Equilibrium(a) => run(Kind::Equilibrium, a),
        Command::SocialOpt(a) => run(Kind::SocialOpt, a),
        Command::PlatoonFlow(a) => run(Kind::PlatoonFlow, a),
        Command::Schedule(a) => run(Kind::Schedule, a),
        Command::SchedulePrivate(a) => run(Kind::SchedulePrivate, a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": { "type": f.kind, "detail": f.detail } }));
            ExitCode::from(f.code)
        }
    }
}
