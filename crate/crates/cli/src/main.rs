use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use consensus_core::scenarios::{preset_description, write_outputs, PRESET_NAMES};
use consensus_core::verify::{reports_json, run_suite, Suite};
use consensus_core::{load_scenario, preset, run_game, Error, Scenario};

#[derive(Parser)]
#[command(
    name = "consensus",
    version,
    about = "Crowd transport games with broadcasting agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in preset.
    Run {
        /// Scenario TOML file.
        scenario: Option<PathBuf>,
        #[arg(long, conflicts_with = "scenario")]
        preset: Option<String>,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        ny: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated snapshot times.
        #[arg(long, value_delimiter = ',')]
        snapshots: Option<Vec<f64>>,
        /// Accepted for scripting; every run is deterministic regardless.
        #[arg(long)]
        seedless_deterministic: bool,
    },
    /// Run the verification checks.
    Verify {
        #[arg(long, default_value = "all", value_parser = parse_suite)]
        suite: Suite,
        /// Where to write the JSON report.
        #[arg(long, default_value = "verify_report.json")]
        report: PathBuf,
    },
    /// List the built-in presets.
    Presets {
        #[arg(long)]
        json: bool,
    },
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse()
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICS: u8 = 3;

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERICS
    })
}

fn configure_threads() {
    if let Some(n) = std::env::var("CONSENSUS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            // only fails if a pool already exists
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

fn load(scenario: Option<PathBuf>, preset_name: Option<String>) -> Result<Scenario, Error> {
    match (scenario, preset_name) {
        (Some(path), _) => load_scenario(path),
        (None, Some(name)) => preset(&name),
        (None, None) => Err(Error::Config {
            key: "scenario".into(),
            reason: "give a scenario file or --preset".into(),
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    scenario: Option<PathBuf>,
    preset_name: Option<String>,
    nx: Option<usize>,
    ny: Option<usize>,
    out: PathBuf,
    snapshots: Option<Vec<f64>>,
) -> ExitCode {
    let mut s = match load(scenario, preset_name) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    if nx.is_some() || ny.is_some() {
        let (nx, ny) = (nx.unwrap_or(s.grid.nx), ny.unwrap_or(s.grid.ny));
        s = s.with_grid(nx, ny);
    }
    if let Some(t) = snapshots {
        s.output.snapshot_times = t;
    }
    if let Err(e) = s.validate() {
        return fail(&e);
    }
    let trace = match run_game(&s) {
        Ok(t) => t,
        Err(e) => return fail(&e),
    };
    if let Err(e) = write_outputs(&trace, s.name.as_deref(), &out) {
        return fail(&e);
    }
    for (i, j) in trace.final_costs.iter().enumerate() {
        println!("J_{}={}", i + 1, j);
    }
    ExitCode::SUCCESS
}

fn cmd_verify(suite: Suite, report: PathBuf) -> ExitCode {
    let reports = match run_suite(suite) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    for r in &reports {
        println!("{}", r.summary_line());
    }
    let text = serde_json::to_string_pretty(&reports_json(&reports)).expect("reports serialize");
    if let Err(e) = std::fs::write(&report, text + "\n") {
        return fail(&Error::Io {
            path: report,
            source: e,
        });
    }
    if reports.iter().all(|r| r.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}

fn cmd_presets(json: bool) -> ExitCode {
    if json {
        let list: Vec<_> = PRESET_NAMES
            .iter()
            .map(|n| serde_json::json!({ "name": n, "description": preset_description(n) }))
            .collect();
        println!(
            "{}",
            serde_json::to_string_pretty(&list).expect("list serializes")
        );
    } else {
        for n in PRESET_NAMES {
            println!("{n:<28} {}", preset_description(n).unwrap_or(""));
        }
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match cli.command {
        Command::Run {
            scenario,
            preset,
            nx,
            ny,
            out,
            snapshots,
            seedless_deterministic: _,
        } => cmd_run(scenario, preset, nx, ny, out, snapshots),
        Command::Verify { suite, report } => cmd_verify(suite, report),
        Command::Presets { json } => cmd_presets(json),
    }
}
