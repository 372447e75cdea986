use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use portkit::{diff_logs, parse_constraint, ActionLog};
use portkit_sim::{
    default_registry, Manifest, ManifestError, SimError, Simulation, DEFAULT_DURATION, DEFAULT_SEED,
};

const EXIT_OK: u8 = 0;
const EXIT_RUNTIME: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_INCONSISTENT: u8 = 3;
const EXIT_MISMATCH: u8 = 4;

const GOLDEN_FILE: &str = "golden.log";

/// Run, check and inspect portkit scenarios.
#[derive(Debug, Parser)]
#[command(name = "portkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and print its action log.
    Run {
        /// Manifest file, scenario directory, or scenario name.
        manifest: String,
        /// Virtual seconds to simulate.
        #[arg(long)]
        duration: Option<f64>,
        /// Seed for randomized modules.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the log here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Store the log as the scenario's golden log.
        #[arg(long, conflicts_with = "compare")]
        bless: bool,
        /// Compare the log with the scenario's golden log.
        #[arg(long)]
        compare: bool,
    },
    /// Parse a scenario and report on its selection rules.
    Check {
        manifest: String,
    },
    /// Evaluate a selection rule with the given events active.
    Eval {
        /// Rule text; omit with --repl to read rules from standard input.
        expr: Option<String>,
        /// Active event names.
        active: Vec<String>,
        /// Read one rule per line from standard input.
        #[arg(long)]
        repl: bool,
    },
    /// Compare two action logs.
    Diff {
        expected: PathBuf,
        actual: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            manifest,
            duration,
            seed,
            out,
            bless,
            compare,
        } => cmd_run(&manifest, duration, seed, out.as_deref(), bless, compare),
        Command::Check { manifest } => cmd_check(&manifest),
        Command::Eval { expr, active, repl } => cmd_eval(expr, active, repl),
        Command::Diff { expected, actual } => cmd_diff(&expected, &actual),
    };
    ExitCode::from(code)
}

/// A path to a manifest, a directory holding `scenario.manifest`, or a
/// scenario name under `$PORTKIT_SCENARIO_DIR` (default `scenarios`).
fn resolve_manifest(arg: &str) -> PathBuf {
    let direct = PathBuf::from(arg);
    let in_dir = |dir: &Path| dir.join("scenario.manifest");
    if direct.is_file() {
        return direct;
    }
    if direct.is_dir() {
        return in_dir(&direct);
    }
    let root = std::env::var_os("PORTKIT_SCENARIO_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("scenarios"));
    let named = root.join(arg);
    if named.is_dir() {
        in_dir(&named)
    } else {
        direct
    }
}

fn load(arg: &str) -> Result<Manifest, u8> {
    Manifest::load(&resolve_manifest(arg)).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            ManifestError::Io { .. } => EXIT_RUNTIME,
            ManifestError::Parse { .. } => EXIT_PARSE,
        }
    })
}

fn sim_exit(e: &SimError) -> u8 {
    match e {
        SimError::Inconsistent(_) => EXIT_INCONSISTENT,
        SimError::Manifest(ManifestError::Io { .. }) => EXIT_RUNTIME,
        e if e.is_config_error() => EXIT_PARSE,
        _ => EXIT_RUNTIME,
    }
}

fn cmd_run(
    arg: &str,
    duration: Option<f64>,
    seed: Option<u64>,
    out: Option<&Path>,
    bless: bool,
    compare: bool,
) -> u8 {
    let manifest = match load(arg) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let duration = duration.or(manifest.duration).unwrap_or(DEFAULT_DURATION);
    if !(duration.is_finite() && duration >= 0.0) {
        eprintln!("error: duration must be a nonnegative number");
        return EXIT_PARSE;
    }
    let seed = seed.or(manifest.seed).unwrap_or(DEFAULT_SEED);
    let sim = match Simulation::build(&manifest, seed, &default_registry()) {
        Ok(sim) => sim,
        Err(e) => {
            eprintln!("error: {e}");
            return sim_exit(&e);
        }
    };
    if !sim.audit().is_clean() {
        eprint!("{}", sim.audit());
    }
    let outcome = match sim.run(duration) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return sim_exit(&e);
        }
    };
    let text = outcome.log.to_text();
    let golden = manifest.base_dir.join(GOLDEN_FILE);
    if bless {
        if let Err(e) = std::fs::write(&golden, &text) {
            eprintln!("error: cannot write {}: {e}", golden.display());
            return EXIT_RUNTIME;
        }
        eprintln!("blessed {}", golden.display());
    }
    let written = match out {
        Some(path) => std::fs::write(path, &text).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None if bless => Ok(()),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return EXIT_RUNTIME;
    }
    if compare {
        let expected = match read_log(&golden) {
            Ok(log) => log,
            Err(code) => return code,
        };
        return report_diff(&expected, &outcome.log);
    }
    EXIT_OK
}

fn cmd_check(arg: &str) -> u8 {
    let manifest = match load(arg) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let seed = manifest.seed.unwrap_or(DEFAULT_SEED);
    match Simulation::assemble(&manifest, seed, &default_registry()) {
        Ok(sim) => {
            print!("{}", sim.audit());
            if manifest.mode == portkit_sim::Mode::Strict && !sim.audit().is_clean() {
                EXIT_INCONSISTENT
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            sim_exit(&e)
        }
    }
}

fn eval_line(expr: &str, active: &BTreeSet<String>) -> Result<bool, String> {
    parse_constraint(expr)
        .map(|e| e.evaluate(active))
        .map_err(|e| e.to_string())
}

fn cmd_eval(expr: Option<String>, active: Vec<String>, repl: bool) -> u8 {
    let (expr, active) = match (expr, repl) {
        (Some(e), false) => (e, active),
        (first, true) => {
            let active: BTreeSet<String> = first.into_iter().chain(active).collect();
            let stdin = io::stdin();
            for line in stdin.lock().lines() {
                let Ok(line) = line else { return EXIT_RUNTIME };
                if line.trim().is_empty() {
                    continue;
                }
                match eval_line(&line, &active) {
                    Ok(v) => println!("{v}"),
                    Err(e) => println!("error: {e}"),
                }
            }
            return EXIT_OK;
        }
        (None, false) => {
            eprintln!("error: no rule given");
            return EXIT_PARSE;
        }
    };
    match eval_line(&expr, &active.into_iter().collect()) {
        Ok(v) => {
            println!("{v}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_PARSE
        }
    }
}

fn read_log(path: &Path) -> Result<ActionLog, u8> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        EXIT_RUNTIME
    })?;
    ActionLog::parse(&text).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        EXIT_PARSE
    })
}

fn report_diff(expected: &ActionLog, actual: &ActionLog) -> u8 {
    let divergences = diff_logs(expected, actual);
    match divergences.first() {
        None => EXIT_OK,
        Some(d) => {
            println!("{d}");
            if divergences.len() > 1 {
                println!("({} differing lines in total)", divergences.len());
            }
            EXIT_MISMATCH
        }
    }
}

fn cmd_diff(expected: &Path, actual: &Path) -> u8 {
    let logs = read_log(expected).and_then(|e| read_log(actual).map(|a| (e, a)));
    match logs {
        Ok((e, a)) => report_diff(&e, &a),
        Err(code) => code,
    }
}
