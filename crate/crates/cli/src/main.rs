//! `nls`: command-line front end for nls-core.

mod commands;
mod output;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use commands::{
    EvolveArgs, FgrArgs, MomentsArgs, ProfileArgs, ResolventArgs, ScanArgs, SelftestArgs,
    SpectrumArgs,
};

/// Thread count for parallel scans.
const THREADS_ENV: &str = "NLS_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "nls",
    version,
    about = "Soliton spectra, Fermi Golden Rule constants and dynamics for the power NLS"
)]
#[command(args_override_self = true)]
struct Cli {
    /// JSON file whose keys mirror the subcommand flags; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<String>,
    /// Write output here instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Soliton profile, conserved quantities and the refined profile at (omega, z).
    Profile(ProfileArgs),
    /// Internal eigenvalue by both methods.
    Spectrum(SpectrumArgs),
    /// Fermi Golden Rule constant gamma(p, 1).
    Fgr(FgrArgs),
    /// Weighted sup of the resolvent kernel.
    Resolvent(ResolventArgs),
    /// Scan of the stability conditions over a range of p.
    Scan(ScanArgs),
    /// Split-step evolution with modulation and diagnostics.
    Evolve(EvolveArgs),
    /// Sech moments and their integration-by-parts identities.
    Moments(MomentsArgs),
    /// Fast consistency checks.
    Selftest(SelftestArgs),
}

/// Splice the config file into argv right after the subcommand.
fn expand_config(argv: Vec<String>) -> Result<Vec<String>, String> {
    let pos = argv.iter().position(|a| a == "--config");
    let Some(pos) = pos else { return Ok(argv) };
    let path = argv.get(pos + 1).ok_or("--config needs a file")?.clone();
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read {path}: {e}"))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("{path}: {e}"))?;
    let obj = value
        .as_object()
        .ok_or_else(|| format!("{path}: expected a JSON object"))?;
    let mut extra = Vec::new();
    for (k, v) in obj {
        let flag = format!("--{}", k.replace('_', "-"));
        let scalar = |v: &serde_json::Value| match v {
            serde_json::Value::String(s) => Ok(s.clone()),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            other => Err(format!("{path}: unsupported value for {k}: {other}")),
        };
        match v {
            serde_json::Value::Bool(true) => extra.push(flag),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                extra.push(flag);
                for it in items {
                    extra.push(scalar(it)?);
                }
            }
            other => {
                extra.push(flag);
                extra.push(scalar(other)?);
            }
        }
    }
    let mut rest: Vec<String> = argv
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != pos && *i != pos + 1)
        .map(|(_, a)| a.clone())
        .collect();
    let names = [
        "profile",
        "spectrum",
        "fgr",
        "resolvent",
        "scan",
        "evolve",
        "moments",
        "selftest",
    ];
    let sub = rest
        .iter()
        .position(|a| names.contains(&a.as_str()))
        .ok_or("no subcommand")?;
    // config values first so that explicit flags override them
    for (j, a) in extra.into_iter().enumerate() {
        rest.insert(sub + 1 + j, a);
    }
    Ok(rest)
}

fn run(argv: Vec<String>) -> u8 {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    if let Ok(t) = std::env::var(THREADS_ENV) {
        match t.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {t:?}");
                return 2;
            }
        }
    }
    let result = match &cli.command {
        Command::Profile(a) => commands::profile(a),
        Command::Spectrum(a) => commands::spectrum(a),
        Command::Fgr(a) => commands::fgr(a),
        Command::Resolvent(a) => commands::resolvent(a),
        Command::Scan(a) => commands::scan(a),
        Command::Evolve(a) => commands::evolve(a),
        Command::Moments(a) => commands::moments(a),
        Command::Selftest(a) => commands::selftest(a),
    };
    match result {
        Ok(out) => {
            if let Err(e) = out.emit(cli.out.as_deref()) {
                eprintln!("error: {e}");
                return 1;
            }
            if out.ok {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args().collect()))
}
