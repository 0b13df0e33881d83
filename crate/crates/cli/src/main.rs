mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::fs;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use phasecrash_core::io::RunManifest;

use crate::args::{Cli, Command};
use crate::commands::Usage;

/// Drop `--out` and `--threads` (with their values) so the recorded
/// arguments describe the computation, not where or how fast it ran.
fn manifest_args(argv: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
            continue;
        }
        if a == "--out" || a == "--threads" {
            skip = true;
            continue;
        }
        if a.starts_with("--out=") || a.starts_with("--threads=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}

fn parse(argv: &[String]) -> std::result::Result<Cli, clap::Error> {
    Cli::try_parse_from(std::iter::once("phasecrash".to_string()).chain(argv.iter().cloned()))
}

fn run(cli: Cli, argv: &[String], expected_digest: Option<&str>) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Usage("--threads must be at least 1".into()).into());
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }

    if let Command::Replay(r) = &cli.command {
        let text = fs::read_to_string(&r.manifest).with_context(|| format!("reading {}", r.manifest.display()))?;
        let manifest: RunManifest = serde_json::from_str(&text).context("parsing manifest")?;
        let mut replay_argv = manifest.args.clone();
        let out = cli.out.clone().ok_or_else(|| Usage("--out is required".into()))?;
        replay_argv.push("--out".into());
        replay_argv.push(out.to_string_lossy().into_owned());
        let inner = parse(&replay_argv).map_err(|e| Usage(format!("manifest arguments do not parse: {e}")))?;
        if matches!(inner.command, Command::Replay(_)) {
            return Err(Usage("a manifest cannot replay another replay".into()).into());
        }
        return run(inner, &manifest.args, Some(&manifest.input_digest));
    }

    let out_dir = cli.out.clone().ok_or_else(|| Usage("--out is required".into()))?;
    let digest = commands::input_digest(&commands::inputs(&cli))?;
    if let Some(want) = expected_digest {
        if want != digest {
            return Err(Usage(format!("inputs changed since the manifest was written ({want} != {digest})")).into());
        }
    }
    let output = commands::execute(&cli)?;
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        args: manifest_args(argv),
        config: output.config.clone(),
        seed: output.seed,
        tool_version: phasecrash_core::VERSION.to_string(),
        input_digest: digest,
    };
    commands::write_outputs(&out_dir, &output, &manifest)?;
    log::info!("wrote {} file(s) to {}", output.files.len() + 1, out_dir.display());
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<phasecrash_core::Error>() {
        Some(core) if !core.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PHASECRASH_LOG", "warn"))
        .format_timestamp(None)
        .init();

    let argv: Vec<String> = match std::env::args_os().skip(1).map(OsString::into_string).collect() {
        Ok(v) => v,
        Err(_) => {
            eprintln!("error: arguments must be valid UTF-8");
            return ExitCode::from(1);
        }
    };
    let cli = match parse(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, &argv, None) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
