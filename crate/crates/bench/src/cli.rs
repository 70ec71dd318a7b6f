//! Command-line front end.
//!
//! ```text
//! regione-bench run       --config <path> --mode <vanilla|regione> [--out <dir>] [--seed <u64>]
//! regione-bench calibrate --config <path> [--traces <n>] [--out <dir>] [--seed <u64>]
//! regione-bench compare   --config <path> [--out <dir>] [--seed <u64>]
//! regione-bench mask      --config <path> [--out <dir>] [--seed <u64>]
//! ```
//!
//! Exit codes: 0 success, 1 runtime failure, 2 unusable config or usage.
//! `REGIONE_LOG` = quiet | info | debug controls stderr verbosity.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use regione_core::avd::fit_gamma;

use crate::config::BenchScenario;
use crate::error::{BenchError, Result};
use crate::scenario::{build, calibration_trace, preview_mask, run_timed, RunMode};
use crate::{gamma_file, logging, pgm, report, tensor_file};

const USAGE: &str = "usage: regione-bench <run|calibrate|compare|mask> --config <path> \
                     [--mode <vanilla|regione>] [--out <dir>] [--seed <u64>] [--traces <n>]";

struct Args {
    command: String,
    flags: BTreeMap<String, String>,
}

fn parse_args(args: &[String]) -> Result<Args> {
    let command = args
        .first()
        .ok_or_else(|| BenchError::config(USAGE))?
        .clone();
    let mut flags = BTreeMap::new();
    let mut i = 1;
    while i < args.len() {
        let flag = args[i]
            .strip_prefix("--")
            .ok_or_else(|| BenchError::config(format!("unexpected argument '{}'", args[i])))?;
        let value = args
            .get(i + 1)
            .ok_or_else(|| BenchError::config(format!("flag --{flag} needs a value")))?;
        if flags.insert(flag.to_string(), value.clone()).is_some() {
            return Err(BenchError::config(format!("flag --{flag} given twice")));
        }
        i += 2;
    }
    Ok(Args { command, flags })
}

impl Args {
    fn required(&self, name: &str) -> Result<&str> {
        self.flags
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| BenchError::config(format!("missing required flag --{name}")))
    }

    fn optional(&self, name: &str) -> Option<&str> {
        self.flags.get(name).map(String::as_str)
    }

    fn known_flags(&self, allowed: &[&str]) -> Result<()> {
        for key in self.flags.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(BenchError::config(format!(
                    "unknown flag --{key} for '{}'",
                    self.command
                )));
            }
        }
        Ok(())
    }
}

/// Load the scenario and fold in command-line overrides, so the scenario
/// that runs is exactly the one embedded in reports.
fn resolved_scenario(args: &Args) -> Result<BenchScenario> {
    let mut scenario = BenchScenario::from_file(Path::new(args.required("config")?))?;
    if let Some(seed) = args.optional("seed") {
        scenario.seed = seed
            .parse()
            .map_err(|e| BenchError::config(format!("bad --seed: {e}")))?;
    }
    if let Some(out) = args.optional("out") {
        scenario.out_dir = out.to_string();
    }
    Ok(scenario)
}

fn out_dir(scenario: &BenchScenario) -> Result<PathBuf> {
    let dir = PathBuf::from(&scenario.out_dir);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn dump_step_log(report: &regione_core::pipeline::RunReport) {
    for rec in &report.step_log {
        logging::debug(format!(
            "step {:>3}  {:<13} {:<13} tokens {}",
            rec.step_index,
            rec.stage.name(),
            rec.kind.name(),
            rec.model_tokens
        ));
    }
}

fn cmd_run(args: &Args) -> Result<()> {
    args.known_flags(&["config", "mode", "out", "seed"])?;
    let mode = RunMode::parse(args.required("mode")?)?;
    let scenario = resolved_scenario(args)?;
    let dir = out_dir(&scenario)?;
    let built = build(&scenario, scenario.seed)?;
    logging::info(format!(
        "running {:?} on a {}x{} grid, T={}",
        mode, scenario.grid_height, scenario.grid_width, scenario.steps
    ));
    let run = run_timed(&built, mode)?;
    dump_step_log(&run);
    report::write_json(
        &dir.join("report.json"),
        &report::single_run_report(&run, &scenario),
    )?;
    tensor_file::write_tensor(&dir.join("final.latent"), &run.final_latent)?;
    logging::info(format!(
        "wrote {}: {} full, {} region, {} cached forwards, {:.3}s",
        dir.join("report.json").display(),
        run.full_forward_count,
        run.region_forward_count,
        run.cached_step_count,
        run.wall_seconds
    ));
    Ok(())
}

fn cmd_calibrate(args: &Args) -> Result<()> {
    args.known_flags(&["config", "out", "seed", "traces"])?;
    let traces: usize = args
        .optional("traces")
        .unwrap_or("4")
        .parse()
        .map_err(|e| BenchError::config(format!("bad --traces: {e}")))?;
    if traces == 0 {
        return Err(BenchError::config("--traces must be at least 1"));
    }
    let scenario = resolved_scenario(args)?;
    let dir = out_dir(&scenario)?;
    let mut recorded = Vec::with_capacity(traces);
    for k in 0..traces {
        let built = build(&scenario, scenario.seed + k as u64)?;
        recorded.push(calibration_trace(&built)?);
        logging::debug(format!("trace {} of {traces} recorded", k + 1));
    }
    let schedule = scenario
        .region_config()?
        .schedule()
        .map_err(|e| BenchError::config(e.to_string()))?;
    let table = fit_gamma(&recorded, &schedule).map_err(|e| BenchError::runtime(e.to_string()))?;
    let path = dir.join("gamma.tsv");
    gamma_file::write_gamma(&path, &table)?;
    logging::info(format!(
        "fitted {} gamma entries from {traces} traces into {}",
        table.entries().len(),
        path.display()
    ));
    Ok(())
}

fn cmd_compare(args: &Args) -> Result<()> {
    args.known_flags(&["config", "out", "seed"])?;
    let scenario = resolved_scenario(args)?;
    let dir = out_dir(&scenario)?;
    let built = build(&scenario, scenario.seed)?;
    logging::info("running baseline...");
    let base = run_timed(&built, RunMode::Vanilla)?;
    logging::info("running accelerated...");
    let fast = run_timed(&built, RunMode::Regione)?;
    dump_step_log(&fast);
    let cmp = report::compare_report(&fast, &base, &scenario)?;
    report::write_json(&dir.join("compare.json"), &cmp)?;
    tensor_file::write_tensor(&dir.join("vanilla.latent"), &base.final_latent)?;
    tensor_file::write_tensor(&dir.join("regione.latent"), &fast.final_latent)?;
    if let Some(mask) = &fast.mask {
        pgm::write_mask(&dir.join("mask.pgm"), mask)?;
    }
    logging::info(format!(
        "token-step speedup {:.3}, psnr {}",
        cmp.token_step_speedup.unwrap_or(f64::NAN),
        cmp.psnr_db
            .map(|p| format!("{p:.2} dB"))
            .unwrap_or_else(|| "inf (identical)".to_string())
    ));
    Ok(())
}

fn cmd_mask(args: &Args) -> Result<()> {
    args.known_flags(&["config", "out", "seed"])?;
    let scenario = resolved_scenario(args)?;
    let dir = out_dir(&scenario)?;
    let built = build(&scenario, scenario.seed)?;
    let mask = preview_mask(&built)?;
    pgm::write_mask(&dir.join("mask.pgm"), &mask)?;
    logging::info(format!(
        "wrote {} ({} of {} tokens edited)",
        dir.join("mask.pgm").display(),
        mask.edited_index().len(),
        mask.len()
    ));
    Ok(())
}

fn dispatch(args: &Args) -> Result<()> {
    match args.command.as_str() {
        "run" => cmd_run(args),
        "calibrate" => cmd_calibrate(args),
        "compare" => cmd_compare(args),
        "mask" => cmd_mask(args),
        other => Err(BenchError::config(format!(
            "unknown command '{other}'\n{USAGE}"
        ))),
    }
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn run(raw_args: &[String]) -> i32 {
    let parsed = match parse_args(raw_args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    match dispatch(&parsed) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(args: &[&str]) -> Vec<String> {
        args.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn missing_config_flag_is_a_usage_error() {
        let args = parse_args(&strs(&["run", "--mode", "vanilla"])).unwrap();
        assert!(matches!(dispatch(&args), Err(BenchError::Config(_))));
    }

    #[test]
    fn unknown_command_rejected() {
        let args = parse_args(&strs(&["explode", "--config", "x"])).unwrap();
        assert!(dispatch(&args).is_err());
    }

    #[test]
    fn flags_must_have_values() {
        assert!(parse_args(&strs(&["run", "--config"])).is_err());
        assert!(parse_args(&strs(&["run", "stray"])).is_err());
        assert!(parse_args(&strs(&[])).is_err());
    }
}
