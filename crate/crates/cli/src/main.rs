use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use halo_core::config::{RunConfig, SEED_ENV};
use halo_core::error::HaloError;
use halo_core::par::Exec;
use halo_core::pipeline::{Pipeline, Stage};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

const OVERRIDES: &str = "Config overrides";

fn exit_code(e: &HaloError) -> u8 {
    match e {
        HaloError::Config(_) | HaloError::InvalidArgument(_) => EXIT_USAGE,
        HaloError::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn cli() -> Command {
    let mut cmd = Command::new("halo")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Patch- and video-level preference alignment for a toy latent-video diffusion model")
        .after_help(format!(
            "Every stage reads and writes fixed file names under paths.out_dir and records\n\
             provenance/<stage>.json. {SEED_ENV} overrides the configured seed."
        ))
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .short('c')
                .long("config")
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .global(true)
                .help("TOML run configuration; built-in defaults when omitted"),
        )
        .arg(
            Arg::new("threads")
                .long("threads")
                .value_name("N")
                .default_value("1")
                .value_parser(value_parser!(u16).range(1..))
                .global(true)
                .help("Worker threads for intra-stage parallelism"),
        )
        .arg(
            Arg::new("force")
                .long("force")
                .action(ArgAction::SetTrue)
                .global(true)
                .help("Run even if inputs were produced under a different config or have changed"),
        );
    for stage in Stage::ALL {
        cmd = cmd.subcommand(Command::new(stage.name()).about(stage_about(stage)));
    }
    cmd = cmd
        .subcommand(Command::new("run").about("Run every stage in order"))
        .subcommand(Command::new("config").about("Print the resolved configuration as TOML"))
        .subcommand(Command::new("demo-config").about("Print the small demo configuration as TOML"));
    for (key, default) in RunConfig::keys() {
        cmd = cmd.arg(
            Arg::new(key.clone())
                .long(key)
                .value_name("VALUE")
                .global(true)
                .help_heading(OVERRIDES)
                .help(format!("[default: {default}]")),
        );
    }
    cmd
}

fn stage_about(stage: Stage) -> &'static str {
    match stage {
        Stage::GenData => "Generate prompts, class target patterns and training videos",
        Stage::TrainBase => "Train the base denoiser",
        Stage::Sample => "Sample candidate videos for every prompt",
        Stage::Reward => "Score samples with the oracle and label the training videos",
        Stage::DistillRm => "Distill the patch reward regressor",
        Stage::BuildPairs => "Score candidates and build preference pairs",
        Stage::Align => "Fine-tune the base denoiser on the preference pairs",
        Stage::Analyze => "Evaluate base and aligned models and write the report",
    }
}

fn overrides(m: &ArgMatches) -> Vec<String> {
    RunConfig::keys()
        .into_iter()
        .filter_map(|(key, _)| m.get_one::<String>(&key).map(|v| format!("{key}={v}")))
        .collect()
}

fn resolve(m: &ArgMatches) -> Result<RunConfig, HaloError> {
    let sets = overrides(m);
    match m.get_one::<PathBuf>("config") {
        Some(path) => RunConfig::load(path, &sets),
        None => RunConfig::resolve(&RunConfig::default().to_toml()?, &sets),
    }
}

fn exec_for(threads: u16) -> Result<Exec, HaloError> {
    if threads == 1 {
        return Ok(Exec::Sequential);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads as usize)
        .build_global()
        .map_err(|e| HaloError::InvalidArgument(format!("cannot start {threads} threads: {e}")))?;
    Ok(Exec::Parallel)
}

fn execute(m: &ArgMatches) -> Result<(), HaloError> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    if name == "demo-config" {
        print!("{}", RunConfig::demo().to_toml()?);
        return Ok(());
    }
    let config = resolve(sub)?;
    if name == "config" {
        print!("{}", config.to_toml()?);
        return Ok(());
    }
    let exec = exec_for(*sub.get_one::<u16>("threads").expect("has default"))?;
    let pipeline = Pipeline::new(config, exec, sub.get_flag("force"))?;
    let stages: Vec<Stage> = if name == "run" { Stage::ALL.to_vec() } else { vec![name.parse()?] };
    eprintln!("config {} -> {}", &pipeline.digest()[..12], pipeline.dir().display());
    let started = Instant::now();
    for stage in stages {
        let out = pipeline.run(stage)?;
        eprintln!("{:<12} {:>8.2} s", stage.name(), out.record.wall_time_secs);
    }
    eprintln!("done in {:.2} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match execute(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
