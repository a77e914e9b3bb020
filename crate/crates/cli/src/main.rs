use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use macplane::run::{output_stem, run_config, run_scenario, sweep, sweep_csv};
use macplane::scenarios::{builtin, describe, with_variant, BUILTIN};
use macplane::trace::read_jsonl;
use macplane::validate::validate;
use macplane::{ScenarioConfig, VariantName};

#[derive(Parser)]
#[command(name = "macplane", version, about = "Simulate 802.11 MAC access with and without control/data plane separation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and write its trace and summary.
    Run {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, env = "MACPLANE_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Sweep one parameter over values and seeds, writing one CSV row per point.
    Sweep {
        #[command(flatten)]
        src: Source,
        /// One of mcs, bandwidth, sp_duty, n_stations, rts_threshold.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long, env = "MACPLANE_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
    /// List the builtin scenarios.
    ListScenarios,
    /// Check a config, then check the invariants on a trace of it.
    Validate {
        #[command(flatten)]
        src: Source,
        /// Existing trace to check instead of simulating.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a config as TOML.
    Show {
        #[command(flatten)]
        src: Source,
    },
}

#[derive(Args)]
#[group(skip)]
#[command(group(ArgGroup::new("source").required(true).args(["config", "scenario"])))]
struct Source {
    /// Scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin scenario name.
    #[arg(long)]
    scenario: Option<String>,
    /// Override the MAC variant.
    #[arg(long, value_enum)]
    variant: Option<Variant>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Baseline,
    Separated,
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig, String> {
        let cfg = match (&self.config, &self.scenario) {
            (Some(p), _) => ScenarioConfig::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
            (None, Some(n)) => builtin(n).ok_or_else(|| format!("no builtin scenario named {n}"))?,
            (None, None) => unreachable!("clap requires one source"),
        };
        Ok(match self.variant {
            Some(Variant::Baseline) => with_variant(cfg, VariantName::Baseline),
            Some(Variant::Separated) => with_variant(cfg, VariantName::Separated),
            None => cfg,
        })
    }
}

fn main() -> ExitCode {
    match exec(Cli::parse().cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn exec(cmd: Cmd) -> Result<ExitCode, String> {
    match cmd {
        Cmd::Run { src, seed, out } => {
            let cfg = src.load()?;
            let (trace, summary) = run_scenario(&cfg, seed, &out).map_err(|e| e.to_string())?;
            println!("{}", trace.display());
            println!("{}", summary.display());
        }
        Cmd::Sweep { src, axis, values, seeds, out } => {
            let cfg = src.load()?;
            let rows = sweep(&cfg, &axis, &values, &seeds).map_err(|e| e.to_string())?;
            fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            let path = out.join(format!("{}-{}-sweep-{axis}.csv", cfg.name, cfg.mac.variant.label()));
            fs::write(&path, sweep_csv(&axis, &rows)).map_err(|e| e.to_string())?;
            println!("{}", path.display());
        }
        Cmd::ListScenarios => {
            for name in BUILTIN {
                println!("{name:<10} {}", describe(name));
            }
        }
        Cmd::Validate { src, trace, seed } => return check(&src.load()?, trace.as_deref(), seed),
        Cmd::Show { src } => print!("{}", src.load()?.to_toml_string()),
    }
    Ok(ExitCode::SUCCESS)
}

fn check(cfg: &ScenarioConfig, trace: Option<&Path>, seed: Option<u64>) -> Result<ExitCode, String> {
    let spec = macplane::run::resolve_seeded(cfg, seed).map_err(|e| e.to_string())?;
    println!("config ok: {} ({} nodes, {} us)", cfg.name, spec.node_names.len(), spec.duration_us);
    let (label, records) = match trace {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
            (p.display().to_string(), read_jsonl(BufReader::new(f)).map_err(|e| format!("{}: {e}", p.display()))?)
        }
        None => {
            let r = run_config(cfg, seed).map_err(|e| e.to_string())?;
            (output_stem(cfg, spec.seed), r.trace)
        }
    };
    let rep = validate(&records, &spec);
    for (check, n) in &rep.examined {
        println!("{check:?}: {n} examined, {} violations", rep.failures(*check));
    }
    for v in &rep.violations {
        println!("  {v}");
    }
    if rep.ok() {
        println!("{label}: all invariants hold");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{label}: {} violations", rep.counts.values().sum::<u64>());
        Ok(ExitCode::from(2))
    }
}
