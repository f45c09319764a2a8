use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfhb::config::{load_run_config, read_tree};
use mfhb::diagnostics::{theta_r_independence, velocity_stationarity};
use mfhb::dynamics::Simulation;
use mfhb::io::{self, Meta};
use mfhb::presets::{self, Preset};
use mfhb::{data, Error};

/// Mean-field heavy ball experiments.
#[derive(Parser)]
#[command(name = "mfhb", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MFHB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one particle trajectory.
    Run(RunArgs),
    /// Run a named preset.
    Preset {
        /// Preset name; may be omitted when --config is a preset's meta.json.
        name: Option<String>,
        #[command(flatten)]
        args: RunArgs,
    },
    /// List the available presets.
    ListPresets,
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON parameter file (a meta.json from an earlier run works too).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a parameter, e.g. --set beta=16 or --set grid.count=[64,64].
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<String> {
        let mut all = self.overrides.clone();
        if let Some(seed) = self.seed {
            all.push(format!("seed={seed}"));
        }
        all
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFinite { .. }
        | Error::Cfl { .. }
        | Error::NegativeDensity { .. }
        | Error::PartitionUnderflow(_) => 3,
        _ => 2,
    }
}

fn run(args: &RunArgs) -> mfhb::Result<()> {
    let cfg = load_run_config(args.config.as_deref(), &args.overrides())?;
    let dataset = data::sample_dataset_with(cfg.d, cfg.n0, cfg.m, cfg.seed, cfg.activation)?;
    io::create_dir(&args.out)?;
    io::write_json(&args.out.join("meta.json"), &Meta::new("run", &cfg)?)?;
    let mut sim = Simulation::new(&cfg, &dataset)?;
    let records = sim.run()?;
    let ens = sim.ensemble();
    io::write_trajectory(&args.out.join("trajectory.csv"), &records)?;
    io::write_marginals(&args.out.join("marginals.csv"), &ens)?;
    if cfg.diagnostics {
        let last = records
            .last()
            .expect("the initial state is always recorded");
        let (mean_gap, cov_gap) = velocity_stationarity(&ens, cfg.beta);
        let record = serde_json::json!({
            "run_id": format!("run-seed{}", cfg.seed),
            "step": last.step,
            "time": last.time,
            "entropy_est": last.entropy_est,
            "free_energy_est": last.free_energy_est,
            "velocity_mean_gap": mean_gap,
            "velocity_cov_gap": cov_gap,
            "theta_r_independence": theta_r_independence(&ens),
        });
        io::write_json(&args.out.join("diagnostics.json"), &record)?;
    }
    let last = records
        .last()
        .expect("the initial state is always recorded");
    println!(
        "{} steps, final loss {:.6e}, kinetic {:.6e}; wrote {}",
        last.step,
        last.loss,
        last.kinetic,
        args.out.display()
    );
    Ok(())
}

fn preset_from_meta(path: &Path) -> mfhb::Result<Preset> {
    let tree = read_tree(path)?;
    match tree.get("kind").and_then(|k| k.as_str()) {
        Some(kind) => kind.parse(),
        None => Err(Error::Config(format!(
            "{}: no preset name given and no 'kind' entry",
            path.display()
        ))),
    }
}

fn preset(name: Option<&str>, args: &RunArgs) -> mfhb::Result<()> {
    let preset = match (name, args.config.as_deref()) {
        (Some(n), _) => n.parse()?,
        (None, Some(path)) => preset_from_meta(path)?,
        (None, None) => return Err(Error::Config("preset name required".into())),
    };
    let tree = presets::load_params(preset, args.config.as_deref(), &args.overrides())?;
    let report = presets::run_preset(preset, tree, Some(&args.out))?;
    for line in report.summary() {
        println!("{line}");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn dispatch(command: &Command) -> mfhb::Result<()> {
    match command {
        Command::Run(args) => run(args),
        Command::Preset { name, args } => preset(name.as_deref(), args),
        Command::ListPresets => {
            for p in Preset::ALL {
                println!("{:<22} {}", p.name(), p.description());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
