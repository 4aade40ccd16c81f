//! `flamespeed`: run one experiment from a TOML config, with flag overrides.
//!
//! Exit codes: 0 when everything ran (and for `validate`, every check passed
//! or was skipped), 1 on a failed check or runtime error, 2 on a bad config
//! or command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use flamespeed_core::experiment::{run_subcommand, ExperimentConfig, Subcommand};
use flamespeed_core::{Error, FieldModel};

#[derive(Parser, Debug)]
#[command(name = "flamespeed", version, about = "Effective flame speeds of the strain G-equation in shear flows")]
struct Cli {
    /// TOML experiment config; the built-in golden config when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Realization seed; replaces the seed list of a random-phase field.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Slope {
    #[arg(long, allow_hyphen_values = true)]
    m: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    n: Option<f64>,
}

#[derive(ClapSubcommand, Debug)]
enum Command {
    /// Tabulate H̄(p, c) and the branch tables.
    Effective {
        #[command(flatten)]
        slope: Slope,
        /// Markstein numbers, comma separated.
        #[arg(long, value_delimiter = ',')]
        c: Option<Vec<f64>>,
        #[arg(long)]
        window: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        p_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        p_max: Option<f64>,
        #[arg(long)]
        p_steps: Option<usize>,
    },
    /// h(c) = H̄(n, c) on a uniform grid, with per-check verdicts.
    StrainCurve {
        #[command(flatten)]
        slope: Slope,
        #[arg(long)]
        c_min: Option<f64>,
        #[arg(long)]
        c_max: Option<f64>,
        #[arg(long)]
        c_steps: Option<usize>,
        #[arg(long)]
        window: Option<f64>,
    },
    /// Vanishing-discount estimates and their extrapolation.
    Discount {
        #[command(flatten)]
        slope: Slope,
        #[arg(long, value_delimiter = ',')]
        c: Option<Vec<f64>>,
        /// Discount rates, comma separated and decreasing.
        #[arg(long, value_delimiter = ',')]
        delta: Option<Vec<f64>>,
        /// Fixed grid step; otherwise `grid_ratio·δ`.
        #[arg(long)]
        grid_step: Option<f64>,
        /// Half-length of the truncated domain.
        #[arg(long)]
        domain: Option<f64>,
        /// Artificial viscosity, replacing the analytic bound.
        #[arg(long)]
        theta_override: Option<f64>,
    },
    /// 2-d level-set simulation of the reduced front.
    Simulate {
        #[command(flatten)]
        slope: Slope,
        #[arg(long, value_delimiter = ',')]
        c: Option<Vec<f64>>,
        /// Cells per side.
        #[arg(long)]
        grid: Option<usize>,
        /// Simulated time.
        #[arg(long = "T")]
        duration: Option<f64>,
        #[arg(long)]
        cfl: Option<f64>,
    },
    /// Run every check and write manifest.json.
    Validate {
        #[command(flatten)]
        slope: Slope,
    },
    /// Field samples and the Hamiltonian surface.
    DumpField {
        #[command(flatten)]
        slope: Slope,
        /// Length in slowest wavelengths.
        #[arg(long)]
        window: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        c: Option<f64>,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Command {
    fn name(&self) -> Subcommand {
        match self {
            Command::Effective { .. } => Subcommand::Effective,
            Command::StrainCurve { .. } => Subcommand::StrainCurve,
            Command::Discount { .. } => Subcommand::Discount,
            Command::Simulate { .. } => Subcommand::Simulate,
            Command::Validate { .. } => Subcommand::Validate,
            Command::DumpField { .. } => Subcommand::DumpField,
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig) {
        let slope = match self {
            Command::Effective { slope, c, window, p_min, p_max, p_steps } => {
                set(&mut cfg.effective.c_values, c);
                cfg.effective.window = window.or(cfg.effective.window);
                set(&mut cfg.effective.p_min, p_min);
                set(&mut cfg.effective.p_max, p_max);
                set(&mut cfg.effective.p_steps, p_steps);
                slope
            }
            Command::StrainCurve { slope, c_min, c_max, c_steps, window } => {
                set(&mut cfg.curve.c_min, c_min);
                cfg.curve.c_max = c_max.or(cfg.curve.c_max);
                set(&mut cfg.curve.c_steps, c_steps);
                cfg.effective.window = window.or(cfg.effective.window);
                slope
            }
            Command::Discount { slope, c, delta, grid_step, domain, theta_override } => {
                set(&mut cfg.discount.c_values, c);
                set(&mut cfg.discount.deltas, delta);
                cfg.discount.grid_step = grid_step.or(cfg.discount.grid_step);
                cfg.discount.half_length = domain.or(cfg.discount.half_length);
                cfg.discount.theta_override = theta_override.or(cfg.discount.theta_override);
                slope
            }
            Command::Simulate { slope, c, grid, duration, cfl } => {
                set(&mut cfg.simulate.c_values, c);
                set(&mut cfg.simulate.grid, grid);
                set(&mut cfg.simulate.duration, duration);
                set(&mut cfg.simulate.cfl, cfl);
                slope
            }
            Command::Validate { slope } => slope,
            Command::DumpField { slope, window, samples, c } => {
                set(&mut cfg.dump.window, window);
                set(&mut cfg.dump.samples, samples);
                set(&mut cfg.dump.c, c);
                slope
            }
        };
        set(&mut cfg.m, slope.m);
        set(&mut cfg.n, slope.n);
    }
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::InvalidSpec(_))
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("FLAMESPEED_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| format!("FLAMESPEED_THREADS must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let mut config = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::golden(),
    };
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        config.field.seed = seed;
        if config.field.model == FieldModel::RandomPhase {
            config.seeds = vec![seed];
        }
    }
    let name = cli.command.name();
    cli.command.apply(&mut config);
    match run_subcommand(name, &config) {
        Ok(out) => {
            for file in &out.files {
                println!("{}", file.display());
            }
            match out.passed {
                Some(false) => {
                    eprintln!("validation failed; see manifest.json");
                    ExitCode::from(1)
                }
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
