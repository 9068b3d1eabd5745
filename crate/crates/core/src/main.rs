use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use imitate::cli::{
    equilibria_csv, equilibria_text, exit_code, format_report, run_scenario, sweep_scenario, verify_many, Overrides,
};
use imitate::equilibria::{equilibrium_set, DEFAULT_TOL};
use imitate::error::Result;
use imitate::scenario::{bundled, bundled_all, load_scenario, Scenario};

#[derive(Parser)]
#[command(name = "imitate", version, about = "Imitation dynamics for population games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario and write its outputs.
    Run {
        file: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run the property checks on a scenario, or on every bundled scenario.
    Verify {
        #[arg(default_value = "all")]
        target: String,
        #[command(flatten)]
        common: Common,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Print the equilibrium table of a scenario's game.
    Equilibria {
        file: String,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Integrate from every point of a simplex grid and map the basins.
    Sweep {
        file: String,
        /// Points per simplex edge.
        #[arg(long, default_value_t = 21)]
        grid: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum)]
    integrator: Option<IntegratorArg>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Relative tolerance of the adaptive integrator.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntegratorArg {
    Fixed,
    Adaptive,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            fixed: self.integrator.map(|i| matches!(i, IntegratorArg::Fixed)),
            t_end: self.t_end,
            tol: self.tol,
        }
    }
}

/// A path, or the id of a bundled scenario.
fn resolve(file: &str) -> Result<Scenario> {
    let path = std::path::Path::new(file);
    if !path.exists() {
        if let Some(s) = bundled(file) {
            return s;
        }
    }
    load_scenario(path)
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { file, common } => {
            let s = common.overrides().apply(resolve(&file)?)?;
            let summary = run_scenario(&s, &common.out_dir)?;
            for r in &summary.runs {
                match &r.limit_point {
                    Some(p) => println!("{} -> {} ({}) at t = {:.2}", r.initial, p, r.limit_label.map(|l| l.to_string()).unwrap_or_default(), r.t_converged.unwrap_or(f64::NAN)),
                    None => println!("{} -> undetermined, state {} at t = {:.2}", r.initial, r.final_state, r.t_final),
                }
            }
            if let Some(b) = &summary.basins {
                for c in b {
                    match &c.limit {
                        Some(p) => println!("basin of {p}: {} starts", c.starts),
                        None => println!("undetermined: {} starts", c.starts),
                    }
                }
            }
            println!("outputs in {}", summary.output_dir.display());
            Ok(0)
        }
        Command::Verify { target, common, json } => {
            let scenarios = if target == "all" {
                bundled_all()?
            } else {
                vec![resolve(&target)?]
            };
            let overrides = common.overrides();
            let scenarios = scenarios
                .into_iter()
                .map(|s| overrides.apply(s))
                .collect::<Result<Vec<_>>>()?;
            let reports = verify_many(&scenarios)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
            } else {
                for r in &reports {
                    print!("{}", format_report(r));
                }
            }
            Ok(if reports.iter().all(|r| r.ok) { 0 } else { 1 })
        }
        Command::Equilibria { file, format } => {
            let s = resolve(&file)?;
            let set = equilibrium_set(&s.game, DEFAULT_TOL)?;
            match format {
                Format::Text => print!("{}", equilibria_text(&s.game, &set)),
                Format::Csv => print!("{}", equilibria_csv(&s.game, &set)),
            }
            Ok(0)
        }
        Command::Sweep { file, grid, common } => {
            let s = common.overrides().apply(resolve(&file)?)?;
            for c in sweep_scenario(&s, grid, &common.out_dir)? {
                match &c.limit {
                    Some(p) => println!("{p}: {} starts", c.starts),
                    None => println!("undetermined: {} starts", c.starts),
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
