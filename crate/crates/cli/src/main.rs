mod history;
mod mac;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cibpbe::dp::{backward_induct, enumerate_bundle, load_bundle, save_bundle, EquilibriumBundle, Interpolation};
use cibpbe::games::game_m::{game_m_generate, game_m_solve, GameMSizes, GameMSpec};
use cibpbe::games::mac::MacParams;
use cibpbe::model::{load_spec, save_spec, GameSpec};
use cibpbe::stage::{SolverConfig, StageSolution};
use cibpbe::verify::{verify_cib_pbe, Tolerances};
use cibpbe::Error;

#[derive(Parser)]
#[command(name = "cibpbe", version, about = "Solve and certify common-information based perfect Bayesian equilibria")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a model on a belief grid and write the bundle.
    Solve {
        #[arg(long)]
        spec: PathBuf,
        /// Grid resolution per agent simplex.
        #[arg(long)]
        grid: usize,
        #[command(flatten)]
        solver: SolverArgs,
        /// Also list every stage equilibrium found at each cell in
        /// `equilibria_t{time}.csv`, the selected one first.
        #[arg(long)]
        enumerate: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certify a bundle against its model.
    Verify {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        verify: VerifyArgs,
        /// Report file; the per-cell CSV is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the two-agent multiple access game in symmetric mode and export
    /// its surfaces.
    Mac {
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        #[arg(long = "T", default_value_t = 2)]
        horizon: usize,
        /// Initial probability that a queue is full.
        #[arg(long, default_value_t = 0.5)]
        prior: f64,
        #[arg(long)]
        grid: usize,
        #[command(flatten)]
        solver: SolverArgs,
        /// Also certify the bundle and write the report.
        #[arg(long)]
        verify: bool,
        /// Comma-separated grid resolutions to solve in turn, writing the
        /// value changes at shared points to `refinement.csv`.
        #[arg(long)]
        refine: Option<String>,
        #[command(flatten)]
        verify_args: VerifyArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a game with uncontrolled dynamics and no private values.
    GenGameM {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// AGENTS,HORIZON,STATES,ACTIONS,OBSERVATIONS
        #[arg(long, default_value = "2,3,2,2,2")]
        sizes: String,
        /// Comma-separated 1-based times at which local states evolve.
        #[arg(long, default_value = "2")]
        epochs: String,
        #[arg(long, default_value_t = 2)]
        public_states: usize,
        /// Agents move in turn.
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        zero_utility: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve such a game exactly on its belief tree.
    SolveGameM {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the beliefs Bayes' rule assigns after a common history.
    Oracle {
        #[arg(long)]
        spec: PathBuf,
        /// `C0 ; A1,A2 / Y1,Y2 / C1 ; ...` with labels or 1-based indices.
        /// Public parts may be left out when there is one public state.
        #[arg(long, default_value = "")]
        history: String,
        /// Also build the full belief system under this bundle's profile.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SolverArgs {
    /// Accepted stage gap.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Solve one cell of each agent-swapped pair of a symmetric game.
    #[arg(long)]
    symmetric: bool,
    /// Read values at the nearest grid point instead of interpolating.
    #[arg(long)]
    nearest: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest number of cells per time.
    #[arg(long, default_value_t = 50_000_000)]
    max_cells: u64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            bne_tol: self.tol,
            symmetric_mode: self.symmetric,
            seed: self.seed,
            max_cells: self.max_cells,
            interpolation: if self.nearest { Interpolation::Nearest } else { Interpolation::Multilinear },
            ..SolverConfig::default()
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Accepted gain from a unilateral deviation.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Samples per rollout; 0 disables rollouts.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 3)]
    rollout_cells: usize,
    #[arg(long = "verify-seed", default_value_t = 0)]
    verify_seed: u64,
}

impl VerifyArgs {
    fn tolerances(&self) -> Tolerances {
        Tolerances {
            epsilon: self.eps,
            rollout_samples: self.samples,
            rollout_cells: self.rollout_cells,
            seed: self.verify_seed,
            ..Tolerances::default()
        }
    }
}

const OK: u8 = 0;
const INVALID: u8 = 1;
const UNCERTIFIED: u8 = 2;
const BUDGET: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Budget { .. }) => BUDGET,
        Some(Error::NoFixedPoint { .. }) => UNCERTIFIED,
        _ => INVALID,
    }
}

fn summarize(bundle: &EquilibriumBundle) -> String {
    let failed = bundle.failed_cells();
    let mut s = format!(
        "cells: {}\nworst stage gap: {:.3e}\nworst consistency residual: {:.3e}\nfailed cells: {}",
        bundle.layers.iter().map(|l| l.num_cells()).sum::<usize>(),
        bundle.worst_gap(),
        bundle.worst_residual(),
        failed.len()
    );
    for (t, cell) in failed.iter().take(10) {
        s += &format!("\n  time {} cell {}", t + 1, cell + 1);
    }
    s
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn verify_to(spec_path: &Path, bundle_dir: &Path, args: &VerifyArgs, out: &Path) -> anyhow::Result<u8> {
    let spec = load_spec(spec_path)?;
    let bundle = load_bundle(&spec, bundle_dir)?;
    let report = verify_cib_pbe(&spec, &bundle, &args.tolerances())?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write(out, &format!("{report}\n"))?;
    let csv = out.with_extension("cells.csv");
    report.write_cells_csv(&csv)?;
    println!("{report}");
    println!("per-cell gaps: {}", csv.display());
    Ok(if report.passed() { OK } else { UNCERTIFIED })
}

/// One CSV per time listing every equilibrium found at each cell, over
/// admissible actions. Returns
/// the number of cells with more than one.
fn write_equilibria(spec: &GameSpec, found: &[Vec<Vec<StageSolution>>], out: &Path) -> anyhow::Result<usize> {
    let mut multiple = 0;
    for (t, cells) in found.iter().enumerate() {
        let path = out.join(format!("equilibria_t{}.csv", t + 1));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["cell", "index", "method", "gap", "agent", "x", "action", "probability"])?;
        for (cell, list) in cells.iter().enumerate() {
            multiple += usize::from(list.len() > 1);
            for (i, sol) in list.iter().enumerate() {
                let s = &sol.strategy;
                for n in 0..s.num_agents() {
                    for x in 0..s.num_states(n) {
                        for &a in &spec.admissible[n][t][x] {
                            w.write_record([
                                (cell + 1).to_string(),
                                (i + 1).to_string(),
                                sol.method.to_string(),
                                sol.gap.to_string(),
                                (n + 1).to_string(),
                                (x + 1).to_string(),
                                (a + 1).to_string(),
                                s.prob(n, x, a).to_string(),
                            ])?;
                        }
                    }
                }
            }
        }
        w.flush()?;
    }
    Ok(multiple)
}

fn parse_list(text: &str, what: &str) -> anyhow::Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().with_context(|| format!("{what}: not a number: {s}")))
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Solve { spec, grid, solver, enumerate, out } => {
            let spec = load_spec(&spec)?;
            let config = solver.config();
            let bundle = backward_induct(&spec, grid, &config)?;
            save_bundle(&bundle, &spec, &out)?;
            println!("{}", summarize(&bundle));
            if enumerate {
                let found = enumerate_bundle(&spec, &bundle, &config)?;
                let multiple = write_equilibria(&spec, &found, &out)?;
                println!("cells with more than one equilibrium found: {multiple}");
            }
            Ok(if bundle.is_complete() { OK } else { UNCERTIFIED })
        }
        Command::Verify { spec, bundle, verify, out } => verify_to(&spec, &bundle, &verify, &out),
        Command::Mac { p, c, horizon, prior, grid, solver, verify, refine, verify_args, out } => {
            let params = MacParams { p, c, horizon, prior };
            if !(p > 0.0 && p < 1.0) || c < 0.0 || horizon == 0 || !(0.0..=1.0).contains(&prior) {
                bail!(Error::Invalid(vec![cibpbe::Diagnostic::new(
                    "mac parameters",
                    "need 0 < p < 1, c >= 0, T >= 1 and a prior in [0, 1]"
                )]));
            }
            let config = SolverConfig { symmetric_mode: true, ..solver.config() };
            let bundle = mac::run(&params, grid, &config, &out)?;
            println!("{}", summarize(&bundle));
            let mut code = if bundle.is_complete() { OK } else { UNCERTIFIED };
            if verify {
                code = code.max(verify_to(&out.join("model.toml"), &out, &verify_args, &out.join("report.txt"))?);
            }
            if let Some(list) = refine {
                mac::refine(&params, &parse_list(&list, "refine")?, &config, &out)?;
            }
            Ok(code)
        }
        Command::GenGameM { seed, sizes, epochs, public_states, sequential, zero_utility, out } => {
            let dims = parse_list(&sizes, "sizes")?;
            let [agents, horizon, states, actions, observations] = dims[..] else {
                bail!(Error::Invalid(vec![cibpbe::Diagnostic::new("sizes", "expected AGENTS,HORIZON,STATES,ACTIONS,OBSERVATIONS")]));
            };
            let epochs = parse_list(&epochs, "epochs")?;
            if epochs.contains(&0) {
                bail!(Error::Invalid(vec![cibpbe::Diagnostic::new("epochs", "times are 1-based")]));
            }
            let sizes = GameMSizes {
                agents,
                horizon,
                states,
                actions,
                observations,
                epochs: epochs.iter().map(|t| t - 1).collect(),
                public_states,
                sequential,
                zero_utility,
            };
            let gm = game_m_generate(seed, &sizes)?;
            save_spec(&gm.spec, &out)?;
            println!("wrote {} (epochs {:?})", out.display(), gm.epochs.iter().map(|t| t + 1).collect::<Vec<_>>());
            Ok(OK)
        }
        Command::SolveGameM { spec, solver, out } => {
            let gm = GameMSpec::from_spec(load_spec(&spec)?)?;
            let sol = game_m_solve(&gm, &solver.config())?;
            save_bundle(&sol.bundle, &gm.spec, &out)?;
            let mut text = summarize(&sol.bundle);
            text += &format!("\nvalue decomposition residual: {:.3e}\nreduced-game solvers:", sol.decomposition_residual);
            for (method, count) in &sol.paths {
                text += &format!("\n  {method}: {count}");
            }
            write(&out.join("summary.txt"), &(text.clone() + "\n"))?;
            println!("{text}");
            Ok(if sol.bundle.is_complete() { OK } else { UNCERTIFIED })
        }
        Command::Oracle { spec, history, bundle } => {
            let spec = load_spec(&spec)?;
            let h = history::parse(&spec, &history)?;
            print!("{}", history::report(&spec, &h, bundle.as_deref())?);
            Ok(OK)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            // library errors already spell out their source
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
