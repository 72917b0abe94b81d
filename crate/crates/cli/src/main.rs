use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use spacemap::macroscopic::write_density_csv;
use spacemap::micro::{observable_spread, write_trajectory_csv};
use spacemap::scenario::evacuation::Evacuation;
use spacemap::scenario::material_flow::MaterialFlow;
use spacemap::scenario::toy::Toy;
use spacemap::scenario::{write_gradchecks, GradCheck, ScenarioConfig};
use spacemap::spacemap::AsmResult;
use spacemap::{Error, Parallelism};

/// Space-mapping optimization of interacting particle systems.
#[derive(Parser)]
#[command(name = "spacemap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the particle model once at the start control.
    SimulateMicro(Common),
    /// Run the density model once at the start control.
    SimulateMacro(Common),
    /// Optimize the particle model directly with its adjoint (toy only).
    OptimizeAc(Common),
    /// Aggressive space mapping for the configured scenario.
    OptimizeAsm(Common),
    /// Compare adjoint gradients with central differences.
    Gradcheck(Common),
    /// Full toy experiment (AC and ASM per target).
    Toy(Common),
    /// Full evacuation experiment (ASM per gap).
    Evacuation(Common),
    /// Full material-flow experiment (ASM per diffusion constant).
    MaterialFlow(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML); defaults are used when omitted for the scenario subcommands.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for the placement jitter.
    #[arg(long)]
    seed: Option<u64>,
    /// Write density snapshots for every coarse step.
    #[arg(long)]
    dump_fields: bool,
    /// Write particle trajectories.
    #[arg(long)]
    dump_trajectories: bool,
    /// Check gradients against finite differences before optimizing.
    #[arg(long)]
    fd_check: bool,
    /// Control override, e.g. `--control 1.5 --control -0.5`.
    #[arg(long, allow_negative_numbers = true)]
    control: Vec<f64>,
    /// Run everything on the calling thread.
    #[arg(long)]
    sequential: bool,
}

/// Whether the requested optimization met its stopping criterion.
enum Outcome {
    Converged,
    NotConverged,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Converged) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(common: &Common, fallback: Option<&str>) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = match (&common.config, fallback) {
        (Some(path), _) => {
            ScenarioConfig::load(path).with_context(|| format!("reading {}", path.display()))?
        }
        (None, Some(kind)) => ScenarioConfig::from_toml(&format!("scenario = \"{kind}\""))?,
        (None, None) => bail!("--config is required for this subcommand"),
    };
    if let Some(kind) = fallback {
        if cfg.kind() != kind {
            bail!("config describes a {} scenario, expected {kind}", cfg.kind());
        }
    }
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn par(common: &Common) -> Parallelism {
    if common.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::default()
    }
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    info!("writing {}", path.display());
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn control_or(common: &Common, default: Vec<f64>) -> anyhow::Result<Vec<f64>> {
    if common.control.is_empty() {
        return Ok(default);
    }
    if common.control.len() != default.len() {
        bail!("expected {} control values, got {}", default.len(), common.control.len());
    }
    Ok(common.control.clone())
}

enum Built {
    Toy(Toy),
    Evacuation(Evacuation),
    MaterialFlow(MaterialFlow),
}

fn build(cfg: ScenarioConfig, par: Parallelism) -> spacemap::Result<Built> {
    Ok(match cfg {
        ScenarioConfig::Toy(c) => Built::Toy(Toy::new(c, par)?),
        ScenarioConfig::Evacuation(c) => Built::Evacuation(Evacuation::new(c, par)?),
        ScenarioConfig::MaterialFlow(c) => Built::MaterialFlow(MaterialFlow::new(c, par)?),
    })
}

fn run(command: Command) -> anyhow::Result<Outcome> {
    let (common, fallback) = match &command {
        Command::Toy(c) => (c.clone(), Some("toy")),
        Command::Evacuation(c) => (c.clone(), Some("evacuation")),
        Command::MaterialFlow(c) => (c.clone(), Some("material-flow")),
        Command::SimulateMicro(c)
        | Command::SimulateMacro(c)
        | Command::OptimizeAc(c)
        | Command::OptimizeAsm(c)
        | Command::Gradcheck(c) => (c.clone(), None),
    };
    let cfg = load(&common, fallback)?;
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("config.toml"), cfg.to_toml()?)?;
    let built = build(cfg, par(&common)).map_err(config_error)?;
    if common.fd_check && !matches!(command, Command::Gradcheck(_)) {
        gradcheck(&built, &common)?;
    }
    match command {
        Command::SimulateMicro(_) => simulate_micro(&built, &common),
        Command::SimulateMacro(_) => simulate_macro(&built, &common),
        Command::OptimizeAc(_) => optimize_ac(&built, &common),
        Command::Gradcheck(_) => gradcheck(&built, &common),
        Command::OptimizeAsm(_) | Command::Toy(_) | Command::Evacuation(_) | Command::MaterialFlow(_) => {
            full_run(&built, &common)
        }
    }
}

fn config_error(e: Error) -> anyhow::Error {
    anyhow::Error::new(e).context("invalid scenario")
}

fn simulate_micro(built: &Built, common: &Common) -> anyhow::Result<Outcome> {
    let (ens, j) = match built {
        Built::Toy(t) => {
            let u = control_or(common, vec![t.config.u0])?;
            let ens = t.simulate_micro(u[0])?;
            let j = observable_spread(&ens.last().x, spacemap::Vec2::ZERO);
            (ens, j)
        }
        Built::Evacuation(e) => {
            let u = control_or(common, e.start(0.0))?;
            let ens = e.fine.simulate(&u)?;
            let j = observable_spread(&ens.last().x, spacemap::Vec2::new(u[0], u[1]));
            (ens, j)
        }
        Built::MaterialFlow(m) => {
            let u = control_or(common, vec![m.config.u0])?;
            let ens = m.fine.simulate(u[0])?;
            let j = spacemap::micro::count_inside(&ens.last().x, &m.config.region) - m.config.omega_star;
            (ens, j)
        }
    };
    println!("j_fine = {j}");
    if common.dump_trajectories {
        write_trajectory_csv(&ens, create(&common.out, "trajectories.csv")?)?;
    }
    Ok(Outcome::Converged)
}

fn simulate_macro(built: &Built, common: &Common) -> anyhow::Result<Outcome> {
    let (grid, hist, j) = match built {
        Built::Toy(t) => {
            let u = control_or(common, vec![t.config.u0])?;
            let hist = t.simulate_macro(u[0])?;
            let j = t.coarse_spread(u[0])?.0;
            (t.grid.clone(), hist, j)
        }
        Built::Evacuation(e) => {
            let gap = e.config.gaps.first().copied().unwrap_or(0.0);
            let coarse = e.coarse(gap)?;
            let u = control_or(common, e.start(gap))?;
            let hist = coarse.simulate(&u)?;
            let j = coarse.spread(&u)?;
            (coarse.grid, hist, j)
        }
        Built::MaterialFlow(m) => {
            let c = m.config.diffusion.first().copied().unwrap_or(0.0);
            let coarse = m.coarse(c)?;
            let u = control_or(common, vec![m.config.u0])?;
            let hist = coarse.simulate(u[0])?;
            let j = coarse.count(u[0])? - m.config.omega_star;
            (coarse.grid, hist, j)
        }
    };
    println!("j_coarse = {j}");
    if common.dump_fields {
        let dir = common.out.join("fields");
        for (s, rho) in hist.rho.iter().enumerate() {
            write_density_csv(&grid, rho, s, create(&dir, &format!("density_{s:04}.csv"))?)?;
        }
    } else {
        write_density_csv(&grid, hist.last(), hist.n_steps(), create(&common.out, "density_final.csv")?)?;
    }
    Ok(Outcome::Converged)
}

fn optimize_ac(built: &Built, common: &Common) -> anyhow::Result<Outcome> {
    let Built::Toy(t) = built else {
        bail!("direct adjoint optimization is only available for the toy scenario");
    };
    let mut all = true;
    for &omega in &t.config.omega_star {
        let r = t.optimize_ac(omega)?;
        println!("omega* = {omega}: u = {:.6}, J = {:.3e}, status {:?}", r.u[0], r.value, r.status);
        r.trace.write_csv(create(&common.out, &format!("ac_trace_omega{omega}.csv"))?)?;
        all &= r.status.is_success();
    }
    Ok(if all { Outcome::Converged } else { Outcome::NotConverged })
}

fn gradcheck(built: &Built, common: &Common) -> anyhow::Result<Outcome> {
    let checks: Vec<GradCheck> = match built {
        Built::Toy(t) => {
            let u = control_or(common, vec![t.config.u0])?;
            let omega = t.config.omega_star.first().copied().unwrap_or(1.0);
            t.gradcheck(u[0], omega, 1e-5)?
        }
        Built::Evacuation(e) => {
            let gap = e.config.gaps.first().copied().unwrap_or(0.0);
            e.gradcheck(gap, &control_or(common, e.start(gap))?)?
        }
        Built::MaterialFlow(m) => {
            let u = control_or(common, vec![m.config.u0])?;
            let c = m.config.diffusion.first().copied().unwrap_or(0.0);
            m.gradcheck(c, u[0], 1e-5)?
        }
    };
    for c in &checks {
        println!(
            "{}: adjoint {:.8e}, finite difference {:.8e}, relative error {:.2e}",
            c.name,
            c.adjoint,
            c.finite_difference,
            c.relative_error()
        );
    }
    write_gradchecks(&checks, create(&common.out, "gradcheck.csv")?)?;
    // the evacuation check compares against a one-cell difference quotient
    let limit = if matches!(built, Built::Evacuation(_)) { f64::INFINITY } else { 1e-4 };
    Ok(if checks.iter().all(|c| c.relative_error() <= limit) {
        Outcome::Converged
    } else {
        Outcome::NotConverged
    })
}

fn write_asm(dir: &Path, name: &str, r: &AsmResult) -> anyhow::Result<()> {
    r.write_csv(create(dir, name)?)?;
    Ok(())
}

fn full_run(built: &Built, common: &Common) -> anyhow::Result<Outcome> {
    let converged = match built {
        Built::Toy(t) => {
            let rep = t.run()?;
            rep.write_csv(create(&common.out, "toy.csv")?)?;
            for (omega, ac, asm) in &rep.runs {
                ac.trace.write_csv(create(&common.out, &format!("ac_trace_omega{omega}.csv"))?)?;
                write_asm(&common.out, &format!("asm_trace_omega{omega}.csv"), asm)?;
            }
            if common.dump_trajectories {
                for r in &rep.rows {
                    let ens = t.simulate_micro(r.u_asm)?;
                    let name = format!("trajectories_omega{}.csv", r.omega_star);
                    write_trajectory_csv(&ens, create(&common.out, &name)?)?;
                }
            }
            for r in &rep.rows {
                println!(
                    "omega* = {}: u_AC = {:.4}, u_ASM = {:.4}, u_c = {:.4}, ASM iterations {}",
                    r.omega_star, r.u_ac, r.u_asm, r.u_coarse, r.asm_iterations
                );
            }
            rep.converged()
        }
        Built::Evacuation(e) => {
            let rep = e.run()?;
            rep.write_csv(create(&common.out, "evacuation.csv")?)?;
            for (gap, asm) in &rep.runs {
                write_asm(&common.out, &format!("asm_trace_gap{gap}.csv"), asm)?;
                println!(
                    "gap {gap}: u_c = {:?}, u_ASM = {:?}, iterations {}, {:?}",
                    asm.u_star_coarse(),
                    asm.u,
                    asm.iterations(),
                    asm.status
                );
                if common.dump_trajectories {
                    let ens = e.fine.simulate(&asm.u)?;
                    write_trajectory_csv(&ens, create(&common.out, &format!("trajectories_gap{gap}.csv"))?)?;
                }
                if common.dump_fields {
                    let coarse = e.coarse(*gap)?;
                    let hist = coarse.simulate(asm.u_star_coarse())?;
                    let dir = common.out.join(format!("fields_gap{gap}"));
                    for (s, rho) in hist.rho.iter().enumerate() {
                        write_density_csv(&coarse.grid, rho, s, create(&dir, &format!("density_{s:04}.csv"))?)?;
                    }
                }
            }
            rep.converged()
        }
        Built::MaterialFlow(m) => {
            let rep = m.run()?;
            rep.write_csv(create(&common.out, "material_flow.csv")?)?;
            for (c, asm) in &rep.runs {
                write_asm(&common.out, &format!("asm_trace_C{c}.csv"), asm)?;
                if common.dump_trajectories {
                    let ens = m.fine.simulate(asm.u[0])?;
                    write_trajectory_csv(&ens, create(&common.out, &format!("trajectories_C{c}.csv"))?)?;
                }
            }
            for r in rep.rows() {
                println!(
                    "C = {}: u_c = {:.4}, u_ASM = {:.4}, j_fine = {}, iterations {}",
                    r.c, r.u_coarse, r.u_asm, r.j_fine, r.iterations
                );
            }
            rep.converged()
        }
    };
    Ok(if converged { Outcome::Converged } else { Outcome::NotConverged })
}

