//! Command-line surface: subcommands, output files and the run manifest.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 solver failure,
//! 3 property-suite failure.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::bellman::DiscreteBellman;
use crate::cell::{c_rho_constant, corrector_lipschitz_report, sigma_cap, solve_cell, CellAssembler};
use crate::config::{ExperimentConfig, Purpose};
use crate::effective::{solve_effective_parabolic, EffectiveSolver};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::homog::{discrete_comparison_suite, epsilon_frequency, run_convergence_study, run_property_suite};
use crate::kernels::{
    check_cone_ellipticity, check_holder_in_xi, check_levy_bound, check_modulus_integrability, drift_correction,
    CheckOptions,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_PROPERTY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "levy-homog", version, about = "Homogenization of order-1 nonlocal Bellman equations on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; LEVY_HOMOG_OUT takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Check the kernel assumptions and report the drift correction.
    CheckKernel,
    /// Discounted stationary problem on the slow grid.
    SolveStationary,
    /// Cell problems at the configured nodes and gradients.
    SolveCell,
    /// Table of the effective Hamiltonian over nodes and gradients.
    TabulateHeff,
    /// Oscillatory parabolic problem at one ε.
    SolveEps,
    /// Effective parabolic problem.
    SolveEff,
    /// ε-convergence study.
    Converge,
    /// Structural property suites of the effective Hamiltonian.
    Properties,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::CheckKernel => "check-kernel",
            Command::SolveStationary => "solve-stationary",
            Command::SolveCell => "solve-cell",
            Command::TabulateHeff => "tabulate-heff",
            Command::SolveEps => "solve-eps",
            Command::SolveEff => "solve-eff",
            Command::Converge => "converge",
            Command::Properties => "properties",
        }
    }

    fn purpose(self) -> Purpose {
        match self {
            Command::CheckKernel => Purpose::Kernel,
            Command::SolveStationary => Purpose::Stationary,
            Command::SolveCell | Command::TabulateHeff => Purpose::Cell,
            Command::SolveEps => Purpose::Epsilon,
            Command::SolveEff => Purpose::Effective,
            Command::Converge => Purpose::Convergence,
            Command::Properties => Purpose::Properties,
        }
    }
}

/// Why a command stopped.
enum Failure {
    Error(Error),
    /// A property or assumption check failed; outputs were written.
    Property(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

/// Files written by one run, recorded in the manifest.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(self.path(name), text)?;
        Ok(())
    }

    fn grid_csv(&mut self, name: &str, f: &GridFunction) -> Result<()> {
        f.write_csv(BufWriter::new(File::create(self.path(name))?))
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            eprintln!("{}", e.render());
            return EXIT_VALIDATION;
        }
    };
    let Some(config_path) = cli.config.clone() else {
        eprintln!("error: --config <path> is required\n\nUsage: levy-homog <COMMAND> --config <PATH> [--out <DIR>] [--threads <N>]");
        return EXIT_VALIDATION;
    };
    let config = match ExperimentConfig::from_path(&config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let dir = output_dir(cli.out.as_deref(), &config);
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("error: cannot create output directory {}: {e}", dir.display());
        return EXIT_VALIDATION;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_VALIDATION;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_VALIDATION;
        }
    };
    let threads = pool.current_num_threads();
    let mut out = Outputs { dir, files: Vec::new() };
    let start = Instant::now();
    let result = pool.install(|| dispatch(cli.command, &config, &mut out));
    let (code, status) = match &result {
        Ok(()) => (EXIT_OK, "ok".to_string()),
        Err(Failure::Property(msg)) => (EXIT_PROPERTY, format!("property failure: {msg}")),
        Err(Failure::Error(e)) if e.is_solver_failure() => (EXIT_SOLVER, format!("solver failure: {e}")),
        Err(Failure::Error(e)) => (EXIT_VALIDATION, format!("error: {e}")),
    };
    let manifest = json!({
        "command": cli.command.name(),
        "config_path": config_path.display().to_string(),
        "config": config,
        "version": env!("CARGO_PKG_VERSION"),
        "threads": threads,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "status": status,
        "exit_code": code,
        "outputs": out.files,
    });
    let manifest_path = out.dir.join("manifest.json");
    if let Err(e) = std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap_or_default() + "\n") {
        eprintln!("error: cannot write manifest: {e}");
        return EXIT_VALIDATION;
    }
    if code != EXIT_OK {
        eprintln!("{status}");
    }
    code
}

fn dispatch(cmd: Command, config: &ExperimentConfig, out: &mut Outputs) -> std::result::Result<(), Failure> {
    let data = config.validate(cmd.purpose())?;
    match cmd {
        Command::CheckKernel => {
            let opts = CheckOptions::default();
            let k = &data.kernel;
            let mut reports = vec![serde_json::to_value(check_levy_bound(k, &opts)?).map_err(Error::from)?];
            let e = &config.experiment;
            for axis in 0..data.dim {
                let mut p = vec![0.0; data.dim];
                p[axis] = 1.0;
                for rho in [data.slow.h(), 0.125, 0.25, 0.5, 1.0] {
                    reports.push(serde_json::to_value(check_cone_ellipticity(k, &p, e.cone_eta, rho, &opts)?).map_err(Error::from)?);
                }
            }
            let xi2 = vec![0.25; data.dim];
            reports.push(serde_json::to_value(check_holder_in_xi(k, &vec![0.0; data.dim], &xi2, 0.5, &opts)?).map_err(Error::from)?);
            let mut corrections = Vec::new();
            if k.is_separable() {
                reports.push(serde_json::to_value(check_modulus_integrability(k, &opts)?).map_err(Error::from)?);
                for a in 0..k.controls() {
                    let c = drift_correction(k, a, &[0.0, 0.0], &opts)?;
                    corrections.push(json!({"control": a, "xi": [0.0, 0.0], "value": &c.value[..data.dim], "error_bound": c.error_bound}));
                }
            }
            let pass = reports.iter().all(|r| r["pass"].as_bool().unwrap_or(false));
            out.json(
                "kernel_report.json",
                &json!({"family": k.family().tag(), "class": k.class(), "symmetric": k.is_symmetric(),
                        "assumptions": reports, "drift_correction": corrections, "pass": pass}),
            )?;
            if !pass {
                return Err(Failure::Property("kernel assumption check failed".into()));
            }
        }
        Command::SolveStationary => {
            let scheme = DiscreteBellman::oscillatory(&data, data.slow, 1)?;
            let r = scheme.solve_stationary(config.solver.delta, &config.stationary_options(), None)?;
            out.grid_csv("psi.csv", &r.psi)?;
            out.json(
                "stationary.json",
                &json!({"delta": r.delta, "iterations": r.iterations, "residual": r.residual, "solver": r.solver,
                        "sup_norm": r.psi.sup_norm(), "lipschitz": r.psi.lipschitz_seminorm()}),
            )?;
        }
        Command::SolveCell => {
            let assembler = CellAssembler::new(&data)?;
            let u = config.initial_on(data.slow)?;
            let opts = config.cell_options();
            let mut index = Vec::new();
            for node in &config.experiment.nodes {
                for (pi, p) in config.experiment.p_list.iter().enumerate() {
                    let cp = assembler.build(*node, *p, &u, 0.5)?;
                    let ev = solve_cell(&cp, &opts).map_err(|e| Error::CellAtNode { node: *node, source: Box::new(e) })?;
                    let sigma = 0.5 * sigma_cap(&data);
                    let lip = corrector_lipschitz_report(&ev, &cp, sigma, sigma_cap(&data))?;
                    let stem = format!("cell_x{node}_p{pi}");
                    out.grid_csv(&format!("{stem}_corrector.csv"), &ev.corrector)?;
                    out.json(
                        &format!("{stem}.json"),
                        &json!({"node": node, "p": &p[..data.dim], "lambda": ev.lambda, "lambda_sequence": ev.lambdas,
                                "deltas": ev.deltas, "residuals": ev.residuals, "lip_measured": ev.lip_measured,
                                "lip_bound_inputs": {"c_rho": c_rho_constant(&cp), "local": cp.local, "sigma": sigma,
                                                     "implied_constant": lip.implied_constant, "growth_factor": lip.growth_factor}}),
                    )?;
                    index.push(json!({"node": node, "p": &p[..data.dim], "lambda": ev.lambda, "file": format!("{stem}.json")}));
                }
            }
            out.json("cells.json", &Value::Array(index))?;
        }
        Command::TabulateHeff => {
            let mut solver = EffectiveSolver::new(&data, config.cell_options())?;
            solver.p_step = config.solver.p_step;
            solver.use_cache = config.solver.cache;
            let u = config.initial_on(data.slow)?;
            let path = out.path("heff.csv");
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path).map_err(Error::from)?));
            let mut header = vec!["x_index".to_string()];
            header.extend((0..data.dim).map(|k| format!("p_{k}")));
            header.extend(["lambda", "cell_iters", "lip_measured"].map(String::from));
            w.write_record(&header).map_err(Error::from)?;
            for node in 0..data.slow.len() {
                for p in &config.experiment.p_list {
                    let ev = solver.evaluate(node, *p, &u)?;
                    let mut row = vec![node.to_string()];
                    row.extend(p[..data.dim].iter().map(|v| format!("{v:.17e}")));
                    row.push(format!("{:.17e}", ev.lambda));
                    row.push(ev.iterations.iter().sum::<usize>().to_string());
                    row.push(format!("{:.17e}", ev.lip_measured));
                    w.write_record(&row).map_err(Error::from)?;
                }
            }
            w.flush().map_err(Error::from)?;
            out.json("heff.json", &json!({"cache_hits": solver.cache.hits(), "cache_misses": solver.cache.misses()}))?;
        }
        Command::SolveEps => {
            let e = &config.experiment;
            let k = epsilon_frequency(e.epsilon, data.slow.n())?;
            let n = (e.points_per_period * k).max(data.slow.n());
            let grid = crate::grid::TorusGrid::new(data.dim, n)?;
            let scheme = DiscreteBellman::oscillatory(&data, grid, k)?;
            let u0 = config.initial_on(grid)?;
            let sol = scheme.solve_parabolic(&u0, e.t_end, config.solver.tau, &config.snapshot_times())?;
            write_solution(out, "u_eps", &sol, json!({"epsilon": e.epsilon, "grid_n": n}))?;
        }
        Command::SolveEff => {
            let mut solver = EffectiveSolver::new(&data, config.cell_options())?;
            solver.p_step = config.solver.p_step;
            solver.use_cache = config.solver.cache;
            let u0 = config.initial_on(data.slow)?;
            let sol = solve_effective_parabolic(&solver, &u0, config.experiment.t_end, config.solver.tau, &config.snapshot_times())?;
            write_solution(out, "u_eff", &sol, json!({"cache_hits": solver.cache.hits(), "cache_misses": solver.cache.misses()}))?;
        }
        Command::Converge => {
            let result = run_convergence_study(
                &data,
                config.initial(),
                config.experiment.t_end,
                &config.experiment.epsilons,
                &config.study_options(),
            );
            let (study, err) = match result {
                Ok(s) => (s, None),
                Err(abort) => (abort.partial, Some(abort.error)),
            };
            study.write_errors_csv(BufWriter::new(File::create(out.path("errors.csv")).map_err(Error::from)?))?;
            let verdict = match (study.monotone, study.reduction) {
                (Some(m), Some(r)) => json!({"monotone": m, "reduction": r}),
                _ => Value::Null,
            };
            out.json("study.json", &json!({"study": study, "verdict": verdict, "sample_spec": "lattice × {T/4, T/2, T}"}))?;
            if let Some(e) = err {
                return Err(e.into());
            }
        }
        Command::Properties => {
            let u0 = config.initial_on(data.slow)?;
            let mut suite = json!({});
            let mut pass = true;
            if config.experiment.suites.effective {
                let s = run_property_suite(&data, &u0, &config.cell_options(), &config.property_options())?;
                pass &= s.pass;
                suite["effective"] = serde_json::to_value(&s).map_err(Error::from)?;
            }
            if config.experiment.suites.comparison {
                let r = discrete_comparison_suite(&data, config.experiment.trials, config.seed, config.experiment.t_end.min(0.1))?;
                pass &= r.pass;
                suite["discrete_comparison"] = serde_json::to_value(&r).map_err(Error::from)?;
            }
            suite["pass"] = json!(pass);
            out.json("properties.json", &suite)?;
            if !pass {
                return Err(Failure::Property("a property suite failed".into()));
            }
        }
    }
    Ok(())
}

fn write_solution(out: &mut Outputs, stem: &str, sol: &crate::bellman::ParabolicSolution, extra: Value) -> Result<()> {
    let mut files = Vec::new();
    for (k, snap) in sol.snapshots.iter().enumerate() {
        let name = format!("{stem}_t{k}.csv");
        out.grid_csv(&name, snap)?;
        files.push(name);
    }
    out.json(
        &format!("{stem}.json"),
        &json!({"times": sol.times, "tau": sol.tau, "steps": sol.steps, "cfl": sol.cfl,
                "sup_trace": sol.sup_trace, "snapshots": files, "info": extra}),
    )
}

/// Resolves the output directory the way [`run`] does.
pub fn output_dir(cli_out: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    std::env::var_os("LEVY_HOMOG_OUT")
        .map(PathBuf::from)
        .or(cli_out.map(Path::to_path_buf))
        .or(config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("./out"))
}
