use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rotavg::baselines::local_solve;
use rotavg::bench::{all_sbsos_certified, run_sweep, write_outputs, Grid};
use rotavg::partition::{junction_tree_partition, single_block_partition};
use rotavg::polycost::{assemble_cost, ConstraintSet};
use rotavg::precondition::quaternion_signs;
use rotavg::problem::{generate_synthetic, InstanceConfig, MeasurementGraph};
use rotavg::sbsos::{
    build_fredriksson_sdp, build_relaxation, solve_fredriksson, solve_sbsos, BsosLevel, PartitionChoice, PipelineOptions,
    SolveReport, Verdict, CERT_TOL,
};
use rotavg_sdp::SdpProblem;
use serde_json::json;

/// Certifiably globally optimal rotation averaging.
#[derive(Parser)]
#[command(name = "rotavg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic instance: a chain plus random loop closures.
    Generate {
        #[arg(long)]
        n: usize,
        /// Number of loop-closure edges beyond the spanning tree.
        #[arg(long, default_value_t = 0)]
        loops: usize,
        /// Largest measurement perturbation angle in radians.
        #[arg(long, default_value_t = 0.0)]
        theta_max: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solves an instance file and reports the certificate.
    Solve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Sbsos)]
        method: MethodArg,
        #[arg(long, value_enum, default_value_t = PartitionArg::Jt)]
        partition: PartitionArg,
        /// Relative tolerance on the gap between bound and candidate cost.
        #[arg(long, default_value_t = CERT_TOL)]
        cert_tol: f64,
        #[arg(long)]
        json_out: Option<PathBuf>,
        /// Writes the conic program in sparse SDPA form before solving.
        #[arg(long)]
        export_sdp: Option<PathBuf>,
        /// Drops the box constraints (1 +- q_c) / 2 from the relaxation.
        #[arg(long)]
        no_redundant_boxes: bool,
    },
    /// Runs a parameter sweep and writes runs.csv, runs.json and summary.csv.
    Bench {
        #[arg(long)]
        grid_file: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Worker threads; 0 uses one per core.
        #[arg(long, env = "ROTAVG_WORKERS", default_value_t = 0)]
        workers: usize,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    Sbsos,
    Fredriksson,
    Local,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    Jt,
    Single,
}

fn generate(n: usize, n_loops: usize, theta_max: f64, seed: u64, out: &Path) -> Result<ExitCode> {
    let g = generate_synthetic(&InstanceConfig { n, n_loops, theta_max, seed })?;
    g.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!("{} edges", g.num_edges());
    Ok(ExitCode::SUCCESS)
}

fn export(g: &MeasurementGraph, method: MethodArg, opts: &PipelineOptions, path: &Path) -> Result<()> {
    let signs = quaternion_signs(g)?.signs;
    let sdp: SdpProblem = match method {
        MethodArg::Sbsos => {
            let part = match opts.partition {
                PartitionChoice::Jt => junction_tree_partition(g),
                PartitionChoice::Single => single_block_partition(g.n()),
            };
            build_relaxation(g, &signs, &part, BsosLevel::default(), opts.constraints)?.sdp
        }
        MethodArg::Fredriksson => build_fredriksson_sdp(g, &signs)?.sdp,
        MethodArg::Local => bail!("--export-sdp needs --method sbsos or fredriksson"),
    };
    fs::write(path, sdp.to_sdpa_sparse()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn print_report(report: &SolveReport) {
    let c = &report.certificate;
    println!("verdict {}", c.verdict.as_str());
    println!("t_star {:.12e}", c.t_star);
    println!("cost {:.12e}", c.cost);
    println!("gap_rel {:.3e}", c.gap_rel);
    if let Some(msg) = &report.failure {
        println!("solver {msg}");
    }
}

fn solve(
    input: &Path,
    method: MethodArg,
    opts: PipelineOptions,
    json_out: Option<&Path>,
    export_sdp: Option<&Path>,
) -> Result<ExitCode> {
    let g = MeasurementGraph::load(input).with_context(|| format!("reading {}", input.display()))?;
    if let Some(path) = export_sdp {
        export(&g, method, &opts, path)?;
    }
    let (json, ok) = match method {
        MethodArg::Local => {
            let sel = quaternion_signs(&g)?;
            let cost = assemble_cost(&g, &sel.signs)?;
            let r = local_solve(&cost, &sel.chained, &opts.extract.local)?;
            println!("converged {}", r.converged);
            println!("cost {:.12e}", r.cost);
            let qs: Vec<[f64; 4]> = r.quaternions.iter().map(|q| q.as_array()).collect();
            let json = json!({
                "cost": r.cost,
                "converged": r.converged,
                "iterations": r.iterations,
                "grad_norm": r.grad_norm,
                "per_vertex_quaternions": qs,
            });
            (json, r.converged)
        }
        MethodArg::Sbsos | MethodArg::Fredriksson => {
            let report = if method == MethodArg::Sbsos { solve_sbsos(&g, &opts)? } else { solve_fredriksson(&g, &opts)? };
            print_report(&report);
            (serde_json::to_value(&report.certificate)?, report.certificate.verdict == Verdict::CertifiedOptimal)
        }
    };
    if let Some(path) = json_out {
        fs::write(path, serde_json::to_string_pretty(&json)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn bench(grid_file: &Path, out_dir: &Path, workers: usize) -> Result<ExitCode> {
    let grid = Grid::load(grid_file).with_context(|| format!("reading {}", grid_file.display()))?;
    let records = run_sweep(&grid, workers, &PipelineOptions::default())?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_outputs(&records, out_dir)?;
    println!("{} runs written to {}", records.len(), out_dir.display());
    if all_sbsos_certified(&records) {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("some SBSOS runs were not certified");
        Ok(ExitCode::from(1))
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { n, loops, theta_max, seed, out } => generate(n, loops, theta_max, seed, &out),
        Command::Solve { input, method, partition, cert_tol, json_out, export_sdp, no_redundant_boxes } => {
            if !(cert_tol.is_finite() && cert_tol >= 0.0) {
                bail!("--cert-tol must be a finite nonnegative number");
            }
            let opts = PipelineOptions {
                partition: match partition {
                    PartitionArg::Jt => PartitionChoice::Jt,
                    PartitionArg::Single => PartitionChoice::Single,
                },
                constraints: ConstraintSet { boxes: !no_redundant_boxes, ..ConstraintSet::default() },
                cert_tol,
                ..PipelineOptions::default()
            };
            solve(&input, method, opts, json_out.as_deref(), export_sdp.as_deref())
        }
        Command::Bench { grid_file, out_dir, workers } => bench(&grid_file, &out_dir, workers),
    }
}

fn main() -> ExitCode {
    // clap reports usage errors with exit code 2
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
