//! Command-line front end: configuration ingestion, run orchestration,
//! and report emission.
//!
//! Exit codes: 0 on success, 2 for invalid configurations or unknown
//! experiments, 3 for solver non-convergence. Failures print a
//! machine-readable error JSON to stdout.

use bsvi::config::RunSpec;
use bsvi::error::BsviError;
use bsvi::harness;
use bsvi::solver::{
    self, norms_of_path, solve_bsvi, solve_local_lipschitz, solve_penalized, SolutionPath,
};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "bsvi",
    about = "Solver and verification harness for mean-field backward stochastic variational inequalities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured equation and write a summary JSON.
    Solve {
        /// Path to the run configuration JSON.
        config: PathBuf,
        /// Output directory (default: $BSVI_OUT_DIR or the working directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the full per-node path as CSV.
        #[arg(long)]
        dump_path: bool,
        /// Verbose progress on stderr.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Run a named experiment and write its report files.
    Verify {
        /// Path to the run configuration JSON.
        config: PathBuf,
        /// One of: stability, penalization, cauchy, truncation, baseline, compatibility.
        #[arg(long)]
        experiment: String,
        /// Output directory (default: $BSVI_OUT_DIR or the working directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Verbose progress on stderr.
        #[arg(short, long)]
        verbose: bool,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("BSVI_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn exit_code_for(err: &BsviError) -> u8 {
    match err {
        BsviError::PicardNoConvergence { .. } | BsviError::InnerNoConvergence { .. } => 3,
        _ => 2,
    }
}

fn emit_error(err: &BsviError) -> ExitCode {
    let code = exit_code_for(err);
    let kind = match err {
        BsviError::ConfigValidation(_) => "config_validation",
        BsviError::PicardNoConvergence { .. } => "picard_no_convergence",
        BsviError::InnerNoConvergence { .. } => "inner_no_convergence",
        BsviError::UnknownExperiment(_) => "unknown_experiment",
        BsviError::UnsupportedBaseline(_) => "unsupported_baseline",
        BsviError::StepSizeGuard(_) => "step_size_guard",
        BsviError::InfiniteTerminalBarrier { .. } => "infinite_terminal_barrier",
        BsviError::NodeCap { .. } => "node_cap",
        _ => "error",
    };
    let payload = serde_json::json!({
        "error": { "kind": kind, "message": err.to_string(), "exit_code": code }
    });
    println!("{}", serde_json::to_string_pretty(&payload).unwrap());
    ExitCode::from(code)
}

fn norms_json(spec: &RunSpec, path: &SolutionPath) -> serde_json::Value {
    match norms_of_path(&spec.solver, path) {
        Ok(b) => serde_json::json!({
            "sup": b.sup_norm, "dt": b.dt_norm, "da": b.da_norm, "z": b.z_norm,
            "total_sq": b.total_sq(),
        }),
        Err(_) => serde_json::Value::Null,
    }
}

fn diagnostics_json(path: &SolutionPath) -> serde_json::Value {
    let d = &path.diagnostics;
    serde_json::json!({
        "eps": d.eps,
        "picard_iterations": d.picard_iterations,
        "flow_residuals": d.flow_residuals,
        "max_representation_residual": d.max_representation_residual,
        "max_balance_residual": d.max_balance_residual,
        "max_inner_iterations": d.max_inner_iterations,
        "warnings": d.warnings,
    })
}

fn dump_path_csv(spec: &RunSpec, path: &SolutionPath, file: &Path) -> std::io::Result<()> {
    let tree = &spec.solver.tree;
    let k = path.y[0].dim();
    let mut out = format!("# config-digest: {} seed: {}\n", spec.digest, spec.seed);
    out.push_str("level,node,t,component,y,z_row_sum,u,v\n");
    for level in 0..=tree.steps {
        let t = tree.time(level);
        let y = &path.y[level];
        for node in 0..y.stored() {
            for j in 0..k {
                let z_sum: f64 = if level < tree.steps {
                    let z = path.z[level].get(node);
                    z[j * tree.dim..(j + 1) * tree.dim].iter().sum()
                } else {
                    f64::NAN
                };
                let (u, v) = if level < tree.steps {
                    (path.u[level].get(node)[j], path.v[level].get(node)[j])
                } else {
                    (f64::NAN, f64::NAN)
                };
                out.push_str(&format!(
                    "{level},{node},{t},{j},{},{z_sum},{u},{v}\n",
                    y.get(node)[j]
                ));
            }
        }
    }
    std::fs::write(file, out)
}

fn cmd_solve(config: &Path, out: Option<PathBuf>, dump: bool, verbose: bool) -> ExitCode {
    let spec = match RunSpec::from_path(config) {
        Ok(s) => s,
        Err(e) => return emit_error(&e),
    };
    if let Err(e) = spec.compatibility_gate() {
        return emit_error(&e);
    }
    let dir = out_dir(out);
    if verbose {
        eprintln!("config digest {}", spec.digest);
    }

    let solver_section = &spec.raw.solver;
    let result: Result<(String, SolutionPath, serde_json::Value), BsviError> =
        if let Some(schedule) = &solver_section.n_schedule {
            solve_local_lipschitz(&spec.solver, schedule).map(|(path, output)| {
                let table: Vec<serde_json::Value> = output
                    .rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        serde_json::json!({
                            "n": r.n, "eps": r.eps, "rho": r.rho,
                            "generator_gap": output.generator_gaps[i],
                            "picard_iterations": r.picard_iterations,
                        })
                    })
                    .collect();
                let pairs: Vec<serde_json::Value> = output
                    .pairs
                    .iter()
                    .map(|p| serde_json::json!({"eps": p.eps, "delta": p.delta, "distance_sq": p.distance_sq}))
                    .collect();
                let extra = serde_json::json!({
                    "truncation": {
                        "rows": table,
                        "pairs": pairs,
                        "working_radius": output.working_radius,
                        "log_condition_warning": output.log_condition_warning,
                    }
                });
                ("truncation".to_string(), path, extra)
            })
        } else if let Some(schedule) = &solver_section.eps_schedule {
            solve_bsvi(&spec.solver, schedule).map(|(path, output)| {
                let rows: Vec<serde_json::Value> = output
                    .rows
                    .iter()
                    .map(|r| {
                        serde_json::json!({
                            "eps": r.eps, "gap_phi": r.gap_phi, "gap_psi": r.gap_psi,
                            "feasibility_phi": r.feasibility_phi,
                            "feasibility_psi": r.feasibility_psi,
                            "picard_iterations": r.picard_iterations,
                        })
                    })
                    .collect();
                let pairs: Vec<serde_json::Value> = output
                    .pairs
                    .iter()
                    .map(|p| serde_json::json!({"eps": p.eps, "delta": p.delta, "distance_sq": p.distance_sq}))
                    .collect();
                let extra = serde_json::json!({"continuation": {"rows": rows, "pairs": pairs}});
                ("continuation".to_string(), path, extra)
            })
        } else if let Some(eps) = solver_section.eps {
            solve_penalized(&spec.solver, eps)
                .map(|path| ("penalized".to_string(), path, serde_json::json!({})))
        } else {
            Err(BsviError::ConfigValidation(
                "solver section needs one of eps, eps_schedule, n_schedule".into(),
            ))
        };

    let (mode, path, extra) = match result {
        Ok(r) => r,
        Err(e) => return emit_error(&e),
    };

    let mut summary = serde_json::json!({
        "config_digest": spec.digest,
        "seed": spec.seed,
        "mode": mode,
        "y_root": path.root_y().to_vec(),
        "m_of_t": solver::m_of_t(&spec.solver).ok(),
        "norms": norms_json(&spec, &path),
        "diagnostics": diagnostics_json(&path),
    });
    if let (Some(obj), Some(extra_obj)) = (summary.as_object_mut(), extra.as_object()) {
        for (key, value) in extra_obj {
            obj.insert(key.clone(), value.clone());
        }
    }

    if let Err(e) = std::fs::create_dir_all(&dir) {
        return emit_error(&e.into());
    }
    let summary_path = dir.join(format!("solve-{}.json", spec.digest));
    let text = serde_json::to_string_pretty(&summary).unwrap() + "\n";
    if let Err(e) = std::fs::write(&summary_path, &text) {
        return emit_error(&e.into());
    }
    if dump {
        let csv_path = dir.join(format!("path-{}.csv", spec.digest));
        if let Err(e) = dump_path_csv(&spec, &path, &csv_path) {
            return emit_error(&e.into());
        }
        if verbose {
            eprintln!("wrote {}", csv_path.display());
        }
    }
    if verbose {
        eprintln!("wrote {}", summary_path.display());
    }
    println!("{text}");
    ExitCode::SUCCESS
}

fn cmd_verify(config: &Path, experiment: &str, out: Option<PathBuf>, verbose: bool) -> ExitCode {
    if !harness::EXPERIMENT_NAMES.contains(&experiment) {
        return emit_error(&BsviError::UnknownExperiment(experiment.to_string()));
    }
    let spec = match RunSpec::from_path(config) {
        Ok(s) => s,
        Err(e) => return emit_error(&e),
    };
    if let Some(section) = &spec.raw.experiment {
        if let Some(name) = &section.name {
            if name != experiment {
                return emit_error(&BsviError::ConfigValidation(format!(
                    "config names experiment {name} but --experiment {experiment} was requested"
                )));
            }
        }
    }
    // experiments that solve run behind the compatibility gate; the
    // compatibility experiment itself must run on failing fixtures
    if experiment != "compatibility" {
        if let Err(e) = spec.compatibility_gate() {
            return emit_error(&e);
        }
    }
    let report = match harness::run_experiment(&spec, experiment) {
        Ok(r) => r,
        Err(e) => return emit_error(&e),
    };
    let dir = out_dir(out);
    match report.write(&dir) {
        Ok((csv, json)) => {
            if verbose {
                eprintln!("wrote {}", csv.display());
                eprintln!("wrote {}", json.display());
            }
        }
        Err(e) => return emit_error(&e),
    }
    for v in &report.verdicts {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} {}: {}", v.criterion, v.detail);
    }
    if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve {
            config,
            out,
            dump_path,
            verbose,
        } => cmd_solve(&config, out, dump_path, verbose),
        Command::Verify {
            config,
            experiment,
            out,
            verbose,
        } => cmd_verify(&config, &experiment, out, verbose),
    }
}
