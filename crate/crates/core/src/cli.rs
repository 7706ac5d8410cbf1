//! Command-line surface.
//!
//! Verbs: `simulate` (constrained paths, exact SDE or discrete chain),
//! `solve` (backward dynamic program, value/policy artifacts and value-slice
//! CSVs), `rollout` (Monte Carlo of the solved policy), `sweep` (convergence
//! in h or L), `stopping-study` (stopping times vs initial intensity across
//! injection-cost variants) and `check` (the aggregated invariant suite).
//!
//! Exit codes: 0 success, 2 config error, 3 invariant failure, 4 numeric
//! failure. Failures print a machine-readable JSON record to stderr. Every
//! output file starts with provenance comment lines (tool version, config
//! hash, seed) and is written atomically.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{load_config, Loaded};
use crate::dynamics::{simulate_controlled, PathRecord, ScheduledPlan};
use crate::error::{Error, Result};
use crate::lattice::{assemble_transitions, build_lattice, transitions_to_bytes, LatticeSpec, TransitionModel};
use crate::report::{atomic_write, file_header};
use crate::rng::{derive_seed, stream_rng};
use crate::solver::{backward_solve, query_value, solution_to_bytes, value_slice_csv};
use crate::validate::{
    check_suite, h_sweep, l_sweep, rollout_policy, sigma_from_lambda0, stopping_study,
    SweepReport,
};

#[derive(Debug, Parser)]
#[command(
    name = "hawkes-mca",
    version,
    about = "Markov-chain approximation solver for stopping/singular-control problems \
             driven by marked Hawkes processes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate constrained controlled paths and write them as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// "sde" or "chain" (overrides the config).
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        paths: Option<usize>,
        /// SDE time step (overrides the config).
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the backward dynamic program; write value slices and probes.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Grid spacing override.
        #[arg(long)]
        h: Option<f64>,
        /// Also write the binary value/policy artifact.
        #[arg(long)]
        export_solution: bool,
        /// Also write the materialized transition rows.
        #[arg(long)]
        export_transitions: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo rollout of the solved policy from the first probe point.
    Rollout {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convergence sweep over h or L.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// "h" or "L".
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',')]
        h_list: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        l_list: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stopping times and maturity fractions across injection-cost variants.
    #[command(name = "stopping-study")]
    StoppingStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the aggregated invariant suite; nonzero exit on any failure.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_and_report(path: &Path) -> Result<Loaded> {
    let loaded = load_config(path)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok(loaded)
}

fn out_dir(loaded: &Loaded, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone().unwrap_or_else(|| loaded.output_dir())
}

fn write_csv(
    dir: &Path,
    name: &str,
    loaded: &Loaded,
    seed: Option<u64>,
    body: &str,
) -> Result<PathBuf> {
    let path = dir.join(name);
    let content = format!("{}{}", file_header(&loaded.hash, seed), body);
    atomic_write(&path, content.as_bytes())?;
    Ok(path)
}

fn initial_sigma(loaded: &Loaded) -> Result<Vec<f64>> {
    match &loaded.raw.simulate.sigma0 {
        Some(s) => {
            if s.len() != loaded.model.hawkes.dimension() {
                return Err(Error::config(
                    "simulate.sigma0",
                    "dimension does not match the kernel",
                ));
            }
            Ok(s.clone())
        }
        None => sigma_from_lambda0(&loaded.model, loaded.raw.simulate.lambda0),
    }
}

/// Forward simulation of the discrete chain under fixed controls with the
/// scheduled injections quantized to h-steps, mirroring the SDE plan.
fn simulate_chain_path(
    tm: &TransitionModel,
    lattice: &LatticeSpec,
    plan: &ScheduledPlan,
    x0: f64,
    sigma0: &[f64],
    seed: u64,
) -> String {
    let mut rng = stream_rng(seed, 0);
    let nx = lattice.nx();
    let mut x_idx = ((x0 - lattice.x(0)) / lattice.h).round().clamp(0.0, (nx - 1) as f64) as usize;
    let mut sigma_idx = {
        // Snap each component to the nearest grid point.
        let multi: Vec<usize> = sigma0
            .iter()
            .zip(&lattice.sigma_grids)
            .map(|(&s, g)| {
                let step = (g.hi - g.lo) / (g.m - 1) as f64;
                (((s - g.lo) / step).round().max(0.0) as usize).min(g.m - 1)
            })
            .collect();
        lattice.sigma_flat_index(&multi)
    };
    let mut out = String::new();
    let mut xi = 0.0;
    let dim = lattice.dim();
    let push_row = |out: &mut String, t: f64, x: f64, lam: f64, sig: &[f64], dxi: f64, mark: &str| {
        out.push_str(&format!("0,{t},{x},{lam}"));
        for s in sig {
            out.push_str(&format!(",{s}"));
        }
        out.push_str(&format!(",{dxi},0,0,{mark}\n"));
    };
    let sig0_vec = lattice.sigma_vector(sigma_idx);
    push_row(
        &mut out,
        0.0,
        lattice.x(x_idx),
        tm.intensity(0.0, sigma_idx),
        &sig0_vec,
        0.0,
        "",
    );
    for layer in 0..lattice.n_layers {
        let t0 = lattice.time(layer);
        let t1 = lattice.time(layer + 1);
        // Scheduled injections inside this step, quantized to h.
        let mut dxi = 0.0;
        for &(ti, amount) in &plan.injections {
            if ti >= t0 && ti < t1 {
                let steps = (amount / lattice.h).round() as usize;
                for _ in 0..steps {
                    if x_idx + 1 < nx {
                        x_idx += 1;
                        dxi += lattice.h;
                    }
                }
            }
        }
        xi += dxi;
        let (next_x, next_sigma, site) =
            tm.sample_diffuse(x_idx, sigma_idx, plan.b_index, plan.g_index, t0, &mut rng);
        x_idx = next_x;
        sigma_idx = next_sigma;
        let mark = site
            .map(|s| format!("{}", lattice.mark_sites[s]))
            .unwrap_or_default();
        let sig = lattice.sigma_vector(sigma_idx);
        debug_assert_eq!(sig.len(), dim);
        push_row(
            &mut out,
            t1,
            lattice.x(x_idx),
            tm.intensity(t1, sigma_idx),
            &sig,
            dxi,
            &mark,
        );
    }
    let _ = xi;
    out
}

fn sweep_csv(report: &SweepReport) -> String {
    let mut body = String::from(&report.axis.to_string());
    for (i, (x0, l0)) in report.probes.iter().enumerate() {
        body.push_str(&format!(",value_p{i}_x{x0}_lam{l0}"));
    }
    for i in 0..report.probes.len() {
        body.push_str(&format!(",diff_p{i}"));
    }
    body.push_str(",wall_clock_secs\n");
    for (k, param) in report.parameters.iter().enumerate() {
        body.push_str(&format!("{param}"));
        for v in &report.values[k] {
            body.push_str(&format!(",{v}"));
        }
        for p in 0..report.probes.len() {
            if k == 0 {
                body.push(',');
            } else {
                body.push_str(&format!(",{}", report.diffs[k - 1][p]));
            }
        }
        body.push_str(&format!(",{}\n", report.wall_clock_secs[k]));
    }
    body
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            mode,
            paths,
            dt,
            seed,
            out,
        } => {
            let mut loaded = load_and_report(&config)?;
            if let Some(s) = seed {
                loaded.raw.seed = Some(s);
                loaded.hash = crate::config::config_hash(&loaded.raw);
            }
            let seed = loaded.seed()?;
            let mode = mode.unwrap_or_else(|| loaded.raw.simulate.mode.clone());
            let n_paths = paths.unwrap_or(loaded.raw.simulate.paths);
            let dir = out_dir(&loaded, &out);
            let sigma0 = initial_sigma(&loaded)?;
            let x0 = loaded.raw.simulate.x0;
            let lat_cfg = &loaded.raw.lattice;
            let lattice = build_lattice(&loaded.model, lat_cfg.h, lat_cfg.m, lat_cfg.upsilon)?;
            let plan = ScheduledPlan {
                b_index: 0,
                g_index: 0,
                injections: loaded.raw.simulate.injections.clone(),
                stop_time: loaded.raw.simulate.stop_time,
            };
            let dim = loaded.model.hawkes.dimension();
            let mut body = PathRecord::csv_header(dim);
            match mode.as_str() {
                "sde" => {
                    let dt = dt.or(loaded.raw.simulate.dt).unwrap_or(lattice.dt);
                    for p in 0..n_paths {
                        let record = simulate_controlled(
                            &loaded.model,
                            &plan,
                            x0,
                            &sigma0,
                            dt,
                            derive_seed(seed, p as u64),
                        )?;
                        body.push_str(&record.csv_rows(p));
                    }
                }
                "chain" => {
                    let tm = assemble_transitions(&loaded.model, &lattice)?;
                    for p in 0..n_paths {
                        let rows = simulate_chain_path(
                            &tm,
                            &lattice,
                            &plan,
                            x0,
                            &sigma0,
                            derive_seed(seed, p as u64),
                        );
                        // Rewrite the leading path id (simulate_chain_path
                        // emits 0) so multi-path files stay distinguishable.
                        for line in rows.lines() {
                            body.push_str(&format!("{p}{}\n", &line[1..]));
                        }
                    }
                }
                other => {
                    return Err(Error::config(
                        "simulate.mode",
                        format!("unknown mode `{other}`"),
                    ))
                }
            }
            let path = write_csv(&dir, &format!("paths_{mode}.csv"), &loaded, Some(seed), &body)?;
            println!("wrote {}", path.display());
            Ok(())
        }

        Command::Solve {
            config,
            h,
            export_solution,
            export_transitions,
            out,
        } => {
            let loaded = load_and_report(&config)?;
            let lat_cfg = &loaded.raw.lattice;
            let h = h.unwrap_or(lat_cfg.h);
            let dir = out_dir(&loaded, &out);
            let lattice = build_lattice(&loaded.model, h, lat_cfg.m, lat_cfg.upsilon)?;
            let tm = assemble_transitions(&loaded.model, &lattice)?;
            let (table, policy) = backward_solve(&tm, &loaded.cost)?;

            let slice = value_slice_csv(&table, &policy, &lattice, 0);
            write_csv(&dir, "value_t0.csv", &loaded, loaded.raw.seed, &slice)?;

            let mut probe_body = String::from("x0,lambda0,value\n");
            for &(x0, lambda0) in &loaded.raw.solver.probes {
                let sigma0 = sigma_from_lambda0(&loaded.model, lambda0)?;
                let v = query_value(&table, &lattice, 0.0, x0, &sigma0)?;
                println!("V0(x0 = {x0}, lambda0 = {lambda0}) = {v}");
                probe_body.push_str(&format!("{x0},{lambda0},{v}\n"));
            }
            write_csv(&dir, "probes.csv", &loaded, loaded.raw.seed, &probe_body)?;

            if export_solution {
                let bytes = solution_to_bytes(&table, &policy);
                atomic_write(&dir.join("solution.bin"), &bytes)?;
            }
            if export_transitions {
                let bytes = transitions_to_bytes(&tm, 0.0);
                atomic_write(&dir.join("transitions.bin"), &bytes)?;
            }
            println!(
                "solved {} states x {} layers (h = {h}, dt = {})",
                lattice.n_states(),
                lattice.n_layers,
                lattice.dt
            );
            Ok(())
        }

        Command::Rollout {
            config,
            h,
            paths,
            seed,
            out,
        } => {
            let mut loaded = load_and_report(&config)?;
            if let Some(s) = seed {
                loaded.raw.seed = Some(s);
                loaded.hash = crate::config::config_hash(&loaded.raw);
            }
            let seed = loaded.seed()?;
            let lat_cfg = &loaded.raw.lattice;
            let h = h.unwrap_or(lat_cfg.h);
            let n_paths = paths.unwrap_or(loaded.raw.solver.paths);
            let dir = out_dir(&loaded, &out);
            let lattice = build_lattice(&loaded.model, h, lat_cfg.m, lat_cfg.upsilon)?;
            let tm = assemble_transitions(&loaded.model, &lattice)?;
            let (table, policy) = backward_solve(&tm, &loaded.cost)?;
            let &(x0, lambda0) = loaded
                .raw
                .solver
                .probes
                .first()
                .ok_or_else(|| Error::config("solver.probes", "need at least one probe"))?;
            let sigma0 = sigma_from_lambda0(&loaded.model, lambda0)?;
            let v0 = query_value(&table, &lattice, 0.0, x0, &sigma0)?;
            let stats = rollout_policy(&tm, &loaded.cost, &policy, x0, &sigma0, n_paths, seed)?;
            println!(
                "rollout mean = {} (se {}), V0 = {v0}, |diff| = {}",
                stats.mean,
                stats.std_error,
                (stats.mean - v0).abs()
            );
            let body = format!(
                "x0,lambda0,paths,mean,std_error,value,abs_diff,mean_stop_time,maturity_fraction\n\
                 {x0},{lambda0},{n_paths},{},{},{v0},{},{},{}\n",
                stats.mean,
                stats.std_error,
                (stats.mean - v0).abs(),
                stats.mean_stop_time,
                stats.maturity_fraction
            );
            write_csv(&dir, "rollout.csv", &loaded, Some(seed), &body)?;
            Ok(())
        }

        Command::Sweep {
            config,
            axis,
            h_list,
            l_list,
            out,
        } => {
            let loaded = load_and_report(&config)?;
            let dir = out_dir(&loaded, &out);
            let probes = loaded.raw.solver.probes.clone();
            let lat_cfg = &loaded.raw.lattice;
            let report = match axis.as_str() {
                "h" => h_sweep(
                    &loaded.model,
                    &loaded.cost,
                    &h_list.unwrap_or_else(|| loaded.raw.solver.h_list.clone()),
                    lat_cfg.m,
                    lat_cfg.upsilon,
                    &probes,
                )?,
                "L" | "l" => l_sweep(
                    &loaded.model,
                    &loaded.cost,
                    lat_cfg.h,
                    lat_cfg.m,
                    lat_cfg.upsilon,
                    &l_list.unwrap_or_else(|| loaded.raw.solver.l_list.clone()),
                    &probes,
                )?,
                other => {
                    return Err(Error::config(
                        "--axis",
                        format!("unknown axis `{other}` (use h or L)"),
                    ))
                }
            };
            let name = format!("sweep_{}.csv", report.axis);
            let path = write_csv(&dir, &name, &loaded, loaded.raw.seed, &sweep_csv(&report))?;
            println!(
                "wrote {} (diffs nonincreasing: {})",
                path.display(),
                report.diffs_nonincreasing()
            );
            Ok(())
        }

        Command::StoppingStudy {
            config,
            paths,
            seed,
            out,
        } => {
            let mut loaded = load_and_report(&config)?;
            if let Some(s) = seed {
                loaded.raw.seed = Some(s);
                loaded.hash = crate::config::config_hash(&loaded.raw);
            }
            let seed = loaded.seed()?;
            let dir = out_dir(&loaded, &out);
            let lat_cfg = &loaded.raw.lattice;
            let n_paths = paths.unwrap_or(loaded.raw.solver.study_paths);
            let variants: Vec<Option<f64>> = loaded
                .raw
                .solver
                .phi_variants
                .iter()
                .map(|v| v.as_option())
                .collect::<Result<_>>()?;
            let rows = stopping_study(
                &loaded.model,
                &loaded.cost,
                lat_cfg.h,
                lat_cfg.m,
                lat_cfg.upsilon,
                loaded.raw.solver.x0,
                &variants,
                &loaded.raw.solver.lambda0_grid,
                n_paths,
                seed,
            )?;
            let mut body =
                String::from("phi,lambda0,mean_stop_time,maturity_fraction,mean_payoff\n");
            for r in &rows {
                let phi = r.phi.map_or("disabled".to_string(), |v| v.to_string());
                body.push_str(&format!(
                    "{phi},{},{},{},{}\n",
                    r.lambda0, r.mean_stop_time, r.maturity_fraction, r.mean_payoff
                ));
            }
            let path = write_csv(&dir, "stopping_study.csv", &loaded, Some(seed), &body)?;
            println!("wrote {}", path.display());
            Ok(())
        }

        Command::Check { config } => {
            let loaded = load_and_report(&config)?;
            let lat_cfg = &loaded.raw.lattice;
            let seed = loaded.raw.seed.unwrap_or(0xC0FFEE);
            let results = check_suite(
                &loaded.model,
                &loaded.cost,
                lat_cfg.h,
                lat_cfg.m,
                lat_cfg.upsilon,
                seed,
            );
            let mut failures = 0;
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!("{status} {} — {}", r.name, r.detail);
                if !r.passed {
                    failures += 1;
                }
            }
            if failures > 0 {
                return Err(Error::invariant(format!(
                    "{failures} of {} checks failed",
                    results.len()
                )));
            }
            Ok(())
        }
    }
}
