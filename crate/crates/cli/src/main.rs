//! Command-line front end: scattering runs, canonical-variable tables,
//! gradient checks, bracket comparisons, flow derivation, time evolution,
//! conserved-quantity tables, and a one-shot verification battery.

mod config;
mod verify;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use config::Config;
use gdflows_core::analysis::{canonical_table, CanonParams};
use gdflows_core::bracket::BracketEngine;
use gdflows_core::flow::{
    action_angle_check, evolve, hamiltonians, records_along_run, spectral_evolution_check,
    EvolveParams,
};
use gdflows_core::potential::Potential;
use gdflows_core::report::{
    hex64, plot_script, BracketComparison, RunManifest, ScatterManifest, TOOL_VERSION,
};
use gdflows_core::sector::RootSystem;
use gdflows_core::symbol::{derive_flow, FlowEquation};
use gdflows_core::wave::{compute_record, Method, ScatteringRecord, SolverParams};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "gdflows",
    version,
    about = "Direct scattering transform for n-th order scalar operators, with action-angle and conservation verification"
)]
struct Cli {
    /// Configuration file (key = value text; see README for the schema).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSVs, manifests, and plot scripts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = library default). The GDFLOWS_THREADS
    /// environment variable overrides this flag.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed for randomized residual samples.
    #[arg(long, global = true, default_value_t = 12345)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the scattering matrix over the ray grid and write CSV + manifest.
    Scatter,
    /// Canonical action-angle tables along the rays.
    Canon,
    /// Finite-difference check of the variational gradient law.
    Gradcheck,
    /// Raw regularized bracket vs the distribution-kernel prediction.
    Brackets,
    /// Derive and print the flow equations for the given (n, k).
    DeriveFlow { n: usize, k: usize },
    /// Evolve the potential under a derived flow and verify the spectral
    /// evolution laws.
    Evolve,
    /// Conserved-functional table with a cutoff-sensitivity scan.
    Hamiltonians,
    /// Run the full verification battery; exit nonzero on any failure.
    Verify,
}

fn main() {
    let cli = Cli::parse();
    let threads = std::env::var("GDFLOWS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(cli.threads);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .expect("thread pool");
    }
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    };
    std::process::exit(code);
}

fn load_config(cli: &Cli) -> Result<(Config, PathBuf)> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("this command needs --config PATH"))?;
    let cfg = Config::load(path)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    cfg.validate(&base)?;
    Ok((cfg, base))
}

fn write(out_dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn solve_record(
    cfg: &Config,
    base: &Path,
) -> Result<(RootSystem<f64>, Potential<f64>, ScatteringRecord<f64>)> {
    let potential = cfg.potential(base)?;
    let system = RootSystem::new(potential.n())?;
    let spec = cfg.rays()?;
    let record = compute_record(
        &potential,
        &system,
        &spec,
        &[0, 1],
        Method::Auto,
        &SolverParams::default(),
    )?;
    Ok((system, potential, record))
}

fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::DeriveFlow { n, k } => {
            let flow = derive_flow(*n, *k, None).map_err(|e| anyhow::anyhow!("{e}"))?;
            print!("{}", flow.to_text());
            let _ = write(&cli.out, &format!("flow_n{n}_k{k}.txt"), &flow.to_text());
            Ok(0)
        }
        Command::Scatter => {
            let (system, potential, record) =
                load_config(cli).and_then(|(cfg, base)| solve_record(&cfg, &base))?;
            let _ = system;
            let d = record.worst_diagnostics();
            let manifest = ScatterManifest {
                tool_version: TOOL_VERSION.to_string(),
                n: potential.n(),
                potential_hash: hex64(potential.content_hash()),
                r_min: record.spec.r_min,
                r_max: record.spec.r_max,
                count: record.spec.count,
                rays: record.rays.clone(),
                solver_tol: SolverParams::<f64>::default().picard_tol,
                rk_rtol: SolverParams::<f64>::default().rk_rtol,
                worst_x_dependence: d.x_dependence,
                worst_leakage: d.leakage,
                worst_limit_diff: d.limit_diff,
                worst_det_err: d.det_err,
            };
            write(&cli.out, "scattering.csv", &record.to_csv())?;
            write(
                &cli.out,
                "scatter_manifest.json",
                &serde_json::to_string_pretty(&manifest)?,
            )?;
            let script = plot_script(
                "scattering entries along the rays",
                &[
                    ("a11_re", "scattering.csv", "radius", "re_a11"),
                    ("a11_im", "scattering.csv", "radius", "im_a11"),
                ],
            );
            write(&cli.out, "scatter_plot.txt", &script)?;
            Ok(0)
        }
        Command::Canon => {
            let (cfg, base) = load_config(cli)?;
            let (system, _potential, record) = solve_record(&cfg, &base)?;
            let params = CanonParams {
                deg_tol: cfg.f64_or("tol.degenerate", 1e-12)?,
                det_floor: cfg.f64_or("tol.det_floor", 1e-8)?,
            };
            let table = canonical_table(&system, &record, &params)?;
            write(&cli.out, "canon.csv", &table.to_csv())?;
            let script = plot_script(
                "actions along the rays",
                &[
                    ("re_p", "canon.csv", "radius", "re_p"),
                    ("im_p", "canon.csv", "radius", "im_p"),
                ],
            );
            write(&cli.out, "canon_plot.txt", &script)?;
            let potential = cfg.potential(&base)?;
            if potential.is_self_adjoint(1e-10).0 {
                let rep = gdflows_core::analysis::check_selfadjoint(&system, &record, &table)?;
                let sym = gdflows_core::report::SymmetryReport {
                    corner: rep.corner,
                    dets: rep.dets,
                    actions: rep.actions,
                    angles: rep.angles,
                    block_form: rep.block_form,
                    action_reality: rep.action_reality,
                    worst: rep.worst(),
                };
                write(
                    &cli.out,
                    "symmetry.json",
                    &serde_json::to_string_pretty(&sym)?,
                )?;
            }
            Ok(0)
        }
        Command::Gradcheck => {
            let (cfg, base) = load_config(cli)?;
            let report = verify::gradient_check(&cfg, &base, cli.seed)?;
            write(
                &cli.out,
                "gradcheck.json",
                &serde_json::to_string_pretty(&report)?,
            )?;
            println!(
                "gradient law: measured order {:.2}, final rel error {:.3e}",
                report.measured_order, report.final_rel_error
            );
            Ok(if report.passed { 0 } else { 1 })
        }
        Command::Brackets => {
            let (cfg, base) = load_config(cli)?;
            let potential = cfg.potential(&base)?;
            let system = RootSystem::new(potential.n())?;
            let engine = BracketEngine::new(&potential, &system);
            let center = cfg.f64_or("bracket.center", 0.9)?;
            let half_width = cfg.f64_or("bracket.half_width", 0.25)?;
            let nodes_count = cfg.usize_or("bracket.nodes", 33)?;
            let ray = cfg.usize_or("bracket.ray", 0)?;
            let nodes = engine.smear_nodes(ray, center, half_width, nodes_count)?;
            // Off-diagonal pair inside the tied pattern of the chosen ray.
            let mask = system.projection_mask(ray)?;
            let e0 = system.ordering_exponents(0)?;
            let er = system.ordering_exponents(ray)?;
            let to_global = |local: usize| -> usize {
                e0.iter()
                    .position(|k| *k == er[local])
                    .expect("shared roots")
            };
            let pair = mask
                .block_starts()
                .into_iter()
                .find(|(_, len)| *len == 2)
                .map(|(s, _)| (to_global(s), to_global(s + 1)))
                .ok_or_else(|| anyhow::anyhow!("no 2x2 block on ray {ray}"))?;
            let f = engine.entry_functional(&nodes, pair.0, pair.1);
            let g = engine.entry_functional(&nodes, pair.1, pair.0);
            let raw = engine.raw_bracket(&f, &g);
            let predicted = engine.predicted_bracket(&f, &g)?;
            let rel = (raw.value - predicted).norm() / predicted.norm().max(1e-300);
            let cmp = BracketComparison {
                description: format!(
                    "{{a_{}{}(f), a_{}{}(g)}} smeared on ray {ray}, support {center}±{half_width}",
                    pair.0 + 1,
                    pair.1 + 1,
                    pair.1 + 1,
                    pair.0 + 1
                ),
                raw_re: raw.value.re,
                raw_im: raw.value.im,
                predicted_re: predicted.re,
                predicted_im: predicted.im,
                rel_error: rel,
                trace: raw.trace.iter().map(|(n, v)| (*n, v.re, v.im)).collect(),
            };
            write(
                &cli.out,
                "brackets.json",
                &serde_json::to_string_pretty(&cmp)?,
            )?;
            println!("raw vs kernel: rel error {rel:.3e}");
            Ok(0)
        }
        Command::Evolve => {
            let (cfg, base) = load_config(cli)?;
            let potential = cfg.potential(&base)?;
            let n = potential.n();
            let system = RootSystem::new(n)?;
            let k = cfg.usize_or("flow.k", 1)?;
            let flow: FlowEquation = derive_flow(n, k, None).map_err(|e| anyhow::anyhow!("{e}"))?;
            let params = EvolveParams {
                t_final: cfg.f64_or("flow.t_final", 0.1)?,
                dt: cfg.f64_or("flow.dt", 1e-3)?,
                snapshots: cfg.usize_or("flow.snapshots", 6)?,
                blowup_threshold: cfg.f64_or("flow.blowup_threshold", 1e3)?,
                spectral_cutoff: if cfg.has("flow.spectral_cutoff") {
                    Some(cfg.f64("flow.spectral_cutoff")?)
                } else {
                    None
                },
            };
            let run = evolve(&potential, &flow, &params)?;
            let spec = cfg.rays()?;
            let records =
                records_along_run(&run, &system, &spec, &[0, 1], &SolverParams::default())?;
            let law = spectral_evolution_check(&system, &run, &records, 1e-8)?;
            let canon = CanonParams::default();
            let aa = action_angle_check(
                &system,
                &run,
                &records,
                &canon,
                cfg.f64_or("flow.fit_radius_max", 1.6)?,
                cfg.f64_or("flow.min_offdiag", 1e-4)?,
            )?;
            // Directions with k ≡ 0 mod n are structurally trivial (their
            // trace weights cancel), so conservation is measured off them.
            let ks: Vec<i64> = (1..=(2 * n as i64 + 1))
                .filter(|k| k % n as i64 != 0)
                .collect();
            let h0 = hamiltonians(&system, &records[0], &ks, 1e-14)?;
            let hl = hamiltonians(&system, records.last().unwrap(), &ks, 1e-14)?;
            let h_drift = h0
                .values
                .iter()
                .zip(hl.values.iter())
                .map(|(a, b)| (a - b).norm() / a.norm().max(1e-10))
                .fold(0.0f64, f64::max);
            let mut snapshot_files = Vec::new();
            for (i, snap) in run.snapshots.iter().enumerate() {
                let name = format!("snapshot_{i}.csv");
                write(&cli.out, &name, &snap.to_csv())?;
                snapshot_files.push(name);
            }
            let manifest = RunManifest {
                tool_version: TOOL_VERSION.to_string(),
                flow: flow.to_text(),
                n,
                k,
                t_final: params.t_final,
                dt: params.dt,
                time_anchor: format!("{}", gdflows_core::flow::time_anchor::<f64>()),
                snapshots: run.snapshots.len(),
                spectral_cutoff: run.cutoff,
                retained_growth: run.retained_growth,
                offdiag_phase_rel: law.offdiag_rel,
                diag_drift: law.diag_drift,
                action_drift_rel: aa.action_drift_rel,
                angle_slope_rel: aa.angle_slope_rel,
                hamiltonian_drift_rel: h_drift,
                snapshot_files,
            };
            write(
                &cli.out,
                "run_manifest.json",
                &serde_json::to_string_pretty(&manifest)?,
            )?;
            let script = plot_script(
                "evolved coefficients",
                &[
                    ("u0_re_t0", "snapshot_0.csv", "x", "re_u0"),
                    (
                        "u0_re_final",
                        &format!("snapshot_{}.csv", run.snapshots.len() - 1),
                        "x",
                        "re_u0",
                    ),
                ],
            );
            write(&cli.out, "evolve_plot.txt", &script)?;
            println!(
                "phase law rel {:.3e}; diagonal drift {:.3e}; action drift {:.3e}; angle slope rel {:.3e}; H drift {:.3e}",
                law.offdiag_rel, law.diag_drift, aa.action_drift_rel, aa.angle_slope_rel, h_drift
            );
            Ok(0)
        }
        Command::Hamiltonians => {
            let (cfg, base) = load_config(cli)?;
            let (system, _potential, record) = solve_record(&cfg, &base)?;
            let ks: Vec<i64> = (0..=cfg.usize_or("hamiltonians.k_max", 4)? as i64).collect();
            let table = hamiltonians(&system, &record, &ks, 1e-14)?;
            // Cutoff-sensitivity scan: recompute with the inner cutoff moved.
            let mut spec2 = record.spec.clone();
            spec2.r_min *= 1.5;
            let potential = cfg.potential(&base)?;
            let record2 = compute_record(
                &potential,
                &system,
                &spec2,
                &[0, 1],
                Method::Auto,
                &SolverParams::default(),
            )?;
            let table2 = hamiltonians(&system, &record2, &ks, 1e-14)?;
            #[derive(serde::Serialize)]
            struct HRow {
                k: i64,
                re: f64,
                im: f64,
                cutoff_shift_abs: f64,
            }
            #[derive(serde::Serialize)]
            struct HReport {
                tool_version: String,
                potential_hash: String,
                tail_bound: f64,
                rows: Vec<HRow>,
            }
            let rows = table
                .ks
                .iter()
                .zip(table.values.iter())
                .zip(table2.values.iter())
                .map(|((k, v), v2)| HRow {
                    k: *k,
                    re: v.re,
                    im: v.im,
                    cutoff_shift_abs: (v - v2).norm(),
                })
                .collect();
            let rep = HReport {
                tool_version: TOOL_VERSION.to_string(),
                potential_hash: hex64(potential.content_hash()),
                tail_bound: table.tail_bound,
                rows,
            };
            write(
                &cli.out,
                "hamiltonians.json",
                &serde_json::to_string_pretty(&rep)?,
            )?;
            Ok(0)
        }
        Command::Verify => {
            let (cfg, base) = load_config(cli)?;
            let manifest = verify::run_battery(&cfg, &base, cli.seed)?;
            for check in &manifest.checks {
                println!("{}", check.line());
            }
            write(&cli.out, "verify_manifest.json", &manifest.to_json())?;
            println!(
                "{} checks, {} failures",
                manifest.checks.len(),
                manifest.failures
            );
            Ok(if manifest.all_passed() { 0 } else { 1 })
        }
    }
}
