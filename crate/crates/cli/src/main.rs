//! Command-line front end: decomposition, gauge/modulus tables, steering
//! costs, curved-family profiles, value solves, oscillation and Holder
//! measurements, and orchestrated experiment runs.
//!
//! Exit codes: 0 on success, 2 on configuration or input errors, 3 when a
//! scenario check fails.

mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use hjlab::control::{min_energy_cost, ControlProblemSpec};
use hjlab::curved::{build_curved_family, integrability_proxy, jacobian_profile};
use hjlab::error::Error;
use hjlab::experiment::{preset_pair, run_experiment, ExperimentConfig};
use hjlab::io;
use hjlab::kalman::build_frame;
use hjlab::regularity::{holder_fit, oscillation_iteration};
use hjlab::scaling::{anisotropic_modulus, gauge_radius, ScaleParams, SpaceTimePoint};
use hjlab::solver::{
    solve_value, two_level_data, ControlSampling, GridSpec, HJProblem, Source,
};

#[derive(Parser)]
#[command(name = "hjlab", version, about = "Anisotropic regularity laboratory for degenerate Hamilton-Jacobi equations")]
struct Cli {
    /// Worker threads for the solver loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed override for randomized scenarios.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FrameArgs {
    /// Named preset: kolmogorov2 or chain-N.
    #[arg(long, alias = "frame", conflicts_with_all = ["matrix_file", "p0_file"])]
    preset: Option<String>,
    /// Drift matrix CSV (one row per line).
    #[arg(long, requires = "p0_file")]
    matrix_file: Option<PathBuf>,
    /// Input projection CSV.
    #[arg(long, requires = "matrix_file")]
    p0_file: Option<PathBuf>,
}

impl FrameArgs {
    fn resolve(&self) -> Result<(DMatrix<f64>, DMatrix<f64>), Error> {
        match (&self.preset, &self.matrix_file, &self.p0_file) {
            (Some(name), _, _) => preset_pair(name),
            (None, Some(mf), Some(pf)) => Ok((io::read_matrix_csv(mf)?, io::read_matrix_csv(pf)?)),
            _ => Err(Error::InvalidInput(
                "provide --preset or both --matrix-file and --p0-file".into(),
            )),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute the Kalman decomposition and emit the frame as JSON.
    Decompose {
        #[command(flatten)]
        frame: FrameArgs,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gauge radii and anisotropic moduli of space-time points.
    Gauge {
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long, default_value_t = 0.0)]
        h: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        alpha: f64,
        /// CSV of points, one "t,x1,...,xN" per line.
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Anisotropic moduli of space-time points (same table as gauge).
    Modulus {
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long, default_value_t = 0.0)]
        h: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimum-energy steering cost between two states.
    Cost {
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long)]
        qconj: f64,
        #[arg(long, default_value_t = 0.0)]
        h: f64,
        /// Horizon length; the problem runs on [0, t].
        #[arg(long)]
        t: f64,
        /// Start state, comma separated.
        #[arg(long)]
        from: String,
        /// End state, comma separated.
        #[arg(long)]
        to: String,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Write the optimal trajectory as CSV (tau, eta..., beta...).
        #[arg(long)]
        trajectory_out: Option<PathBuf>,
    },
    /// Curved-family Jacobian profile and integrability proxy.
    Curved {
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long, default_value_t = 0.0)]
        h: f64,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Fractional exponents, comma separated (kappa+1 values).
        #[arg(long)]
        alphas: String,
        /// Integrability exponent for the proxy.
        #[arg(long, default_value_t = 6.0)]
        p: f64,
        /// Output base path: writes <out>.csv and <out>.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Semi-Lagrangian value solve on a cylinder-covering grid.
    Solve {
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long, default_value_t = 0.0)]
        h: f64,
        #[arg(long)]
        q: f64,
        /// Coercivity constant (lambda for upper/plain, Lambda for lower).
        #[arg(long)]
        lambda: f64,
        /// Barrier kind: upper, lower or plain.
        #[arg(long, default_value = "upper")]
        kind: String,
        /// Grid as "n1,...,nN,nt".
        #[arg(long)]
        grid: String,
        #[arg(long)]
        bmax: Option<f64>,
        /// Inner-set radius for the two-level barrier data.
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Source magnitude: eps*f for upper, the -eps drift for lower.
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        /// Sampled source values: CSV lines "t,x1,...,xN,value".
        #[arg(long)]
        f_file: Option<PathBuf>,
        /// Integrability exponent stored with the sampled source.
        #[arg(long, default_value_t = 4.0)]
        p: f64,
        /// Output base: raw f64 field at <out> plus <out>.json header.
        #[arg(long)]
        out: PathBuf,
    },
    /// Oscillation decay over nested cylinders of a stored field.
    Oscillate {
        #[command(flatten)]
        frame: FrameArgs,
        /// Stored field (from `solve --out`).
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        h: f64,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 0.25)]
        alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, default_value_t = 6)]
        levels: usize,
        /// Output base path: writes <out>.csv and <out>.json.
        #[arg(long)]
        out: PathBuf,
        /// Also write a log-log SVG plot at <out>.svg.
        #[arg(long, default_value_t = false)]
        svg: bool,
    },
    /// Per-stratum Holder exponent fit of a stored field.
    Holderfit {
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        q: f64,
        /// Base point "t,x1,...,xN" in adapted coordinates.
        #[arg(long)]
        base: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = false)]
        svg: bool,
    },
    /// Run the scenarios of a JSON experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for manifest, reports and summary.
        #[arg(long, default_value = "hjlab-out")]
        out: PathBuf,
    },
}

fn parse_vector(text: &str) -> Result<DVector<f64>, Error> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| Error::InvalidInput(format!("bad vector '{text}': {e}")))?;
    Ok(DVector::from_vec(vals))
}

fn parse_usizes(text: &str) -> Result<Vec<usize>, Error> {
    let vals: Result<Vec<usize>, _> = text.split(',').map(|t| t.trim().parse::<usize>()).collect();
    vals.map_err(|e| Error::InvalidInput(format!("bad list '{text}': {e}")))
}

fn read_points(path: &Path, dim: usize) -> Result<Vec<(f64, DVector<f64>)>, Error> {
    let m = io::read_matrix_csv(path)?;
    if m.ncols() != dim + 1 {
        return Err(Error::InvalidInput(format!(
            "points need {} columns (t, x...), got {}",
            dim + 1,
            m.ncols()
        )));
    }
    Ok((0..m.nrows())
        .map(|i| {
            let t = m[(i, 0)];
            let x = DVector::from_fn(dim, |j, _| m[(i, j + 1)]);
            (t, x)
        })
        .collect())
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn gauge_modulus_table(
    frame_args: &FrameArgs,
    h: f64,
    q: f64,
    alpha: f64,
    points: &Path,
    out: &Option<PathBuf>,
) -> Result<(), Error> {
    let (a, p0) = frame_args.resolve()?;
    let frame = build_frame(&a, &p0)?;
    let params = ScaleParams::new(q, alpha, 1.0, h)?;
    let pts = read_points(points, frame.dim)?;
    let mut rows = Vec::new();
    for (t, x) in pts {
        let p = SpaceTimePoint::new(t, x.clone());
        let rho = gauge_radius(&frame, &a, h, params.gamma, &p)?;
        let omega = anisotropic_modulus(&frame, &params, &p)?;
        let mut row = vec![t];
        row.extend(x.iter().cloned());
        row.push(rho);
        row.push(omega);
        rows.push(row);
    }
    let mut header = String::from("t");
    for i in 0..frame.dim {
        header.push_str(&format!(",x{i}"));
    }
    header.push_str(",rho,omega");
    let mut text = String::new();
    text.push_str(&header);
    text.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    emit(out, &text)
}

fn run() -> Result<bool, Error> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Decompose { frame, out } => {
            let (a, p0) = frame.resolve()?;
            let built = build_frame(&a, &p0)?;
            let doc = io::frame_to_document(&built);
            emit(&out, &serde_json::to_string_pretty(&doc)?)?;
            Ok(true)
        }
        Command::Gauge {
            frame,
            h,
            q,
            alpha,
            points,
            out,
        }
        | Command::Modulus {
            frame,
            h,
            q,
            alpha,
            points,
            out,
        } => {
            gauge_modulus_table(&frame, h, q, alpha, &points, &out)?;
            Ok(true)
        }
        Command::Cost {
            frame,
            qconj,
            h,
            t,
            from,
            to,
            tol,
            trajectory_out,
        } => {
            let (a, p0) = frame.resolve()?;
            let built = build_frame(&a, &p0)?;
            let start = parse_vector(&from)?;
            let end = parse_vector(&to)?;
            let spec = ControlProblemSpec::new(&built, &a, h, qconj, (0.0, t), start, end)?;
            let (cost, traj) = min_energy_cost(&spec, tol, 256)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "J": cost.j,
                    "residual": cost.residual,
                    "iterations": cost.iterations,
                    "duality_gap": cost.duality_gap,
                }))?
            );
            if let Some(path) = trajectory_out {
                let mut rows = Vec::new();
                for k in 0..traj.controls.len() {
                    let mut row = vec![traj.times[k]];
                    row.extend(traj.states[k].iter().cloned());
                    row.extend(traj.controls[k].iter().cloned());
                    rows.push(row);
                }
                let mut header = String::from("tau");
                for i in 0..built.dim {
                    header.push_str(&format!(",eta{i}"));
                }
                for i in 0..built.dim {
                    header.push_str(&format!(",beta{i}"));
                }
                io::write_csv(&path, &header, &rows)?;
            }
            Ok(true)
        }
        Command::Curved {
            frame,
            h,
            t,
            alphas,
            p,
            out,
        } => {
            let (a, p0) = frame.resolve()?;
            let built = build_frame(&a, &p0)?;
            let alpha_vals: Result<Vec<f64>, _> =
                alphas.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let alpha_vals =
                alpha_vals.map_err(|e| Error::InvalidInput(format!("bad alphas: {e}")))?;
            let family = build_curved_family(&built, &a, h, t, &alpha_vals)?;
            let s_list: Vec<f64> = (0..=10).map(|k| t / 2f64.powi(k)).collect();
            let profile = jacobian_profile(&family, &s_list)?;
            let proxy = integrability_proxy(&family, p, 64, 0.01)?;
            let rows: Vec<Vec<f64>> = profile
                .rows
                .iter()
                .map(|r| vec![r.s, r.det_inverse_jacobian, r.gradient_ratio])
                .collect();
            io::write_csv(
                &out.with_extension("csv"),
                "s,det_inverse_jacobian,gradient_ratio",
                &rows,
            )?;
            std::fs::write(
                out.with_extension("json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "alphas": alpha_vals,
                    "perturbation_norm": family.perturbation_norm,
                    "fitted_exponent": profile.fitted_exponent,
                    "exponent_bound": profile.exponent_bound,
                    "monotone": profile.monotone,
                    "integrability": proxy,
                }))?,
            )?;
            Ok(true)
        }
        Command::Solve {
            frame,
            h,
            q,
            lambda,
            kind,
            grid,
            bmax,
            delta,
            epsilon,
            f_file,
            p,
            out,
        } => {
            let (a, p0) = frame.resolve()?;
            let built = build_frame(&a, &p0)?;
            let dims = parse_usizes(&grid)?;
            if dims.len() != built.dim + 1 {
                return Err(Error::GridSpec(format!(
                    "--grid needs {} entries (cells per axis, then time steps)",
                    built.dim + 1
                )));
            }
            let (cells, nt) = (dims[..built.dim].to_vec(), dims[built.dim]);
            let grid_spec = GridSpec::covering_cylinder(&built, &a, h, 1.0, &cells, nt, 2)?;
            let source = match (&f_file, kind.as_str()) {
                (Some(path), _) => {
                    let m = io::read_matrix_csv(path)?;
                    if m.ncols() != built.dim + 2 {
                        return Err(Error::InvalidInput(
                            "f-file rows must be t,x...,value".into(),
                        ));
                    }
                    let samples: Vec<(f64, DVector<f64>, f64)> = (0..m.nrows())
                        .map(|i| {
                            (
                                m[(i, 0)],
                                DVector::from_fn(built.dim, |j, _| m[(i, j + 1)]),
                                m[(i, built.dim + 1)],
                            )
                        })
                        .collect();
                    let field = hjlab::solver::GridFunction::sample(&grid_spec, |t, x| {
                        // nearest-sample lookup
                        let mut best = 0.0;
                        let mut best_d = f64::INFINITY;
                        for (ts, xs, v) in &samples {
                            let d = (t - ts).abs() + (x - xs).norm();
                            if d < best_d {
                                best_d = d;
                                best = *v;
                            }
                        }
                        best * epsilon
                    });
                    let lp = {
                        let mut acc = 0.0;
                        let cellvol: f64 = (0..built.dim)
                            .map(|ax| grid_spec.step(ax))
                            .product::<f64>()
                            * grid_spec.dt();
                        for v in &field.values {
                            acc += v.abs().powf(p) * cellvol;
                        }
                        acc.powf(1.0 / p)
                    };
                    Source::Sampled {
                        field,
                        p,
                        lp_norm: lp,
                    }
                }
                (None, "lower") => Source::Constant(-epsilon),
                (None, _) if epsilon > 0.0 => Source::Constant(epsilon),
                (None, _) => Source::Zero,
            };
            let gamma = 1.0 / q;
            let problem = match kind.as_str() {
                "upper" | "plain" => {
                    let data = two_level_data(&built, &a, h, delta, gamma, 0.0, 1.0);
                    HJProblem::new(&built, &a, h, q, lambda, source, data)?
                }
                "lower" => HJProblem::new(&built, &a, h, q, lambda, source, |_: &DVector<f64>| 0.0)?,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown kind '{other}': use upper, lower or plain"
                    )))
                }
            };
            let sampling = ControlSampling {
                b_max: bmax,
                ..Default::default()
            };
            let solved = solve_value(&problem, &grid_spec, &sampling)?;
            io::save_field(&solved.field, &out)?;
            println!("{}", serde_json::to_string_pretty(&solved.report)?);
            Ok(true)
        }
        Command::Oscillate {
            frame,
            input,
            h,
            q,
            alpha,
            delta,
            levels,
            out,
            svg,
        } => {
            let (a, p0) = frame.resolve()?;
            let built = build_frame(&a, &p0)?;
            let field = io::load_field(&input)?;
            let params = ScaleParams::new(q, alpha, 1.0, h)?;
            let report = oscillation_iteration(&field, &built, &a, h, &params, delta, levels)?;
            let rows: Vec<Vec<f64>> = report
                .levels
                .iter()
                .map(|l| vec![l.level as f64, l.radius, l.oscillation, l.samples as f64])
                .collect();
            io::write_csv(&out.with_extension("csv"), "level,radius,oscillation,samples", &rows)?;
            std::fs::write(
                out.with_extension("json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            if svg {
                let pts: Vec<(f64, f64)> = report
                    .levels
                    .iter()
                    .filter(|l| l.oscillation > 0.0)
                    .map(|l| (l.radius.log10(), l.oscillation.log10()))
                    .collect();
                svg::scatter_plot(
                    &out.with_extension("svg"),
                    "log10 radius",
                    "log10 oscillation",
                    &[("oscillation", &pts)],
                )?;
            }
            Ok(true)
        }
        Command::Holderfit {
            frame,
            input,
            q,
            base,
            out,
            svg,
        } => {
            let (a, p0) = frame.resolve()?;
            let built = build_frame(&a, &p0)?;
            let field = io::load_field(&input)?;
            let base_vals = parse_vector(&base)?;
            if base_vals.len() != built.dim + 1 {
                return Err(Error::InvalidInput(format!(
                    "--base needs {} entries (t, x...)",
                    built.dim + 1
                )));
            }
            let t0 = base_vals[0];
            let x0 = DVector::from_fn(built.dim, |i, _| base_vals[i + 1]);
            let params = ScaleParams::exponents(q, 0.5)?;
            let fit = holder_fit(&field, &built, &params, t0, &x0)?;
            let rows: Vec<Vec<f64>> = fit
                .strata
                .iter()
                .map(|s| {
                    vec![
                        s.stratum as f64,
                        s.beta,
                        s.stderr,
                        s.samples as f64,
                        s.range_decades,
                    ]
                })
                .collect();
            io::write_csv(
                &out.with_extension("csv"),
                "stratum,beta,stderr,samples,range_decades",
                &rows,
            )?;
            std::fs::write(out.with_extension("json"), serde_json::to_string_pretty(&fit)?)?;
            if svg {
                let series: Vec<(String, Vec<(f64, f64)>)> = fit
                    .strata
                    .iter()
                    .map(|s| (format!("stratum {}", s.stratum), s.pairs.clone()))
                    .collect();
                let refs: Vec<(&str, &[(f64, f64)])> = series
                    .iter()
                    .map(|(n, p)| (n.as_str(), p.as_slice()))
                    .collect();
                svg::scatter_plot(
                    &out.with_extension("svg"),
                    "ln displacement",
                    "ln increment",
                    &refs,
                )?;
            }
            Ok(true)
        }
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let summary = run_experiment(&cfg, &out)?;
            for check in &summary.checks {
                println!(
                    "{} {}: {}",
                    if check.pass { "PASS" } else { "FAIL" },
                    check.name,
                    check.details
                );
            }
            Ok(summary.all_pass)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_and_list_parsing() {
        let v = parse_vector("0.5, -1.25, 3").unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[1], -1.25);
        assert!(parse_vector("1.0,oops").is_err());
        assert_eq!(parse_usizes("64,128,256").unwrap(), vec![64, 128, 256]);
        assert!(parse_usizes("64,-1").is_err());
    }

    #[test]
    fn cli_parses_representative_commands() {
        use clap::Parser;
        Cli::try_parse_from([
            "hjlab", "cost", "--preset", "kolmogorov2", "--qconj", "2", "--t", "1",
            "--from", "0,0", "--to", "0,1",
        ])
        .unwrap();
        Cli::try_parse_from([
            "hjlab", "solve", "--frame", "kolmogorov2", "--q", "2", "--lambda", "1",
            "--grid", "64,128,256", "--out", "/tmp/u.bin",
        ])
        .unwrap();
        assert!(Cli::try_parse_from(["hjlab", "cost", "--matrix-file", "a.csv"]).is_err());
    }
}
