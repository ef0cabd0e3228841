//! Experiment drivers: each takes a validated [`Config`], runs the solver,
//! and writes its results as plain-text files into the output directory.
//!
//! All output files are deterministic for a fixed config and seed except for
//! the wall-clock columns of the iteration logs.

use std::fs;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ttopt_core::elliptic::{
    build_elliptic_1d, build_elliptic_2d, control_statistics, misfit, write_control_stats_csv,
    write_field_matrix, EllipticConfig, EllipticProblem,
};
use ttopt_core::lqsolver::{newton_solve, NewtonOptions, NewtonState};
use ttopt_core::mc::{compare_tt_mc, write_comparison_csv, CompareOptions};
use ttopt_core::penalty::SmoothedPenalty;
use ttopt_core::topopt::{
    compliance_stats_full_grid, run_topopt, thresholded_std, write_density_matrix, TopOptOptions,
    TopOptProblem,
};
use ttopt_core::{GaussGrid, Result};

use crate::config::Config;

/// Run the experiment selected by the config, writing results under
/// `out_dir`. Returns whether the underlying iteration converged.
pub fn run_experiment(cfg: &Config, out_dir: &Path) -> Result<bool> {
    fs::create_dir_all(out_dir)?;
    match cfg.kind.as_str() {
        "elliptic-1d" => run_elliptic(cfg, out_dir, 1),
        "elliptic-2d" => run_elliptic(cfg, out_dir, 2),
        "beta-sweep" => run_beta_sweep(cfg, out_dir),
        "eps-sweep" => run_eps_sweep(cfg, out_dir),
        "mc-compare" => run_mc_compare(cfg, out_dir),
        "topopt" => run_topopt_experiment(cfg, out_dir),
        other => unreachable!("config validation admitted kind `{other}`"),
    }
}

fn create(out_dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out_dir.join(name))?))
}

fn elliptic_config(cfg: &Config, dimension: usize) -> Result<EllipticConfig> {
    let base = if dimension == 1 {
        EllipticConfig::default_1d()
    } else {
        EllipticConfig::default_2d()
    };
    // mc-compare and eps-sweep carry their own tolerance keys instead of a
    // global `eps`/`tol`; fall back to the defaults for the unused fields.
    let opt = |key: &str, def: f64| -> Result<f64> {
        if cfg.has(key) {
            cfg.f64(key)
        } else {
            Ok(def)
        }
    };
    Ok(EllipticConfig {
        h: cfg.f64("h")?,
        n: cfg.usize("n")?,
        alpha: cfg.f64("alpha")?,
        eps: opt("eps", base.eps)?,
        delta_tt: cfg.f64("delta_tt")?,
        tol: opt("tol", base.tol)?,
        ..base
    })
}

fn newton_options(cfg: &Config, ec: &EllipticConfig) -> Result<NewtonOptions> {
    Ok(NewtonOptions {
        tol: ec.tol,
        max_iter: cfg.usize("max_iter")?,
        delta_tt: ec.delta_tt,
        seed: cfg.u64("seed")?,
        ..Default::default()
    })
}

/// Solve one elliptic control problem and report misfit, sparsity and the
/// mean-control statistics.
struct EllipticRun {
    state: NewtonState,
    misfit: f64,
    sparsity: f64,
    mean_u: Vec<f64>,
    std_u: Vec<f64>,
}

fn solve_elliptic(
    prob: &EllipticProblem,
    opts: &NewtonOptions,
    threshold: f64,
) -> Result<EllipticRun> {
    let grid = prob.grid();
    let pen = SmoothedPenalty::new(
        prob.cfg.beta,
        prob.cfg.eps,
        prob.lq.what.clone(),
        vec![1.0],
    )?;
    let state = newton_solve(&prob.lq, &pen, &grid, opts)?;
    let nhat = prob.lq.nhat;
    let m = misfit(&state.y(nhat), &prob.y_d_nodes, &prob.lq.m_y, &grid)?;
    let (mean_u, std_u) = control_statistics(&state.u(nhat), &grid)?;
    let sparsity = prob.sparsity_of_mean(&mean_u, threshold);
    Ok(EllipticRun {
        state,
        misfit: m,
        sparsity,
        mean_u,
        std_u,
    })
}

fn write_elliptic_summary_header(w: &mut impl Write) -> Result<()> {
    writeln!(
        w,
        "beta,iterations,converged,max_rank,pde_solves,misfit,sparsity"
    )?;
    Ok(())
}

fn write_elliptic_summary_row(w: &mut impl Write, beta: f64, run: &EllipticRun) -> Result<()> {
    writeln!(
        w,
        "{:.15e},{},{},{},{},{:.15e},{:.15e}",
        beta,
        run.state.iterations,
        run.state.converged,
        run.state.tt.max_rank(),
        run.state.pde_solves,
        run.misfit,
        run.sparsity
    )?;
    Ok(())
}

fn run_elliptic(cfg: &Config, out_dir: &Path, dimension: usize) -> Result<bool> {
    let mut ec = elliptic_config(cfg, dimension)?;
    ec.beta = cfg.f64("beta")?;
    let prob = if dimension == 1 {
        build_elliptic_1d(&ec)?
    } else {
        build_elliptic_2d(&ec)?
    };
    let opts = newton_options(cfg, &ec)?;
    let run = solve_elliptic(&prob, &opts, cfg.f64("threshold")?)?;

    let mut w = create(out_dir, "summary.csv")?;
    write_elliptic_summary_header(&mut w)?;
    write_elliptic_summary_row(&mut w, ec.beta, &run)?;
    run.state.write_log_csv(&mut create(out_dir, "history.csv")?)?;
    if dimension == 1 {
        let xs: Vec<f64> = prob.coords.iter().map(|c| c[0]).collect();
        write_control_stats_csv(
            &xs,
            &run.mean_u,
            &run.std_u,
            &mut create(out_dir, "control_stats.csv")?,
        )?;
    } else {
        let ni = (prob.lq.nhat as f64).sqrt().round() as usize;
        write_field_matrix(&run.mean_u, ni, &mut create(out_dir, "control_mean.txt")?)?;
        write_field_matrix(&run.std_u, ni, &mut create(out_dir, "control_std.txt")?)?;
    }
    Ok(run.state.converged)
}

fn run_beta_sweep(cfg: &Config, out_dir: &Path) -> Result<bool> {
    let threshold = cfg.f64("threshold")?;
    let mut w = create(out_dir, "summary.csv")?;
    write_elliptic_summary_header(&mut w)?;
    let mut all_converged = true;
    for beta in cfg.list_f64("betas")? {
        let mut ec = elliptic_config(cfg, 1)?;
        ec.beta = beta;
        let prob = build_elliptic_1d(&ec)?;
        let opts = newton_options(cfg, &ec)?;
        let run = solve_elliptic(&prob, &opts, threshold)?;
        write_elliptic_summary_row(&mut w, beta, &run)?;
        all_converged &= run.state.converged;
    }
    Ok(all_converged)
}

/// Weighted discrete L^2 distance between two nodal fields.
fn weighted_l2(what: &[f64], a: &[f64], b: &[f64]) -> f64 {
    what.iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn run_eps_sweep(cfg: &Config, out_dir: &Path) -> Result<bool> {
    let mut ec = elliptic_config(cfg, 1)?;
    ec.beta = cfg.f64("beta")?;
    let solve_at = |eps: f64| -> Result<(NewtonState, Vec<f64>)> {
        let ec = EllipticConfig { eps, ..ec };
        let prob = build_elliptic_1d(&ec)?;
        let opts = newton_options(cfg, &ec)?;
        let grid = prob.grid();
        let pen =
            SmoothedPenalty::new(ec.beta, ec.eps, prob.lq.what.clone(), vec![1.0])?;
        let state = newton_solve(&prob.lq, &pen, &grid, &opts)?;
        let mean = state.u(prob.lq.nhat).expectation(&grid)?;
        Ok((state, mean))
    };
    let (ref_state, ref_mean) = solve_at(cfg.f64("eps_ref")?)?;
    let prob = build_elliptic_1d(&ec)?;
    let mut w = create(out_dir, "summary.csv")?;
    writeln!(w, "eps,iterations,converged,max_rank,error_vs_ref")?;
    let mut all_converged = ref_state.converged;
    for eps in cfg.list_f64("eps_list")? {
        let (state, mean) = solve_at(eps)?;
        writeln!(
            w,
            "{:.15e},{},{},{},{:.15e}",
            eps,
            state.iterations,
            state.converged,
            state.tt.max_rank(),
            weighted_l2(&prob.lq.what, &mean, &ref_mean)
        )?;
        all_converged &= state.converged;
    }
    Ok(all_converged)
}

fn run_mc_compare(cfg: &Config, out_dir: &Path) -> Result<bool> {
    let mut ec = elliptic_config(cfg, 1)?;
    ec.beta = cfg.f64("beta")?;
    let prob = build_elliptic_1d(&ec)?;
    let grid = prob.grid();
    let opts = CompareOptions {
        beta: ec.beta,
        eps: ec.eps,
        delta_tt: ec.delta_tt,
        ref_tol: cfg.f64("ref_tol")?,
        tt_tols: cfg.list_f64("tt_tols")?,
        mc_tols: cfg.list_f64("mc_tols")?,
        sample_sizes: cfg.list_usize("sample_sizes")?,
        seed: cfg.u64("seed")?,
        max_iter: cfg.usize("max_iter")?,
    };
    let rows = compare_tt_mc(&prob.lq, &grid, &opts)?;
    write_comparison_csv(&rows, &mut create(out_dir, "comparison.csv")?)?;
    Ok(true)
}

fn run_topopt_experiment(cfg: &Config, out_dir: &Path) -> Result<bool> {
    let prob = TopOptProblem::new(cfg.usize("ny")?, cfg.f64("vbar")?, cfg.f64("eta")?)?;
    let opts = TopOptOptions {
        iterations: cfg.usize("iterations")?,
        tau: cfg.f64("tau")?,
        kappa: cfg.f64("kappa")?,
        kappa_step: cfg.f64("kappa_step")?,
        beta: cfg.f64("beta")?,
        eps: cfg.f64("eps")?,
        delta_tt: cfg.f64("delta_tt")?,
        n: cfg.usize("n")?,
        seed: cfg.u64("seed")?,
        stats_samples: cfg.usize("stats_samples")?,
    };
    let (tt, history) = run_topopt(&prob, &opts)?;
    history.write_csv(&mut create(out_dir, "history.csv")?)?;

    let grid = GaussGrid::uniform(prob.dim(), opts.n)?;
    let mean_density = tt.expectation(&grid)?;
    write_density_matrix(
        &mean_density,
        prob.nx,
        prob.ny,
        &mut create(out_dir, "density_mean.txt")?,
    )?;
    let (std_field, std_avg) = thresholded_std(
        &tt,
        &grid,
        cfg.usize("std_samples")?,
        opts.seed ^ 0x9e37,
    )?;
    write_density_matrix(
        &std_field,
        prob.nx,
        prob.ny,
        &mut create(out_dir, "threshold_std.txt")?,
    )?;
    let (mean_c, std_c) = compliance_stats_full_grid(&prob, &tt, &grid)?;

    let mut w = create(out_dir, "summary.csv")?;
    writeln!(
        w,
        "beta,kappa,iterations,mean_rank,mean_compliance,std_compliance,thresholded_std_avg"
    )?;
    writeln!(
        w,
        "{:.15e},{:.15e},{},{:.15e},{:.15e},{:.15e},{:.15e}",
        opts.beta, opts.kappa, opts.iterations, history.mean_rank, mean_c, std_c, std_avg
    )?;
    Ok(true)
}
