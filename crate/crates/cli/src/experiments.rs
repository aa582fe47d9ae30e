//! Experiment runners: dispatch a validated config to the library,
//! write CSV/JSON artifacts, and assemble the report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use thiserror::Error;

use zerocross::limits::{
    self, generator_check, generator_check_wl, ks_two_sample, GeneratorProbe, ScalingCandidate,
    Weight,
};
use zerocross::pde::{self, DensityField, GridSpec};
use zerocross::process::{self, Status};
use zerocross::rng::{RngStream, PRNG_ALGORITHM};

use crate::config::{ExperimentConfig, ExperimentKind, InitialData};
use crate::report::{
    config_hash, run_dir, write_report, Csv, ExperimentReport, Provenance, SCHEME_VERSION,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("numerical guard: {0}")]
    Numerical(String),
}

/// Exit code classification: validation failures are handled in main
/// (code 2); numerical guard aborts map to code 3.
pub fn run_experiment(
    kind: ExperimentKind,
    config: &ExperimentConfig,
    out_root: &Path,
) -> Result<(PathBuf, ExperimentReport), RunError> {
    let start = Instant::now();
    let dir = run_dir(out_root, kind.name(), config)?;
    let mut artifacts = Vec::new();
    let summary = match kind {
        ExperimentKind::Sample => run_sample(config, &dir, &mut artifacts)?,
        ExperimentKind::Discrete => run_discrete(config, &dir, &mut artifacts)?,
        ExperimentKind::Survival => run_survival(config, &dir, &mut artifacts)?,
        ExperimentKind::LimitLaw => run_limit_law(config, &dir, &mut artifacts)?,
        ExperimentKind::Generator => run_generator(config, &dir, &mut artifacts)?,
        ExperimentKind::Pde => run_pde(config, &dir, &mut artifacts)?,
        ExperimentKind::BlowupScan => run_blowup_scan(config, &dir, &mut artifacts)?,
    };
    let report = ExperimentReport {
        kind: kind.name(),
        run_id: config_hash(kind.name(), config),
        config: config.clone(),
        summary,
        artifacts,
        provenance: Provenance {
            prng: PRNG_ALGORITHM,
            scheme_version: SCHEME_VERSION,
            build_id: format!("{}-{}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            wall_clock_secs: start.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        },
    };
    write_report(&dir, &report)?;
    Ok((dir, report))
}

fn stream_for(config: &ExperimentConfig, salt: u64) -> RngStream {
    RngStream::new(config.seed, salt)
}

fn ensemble(
    config: &ExperimentConfig,
    t: f64,
    salt: u64,
) -> Result<Vec<process::ProcessPoint>, RunError> {
    let drive = config.drive();
    let stream = stream_for(config, salt);
    if config.x0 == 0.0 {
        process::exact_ensemble(&drive, config.a0, t, config.m, stream)
            .map_err(|e| RunError::Numerical(e.to_string()))
    } else {
        use rayon::prelude::*;
        let flow = zerocross::flow::PowerFlow::new(drive, config.a0)
            .map_err(|e| RunError::Numerical(e.to_string()))?;
        Ok((0..config.m as u64)
            .into_par_iter()
            .map(|k| {
                let mut rng = stream.substream(k).rng();
                process::sample_from_general_start_flow(&flow, config.x0, t, &mut rng)
                    .expect("validated")
            })
            .collect())
    }
}

struct PointStats {
    trapped: f64,
    exploded: f64,
    mean_x: f64,
    var_x: f64,
    median_abs_x: f64,
    mean_a_alive: f64,
}

fn point_stats(points: &[process::ProcessPoint]) -> PointStats {
    let m = points.len() as f64;
    let trapped = points.iter().filter(|p| p.status == Status::Trapped).count() as f64 / m;
    let exploded = points.iter().filter(|p| p.status == Status::Exploded).count() as f64 / m;
    let mean_x = points.iter().map(|p| p.x).sum::<f64>() / m;
    let var_x = points.iter().map(|p| (p.x - mean_x).powi(2)).sum::<f64>() / m;
    let mut abs_x: Vec<f64> = points.iter().map(|p| p.x.abs()).collect();
    abs_x.sort_unstable_by(f64::total_cmp);
    let median_abs_x = abs_x[abs_x.len() / 2];
    let alive: Vec<&process::ProcessPoint> =
        points.iter().filter(|p| p.status == Status::Alive).collect();
    let mean_a_alive = if alive.is_empty() {
        f64::NAN
    } else {
        alive.iter().map(|p| p.a).sum::<f64>() / alive.len() as f64
    };
    PointStats {
        trapped,
        exploded,
        mean_x,
        var_x,
        median_abs_x,
        mean_a_alive,
    }
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Alive => "alive",
        Status::Trapped => "trapped",
        Status::Exploded => "exploded",
    }
}

fn run_sample(
    config: &ExperimentConfig,
    dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<Value, RunError> {
    let mut summary_csv = Csv::create(
        &dir.join("summary.csv"),
        &[
            "t",
            "m",
            "trapped_frac",
            "exploded_frac",
            "mean_x",
            "var_x",
            "median_abs_x",
            "mean_a_alive",
        ],
    )?;
    let write_samples = config.m <= config.samples_cap;
    let mut samples_csv = if write_samples {
        Some(Csv::create(
            &dir.join("samples.csv"),
            &["t", "x", "a", "status"],
        )?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for (ti, &t) in config.t.iter().enumerate() {
        let points = ensemble(config, t, ti as u64)?;
        let s = point_stats(&points);
        summary_csv.row(vec![
            t.into(),
            config.m.into(),
            s.trapped.into(),
            s.exploded.into(),
            s.mean_x.into(),
            s.var_x.into(),
            s.median_abs_x.into(),
            s.mean_a_alive.into(),
        ])?;
        if let Some(csv) = samples_csv.as_mut() {
            for p in &points {
                csv.row(vec![
                    t.into(),
                    p.x.into(),
                    p.a.into(),
                    status_name(p.status).into(),
                ])?;
            }
        }
        rows.push(json!({
            "t": t,
            "trapped_frac": s.trapped,
            "exploded_frac": s.exploded,
            "mean_x": s.mean_x,
            "var_x": s.var_x,
            "median_abs_x": s.median_abs_x,
        }));
    }
    summary_csv.finish()?;
    artifacts.push("summary.csv".into());
    if let Some(csv) = samples_csv {
        csv.finish()?;
        artifacts.push("samples.csv".into());
    }
    Ok(json!({ "horizons": rows }))
}

fn run_discrete(
    config: &ExperimentConfig,
    dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<Value, RunError> {
    let drive = config.drive();
    let mode: process::SchemeMode = config.mode.into();
    let mut csv = Csv::create(
        &dir.join("summary.csv"),
        &[
            "t",
            "n",
            "mode",
            "m",
            "trapped_frac",
            "exploded_frac",
            "mean_x",
            "var_x",
            "ks_vs_exact",
            "ks_critical_5pct",
        ],
    )?;
    let mut rows = Vec::new();
    for (ti, &t) in config.t.iter().enumerate() {
        let endpoints = process::discrete_endpoint_ensemble(
            &drive,
            config.a0,
            t,
            config.n,
            mode,
            config.m,
            stream_for(config, 1000 + ti as u64),
        )
        .map_err(|e| RunError::Numerical(e.to_string()))?;
        let exact = process::exact_ensemble(
            &drive,
            config.a0,
            t,
            config.m,
            stream_for(config, 2000 + ti as u64),
        )
        .map_err(|e| RunError::Numerical(e.to_string()))?;
        let xs_d: Vec<f64> = endpoints.iter().map(|p| p.x).collect();
        let xs_e: Vec<f64> = exact.iter().map(|p| p.x).collect();
        let ks = ks_two_sample(&xs_d, &xs_e).map_err(|e| RunError::Numerical(e.to_string()))?;
        let s = point_stats(&endpoints);
        let mode_name = match config.mode {
            crate::config::SchemeModeName::SdeConsistent => "sde-consistent",
            crate::config::SchemeModeName::Unnormalized => "unnormalized",
        };
        csv.row(vec![
            t.into(),
            config.n.into(),
            mode_name.into(),
            config.m.into(),
            s.trapped.into(),
            s.exploded.into(),
            s.mean_x.into(),
            s.var_x.into(),
            ks.d_statistic.into(),
            ks.critical_5pct.into(),
        ])?;
        rows.push(json!({
            "t": t,
            "trapped_frac": s.trapped,
            "ks_vs_exact": ks.d_statistic,
            "ks_critical_5pct": ks.critical_5pct,
        }));
    }
    csv.finish()?;
    artifacts.push("summary.csv".into());
    Ok(json!({ "horizons": rows }))
}

fn run_survival(
    config: &ExperimentConfig,
    dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<Value, RunError> {
    let drive = config.drive();
    let mut csv = Csv::create(
        &dir.join("survival.csv"),
        &[
            "t",
            "m",
            "analytic_survival",
            "mc_survival",
            "binomial_se",
            "z_score",
        ],
    )?;
    let mut rows = Vec::new();
    for (ti, &t) in config.t.iter().enumerate() {
        // erfc-based form, valid for any a0 (equals erf(1/((3/2-g) sqrt t))
        // at a0 = 1).
        let analytic = 1.0 - pde::absorbed_mass(&drive, config.a0, t);
        let points = ensemble(config, t, ti as u64)?;
        let alive = points.iter().filter(|p| p.status != Status::Trapped).count() as f64
            / config.m as f64;
        let se = (analytic * (1.0 - analytic) / config.m as f64).sqrt().max(1e-300);
        let z = (alive - analytic) / se;
        csv.row(vec![
            t.into(),
            config.m.into(),
            analytic.into(),
            alive.into(),
            se.into(),
            z.into(),
        ])?;
        rows.push(json!({"t": t, "analytic": analytic, "mc": alive, "z": z}));
    }
    csv.finish()?;
    artifacts.push("survival.csv".into());
    Ok(json!({ "horizons": rows }))
}

fn run_limit_law(
    config: &ExperimentConfig,
    dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<Value, RunError> {
    let drive = config.drive();
    let mut csv = Csv::create(
        &dir.join("limit_law.csv"),
        &["t", "candidate", "ks_d", "critical_5pct", "verdict"],
    )?;
    let candidates = [
        ("derived", ScalingCandidate::Derived),
        ("half-exponent", ScalingCandidate::HalfExponent),
        ("half-constant-exponent", ScalingCandidate::HalfConstantExponent),
    ];
    let mut rows = Vec::new();
    for (ti, &t) in config.t.iter().enumerate() {
        let emp = limits::rescaled_empirical(&drive, t, config.m, stream_for(config, ti as u64))
            .map_err(|e| RunError::Numerical(e.to_string()))?;
        for (ci, (name, cand)) in candidates.iter().enumerate() {
            let reference = limits::limit_law_sample_with(
                &drive,
                *cand,
                config.m,
                stream_for(config, 5000 + 10 * ti as u64 + ci as u64),
            )
            .map_err(|e| RunError::Numerical(e.to_string()))?;
            let ks = ks_two_sample(&emp, &reference)
                .map_err(|e| RunError::Numerical(e.to_string()))?;
            let verdict = if ks.below_5pct() { "accept" } else { "reject" };
            csv.row(vec![
                t.into(),
                (*name).into(),
                ks.d_statistic.into(),
                ks.critical_5pct.into(),
                verdict.into(),
            ])?;
            rows.push(json!({
                "t": t, "candidate": name, "ks_d": ks.d_statistic,
                "critical_5pct": ks.critical_5pct, "verdict": verdict,
            }));
        }
    }
    csv.finish()?;
    artifacts.push("limit_law.csv".into());
    Ok(json!({ "comparisons": rows }))
}

fn run_generator(
    config: &ExperimentConfig,
    dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<Value, RunError> {
    let drive = config.drive();
    let a = config.a0;
    let weight = || Weight::cosine_bump(0.5, 101);
    let mut csv = Csv::create(
        &dir.join("generator.csv"),
        &["test_function", "lhs", "lhs_std_err", "rhs", "abs_err"],
    )?;
    let mut rows = Vec::new();
    let push = |csv: &mut Csv,
                    rows: &mut Vec<Value>,
                    name: &str,
                    c: limits::GeneratorCheck|
     -> Result<(), RunError> {
        csv.row(vec![
            name.into(),
            c.lhs.into(),
            c.lhs_std_err.into(),
            c.rhs.into(),
            (c.lhs - c.rhs).abs().into(),
        ])?;
        rows.push(json!({
            "test_function": name, "lhs": c.lhs, "lhs_std_err": c.lhs_std_err, "rhs": c.rhs,
        }));
        Ok(())
    };

    let probe = GeneratorProbe {
        h: |_x: f64, _a: f64| 1.0,
        weight: weight(),
        t_small: config.t_small,
        n_samples: config.m,
    };
    let c = generator_check(&probe, &drive, a, stream_for(config, 0))
        .map_err(|e| RunError::Numerical(e.to_string()))?;
    push(&mut csv, &mut rows, "constant", c)?;

    let probe = GeneratorProbe {
        h: |x: f64, _a: f64| x * x,
        weight: weight(),
        t_small: config.t_small,
        n_samples: config.m,
    };
    let c = generator_check(&probe, &drive, a, stream_for(config, 1))
        .map_err(|e| RunError::Numerical(e.to_string()))?;
    push(&mut csv, &mut rows, "x_squared", c)?;

    let probe = GeneratorProbe {
        h: |_x: f64, a: f64| a,
        weight: weight(),
        t_small: config.t_small,
        n_samples: config.m,
    };
    let c = generator_check(&probe, &drive, a, stream_for(config, 2))
        .map_err(|e| RunError::Numerical(e.to_string()))?;
    push(&mut csv, &mut rows, "diffusivity", c)?;

    let probe = GeneratorProbe {
        h: |_w: f64, l: f64| l,
        weight: weight(),
        t_small: config.t_small,
        n_samples: config.m,
    };
    let c = generator_check_wl(&probe, 0.0, stream_for(config, 3))
        .map_err(|e| RunError::Numerical(e.to_string()))?;
    push(&mut csv, &mut rows, "pair_local_time", c)?;

    csv.finish()?;
    artifacts.push("generator.csv".into());
    Ok(json!({ "probes": rows }))
}

fn write_field_csv(path: &Path, series: &[DensityField]) -> std::io::Result<()> {
    let mut csv = Csv::create(path, &["t", "x", "a", "n"])?;
    for field in series {
        let grid = field.grid;
        for j in 0..grid.na {
            let a = grid.a_at(j);
            for i in 0..grid.nx {
                csv.row(vec![
                    field.t.into(),
                    grid.x_at(i).into(),
                    a.into(),
                    field.value(i, j).into(),
                ])?;
            }
        }
    }
    csv.finish()
}

fn curves_json(series: &[DensityField]) -> Value {
    let rows: Vec<Value> = series
        .iter()
        .map(|f| {
            json!({
                "t": f.t,
                "p": f.p,
                "q": f.q,
                "mass": f.total_mass(),
                "l1": pde::lp_norm(f, 1.0).expect("p = 1"),
                "l2": pde::lp_norm(f, 2.0).expect("p = 2"),
            })
        })
        .collect();
    Value::Array(rows)
}

fn grid_json(grid: &GridSpec) -> Value {
    json!({
        "x_max": grid.x_max, "nx": grid.nx,
        "a_min": grid.a_min, "a_max": grid.a_max, "na": grid.na,
        "dt": grid.dt, "t_end": grid.t_end,
        "dx": grid.dx(), "da": grid.da(),
    })
}

fn initial_field(config: &ExperimentConfig, grid: GridSpec) -> Result<DensityField, RunError> {
    match config.init {
        InitialData::Point => DensityField::mollified_point_mass(grid, config.a0),
        InitialData::Box => DensityField::uniform_box(
            grid,
            config.box_x_half.unwrap_or(config.a0 / 4.0),
            config.box_a_lo.unwrap_or(config.a0 / 2.0),
            config.box_a_hi.unwrap_or(config.a0),
        ),
    }
    .map_err(|e| RunError::Numerical(e.to_string()))
}

fn run_pde(
    config: &ExperimentConfig,
    dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<Value, RunError> {
    let drive = config.drive();
    let grid: GridSpec = config.grid.expect("validated").into();
    let init = initial_field(config, grid)?;
    let series = pde::solve_pde(|a| drive.eval(a), &init, &config.snapshots)
        .map_err(|e| RunError::Numerical(e.to_string()))?;

    write_field_csv(&dir.join("field.csv"), &series)?;
    artifacts.push("field.csv".into());

    // Closed-form comparison where the point-mass solution applies.
    let mut comparison = Vec::new();
    if config.x0 == 0.0 && config.init == InitialData::Point {
        for field in &series {
            if field.t <= 0.0 {
                continue;
            }
            let mut err_l1 = 0.0;
            let mut norm_l1 = 0.0;
            for j in 0..grid.na {
                let a = grid.a_at(j);
                for i in 0..grid.nx {
                    let exact = pde::closed_form_density(&drive, config.a0, field.t, grid.x_at(i), a)
                        .map_err(|e| RunError::Numerical(e.to_string()))?;
                    err_l1 += (field.value(i, j) - exact).abs();
                    norm_l1 += exact;
                }
            }
            let analytic_p = pde::absorbed_mass(&drive, config.a0, field.t);
            comparison.push(json!({
                "t": field.t,
                "rel_l1_error": err_l1 / norm_l1.max(1e-300),
                "p": field.p,
                "analytic_p": analytic_p,
                "paper_form_time_integrated_p":
                    pde::absorbed_mass_time_integrated(&drive, config.a0, field.t),
            }));
        }
    }

    let sidecar = json!({
        "grid": grid_json(&grid),
        "scheme_version": SCHEME_VERSION,
        "curves": curves_json(&series),
        "closed_form_comparison": comparison,
    });
    std::fs::write(
        dir.join("curves.json"),
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )?;
    artifacts.push("curves.json".into());

    let last = series.last().expect("at least the final state");
    Ok(json!({
        "final_t": last.t,
        "final_mass": last.total_mass(),
        "final_p": last.p,
        "final_q": last.q,
        "closed_form_comparison": sidecar["closed_form_comparison"],
    }))
}

/// Finite grids cannot certify continuum blow-up; every scan report
/// carries this caveat.
pub const BLOWUP_CAVEAT: &str = "finite-grid symptom check: atom accumulation and moment growth on a truncated grid are indicators, not a certification of continuum blow-up";

fn run_blowup_scan(
    config: &ExperimentConfig,
    dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<Value, RunError> {
    let grid: GridSpec = config.grid.expect("validated").into();
    let snapshots: Vec<f64> = if config.snapshots.is_empty() {
        (1..=12).map(|k| grid.t_end * k as f64 / 12.0).collect()
    } else {
        config.snapshots.clone()
    };
    let mut verdicts = Vec::new();
    for (gi, &gamma) in config.gammas.iter().enumerate() {
        let drive = zerocross::flow::PowerLawDrive::new(config.sigma, gamma)
            .map_err(|e| RunError::Numerical(e.to_string()))?;
        let init = initial_field(config, grid)?;
        let series = pde::solve_pde(|a| drive.eval(a), &init, &snapshots)
            .map_err(|e| RunError::Numerical(e.to_string()))?;
        let (m_exp, _) = pde::probe_parameters(gamma);
        let probe = pde::blowup_probe(&series, m_exp, gamma);

        let name = format!("probe_{gi:02}.csv");
        let mut csv = Csv::create(&dir.join(&name), &["t", "y", "l1", "l2", "p", "q"])?;
        for k in 0..probe.times.len() {
            csv.row(vec![
                probe.times[k].into(),
                probe.y_curve[k].into(),
                probe.l1_curve[k].into(),
                probe.l2_curve[k].into(),
                probe.p_curve[k].into(),
                probe.q_curve[k].into(),
            ])?;
        }
        csv.finish()?;
        artifacts.push(name.clone());
        verdicts.push(json!({
            "gamma": gamma,
            "m_exponent": probe.m_exponent,
            "constraint_satisfied": probe.constraint_satisfied,
            "verdict": format!("{:?}", probe.verdict),
            "y_growth_slope": probe.y_growth_slope,
            "final_p": probe.p_curve.last(),
            "max_l2_over_initial": probe
                .l2_curve
                .iter()
                .cloned()
                .reduce(f64::max)
                .map(|mx| mx / probe.l2_curve[0].max(1e-300)),
            "curve_file": name,
        }));
    }
    Ok(json!({
        "caveat": BLOWUP_CAVEAT,
        "grid": grid_json(&grid),
        "scans": verdicts,
    }))
}
