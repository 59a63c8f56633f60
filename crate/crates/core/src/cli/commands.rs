//! The five subcommands. Each returns its artifacts; writing happens in the caller.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::json;

use super::{Artifacts, CliError, Validated};
use crate::density::{self, Bandwidth, Ensemble, IntegrabilityExponents};
use crate::fields::{check_assumptions, random_points};
use crate::hormander::{check_simplified, check_strong};
use crate::malliavin::spectrum_ensemble;
use crate::norris::{norris_experiment, theta_star, NorrisPartition, NorrisSetup};
use crate::sde::Experiment;
use crate::stats;

fn experiment(v: &Validated) -> Result<Experiment, CliError> {
    Experiment::new(v.system.clone(), v.x0.clone(), v.grid, v.hurst, v.config.run.seed).map_err(CliError::run)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), crate::paths::PathError>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(CliError::run)?;
    Ok(buf)
}

fn run_summary(v: &Validated) -> serde_json::Value {
    json!({
        "system": v.system.name(),
        "dim": v.system.dim(),
        "wiener_dim": v.system.wiener_dim(),
        "fbm_dim": v.system.fbm_dim(),
        "hurst": v.hurst.value(),
        "horizon": v.grid.horizon(),
        "steps": v.grid.steps(),
        "x0": v.x0,
    })
}

pub fn simulate(v: &Validated) -> Result<Artifacts, CliError> {
    let cfg = v.config.simulate.clone().unwrap_or_default();
    let exp = experiment(v)?;
    let mut art = Artifacts::new("simulate", &v.config);
    let meta = art.metadata();
    let keep = cfg.write_paths.min(cfg.paths);
    let solved = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|p| {
            let (_, x) = exp.solve(p).map_err(|e| CliError::Run(format!("path {p}: {e}")))?;
            let sup = x.sup_norm();
            let last = x.last().to_vec();
            Ok((last, sup, (p < keep as u64).then_some(x)))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    for (p, (_, _, x)) in solved.iter().enumerate() {
        if let Some(x) = x {
            let mut m = meta.clone();
            m.push(("path", p.to_string()));
            art.add(format!("simulate_path_{p}.csv"), csv_bytes(|b| x.write_csv(b, &m))?);
        }
    }
    let rows: Vec<f64> = solved.iter().flat_map(|(last, _, _)| last.iter().copied()).collect();
    let ens = Ensemble::from_rows(v.grid.horizon(), v.system.dim(), rows, v.config.run.seed).map_err(CliError::run)?;
    art.add("simulate_terminal.csv", csv_bytes(|b| ens.write_csv(b, &meta))?);

    let comps: Vec<serde_json::Value> = (0..ens.dim)
        .map(|c| {
            let xs = ens.component(c);
            json!({
                "component": c + 1,
                "mean": stats::mean(&xs),
                "variance": if xs.len() > 1 { Some(stats::variance(&xs)) } else { None },
            })
        })
        .collect();
    let sups: Vec<f64> = solved.iter().map(|s| s.1).collect();
    art.add_json(
        "simulate_summary.json",
        json!({
            "run": run_summary(v),
            "paths": cfg.paths,
            "terminal": comps,
            "max_sup_norm": sups.iter().copied().fold(0.0, f64::max),
            "streams": "path i draws Wiener and fBm increments from ChaCha8 streams (i << 16) | code of the master seed",
        }),
    );
    Ok(art)
}

pub fn malliavin(v: &Validated) -> Result<Artifacts, CliError> {
    let cfg = v.config.malliavin.clone().unwrap_or_default();
    let exp = experiment(v)?;
    let summary = spectrum_ensemble(&exp, cfg.paths, &cfg.epsilons).map_err(CliError::run)?;
    let mut art = Artifacts::new("malliavin", &v.config);
    let meta = art.metadata();
    art.add("malliavin_spectrum.csv", csv_bytes(|b| summary.write_csv(b, &meta))?);
    art.add_json("malliavin_summary.json", json!({ "run": run_summary(v), "spectrum": summary }));
    Ok(art)
}

pub fn hormander(v: &Validated) -> Result<Artifacts, CliError> {
    let cfg = v.config.hormander.clone().unwrap_or_default();
    let fields = v.system.vector_fields().map_err(CliError::run)?;
    let simplified = check_simplified(&v.system, &v.x0, cfg.t0, cfg.tolerance).map_err(CliError::run)?;
    let strong = check_strong(&fields, &v.x0, cfg.n0, cfg.tolerance, cfg.include_drift, cfg.node_cap).map_err(CliError::run)?;
    let points = random_points(v.system.dim(), 64, 2.0, v.config.run.seed);
    let assumptions = check_assumptions(&v.system, &points, cfg.t0).map_err(CliError::run)?;

    let mut art = Artifacts::new("hormander", &v.config);
    let mut table = Vec::new();
    for (k, val) in art.metadata() {
        table.extend_from_slice(format!("# {k}={val}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut table);
        let mut header = vec!["word".to_string(), "level".to_string()];
        header.extend((1..=v.system.dim()).map(|i| format!("v{i}")));
        header.push("cumulative_rank".into());
        w.write_record(&header).map_err(CliError::run)?;
        for row in &strong.table {
            let mut rec = vec![row.word.clone(), row.level.to_string()];
            rec.extend(row.value.iter().map(|x| format!("{x:?}")));
            rec.push(row.cumulative_rank.to_string());
            w.write_record(&rec).map_err(CliError::run)?;
        }
        w.flush().map_err(CliError::run)?;
    }
    art.add("hormander_brackets.csv", table);
    art.add_json(
        "hormander_decision.json",
        json!({
            "run": run_summary(v),
            "n0": cfg.n0,
            "include_drift": cfg.include_drift,
            "simplified": simplified,
            "strong": strong.decision,
            "in_strong_window": v.hurst.in_strong_window(),
            "assumptions": assumptions,
        }),
    );
    Ok(art)
}

pub fn norris(v: &Validated) -> Result<Artifacts, CliError> {
    let cfg = v.config.norris.clone().unwrap_or_default();
    let partition = NorrisPartition::new(cfg.blocks, cfg.steps_per_block).map_err(CliError::run)?;
    let setup = NorrisSetup {
        sys: v.system.clone(),
        y0: v.x0.clone(),
        hurst: v.hurst,
        partition,
        oversample: cfg.oversample,
        seed: v.config.run.seed,
    };
    let theta = cfg.theta.unwrap_or(f64::NAN);
    let mut report =
        norris_experiment(&setup, &cfg.epsilons, &cfg.q, cfg.trials, theta, cfg.tail_points).map_err(CliError::run)?;
    if cfg.theta.is_none() {
        report.warnings.retain(|w| !w.starts_with("theta"));
    }
    let mut art = Artifacts::new("norris", &v.config);
    let meta = art.metadata();
    art.add("norris_trials.csv", csv_bytes(|b| report.write_csv(b, v.config.run.seed, &meta))?);
    art.add_json(
        "norris_summary.json",
        json!({
            "run": run_summary(v),
            "blocks": cfg.blocks,
            "steps_per_block": cfg.steps_per_block,
            "coarse_step": setup.partition.coarse(),
            "fine_step": setup.partition.fine(),
            "grid_steps": setup.partition.fine_steps() * cfg.oversample,
            "theta": cfg.theta,
            "theta_star": theta_star(v.hurst.value()),
            "report": report,
        }),
    );
    Ok(art)
}

pub fn density(v: &Validated) -> Result<Artifacts, CliError> {
    let cfg = v.config.density.clone().unwrap_or_default();
    let exp = experiment(v)?;
    let t = cfg.t.unwrap_or(v.grid.horizon());
    let ens = density::run_ensemble(&exp, t, cfg.paths).map_err(CliError::run)?;
    let mut art = Artifacts::new("density", &v.config);
    let meta = art.metadata();
    art.add("density_samples.csv", csv_bytes(|b| ens.write_csv(b, &meta))?);

    let bandwidth = cfg.bandwidth.map_or(Bandwidth::Auto, Bandwidth::Value);
    let mut kdes = Vec::new();
    for c in 0..ens.dim {
        match density::kde(&ens, c, bandwidth) {
            Ok(table) => {
                let mut m = meta.clone();
                m.push(("component", (c + 1).to_string()));
                art.add(format!("density_kde_x{}.csv", c + 1), csv_bytes(|b| table.write_csv(b, &m))?);
                kdes.push(json!({ "component": c + 1, "bandwidth": table.bandwidth, "mass": table.mass() }));
            }
            Err(e) => kdes.push(json!({ "component": c + 1, "skipped": e.to_string() })),
        }
    }

    let gaussian = match (&cfg.gaussian_mean, &cfg.gaussian_cov) {
        (Some(mean), Some(cov)) => {
            let d = ens.dim;
            let cov = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
            Some(density::gaussian_check(&ens, mean, &cov).map_err(CliError::run)?)
        }
        _ => None,
    };
    let center = cfg.ball_center.clone().unwrap_or_else(|| v.x0.clone());
    let balls = density::small_ball_probe(&ens, &center, &cfg.radii).map_err(CliError::run)?;
    let integrability = match &cfg.integrability {
        Some(ic) => Some(density::holder_integrability_study(&exp, ic.theta, &ic.k, &ic.q, ic.paths).map_err(CliError::run)?),
        None => None,
    };
    art.add_json(
        "density_summary.json",
        json!({
            "run": run_summary(v),
            "t": ens.t,
            "paths": ens.len(),
            "kde": kdes,
            "gaussian": gaussian,
            "small_ball": { "center": center, "rows": balls },
            "exponents": cfg.integrability.as_ref().map(|ic| IntegrabilityExponents::new(v.hurst.value(), ic.theta)),
            "integrability": integrability,
        }),
    );
    Ok(art)
}
