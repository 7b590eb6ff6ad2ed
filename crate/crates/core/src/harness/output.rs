//! CSV outputs of a campaign. Every file starts with a `#` line naming the
//! schema version.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{CampaignResult, TrialResult};
use crate::error::Result;

pub const SUMMARY_VERSION: &str = "diukf-results v1";

fn open(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(dir.join(name))?);
    writeln!(file, "# {SUMMARY_VERSION}")?;
    Ok(csv::Writer::from_writer(file))
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn rate_label(r: f64) -> String {
    format!("{r}")
}

/// Writes `summary.csv`, `cells.csv`, `nodes.csv`, `node1_traj.csv` and one
/// `trial_<n>.csv` per trial index into `dir`.
pub fn write_outputs(result: &CampaignResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cfg = &result.config;

    // One row per (algorithm, trajectory), one PRMSE/ORMSE pair per rate.
    let mut w = open(dir, "summary.csv")?;
    let mut header = vec!["algorithm".to_string(), "trajectory".to_string()];
    for r in &cfg.rates {
        header.push(format!("prmse_{}", rate_label(*r)));
        header.push(format!("ormse_{}", rate_label(*r)));
    }
    header.extend(["trials", "failed", "monitor_violations"].map(String::from));
    w.write_record(&header)?;
    for &alg in &cfg.algorithms {
        for &traj in &cfg.trajectories {
            let mut row = vec![alg.to_string(), traj.to_string()];
            let (mut trials, mut failed, mut violations) = (0, 0, 0);
            for &r in &cfg.rates {
                let c = result.cell(alg, traj, r).expect("every configured cell was run");
                row.push(fmt(c.prmse));
                row.push(fmt(c.ormse));
                trials += c.trials;
                failed += c.failed;
                violations += c.bound_violations + c.increment_violations;
            }
            row.extend([trials.to_string(), failed.to_string(), violations.to_string()]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut w = open(dir, "cells.csv")?;
    w.write_record([
        "algorithm", "trajectory", "rate", "trials", "failed", "prmse", "ormse", "prmse_node1", "ormse_node1", "bound_violations", "increment_violations", "gamma_bar",
    ])?;
    for c in &result.cells {
        w.write_record([
            c.cell.algorithm.to_string(),
            c.cell.trajectory.to_string(),
            rate_label(c.cell.rate),
            c.trials.to_string(),
            c.failed.to_string(),
            fmt(c.prmse),
            fmt(c.ormse),
            fmt(c.prmse_node1),
            fmt(c.ormse_node1),
            c.bound_violations.to_string(),
            c.increment_violations.to_string(),
            format!("{:.9}", c.gamma_bar),
        ])?;
    }
    w.flush()?;

    let mut w = open(dir, "nodes.csv")?;
    w.write_record(["algorithm", "trajectory", "rate", "trial", "node", "prmse", "ormse", "failed"])?;
    for t in &result.trials {
        for (i, (p, o)) in t.node_prmse.iter().zip(&t.node_ormse).enumerate() {
            w.write_record([
                t.cell.algorithm.to_string(),
                t.cell.trajectory.to_string(),
                rate_label(t.cell.rate),
                t.trial.to_string(),
                (i + 1).to_string(),
                fmt(*p),
                fmt(*o),
                u8::from(t.failed()).to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = open(dir, "node1_traj.csv")?;
    w.write_record(["algorithm", "trajectory", "rate", "t", "true_x", "true_y", "true_z", "est_x", "est_y", "est_z"])?;
    for t in result.trials.iter().filter(|t| t.trial == 0) {
        for (time, (p, q)) in t.times.iter().zip(&t.node1_track) {
            let mut row = vec![t.cell.algorithm.to_string(), t.cell.trajectory.to_string(), rate_label(t.cell.rate), format!("{time:.2}")];
            row.extend(p.iter().chain(q.iter()).map(|v| fmt(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    for n in 0..cfg.trials {
        let mut w = open(dir, &format!("trial_{n}.csv"))?;
        w.write_record(["algorithm", "trajectory", "rate", "t", "node", "position_error_m", "orientation_error_deg"])?;
        for t in result.trials.iter().filter(|t| t.trial == n) {
            write_trial_rows(&mut w, t)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn write_trial_rows<W: Write>(w: &mut csv::Writer<W>, t: &TrialResult) -> Result<()> {
    let (alg, traj, rate) = (t.cell.algorithm.to_string(), t.cell.trajectory.to_string(), rate_label(t.cell.rate));
    for (k, time) in t.times.iter().enumerate() {
        for node in 0..t.position_errors.len() {
            let Some(pe) = t.position_errors[node].get(k) else { continue };
            w.write_record([
                alg.as_str(),
                traj.as_str(),
                rate.as_str(),
                &format!("{time:.2}"),
                &(node + 1).to_string(),
                &fmt(*pe),
                &fmt(t.orientation_errors[node][k]),
            ])?;
        }
    }
    Ok(())
}
