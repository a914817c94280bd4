//! Emission of reports as `{experiment}_{dataset}.csv` files plus `summary.json`.

use anyhow::Result;
use serde::Serialize;
use std::path::{Path, PathBuf};

use crate::config::SweepAxis;
use crate::experiment::{ExperimentReport, SeedOutcome, Stat, SweepPoint, SweepReport};
use crate::formats::{angle_pdf_csv, csv_bytes, num, opt_num, pair_label, spectrum_csv, write_atomic, write_json};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Report {
    Experiment(ExperimentReport),
    Sweep(SweepReport),
}

impl Report {
    pub fn name(&self) -> &str {
        match self {
            Report::Experiment(r) => &r.config.name,
            Report::Sweep(r) => &r.config.name,
        }
    }

    pub fn all_ok(&self) -> bool {
        match self {
            Report::Experiment(r) => r.all_ok(),
            Report::Sweep(r) => r.all_ok(),
        }
    }
}

fn exponent_headers(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

fn stat_cells(s: Option<Stat>) -> [String; 2] {
    [opt_num(s.map(|s| s.mean)), opt_num(s.map(|s| s.std))]
}

/// Per-seed rows; the ensemble columns elsewhere are recomputable from these.
fn seed_rows(seeds: &[SeedOutcome], k: usize) -> Vec<Vec<String>> {
    seeds
        .iter()
        .map(|o| {
            let mut row = vec![o.seed().to_string()];
            match o {
                SeedOutcome::Ok(r) => {
                    row.push("ok".into());
                    row.push(num(r.beta));
                    row.push(opt_num(r.vpt_lt));
                    row.push(opt_num(r.ky_dimension));
                    row.push(opt_num(r.max_cle()));
                    row.push(r.gs.map(|g| format!("{:?}", g.class)).unwrap_or_default());
                    let e = r.exponents.as_deref().unwrap_or(&[]);
                    row.extend((0..k).map(|i| opt_num(e.get(i).copied())));
                }
                SeedOutcome::Failed { .. } => {
                    row.push("failed".into());
                    row.extend(std::iter::repeat_n(String::new(), 5 + k));
                }
            }
            row
        })
        .collect()
}

fn seed_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = ["seed", "status", "beta", "vpt_lt", "ky_dimension", "max_cle", "gs_class"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(exponent_headers("lambda_", k));
    h
}

fn write_csv(dir: &Path, file: String, header: &[String], rows: Vec<Vec<String>>, written: &mut Vec<PathBuf>) -> Result<()> {
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let path = dir.join(file);
    write_atomic(&path, &csv_bytes(&header, rows)?)?;
    written.push(path);
    Ok(())
}

fn emit_experiment(r: &ExperimentReport, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let name = &r.config.name;
    let k = r.config.stability.n_exponents;
    let target = &r.reference.exponents;

    let path = dir.join(format!("{name}_target_spectrum.csv"));
    write_atomic(&path, &spectrum_csv(target)?)?;
    written.push(path);

    if let Some(stats) = &r.ensemble.exponents {
        let rows = stats
            .iter()
            .enumerate()
            .map(|(i, s)| vec![(i + 1).to_string(), num(target[i]), num(s.mean), num(s.std)])
            .collect();
        let header = ["exponent_index", "target", "inferred_mean", "inferred_std"].map(String::from);
        write_csv(dir, format!("{name}_spectrum.csv"), &header, rows, written)?;

        let ky = r.ensemble.ky_dimension;
        let err = match (ky, r.reference.ky_dimension) {
            (Some(k), Some(t)) => Some(100.0 * (k.mean - t).abs() / t),
            _ => None,
        };
        let [m, s] = stat_cells(ky);
        let header = ["target", "inferred_mean", "inferred_std", "error_pct"].map(String::from);
        let rows = vec![vec![opt_num(r.reference.ky_dimension), m, s, opt_num(err)]];
        write_csv(dir, format!("{name}_kaplan_yorke.csv"), &header, rows, written)?;
    }

    write_csv(dir, format!("{name}_seeds.csv"), &seed_header(k), seed_rows(&r.seeds, k), written)?;

    for (tag, pdfs) in [("target", &r.target_angle_pdfs), ("inferred", &r.ensemble.angle_pdfs)] {
        if let Some(pdfs) = pdfs {
            let path = dir.join(format!("{name}_angle_pdf_{tag}.csv"));
            write_atomic(&path, &angle_pdf_csv(pdfs)?)?;
            written.push(path);
        }
    }
    let first_angles = r.seeds.iter().filter_map(SeedOutcome::ok).find_map(|s| s.angles.as_ref());
    for (tag, series) in [("target", r.target_angles.as_ref()), ("inferred", first_angles)] {
        let Some(series) = series else { continue };
        let kv = k.min(series.pairs.iter().map(|p| p.1 + 1).max().unwrap_or(0));
        let mut header = vec!["step".to_string()];
        header.extend(series.pairs.iter().map(|&p| pair_label(p, kv)));
        let n = series.degrees.first().map_or(0, Vec::len);
        let rows = (0..n)
            .map(|t| std::iter::once(t.to_string()).chain(series.degrees.iter().map(|s| num(s[t]))).collect())
            .collect();
        write_csv(dir, format!("{name}_angle_series_{tag}.csv"), &header, rows, written)?;
    }
    Ok(())
}

fn emit_sweep(r: &SweepReport, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let name = &r.config.name;
    let axis = r.config.sweep.as_ref().map_or(SweepAxis::Epsilon, |s| s.axis);
    let k = r.config.stability.n_exponents;
    // Leading key columns: the axis value, plus the leak rate unless that is the axis.
    let mut keys = vec![axis.label().to_string()];
    if axis != SweepAxis::Epsilon {
        keys.push("epsilon".into());
    }
    let key_cells = |p: &SweepPoint| {
        let mut cells = vec![num(p.value)];
        if axis != SweepAxis::Epsilon {
            cells.push(num(p.epsilon));
        }
        cells
    };

    let mut header = keys.clone();
    header.extend(["n_ok", "n_failed"].map(String::from));
    header.extend(exponent_headers("lambda_mean_", k));
    header.extend(exponent_headers("lambda_std_", k));
    header.extend(exponent_headers("lambda_abs_error_", k));
    header.extend(["max_cle_mean", "max_cle_std", "vpt_mean", "vpt_std", "ky_mean", "ky_std"].map(String::from));
    let rows = r
        .points
        .iter()
        .map(|p| {
            let e = &p.ensemble;
            let mut row = key_cells(p);
            row.extend([e.n_ok.to_string(), e.n_failed.to_string()]);
            let stats = e.exponents.as_deref().unwrap_or(&[]);
            row.extend((0..k).map(|i| opt_num(stats.get(i).map(|s| s.mean))));
            row.extend((0..k).map(|i| opt_num(stats.get(i).map(|s| s.std))));
            let errs = p.abs_errors.as_deref().unwrap_or(&[]);
            row.extend((0..k).map(|i| opt_num(errs.get(i).copied())));
            row.extend(stat_cells(e.max_cle));
            row.extend(stat_cells(e.vpt_lt));
            row.extend(stat_cells(e.ky_dimension));
            row
        })
        .collect();
    write_csv(dir, format!("{name}_sweep.csv"), &header, rows, written)?;

    let mut header = keys;
    header.extend(seed_header(k));
    let rows = r
        .points
        .iter()
        .flat_map(|p| {
            let cells = key_cells(p);
            seed_rows(&p.seeds, k).into_iter().map(move |row| {
                let mut full = cells.clone();
                full.extend(row);
                full
            })
        })
        .collect();
    write_csv(dir, format!("{name}_sweep_seeds.csv"), &header, rows, written)?;

    let path = dir.join(format!("{name}_target_spectrum.csv"));
    write_atomic(&path, &spectrum_csv(&r.reference.exponents)?)?;
    written.push(path);
    Ok(())
}

/// Writes every report's CSV files and one `summary.json` into `dir`
/// (created if missing). Output depends only on the reports, so reruns with
/// the same configuration and seeds are byte-identical.
pub fn emit_report(reports: &[Report], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for r in reports {
        match r {
            Report::Experiment(e) => emit_experiment(e, dir, &mut written)?,
            Report::Sweep(s) => emit_sweep(s, dir, &mut written)?,
        }
    }
    let path = dir.join("summary.json");
    write_json(&path, &serde_json::json!({ "reports": reports }))?;
    written.push(path);
    Ok(written)
}
