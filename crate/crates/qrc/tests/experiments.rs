//! End-to-end behaviour of the experiment pipeline on Lorenz-63.

use qrc::config::{self, Stages, SweepAxis, SweepConfig, SHOT_GRID};
use qrc::experiment::{run_experiment_with, run_sweep_with, GroundTruth, Stat};
use qrc::{emit_report, Report};
use qrc_core::dynamics::generate_trajectory;
use qrc_core::reservoir::Variant;
use std::sync::OnceLock;

fn truth() -> &'static GroundTruth {
    static TRUTH: OnceLock<GroundTruth> = OnceLock::new();
    TRUTH.get_or_init(|| GroundTruth::build(&config::lorenz63(), false).unwrap())
}

fn component_stats(rows: impl Iterator<Item = Vec<f64>>, dim: usize) -> Vec<(f64, f64)> {
    let rows: Vec<Vec<f64>> = rows.collect();
    (0..dim)
        .map(|i| {
            let s = Stat::of(rows.iter().map(|r| r[i])).unwrap();
            (s.mean, s.std * s.std)
        })
        .collect()
}

#[test]
fn forecasts_are_valid_and_climatologically_correct() {
    let mut cfg = config::lorenz63();
    cfg.stages = Stages { forecast: true, lyapunov: true, ..Stages::NONE };
    let truth = truth();
    let report = run_experiment_with(&cfg, truth, 1).unwrap();
    assert!(report.all_ok());

    let vpt = report.ensemble.vpt_lt.unwrap().mean;
    assert!(vpt >= 2.0, "mean valid prediction time {vpt} LT");

    let ky = report.ensemble.ky_dimension.unwrap().mean;
    assert!((ky - 2.06).abs() / 2.06 <= 0.02, "Kaplan-Yorke dimension {ky}");

    // Pooled first 50 LT of every forecast against a long ground-truth run.
    let n50 = truth.time().steps(50.0);
    let pred = component_stats(
        report.seeds.iter().filter_map(|s| s.ok()).flat_map(|r| {
            let f = r.forecast.as_ref().unwrap();
            (0..n50).map(|t| f.state(t).to_vec()).collect::<Vec<_>>()
        }),
        3,
    );
    let long = generate_trajectory(&truth.spec, None, cfg.data.dt, truth.time().steps(1000.0), 10_000, 7).unwrap();
    let want = component_stats(long.rows().map(<[f64]>::to_vec), 3);
    for (i, ((pm, pv), (tm, tv))) in pred.iter().zip(&want).enumerate() {
        assert!((pm - tm).abs() <= 0.1 * tv.sqrt(), "component {i}: mean {pm} vs {tm}");
        assert!((pv / tv - 1.0).abs() <= 0.1, "component {i}: variance {pv} vs {tv}");
    }
}

#[test]
fn reported_ensembles_are_recomputable_from_seed_rows() {
    let mut cfg = config::lorenz63();
    cfg.stages = Stages { lyapunov: true, ..Stages::NONE };
    cfg.seeds = vec![0, 1, 2];
    let report = run_experiment_with(&cfg, truth(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&[Report::Experiment(report)], dir.path()).unwrap();

    let mut seeds = csv::Reader::from_path(dir.path().join("lorenz63_seeds.csv")).unwrap();
    let header = seeds.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = seeds.records().map(Result::unwrap).collect();
    let column = |name: &str| {
        let i = header.iter().position(|h| h == name).unwrap();
        rows.iter().map(|r| r[i].parse::<f64>().unwrap()).collect::<Vec<f64>>()
    };

    let mut spectrum = csv::Reader::from_path(dir.path().join("lorenz63_spectrum.csv")).unwrap();
    for (k, rec) in spectrum.records().enumerate() {
        let rec = rec.unwrap();
        let s = Stat::of(column(&format!("lambda_{}", k + 1))).unwrap();
        assert_eq!(rec[2].parse::<f64>().unwrap(), s.mean);
        assert_eq!(rec[3].parse::<f64>().unwrap(), s.std);
    }
    let mut ky = csv::Reader::from_path(dir.path().join("lorenz63_kaplan_yorke.csv")).unwrap();
    let rec = ky.records().next().unwrap().unwrap();
    let s = Stat::of(column("ky_dimension")).unwrap();
    assert_eq!((rec[1].parse::<f64>().unwrap(), rec[2].parse::<f64>().unwrap()), (s.mean, s.std));
}

#[test]
fn recurrence_free_conditional_exponent_tracks_the_leak_rate() {
    let mut cfg = config::lorenz63();
    cfg.stages = Stages { cle: true, ..Stages::NONE };
    cfg.seeds = vec![0];
    cfg.sweep = Some(SweepConfig { axis: SweepAxis::Epsilon, values: config::LEAK_GRID[..12].to_vec(), epsilons: vec![] });
    let sweep = run_sweep_with(&cfg, truth(), 1).unwrap();
    let column: Vec<f64> = sweep.points.iter().map(|p| p.ensemble.max_cle.unwrap().mean).collect();
    for (p, cle) in sweep.points.iter().zip(&column) {
        let want = (1.0 - p.epsilon).ln() / cfg.data.dt;
        assert!((cle - want).abs() <= 1e-9 * want.abs(), "eps {}: {cle} vs {want}", p.epsilon);
    }
    assert!(column.windows(2).all(|w| w[1] < w[0]), "{column:?}");
}

#[test]
fn recurrent_reservoir_is_stable_at_intermediate_leak() {
    let mut cfg = config::lorenz63();
    cfg.reservoir.variant = Variant::Qrc;
    cfg.stages = Stages { forecast: true, cle: true, ..Stages::NONE };
    cfg.seeds = vec![0, 1, 2];
    cfg.sweep = Some(SweepConfig { axis: SweepAxis::Epsilon, values: vec![0.25, 0.4, 0.6], epsilons: vec![] });
    let sweep = run_sweep_with(&cfg, truth(), 1).unwrap();
    for p in &sweep.points {
        let cle = p.ensemble.max_cle.unwrap().mean;
        let vpt = p.ensemble.vpt_lt.unwrap().mean;
        assert!(cle < 0.0 && vpt > 0.0, "eps {}: max CLE {cle}, VPT {vpt}", p.epsilon);
    }
}

#[test]
fn more_shots_do_not_worsen_the_leading_exponent() {
    let mut cfg = config::shots_sweep();
    cfg.sweep = Some(SweepConfig { axis: SweepAxis::Shots, values: SHOT_GRID.to_vec(), epsilons: vec![0.3] });
    let sweep = run_sweep_with(&cfg, truth(), 1).unwrap();
    let errs: Vec<f64> = sweep.points.iter().map(|p| p.abs_errors.as_ref().unwrap()[0]).collect();
    let stds: Vec<f64> = sweep.points.iter().map(|p| p.ensemble.exponents.as_ref().unwrap()[0].std).collect();
    assert!(errs[4] <= errs[0], "error at 50000 shots {} vs 1000 shots {}", errs[4], errs[0]);
    for k in 1..errs.len() {
        let slack = 2.0 * stds[k].max(stds[k - 1]);
        assert!(errs[k] <= errs[k - 1] + slack, "errors {errs:?}, stds {stds:?}");
    }
}

#[test]
fn mild_depolarizing_noise_does_not_hurt_high_memory_reservoirs() {
    let mut cfg = config::depolarizing_sweep();
    cfg.sweep = Some(SweepConfig { axis: SweepAxis::Depolarizing, values: vec![0.0, 0.01], epsilons: vec![0.05] });
    let sweep = run_sweep_with(&cfg, truth(), 1).unwrap();
    let err = |p: f64| sweep.point(p, 0.05).unwrap().abs_errors.as_ref().unwrap()[0];
    assert!(err(0.01) <= err(0.0), "noisy {} vs noise-free {}", err(0.01), err(0.0));
}
