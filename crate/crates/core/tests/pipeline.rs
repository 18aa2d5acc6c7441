use std::path::Path;

use ionpred::harness::pipeline::{files, read_predictions};
use ionpred::harness::{mae, run_pipeline, EvalReport, ExperimentConfig, Preset};

fn minimal() -> ExperimentConfig {
    ExperimentConfig::preset(Preset::Minimal)
}

fn read_report(dir: &Path) -> EvalReport {
    serde_json::from_slice(&std::fs::read(dir.join(files::REPORT)).unwrap()).unwrap()
}

#[test]
fn report_mae_recomputes_from_prediction_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&minimal(), Some(dir.path())).unwrap();
    assert_eq!(read_report(dir.path()), report);
    for (file, table) in [(files::TRJ_PREDICTIONS, &report.tables[0]), (files::STR_PREDICTIONS, &report.tables[1])] {
        let rows = read_predictions(dir.path().join(file)).unwrap();
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.yhat_log10, r.y_log10)).collect();
        assert_eq!(rows.len(), table.n);
        assert_eq!(mae(&pairs).unwrap(), table.mae, "{file}");
        for cell in &table.per_temperature {
            let sel: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.temperature == cell.temperature)
                .map(|r| (r.yhat_log10, r.y_log10))
                .collect();
            assert_eq!(sel.len(), cell.n);
            assert_eq!(mae(&sel).unwrap(), cell.mae);
        }
    }
}

#[test]
fn repeated_runs_write_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&minimal(), Some(a.path())).unwrap();
    run_pipeline(&minimal(), Some(b.path())).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 15, "{names:?}");
    for n in names {
        if n == files::TIMINGS {
            continue;
        }
        let (x, y) = (std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
        assert!(x == y, "{n:?} differs");
    }
    // Timings live only in the sidecar.
    let report = std::fs::read_to_string(a.path().join(files::REPORT)).unwrap();
    assert!(!report.contains("seconds") && !report.contains("timing"));
    assert!(a.path().join(files::TIMINGS).exists());
}

#[test]
fn other_seeds_give_other_reports() {
    let base = run_pipeline(&minimal(), None).unwrap();
    let mut cfg = minimal();
    cfg.seed = 7;
    let other = run_pipeline(&cfg, None).unwrap();
    assert_ne!(base.tables, other.tables);
}

#[test]
fn empty_test_split_is_reported_by_dataset() {
    let mut cfg = minimal();
    cfg.trj.test_fraction = 0.0;
    let msg = run_pipeline(&cfg, None).unwrap_err().to_string();
    assert!(msg.contains("trajectory") && msg.contains("test"), "{msg}");

    let mut cfg = minimal();
    cfg.str_data.test_fraction = 0.0;
    let msg = run_pipeline(&cfg, None).unwrap_err().to_string();
    assert!(msg.contains("structure") && msg.contains("test"), "{msg}");
}

#[test]
fn zero_step_gradient_distill_matches_random_encoder() {
    use ionpred::harness::PredictorInit;
    let mut cfg = minimal();
    cfg.pipeline.predictor_init = PredictorInit::Gradient;
    cfg.pipeline.distill_steps = 0;
    let dir_g = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, Some(dir_g.path())).unwrap();
    cfg.pipeline.predictor_init = PredictorInit::Random;
    let dir_r = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, Some(dir_r.path())).unwrap();
    let enc = |d: &Path| {
        ionpred::harness::pipeline::load_checkpoint(d.join(files::PREDICTOR_INIT))
            .unwrap()
            .matrix("W_trj")
            .unwrap()
    };
    assert_eq!(enc(dir_g.path()), enc(dir_r.path()));
}
