//! Ablation matrix and ridge-penalty sweep over many seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{config_diff, ConfigChange, ExperimentConfig};
use super::pipeline::{write_json, EvalReport, StageCache, Timings};
use super::stats::PairedComparison;
use crate::Result;

/// Which test error an arm is judged on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Predictor on the trajectory dataset.
    Trajectory,
    /// Structure predictor on the structure dataset.
    Structure,
}

impl Metric {
    pub fn of(&self, r: &EvalReport) -> f64 {
        match self {
            Metric::Trajectory => r.trajectory_mae(),
            Metric::Structure => r.structure_mae().expect("structure arms run the structure stage"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub metric: Metric,
    /// Dotted-key overrides applied to the base configuration.
    pub overrides: Vec<(String, String)>,
}

impl Arm {
    fn new(name: &str, metric: Metric, overrides: &[(&str, &str)]) -> Self {
        Arm {
            name: name.to_string(),
            metric,
            overrides: overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

pub const FULL: &str = "full";
pub const RANDOM_PREDICTOR: &str = "random-init-predictor";
pub const STRUCTURE_ONLY_PREDICTOR: &str = "structure-only-predictor";
pub const GRADIENT_DISTILL: &str = "gradient-distill";
pub const NO_TRAINER_REGULARIZATION: &str = "no-trainer-regularization";
pub const NO_POLYNOMIAL: &str = "no-polynomial-expansion";
pub const RANDOM_STRUCTURE: &str = "random-init-structure";
pub const STRUCTURE_ENCODER_FROM_PREDICTOR: &str = "structure-encoder-from-predictor";

/// The full pipeline followed by one arm per ablated component.
pub fn default_arms() -> Vec<Arm> {
    vec![
        Arm::new(FULL, Metric::Trajectory, &[]),
        Arm::new(RANDOM_PREDICTOR, Metric::Trajectory, &[("pipeline.predictor_init", "\"random\"")]),
        Arm::new(
            STRUCTURE_ONLY_PREDICTOR,
            Metric::Trajectory,
            &[("pipeline.predictor_init", "\"structure-only\"")],
        ),
        Arm::new(GRADIENT_DISTILL, Metric::Trajectory, &[("pipeline.predictor_init", "\"gradient\"")]),
        Arm::new(NO_TRAINER_REGULARIZATION, Metric::Trajectory, &[("train.trainer.lambda_b", "0.0")]),
        Arm::new(NO_POLYNOMIAL, Metric::Trajectory, &[("embed.polynomial", "false")]),
        Arm::new(RANDOM_STRUCTURE, Metric::Structure, &[("pipeline.structure_init", "\"random\"")]),
        Arm::new(
            STRUCTURE_ENCODER_FROM_PREDICTOR,
            Metric::Structure,
            &[("pipeline.structure_init", "\"predictor\"")],
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub name: String,
    pub metric: Metric,
    pub changes: Vec<ConfigChange>,
    pub reports: Vec<EvalReport>,
}

impl ArmResult {
    pub fn maes(&self, metric: Metric) -> Vec<f64> {
        self.reports.iter().map(|r| metric.of(r)).collect()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.distill.objective).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmResult>,
    /// Full pipeline (candidate) against each other arm (baseline), on that arm's metric.
    pub comparisons: Vec<PairedComparison>,
}

impl AblationReport {
    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn comparison(&self, baseline: &str) -> Option<&PairedComparison> {
        self.comparisons.iter().find(|c| c.baseline == baseline)
    }

    /// Writes `ablation.json`, a per-seed CSV and a comparison CSV.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(self, dir.join("ablation.json"))?;
        let mut w = csv::Writer::from_path(dir.join("ablation_per_seed.csv"))?;
        w.write_record(["arm", "seed", "trajectory_mae", "structure_mae", "distill_objective"])?;
        for arm in &self.arms {
            for r in &arm.reports {
                w.write_record([
                    arm.name.clone(),
                    r.seed.to_string(),
                    r.trajectory_mae().to_string(),
                    r.structure_mae().map_or(String::new(), |m| m.to_string()),
                    r.distill.objective.to_string(),
                ])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("ablation_summary.csv"))?;
        w.write_record([
            "arm",
            "metric",
            "full_mean_mae",
            "arm_mean_mae",
            "relative_improvement",
            "full_wins",
            "ties",
            "sign_test_p",
        ])?;
        for c in &self.comparisons {
            let metric = self.arm(&c.baseline).map(|a| a.metric);
            w.write_record([
                c.baseline.clone(),
                serde_json::to_string(&metric)?.trim_matches('"').to_string(),
                c.candidate_mean.to_string(),
                c.baseline_mean.to_string(),
                c.relative_improvement.to_string(),
                c.wins.to_string(),
                c.ties.to_string(),
                c.p_value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `arms` on every seed of `cfg.seeds`. The first arm is the reference
/// every other arm is compared against.
pub fn run_arms(cfg: &ExperimentConfig, arms: &[Arm], timings: &mut Timings) -> Result<AblationReport> {
    let configs: Vec<ExperimentConfig> = arms
        .iter()
        .map(|a| cfg.with_overrides(&a.overrides))
        .collect::<Result<_>>()?;
    let mut results: Vec<ArmResult> = arms
        .iter()
        .zip(&configs)
        .map(|(a, c)| ArmResult {
            name: a.name.clone(),
            metric: a.metric,
            changes: config_diff(cfg, c),
            reports: Vec::with_capacity(cfg.seeds.len()),
        })
        .collect();
    for &seed in &cfg.seeds {
        // Stages are shared across arms of one seed only.
        let mut cache = StageCache::new();
        for (i, (res, c)) in results.iter_mut().zip(&configs).enumerate() {
            // The reference arm feeds every comparison, so it always runs to the end.
            let with_structure = i == 0 || res.metric == Metric::Structure;
            res.reports.push(cache.run_through(c, seed, &res.name, with_structure, timings)?.report);
        }
    }
    let comparisons = results
        .iter()
        .skip(1)
        .map(|arm| {
            PairedComparison::new(
                &results[0].name,
                &arm.name,
                &cfg.seeds,
                &results[0].maes(arm.metric),
                &arm.maes(arm.metric),
            )
        })
        .collect::<Result<_>>()?;
    Ok(AblationReport {
        seeds: cfg.seeds.clone(),
        arms: results,
        comparisons,
    })
}

pub fn run_ablations(cfg: &ExperimentConfig, timings: &mut Timings) -> Result<AblationReport> {
    run_arms(cfg, &default_arms(), timings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda_r: f64,
    pub seed: u64,
    pub w_norm: f64,
    pub objective: f64,
    pub residual: f64,
    pub trajectory_mae: f64,
    pub structure_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub lambda_r: f64,
    pub mean_w_norm: f64,
    pub mean_trajectory_mae: f64,
    pub mean_structure_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweepReport {
    pub rows: Vec<LambdaRow>,
    /// One entry per penalty, in increasing order of `lambda_r`.
    pub summary: Vec<LambdaSummary>,
    /// Whether `‖W^trj‖_F` is nonincreasing in `lambda_r` for every seed.
    pub norm_monotone: bool,
    /// `(max − min) / min` of the mean trajectory MAE across penalties.
    pub mae_variation: f64,
}

impl LambdaSweepReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(self, dir.join("lambda_sweep.json"))?;
        let mut w = csv::Writer::from_path(dir.join("lambda_sweep.csv"))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Repeats the pipeline for every ridge penalty; the trainer is trained once
/// per seed and shared across penalties.
pub fn run_lambda_sweep(cfg: &ExperimentConfig, lambdas: &[f64], timings: &mut Timings) -> Result<LambdaSweepReport> {
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let configs: Vec<ExperimentConfig> = sorted
        .iter()
        .map(|l| cfg.with_overrides(&[("train.finetune.lambda_r", format!("{l:e}"))]))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut norm_monotone = true;
    for &seed in &cfg.seeds {
        let mut cache = StageCache::new();
        let mut prev_norm = f64::INFINITY;
        for (l, c) in sorted.iter().zip(&configs) {
            let r = cache.run(c, seed, &format!("lambda_r={l:e}"), timings)?.report;
            norm_monotone &= r.distill.w_norm <= prev_norm;
            prev_norm = r.distill.w_norm;
            rows.push(LambdaRow {
                lambda_r: *l,
                seed,
                w_norm: r.distill.w_norm,
                objective: r.distill.objective,
                residual: r.distill.residual,
                trajectory_mae: r.trajectory_mae(),
                structure_mae: r.structure_mae().expect("sweep runs the structure stage"),
            });
        }
    }
    let summary: Vec<LambdaSummary> = sorted
        .iter()
        .map(|&l| {
            let sel: Vec<&LambdaRow> = rows.iter().filter(|r| r.lambda_r == l).collect();
            let mean = |f: fn(&LambdaRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / sel.len() as f64;
            LambdaSummary {
                lambda_r: l,
                mean_w_norm: mean(|r| r.w_norm),
                mean_trajectory_mae: mean(|r| r.trajectory_mae),
                mean_structure_mae: mean(|r| r.structure_mae),
            }
        })
        .collect();
    let maes: Vec<f64> = summary.iter().map(|s| s.mean_trajectory_mae).collect();
    let (lo, hi) = maes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| (lo.min(m), hi.max(m)));
    Ok(LambdaSweepReport {
        rows,
        summary,
        norm_monotone,
        mae_variation: (hi - lo) / lo,
    })
}
