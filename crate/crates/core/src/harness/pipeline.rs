//! The end-to-end pipeline and its individually runnable stages.
//!
//! Stages are pure functions of the configuration and the run seed; every
//! stage draws its randomness from its own stream derived from that seed.
//! [`StageCache`] lets several configurations that share upstream settings
//! reuse the shared stages.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PredictorInit, StructureInit};
use super::stats::mae;
use crate::dataset::{validate_dataset, Dataset, DatasetKind, Split};
use crate::embed::{build_x_with, embed_dataset, EmbeddedDataset, EmbeddedSample};
use crate::error::StageContext;
use crate::numerics::{normal_equation_residual, ridge_objective, Checkpoint};
use crate::synth::{make_dataset, TARGET_SPECIES};
use crate::training::{
    closed_form_init, data_level_init_from, distill_problem, finetune_predictor, gradient_distill_init,
    predict, train_dual_modal, train_structure_predictor, DualModalTrainer, Predictor,
    StructureEncoderSource, TrainConfig, TrainLog,
};
use crate::{Error, Result};

/// Seed streams of the individual stages.
pub mod stream {
    pub const TRJ_DATA: u64 = 1;
    pub const STR_DATA: u64 = 2;
    pub const TRAINER_INIT: u64 = 3;
    pub const TRAINER_SHUFFLE: u64 = 4;
    pub const PREDICTOR_INIT: u64 = 5;
    pub const PRETRAIN_SHUFFLE: u64 = 6;
    pub const FINETUNE_SHUFFLE: u64 = 7;
    pub const STRUCTURE_INIT: u64 = 8;
    pub const STRUCTURE_SHUFFLE: u64 = 9;
}

/// File names inside an experiment directory.
pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const TRJ_DATA: &str = "trj.jsonl";
    pub const STR_DATA: &str = "str.jsonl";
    pub const TRJ_EMBEDDED: &str = "trj_embedded.jsonl";
    pub const STR_EMBEDDED: &str = "str_embedded.jsonl";
    pub const TRAINER: &str = "trainer.ckpt.json";
    pub const TRAINER_LOG: &str = "trainer_log.csv";
    pub const PREDICTOR_INIT: &str = "predictor_init.ckpt.json";
    pub const DISTILL: &str = "distill.json";
    pub const PRETRAIN_LOG: &str = "pretrain_log.csv";
    pub const PREDICTOR: &str = "predictor.ckpt.json";
    pub const FINETUNE_LOG: &str = "finetune_log.csv";
    pub const STRUCTURE_INIT: &str = "structure_init.ckpt.json";
    pub const STRUCTURE: &str = "structure.ckpt.json";
    pub const STRUCTURE_LOG: &str = "structure_log.csv";
    pub const REPORT: &str = "report.json";
    pub const TRJ_PREDICTIONS: &str = "predictions_trj.csv";
    pub const STR_PREDICTIONS: &str = "predictions_str.csv";
    pub const TIMINGS: &str = "timings.json";
}

fn seed_of(run_seed: u64, stream: u64) -> u64 {
    ExperimentConfig::stage_seed(run_seed, stream)
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

fn check_dataset(ds: &Dataset, name: &str) -> Result<()> {
    let problems = validate_dataset(ds);
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidDataset(format!("{name} dataset: {}", problems.join("; "))))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    pub trj: Dataset,
    pub str_data: Dataset,
}

/// Generates and validates both datasets.
pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<Datasets> {
    let trj = make_dataset(&cfg.trj.recipe(DatasetKind::TrajectoryBased, seed_of(seed, stream::TRJ_DATA)))?;
    check_dataset(&trj, "trajectory")?;
    let str_data = make_dataset(&cfg.str_data.recipe(DatasetKind::StructureBased, seed_of(seed, stream::STR_DATA)))?;
    check_dataset(&str_data, "structure")?;
    Ok(Datasets { trj, str_data })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedded {
    pub trj: EmbeddedDataset,
    pub str_data: EmbeddedDataset,
}

pub fn embed(cfg: &ExperimentConfig, ds: &Datasets) -> Result<Embedded> {
    Ok(Embedded {
        trj: embed_dataset(&ds.trj, &cfg.embed)?,
        str_data: embed_dataset(&ds.str_data, &cfg.embed)?,
    })
}

pub fn train_trainer(cfg: &ExperimentConfig, seed: u64, trj: &EmbeddedDataset) -> Result<(DualModalTrainer, TrainLog)> {
    let train = trj.split(Split::Train);
    let d_p = trj
        .p_dim()
        .ok_or_else(|| Error::InvalidDataset("trajectory dataset has no trajectory embeddings".into()))?;
    let g = DualModalTrainer::new(d_p, trj.x_dim(), cfg.model.d_h, &cfg.model.hidden, seed_of(seed, stream::TRAINER_INIT))?;
    train_dual_modal(&g, &train, &with_seed(&cfg.train.trainer, seed_of(seed, stream::TRAINER_SHUFFLE)))
}

/// How well the predictor encoder reproduces the trainer's hidden vectors
/// right after initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillSummary {
    pub method: PredictorInit,
    pub lambda_r: f64,
    /// `‖XW − H‖² + λ_r‖W‖²`.
    pub objective: f64,
    /// Relative residual of the normal equations.
    pub residual: f64,
    /// `‖W‖_F` of the initialized encoder.
    pub w_norm: f64,
}

/// Builds the trajectory-dataset predictor before fine-tuning.
pub fn init_predictor(
    cfg: &ExperimentConfig,
    seed: u64,
    g: &DualModalTrainer,
    trj: &EmbeddedDataset,
) -> Result<(Predictor, DistillSummary, Option<TrainLog>)> {
    let train = trj.split(Split::Train);
    let lambda_r = cfg.train.finetune.lambda_r;
    let init_seed = seed_of(seed, stream::PREDICTOR_INIT);
    let random = || Predictor::random(trj.x_dim(), cfg.model.d_h, &cfg.model.hidden, init_seed);
    let (f, log) = match cfg.pipeline.predictor_init {
        PredictorInit::ClosedForm => (closed_form_init(g, &train, lambda_r)?, None),
        PredictorInit::Gradient => (
            gradient_distill_init(g, &train, cfg.pipeline.distill_steps, cfg.pipeline.distill_lr, lambda_r, init_seed)?,
            None,
        ),
        PredictorInit::Random => (random()?, None),
        PredictorInit::StructureOnly => {
            let pre = with_seed(&cfg.train.trainer, seed_of(seed, stream::PRETRAIN_SHUFFLE));
            let (f, log) = finetune_predictor(&random()?, &train, &pre)?;
            (f, Some(log))
        }
    };
    let prob = distill_problem(g, &train)?;
    let summary = DistillSummary {
        method: cfg.pipeline.predictor_init,
        lambda_r,
        objective: ridge_objective(&prob.x, &prob.h, lambda_r, &f.w)?,
        residual: normal_equation_residual(&prob.x, &prob.h, lambda_r, &f.w)?,
        w_norm: f.w.frobenius_norm(),
    };
    Ok((f, summary, log))
}

pub fn finetune(cfg: &ExperimentConfig, seed: u64, f1: &Predictor, trj: &EmbeddedDataset) -> Result<(Predictor, TrainLog)> {
    let train = trj.split(Split::Train);
    finetune_predictor(f1, &train, &with_seed(&cfg.train.finetune, seed_of(seed, stream::FINETUNE_SHUFFLE)))
}

/// Builds the structure-dataset predictor before training.
pub fn transfer(cfg: &ExperimentConfig, seed: u64, g: &DualModalTrainer, f1: &Predictor) -> Result<Predictor> {
    match cfg.pipeline.structure_init {
        StructureInit::Trainer => data_level_init_from(g, f1, StructureEncoderSource::Trainer),
        StructureInit::Predictor => data_level_init_from(g, f1, StructureEncoderSource::Predictor),
        StructureInit::Random => Predictor::random(
            f1.d_xt(),
            cfg.model.d_h,
            &cfg.model.hidden,
            seed_of(seed, stream::STRUCTURE_INIT),
        ),
    }
}

pub fn train_structure(cfg: &ExperimentConfig, seed: u64, f2: &Predictor, str_data: &EmbeddedDataset) -> Result<(Predictor, TrainLog)> {
    let train = str_data.split(Split::Train);
    train_structure_predictor(f2, &train, &with_seed(&cfg.train.structure, seed_of(seed, stream::STRUCTURE_SHUFFLE)))
}

/// One row of a prediction CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub temperature: f64,
    pub y_log10: f64,
    pub yhat_log10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureCell {
    pub temperature: f64,
    pub n: usize,
    pub mae: f64,
}

/// Test-split errors of one model on one dataset, overall and per temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub dataset: String,
    pub model: String,
    pub n: usize,
    pub mae: f64,
    pub per_temperature: Vec<TemperatureCell>,
}

impl EvalTable {
    /// Aggregates prediction rows in row order.
    pub fn from_rows(dataset: &str, model: &str, rows: &[PredictionRow]) -> Result<Self> {
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.yhat_log10, r.y_log10)).collect();
        let mut by_t: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
        for r in rows {
            // Positive floats order like their bit patterns.
            by_t.entry(r.temperature.to_bits()).or_default().push((r.yhat_log10, r.y_log10));
        }
        let per_temperature = by_t
            .into_iter()
            .map(|(bits, pairs)| {
                Ok(TemperatureCell {
                    temperature: f64::from_bits(bits),
                    n: pairs.len(),
                    mae: mae(&pairs)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EvalTable {
            dataset: dataset.to_string(),
            model: model.to_string(),
            n: rows.len(),
            mae: mae(&pairs)?,
            per_temperature,
        })
    }
}

/// Predicts every test sample of `ds`.
pub fn predict_split(f: &Predictor, ds: &EmbeddedDataset) -> Result<Vec<PredictionRow>> {
    let test: Vec<&EmbeddedSample> = ds.split(Split::Test);
    if test.is_empty() {
        return Err(Error::InvalidDataset("test split is empty".into()));
    }
    test.into_iter()
        .map(|s| {
            Ok(PredictionRow {
                id: s.id.clone(),
                temperature: s.temperature,
                y_log10: s.y_log10,
                yhat_log10: predict(f, &s.x_vec)?,
            })
        })
        .collect()
}

pub fn write_predictions(rows: &[PredictionRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Deterministic outcome of one pipeline run. Wall-clock timings live in a
/// separate [`Timings`] record so that reports compare byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub seed: u64,
    pub predictor_init: PredictorInit,
    pub structure_init: StructureInit,
    pub distill: DistillSummary,
    pub trainer_final_l1: f64,
    pub trainer_final_aux_l1: f64,
    pub finetune_final_l1: f64,
    /// Absent when the run stopped before the structure dataset.
    pub structure_final_l1: Option<f64>,
    /// Predictor on the trajectory dataset, then (if run) on the structure dataset.
    pub tables: Vec<EvalTable>,
}

impl EvalReport {
    pub fn trajectory_mae(&self) -> f64 {
        self.tables[0].mae
    }

    pub fn structure_mae(&self) -> Option<f64> {
        self.tables.get(1).map(|t| t.mae)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }
}

/// Seconds spent per stage, plus structure-only inference cost per sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: BTreeMap<String, f64>,
    /// Embedding plus forward pass, averaged over structure-dataset test samples.
    pub inference_per_sample: Option<f64>,
}

impl Timings {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        *self.stages.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
        Ok(out)
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

/// Everything a run produced, kept for artifact writing and inspection.
#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub datasets: Rc<Datasets>,
    pub embedded: Rc<Embedded>,
    pub trainer: Rc<(DualModalTrainer, TrainLog)>,
    pub predictor: Rc<PredictorStage>,
    pub structure: Option<Rc<StructureStage>>,
    pub trj_predictions: Vec<PredictionRow>,
    pub str_predictions: Vec<PredictionRow>,
    pub report: EvalReport,
}

#[derive(Clone, Debug)]
pub struct PredictorStage {
    pub init: Predictor,
    pub summary: DistillSummary,
    pub pretrain_log: Option<TrainLog>,
    pub tuned: Predictor,
    pub log: TrainLog,
}

#[derive(Clone, Debug)]
pub struct StructureStage {
    pub init: Predictor,
    pub trained: Predictor,
    pub log: TrainLog,
}

/// Memoizes stages across configurations that agree on every setting the
/// stage depends on. Keys include the run seed.
#[derive(Default)]
pub struct StageCache {
    datasets: HashMap<String, Rc<Datasets>>,
    embedded: HashMap<String, Rc<Embedded>>,
    trainers: HashMap<String, Rc<(DualModalTrainer, TrainLog)>>,
    predictors: HashMap<String, Rc<PredictorStage>>,
    structures: HashMap<String, Rc<StructureStage>>,
}

fn key<T: Serialize>(parts: &T) -> String {
    serde_json::to_string(parts).expect("configuration serializes to JSON")
}

fn cached<T>(map: &mut HashMap<String, Rc<T>>, k: String, f: impl FnOnce() -> Result<T>) -> Result<Rc<T>> {
    if let Some(v) = map.get(&k) {
        return Ok(Rc::clone(v));
    }
    let v = Rc::new(f()?);
    map.insert(k, Rc::clone(&v));
    Ok(v)
}

impl StageCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs every stage for `seed`, reusing cached upstream stages.
    pub fn run(&mut self, cfg: &ExperimentConfig, seed: u64, label: &str, timings: &mut Timings) -> Result<RunOutputs> {
        self.run_through(cfg, seed, label, true, timings)
    }

    /// As [`StageCache::run`]; with `with_structure` false, stops after the
    /// trajectory-dataset predictor.
    pub fn run_through(
        &mut self,
        cfg: &ExperimentConfig,
        seed: u64,
        label: &str,
        with_structure: bool,
        timings: &mut Timings,
    ) -> Result<RunOutputs> {
        cfg.validate()?;
        let k_data = key(&(seed, &cfg.trj, &cfg.str_data));
        let datasets = cached(&mut self.datasets, k_data.clone(), || {
            timings.time("generate", || generate(cfg, seed)).stage("generate")
        })?;
        let k_embed = key(&(&k_data, &cfg.embed));
        let embedded = cached(&mut self.embedded, k_embed.clone(), || {
            timings.time("embed", || embed(cfg, &datasets)).stage("embed")
        })?;
        let k_trainer = key(&(&k_embed, &cfg.model, &cfg.train.trainer));
        let trainer = cached(&mut self.trainers, k_trainer.clone(), || {
            timings
                .time("train-trainer", || train_trainer(cfg, seed, &embedded.trj))
                .stage("train-trainer")
        })?;
        let k_pred = key(&(
            &k_trainer,
            cfg.pipeline.predictor_init,
            cfg.pipeline.distill_steps,
            cfg.pipeline.distill_lr,
            &cfg.train.finetune,
        ));
        let predictor = cached(&mut self.predictors, k_pred.clone(), || {
            let (init, summary, pretrain_log) = timings
                .time("init-predictor", || init_predictor(cfg, seed, &trainer.0, &embedded.trj))
                .stage("init-predictor")?;
            let (tuned, log) = timings
                .time("finetune", || finetune(cfg, seed, &init, &embedded.trj))
                .stage("finetune")?;
            Ok(PredictorStage {
                init,
                summary,
                pretrain_log,
                tuned,
                log,
            })
        })?;
        let k_struct = key(&(&k_pred, cfg.pipeline.structure_init, &cfg.train.structure));
        let structure = if with_structure {
            Some(cached(&mut self.structures, k_struct, || {
                let init = timings
                    .time("transfer", || transfer(cfg, seed, &trainer.0, &predictor.tuned))
                    .stage("transfer")?;
                let (trained, log) = timings
                    .time("train-structure", || train_structure(cfg, seed, &init, &embedded.str_data))
                    .stage("train-structure")?;
                Ok(StructureStage { init, trained, log })
            })?)
        } else {
            None
        };

        let (trj_predictions, str_predictions, tables) = timings
            .time("evaluate", || {
                let trj_rows = predict_split(&predictor.tuned, &embedded.trj)
                    .map_err(|e| Error::InvalidDataset(format!("trajectory dataset: {e}")))?;
                let mut tables = vec![EvalTable::from_rows("trajectory", "predictor", &trj_rows)?];
                let mut str_rows = Vec::new();
                if let Some(st) = &structure {
                    str_rows = predict_split(&st.trained, &embedded.str_data)
                        .map_err(|e| Error::InvalidDataset(format!("structure dataset: {e}")))?;
                    tables.push(EvalTable::from_rows("structure", "structure-predictor", &str_rows)?);
                }
                Ok((trj_rows, str_rows, tables))
            })
            .stage("evaluate")?;
        let final_l1 = |log: &TrainLog| log.last().map_or(f64::NAN, |e| e.train_l1);
        let report = EvalReport {
            label: label.to_string(),
            seed,
            predictor_init: cfg.pipeline.predictor_init,
            structure_init: cfg.pipeline.structure_init,
            distill: predictor.summary.clone(),
            trainer_final_l1: final_l1(&trainer.1),
            trainer_final_aux_l1: trainer.1.last().and_then(|e| e.aux_l1).unwrap_or(f64::NAN),
            finetune_final_l1: final_l1(&predictor.log),
            structure_final_l1: structure.as_ref().map(|st| final_l1(&st.log)),
            tables,
        };
        Ok(RunOutputs {
            datasets,
            embedded,
            trainer,
            predictor,
            structure,
            trj_predictions,
            str_predictions,
            report,
        })
    }
}

/// Mean time to embed and predict one structure-dataset test sample.
fn inference_time(cfg: &ExperimentConfig, ds: &Dataset, f: &Predictor) -> Result<Option<f64>> {
    let test: Vec<_> = ds.split(Split::Test).collect();
    if test.is_empty() {
        return Ok(None);
    }
    let start = Instant::now();
    for s in &test {
        let x = build_x_with(&s.structure, s.temperature, ds.t_norm, TARGET_SPECIES, cfg.embed.polynomial)?;
        std::hint::black_box(predict(f, &x.vec)?);
    }
    Ok(Some(start.elapsed().as_secs_f64() / test.len() as f64))
}

/// Runs the full pipeline for `cfg.seed`. With `dir`, writes the config
/// snapshot, datasets, embeddings, checkpoints, logs, predictions, the report
/// and the timing sidecar there.
pub fn run_pipeline(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<EvalReport> {
    let mut timings = Timings::default();
    let out = StageCache::new().run(cfg, cfg.seed, "pipeline", &mut timings)?;
    if let Some(dir) = dir {
        let f2 = &out.structure.as_ref().expect("full run trains the structure predictor").trained;
        timings.inference_per_sample = inference_time(cfg, &out.datasets.str_data, f2)?;
        write_artifacts(cfg, dir, &out, &timings).stage("write-artifacts")?;
    }
    Ok(out.report)
}

pub fn path_in(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn write_artifacts(cfg: &ExperimentConfig, dir: &Path, out: &RunOutputs, timings: &Timings) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let p = |name| path_in(dir, name);
    cfg.save(p(files::CONFIG))?;
    out.datasets.trj.write_jsonl(p(files::TRJ_DATA))?;
    out.datasets.str_data.write_jsonl(p(files::STR_DATA))?;
    out.embedded.trj.write_jsonl(p(files::TRJ_EMBEDDED))?;
    out.embedded.str_data.write_jsonl(p(files::STR_EMBEDDED))?;
    out.trainer.0.to_checkpoint().save(p(files::TRAINER))?;
    out.trainer.1.write_csv(p(files::TRAINER_LOG))?;
    out.predictor.init.to_checkpoint("W_trj").save(p(files::PREDICTOR_INIT))?;
    write_json(&out.predictor.summary, p(files::DISTILL))?;
    if let Some(log) = &out.predictor.pretrain_log {
        log.write_csv(p(files::PRETRAIN_LOG))?;
    }
    out.predictor.tuned.to_checkpoint("W_trj").save(p(files::PREDICTOR))?;
    out.predictor.log.write_csv(p(files::FINETUNE_LOG))?;
    if let Some(st) = &out.structure {
        st.init.to_checkpoint("W_str").save(p(files::STRUCTURE_INIT))?;
        st.trained.to_checkpoint("W_str").save(p(files::STRUCTURE))?;
        st.log.write_csv(p(files::STRUCTURE_LOG))?;
    }
    write_predictions(&out.trj_predictions, p(files::TRJ_PREDICTIONS))?;
    write_predictions(&out.str_predictions, p(files::STR_PREDICTIONS))?;
    out.report.save(p(files::REPORT))?;
    write_json(timings, p(files::TIMINGS))?;
    Ok(())
}

/// Loads a checkpoint and names the file on failure.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::load(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
