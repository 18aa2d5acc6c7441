use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ionpred::dataset::Dataset;
use ionpred::embed::EmbeddedDataset;
use ionpred::error::StageContext;
use ionpred::harness::pipeline::{
    self, files, load_checkpoint, path_in, read_json, write_json, write_predictions, DistillSummary,
    EvalReport, EvalTable, Timings,
};
use ionpred::harness::{run_ablations, run_lambda_sweep, run_pipeline, ExperimentConfig, Preset};
use ionpred::training::{DualModalTrainer, Predictor, TrainLog};
use ionpred::{Error, Result};

#[derive(Parser)]
#[command(name = "ionpred", version, about = "Ionic transport prediction with trajectories as a training-only input")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment directory holding the config snapshot and all artifacts.
    #[arg(long)]
    dir: PathBuf,
    /// Config file; defaults to the snapshot in --dir, then to the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    preset: PresetArg,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-key override such as `train.trainer.epochs=10`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Default,
    LongStructure,
    Reference,
    Minimal,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Default => Preset::Default,
            PresetArg::LongStructure => Preset::LongStructure,
            PresetArg::Reference => Preset::Reference,
            PresetArg::Minimal => Preset::Minimal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    ClosedForm,
    Gradient,
    Random,
    StructureOnly,
}

#[derive(Subcommand)]
enum Command {
    /// Generate both synthetic datasets and write the config snapshot.
    Generate(Common),
    /// Precompute trajectory and structure–temperature embeddings.
    Embed(Common),
    /// Train the dual-modal trainer on the trajectory dataset.
    TrainTrainer(Common),
    /// Initialize the structure-only predictor from the trainer.
    InitPredictor {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Fine-tune the initialized predictor.
    Finetune(Common),
    /// Initialize the structure-dataset predictor from trained components.
    Transfer(Common),
    /// Train the structure-dataset predictor.
    TrainStructure(Common),
    /// Evaluate both predictors on their test splits.
    Evaluate(Common),
    /// Run every stage in order.
    Run(Common),
    /// Run the ablation matrix over all configured seeds.
    Ablate(Common),
    /// Sweep the ridge penalty over all configured seeds.
    SweepLambda {
        #[command(flatten)]
        common: Common,
        /// Comma-separated penalties; defaults to the config's grid.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
    },
}

fn resolve_config(c: &Common) -> Result<ExperimentConfig> {
    let snapshot = path_in(&c.dir, files::CONFIG);
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if snapshot.exists() => ExperimentConfig::load(&snapshot)?,
        None => ExperimentConfig::preset(c.preset.into()),
    };
    let mut pairs = Vec::new();
    for o in &c.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
        // Bare words are taken as strings.
        let v = v.trim();
        let literal = if toml::from_str::<toml::Table>(&format!("v = {v}")).is_ok() {
            v.to_string()
        } else {
            format!("\"{v}\"")
        };
        pairs.push((k.trim().to_string(), literal));
    }
    cfg = cfg.with_overrides(&pairs)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn prepare(c: &Common) -> Result<ExperimentConfig> {
    let cfg = resolve_config(c).stage("config")?;
    std::fs::create_dir_all(&c.dir)?;
    cfg.save(path_in(&c.dir, files::CONFIG))?;
    Ok(cfg)
}

fn read_embedded(dir: &Path) -> Result<(EmbeddedDataset, EmbeddedDataset)> {
    Ok((
        EmbeddedDataset::read_jsonl(path_in(dir, files::TRJ_EMBEDDED))?,
        EmbeddedDataset::read_jsonl(path_in(dir, files::STR_EMBEDDED))?,
    ))
}

fn read_trainer(dir: &Path) -> Result<DualModalTrainer> {
    DualModalTrainer::from_checkpoint(&load_checkpoint(path_in(dir, files::TRAINER))?)
}

fn read_predictor(dir: &Path, file: &str, name: &str) -> Result<Predictor> {
    Predictor::from_checkpoint(&load_checkpoint(path_in(dir, file))?, name)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(c) => {
            let cfg = prepare(&c)?;
            let ds = pipeline::generate(&cfg, cfg.seed).stage("generate")?;
            ds.trj.write_jsonl(path_in(&c.dir, files::TRJ_DATA))?;
            ds.str_data.write_jsonl(path_in(&c.dir, files::STR_DATA))?;
        }
        Command::Embed(c) => {
            let cfg = prepare(&c)?;
            let ds = pipeline::Datasets {
                trj: Dataset::read_jsonl(path_in(&c.dir, files::TRJ_DATA)).stage("embed")?,
                str_data: Dataset::read_jsonl(path_in(&c.dir, files::STR_DATA)).stage("embed")?,
            };
            let e = pipeline::embed(&cfg, &ds).stage("embed")?;
            e.trj.write_jsonl(path_in(&c.dir, files::TRJ_EMBEDDED))?;
            e.str_data.write_jsonl(path_in(&c.dir, files::STR_EMBEDDED))?;
        }
        Command::TrainTrainer(c) => {
            let cfg = prepare(&c)?;
            let (trj, _) = read_embedded(&c.dir).stage("train-trainer")?;
            let (g, log) = pipeline::train_trainer(&cfg, cfg.seed, &trj).stage("train-trainer")?;
            g.to_checkpoint().save(path_in(&c.dir, files::TRAINER))?;
            log.write_csv(path_in(&c.dir, files::TRAINER_LOG))?;
        }
        Command::InitPredictor { mut common, method } => {
            if let Some(m) = method {
                let v = match m {
                    Method::ClosedForm => "closed-form",
                    Method::Gradient => "gradient",
                    Method::Random => "random",
                    Method::StructureOnly => "structure-only",
                };
                common.overrides.push(format!("pipeline.predictor_init={v}"));
            }
            let cfg = prepare(&common)?;
            let dir = &common.dir;
            let (trj, _) = read_embedded(dir).stage("init-predictor")?;
            let g = read_trainer(dir).stage("init-predictor")?;
            let (f, summary, log) = pipeline::init_predictor(&cfg, cfg.seed, &g, &trj).stage("init-predictor")?;
            f.to_checkpoint("W_trj").save(path_in(dir, files::PREDICTOR_INIT))?;
            write_json(&summary, path_in(dir, files::DISTILL))?;
            if let Some(log) = log {
                log.write_csv(path_in(dir, files::PRETRAIN_LOG))?;
            }
        }
        Command::Finetune(c) => {
            let cfg = prepare(&c)?;
            let (trj, _) = read_embedded(&c.dir).stage("finetune")?;
            let f = read_predictor(&c.dir, files::PREDICTOR_INIT, "W_trj").stage("finetune")?;
            let (f, log) = pipeline::finetune(&cfg, cfg.seed, &f, &trj).stage("finetune")?;
            f.to_checkpoint("W_trj").save(path_in(&c.dir, files::PREDICTOR))?;
            log.write_csv(path_in(&c.dir, files::FINETUNE_LOG))?;
        }
        Command::Transfer(c) => {
            let cfg = prepare(&c)?;
            let g = read_trainer(&c.dir).stage("transfer")?;
            let f1 = read_predictor(&c.dir, files::PREDICTOR, "W_trj").stage("transfer")?;
            let f2 = pipeline::transfer(&cfg, cfg.seed, &g, &f1).stage("transfer")?;
            f2.to_checkpoint("W_str").save(path_in(&c.dir, files::STRUCTURE_INIT))?;
        }
        Command::TrainStructure(c) => {
            let cfg = prepare(&c)?;
            let (_, str_data) = read_embedded(&c.dir).stage("train-structure")?;
            let f2 = read_predictor(&c.dir, files::STRUCTURE_INIT, "W_str").stage("train-structure")?;
            let (f2, log) = pipeline::train_structure(&cfg, cfg.seed, &f2, &str_data).stage("train-structure")?;
            f2.to_checkpoint("W_str").save(path_in(&c.dir, files::STRUCTURE))?;
            log.write_csv(path_in(&c.dir, files::STRUCTURE_LOG))?;
        }
        Command::Evaluate(c) => {
            let cfg = prepare(&c)?;
            evaluate(&cfg, &c.dir).stage("evaluate")?;
        }
        Command::Run(c) => {
            let cfg = prepare(&c)?;
            let report = run_pipeline(&cfg, Some(&c.dir))?;
            print_report(&report);
        }
        Command::Ablate(c) => {
            let cfg = prepare(&c)?;
            let mut timings = Timings::default();
            let report = run_ablations(&cfg, &mut timings).stage("ablate")?;
            report.write(&c.dir)?;
            write_json(&timings, path_in(&c.dir, "ablation_timings.json"))?;
            for cmp in &report.comparisons {
                println!(
                    "{:<34} full {:.4} vs {:.4}  wins {}/{}  p = {:.3e}",
                    cmp.baseline,
                    cmp.candidate_mean,
                    cmp.baseline_mean,
                    cmp.wins,
                    cmp.seeds.len(),
                    cmp.p_value
                );
            }
        }
        Command::SweepLambda { common, lambdas } => {
            let cfg = prepare(&common)?;
            let grid = if lambdas.is_empty() { cfg.lambda_grid.clone() } else { lambdas };
            let mut timings = Timings::default();
            let report = run_lambda_sweep(&cfg, &grid, &mut timings).stage("sweep-lambda")?;
            report.write(&common.dir)?;
            write_json(&timings, path_in(&common.dir, "lambda_sweep_timings.json"))?;
            for s in &report.summary {
                println!(
                    "lambda_r {:>8.1e}  |W|_F {:>10.4}  trajectory MAE {:.4}  structure MAE {:.4}",
                    s.lambda_r, s.mean_w_norm, s.mean_trajectory_mae, s.mean_structure_mae
                );
            }
            println!("norm monotone: {}  MAE variation: {:.2}%", report.norm_monotone, 100.0 * report.mae_variation);
        }
    }
    Ok(())
}

/// Rebuilds the report from artifacts written by the earlier stages.
fn evaluate(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let (trj, str_data) = read_embedded(dir)?;
    let f1 = read_predictor(dir, files::PREDICTOR, "W_trj")?;
    let f2 = read_predictor(dir, files::STRUCTURE, "W_str")?;
    let trj_rows = pipeline::predict_split(&f1, &trj)?;
    let str_rows = pipeline::predict_split(&f2, &str_data)?;
    let distill: DistillSummary = read_json(path_in(dir, files::DISTILL))?;
    let trainer_log = TrainLog::read_csv(path_in(dir, files::TRAINER_LOG))?;
    let final_l1 = |name: &str| -> Result<f64> {
        Ok(TrainLog::read_csv(path_in(dir, name))?.last().map_or(f64::NAN, |e| e.train_l1))
    };
    let last = trainer_log.last();
    let report = EvalReport {
        label: "pipeline".to_string(),
        seed: cfg.seed,
        predictor_init: cfg.pipeline.predictor_init,
        structure_init: cfg.pipeline.structure_init,
        distill,
        trainer_final_l1: last.map_or(f64::NAN, |e| e.train_l1),
        trainer_final_aux_l1: last.and_then(|e| e.aux_l1).unwrap_or(f64::NAN),
        finetune_final_l1: final_l1(files::FINETUNE_LOG)?,
        structure_final_l1: Some(final_l1(files::STRUCTURE_LOG)?),
        tables: vec![
            EvalTable::from_rows("trajectory", "predictor", &trj_rows)?,
            EvalTable::from_rows("structure", "structure-predictor", &str_rows)?,
        ],
    };
    write_predictions(&trj_rows, path_in(dir, files::TRJ_PREDICTIONS))?;
    write_predictions(&str_rows, path_in(dir, files::STR_PREDICTIONS))?;
    report.save(path_in(dir, files::REPORT))?;
    print_report(&report);
    Ok(())
}

fn print_report(r: &EvalReport) {
    for t in &r.tables {
        println!("{} dataset, {}: MAE {:.4} over {} test samples", t.dataset, t.model, t.mae, t.n);
        for cell in &t.per_temperature {
            println!("  T = {:>8}  n = {:>4}  MAE {:.4}", cell.temperature, cell.n, cell.mae);
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
