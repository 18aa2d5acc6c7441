//! Dual-modal training, distillation into a structure-only predictor, and
//! transfer of that predictor to a structure-based dataset.
//!
//! Both model types share the same shape of forward pass: a bias-free
//! linear encoder, a layer normalization without affine parameters, and an
//! MLP decoder with a scalar output. The trainer additionally encodes the
//! trajectory embedding and adds the two hidden vectors.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddedSample;
use crate::numerics::{
    l1_loss, layernorm, layernorm_backward, ridge_gradient, ridge_solve, AdamState, Checkpoint,
    DenseMatrix, Mlp,
};
use crate::{Error, Result};

pub const DEFAULT_HIDDEN_DIM: usize = 8;
pub const DEFAULT_LAMBDA_B: f64 = 1.0;
pub const DEFAULT_LAMBDA_R: f64 = 1e-5;

/// Learning rates of the three parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrGroups {
    /// Every linear encoder.
    pub encoder: f64,
    /// Decoder affine layers 0 and 1.
    pub decoder_early: f64,
    /// Decoder affine layers 2 onwards, including the output layer.
    pub decoder_late: f64,
}

impl LrGroups {
    pub fn uniform(lr: f64) -> Self {
        LrGroups {
            encoder: lr,
            decoder_early: lr,
            decoder_late: lr,
        }
    }

    fn as_vec(&self) -> Vec<f64> {
        vec![self.encoder, self.decoder_early, self.decoder_late]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the structure-only auxiliary loss of the trainer.
    pub lambda_b: f64,
    /// Ridge penalty of the closed-form initialization.
    pub lambda_r: f64,
    pub epochs: usize,
    pub lr: LrGroups,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    /// Samples per Adam update; gradients are averaged within a batch.
    pub batch_size: usize,
    /// Shuffle seed; the harness derives it from the run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl TrainConfig {
    /// Dual-modal trainer: Adam 1e-3 for 50 epochs.
    pub fn trainer() -> Self {
        TrainConfig {
            lambda_b: DEFAULT_LAMBDA_B,
            lambda_r: DEFAULT_LAMBDA_R,
            epochs: 50,
            lr: LrGroups::uniform(1e-3),
            lr_decay: 1.0,
            batch_size: 1,
            seed: 0,
        }
    }

    /// Predictor fine-tuning after closed-form initialization: 1e-5 for 50 epochs.
    pub fn finetune() -> Self {
        TrainConfig {
            epochs: 50,
            lr: LrGroups::uniform(1e-5),
            ..Self::trainer()
        }
    }

    /// Structure-dataset predictor, short schedule: 100 epochs, 1% decay.
    pub fn structure() -> Self {
        TrainConfig {
            epochs: 100,
            lr: LrGroups {
                encoder: 1e-2,
                decoder_early: 1e-4,
                decoder_late: 1e-6,
            },
            lr_decay: 0.99,
            ..Self::trainer()
        }
    }

    /// Structure-dataset predictor, long schedule: 1000 epochs, 0.1% decay.
    pub fn structure_long() -> Self {
        TrainConfig {
            epochs: 1000,
            lr_decay: 0.999,
            ..Self::structure()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lrs = self.lr.as_vec();
        let problem = if !(self.lambda_r > 0.0) || !self.lambda_r.is_finite() {
            Some(format!("lambda_r must be positive, got {}", self.lambda_r))
        } else if !(self.lambda_b >= 0.0) || !self.lambda_b.is_finite() {
            Some(format!("lambda_b must be non-negative, got {}", self.lambda_b))
        } else if self.epochs == 0 {
            Some("epochs must be at least 1".to_string())
        } else if self.batch_size == 0 {
            Some("batch_size must be at least 1".to_string())
        } else if lrs.iter().any(|lr| !(*lr >= 0.0) || !lr.is_finite()) {
            Some(format!("learning rates must be finite and non-negative, got {lrs:?}"))
        } else if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            Some(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay))
        } else {
            None
        };
        match problem {
            Some(msg) => Err(Error::Config(msg)),
            None => Ok(()),
        }
    }
}

/// `[d_h, hidden..., 1]`.
pub fn decoder_sizes(d_h: usize, hidden: &[usize]) -> Vec<usize> {
    let mut sizes = vec![d_h];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    sizes
}

fn random_encoder<R: Rng + ?Sized>(d_in: usize, d_h: usize, rng: &mut R) -> Result<DenseMatrix> {
    if d_in == 0 || d_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "encoder needs positive dimensions, got {d_in}×{d_h}"
        )));
    }
    let bound = 1.0 / (d_in as f64).sqrt();
    let data = (0..d_in * d_h).map(|_| rng.random_range(-bound..=bound)).collect();
    DenseMatrix::from_vec(d_in, d_h, data)
}

/// Encoders `W_p`, `W_xT` and the decoder shared by both prediction paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualModalTrainer {
    pub w_p: DenseMatrix,
    pub w_xt: DenseMatrix,
    pub decoder: Mlp,
}

impl DualModalTrainer {
    pub fn new(d_p: usize, d_xt: usize, d_h: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_p = random_encoder(d_p, d_h, &mut rng)?;
        let w_xt = random_encoder(d_xt, d_h, &mut rng)?;
        let decoder = Mlp::new(&decoder_sizes(d_h, hidden), &mut rng)?;
        Self::from_parts(w_p, w_xt, decoder)
    }

    pub fn from_parts(w_p: DenseMatrix, w_xt: DenseMatrix, decoder: Mlp) -> Result<Self> {
        for (context, actual) in [("trainer W_p width", w_p.cols()), ("trainer W_xT width", w_xt.cols())] {
            if actual != decoder.d_in() {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: decoder.d_in(),
                    actual,
                });
            }
        }
        Ok(DualModalTrainer { w_p, w_xt, decoder })
    }

    pub fn d_h(&self) -> usize {
        self.decoder.d_in()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push_matrix("W_p", &self.w_p);
        ck.push_matrix("W_xT", &self.w_xt);
        ck.push_mlp("dec", &self.decoder);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Self::from_parts(ck.matrix("W_p")?, ck.matrix("W_xT")?, ck.mlp("dec")?)
    }

    fn zeros_like(&self) -> Self {
        DualModalTrainer {
            w_p: DenseMatrix::zeros(self.w_p.rows(), self.w_p.cols()),
            w_xt: DenseMatrix::zeros(self.w_xt.rows(), self.w_xt.cols()),
            decoder: self.decoder.zeros_like(),
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = vec![self.w_p.as_slice(), self.w_xt.as_slice()];
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = vec![self.w_p.as_mut_slice(), self.w_xt.as_mut_slice()];
        t.extend(self.decoder.tensors_mut());
        t
    }
}

/// A structure-only model: encoder `W` and decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub w: DenseMatrix,
    pub decoder: Mlp,
}

impl Predictor {
    /// Random encoder and decoder. The encoder is drawn first from the seed's
    /// stream, so it matches the starting point of [`gradient_distill_init`].
    pub fn random(d_xt: usize, d_h: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_encoder(d_xt, d_h, &mut rng)?;
        let decoder = Mlp::new(&decoder_sizes(d_h, hidden), &mut rng)?;
        Self::from_parts(w, decoder)
    }

    pub fn from_parts(w: DenseMatrix, decoder: Mlp) -> Result<Self> {
        if w.cols() != decoder.d_in() {
            return Err(Error::DimensionMismatch {
                context: "predictor encoder width",
                expected: decoder.d_in(),
                actual: w.cols(),
            });
        }
        Ok(Predictor { w, decoder })
    }

    pub fn d_xt(&self) -> usize {
        self.w.rows()
    }

    /// Checkpoint with the encoder stored under `encoder_name` (`W_trj` or `W_str`).
    pub fn to_checkpoint(&self, encoder_name: &str) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push_matrix(encoder_name, &self.w);
        ck.push_mlp("dec", &self.decoder);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, encoder_name: &str) -> Result<Self> {
        Self::from_parts(ck.matrix(encoder_name)?, ck.mlp("dec")?)
    }

    fn zeros_like(&self) -> Self {
        Predictor {
            w: DenseMatrix::zeros(self.w.rows(), self.w.cols()),
            decoder: self.decoder.zeros_like(),
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = vec![self.w.as_slice()];
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = vec![self.w.as_mut_slice()];
        t.extend(self.decoder.tensors_mut());
        t
    }
}

/// Outputs of one trainer forward pass. Hidden vectors are pre-normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerOutput {
    pub y: f64,
    pub y_xt: f64,
    pub h: Vec<f64>,
    pub h_xt: Vec<f64>,
}

pub fn trainer_forward(g: &DualModalTrainer, e_p: &[f64], x: &[f64]) -> Result<TrainerOutput> {
    let h_p = g.w_p.vec_mul(e_p)?;
    let h_xt = g.w_xt.vec_mul(x)?;
    let h: Vec<f64> = h_p.iter().zip(&h_xt).map(|(a, b)| a + b).collect();
    Ok(TrainerOutput {
        y: g.decoder.forward(&layernorm(&h))?,
        y_xt: g.decoder.forward(&layernorm(&h_xt))?,
        h,
        h_xt,
    })
}

/// Per-sample trainer loss `|ŷ − y| + λ_b·|ŷ_xT − y|`.
pub fn trainer_loss(g: &DualModalTrainer, e_p: &[f64], x: &[f64], y: f64, lambda_b: f64) -> Result<f64> {
    let mut grads = g.zeros_like();
    let (main, aux) = trainer_accumulate(g, e_p, x, y, lambda_b, &mut grads)?;
    Ok(combine_loss(main, aux, lambda_b))
}

fn combine_loss(main: f64, aux: f64, lambda_b: f64) -> f64 {
    if lambda_b == 0.0 {
        main
    } else {
        main + lambda_b * aux
    }
}

pub fn predict(f: &Predictor, x: &[f64]) -> Result<f64> {
    f.decoder.forward(&layernorm(&f.w.vec_mul(x)?))
}

pub fn predict_batch(f: &Predictor, xs: &[&[f64]]) -> Result<Vec<f64>> {
    xs.iter().map(|x| predict(f, x)).collect()
}

/// `grads[i][j] += x[i]·dh[j]`.
fn add_outer(grads: &mut DenseMatrix, x: &[f64], dh: &[f64]) {
    for (i, &a) in x.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (g, d) in grads.row_mut(i).iter_mut().zip(dh) {
            *g += a * d;
        }
    }
}

/// Accumulates the gradient of the trainer loss; returns `(|ŷ−y|, |ŷ_xT−y|)`.
fn trainer_accumulate(
    g: &DualModalTrainer,
    e_p: &[f64],
    x: &[f64],
    y: f64,
    lambda_b: f64,
    grads: &mut DualModalTrainer,
) -> Result<(f64, f64)> {
    let h_p = g.w_p.vec_mul(e_p)?;
    let h_xt = g.w_xt.vec_mul(x)?;
    let h: Vec<f64> = h_p.iter().zip(&h_xt).map(|(a, b)| a + b).collect();

    let trace = g.decoder.forward_trace(&layernorm(&h))?;
    let (main, up) = l1_loss(trace.output(), y);
    let dz = g.decoder.backward(&trace, up, &mut grads.decoder);
    let dh = layernorm_backward(&h, &dz);
    add_outer(&mut grads.w_p, e_p, &dh);
    add_outer(&mut grads.w_xt, x, &dh);

    let aux_trace = g.decoder.forward_trace(&layernorm(&h_xt))?;
    let (aux, aux_up) = l1_loss(aux_trace.output(), y);
    if lambda_b != 0.0 {
        let dz = g.decoder.backward(&aux_trace, lambda_b * aux_up, &mut grads.decoder);
        add_outer(&mut grads.w_xt, x, &layernorm_backward(&h_xt, &dz));
    }
    Ok((main, aux))
}

/// Accumulates the gradient of `|f(x) − y|`; returns the loss.
fn predictor_accumulate(f: &Predictor, x: &[f64], y: f64, grads: &mut Predictor) -> Result<f64> {
    let h = f.w.vec_mul(x)?;
    let trace = f.decoder.forward_trace(&layernorm(&h))?;
    let (loss, up) = l1_loss(trace.output(), y);
    let dz = f.decoder.backward(&trace, up, &mut grads.decoder);
    add_outer(&mut grads.w, x, &layernorm_backward(&h, &dz));
    Ok(loss)
}

/// Loss and parameter gradient of `|f(x) − y|` for one sample.
pub fn predictor_loss_grad(f: &Predictor, x: &[f64], y: f64) -> Result<(f64, Predictor)> {
    let mut grads = f.zeros_like();
    let loss = predictor_accumulate(f, x, y, &mut grads)?;
    Ok((loss, grads))
}

/// Loss and parameter gradient of the trainer loss for one sample.
pub fn trainer_loss_grad(
    g: &DualModalTrainer,
    e_p: &[f64],
    x: &[f64],
    y: f64,
    lambda_b: f64,
) -> Result<(f64, DualModalTrainer)> {
    let mut grads = g.zeros_like();
    let (main, aux) = trainer_accumulate(g, e_p, x, y, lambda_b, &mut grads)?;
    Ok((combine_loss(main, aux, lambda_b), grads))
}

/// One row of the per-epoch training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample L1 of the main path, measured before each sample's update.
    pub train_l1: f64,
    /// Same for the trainer's structure-only path; empty for predictors.
    pub aux_l1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let epochs = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(TrainLog { epochs })
    }

    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }
}

/// Optimizer group of each tensor: encoders, then decoder weights and biases.
fn tensor_groups(n_encoders: usize, decoder: &Mlp) -> Vec<usize> {
    let mut groups = vec![0; n_encoders];
    for i in 0..decoder.layers.len() {
        let g = if i < 2 { 1 } else { 2 };
        groups.extend([g, g]);
    }
    groups
}

/// Parameters that can be driven by the shared training loop.
trait Trainable: Clone {
    fn n_encoders(&self) -> usize;
    fn decoder(&self) -> &Mlp;
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
    fn zero_grads(&self) -> Self;
    /// Accumulates one sample's gradient and returns `(main, aux)` losses.
    fn accumulate(&self, s: &EmbeddedSample, cfg: &TrainConfig, grads: &mut Self) -> Result<(f64, Option<f64>)>;
}

impl Trainable for DualModalTrainer {
    fn n_encoders(&self) -> usize {
        2
    }
    fn decoder(&self) -> &Mlp {
        &self.decoder
    }
    fn params(&self) -> Vec<&[f64]> {
        self.tensors()
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.tensors_mut()
    }
    fn zero_grads(&self) -> Self {
        self.zeros_like()
    }
    fn accumulate(&self, s: &EmbeddedSample, cfg: &TrainConfig, grads: &mut Self) -> Result<(f64, Option<f64>)> {
        let p = s.p_vec.as_deref().ok_or_else(|| missing_trajectory(s))?;
        let (main, aux) = trainer_accumulate(self, p, &s.x_vec, s.y_log10, cfg.lambda_b, grads)?;
        Ok((main, Some(aux)))
    }
}

impl Trainable for Predictor {
    fn n_encoders(&self) -> usize {
        1
    }
    fn decoder(&self) -> &Mlp {
        &self.decoder
    }
    fn params(&self) -> Vec<&[f64]> {
        self.tensors()
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.tensors_mut()
    }
    fn zero_grads(&self) -> Self {
        self.zeros_like()
    }
    fn accumulate(&self, s: &EmbeddedSample, _cfg: &TrainConfig, grads: &mut Self) -> Result<(f64, Option<f64>)> {
        Ok((predictor_accumulate(self, &s.x_vec, s.y_log10, grads)?, None))
    }
}

fn missing_trajectory(s: &EmbeddedSample) -> Error {
    Error::Sample {
        id: s.id.clone(),
        reason: "training sample has no trajectory embedding".to_string(),
    }
}

fn apply<M: Trainable>(model: &mut M, grads: &mut M, adam: &mut AdamState, in_batch: usize) -> Result<()> {
    if in_batch > 1 {
        let k = 1.0 / in_batch as f64;
        for t in grads.params_mut() {
            for v in t {
                *v *= k;
            }
        }
    }
    adam.update(&mut model.params_mut(), &grads.params())?;
    for t in grads.params_mut() {
        t.fill(0.0);
    }
    Ok(())
}

/// Adam over seeded shuffles of `train`, one update per `batch_size` samples.
fn fit<M: Trainable>(init: &M, train: &[&EmbeddedSample], cfg: &TrainConfig) -> Result<(M, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidDataset("training split is empty".to_string()));
    }
    let mut model = init.clone();
    let sizes: Vec<usize> = model.params().iter().map(|t| t.len()).collect();
    let groups = tensor_groups(model.n_encoders(), model.decoder());
    let mut adam = AdamState::new(&sizes, groups, cfg.lr.as_vec())?;
    let mut grads = model.zero_grads();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut main_sum, mut aux_sum, mut has_aux) = (0.0, 0.0, false);
        let mut in_batch = 0;
        for &i in &order {
            let (main, aux) = model.accumulate(train[i], cfg, &mut grads)?;
            main_sum += main;
            if let Some(a) = aux {
                aux_sum += a;
                has_aux = true;
            }
            in_batch += 1;
            if in_batch == cfg.batch_size {
                apply(&mut model, &mut grads, &mut adam, in_batch)?;
                in_batch = 0;
            }
        }
        if in_batch > 0 {
            apply(&mut model, &mut grads, &mut adam, in_batch)?;
        }
        let n = train.len() as f64;
        log.epochs.push(EpochLog {
            epoch,
            train_l1: main_sum / n,
            aux_l1: has_aux.then_some(aux_sum / n),
        });
        adam.decay(cfg.lr_decay);
    }
    Ok((model, log))
}

/// Trains the dual-modal trainer on samples that all carry trajectory embeddings.
pub fn train_dual_modal(
    g: &DualModalTrainer,
    train: &[&EmbeddedSample],
    cfg: &TrainConfig,
) -> Result<(DualModalTrainer, TrainLog)> {
    if let Some(s) = train.iter().find(|s| s.p_vec.is_none()) {
        return Err(missing_trajectory(s));
    }
    fit(g, train, cfg)
}

fn check_x_width(f: &Predictor, train: &[&EmbeddedSample], context: &'static str) -> Result<()> {
    if let Some(s) = train.iter().find(|s| s.x_vec.len() != f.d_xt()) {
        return Err(Error::DimensionMismatch {
            context,
            expected: f.d_xt(),
            actual: s.x_vec.len(),
        });
    }
    Ok(())
}

/// Structure-only L1 training of an initialized predictor. Trajectory
/// embeddings, if present, are ignored.
pub fn finetune_predictor(f1: &Predictor, train: &[&EmbeddedSample], cfg: &TrainConfig) -> Result<(Predictor, TrainLog)> {
    check_x_width(f1, train, "predictor input width")?;
    fit(f1, train, cfg)
}

/// Trains the structure-dataset predictor with the three learning-rate groups of `cfg`.
pub fn train_structure_predictor(
    f2: &Predictor,
    train: &[&EmbeddedSample],
    cfg: &TrainConfig,
) -> Result<(Predictor, TrainLog)> {
    check_x_width(f2, train, "structure dataset embedding width")?;
    fit(f2, train, cfg)
}

/// Stacked structure embeddings `X` and the trainer's combined hidden vectors `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillProblem {
    pub x: DenseMatrix,
    pub h: DenseMatrix,
}

pub fn distill_problem(g: &DualModalTrainer, train: &[&EmbeddedSample]) -> Result<DistillProblem> {
    if train.is_empty() {
        return Err(Error::InvalidDataset("training split is empty".to_string()));
    }
    let mut xs = Vec::with_capacity(train.len());
    let mut hs = Vec::with_capacity(train.len());
    for s in train {
        let p = s.p_vec.as_deref().ok_or_else(|| missing_trajectory(s))?;
        hs.push(trainer_forward(g, p, &s.x_vec)?.h);
        xs.push(s.x_vec.as_slice());
    }
    Ok(DistillProblem {
        x: DenseMatrix::from_rows(&xs)?,
        h: DenseMatrix::from_rows(&hs)?,
    })
}

/// `W^trj = argmin ‖XW − H‖² + λ_r‖W‖²` by a direct solve; decoder copied from `g`.
pub fn closed_form_init(g: &DualModalTrainer, train: &[&EmbeddedSample], lambda_r: f64) -> Result<Predictor> {
    let prob = distill_problem(g, train)?;
    Predictor::from_parts(ridge_solve(&prob.x, &prob.h, lambda_r)?, g.decoder.clone())
}

/// Minimizes the same ridge objective with full-batch Adam from the random
/// encoder of `Predictor::random(.., seed)`; decoder copied from `g`.
pub fn gradient_distill_init(
    g: &DualModalTrainer,
    train: &[&EmbeddedSample],
    steps: usize,
    lr: f64,
    lambda_r: f64,
    seed: u64,
) -> Result<Predictor> {
    let prob = distill_problem(g, train)?;
    let mut w = random_encoder(prob.x.cols(), g.d_h(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut adam = AdamState::uniform(&[w.as_slice().len()], lr);
    for _ in 0..steps {
        let grad = ridge_gradient(&prob.x, &prob.h, lambda_r, &w)?;
        adam.update(&mut [w.as_mut_slice()], &[grad.as_slice()])?;
    }
    Predictor::from_parts(w, g.decoder.clone())
}

/// Which trained encoder seeds the structure-dataset predictor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureEncoderSource {
    /// The trainer's structure encoder `W_xT`.
    #[default]
    Trainer,
    /// The distilled predictor encoder `W^trj`.
    Predictor,
}

/// `W^str ← g.W_xT`, `f_dec^str ← f₁.decoder`.
pub fn data_level_init(g: &DualModalTrainer, f1: &Predictor) -> Result<Predictor> {
    data_level_init_from(g, f1, StructureEncoderSource::Trainer)
}

pub fn data_level_init_from(g: &DualModalTrainer, f1: &Predictor, source: StructureEncoderSource) -> Result<Predictor> {
    if g.w_xt.rows() != f1.d_xt() {
        return Err(Error::DimensionMismatch {
            context: "data-level init embedding width",
            expected: f1.d_xt(),
            actual: g.w_xt.rows(),
        });
    }
    let w = match source {
        StructureEncoderSource::Trainer => g.w_xt.clone(),
        StructureEncoderSource::Predictor => f1.w.clone(),
    };
    Predictor::from_parts(w, f1.decoder.clone())
}
