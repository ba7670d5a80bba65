//! Desk-scale training of the adapter weights and of the initial/process
//! noise standard deviations against the relative translation error.
//!
//! Gradients come from simultaneous-perturbation estimates: every step
//! draws one Rademacher direction, evaluates the minibatch loss on both
//! sides of it with common random numbers, clips the estimate to a maximal
//! norm and hands it to Adam.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::adapter::{self, AdapterWeights, DropoutMask, NoiseScale, Normalization, TensorDoc, WeightsError};
use crate::config::FilterConfig;
use crate::data::Sequence;
use crate::eval::{relative_errors, relative_errors_with, EvalError, LENGTHS};
use crate::geom::{Pose3, Vec3};
use crate::iekf::{FilterError, Iekf, NoiseSchedule};
use crate::model::{InitialBeliefs, ProcessNoise};

/// Number of learnable noise standard deviations: six for the initial
/// covariance, six for the process noise.
pub const SIGMA_PARAMS: usize = 12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training sequences")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Loss evaluation failures.
#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("trajectory shorter than the smallest sub-trajectory length")]
    TooShort,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Optimizer steps per epoch.
    pub steps_per_epoch: usize,
    /// Subsequences per minibatch.
    pub batch_size: usize,
    /// Subsequence duration in seconds.
    pub subsequence_seconds: f64,
    /// Standard deviation of the Gaussian noise added to IMU channels.
    pub augmentation_std: f64,
    pub grad_clip_norm: f64,
    pub dropout_p: f64,
    /// Perturbation half-width of the gradient estimate.
    pub perturbation: f64,
    /// Perturbation directions averaged per step.
    pub perturbation_samples: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 20,
            steps_per_epoch: 1,
            batch_size: 9,
            subsequence_seconds: 60.0,
            augmentation_std: 1e-4,
            grad_clip_norm: 1.0,
            dropout_p: 0.5,
            perturbation: 1e-2,
            perturbation_samples: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| Err(TrainError::Config(what.to_string()));
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be nonnegative");
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.perturbation_samples == 0 {
            return bad("batch_size, steps_per_epoch and perturbation_samples must be positive");
        }
        if !(self.subsequence_seconds > 0.0) || !(self.grad_clip_norm > 0.0) || !(self.perturbation > 0.0) {
            return bad("subsequence_seconds, grad_clip_norm and perturbation must be positive");
        }
        if !(self.augmentation_std >= 0.0) {
            return bad("augmentation_std must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Everything the optimizer updates.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnableSet {
    pub weights: AdapterWeights,
    /// Natural logs of the initial-covariance (first six) and process-noise
    /// (last six) standard deviations.
    pub log_sigmas: [f64; SIGMA_PARAMS],
}

impl LearnableSet {
    /// Fresh adapter weights, sigmas taken from `cfg`, input normalization
    /// computed over `train`.
    pub fn initial(seed: u64, cfg: &FilterConfig, train: &[Sequence]) -> Self {
        let mut weights = AdapterWeights::init(seed);
        weights.normalization = Normalization::from_samples(train.iter().flat_map(|s| s.imu.iter()));
        Self::from_parts(weights, cfg)
    }

    pub fn from_parts(weights: AdapterWeights, cfg: &FilterConfig) -> Self {
        let p0 = cfg.initial_beliefs();
        let q = cfg.process_noise();
        let sig = [
            p0.rot,
            p0.vel,
            p0.bias_gyro,
            p0.bias_accel,
            p0.car_rot,
            p0.car_pos,
            q.gyro,
            q.accel,
            q.bias_gyro,
            q.bias_accel,
            q.car_rot,
            q.car_pos,
        ];
        Self {
            weights,
            log_sigmas: sig.map(f64::ln),
        }
    }

    pub fn sigmas(&self) -> [f64; SIGMA_PARAMS] {
        self.log_sigmas.map(f64::exp)
    }

    pub fn initial_beliefs(&self) -> InitialBeliefs {
        let s = self.sigmas();
        InitialBeliefs {
            rot: s[0],
            vel: s[1],
            bias_gyro: s[2],
            bias_accel: s[3],
            car_rot: s[4],
            car_pos: s[5],
        }
    }

    pub fn process_noise(&self) -> ProcessNoise {
        let s = self.sigmas();
        ProcessNoise {
            gyro: s[6],
            accel: s[7],
            bias_gyro: s[8],
            bias_accel: s[9],
            car_rot: s[10],
            car_pos: s[11],
        }
    }

    /// `base` with the learned standard deviations substituted.
    pub fn filter_config(&self, base: &FilterConfig) -> FilterConfig {
        let mut cfg = *base;
        cfg.set_initial_beliefs(&self.initial_beliefs());
        cfg.set_process_noise(&self.process_noise());
        cfg
    }

    pub fn len(&self) -> usize {
        self.weights.param_count() + SIGMA_PARAMS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.weights.to_flat();
        v.extend_from_slice(&self.log_sigmas);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let n = self.weights.param_count();
        self.weights.set_flat(&flat[..n]);
        self.log_sigmas.copy_from_slice(&flat[n..]);
    }

    pub fn to_text(&self) -> String {
        let mut doc = TensorDoc::new();
        self.weights.write_sections(&mut doc);
        doc.section("log_sigmas", &[SIGMA_PARAMS], &self.log_sigmas);
        doc.render()
    }

    pub fn from_text(text: &str) -> Result<Self, WeightsError> {
        let doc = TensorDoc::parse(text)?;
        let weights = AdapterWeights::from_doc(&doc)?;
        let mut log_sigmas = [0.0; SIGMA_PARAMS];
        log_sigmas.copy_from_slice(doc.tensor("log_sigmas", &[SIGMA_PARAMS])?);
        Ok(Self { weights, log_sigmas })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WeightsError> {
        adapter::write_file(path.as_ref(), &self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WeightsError> {
        Self::from_text(&adapter::read_file(path.as_ref())?)
    }
}

/// Reads either a checkpoint or a plain weight file; plain weight files
/// keep the sigmas of `cfg`.
pub fn load_learnables(path: impl AsRef<Path>, cfg: &FilterConfig) -> Result<LearnableSet, WeightsError> {
    let text = adapter::read_file(path.as_ref())?;
    let doc = TensorDoc::parse(&text)?;
    if doc.has_section("log_sigmas") {
        LearnableSet::from_text(&text)
    } else {
        Ok(LearnableSet::from_parts(AdapterWeights::from_doc(&doc)?, cfg))
    }
}

/// Translation part of the relative error of a filtered sequence, over the
/// lengths the sequence can accommodate.
pub fn relative_translation_loss(est: &[Pose3], gt: &[Pose3]) -> Result<f64, LossError> {
    let rep = relative_errors_with(est, gt, &LENGTHS)?;
    if rep.is_short() {
        return Err(LossError::TooShort);
    }
    Ok(rep.t_rel)
}

/// One minibatch entry: a subsequence and the training-time randomness
/// that both sides of a perturbation share.
#[derive(Clone, Debug)]
pub struct BatchItem {
    pub sequence: Sequence,
    pub dropout: Option<DropoutMask>,
}

/// Filters `seq` with the given parameters and returns its estimated poses.
pub fn filter_sequence(
    params: &LearnableSet,
    base: &FilterConfig,
    seq: &Sequence,
    dropout: Option<&DropoutMask>,
) -> Result<Vec<Pose3>, FilterError> {
    let cfg = params.filter_config(base);
    let filter = Iekf::from_config(&cfg);
    let noise = params
        .weights
        .noise_sequence(&seq.imu, &NoiseScale::from_config(&cfg), dropout);
    let run = filter.run(&seq.imu, seq.initial_pose(0), &NoiseSchedule::PerStep(noise))?;
    Ok(run.states.iter().map(|s| Pose3::from(&s.pose)).collect())
}

/// Mean relative translation loss over a batch.
pub fn batch_loss(params: &LearnableSet, base: &FilterConfig, batch: &[BatchItem]) -> Result<f64, LossError> {
    let losses: Vec<Result<f64, LossError>> = batch
        .par_iter()
        .map(|item| {
            let est = filter_sequence(params, base, &item.sequence, item.dropout.as_ref())?;
            relative_translation_loss(&est, &item.sequence.ground_truth)
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / batch.len() as f64)
}

/// Validation loss: full sequences, no dropout, no augmentation.
pub fn validation_loss(params: &LearnableSet, base: &FilterConfig, seqs: &[Sequence]) -> Result<f64, LossError> {
    let items: Vec<BatchItem> = seqs
        .iter()
        .map(|s| BatchItem {
            sequence: s.clone(),
            dropout: None,
        })
        .collect();
    batch_loss(params, base, &items)
}

/// Scales `g` in place so its norm is at most `max_norm`; returns the
/// original norm.
pub fn clip_gradient(g: &mut [f64], max_norm: f64) -> f64 {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        g.iter_mut().for_each(|x| *x *= s);
    }
    norm
}

/// Adam optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// Applies one descent step to `theta`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Mean of the two perturbed losses (percent); NaN when rejected.
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub rejected: bool,
}

/// Optimizer state and randomness for a training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub base: FilterConfig,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, base: FilterConfig, dim: usize) -> Result<Self, TrainError> {
        cfg.validate()?;
        Ok(Self {
            adam: Adam::new(dim, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            base,
        })
    }

    /// Draws subsequences uniformly with replacement across sequences, each
    /// starting at a uniformly random sample, with augmentation noise and a
    /// dropout mask.
    pub fn sample_batch(&mut self, dataset: &[Sequence]) -> Vec<BatchItem> {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let seq = dataset.choose(&mut self.rng).expect("non-empty dataset");
            let rate = (seq.len().saturating_sub(1)) as f64 / seq.duration().max(f64::MIN_POSITIVE);
            let span = ((self.cfg.subsequence_seconds * rate).round() as usize + 1).min(seq.len());
            let start = self.rng.random_range(0..=seq.len() - span);
            let mut sub = seq.slice(start, start + span);
            if self.cfg.augmentation_std > 0.0 {
                let s = self.cfg.augmentation_std;
                for u in &mut sub.imu {
                    let mut draw = || normal.sample(&mut self.rng) * s;
                    u.omega += Vec3::new(draw(), draw(), draw());
                    u.accel += Vec3::new(draw(), draw(), draw());
                }
            }
            let dropout = (self.cfg.dropout_p > 0.0).then(|| DropoutMask::sample(self.cfg.dropout_p, &mut self.rng));
            batch.push(BatchItem { sequence: sub, dropout });
        }
        batch
    }

    /// Gradient estimate, clipping and Adam update on `params`.
    pub fn training_step(&mut self, params: &mut LearnableSet, batch: &[BatchItem]) -> StepReport {
        let theta = params.to_flat();
        let dim = theta.len();
        let c = self.cfg.perturbation;
        let mut grad = vec![0.0; dim];
        let mut loss_sum = 0.0;
        for _ in 0..self.cfg.perturbation_samples {
            let delta: Vec<f64> = (0..dim)
                .map(|_| if self.rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.set_flat(&theta.iter().zip(&delta).map(|(t, d)| t + c * d).collect::<Vec<_>>());
            minus.set_flat(&theta.iter().zip(&delta).map(|(t, d)| t - c * d).collect::<Vec<_>>());
            let (lp, lm) = rayon::join(
                || batch_loss(&plus, &self.base, batch),
                || batch_loss(&minus, &self.base, batch),
            );
            let (lp, lm) = match (lp, lm) {
                (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => (a, b),
                (a, b) => {
                    log::warn!("rejecting training step: loss evaluation failed ({a:?}, {b:?})");
                    return StepReport {
                        loss: f64::NAN,
                        grad_norm: f64::NAN,
                        rejected: true,
                    };
                }
            };
            let scale = (lp - lm) / (2.0 * c * self.cfg.perturbation_samples as f64);
            for (g, d) in grad.iter_mut().zip(&delta) {
                *g += scale * d;
            }
            loss_sum += 0.5 * (lp + lm);
        }
        let grad_norm = clip_gradient(&mut grad, self.cfg.grad_clip_norm);
        let mut theta = theta;
        self.adam.step(&mut theta, &grad);
        params.set_flat(&theta);
        StepReport {
            loss: loss_sum / self.cfg.perturbation_samples as f64,
            grad_norm,
            rejected: false,
        }
    }
}

/// One row of the loss history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    /// Parameters with the lowest validation loss seen, including the
    /// starting point.
    pub best: LearnableSet,
    pub best_val_loss: f64,
    pub final_params: LearnableSet,
    pub initial_val_loss: f64,
    pub history: Vec<EpochRecord>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<(), TrainError> {
    std::fs::write(path, text).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Trains on `train` and tracks the validation loss on the held-out
/// `validation` sequences after every epoch. With a checkpoint directory,
/// writes `epoch_NNN.ckpt`, `best.ckpt` and `loss_history.csv` there.
pub fn run_training(
    train: &[Sequence],
    validation: &[Sequence],
    initial: LearnableSet,
    base: &FilterConfig,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainingOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut trainer = Trainer::new(cfg.clone(), *base, initial.len())?;
    let val_of = |p: &LearnableSet| -> f64 {
        if validation.is_empty() {
            return f64::NAN;
        }
        validation_loss(p, base, validation).unwrap_or(f64::INFINITY)
    };

    let initial_val_loss = val_of(&initial);
    let mut params = initial.clone();
    let mut best = initial;
    let mut best_val_loss = initial_val_loss;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut train_sum = 0.0;
        let mut accepted = 0usize;
        for _ in 0..cfg.steps_per_epoch {
            let batch = trainer.sample_batch(train);
            let rep = trainer.training_step(&mut params, &batch);
            if !rep.rejected {
                train_sum += rep.loss;
                accepted += 1;
            }
        }
        let train_loss = if accepted > 0 { train_sum / accepted as f64 } else { f64::NAN };
        let val_loss = val_of(&params);
        log::info!("epoch {epoch}: train {train_loss:.4}%, validation {val_loss:.4}%");
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
        });
        if val_loss < best_val_loss || (best_val_loss.is_nan() && !val_loss.is_nan()) {
            best_val_loss = val_loss;
            best = params.clone();
        }
        if let Some(dir) = checkpoint_dir {
            params.save(dir.join(format!("epoch_{:03}.ckpt", epoch + 1)))?;
            best.save(dir.join("best.ckpt"))?;
            write_text(&dir.join("loss_history.csv"), &history_csv(&history))?;
        }
    }
    if let Some(dir) = checkpoint_dir {
        if cfg.epochs == 0 {
            write_text(&dir.join("loss_history.csv"), &history_csv(&history))?;
        }
    }
    Ok(TrainingOutcome {
        best,
        best_val_loss,
        final_params: params,
        initial_val_loss,
        history,
    })
}

/// Full-length evaluation of a parameter set: the standard error report.
pub fn evaluate(params: &LearnableSet, base: &FilterConfig, seq: &Sequence) -> Result<crate::eval::ErrorReport, LossError> {
    let est = filter_sequence(params, base, seq, None)?;
    let mut rep = relative_errors(&est, &seq.ground_truth)?;
    rep.sequence = seq.name.clone();
    rep.duration = seq.duration();
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Mat3;

    #[test]
    fn clipping_preserves_direction() {
        let mut g = vec![6.0, 8.0];
        let n = clip_gradient(&mut g, 1.0);
        assert_eq!(n, 10.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut small = vec![0.3, 0.4];
        clip_gradient(&mut small, 1.0);
        assert_eq!(small, vec![0.3, 0.4]);
    }

    #[test]
    fn clipped_update_equals_unit_gradient_update() {
        let dir = [0.6, -0.8, 0.0];
        let mut big: Vec<f64> = dir.iter().map(|d| d * 10.0).collect();
        clip_gradient(&mut big, 1.0);
        let mut a = Adam::new(3, 0.1, 0.9, 0.999, 1e-8);
        let mut b = a.clone();
        let mut ta = vec![1.0, 2.0, 3.0];
        let mut tb = ta.clone();
        a.step(&mut ta, &big);
        b.step(&mut tb, &dir);
        for (x, y) in ta.iter().zip(&tb) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut adam = Adam::new(2, 0.0, 0.9, 0.999, 1e-8);
        let mut theta = vec![0.5, -0.5];
        adam.step(&mut theta, &[1.0, -2.0]);
        assert_eq!(theta, vec![0.5, -0.5]);
    }

    #[test]
    fn sigmas_stay_positive_in_log_space() {
        let cfg = FilterConfig::default();
        let mut p = LearnableSet::from_parts(AdapterWeights::zeros(), &cfg);
        p.log_sigmas.iter_mut().for_each(|l| *l -= 800.0);
        assert!(p.sigmas().iter().all(|s| *s >= 0.0));
        let p = LearnableSet::from_parts(AdapterWeights::zeros(), &cfg);
        assert_eq!(p.filter_config(&cfg).sigma_gyro, cfg.sigma_gyro.ln().exp());
        assert_eq!(p.len(), 6222);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = FilterConfig::default();
        let mut p = LearnableSet::from_parts(AdapterWeights::init(4), &cfg);
        p.log_sigmas[3] = -1.2345678901234;
        let back = LearnableSet::from_text(&p.to_text()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn loss_is_zero_on_ground_truth() {
        let gt: Vec<Pose3> = (0..300)
            .map(|i| Pose3::new(Mat3::identity(), Vec3::new(i as f64, 0.0, 0.0)))
            .collect();
        assert_eq!(relative_translation_loss(&gt, &gt).unwrap(), 0.0);
        assert!(matches!(relative_translation_loss(&gt[..50], &gt[..50]), Err(LossError::TooShort)));
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig {
            dropout_p: 1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
