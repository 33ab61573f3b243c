//! Toy-scale training: a synthetic oriented-sinusoid dataset, AdamW with
//! polynomial learning-rate decay, a deterministic record stream, and the
//! graceful-halt policy when a run reaches NaN (an expected outcome for the
//! softmax arm of the stability study).

use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::Normalizer;
use crate::autodiff::{ParamStore, Tape};
use crate::error::{FctError, Result};
use crate::model::{bind_model, forward_classifier, FctConfig};
use crate::rng::Rng;
use crate::tensor::RealTensor;

/// Offset separating held-out sample indices from training indices.
const EVAL_INDEX_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_classes: usize,
    /// Square image side; power of two, at least 16.
    pub image_size: usize,
    /// Gaussian pixel-noise standard deviation.
    pub noise: f64,
    pub seed: u64,
}

/// Class-conditional generator: class j is an oriented sinusoid with a
/// distinct frequency and orientation, plus Gaussian noise, normalized to
/// zero mean and unit variance per image. Every sample is a pure function of
/// (seed, index), so batches are reproducible from the step number alone.
#[derive(Debug, Clone)]
pub struct SyntheticSpectralDataset {
    pub spec: DatasetSpec,
}

impl SyntheticSpectralDataset {
    pub fn new(spec: DatasetSpec) -> Result<Self> {
        if spec.num_classes < 2 {
            return Err(FctError::Config(format!(
                "need at least 2 classes, got {}",
                spec.num_classes
            )));
        }
        if !spec.image_size.is_power_of_two() || spec.image_size < 16 {
            return Err(FctError::Config(format!(
                "image size must be a power of two >= 16, got {}",
                spec.image_size
            )));
        }
        if !spec.noise.is_finite() || spec.noise < 0.0 {
            return Err(FctError::Config(format!("bad noise level {}", spec.noise)));
        }
        Ok(Self { spec })
    }

    fn class_signature(&self, class: usize) -> (f64, f64) {
        let freq = (2 + class) as f64;
        let theta = std::f64::consts::PI * class as f64 / self.spec.num_classes as f64;
        (freq, theta)
    }

    /// One image (pixel-major, single channel) and its label.
    pub fn sample(&self, index: u64) -> (Vec<f64>, usize) {
        let s = self.spec.image_size;
        let label = (index % self.spec.num_classes as u64) as usize;
        let mut rng = Rng::new(self.spec.seed).derive(index.wrapping_add(1));
        let (freq, theta) = self.class_signature(label);
        let phase = rng.uniform_in(0.0, std::f64::consts::TAU);
        let (ct, st) = (theta.cos(), theta.sin());
        let mut img = Vec::with_capacity(s * s);
        for y in 0..s {
            for x in 0..s {
                let u = (x as f64 * ct + y as f64 * st) / s as f64;
                let v = (std::f64::consts::TAU * freq * u + phase).sin()
                    + self.spec.noise * rng.normal();
                img.push(v);
            }
        }
        let mean = img.iter().sum::<f64>() / img.len() as f64;
        let var = img.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / img.len() as f64;
        let inv = 1.0 / var.sqrt().max(1e-12);
        for p in img.iter_mut() {
            *p = (*p - mean) * inv;
        }
        (img, label)
    }

    fn batch_from_base(&self, base: u64, batch: usize) -> (RealTensor, Vec<usize>) {
        let s = self.spec.image_size;
        let mut data = Vec::with_capacity(batch * s * s);
        let mut labels = Vec::with_capacity(batch);
        for i in 0..batch {
            let (img, label) = self.sample(base + i as u64);
            data.extend_from_slice(&img);
            labels.push(label);
        }
        let t = RealTensor::new(vec![batch, s * s], data).expect("batch shape");
        (t, labels)
    }

    /// Training batch for one step.
    pub fn train_batch(&self, step: u64, batch: usize) -> (RealTensor, Vec<usize>) {
        self.batch_from_base(step * batch as u64, batch)
    }

    /// Held-out batch, disjoint from every training index.
    pub fn eval_batch(&self, index: u64, batch: usize) -> (RealTensor, Vec<usize>) {
        self.batch_from_base(EVAL_INDEX_BASE + index * batch as u64, batch)
    }

    /// Frozen linear probe on DFT magnitudes: score each class by the
    /// quadrature energy of the image projected on that class's oriented
    /// sinusoid (its dominant spectral bin). Separates perfectly at zero
    /// noise; used as the Bayes-separability oracle.
    pub fn spectral_probe(&self, img: &[f64]) -> usize {
        let s = self.spec.image_size;
        let mut best = (f64::NEG_INFINITY, 0usize);
        for class in 0..self.spec.num_classes {
            let (freq, theta) = self.class_signature(class);
            let (ct, st) = (theta.cos(), theta.sin());
            let (mut pc, mut ps) = (0.0, 0.0);
            for y in 0..s {
                for x in 0..s {
                    let u = (x as f64 * ct + y as f64 * st) / s as f64;
                    let ang = std::f64::consts::TAU * freq * u;
                    let v = img[y * s + x];
                    pc += v * ang.cos();
                    ps += v * ang.sin();
                }
            }
            let energy = pc * pc + ps * ps;
            if energy > best.0 {
                best = (energy, class);
            }
        }
        best.1
    }
}

/// Overall accuracy, Eq. 17: correct predictions over total.
pub fn overall_accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(preds.len(), labels.len());
    if preds.is_empty() {
        return 0.0;
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / preds.len() as f64
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    /// Apply one update from accumulated gradients at the given scheduled lr.
    pub fn step(&self, store: &mut ParamStore, lr_now: f64) {
        store.step += 1;
        let t = store.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (_, p) in store.iter_mut() {
            for i in 0..p.value.len() {
                let g = p.grad.data()[i];
                let m = self.beta1 * p.m.data()[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * p.v.data()[i] + (1.0 - self.beta2) * g * g;
                p.m.data_mut()[i] = m;
                p.v.data_mut()[i] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                let w = p.value.data()[i];
                p.value.data_mut()[i] =
                    w - lr_now * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * w);
            }
        }
    }
}

/// Polynomial decay to zero over the run, power 0.9.
pub fn poly_lr(base: f64, step: u64, total: u64) -> f64 {
    let frac = 1.0 - (step as f64 / total.max(1) as f64);
    base * frac.max(0.0).powf(0.9)
}

/// One row of the training metric stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub nan_flag: bool,
    pub lr: f64,
    pub wall_ms: f64,
}

impl TrainRecord {
    pub const CSV_HEADER: &'static str = "step,loss,grad_norm,nan_flag,lr,wall_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{},{:.17e},{:.3}",
            self.step,
            self.loss,
            self.grad_norm,
            self.nan_flag as u8,
            self.lr,
            self.wall_ms
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub normalizer: Normalizer,
    pub optimizer: AdamW,
    /// Multiplies every input image; x100 forces Fourier-scale magnitudes
    /// for the stability study.
    pub input_scale: f64,
    /// Global-norm gradient clipping; disabled for the stability study.
    pub grad_clip: Option<f64>,
    /// Reuse the step-0 batch at every step (schedule/optimizer tests).
    pub fixed_batch: bool,
    /// Interrupt this invocation before the given absolute step without
    /// shortening the lr-schedule horizon (checkpoint/resume workflows).
    pub stop_after: Option<u64>,
    /// Stop early once held-out OA reaches the target, checked every
    /// `interval` steps on `batches` evaluation batches.
    pub early_stop: Option<EarlyStop>,
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct EarlyStop {
    pub target_oa: f64,
    pub interval: u64,
    pub batches: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 100,
            batch_size: 32,
            normalizer: Normalizer::Logmax,
            optimizer: AdamW::default(),
            input_scale: 1.0,
            grad_clip: None,
            fixed_batch: false,
            stop_after: None,
            early_stop: None,
            threads: 1,
        }
    }
}

/// Outcome of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    pub halted_on_nan: bool,
    /// Held-out OA at the last early-stop check, if any was performed.
    pub last_eval_oa: Option<f64>,
}

fn scaled(images: &RealTensor, scale: f64) -> RealTensor {
    if scale == 1.0 {
        images.clone()
    } else {
        images.scale(scale)
    }
}

/// Forward + loss for one batch; distinguishes NaN (Ok(None)-like signal)
/// from structural errors.
fn step_loss_and_grads(
    config: &FctConfig,
    store: &mut ParamStore,
    images: &RealTensor,
    labels: &[usize],
    normalizer: Normalizer,
) -> Result<std::result::Result<(f64, f64), String>> {
    let batch = images.rows();
    let mut tape = Tape::new();
    let ids = bind_model(&mut tape, store, config)?;
    let imgs = tape.leaf(images.clone());
    let logits = match forward_classifier(&mut tape, imgs, batch, config, &ids, normalizer) {
        Ok(v) => v,
        Err(FctError::NonFinite(stage)) => return Ok(Err(stage)),
        Err(e) => return Err(e),
    };
    let loss = tape.cross_entropy_mean(logits, Arc::new(labels.to_vec()))?;
    let loss_val = tape.value(loss).data()[0];
    if !loss_val.is_finite() {
        return Ok(Err("loss".into()));
    }
    let grads = tape.backward(loss)?;
    store.zero_grads();
    tape.apply_grads(&grads, store)?;
    let gnorm = store.grad_norm();
    if !gnorm.is_finite() {
        return Ok(Err("gradients".into()));
    }
    Ok(Ok((loss_val, gnorm)))
}

fn clip_grads(store: &mut ParamStore, max_norm: f64) {
    let norm = store.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, p) in store.iter_mut() {
            p.grad = p.grad.scale(s);
        }
    }
}

/// Batches for steps `start..steps`, produced either inline or by a single
/// producer thread through a bounded queue of 4; identical output either way.
struct BatchStream {
    rx: Option<mpsc::Receiver<(RealTensor, Vec<usize>)>>,
    inline: Option<(SyntheticSpectralDataset, usize, bool)>,
    next_step: u64,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl BatchStream {
    fn new(dataset: &SyntheticSpectralDataset, opts: &TrainOptions, start: u64) -> Self {
        if opts.threads > 1 && !opts.fixed_batch {
            let (tx, rx) = mpsc::sync_channel(4);
            let ds = dataset.clone();
            let batch = opts.batch_size;
            let steps = opts.steps;
            let handle = std::thread::spawn(move || {
                for step in start..steps {
                    if tx.send(ds.train_batch(step, batch)).is_err() {
                        break;
                    }
                }
            });
            Self {
                rx: Some(rx),
                inline: None,
                next_step: start,
                handle: Some(handle),
            }
        } else {
            Self {
                rx: None,
                inline: Some((dataset.clone(), opts.batch_size, opts.fixed_batch)),
                next_step: start,
                handle: None,
            }
        }
    }

    fn next(&mut self) -> (RealTensor, Vec<usize>) {
        let step = self.next_step;
        self.next_step += 1;
        if let Some(rx) = &self.rx {
            rx.recv().expect("producer thread ended early")
        } else {
            let (ds, batch, fixed) = self.inline.as_ref().expect("inline stream");
            ds.train_batch(if *fixed { 0 } else { step }, *batch)
        }
    }
}

impl Drop for BatchStream {
    fn drop(&mut self) {
        self.rx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Run (or resume) training from the store's current step. Emits one record
/// per executed step; on NaN the step is recorded with `nan_flag` and the
/// loop halts gracefully instead of erroring.
pub fn train_loop(
    config: &FctConfig,
    dataset: &SyntheticSpectralDataset,
    store: &mut ParamStore,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if opts.steps < 1 {
        return Err(FctError::Config("steps must be >= 1".into()));
    }
    let expect = config.input_size * config.input_size * config.in_channels;
    if config.in_channels != 1 || config.input_size != dataset.spec.image_size {
        return Err(FctError::Config(format!(
            "dataset {}x{} single-channel vs config expecting {} scalars",
            dataset.spec.image_size, dataset.spec.image_size, expect
        )));
    }
    if config.num_classes != dataset.spec.num_classes {
        return Err(FctError::Config(format!(
            "dataset has {} classes, config {}",
            dataset.spec.num_classes, config.num_classes
        )));
    }
    let mut records = Vec::new();
    let mut halted_on_nan = false;
    let mut last_eval_oa = None;
    let start = store.step;
    let mut stream = BatchStream::new(dataset, opts, start);
    for step in start..opts.steps {
        if let Some(bound) = opts.stop_after {
            if step >= bound {
                break;
            }
        }
        let t0 = Instant::now();
        let (images, labels) = stream.next();
        let images = scaled(&images, opts.input_scale);
        let lr_now = poly_lr(opts.optimizer.lr, step, opts.steps);
        let record = match step_loss_and_grads(config, store, &images, &labels, opts.normalizer)? {
            Ok((loss, _)) => {
                if let Some(c) = opts.grad_clip {
                    clip_grads(store, c);
                }
                let gnorm = store.grad_norm();
                opts.optimizer.step(store, lr_now);
                TrainRecord {
                    step,
                    loss,
                    grad_norm: gnorm,
                    nan_flag: false,
                    lr: lr_now,
                    wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                }
            }
            Err(_stage) => {
                halted_on_nan = true;
                TrainRecord {
                    step,
                    loss: f64::NAN,
                    grad_norm: f64::NAN,
                    nan_flag: true,
                    lr: lr_now,
                    wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                }
            }
        };
        let nan = record.nan_flag;
        records.push(record);
        if nan {
            break;
        }
        if let Some(es) = &opts.early_stop {
            if (step + 1) % es.interval == 0 {
                let oa = evaluate(config, store, dataset, opts.normalizer, es.batches, opts)?;
                last_eval_oa = Some(oa);
                if oa >= es.target_oa {
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        records,
        halted_on_nan,
        last_eval_oa,
    })
}

/// Held-out overall accuracy (Eq. 17) over `batches` evaluation batches.
pub fn evaluate(
    config: &FctConfig,
    store: &ParamStore,
    dataset: &SyntheticSpectralDataset,
    normalizer: Normalizer,
    batches: usize,
    opts: &TrainOptions,
) -> Result<f64> {
    let mut preds = Vec::new();
    let mut labels_all = Vec::new();
    for b in 0..batches {
        let (images, labels) = dataset.eval_batch(b as u64, opts.batch_size);
        let images = scaled(&images, opts.input_scale);
        let mut tape = Tape::new();
        let ids = bind_model(&mut tape, store, config)?;
        let imgs = tape.leaf(images);
        let logits =
            forward_classifier(&mut tape, imgs, labels.len(), config, &ids, normalizer)?;
        let v = tape.value(logits);
        let k = v.cols();
        for r in 0..v.rows() {
            let row = &v.data()[r * k..(r + 1) * k];
            let arg = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .unwrap_or(0);
            preds.push(arg);
        }
        labels_all.extend(labels);
    }
    Ok(overall_accuracy(&preds, &labels_all))
}
