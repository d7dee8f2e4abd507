//! Mean-teacher semi-supervised training loop: supervised warmup, teacher
//! pseudo-labels with confidence gating, mask-based mixing of unlabeled
//! pairs, student SGD, and teacher EMA updates.
//!
//! Randomness is split into independent streams forked from the experiment
//! seed so that `(config, seed)` fully determines every batch, mask, and
//! parameter value, and so that content-dependent draw counts in one stream
//! (e.g. ClassMix) cannot perturb the others:
//!
//! - stream 1: parameter initialization
//! - stream 2: labeled/unlabeled split of the train pool
//! - stream 3: labeled batch sampling
//! - stream 4: unlabeled pair sampling
//! - stream 5: mask generation (p draw + per-block class subsets)

use crate::config::{ExperimentConfig, Strategy};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grid::{argmax_labels, Grid, Image, LabelMap, MixMask};
use crate::losses::{confidence_gate, supervised_ce, unsupervised_ce, LossReport};
use crate::maskgen::{classmix_mask, complexmix_mask_with, cutmix_mask, sample_p};
use crate::metrics::ConfusionMatrix;
use crate::mixer::{mix_images, mix_labels, mix_weights};
use crate::model::{
    backward, forward, poly_lr, sgd_step, softmax, ModelParams, ReferenceNet,
};
use crate::rng::Rng;

const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_LABELED: u64 = 3;
const STREAM_UNLABELED: u64 = 4;
const STREAM_MASK: u64 = 5;

/// Draws fixed-size batches from an id pool, reshuffling (seeded) whenever an
/// epoch is exhausted. Returns `None` when the pool is smaller than the batch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    ids: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl BatchSampler {
    pub fn new(mut ids: Vec<usize>, mut rng: Rng) -> Self {
        rng.shuffle(&mut ids);
        BatchSampler {
            ids,
            cursor: 0,
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn next_batch(&mut self, n: usize) -> Option<Vec<usize>> {
        if n == 0 || n > self.ids.len() {
            return None;
        }
        if self.cursor + n > self.ids.len() {
            self.rng.shuffle(&mut self.ids);
            self.cursor = 0;
        }
        let batch = self.ids[self.cursor..self.cursor + n].to_vec();
        self.cursor += n;
        Some(batch)
    }
}

/// One row of training history.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    pub lr: f64,
    pub report: LossReport,
    /// Student mIoU on the validation split, when evaluated this iteration.
    pub val_miou: Option<f64>,
    /// Teacher mIoU on the validation split, when evaluated and a teacher is
    /// in play.
    pub teacher_val_miou: Option<f64>,
}

/// Everything the loop mutates: student and teacher parameters, the iteration
/// counter, samplers, the mask rng stream, and the per-iteration history.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: ReferenceNet,
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub iter: usize,
    pub config: ExperimentConfig,
    pub history: Vec<IterationLog>,
    /// Mask-generation stream (stream 5).
    pub rng: Rng,
    pub labeled_sampler: BatchSampler,
    pub unlabeled_sampler: BatchSampler,
    /// Ids of the validation images in the dataset.
    pub validation_ids: Vec<usize>,
    /// Count of degenerate (all-zero) masks encountered.
    pub degenerate_masks: usize,
}

/// A labeled minibatch, borrowed from the dataset.
pub struct LabeledBatch<'a> {
    pub images: Vec<&'a Image>,
    pub labels: Vec<&'a LabelMap>,
}

/// An unlabeled image pair `(u_a, u_b)`.
pub struct UnlabeledPair<'a> {
    pub a: &'a Image,
    pub b: &'a Image,
}

impl TrainState {
    /// Split the dataset's train pool per the config, initialize the student,
    /// and set the teacher to an exact copy of the student.
    pub fn new(config: &ExperimentConfig, dataset: &Dataset) -> Result<TrainState> {
        config.validate()?;
        if dataset.images.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        let root = Rng::new(config.seed);

        let pool = dataset.manifest.train_pool();
        if pool.is_empty() {
            return Err(Error::invalid("dataset has no training images"));
        }
        let n_labeled = (config.labeled_fraction * pool.len() as f64).round() as usize;
        if n_labeled == 0 {
            return Err(Error::invalid(format!(
                "labeled_fraction {} yields zero labeled samples",
                config.labeled_fraction
            )));
        }
        let mut shuffled = pool.clone();
        root.fork(STREAM_SPLIT).shuffle(&mut shuffled);
        let labeled_ids = shuffled[..n_labeled].to_vec();
        let unlabeled_ids = shuffled[n_labeled..].to_vec();

        let net = ReferenceNet::standard(dataset.num_classes());
        let student = net.init_params(&mut root.fork(STREAM_INIT));
        let teacher = student.clone();

        Ok(TrainState {
            net,
            student,
            teacher,
            iter: 0,
            config: config.clone(),
            history: Vec::new(),
            rng: root.fork(STREAM_MASK),
            labeled_sampler: BatchSampler::new(labeled_ids, root.fork(STREAM_LABELED)),
            unlabeled_sampler: BatchSampler::new(unlabeled_ids, root.fork(STREAM_UNLABELED)),
            validation_ids: dataset.manifest.validation.clone(),
            degenerate_masks: 0,
        })
    }

    fn gather<'a>(&self, dataset: &'a Dataset, ids: &[usize]) -> LabeledBatch<'a> {
        LabeledBatch {
            images: ids.iter().map(|&id| &dataset.images[id]).collect(),
            labels: ids.iter().map(|&id| &dataset.labels[id]).collect(),
        }
    }

    /// Effective unsupervised weight at an iteration (post-warmup ramp).
    pub fn effective_lambda(&self, iter: usize) -> f64 {
        let warmup = self.config.resolved_warmup();
        if iter < warmup {
            return 0.0;
        }
        let ramp = self.config.lambda_ramp_iters;
        if ramp == 0 {
            self.config.lambda
        } else {
            self.config.lambda * (((iter - warmup) as f64 / ramp as f64).min(1.0))
        }
    }
}

/// Blend the teacher's view of an unlabeled pair under a mask: the mixed
/// image, its mixed pseudo-label, and the mixed confidence gate.
pub struct MixedSample {
    pub image: Image,
    pub pseudo: LabelMap,
    pub gate: Grid,
}

pub fn build_mixed_sample(
    pair: &UnlabeledPair,
    pseudo_a: &LabelMap,
    pseudo_b: &LabelMap,
    gate_a: &Grid,
    gate_b: &Grid,
    mask: &MixMask,
) -> Result<MixedSample> {
    Ok(MixedSample {
        image: mix_images(pair.a, pair.b, mask)?,
        pseudo: mix_labels(pseudo_a, pseudo_b, mask)?,
        gate: mix_weights(gate_a, gate_b, mask)?,
    })
}

/// Exponential moving average of teacher parameters toward the student:
/// `phi <- alpha * phi + (1 - alpha) * theta`, element-wise over values.
/// Gradient and momentum buffers are untouched.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("ema alpha {alpha} outside [0, 1]")));
    }
    if teacher.tensors.len() != student.tensors.len() {
        return Err(Error::ShapeMismatch {
            context: "ema_update",
            expected: teacher.tensors.len().to_string(),
            actual: student.tensors.len().to_string(),
        });
    }
    for (t, s) in teacher.tensors.iter_mut().zip(&student.tensors) {
        if t.shape != s.shape {
            return Err(Error::ShapeMismatch {
                context: "ema_update tensor",
                expected: format!("{:?}", t.shape),
                actual: format!("{:?}", s.shape),
            });
        }
        for (tv, sv) in t.values.iter_mut().zip(&s.values) {
            *tv = alpha * *tv + (1.0 - alpha) * sv;
        }
    }
    Ok(())
}

/// Accumulate the supervised branch gradient into the student and return the
/// batch-mean loss.
fn supervised_branch(state: &mut TrainState, batch: &LabeledBatch) -> Result<f64> {
    let n = batch.images.len();
    if n == 0 {
        return Err(Error::invalid("empty labeled batch"));
    }
    let scale = 1.0 / n as f64;
    let mut loss_sum = 0.0;
    for (img, truth) in batch.images.iter().zip(&batch.labels) {
        let (logits, cache) = forward(&state.net, &state.student, img)?;
        let probs = softmax(&logits)?;
        let (loss, mut grad) = supervised_ce(&probs, truth)?;
        loss_sum += loss;
        for g in &mut grad.data {
            *g *= scale;
        }
        backward(&state.net, &mut state.student, &cache, &grad)?;
    }
    Ok(loss_sum * scale)
}

/// One purely supervised step (used during warmup and by `Strategy::None`).
pub fn supervised_step(state: &mut TrainState, batch: &LabeledBatch) -> Result<LossReport> {
    let loss = supervised_branch(state, batch)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: format!("supervised loss at iteration {}", state.iter),
        });
    }
    let lr = poly_lr(state.iter, state.config.total_iters, state.config.lr0, state.config.poly_power);
    sgd_step(&mut state.student, lr, state.config.momentum, state.config.weight_decay)?;
    state.iter += 1;
    Ok(LossReport::supervised_only(loss, 0.0))
}

/// Supervised warmup: `warmup_iters` supervised steps on labeled data, after
/// which the teacher is initialized as an exact copy of the student.
pub fn warmup(state: &mut TrainState, dataset: &Dataset) -> Result<()> {
    if state.iter != 0 {
        return Err(Error::invalid("warmup must start at iteration 0"));
    }
    let warmup_iters = state.config.resolved_warmup();
    for _ in 0..warmup_iters {
        let ids = state
            .labeled_sampler
            .next_batch(state.config.batch_size.min(state.labeled_sampler.len()))
            .ok_or_else(|| Error::invalid("labeled pool is empty"))?;
        let batch = state.gather(dataset, &ids);
        let lr = poly_lr(state.iter, state.config.total_iters, state.config.lr0, state.config.poly_power);
        let report = supervised_step_with_lr(state, &batch, lr)?;
        state.history.push(IterationLog {
            iter: state.iter - 1,
            lr,
            report,
            val_miou: None,
            teacher_val_miou: None,
        });
    }
    state.teacher = state.student.clone();
    Ok(())
}

fn supervised_step_with_lr(
    state: &mut TrainState,
    batch: &LabeledBatch,
    lr: f64,
) -> Result<LossReport> {
    let loss = supervised_branch(state, batch)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: format!("supervised loss at iteration {}", state.iter),
        });
    }
    sgd_step(&mut state.student, lr, state.config.momentum, state.config.weight_decay)?;
    state.iter += 1;
    Ok(LossReport::supervised_only(loss, 0.0))
}

/// Generate the iteration's mixing mask from the teacher's pseudo-label of
/// `u_a`, per the configured strategy. Consumes only the mask stream.
fn strategy_mask(state: &mut TrainState, pseudo_a: &LabelMap) -> Result<(MixMask, bool)> {
    match state.config.strategy {
        Strategy::Cutmix => {
            let m = cutmix_mask(pseudo_a.height(), pseudo_a.width(), &mut state.rng)?;
            Ok((m, false))
        }
        Strategy::Classmix => {
            let out = classmix_mask(pseudo_a, &mut state.rng);
            Ok((out.mask, out.degenerate))
        }
        Strategy::Complexmix => {
            let spec = state.config.complexmix_spec();
            let p = sample_p(&spec, pseudo_a.height(), pseudo_a.width(), &mut state.rng)?;
            let m = complexmix_mask_with(pseudo_a, p, spec.sampling, &mut state.rng)?;
            let degenerate = m.is_all_zero();
            Ok((m, degenerate))
        }
        Strategy::None => Err(Error::invalid("strategy none has no mask")),
    }
}

/// One semi-supervised step: teacher pseudo-labels and gates for the pair,
/// strategy mask from the first image's pseudo-label, mixing, combined
/// student update, then teacher EMA.
///
/// With `pair = None` (exhausted or empty unlabeled pool) the step degrades
/// to a supervised update; the teacher still tracks the student by EMA.
pub fn semi_step(
    state: &mut TrainState,
    labeled: &LabeledBatch,
    pair: Option<&UnlabeledPair>,
) -> Result<LossReport> {
    if state.config.strategy == Strategy::None {
        return supervised_step(state, labeled);
    }

    let sup_loss = supervised_branch(state, labeled)?;
    if !sup_loss.is_finite() {
        return Err(Error::NonFinite {
            context: format!("supervised loss at iteration {}", state.iter),
        });
    }

    let lambda_t = state.effective_lambda(state.iter);
    let report = if let Some(pair) = pair {
        // Teacher view of the pair.
        let (logits_a, _) = forward(&state.net, &state.teacher, pair.a)?;
        let probs_a = softmax(&logits_a)?;
        let (logits_b, _) = forward(&state.net, &state.teacher, pair.b)?;
        let probs_b = softmax(&logits_b)?;
        let pseudo_a = argmax_labels(&probs_a);
        let pseudo_b = argmax_labels(&probs_b);
        let gate_a = confidence_gate(&probs_a, state.config.tau)?;
        let gate_b = confidence_gate(&probs_b, state.config.tau)?;

        let (mask, degenerate) = strategy_mask(state, &pseudo_a)?;
        if degenerate {
            state.degenerate_masks += 1;
        }
        let mixed = build_mixed_sample(pair, &pseudo_a, &pseudo_b, &gate_a, &gate_b, &mask)?;

        // Student consistency branch on the mixed sample.
        let (logits_ab, cache_ab) = forward(&state.net, &state.student, &mixed.image)?;
        let probs_ab = softmax(&logits_ab)?;
        let gated = unsupervised_ce(&probs_ab, &mixed.pseudo, &mixed.gate, state.config.unsup_norm)?;
        if lambda_t > 0.0 && !gated.all_gated_out {
            let mut grad = gated.grad_logits;
            for g in &mut grad.data {
                *g *= lambda_t;
            }
            backward(&state.net, &mut state.student, &cache_ab, &grad)?;
        }
        LossReport::new(
            sup_loss,
            gated.loss,
            lambda_t,
            gated.gated_in_fraction,
            gated.all_gated_out,
        )
    } else {
        LossReport::supervised_only(sup_loss, lambda_t)
    };

    if !report.total.is_finite() {
        return Err(Error::NonFinite {
            context: format!("combined loss at iteration {}", state.iter),
        });
    }

    let lr = poly_lr(state.iter, state.config.total_iters, state.config.lr0, state.config.poly_power);
    sgd_step(&mut state.student, lr, state.config.momentum, state.config.weight_decay)?;
    ema_update(&mut state.teacher, &state.student, state.config.ema_alpha)?;
    state.iter += 1;
    Ok(report)
}

/// Forward every listed image and accumulate argmax predictions against the
/// ground truth.
pub fn evaluate(
    net: &ReferenceNet,
    params: &ModelParams,
    dataset: &Dataset,
    ids: &[usize],
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(net.num_classes());
    for &id in ids {
        let (logits, _) = forward(net, params, &dataset.images[id])?;
        let pred = argmax_labels(&softmax(&logits)?);
        cm.accumulate(&pred, &dataset.labels[id])?;
    }
    Ok(cm)
}

/// Final state and metrics of one training run.
pub struct TrainOutcome {
    pub state: TrainState,
    /// Student confusion matrix on the validation split.
    pub confusion: ConfusionMatrix,
    pub val_miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    /// Teacher validation mIoU (semi-supervised strategies only).
    pub teacher_val_miou: Option<f64>,
}

/// Run the full loop: warmup, then `total_iters - warmup_iters`
/// semi-supervised steps with periodic validation snapshots.
pub fn run(config: &ExperimentConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    run_observed(config, dataset, &mut |_, _| Ok(()))
}

/// [`run`], invoking `observer` after every iteration (for streaming logs and
/// periodic checkpoints). Observer errors abort the run.
pub fn run_observed(
    config: &ExperimentConfig,
    dataset: &Dataset,
    observer: &mut dyn FnMut(&TrainState, &IterationLog) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut state = TrainState::new(config, dataset)?;
    let eval_every = config.resolved_eval_every();

    warmup(&mut state, dataset)?;
    for i in 0..state.history.len() {
        let log = state.history[i].clone();
        observer(&state, &log)?;
    }

    while state.iter < config.total_iters {
        let ids = state
            .labeled_sampler
            .next_batch(config.batch_size.min(state.labeled_sampler.len()))
            .ok_or_else(|| Error::invalid("labeled pool is empty"))?;
        let batch = state.gather(dataset, &ids);

        let pair_ids = if config.strategy == Strategy::None {
            None
        } else {
            state.unlabeled_sampler.next_batch(2)
        };
        let report = match pair_ids {
            Some(ids) => {
                let pair = UnlabeledPair {
                    a: &dataset.images[ids[0]],
                    b: &dataset.images[ids[1]],
                };
                semi_step(&mut state, &batch, Some(&pair))?
            }
            None => semi_step(&mut state, &batch, None)?,
        };

        let evaluate_now = state.iter % eval_every == 0 || state.iter == config.total_iters;
        let (val_miou, teacher_val_miou) = if evaluate_now && !state.validation_ids.is_empty() {
            let cm = evaluate(&state.net, &state.student, dataset, &state.validation_ids)?;
            let student_miou = cm.mean_iou();
            let teacher_miou = if config.strategy != Strategy::None {
                evaluate(&state.net, &state.teacher, dataset, &state.validation_ids)?.mean_iou()
            } else {
                None
            };
            (student_miou, teacher_miou)
        } else {
            (None, None)
        };

        let lr = poly_lr(state.iter - 1, config.total_iters, config.lr0, config.poly_power);
        let log = IterationLog {
            iter: state.iter - 1,
            lr,
            report,
            val_miou,
            teacher_val_miou,
        };
        observer(&state, &log)?;
        state.history.push(log);
    }

    let confusion = evaluate(&state.net, &state.student, dataset, &state.validation_ids)?;
    let val_miou = confusion.mean_iou().ok_or_else(|| {
        Error::invalid("validation split defines no class; cannot compute mIoU")
    })?;
    let per_class_iou = confusion.iou_per_class();
    let teacher_val_miou = if config.strategy != Strategy::None {
        evaluate(&state.net, &state.teacher, dataset, &state.validation_ids)?.mean_iou()
    } else {
        None
    };
    Ok(TrainOutcome {
        state,
        confusion,
        val_miou,
        per_class_iou,
        teacher_val_miou,
    })
}
