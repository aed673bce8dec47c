//! The three training loops: task-fitting MLM, soft distillation, and hard
//! fine-tuning. All loops are sequential and fully seeded.

use rand::seq::SliceRandom;

use crate::corpus::{balanced_resample, mask_tokens, Document, Vocab};
use crate::error::{Error, Result};
use crate::model::{backward, AdamHyper, AdamState, Distribution, ModelParams, TrainBatch};
use crate::model::{encode, voters_forward};
use crate::rng::{derive_seed, seeded_rng};
use crate::selftrain::config::SoftTarget;

/// Per-phase training options.
#[derive(Clone, Debug)]
pub struct TrainOpts {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hyper: AdamHyper,
    /// Linear warm-up fraction of the phase's total steps; 0 disables.
    pub warmup: f64,
    pub freeze_embeddings: bool,
    /// Phase seed; epoch shuffles and masking derive from it.
    pub seed: u64,
}

fn lr_at(opts: &TrainOpts, step: usize, total_steps: usize) -> f64 {
    if opts.warmup <= 0.0 {
        return opts.lr;
    }
    let ramp = (opts.warmup * total_steps as f64).max(1.0);
    opts.lr * (((step + 1) as f64) / ramp).min(1.0)
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut seeded_rng(seed));
    indices
}

/// Continued MLM training over a balanced bilingual mix, redrawn and
/// remasked every epoch. Returns the mean loss per epoch. The embedding
/// table always trains here regardless of the task-phase freeze flag.
pub fn run_btf(
    params: &mut ModelParams,
    vocab: &Vocab,
    src_docs: &[Document],
    tgt_docs: &[Document],
    mask_rate: f64,
    opts: &TrainOpts,
) -> Result<Vec<f64>> {
    if src_docs.is_empty() || tgt_docs.is_empty() {
        return Err(Error::InvalidData(
            "task fitting requires unlabeled documents in both languages".into(),
        ));
    }
    let mut state = AdamState::new(params, opts.hyper);
    let steps_per_epoch = (2 * src_docs.len().min(tgt_docs.len())).div_ceil(opts.batch_size);
    let total_steps = opts.epochs * steps_per_epoch;
    let mut losses = Vec::with_capacity(opts.epochs);
    let mut step = 0usize;
    for epoch in 0..opts.epochs {
        let mix = balanced_resample(
            src_docs,
            tgt_docs,
            derive_seed(opts.seed, &format!("btf-mix-{epoch}")),
        )?;
        let masked: Vec<_> = mix
            .iter()
            .enumerate()
            .map(|(i, doc)| {
                mask_tokens(
                    doc,
                    vocab,
                    mask_rate,
                    derive_seed(opts.seed, &format!("btf-mask-{epoch}-{i}")),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut epoch_loss = 0.0;
        for chunk in masked.chunks(opts.batch_size) {
            let (loss, grads) = backward(params, &TrainBatch::Mlm(chunk), false)?;
            state.step(params, &grads, lr_at(opts, step, total_steps));
            step += 1;
            epoch_loss += loss * chunk.len() as f64;
        }
        losses.push(epoch_loss / masked.len() as f64);
    }
    Ok(losses)
}

/// Distills the teacher's soft labels into the student over unlabeled
/// target documents. The teacher is read-only; with zero epochs the student
/// is returned unchanged. Returns the mean loss per epoch.
pub fn distill_soft(
    teacher: &ModelParams,
    student: &mut ModelParams,
    docs: &[Vec<u32>],
    soft_target: SoftTarget,
    opts: &TrainOpts,
) -> Result<Vec<f64>> {
    if docs.is_empty() {
        return Err(Error::InvalidData(
            "soft distillation requires unlabeled documents".into(),
        ));
    }
    // Teacher targets are fixed for the whole phase.
    let targets: Vec<Vec<Distribution>> = docs
        .iter()
        .map(|ids| {
            let x = encode(teacher, ids)?;
            let dists = voters_forward(teacher, &x);
            Ok(match soft_target {
                SoftTarget::Paired => dists,
                SoftTarget::Mean => {
                    let mean = Distribution::mean_of(&dists);
                    vec![mean; dists.len()]
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut state = AdamState::new(student, opts.hyper);
    let steps_per_epoch = docs.len().div_ceil(opts.batch_size);
    let total_steps = opts.epochs * steps_per_epoch;
    let mut losses = Vec::with_capacity(opts.epochs);
    let mut step = 0usize;
    for epoch in 0..opts.epochs {
        let order = shuffled_indices(docs.len(), derive_seed(opts.seed, &format!("soft-{epoch}")));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<(Vec<u32>, Vec<Distribution>)> = chunk
                .iter()
                .map(|&i| (docs[i].clone(), targets[i].clone()))
                .collect();
            let (loss, grads) = backward(student, &TrainBatch::Soft(&batch), opts.freeze_embeddings)?;
            state.step(student, &grads, lr_at(opts, step, total_steps));
            step += 1;
            epoch_loss += loss * chunk.len() as f64;
        }
        losses.push(epoch_loss / docs.len() as f64);
    }
    Ok(losses)
}

/// Cross-entropy fine-tuning over a labeled set, reshuffled every epoch.
/// Returns the mean loss per epoch.
pub fn finetune_hard(
    student: &mut ModelParams,
    data: &[(Vec<u32>, usize)],
    opts: &TrainOpts,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidData(
            "hard fine-tuning requires a non-empty training set \
             (the confidence threshold may be too high)"
                .into(),
        ));
    }
    let mut state = AdamState::new(student, opts.hyper);
    let steps_per_epoch = data.len().div_ceil(opts.batch_size);
    let total_steps = opts.epochs * steps_per_epoch;
    let mut losses = Vec::with_capacity(opts.epochs);
    let mut step = 0usize;
    for epoch in 0..opts.epochs {
        let order = shuffled_indices(data.len(), derive_seed(opts.seed, &format!("hard-{epoch}")));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<(Vec<u32>, usize)> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, grads) = backward(student, &TrainBatch::Hard(&batch), opts.freeze_embeddings)?;
            state.step(student, &grads, lr_at(opts, step, total_steps));
            step += 1;
            epoch_loss += loss * chunk.len() as f64;
        }
        losses.push(epoch_loss / data.len() as f64);
    }
    Ok(losses)
}

/// Source fine-tuning is hard fine-tuning on the labeled source set; it
/// produces the first round's teacher.
pub fn finetune_source(
    params: &mut ModelParams,
    data: &[(Vec<u32>, usize)],
    opts: &TrainOpts,
) -> Result<Vec<f64>> {
    finetune_hard(params, data, opts)
}
