//! Exact analytic gradients for the three losses.
//!
//! The derivations are the standard ones for softmax heads over a tanh
//! hidden layer and a mean-pooled embedding encoder; the test suite checks
//! every entry against central finite differences.

use crate::corpus::{MaskedBatch, PAD_ID};
use crate::error::{Error, Result};
use crate::model::forward::{mlm_context, voter_forward};
use crate::model::math::{add_scaled, softmax, Matrix};
use crate::model::{encode, hard_loss, mlm_forward_loss, soft_loss, Distribution, ModelParams};

/// Gradient of one voter head.
#[derive(Clone, Debug)]
pub struct VoterGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Gradients for every parameter block; frozen blocks stay all-zero.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub embeddings: Matrix,
    pub mlm_w: Matrix,
    pub mlm_b: Vec<f64>,
    pub voters: Vec<VoterGrads>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Gradients {
        Gradients {
            embeddings: Matrix::zeros(params.embeddings.rows(), params.embeddings.cols()),
            mlm_w: Matrix::zeros(params.mlm_w.rows(), params.mlm_w.cols()),
            mlm_b: vec![0.0; params.mlm_b.len()],
            voters: params
                .voters
                .iter()
                .map(|v| VoterGrads {
                    w1: Matrix::zeros(v.w1.rows(), v.w1.cols()),
                    b1: vec![0.0; v.b1.len()],
                    w2: Matrix::zeros(v.w2.rows(), v.w2.cols()),
                    b2: vec![0.0; v.b2.len()],
                })
                .collect(),
        }
    }

    pub fn named_blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("embeddings".into(), self.embeddings.data()),
            ("mlm_w".into(), self.mlm_w.data()),
            ("mlm_b".into(), &self.mlm_b),
        ];
        for (i, v) in self.voters.iter().enumerate() {
            out.push((format!("voter{i}.w1"), v.w1.data()));
            out.push((format!("voter{i}.b1"), &v.b1));
            out.push((format!("voter{i}.w2"), v.w2.data()));
            out.push((format!("voter{i}.b2"), &v.b2));
        }
        out
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        self.named_blocks().into_iter().map(|(_, b)| b).collect()
    }

    fn check_finite(&self) -> Result<()> {
        for (name, block) in self.named_blocks() {
            if block.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { tensor: name });
            }
        }
        Ok(())
    }
}

/// One training batch, tagged by the loss it trains.
pub enum TrainBatch<'a> {
    /// Masked sequences; the loss is the mean of the per-sequence MLM losses.
    Mlm(&'a [MaskedBatch]),
    /// (input ids, per-voter teacher distributions) pairs.
    Soft(&'a [(Vec<u32>, Vec<Distribution>)]),
    /// (input ids, hard label) pairs.
    Hard(&'a [(Vec<u32>, usize)]),
}

impl TrainBatch<'_> {
    fn len(&self) -> usize {
        match self {
            TrainBatch::Mlm(b) => b.len(),
            TrainBatch::Soft(b) => b.len(),
            TrainBatch::Hard(b) => b.len(),
        }
    }
}

/// Forward-only batch loss: the quantity `backward` differentiates.
pub fn batch_loss(params: &ModelParams, batch: &TrainBatch) -> Result<f64> {
    if batch.len() == 0 {
        return Err(Error::InvalidData("empty training batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    match batch {
        TrainBatch::Mlm(items) => {
            for mb in *items {
                total += mlm_forward_loss(params, mb)?;
            }
        }
        TrainBatch::Soft(items) => {
            for (ids, teacher) in *items {
                let x = encode(params, ids)?;
                let student = crate::model::voters_forward(params, &x);
                total += soft_loss(teacher, &student)?;
            }
        }
        TrainBatch::Hard(items) => {
            for (ids, label) in *items {
                let x = encode(params, ids)?;
                let student = crate::model::voters_forward(params, &x);
                total += hard_loss(*label, &student)?;
            }
        }
    }
    Ok(total * scale)
}

/// Computes the batch loss and the gradient of every unfrozen parameter.
/// With `freeze_embeddings` the embedding block receives exactly zero.
pub fn backward(
    params: &ModelParams,
    batch: &TrainBatch,
    freeze_embeddings: bool,
) -> Result<(f64, Gradients)> {
    if batch.len() == 0 {
        return Err(Error::InvalidData("empty training batch".into()));
    }
    let mut grads = Gradients::zeros_like(params);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;

    match batch {
        TrainBatch::Mlm(items) => {
            for mb in *items {
                total += mlm_backward(params, mb, &mut grads, scale, freeze_embeddings)?;
            }
        }
        TrainBatch::Soft(items) => {
            for (ids, teacher) in *items {
                total += voter_backward(
                    params,
                    ids,
                    VoterLoss::Soft(teacher),
                    &mut grads,
                    scale,
                    freeze_embeddings,
                )?;
            }
        }
        TrainBatch::Hard(items) => {
            for (ids, label) in *items {
                total += voter_backward(
                    params,
                    ids,
                    VoterLoss::Hard(*label),
                    &mut grads,
                    scale,
                    freeze_embeddings,
                )?;
            }
        }
    }

    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            tensor: "loss".into(),
        });
    }
    grads.check_finite()?;
    Ok((loss, grads))
}

enum VoterLoss<'a> {
    Soft(&'a [Distribution]),
    Hard(usize),
}

/// Backprop through the voter heads and the mean-pooled encoder for one
/// sample; returns the per-sample loss. `weight` is the sample's share of
/// the batch mean.
fn voter_backward(
    params: &ModelParams,
    ids: &[u32],
    loss_kind: VoterLoss,
    grads: &mut Gradients,
    weight: f64,
    freeze_embeddings: bool,
) -> Result<f64> {
    let x = encode(params, ids)?;
    let m = params.voters.len() as f64;
    let mut dx = vec![0.0; x.len()];
    let mut sample_loss = 0.0;

    for (i, voter) in params.voters.iter().enumerate() {
        let (hidden, dist) = voter_forward(voter, &x);
        let probs = dist.probs();
        let classes = probs.len();

        // dL/dz for this voter under the sample loss.
        let dz: Vec<f64> = match &loss_kind {
            VoterLoss::Hard(label) => {
                if *label >= classes {
                    return Err(Error::InvalidData(format!(
                        "label {label} out of range for {classes} classes"
                    )));
                }
                sample_loss += -probs[*label].ln() / m;
                probs
                    .iter()
                    .enumerate()
                    .map(|(c, &p)| (p - if c == *label { 1.0 } else { 0.0 }) / m)
                    .collect()
            }
            VoterLoss::Soft(teacher) => {
                if teacher.len() != params.voters.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} teacher voters vs {} student voters",
                        teacher.len(),
                        params.voters.len()
                    )));
                }
                let t = teacher[i].probs();
                if t.len() != classes {
                    return Err(Error::ShapeMismatch(format!(
                        "class counts differ: {} vs {classes}",
                        t.len()
                    )));
                }
                let mc = m * classes as f64;
                let dp: Vec<f64> = probs
                    .iter()
                    .zip(t)
                    .map(|(&p, &tv)| {
                        let d = p - tv;
                        sample_loss += d * d / mc;
                        2.0 * d / mc
                    })
                    .collect();
                // Softmax Jacobian: dz_c = p_c (dp_c − Σ_k dp_k p_k).
                let inner: f64 = dp.iter().zip(probs).map(|(&g, &p)| g * p).sum();
                dp.iter()
                    .zip(probs)
                    .map(|(&g, &p)| p * (g - inner))
                    .collect()
            }
        };

        let vg = &mut grads.voters[i];
        vg.w2.add_outer(&dz, &hidden, weight);
        add_scaled(&mut vg.b2, &dz, weight);

        let dh = voter.w2.matvec_t(&dz);
        let da: Vec<f64> = dh
            .iter()
            .zip(&hidden)
            .map(|(&g, &h)| g * (1.0 - h * h))
            .collect();
        vg.w1.add_outer(&da, &x, weight);
        add_scaled(&mut vg.b1, &da, weight);
        add_scaled(&mut dx, &voter.w1.matvec_t(&da), 1.0);
    }

    if !freeze_embeddings {
        let n = ids.iter().filter(|&&id| id != PAD_ID).count() as f64;
        for &id in ids {
            if id != PAD_ID {
                grads
                    .embeddings
                    .add_row_scaled(id as usize, &dx, weight / n);
            }
        }
    }
    Ok(sample_loss)
}

/// Backprop through the MLM head for one masked sequence.
fn mlm_backward(
    params: &ModelParams,
    batch: &MaskedBatch,
    grads: &mut Gradients,
    weight: f64,
    freeze_embeddings: bool,
) -> Result<f64> {
    if batch.targets.is_empty() {
        return Err(Error::InvalidData("masked batch has no targets".into()));
    }
    let (ctx, context_positions) = mlm_context(params, batch);
    let mut logits = params.mlm_w.matvec(&ctx);
    for (z, b) in logits.iter_mut().zip(&params.mlm_b) {
        *z += b;
    }
    let probs = softmax(&logits);
    let t = batch.targets.len() as f64;
    let mut loss = 0.0;
    // dL/dlogits = p − mean of target one-hots.
    let mut dlogits = probs.clone();
    for &(_, original) in &batch.targets {
        loss -= probs[original as usize].ln();
        dlogits[original as usize] -= 1.0 / t;
    }
    loss /= t;

    grads.mlm_w.add_outer(&dlogits, &ctx, weight);
    add_scaled(&mut grads.mlm_b, &dlogits, weight);

    if !freeze_embeddings && !context_positions.is_empty() {
        let dctx = params.mlm_w.matvec_t(&dlogits);
        let n = context_positions.len() as f64;
        for &pos in &context_positions {
            let id = batch.input_ids[pos] as usize;
            grads.embeddings.add_row_scaled(id, &dctx, weight / n);
        }
    }
    Ok(loss)
}
