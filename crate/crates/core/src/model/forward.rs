//! Forward passes and the three training losses.

use crate::corpus::{MaskedBatch, MASK_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::model::math::{add_scaled, dot, softmax};
use crate::model::{Distribution, ModelParams, VoterNet};

/// Mean of the embeddings of all non-`[PAD]` tokens.
///
/// Order-invariant by construction, and padding never changes the result.
pub fn encode(params: &ModelParams, ids: &[u32]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; params.dims.embed];
    let mut n = 0usize;
    for &id in ids {
        if id == PAD_ID {
            continue;
        }
        add_scaled(&mut acc, params.embeddings.row(id as usize), 1.0);
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidData(
            "cannot encode an input with no non-PAD tokens".into(),
        ));
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    Ok(acc)
}

/// One voter: softmax(W₂·tanh(W₁x + b₁) + b₂). Returns the hidden
/// activation alongside the distribution so backprop can reuse it.
pub(crate) fn voter_forward(voter: &VoterNet, x: &[f64]) -> (Vec<f64>, Distribution) {
    let mut hidden = voter.w1.matvec(x);
    for (h, b) in hidden.iter_mut().zip(&voter.b1) {
        *h = (*h + b).tanh();
    }
    let mut logits = voter.w2.matvec(&hidden);
    for (z, b) in logits.iter_mut().zip(&voter.b2) {
        *z += b;
    }
    (hidden, Distribution::from_softmax(softmax(&logits)))
}

/// All M voter distributions for a feature vector.
pub fn voters_forward(params: &ModelParams, feature: &[f64]) -> Vec<Distribution> {
    params
        .voters
        .iter()
        .map(|v| voter_forward(v, feature).1)
        .collect()
}

/// Context vector for a masked sequence: mean embedding of the tokens that
/// are neither masked nor padding. Fully-masked inputs get a zero context.
pub(crate) fn mlm_context(params: &ModelParams, batch: &MaskedBatch) -> (Vec<f64>, Vec<usize>) {
    let mut ctx = vec![0.0; params.dims.embed];
    let mut context_positions = Vec::new();
    for (pos, &id) in batch.input_ids.iter().enumerate() {
        if id == PAD_ID || id == MASK_ID {
            continue;
        }
        add_scaled(&mut ctx, params.embeddings.row(id as usize), 1.0);
        context_positions.push(pos);
    }
    if !context_positions.is_empty() {
        let n = context_positions.len() as f64;
        for c in &mut ctx {
            *c /= n;
        }
    }
    (ctx, context_positions)
}

/// Mean cross-entropy of the MLM head over the batch's target positions.
pub fn mlm_forward_loss(params: &ModelParams, batch: &MaskedBatch) -> Result<f64> {
    if batch.targets.is_empty() {
        return Err(Error::InvalidData("masked batch has no targets".into()));
    }
    let (ctx, _) = mlm_context(params, batch);
    let mut logits = params.mlm_w.matvec(&ctx);
    for (z, b) in logits.iter_mut().zip(&params.mlm_b) {
        *z += b;
    }
    let probs = softmax(&logits);
    let mut loss = 0.0;
    for &(_, original) in &batch.targets {
        loss -= probs[original as usize].ln();
    }
    Ok(loss / batch.targets.len() as f64)
}

/// Mean squared error between paired teacher and student distributions,
/// averaged over voters and classes.
pub fn soft_loss(teacher: &[Distribution], student: &[Distribution]) -> Result<f64> {
    if teacher.len() != student.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} teacher voters vs {} student voters",
            teacher.len(),
            student.len()
        )));
    }
    if teacher.is_empty() {
        return Err(Error::ShapeMismatch("no voter distributions".into()));
    }
    let classes = teacher[0].len();
    let mut total = 0.0;
    for (t, s) in teacher.iter().zip(student) {
        if t.len() != classes || s.len() != classes {
            return Err(Error::ShapeMismatch(format!(
                "class counts differ: {} vs {}",
                t.len(),
                s.len()
            )));
        }
        for (a, b) in t.probs().iter().zip(s.probs()) {
            let d = a - b;
            total += d * d;
        }
    }
    Ok(total / (teacher.len() * classes) as f64)
}

/// Mean over voters of the cross entropy −ln pᵢ[y]: every voter is trained
/// toward the same hard label.
pub fn hard_loss(label: usize, student: &[Distribution]) -> Result<f64> {
    if student.is_empty() {
        return Err(Error::ShapeMismatch("no voter distributions".into()));
    }
    let classes = student[0].len();
    if label >= classes {
        return Err(Error::InvalidData(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    let total: f64 = student.iter().map(|d| -d.probs()[label].ln()).sum();
    Ok(total / student.len() as f64)
}

/// Squared-distance dot helper kept private to this module.
#[allow(dead_code)]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    dot(a, a) - 2.0 * dot(a, b) + dot(b, b)
}
