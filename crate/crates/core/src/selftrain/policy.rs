//! The voters' decision policy: unanimous, above-threshold agreement emits a
//! pseudo label, anything else abstains.

use crate::corpus::{Document, LabeledExample, Vocab};
use crate::error::Result;
use crate::model::{encode, ensemble_argmax, voters_forward, ModelParams};
use crate::selftrain::config::ConsistencyRule;
use crate::thresholding::{Agreement, PredictionRecord};

/// Runs the voters on each document and captures the ensemble verdict.
/// When gold labels are supplied they are attached positionally.
pub fn predict_records(
    params: &ModelParams,
    vocab: &Vocab,
    docs: &[Document],
    gold: Option<&[usize]>,
) -> Result<Vec<PredictionRecord>> {
    if let Some(gold) = gold {
        assert_eq!(gold.len(), docs.len(), "gold labels must align with docs");
    }
    docs.iter()
        .enumerate()
        .map(|(i, doc)| {
            let x = encode(params, &vocab.encode(doc))?;
            let dists = voters_forward(params, &x);
            Ok(PredictionRecord {
                agreement: Agreement::from_distributions(&dists),
                gold_label: gold.map(|g| g[i]),
            })
        })
        .collect()
}

/// Plain evaluation predictions: argmax of the voter-mean distribution.
/// Never abstains; used for test metrics, not for pseudo-labeling.
pub fn predict_labels(params: &ModelParams, vocab: &Vocab, docs: &[Document]) -> Result<Vec<usize>> {
    docs.iter()
        .map(|doc| {
            let x = encode(params, &vocab.encode(doc))?;
            Ok(ensemble_argmax(&voters_forward(params, &x)))
        })
        .collect()
}

/// Documents that cleared the decision policy at a given α, with the labels
/// the policy emitted. Abstained documents are excluded.
#[derive(Clone, Debug)]
pub struct PseudoLabeledSet {
    pub alpha: f64,
    pub items: Vec<(Document, usize)>,
}

/// Keeps documents whose record is unanimous with min confidence > α.
pub fn generate_pseudo_labels(
    params: &ModelParams,
    vocab: &Vocab,
    docs: &[Document],
    alpha: f64,
) -> Result<PseudoLabeledSet> {
    let records = predict_records(params, vocab, docs, None)?;
    let items = docs
        .iter()
        .zip(&records)
        .filter_map(|(doc, r)| match r.agreement {
            Agreement::Agreed {
                label,
                min_confidence,
            } if min_confidence > alpha => Some((doc.clone(), label)),
            _ => None,
        })
        .collect();
    Ok(PseudoLabeledSet { alpha, items })
}

/// Result of source-consistency filtering: the surviving examples and the
/// ids removed this round (removal is permanent for the rest of the run).
#[derive(Clone, Debug)]
pub struct ConsistencyOutcome {
    pub kept: Vec<LabeledExample>,
    pub removed_ids: Vec<String>,
}

/// Drops source examples the model no longer predicts correctly.
///
/// Under [`ConsistencyRule::Thresholded`] a sample survives only if it would
/// be recalled at α (unanimous, min confidence > α) *and* the agreed class
/// matches its gold label. Under [`ConsistencyRule::Argmax`] the plain
/// ensemble argmax just has to match the gold label.
pub fn filter_consistent_source(
    params: &ModelParams,
    vocab: &Vocab,
    data: &[LabeledExample],
    alpha: f64,
    rule: ConsistencyRule,
) -> Result<ConsistencyOutcome> {
    let docs: Vec<Document> = data.iter().map(|e| e.doc.clone()).collect();
    let keep: Vec<bool> = match rule {
        ConsistencyRule::Thresholded => {
            let records = predict_records(params, vocab, &docs, None)?;
            data.iter()
                .zip(&records)
                .map(|(example, r)| match r.agreement {
                    Agreement::Agreed {
                        label,
                        min_confidence,
                    } => min_confidence > alpha && label == example.label,
                    Agreement::Abstain => false,
                })
                .collect()
        }
        ConsistencyRule::Argmax => {
            let preds = predict_labels(params, vocab, &docs)?;
            data.iter()
                .zip(&preds)
                .map(|(example, &p)| p == example.label)
                .collect()
        }
    };
    let mut kept = Vec::new();
    let mut removed_ids = Vec::new();
    for (example, keep) in data.iter().zip(keep) {
        if keep {
            kept.push(example.clone());
        } else {
            removed_ids.push(example.doc.id.clone());
        }
    }
    Ok(ConsistencyOutcome { kept, removed_ids })
}
