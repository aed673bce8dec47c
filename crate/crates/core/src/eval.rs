//! Metrics: classification accuracy and entity-level F1 over BIO sequences,
//! plus report assembly from a finished run directory.

use std::collections::BTreeSet;
use std::path::Path;

use crate::corpus::{BioSequence, BioTag};
use crate::error::{Error, Result};
use crate::selftrain::manifest::{MetricRow, RunManifest};

/// Exact-match fraction between aligned label vectors.
pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::InvalidData("accuracy over empty label vectors".into()));
    }
    if pred.len() != gold.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    let correct = pred.iter().zip(gold).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / pred.len() as f64)
}

/// An entity span with inclusive token boundaries.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EntitySpan {
    pub entity_type: String,
    pub start: usize,
    pub end: usize,
}

/// Decodes maximal entity spans from a BIO sequence.
///
/// Scoring-compatible repair: an `I-X` with no open span of type X (after
/// `O`, at the start, or after a span of a different type) opens a new X
/// span, matching conlleval behavior on malformed output.
pub fn decode_spans(tags: &BioSequence) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in tags.iter_tags().enumerate() {
        match tag {
            BioTag::Outside => {
                if let Some((ty, start)) = open.take() {
                    spans.push(EntitySpan {
                        entity_type: ty,
                        start,
                        end: i - 1,
                    });
                }
            }
            BioTag::Begin(ty) => {
                if let Some((open_ty, start)) = open.take() {
                    spans.push(EntitySpan {
                        entity_type: open_ty,
                        start,
                        end: i - 1,
                    });
                }
                open = Some((ty.to_string(), i));
            }
            BioTag::Inside(ty) => match &open {
                Some((open_ty, _)) if open_ty == ty => {}
                _ => {
                    if let Some((open_ty, start)) = open.take() {
                        spans.push(EntitySpan {
                            entity_type: open_ty,
                            start,
                            end: i - 1,
                        });
                    }
                    open = Some((ty.to_string(), i));
                }
            },
        }
    }
    if let Some((ty, start)) = open {
        spans.push(EntitySpan {
            entity_type: ty,
            start,
            end: tags.len() - 1,
        });
    }
    spans
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Corpus-level entity F1: a predicted span counts as a true positive only
/// on an exact (type, start, end) match. Empty denominators score 0.
pub fn entity_f1(gold: &[BioSequence], pred: &[BioSequence]) -> Result<F1Scores> {
    if gold.len() != pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gold sequences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut tp = 0usize;
    let mut n_gold = 0usize;
    let mut n_pred = 0usize;
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::ShapeMismatch(format!(
                "sequence {i}: {} gold tags vs {} predicted",
                g.len(),
                p.len()
            )));
        }
        let gold_spans: BTreeSet<EntitySpan> = decode_spans(g).into_iter().collect();
        let pred_spans: BTreeSet<EntitySpan> = decode_spans(p).into_iter().collect();
        tp += gold_spans.intersection(&pred_spans).count();
        n_gold += gold_spans.len();
        n_pred += pred_spans.len();
    }
    let precision = if n_pred > 0 { tp as f64 / n_pred as f64 } else { 0.0 };
    let recall = if n_gold > 0 { tp as f64 / n_gold as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(F1Scores {
        precision,
        recall,
        f1,
    })
}

/// Per-phase metric table assembled from a run's manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<MetricRow>,
}

impl Report {
    /// CSV with the columns `phase,round,dataset,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,round,dataset,metric,value\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.phase, row.round, row.dataset, row.metric, row.value
            ));
        }
        out
    }

    /// Fixed-width rendering for terminals; values are shown ×100 to match
    /// the usual presentation of accuracy and F1.
    pub fn to_table(&self) -> String {
        let mut out = String::from(format!(
            "{:<16} {:>5} {:<16} {:<10} {:>8}\n",
            "phase", "round", "dataset", "metric", "value"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>5} {:<16} {:<10} {:>8.2}\n",
                row.phase,
                row.round,
                row.dataset,
                row.metric,
                row.value * 100.0
            ));
        }
        out
    }
}

/// Reads `manifest.json` in `run_dir` and assembles the metric report.
pub fn report(run_dir: &Path) -> Result<Report> {
    let manifest = RunManifest::read(&run_dir.join("manifest.json"))?;
    Ok(Report {
        rows: manifest.metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bio(tags: &[&str]) -> BioSequence {
        BioSequence::parse(tags.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn span(ty: &str, start: usize, end: usize) -> EntitySpan {
        EntitySpan {
            entity_type: ty.into(),
            start,
            end,
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn decode_spans_examples() {
        assert_eq!(
            decode_spans(&bio(&["B-PER", "I-PER", "O", "B-LOC"])),
            vec![span("PER", 0, 1), span("LOC", 3, 3)]
        );
        assert!(decode_spans(&bio(&["O", "O"])).is_empty());
        // Repair rule: orphan I- opens a span.
        assert_eq!(decode_spans(&bio(&["I-LOC"])), vec![span("LOC", 0, 0)]);
        assert_eq!(
            decode_spans(&bio(&["B-PER", "I-LOC"])),
            vec![span("PER", 0, 0), span("LOC", 1, 1)]
        );
        assert_eq!(
            decode_spans(&bio(&["O", "I-ORG", "I-ORG", "B-ORG"])),
            vec![span("ORG", 1, 2), span("ORG", 3, 3)]
        );
    }

    #[test]
    fn decoded_spans_are_disjoint_and_ordered() {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(3);
        let types = ["PER", "LOC", "ORG", "MISC"];
        for _ in 0..200 {
            let len = rng.gen_range(1..20);
            let tags: Vec<String> = (0..len)
                .map(|_| match rng.gen_range(0..3) {
                    0 => "O".to_string(),
                    1 => format!("B-{}", types[rng.gen_range(0..4)]),
                    _ => format!("I-{}", types[rng.gen_range(0..4)]),
                })
                .collect();
            let spans = decode_spans(&BioSequence::parse(tags).unwrap());
            for w in spans.windows(2) {
                assert!(w[0].end < w[1].start);
            }
            for s in &spans {
                assert!(s.start <= s.end);
            }
        }
    }

    #[test]
    fn reencoding_spans_is_the_identity_on_the_span_set() {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(5);
        let types = ["PER", "LOC"];
        for _ in 0..200 {
            let len = rng.gen_range(1..15);
            let tags: Vec<String> = (0..len)
                .map(|_| match rng.gen_range(0..3) {
                    0 => "O".to_string(),
                    1 => format!("B-{}", types[rng.gen_range(0..2)]),
                    _ => format!("I-{}", types[rng.gen_range(0..2)]),
                })
                .collect();
            let seq = BioSequence::parse(tags).unwrap();
            let spans = decode_spans(&seq);
            // Re-encode to canonical BIO and decode again.
            let mut encoded = vec!["O".to_string(); seq.len()];
            for s in &spans {
                encoded[s.start] = format!("B-{}", s.entity_type);
                for t in encoded.iter_mut().take(s.end + 1).skip(s.start + 1) {
                    *t = format!("I-{}", s.entity_type);
                }
            }
            let redecoded = decode_spans(&BioSequence::parse(encoded).unwrap());
            assert_eq!(spans, redecoded);
        }
    }

    #[test]
    fn entity_f1_hand_counts() {
        let gold = vec![bio(&["B-PER", "I-PER", "O", "B-LOC"])];
        let pred = vec![bio(&["B-PER", "I-PER", "O", "O"])];
        let s = entity_f1(&gold, &pred).unwrap();
        assert!((s.precision - 1.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);

        let s = entity_f1(&gold, &gold.clone()).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));

        // Boundary mismatch kills the PER match: TP=1 (LOC), FP=1, FN=1.
        let pred = vec![bio(&["B-PER", "O", "O", "B-LOC"])];
        let s = entity_f1(&gold, &pred).unwrap();
        assert!((s.precision - 0.5).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
        assert!((s.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn entity_f1_empty_denominators_yield_zero() {
        let gold = vec![bio(&["O", "O"])];
        let pred = vec![bio(&["O", "B-PER"])];
        let s = entity_f1(&gold, &pred).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = entity_f1(&gold, &gold.clone()).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn entity_f1_length_mismatches_error() {
        let gold = vec![bio(&["O", "O"])];
        assert!(entity_f1(&gold, &[]).is_err());
        let pred = vec![bio(&["O"])];
        assert!(entity_f1(&gold, &pred).is_err());
    }

    #[test]
    fn swapping_gold_and_pred_swaps_precision_and_recall() {
        let gold = vec![bio(&["B-PER", "I-PER", "O", "B-LOC", "I-ORG"])];
        let pred = vec![bio(&["B-PER", "O", "I-LOC", "I-LOC", "O"])];
        let a = entity_f1(&gold, &pred).unwrap();
        let b = entity_f1(&pred, &gold).unwrap();
        assert!((a.precision - b.recall).abs() < 1e-15);
        assert!((a.recall - b.precision).abs() < 1e-15);
        assert!((a.f1 - b.f1).abs() < 1e-15);
    }

    #[test]
    fn report_on_missing_manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(report(dir.path()).is_err());
    }
}
