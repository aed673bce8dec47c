//! Recalled accuracy and automatic confidence-threshold selection.
//!
//! A sample is recalled at threshold `t` when all voters agree on its class
//! and the minimum voter confidence strictly exceeds `t`. Sweeping `t` over
//! a grid yields an accuracy/recall curve on labeled data; the working
//! threshold α is the grid point where the discrete second derivative of
//! accuracy with respect to the threshold is largest, i.e. where the curve
//! bends hardest.

use crate::error::{Error, Result};
use crate::model::Distribution;

/// Default threshold grid: a coarse sweep of [0, 0.9] plus extra resolution
/// near 1 where confidences cluster.
pub const DEFAULT_GRID: [f64; 14] = [
    0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.995, 0.999,
];

/// Fallback α used when the curve has too few usable points to measure
/// curvature; 0.9 is the strongest of the common fixed operating points.
pub const FALLBACK_ALPHA: f64 = 0.9;

/// Default floor on the recalled count for a grid point to enter α
/// selection: max(10, 1% of the records).
pub fn default_min_recalled(n_records: usize) -> usize {
    10.max(n_records.div_ceil(100))
}

/// The voters' verdict on one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Agreement {
    /// Unanimous argmax with the minimum confidence at the agreed class.
    Agreed { label: usize, min_confidence: f64 },
    Abstain,
}

impl Agreement {
    /// Applies the decision rule to the voter outputs: if every voter's
    /// argmax is the same class j, the verdict is `Agreed` with
    /// min over voters of p[j]; otherwise `Abstain`.
    pub fn from_distributions(dists: &[Distribution]) -> Agreement {
        let Some(first) = dists.first() else {
            return Agreement::Abstain;
        };
        let label = first.argmax();
        let mut min_confidence = f64::INFINITY;
        for d in dists {
            if d.argmax() != label {
                return Agreement::Abstain;
            }
            min_confidence = min_confidence.min(d.probs()[label]);
        }
        Agreement::Agreed {
            label,
            min_confidence,
        }
    }

    /// Whether the verdict clears the threshold (strictly).
    pub fn recalled_at(&self, threshold: f64) -> bool {
        matches!(self, Agreement::Agreed { min_confidence, .. } if *min_confidence > threshold)
    }
}

/// One sample's verdict plus its gold label when known.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub agreement: Agreement,
    pub gold_label: Option<usize>,
}

/// Accuracy over the recalled samples at a single threshold.
///
/// Returns `(accuracy, recall, n_recalled)`; accuracy is `None` when nothing
/// is recalled. Every record must carry a gold label.
pub fn recalled_accuracy(
    records: &[PredictionRecord],
    threshold: f64,
) -> Result<(Option<f64>, f64, usize)> {
    if records.is_empty() {
        return Err(Error::InvalidData(
            "recalled accuracy over an empty record list".into(),
        ));
    }
    let mut recalled = 0usize;
    let mut correct = 0usize;
    for r in records {
        let gold = r.gold_label.ok_or_else(|| {
            Error::InvalidData("recalled accuracy requires gold labels on every record".into())
        })?;
        if let Agreement::Agreed {
            label,
            min_confidence,
        } = r.agreement
        {
            if min_confidence > threshold {
                recalled += 1;
                if label == gold {
                    correct += 1;
                }
            }
        }
    }
    let accuracy = (recalled > 0).then(|| correct as f64 / recalled as f64);
    Ok((accuracy, recalled as f64 / records.len() as f64, recalled))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub accuracy: Option<f64>,
    pub recall: f64,
    pub n_recalled: usize,
}

/// Recalled accuracy evaluated over an increasing threshold grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdCurve {
    pub points: Vec<CurvePoint>,
}

pub fn threshold_curve(records: &[PredictionRecord], grid: &[f64]) -> Result<ThresholdCurve> {
    validate_grid(grid)?;
    let points = grid
        .iter()
        .map(|&t| {
            let (accuracy, recall, n_recalled) = recalled_accuracy(records, t)?;
            Ok(CurvePoint {
                threshold: t,
                accuracy,
                recall,
                n_recalled,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThresholdCurve { points })
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidData("empty threshold grid".into()));
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidData(format!(
                "threshold grid must be strictly increasing, got {} after {}",
                w[1], w[0]
            )));
        }
    }
    if grid.iter().any(|&t| !(0.0..1.0).contains(&t)) {
        return Err(Error::InvalidData(
            "threshold grid points must lie in [0,1)".into(),
        ));
    }
    Ok(())
}

/// Selects α at the interior grid point with the largest discrete second
/// derivative of accuracy, over the valid region where at least
/// `min_recalled` samples are recalled. Ties break toward the smallest
/// threshold; fewer than 3 valid points falls back to [`FALLBACK_ALPHA`].
pub fn select_alpha(curve: &ThresholdCurve, min_recalled: usize) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(Error::InvalidData("empty threshold curve".into()));
    }
    let floor = min_recalled.max(1);
    let valid: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter(|p| p.n_recalled >= floor)
        .filter_map(|p| p.accuracy.map(|a| (p.threshold, a)))
        .collect();
    if valid.len() < 3 {
        return Ok(FALLBACK_ALPHA);
    }

    let mut best: Option<(f64, f64)> = None; // (second derivative, threshold)
    for i in 1..valid.len() - 1 {
        let (t_prev, a_prev) = valid[i - 1];
        let (t_mid, a_mid) = valid[i];
        let (t_next, a_next) = valid[i + 1];
        // Divided-difference second derivative on a possibly uneven grid.
        let d2 = 2.0 * ((a_next - a_mid) / (t_next - t_mid) - (a_mid - a_prev) / (t_mid - t_prev))
            / (t_next - t_prev);
        match best {
            Some((best_d2, _)) if d2 <= best_d2 => {}
            _ => best = Some((d2, t_mid)),
        }
    }
    Ok(best.expect("at least one interior point").1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(conf: Option<f64>, label: usize, gold: usize) -> PredictionRecord {
        PredictionRecord {
            agreement: match conf {
                Some(c) => Agreement::Agreed {
                    label,
                    min_confidence: c,
                },
                None => Agreement::Abstain,
            },
            gold_label: Some(gold),
        }
    }

    #[test]
    fn zero_threshold_recalls_every_agreement() {
        let records = vec![
            record(Some(0.9), 0, 0),
            record(Some(0.6), 1, 0),
            record(None, 0, 1),
        ];
        let (acc, recall, n) = recalled_accuracy(&records, 0.0).unwrap();
        assert_eq!(n, 2);
        assert!((acc.unwrap() - 0.5).abs() < 1e-15);
        assert!((recall - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn hand_enumerated_example() {
        // Confidences [.95,.8,.99,.6], correctness [T,F,T,T], t=0.9.
        let records = vec![
            record(Some(0.95), 0, 0),
            record(Some(0.80), 0, 1),
            record(Some(0.99), 1, 1),
            record(Some(0.60), 1, 1),
        ];
        let (acc, recall, n) = recalled_accuracy(&records, 0.9).unwrap();
        assert_eq!(n, 2);
        assert!((acc.unwrap() - 1.0).abs() < 1e-15);
        assert!((recall - 0.5).abs() < 1e-15);
    }

    #[test]
    fn all_abstain_has_undefined_accuracy() {
        let records = vec![record(None, 0, 0), record(None, 0, 1)];
        let (acc, recall, n) = recalled_accuracy(&records, 0.5).unwrap();
        assert!(acc.is_none());
        assert_eq!(recall, 0.0);
        assert_eq!(n, 0);
    }

    #[test]
    fn empty_records_error() {
        assert!(recalled_accuracy(&[], 0.5).is_err());
    }

    #[test]
    fn missing_gold_errors() {
        let mut r = record(Some(0.9), 0, 0);
        r.gold_label = None;
        assert!(recalled_accuracy(&[r], 0.5).is_err());
    }

    #[test]
    fn strict_inequality_at_the_threshold() {
        let records = vec![record(Some(0.9), 0, 0), record(Some(0.91), 0, 0)];
        let (_, _, n) = recalled_accuracy(&records, 0.9).unwrap();
        assert_eq!(n, 1);
    }

    #[test]
    fn curve_of_single_point_matches_recalled_accuracy() {
        let records = vec![record(Some(0.7), 0, 0), record(Some(0.4), 1, 0)];
        let curve = threshold_curve(&records, &[0.5]).unwrap();
        assert_eq!(curve.points.len(), 1);
        let (acc, recall, n) = recalled_accuracy(&records, 0.5).unwrap();
        assert_eq!(curve.points[0].accuracy, acc);
        assert_eq!(curve.points[0].recall, recall);
        assert_eq!(curve.points[0].n_recalled, n);
    }

    #[test]
    fn recall_is_non_increasing_over_random_records() {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(17);
        for _ in 0..50 {
            let n = rng.gen_range(1..60);
            let records: Vec<PredictionRecord> = (0..n)
                .map(|_| {
                    if rng.gen_range(0.0..1.0) < 0.2 {
                        record(None, 0, rng.gen_range(0..2))
                    } else {
                        record(Some(rng.gen_range(0.0..1.0)), rng.gen_range(0..2), rng.gen_range(0..2))
                    }
                })
                .collect();
            let curve = threshold_curve(&records, &DEFAULT_GRID).unwrap();
            for w in curve.points.windows(2) {
                assert!(w[1].recall <= w[0].recall);
                assert!(w[1].n_recalled <= w[0].n_recalled);
            }
        }
    }

    #[test]
    fn non_increasing_grid_is_rejected() {
        let records = vec![record(Some(0.7), 0, 0)];
        assert!(threshold_curve(&records, &[0.5, 0.5]).is_err());
        assert!(threshold_curve(&records, &[0.5, 0.4]).is_err());
        assert!(threshold_curve(&records, &[]).is_err());
        assert!(threshold_curve(&records, &[0.5, 1.0]).is_err());
    }

    fn curve_from(ts: &[f64], accs: &[f64]) -> ThresholdCurve {
        ThresholdCurve {
            points: ts
                .iter()
                .zip(accs)
                .map(|(&t, &a)| CurvePoint {
                    threshold: t,
                    accuracy: Some(a),
                    recall: 1.0,
                    n_recalled: 1000,
                })
                .collect(),
        }
    }

    #[test]
    fn alpha_lands_on_the_hand_computed_knee() {
        let curve = curve_from(&[0.5, 0.6, 0.7, 0.8, 0.9], &[0.80, 0.81, 0.83, 0.90, 0.91]);
        // Second differences at 0.6, 0.7, 0.8 are {0.01, 0.05, −0.06}·(2/0.02).
        assert_eq!(select_alpha(&curve, 10).unwrap(), 0.7);
    }

    #[test]
    fn constant_accuracy_ties_break_to_smallest_interior_point() {
        let curve = curve_from(&[0.1, 0.3, 0.5, 0.7], &[0.8, 0.8, 0.8, 0.8]);
        assert_eq!(select_alpha(&curve, 10).unwrap(), 0.3);
    }

    #[test]
    fn thin_valid_region_falls_back() {
        let mut curve = curve_from(&[0.1, 0.5, 0.9], &[0.8, 0.9, 0.95]);
        curve.points[2].n_recalled = 3; // below the floor
        assert_eq!(select_alpha(&curve, 10).unwrap(), FALLBACK_ALPHA);
        assert!(select_alpha(&ThresholdCurve { points: vec![] }, 10).is_err());
    }

    #[test]
    fn alpha_is_always_a_grid_member_or_the_fallback() {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(23);
        for _ in 0..50 {
            let n = rng.gen_range(1..200);
            let records: Vec<PredictionRecord> = (0..n)
                .map(|_| record(Some(rng.gen_range(0.0..1.0)), rng.gen_range(0..2), rng.gen_range(0..2)))
                .collect();
            let curve = threshold_curve(&records, &DEFAULT_GRID).unwrap();
            let alpha = select_alpha(&curve, default_min_recalled(records.len())).unwrap();
            let interior = &DEFAULT_GRID[1..DEFAULT_GRID.len() - 1];
            assert!(
                alpha == FALLBACK_ALPHA || interior.contains(&alpha),
                "alpha {alpha} escaped the grid interior"
            );
        }
    }

    #[test]
    fn monotone_confidence_transform_preserves_the_recalled_sets() {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(31);
        let records: Vec<PredictionRecord> = (0..200)
            .map(|_| record(Some(rng.gen_range(0.0..1.0)), rng.gen_range(0..2), rng.gen_range(0..2)))
            .collect();
        // sqrt is strictly increasing on (0,1); transform confidences and
        // thresholds identically and the recalled id sets must match.
        let transformed: Vec<PredictionRecord> = records
            .iter()
            .map(|r| match r.agreement {
                Agreement::Agreed {
                    label,
                    min_confidence,
                } => PredictionRecord {
                    agreement: Agreement::Agreed {
                        label,
                        min_confidence: min_confidence.sqrt(),
                    },
                    gold_label: r.gold_label,
                },
                Agreement::Abstain => r.clone(),
            })
            .collect();
        for &t in &[0.0, 0.2, 0.5, 0.8, 0.95] {
            let ids_a: Vec<usize> = records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.agreement.recalled_at(t))
                .map(|(i, _)| i)
                .collect();
            let ids_b: Vec<usize> = transformed
                .iter()
                .enumerate()
                .filter(|(_, r)| r.agreement.recalled_at(t.sqrt()))
                .map(|(i, _)| i)
                .collect();
            assert_eq!(ids_a, ids_b);
        }
    }

    #[test]
    fn default_min_recalled_formula() {
        assert_eq!(default_min_recalled(50), 10);
        assert_eq!(default_min_recalled(500), 10);
        assert_eq!(default_min_recalled(5000), 50);
        assert_eq!(default_min_recalled(5001), 51);
    }
}
