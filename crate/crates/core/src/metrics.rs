//! Confusion matrix, per-class scores, ROC curve and AUROC. The positive
//! class is "affected" (label 1).

use std::fmt::Write as _;

use crate::model::CLASS_AFFECTED;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("threshold must lie in [0, 1], got {0}")]
    Threshold(f64),
    #[error("label {0} is not a class index")]
    Label(usize),
    #[error("score {0} is not finite")]
    Score(f64),
    #[error("ROC needs both classes; only class {0} present")]
    SingleClass(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// 2×2 grid, rows = actual class, columns = predicted class.
    pub fn to_grid(&self) -> String {
        let cells = [
            ["".to_string(), "pred normal".into(), "pred affected".into()],
            [
                "actual normal".into(),
                self.tn.to_string(),
                self.fp.to_string(),
            ],
            [
                "actual affected".into(),
                self.fn_.to_string(),
                self.tp.to_string(),
            ],
        ];
        let widths: Vec<usize> = (0..3)
            .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:>w2$}",
                row[0],
                row[1],
                row[2],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2]
            );
        }
        out
    }
}

fn check_inputs(scores: &[f64], labels: &[usize]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricsError::Label(l));
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricsError::Score(s));
    }
    Ok(())
}

/// Tallies predictions where `score ≥ threshold` means affected.
pub fn confusion_matrix(
    scores: &[f64],
    labels: &[usize],
    threshold: f64,
) -> Result<ConfusionMatrix, MetricsError> {
    check_inputs(scores, labels)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::Threshold(threshold));
    }
    let mut cm = ConfusionMatrix::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == CLASS_AFFECTED) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub affected: ClassScores,
    pub normal: ClassScores,
    /// Set when some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,accuracy,precision,recall,specificity,f1\n");
        for (name, c) in [("normal", &self.normal), ("affected", &self.affected)] {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{}",
                c.accuracy, c.precision, c.recall, c.specificity, c.f1
            );
        }
        out
    }

    /// Fixed-width table rounded to four decimals.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<9} {:>9} {:>9} {:>9} {:>11} {:>9}\n",
            "class", "accuracy", "precision", "recall", "specificity", "f1"
        );
        for (name, c) in [("normal", &self.normal), ("affected", &self.affected)] {
            let _ = writeln!(
                out,
                "{name:<9} {:>9.4} {:>9.4} {:>9.4} {:>11.4} {:>9.4}",
                c.accuracy, c.precision, c.recall, c.specificity, c.f1
            );
        }
        out
    }
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_scores(tp: u64, fp: u64, tn: u64, fn_: u64, degenerate: &mut bool) -> ClassScores {
    let precision = ratio(tp, tp + fp, degenerate);
    let recall = ratio(tp, tp + fn_, degenerate);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassScores {
        accuracy: ratio(tp + tn, tp + fp + tn + fn_, degenerate),
        precision,
        recall,
        specificity: ratio(tn, tn + fp, degenerate),
        f1,
    }
}

/// Scores for the affected class and, with roles swapped, the normal class.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let mut degenerate = false;
    let affected = class_scores(cm.tp, cm.fp, cm.tn, cm.fn_, &mut degenerate);
    let normal = class_scores(cm.tn, cm.fn_, cm.tp, cm.fp, &mut degenerate);
    Ok(MetricsReport {
        affected,
        normal,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score threshold producing this point; `None` for the (0,0) anchor.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            let t = p.threshold.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{t}", p.fpr, p.tpr);
        }
        out
    }
}

/// One point per distinct score, swept from the highest threshold down,
/// starting at (0,0) and ending at (1,1).
pub fn roc_curve(scores: &[f64], labels: &[usize]) -> Result<RocCurve, MetricsError> {
    check_inputs(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == CLASS_AFFECTED).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass(labels[0]));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == CLASS_AFFECTED {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            threshold: Some(t),
        });
    }
    let last = points.last().expect("non-empty");
    if last.fpr != 1.0 || last.tpr != 1.0 {
        points.push(RocPoint {
            fpr: 1.0,
            tpr: 1.0,
            threshold: None,
        });
    }
    Ok(RocCurve { points })
}

pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64, MetricsError> {
    Ok(roc_curve(scores, labels)?.area())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_pair() {
        let cm = confusion_matrix(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                tp: 1,
                fp: 0,
                tn: 1,
                fn_: 0
            }
        );
    }

    #[test]
    fn boundary_predicts_affected() {
        let cm = confusion_matrix(&[0.5; 4], &[0, 1, 0, 1], 0.5).unwrap();
        assert_eq!((cm.tp, cm.fp, cm.tn, cm.fn_), (2, 2, 0, 0));
    }

    #[test]
    fn input_errors() {
        assert!(matches!(
            confusion_matrix(&[0.1], &[0, 1], 0.5),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(confusion_matrix(&[0.1], &[0], 1.5).is_err());
        assert!(matches!(
            roc_curve(&[0.1, 0.2], &[1, 1]),
            Err(MetricsError::SingleClass(1))
        ));
    }

    #[test]
    fn perfect_classifier_scores_one() {
        let r = compute_metrics(&ConfusionMatrix {
            tp: 10,
            fp: 0,
            tn: 10,
            fn_: 0,
        })
        .unwrap();
        for c in [r.affected, r.normal] {
            assert_eq!(
                [c.accuracy, c.precision, c.recall, c.specificity, c.f1],
                [1.0; 5]
            );
        }
        assert!(!r.degenerate);
    }

    #[test]
    fn hand_computed_scores() {
        let r = compute_metrics(&ConfusionMatrix {
            tp: 8,
            fp: 1,
            tn: 9,
            fn_: 2,
        })
        .unwrap();
        let a = r.affected;
        assert!((a.recall - 0.8).abs() < 1e-12);
        assert!((a.precision - 8.0 / 9.0).abs() < 1e-12);
        assert!((a.f1 - 16.0 / 19.0).abs() < 1e-12);
        assert!((a.accuracy - 0.85).abs() < 1e-12);
        assert!((a.specificity - 0.9).abs() < 1e-12);
        assert_eq!(r.normal.specificity, a.recall);
        assert_eq!(r.normal.recall, a.specificity);
        assert_eq!(r.normal.accuracy, a.accuracy);
    }

    #[test]
    fn zero_denominators_flagged() {
        let r = compute_metrics(&ConfusionMatrix {
            tp: 0,
            fp: 0,
            tn: 5,
            fn_: 0,
        })
        .unwrap();
        assert!(r.degenerate);
        assert_eq!(r.affected.precision, 0.0);
        assert_eq!(r.affected.f1, 0.0);
        assert!(compute_metrics(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn roc_special_cases() {
        let sep = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert!(sep.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(sep.area(), 1.0);

        let flat = roc_curve(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(flat.points.len(), 2);
        assert_eq!(flat.area(), 0.5);
    }

    #[test]
    fn grid_layout() {
        let g = ConfusionMatrix {
            tp: 4,
            fp: 3,
            tn: 2,
            fn_: 1,
        }
        .to_grid();
        let lines: Vec<&str> = g.lines().collect();
        assert!(lines[1].starts_with("actual normal") && lines[1].ends_with('3'));
        assert!(lines[2].ends_with('4'));
    }
}
