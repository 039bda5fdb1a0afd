//! Confusion matrix and per-class precision / recall / F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class (or averaged) scores. `*_undefined` marks a zero denominator,
/// in which case the score is reported as 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    #[serde(default)]
    pub precision_undefined: bool,
    #[serde(default)]
    pub recall_undefined: bool,
    #[serde(default)]
    pub f1_undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassScores>,
    pub macro_avg: ClassScores,
    pub weighted_avg: ClassScores,
    pub accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn f1(p: f64, r: f64) -> (f64, bool) {
    if p + r == 0.0 {
        (0.0, true)
    } else {
        (2.0 * p * r / (p + r), false)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl EvalReport {
    pub fn from_predictions(class_names: &[&str], truth: &[usize], predicted: &[usize]) -> Result<Self> {
        let k = class_names.len();
        if truth.len() != predicted.len() {
            return Err(Error::InvalidArgument("truth and prediction counts differ".into()));
        }
        let mut confusion = vec![vec![0u64; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= k || p >= k {
                return Err(Error::InvalidArgument(format!("class index out of range: {t}/{p}")));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(class_names, confusion)
    }

    pub fn from_confusion(class_names: &[&str], confusion: Vec<Vec<u64>>) -> Result<Self> {
        let k = class_names.len();
        if k < 2 || confusion.len() != k || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument(format!("confusion matrix must be {k}x{k}")));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Empty("evaluation set"));
        }
        let per_class: Vec<ClassScores> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let support: u64 = confusion[c].iter().sum();
                let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
                let (precision, precision_undefined) = ratio(tp, predicted);
                let (recall, recall_undefined) = ratio(tp, support);
                let (f1, f1_undefined) = f1(precision, recall);
                ClassScores {
                    precision,
                    recall,
                    f1,
                    support,
                    precision_undefined,
                    recall_undefined,
                    f1_undefined,
                }
            })
            .collect();

        let kf = k as f64;
        let macro_avg = ClassScores {
            precision: per_class.iter().map(|s| s.precision).sum::<f64>() / kf,
            recall: per_class.iter().map(|s| s.recall).sum::<f64>() / kf,
            f1: per_class.iter().map(|s| s.f1).sum::<f64>() / kf,
            support: total,
            precision_undefined: false,
            recall_undefined: false,
            f1_undefined: false,
        };
        let n = total as f64;
        let weighted = |f: fn(&ClassScores) -> f64| per_class.iter().map(|s| s.support as f64 * f(s)).sum::<f64>() / n;
        let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
        let weighted_avg = ClassScores {
            precision: weighted(|s| s.precision),
            // support·(tp/support) is tp, so the weighted recall is summed
            // from counts; this keeps it identical to accuracy.
            recall: correct as f64 / n,
            f1: weighted(|s| s.f1),
            support: total,
            precision_undefined: false,
            recall_undefined: false,
            f1_undefined: false,
        };
        Ok(Self {
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            confusion,
            per_class,
            macro_avg,
            weighted_avg,
            accuracy: correct as f64 / n,
            total,
        })
    }

    /// Human-readable table: one row per class, then macro and weighted
    /// averages. Scores from a zero denominator carry a `*`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<18}{:>11}{:>11}{:>11}{:>15}\n",
            "", "Precision", "Recall", "F1 score", "Video Support"
        ));
        let cell = |v: f64, undefined: bool| {
            if undefined {
                format!("{v:.4}*")
            } else {
                format!("{v:.4}")
            }
        };
        let mut row = |name: &str, s: &ClassScores| {
            out.push_str(&format!(
                "{:<18}{:>11}{:>11}{:>11}{:>15}\n",
                name,
                cell(s.precision, s.precision_undefined),
                cell(s.recall, s.recall_undefined),
                cell(s.f1, s.f1_undefined),
                s.support
            ));
        };
        for (name, s) in self.class_names.iter().zip(&self.per_class) {
            row(name, s);
        }
        row("Macro Average", &self.macro_avg);
        row("Weighted Average", &self.weighted_avg);
        out.push_str(&format!("\nAccuracy: {:.4} ({} samples)\n", self.accuracy, self.total));
        out.push_str("Confusion matrix (rows = true, columns = predicted):\n");
        for (name, r) in self.class_names.iter().zip(&self.confusion) {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:>8}")).collect();
            out.push_str(&format!("{:<18}{}\n", name, cells.join("")));
        }
        if self
            .per_class
            .iter()
            .any(|s| s.precision_undefined || s.recall_undefined || s.f1_undefined)
        {
            out.push_str("* zero denominator, reported as 0\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NAMES: [&str; 2] = ["Violence", "Non-Violence"];

    #[test]
    fn table_two_shaped_row() {
        let r = EvalReport::from_confusion(&NAMES, vec![vec![98, 2], vec![2, 92]]).unwrap();
        let v = &r.per_class[0];
        assert!((v.precision - 0.98).abs() < 1e-12);
        assert!((v.recall - 0.98).abs() < 1e-12);
        assert!((v.f1 - 0.98).abs() < 1e-12);
        assert_eq!(v.support, 100);
        assert_eq!(r.total, 194);
    }

    #[test]
    fn perfect_predictions() {
        let r = EvalReport::from_predictions(&NAMES, &[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        for s in &r.per_class {
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn never_predicting_class_one() {
        let r = EvalReport::from_predictions(&NAMES, &[0, 1, 1, 0, 1], &[0; 5]).unwrap();
        let c1 = &r.per_class[1];
        assert_eq!((c1.precision, c1.recall, c1.f1), (0.0, 0.0, 0.0));
        assert!(c1.precision_undefined && c1.f1_undefined && !c1.recall_undefined);
        assert!(r.to_table().contains('*'));
    }

    #[test]
    fn table_row_order() {
        let r = EvalReport::from_confusion(&NAMES, vec![vec![3, 1], vec![0, 4]]).unwrap();
        let t = r.to_table();
        let pos = |s: &str| t.find(s).unwrap();
        assert!(pos("Violence") < pos("Non-Violence"));
        assert!(pos("Non-Violence") < pos("Macro Average"));
        assert!(pos("Macro Average") < pos("Weighted Average"));
    }

    #[test]
    fn tie_break_is_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.7, 0.7]), 1);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(EvalReport::from_confusion(&NAMES, vec![vec![0, 0], vec![0, 0]]).is_err());
    }
}
