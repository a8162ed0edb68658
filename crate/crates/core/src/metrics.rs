//! Confusion counts and the metrics derived from them.
//!
//! Counts follow the MSI-positive convention: class 0 (MSI) is "positive",
//! so `tp` is predicted MSI & actual MSI, `fp` predicted MSI & actual MSS,
//! `fn_` predicted MSS & actual MSI, and `tn` predicted MSS & actual MSS.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const MSI: u8 = 0;
pub const MSS: u8 = 1;
/// Positive class used by [`report_csv`] and the CLI.
pub const DEFAULT_POSITIVE: u8 = MSS;

pub const REPORT_HEADER: &str = "model,tp,fp,fn,tn,accuracy,precision,recall,f1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub const fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts with `positive` as the positive class.
    fn oriented(&self, positive: u8) -> (u64, u64, u64) {
        if positive == MSI {
            (self.tp, self.fp, self.fn_)
        } else {
            // MSS positive: its hits are tn, MSS predicted for actual MSI is
            // fn_, MSI predicted for actual MSS is fp.
            (self.tn, self.fn_, self.fp)
        }
    }
}

/// Published confusion counts of the ten compared models.
pub const TABLE_II: [(&str, ConfusionCounts); 10] = [
    ("Logistic Regression", ConfusionCounts::new(0, 7505, 0, 11728)),
    ("Feed Forward Neural Network", ConfusionCounts::new(523, 6982, 833, 10895)),
    ("Convolution Neural Network", ConfusionCounts::new(5880, 1625, 1855, 9873)),
    ("VGG16", ConfusionCounts::new(0, 7505, 0, 11728)),
    ("ResNet 18", ConfusionCounts::new(6182, 1323, 1072, 10656)),
    ("ResNet 34", ConfusionCounts::new(6015, 1490, 1218, 10510)),
    ("ResNet 50", ConfusionCounts::new(6164, 1341, 972, 10756)),
    ("ResNet 101", ConfusionCounts::new(5940, 1565, 950, 10778)),
    ("ResNet 152", ConfusionCounts::new(5828, 1677, 943, 10785)),
    ("Modified ResNet", ConfusionCounts::new(6338, 1167, 792, 10936)),
];

pub fn confusion_matrix(pred: &[u8], actual: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != actual.len() {
        return Err(Error::InvalidInput(format!("{} predictions vs {} labels", pred.len(), actual.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &a) in pred.iter().zip(actual) {
        match (p, a) {
            (0, 0) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (1, 0) => c.fn_ += 1,
            (1, 1) => c.tn += 1,
            _ => return Err(Error::InvalidInput(format!("non-binary class pair ({p}, {a})"))),
        }
    }
    Ok(c)
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(Error::UndefinedMetric("accuracy of zero samples".into())),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1_score(c: &ConfusionCounts, positive: u8) -> Result<F1> {
    if positive > 1 {
        return Err(Error::InvalidInput(format!("positive class must be 0 or 1, got {positive}")));
    }
    let (tp, fp, fn_) = c.oriented(positive);
    if tp + fp == 0 {
        return Err(Error::UndefinedMetric(format!("precision: class {positive} never predicted")));
    }
    if tp + fn_ == 0 {
        return Err(Error::UndefinedMetric(format!("recall: class {positive} never present")));
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    let f1 = if tp == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(F1 { precision, recall, f1 })
}

fn fmt4(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into())
}

/// One CSV row per model; undefined metrics are written as `NA`.
pub fn report_csv<S: AsRef<str>>(rows: &[(S, ConfusionCounts)]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for (name, c) in rows {
        let f = f1_score(c, DEFAULT_POSITIVE).ok();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            name.as_ref(),
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            fmt4(accuracy(c).ok()),
            fmt4(f.map(|f| f.precision)),
            fmt4(f.map(|f| f.recall)),
            fmt4(f.map(|f| f.f1)),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng_for;
    use proptest::prelude::*;
    use rand::Rng as _;

    const MODIFIED: ConfusionCounts = ConfusionCounts::new(6338, 1167, 792, 10936);

    #[test]
    fn hand_counts() {
        assert_eq!(confusion_matrix(&[0, 1, 0, 1], &[0, 1, 1, 0]).unwrap(), ConfusionCounts::new(1, 1, 1, 1));
        assert_eq!(confusion_matrix(&[0, 0, 1, 1, 1], &[0, 0, 1, 1, 1]).unwrap(), ConfusionCounts::new(2, 0, 0, 3));
        assert!(confusion_matrix(&[0], &[0, 1]).is_err());
        assert!(confusion_matrix(&[2], &[0]).is_err());
    }

    #[test]
    fn recount_oracle() {
        let mut rng = rng_for(42, 0);
        let pred: Vec<u8> = (0..1000).map(|_| rng.random_range(0..2)).collect();
        let actual: Vec<u8> = (0..1000).map(|_| rng.random_range(0..2)).collect();
        let c = confusion_matrix(&pred, &actual).unwrap();
        assert_eq!(c.total(), 1000);
        let count = |p, a| pred.iter().zip(&actual).filter(|&(&x, &y)| x == p && y == a).count() as u64;
        assert_eq!(c, ConfusionCounts::new(count(0, 0), count(0, 1), count(1, 0), count(1, 1)));
    }

    #[test]
    fn modified_resnet_row() {
        assert!((accuracy(&MODIFIED).unwrap() - 0.8981).abs() < 5e-5);
        assert!((f1_score(&MODIFIED, MSS).unwrap().f1 - 0.9178).abs() < 5e-5);
        // F1 = 2tp / (2tp + fp + fn) with MSI positive
        assert!((f1_score(&MODIFIED, MSI).unwrap().f1 - 12676.0 / 14635.0).abs() < 1e-12);
    }

    #[test]
    fn derived_rows() {
        let lr = TABLE_II[0].1;
        assert!((accuracy(&lr).unwrap() - 0.6098).abs() < 5e-5);
        let r18 = TABLE_II[4].1;
        let expect = {
            let (p, r) = (10656.0 / (10656.0 + 1323.0), 10656.0 / (10656.0 + 1072.0));
            2.0 * p * r / (p + r)
        };
        assert!((f1_score(&r18, MSS).unwrap().f1 - expect).abs() < 1e-12);
        assert!((expect - 0.8990).abs() < 5e-5);
    }

    #[test]
    fn degenerate_cases() {
        let perfect = ConfusionCounts::new(3, 0, 0, 4);
        assert_eq!(accuracy(&perfect).unwrap(), 1.0);
        assert_eq!(f1_score(&perfect, MSS).unwrap(), F1 { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert!(matches!(accuracy(&ConfusionCounts::default()), Err(Error::UndefinedMetric(_))));
        assert!(matches!(f1_score(&TABLE_II[0].1, MSI), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn report() {
        assert_eq!(report_csv::<&str>(&[]), format!("{REPORT_HEADER}\n"));
        let one = report_csv(&[("toy", ConfusionCounts::new(2, 0, 0, 2))]);
        assert_eq!(one.lines().nth(1).unwrap(), "toy,2,0,0,2,1.0000,1.0000,1.0000,1.0000");
        let full = report_csv(&TABLE_II);
        assert_eq!(full.lines().count(), 11);
        let last = full.lines().last().unwrap();
        assert!(last.contains(",0.8981,") && last.ends_with(",0.9178"), "{last}");
    }

    fn counts() -> impl Strategy<Value = ConfusionCounts> {
        (1u64..5000, 0u64..5000, 0u64..5000, 1u64..5000).prop_map(|(a, b, c, d)| ConfusionCounts::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn swapping_fp_and_fn_preserves_metrics(c in counts(), positive in 0u8..2) {
            let s = ConfusionCounts { fp: c.fn_, fn_: c.fp, ..c };
            prop_assert_eq!(accuracy(&c).unwrap(), accuracy(&s).unwrap());
            prop_assert!((f1_score(&c, positive).unwrap().f1 - f1_score(&s, positive).unwrap().f1).abs() < 1e-12);
        }

        #[test]
        fn accuracy_is_scale_invariant(c in counts(), k in 1u64..50) {
            let s = ConfusionCounts::new(c.tp * k, c.fp * k, c.fn_ * k, c.tn * k);
            prop_assert!((accuracy(&c).unwrap() - accuracy(&s).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn metrics_are_bounded(tp in 0u64..100, fp in 0u64..100, fn_ in 0u64..100, tn in 1u64..100) {
            let c = ConfusionCounts::new(tp, fp, fn_, tn);
            if let Ok(f) = f1_score(&c, MSI) {
                for v in [f.precision, f.recall, f.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert_eq!(f.f1 == 0.0, tp == 0);
            }
        }
    }
}
