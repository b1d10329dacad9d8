//! ERC metrics over label indices.

use crate::error::{Error, Result};

/// `matrix[gold][pred]` counts.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(pred: &[usize], gold: &[usize], n_classes: usize) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} gold labels",
                pred.len(),
                gold.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::Contract("metrics need at least one item".into()));
        }
        let mut counts = vec![vec![0u64; n_classes]; n_classes];
        for (&p, &g) in pred.iter().zip(gold) {
            if p >= n_classes || g >= n_classes {
                return Err(Error::Index(format!(
                    "label index {} with {n_classes} classes",
                    p.max(g)
                )));
            }
            counts[g][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn gold_support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    /// F1 of class `c`; zero when the class never appears in either list.
    pub fn class_f1(&self, c: usize) -> f64 {
        let tp = self.true_positives(c) as f64;
        let denom = (self.gold_support(c) + self.predicted(c)) as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    }

    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.n_classes()).map(|c| self.class_f1(c)).collect()
    }

    /// Support-weighted average of per-class F1.
    pub fn weighted_f1(&self) -> f64 {
        let total = self.total() as f64;
        (0..self.n_classes())
            .map(|c| self.class_f1(c) * self.gold_support(c) as f64 / total)
            .sum()
    }

    /// Micro-F1 over non-neutral classes: neutral golds and neutral
    /// predictions earn no credit and count toward neither precision nor
    /// recall denominators.
    pub fn micro_f1_excluding(&self, neutral: usize) -> f64 {
        let mut tp = 0u64;
        let mut pred_pos = 0u64;
        let mut gold_pos = 0u64;
        for c in (0..self.n_classes()).filter(|&c| c != neutral) {
            tp += self.true_positives(c);
            pred_pos += self.predicted(c);
            gold_pos += self.gold_support(c);
        }
        if pred_pos + gold_pos == 0 {
            log::warn!("micro-F1 excluding neutral is undefined without non-neutral items; reporting 0.0");
            return 0.0;
        }
        2.0 * tp as f64 / (pred_pos + gold_pos) as f64
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.n_classes()).map(|c| self.true_positives(c)).sum();
        correct as f64 / self.total() as f64
    }
}

pub fn weighted_f1(pred: &[usize], gold: &[usize], n_classes: usize) -> Result<f64> {
    Ok(ConfusionMatrix::new(pred, gold, n_classes)?.weighted_f1())
}

pub fn micro_f1_excluding_neutral(
    pred: &[usize],
    gold: &[usize],
    n_classes: usize,
    neutral_index: Option<usize>,
) -> Result<f64> {
    let neutral = neutral_index
        .ok_or_else(|| Error::Contract("label set has no neutral class".into()))?;
    Ok(ConfusionMatrix::new(pred, gold, n_classes)?.micro_f1_excluding(neutral))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_prediction() {
        let g = [0, 1, 2, 2, 1];
        assert_eq!(weighted_f1(&g, &g, 3).unwrap(), 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_gold() {
        // gold 2x class0, 2x class1; always predict 0
        // class0: tp=2 fp=2 fn=0 -> f1 = 4/6; class1: f1 = 0; weights 1/2 each
        let f = weighted_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_abs_diff_eq!(f, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn order_invariance() {
        let pred = [0, 2, 1, 1, 0, 2];
        let gold = [0, 1, 1, 2, 0, 2];
        let a = weighted_f1(&pred, &gold, 3).unwrap();
        let perm = [5, 3, 0, 1, 4, 2];
        let p2: Vec<usize> = perm.iter().map(|&i| pred[i]).collect();
        let g2: Vec<usize> = perm.iter().map(|&i| gold[i]).collect();
        assert_eq!(weighted_f1(&p2, &g2, 3).unwrap(), a);
    }

    #[test]
    fn micro_excluding_neutral_cases() {
        // all neutral: undefined, reported as 0
        assert_eq!(
            micro_f1_excluding_neutral(&[0, 0], &[0, 0], 3, Some(0)).unwrap(),
            0.0
        );
        // three non-neutral all right, plus correct neutrals
        assert_eq!(
            micro_f1_excluding_neutral(&[1, 2, 1, 0, 0], &[1, 2, 1, 0, 0], 3, Some(0)).unwrap(),
            1.0
        );
        // gold:  1 1 2 2 0 0
        // pred:  1 2 2 0 1 0
        // non-neutral tp = 2 (idx0, idx2); fp among non-neutral preds: idx1 (2 vs 1), idx4 (1 vs 0) = 2
        // fn: idx1 (gold 1 missed), idx3 (gold 2 -> 0) = 2 ... counted via denominators:
        // pred_pos = 4, gold_pos = 4 -> f1 = 4/8
        let f = micro_f1_excluding_neutral(&[1, 2, 2, 0, 1, 0], &[1, 1, 2, 2, 0, 0], 3, Some(0)).unwrap();
        assert_abs_diff_eq!(f, 0.5, epsilon = 1e-15);
        // 2 FP / 1 FN: gold 1 2 2 0 0, pred 1 2 0 1 2 -> tp=2, pred_pos=4, gold_pos=3 -> 4/7
        let f = micro_f1_excluding_neutral(&[1, 2, 0, 1, 2], &[1, 2, 2, 0, 0], 3, Some(0)).unwrap();
        assert_abs_diff_eq!(f, 4.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(weighted_f1(&[0], &[0, 1], 2), Err(Error::Contract(_))));
        assert!(matches!(
            micro_f1_excluding_neutral(&[0], &[0], 2, None),
            Err(Error::Contract(_))
        ));
    }
}
