use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ConfusionMatrix, EmotionLabelSet, Split};
use crate::error::{Error, Result};

/// Metrics of one model on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    /// `stage1` or `stage2`.
    pub model: String,
    pub n: usize,
    pub weighted_f1: f64,
    /// `None` for label sets without a neutral class.
    pub micro_f1_excluding_neutral: Option<f64>,
    pub accuracy: f64,
    pub labels: Vec<String>,
    pub per_class_f1: Vec<f64>,
    pub confusion: ConfusionMatrix,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn from_predictions(
        split: Split,
        model: &str,
        pred: &[usize],
        gold: &[usize],
        labels: &EmotionLabelSet,
        seed: u64,
        config: BTreeMap<String, String>,
    ) -> Result<Self> {
        let confusion = ConfusionMatrix::new(pred, gold, labels.len())?;
        Ok(Self {
            split,
            model: model.into(),
            n: pred.len(),
            weighted_f1: confusion.weighted_f1(),
            micro_f1_excluding_neutral: labels.neutral_index().map(|n| confusion.micro_f1_excluding(n)),
            accuracy: confusion.accuracy(),
            labels: labels.labels().to_vec(),
            per_class_f1: confusion.per_class_f1(),
            confusion,
            seed,
            config,
        })
    }

    /// Recomputes every metric from the stored confusion matrix.
    pub fn check_consistency(&self, neutral_index: Option<usize>) -> Result<()> {
        let c = &self.confusion;
        let ok = c.total() as usize == self.n
            && c.weighted_f1() == self.weighted_f1
            && c.accuracy() == self.accuracy
            && c.per_class_f1() == self.per_class_f1
            && neutral_index.map(|n| c.micro_f1_excluding(n)) == self.micro_f1_excluding_neutral;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation("report metrics disagree with its confusion matrix".into()))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn summary(&self) -> String {
        let micro = self
            .micro_f1_excluding_neutral
            .map_or(String::from("n/a"), |m| format!("{:.2}", 100.0 * m));
        format!(
            "{} {} n={} weighted-F1={:.2} micro-F1(no neutral)={} acc={:.2}",
            self.model,
            self.split.name(),
            self.n,
            100.0 * self.weighted_f1,
            micro,
            100.0 * self.accuracy
        )
    }
}
