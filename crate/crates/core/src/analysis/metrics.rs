use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `C x C` counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    counts: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if c == 0 {
            return Err(Error::Contract("confusion matrix has no classes".into()));
        }
        if let Some(bad) = counts.iter().position(|r| r.len() != c) {
            return Err(Error::Contract(format!(
                "confusion row {bad} has {} entries, expected {c}",
                counts[bad].len()
            )));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(
        labels: &[usize],
        predictions: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::Contract(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= num_classes || p >= num_classes {
                return Err(Error::Contract(format!(
                    "class pair ({y}, {p}) outside [0, {num_classes})"
                )));
            }
            counts[y][p] += 1;
        }
        Self::new(counts)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    fn check_support(&self) -> Result<()> {
        match (0..self.num_classes()).find(|&k| self.row_sum(k) == 0) {
            Some(k) => Err(Error::Contract(format!("true class {k} has no instances"))),
            None => Ok(()),
        }
    }

    pub fn recalls(&self) -> Result<Vec<f64>> {
        self.check_support()?;
        Ok((0..self.num_classes())
            .map(|k| self.counts[k][k] as f64 / self.row_sum(k) as f64)
            .collect())
    }

    pub fn f1_scores(&self) -> Result<Vec<f64>> {
        self.check_support()?;
        Ok((0..self.num_classes())
            .map(|k| {
                let tp = self.counts[k][k] as f64;
                let pred = self.col_sum(k) as f64;
                let recall = tp / self.row_sum(k) as f64;
                let precision = if pred > 0.0 { tp / pred } else { 0.0 };
                if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// Mean per-class recall.
pub fn bacc(confusion: &ConfusionCounts) -> Result<f64> {
    let r = confusion.recalls()?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(confusion: &ConfusionCounts) -> Result<f64> {
    let f = confusion.f1_scores()?;
    Ok(f.iter().sum::<f64>() / f.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub bacc: f64,
    pub macro_f1: f64,
    pub per_class_recall: Vec<f64>,
}

impl Metrics {
    pub fn from_confusion(confusion: &ConfusionCounts) -> Result<Self> {
        Ok(Self {
            bacc: bacc(confusion)?,
            macro_f1: macro_f1(confusion)?,
            per_class_recall: confusion.recalls()?,
        })
    }
}
