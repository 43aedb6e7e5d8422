use std::fmt;

use serde::{Deserialize, Serialize};

use super::network::ModelParams;
use super::train::predict;
use super::ModelError;
use crate::csi::ActivityLabel;
use crate::dsp::SpectrogramWindow;

/// Test-set scores in percent. Precision and recall are macro averages over
/// the three classes; F1 is the harmonic mean of those two averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`, indexed by label code.
    pub confusion: [[usize; 3]; 3],
}

impl RunMetrics {
    /// A class never predicted contributes precision 0; one absent from the
    /// test set contributes recall 0.
    pub fn from_confusion(confusion: [[usize; 3]; 3]) -> Self {
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..3).map(|k| confusion[k][k]).sum();
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let mut precision = 0.0;
        let mut recall = 0.0;
        for k in 0..3 {
            let predicted: usize = (0..3).map(|t| confusion[t][k]).sum();
            let actual: usize = confusion[k].iter().sum();
            precision += ratio(confusion[k][k], predicted);
            recall += ratio(confusion[k][k], actual);
        }
        let (precision, recall) = (100.0 * precision / 3.0, 100.0 * recall / 3.0);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            accuracy: 100.0 * ratio(trace, total),
            confusion,
        }
    }

    pub fn from_predictions(truth: &[ActivityLabel], predicted: &[ActivityLabel]) -> Self {
        let mut confusion = [[0usize; 3]; 3];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        Self::from_confusion(confusion)
    }
}

/// Argmax predictions on the test split, without augmentation.
pub fn evaluate(params: &ModelParams, test: &[SpectrogramWindow]) -> Result<RunMetrics, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptySplit("test"));
    }
    let predicted = predict(params, test)?;
    let truth: Vec<ActivityLabel> = test.iter().map(|w| w.label).collect();
    Ok(RunMetrics::from_predictions(&truth, &predicted))
}

/// Sample mean and sample (n−1) standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self, ModelError> {
        if values.len() < 2 {
            return Err(ModelError::TooFewRuns(values.len()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Self { mean, std: var.sqrt() })
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}±{:.1}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub accuracy: MeanStd,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "precision {}  recall {}  f1 {}  accuracy {}  ({} runs)",
            self.precision, self.recall, self.f1, self.accuracy, self.runs
        )
    }
}

pub fn aggregate_runs(runs: &[RunMetrics]) -> Result<Aggregate, ModelError> {
    let column = |get: fn(&RunMetrics) -> f64| MeanStd::of(&runs.iter().map(get).collect::<Vec<_>>());
    Ok(Aggregate {
        runs: runs.len(),
        precision: column(|r| r.precision)?,
        recall: column(|r| r.recall)?,
        f1: column(|r| r.f1)?,
        accuracy: column(|r| r.accuracy)?,
    })
}
