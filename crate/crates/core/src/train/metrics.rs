use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::LabelledPatch;
use crate::error::{HydraError, Result};
use crate::losses::LossBreakdown;
use crate::model::Predictor;

/// Test-set scores of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    #[serde(rename = "test_accuracy")]
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// Mean Euclidean centroid error over patches whose true class is not
    /// the background class; 0 when there are none.
    pub mean_centroid_error: f64,
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Epoch means of the joint loss components.
    pub train_loss: LossBreakdown,
    pub train_l2: f64,
    pub test_accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    pub mean_centroid_error: f64,
}

impl MetricsRecord {
    pub fn new(epoch: usize, lr: f64, train_loss: LossBreakdown, train_l2: f64, eval: Evaluation) -> Self {
        MetricsRecord {
            epoch,
            lr,
            train_loss,
            train_l2,
            test_accuracy: eval.accuracy,
            confusion: eval.confusion,
            mean_centroid_error: eval.mean_centroid_error,
        }
    }
}

pub fn evaluate<P: Predictor + ?Sized>(
    model: &P,
    test: &[LabelledPatch<'_>],
    background: Option<usize>,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(HydraError::Argument("cannot evaluate on an empty test set".into()));
    }
    let c = model.num_classes();
    if let Some(p) = test.iter().find(|p| p.class_id >= c) {
        return Err(HydraError::Argument(format!(
            "patch `{}` has class {} but the model predicts {c} classes",
            p.id, p.class_id
        )));
    }
    let images: Vec<_> = test.iter().map(|p| p.image).collect();
    let preds = model.predict(&images)?;
    let mut confusion = vec![vec![0u64; c]; c];
    let (mut err_sum, mut err_n) = (0.0, 0usize);
    for (patch, pred) in test.iter().zip(&preds) {
        confusion[patch.class_id][pred.probs.argmax()] += 1;
        if Some(patch.class_id) != background {
            err_sum += pred.centroid.distance(&patch.centroid);
            err_n += 1;
        }
    }
    let correct: u64 = (0..c).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        confusion,
        mean_centroid_error: if err_n == 0 { 0.0 } else { err_sum / err_n as f64 },
    })
}

/// Receives every epoch's record as training proceeds.
pub trait TrainObserver {
    fn on_epoch(&mut self, record: &MetricsRecord) -> Result<()>;
}

/// Discards everything.
pub struct NoObserver;

impl TrainObserver for NoObserver {
    fn on_epoch(&mut self, _: &MetricsRecord) -> Result<()> {
        Ok(())
    }
}

/// Appends one JSON object per line and flushes after each record.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| HydraError::io(path, e))?;
        Ok(JsonlWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }
}

impl TrainObserver for JsonlWriter {
    fn on_epoch(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| HydraError::io(&self.path, e))?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| HydraError::io(&self.path, e))
    }
}

impl<F: FnMut(&MetricsRecord) -> Result<()>> TrainObserver for F {
    fn on_epoch(&mut self, record: &MetricsRecord) -> Result<()> {
        self(record)
    }
}
