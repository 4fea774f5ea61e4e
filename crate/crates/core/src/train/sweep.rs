//! Grid runs over (mode, labelled budget, seed) with per-cell results and
//! mean/std aggregates.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::hyper::Hyperparams;
use super::metrics::{JsonlWriter, NoObserver, TrainObserver};
use super::trainer::train;
use crate::data::{make_split, Dataset, Split};
use crate::error::{HydraError, Result};
use crate::model::ModelConfig;

/// The budgets swept when none are given.
pub const DEFAULT_BUDGETS: [usize; 7] = [50, 100, 300, 500, 700, 1000, 3000];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub modes: Vec<String>,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(String, usize, u64)> {
        let mut out = Vec::with_capacity(self.modes.len() * self.budgets.len() * self.seeds.len());
        for m in &self.modes {
            for &b in &self.budgets {
                for &s in &self.seeds {
                    out.push((m.clone(), b, s));
                }
            }
        }
        out
    }
}

/// One line of `sweep.csv`. Failed cells carry NaN scores and an error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: String,
    pub budget: usize,
    pub seed: u64,
    pub final_accuracy: f64,
    pub mean_centroid_error: f64,
    #[serde(skip)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mode: String,
    pub budget: usize,
    /// Successful runs aggregated.
    pub runs: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_accuracy: f64,
    pub mean_centroid_error: f64,
    pub std_centroid_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub mode: String,
    pub budget: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: Vec<CellSummary>,
    pub failures: Vec<Failure>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl SweepReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn summary(&self) -> SweepSummary {
        let mut keys: Vec<(String, usize)> = Vec::new();
        for r in &self.rows {
            let k = (r.mode.clone(), r.budget);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let cells = keys
            .into_iter()
            .map(|(mode, budget)| {
                let ok: Vec<&SweepRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.mode == mode && r.budget == budget && r.error.is_none())
                    .collect();
                let acc: Vec<f64> = ok.iter().map(|r| r.final_accuracy).collect();
                let err: Vec<f64> = ok.iter().map(|r| r.mean_centroid_error).collect();
                let (mean_accuracy, std_accuracy) = mean_std(&acc);
                let (mean_centroid_error, std_centroid_error) = mean_std(&err);
                CellSummary {
                    mode,
                    budget,
                    runs: ok.len(),
                    mean_accuracy,
                    std_accuracy,
                    mean_centroid_error,
                    std_centroid_error,
                }
            })
            .collect();
        let failures = self
            .rows
            .iter()
            .filter_map(|r| {
                r.error.as_ref().map(|e| Failure {
                    mode: r.mode.clone(),
                    budget: r.budget,
                    seed: r.seed,
                    error: e.clone(),
                })
            })
            .collect();
        SweepSummary { cells, failures }
    }

    pub fn mean_accuracy(&self, mode: &str, budget: usize) -> Option<f64> {
        self.summary()
            .cells
            .into_iter()
            .find(|c| c.mode == mode && c.budget == budget)
            .map(|c| c.mean_accuracy)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| HydraError::io(path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| HydraError::io(path, e))?;
        }
        w.flush().map_err(|e| HydraError::io(path, e))
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.summary()).map_err(|e| HydraError::io(path, e))?;
        fs::write(path, json + "\n").map_err(|e| HydraError::io(path, e))
    }

    /// Modes as rows, budgets as columns, `mean ± std` accuracy per cell.
    pub fn render_table(&self) -> String {
        let summary = self.summary();
        let mut budgets: Vec<usize> = summary.cells.iter().map(|c| c.budget).collect();
        budgets.sort_unstable();
        budgets.dedup();
        let mut modes: Vec<&str> = Vec::new();
        for c in &summary.cells {
            if !modes.contains(&c.mode.as_str()) {
                modes.push(&c.mode);
            }
        }
        let width = modes.iter().map(|m| m.len()).max().unwrap_or(4).max(4);
        let mut out = String::new();
        let _ = write!(out, "{:width$}", "mode");
        for b in &budgets {
            let _ = write!(out, " | {b:>13}");
        }
        out.push('\n');
        out.push_str(&"-".repeat(width + budgets.len() * 16));
        out.push('\n');
        for m in modes {
            let _ = write!(out, "{m:width$}");
            for b in &budgets {
                let cell = summary.cells.iter().find(|c| c.mode == m && c.budget == *b);
                match cell {
                    Some(c) if c.runs > 0 => {
                        let _ = write!(out, " | {:.3} ± {:.3}", c.mean_accuracy, c.std_accuracy);
                    }
                    Some(_) => out.push_str(" |        failed"),
                    None => out.push_str(" |             -"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every cell of `grid` with `threads` workers. Cell results do not
/// depend on the worker count. With `cell_dir`, each cell writes its
/// metrics to `<cell_dir>/<mode>_b<budget>_s<seed>.jsonl`.
pub fn sweep(
    data: &Dataset,
    model: &ModelConfig,
    hp: &Hyperparams,
    grid: &SweepGrid,
    threads: usize,
    cell_dir: Option<&Path>,
) -> Result<SweepReport> {
    hp.validate()?;
    model.validate()?;
    let n_train = data.indices(Split::Train).count();
    if let Some(b) = grid.budgets.iter().find(|&&b| b > n_train || b < data.num_classes()) {
        return Err(HydraError::Argument(format!(
            "budget {b} is not in [{}, {n_train}]",
            data.num_classes()
        )));
    }
    let cells = grid.cells();
    let results: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some((mode, budget, seed)) = cells.get(i) else {
            break;
        };
        let path = cell_dir.map(|d| d.join(format!("{mode}_b{budget}_s{seed}.jsonl")));
        let row = match run_cell(data, model, hp, mode, *budget, *seed, path) {
            Ok((acc, err)) => SweepRow {
                mode: mode.clone(),
                budget: *budget,
                seed: *seed,
                final_accuracy: acc,
                mean_centroid_error: err,
                error: None,
            },
            Err(e) => SweepRow {
                mode: mode.clone(),
                budget: *budget,
                seed: *seed,
                final_accuracy: f64::NAN,
                mean_centroid_error: f64::NAN,
                error: Some(e.to_string()),
            },
        };
        results.lock().expect("no worker panicked")[i] = Some(row);
    };
    std::thread::scope(|s| {
        for _ in 0..threads.max(1) {
            s.spawn(worker);
        }
    });
    let rows = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();
    Ok(SweepReport { rows })
}

fn run_cell(
    data: &Dataset,
    model: &ModelConfig,
    hp: &Hyperparams,
    mode: &str,
    budget: usize,
    seed: u64,
    metrics: Option<PathBuf>,
) -> Result<(f64, f64)> {
    let plan = make_split(data, budget, seed)?;
    let hp = Hyperparams {
        mode: mode.to_string(),
        seed,
        ..hp.clone()
    };
    let mut observer: Box<dyn TrainObserver> = match &metrics {
        Some(p) => Box::new(JsonlWriter::create(p)?),
        None => Box::new(NoObserver),
    };
    let outcome = train(model, data, &plan, &hp, observer.as_mut())?;
    let last = outcome.history.last().expect("epochs >= 1");
    Ok((last.test_accuracy, last.mean_centroid_error))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mode: &str, budget: usize, seed: u64, acc: f64) -> SweepRow {
        SweepRow {
            mode: mode.into(),
            budget,
            seed,
            final_accuracy: acc,
            mean_centroid_error: acc / 10.0,
            error: None,
        }
    }

    #[test]
    fn grid_cardinality() {
        let g = SweepGrid {
            modes: vec!["a".into(), "b".into()],
            budgets: vec![10, 20, 30],
            seeds: vec![0, 1],
        };
        assert_eq!(g.cells().len(), 12);
    }

    #[test]
    fn summary_statistics() {
        let mut failed = row("p", 10, 2, f64::NAN);
        failed.error = Some("boom".into());
        let r = SweepReport {
            rows: vec![row("p", 10, 0, 0.5), row("p", 10, 1, 0.7), failed, row("h", 10, 0, 0.9)],
        };
        let s = r.summary();
        let p = &s.cells[0];
        assert_eq!(p.runs, 2);
        assert!((p.mean_accuracy - 0.6).abs() < 1e-12);
        assert!((p.std_accuracy - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.cells[1].std_accuracy, 0.0);
        assert_eq!(s.failures.len(), 1);
        assert_eq!(r.failed(), 1);
        assert!(r.render_table().contains("0.600 ± 0.141"));
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let mut bad = row("p", 10, 1, f64::NAN);
        bad.error = Some("x".into());
        SweepReport { rows: vec![row("p", 10, 0, 0.5), bad] }.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "mode,budget,seed,final_accuracy,mean_centroid_error");
        assert_eq!(lines[1], "p,10,0,0.5,0.05");
        assert_eq!(lines[2], "p,10,1,NaN,NaN");
    }
}
