//! Summaries and table formatting.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentResult, PipelineError};

/// Accuracies over repeats with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// `n - 1` denominator; 0 for a single run.
    pub std: f64,
}

impl Summary {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Result<Self, PipelineError> {
        if accuracies.is_empty() {
            return Err(PipelineError::EmptyResults);
        }
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = if accuracies.len() < 2 {
            0.0
        } else {
            (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(Self { accuracies, mean, std })
    }

    pub fn display(&self) -> String {
        format_pm(self.mean, self.std)
    }
}

/// Fractions rendered as percentages: `0.9090, 0.0116 -> "90.90 ± 1.16"`.
pub fn format_pm(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

/// Human-readable table, one row per result.
pub fn render_table(results: &[ExperimentResult]) -> Result<String, PipelineError> {
    if results.is_empty() {
        return Err(PipelineError::EmptyResults);
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<15} {:>3} {:>6} {:>4}  {:<16} {:<16}",
        "classifier", "mode", "k", "noise", "runs", "accuracy", "unrefined"
    );
    let mut single = false;
    for r in results {
        let classifier = serde_json::to_value(r.classifier).expect("enum serializes");
        let _ = writeln!(
            out,
            "{:<12} {:<15} {:>3} {:>6.2} {:>4}  {:<16} {:<16}",
            classifier.as_str().unwrap_or("?"),
            r.mode.as_str(),
            r.k,
            r.noise_rate,
            r.summary.accuracies.len(),
            r.summary.display(),
            r.unrefined.as_ref().map_or("-".to_string(), Summary::display)
        );
        single |= r.summary.accuracies.len() == 1;
    }
    if single {
        out.push_str("warning: single-run rows report a standard deviation of 0.00\n");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean: f64,
    pub std: f64,
    pub unrefined_mean: Option<f64>,
    pub unrefined_std: Option<f64>,
}

impl SweepRow {
    pub fn new(value: f64, r: &ExperimentResult) -> Self {
        Self {
            value,
            mean: r.summary.mean,
            std: r.summary.std,
            unrefined_mean: r.unrefined.as_ref().map(|u| u.mean),
            unrefined_std: r.unrefined.as_ref().map(|u| u.std),
        }
    }
}

pub fn sweep_csv(column: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{column},mean,std,unrefined_mean,unrefined_std\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.value, r.mean, r.std, opt(r.unrefined_mean), opt(r.unrefined_std));
    }
    out
}

pub fn write_sweep_csv(path: &Path, column: &str, rows: &[SweepRow]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(super::io_err(dir))?;
    }
    std::fs::write(path, sweep_csv(column, rows)).map_err(super::io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Classifier;
    use crate::refine::RefinementMode;

    fn result(accs: Vec<f64>) -> ExperimentResult {
        ExperimentResult {
            config_hash: "h".into(),
            classifier: Classifier::Gcn,
            mode: RefinementMode::Full,
            k: 3,
            noise_rate: 0.0,
            summary: Summary::from_accuracies(accs).unwrap(),
            unrefined: None,
            refinement: None,
        }
    }

    #[test]
    fn table_cell_format() {
        assert_eq!(format_pm(0.9090, 0.0116), "90.90 ± 1.16");
    }

    #[test]
    fn sample_std() {
        let s = Summary::from_accuracies(vec![0.8, 0.9, 1.0]).unwrap();
        assert!((s.mean - 0.9).abs() < 1e-12);
        assert!((s.std - 0.1).abs() < 1e-12);
    }

    #[test]
    fn single_run_warns() {
        let r = result(vec![0.75]);
        assert_eq!(r.summary.std, 0.0);
        let table = render_table(&[r]).unwrap();
        assert!(table.contains("75.00 ± 0.00"));
        assert!(table.contains("warning"));
    }

    #[test]
    fn empty_is_error() {
        assert!(render_table(&[]).is_err());
        assert!(Summary::from_accuracies(vec![]).is_err());
    }

    #[test]
    fn json_round_trip_exact() {
        let r = result(vec![0.1 + 0.2, 1.0 / 3.0]);
        let back: ExperimentResult = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_layout() {
        let rows = vec![SweepRow::new(1.0, &result(vec![0.5]))];
        assert_eq!(sweep_csv("k", &rows), "k,mean,std,unrefined_mean,unrefined_std\n1,0.5,0,,\n");
    }
}
