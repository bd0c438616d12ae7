use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fusion::{FusionKind, FusionModel, ModelConfig};
use crate::parallel::Execution;

use super::{evaluate, split_train_val, train, Metrics, Sample, TrainConfig};

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "precision", "recall", "f1", "specificity"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// One trained model's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: FusionKind,
    pub seed: u64,
    pub metrics: Metrics,
    pub best_epoch: usize,
    pub epochs: usize,
    pub best_val_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_gate: Option<f64>,
}

/// `{kind → {metric → {mean, std}}, per_run: [...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(flatten)]
    pub summary: BTreeMap<FusionKind, BTreeMap<String, MeanStd>>,
    pub per_run: Vec<RunRecord>,
}

impl Report {
    pub fn from_runs(per_run: Vec<RunRecord>) -> Self {
        let mut grouped: BTreeMap<FusionKind, Vec<&RunRecord>> = BTreeMap::new();
        for run in &per_run {
            grouped.entry(run.kind).or_default().push(run);
        }
        let summary = grouped
            .into_iter()
            .map(|(kind, runs)| {
                let metrics = METRIC_NAMES
                    .iter()
                    .map(|&name| {
                        let values: Vec<f64> =
                            runs.iter().map(|r| r.metrics.get(name).expect("known metric")).collect();
                        (name.to_string(), MeanStd::of(&values))
                    })
                    .collect();
                (kind, metrics)
            })
            .collect();
        Self { summary, per_run }
    }

    /// Plain-text table: one row per fusion kind, `mean ± std` in percent.
    pub fn table(&self) -> String {
        let mut out = format!("{:<16}", "Architecture");
        for name in ["Accuracy", "Precision", "Recall", "F1-score", "Specificity"] {
            let _ = write!(out, " {name:>16}");
        }
        out.push('\n');
        for (kind, metrics) in &self.summary {
            let _ = write!(out, "{:<16}", kind.as_str());
            for name in METRIC_NAMES {
                let m = metrics[name];
                let cell = format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std);
                let _ = write!(out, " {cell:>16}");
            }
            out.push('\n');
        }
        out
    }
}

/// Train every kind `train_cfg.repetitions` times with seeds
/// `seed..seed+repetitions`. Each repetition draws its own stratified split
/// and initialisation from its seed. Scores come from `test` when given,
/// else from the validation split, using the best-validation-loss weights.
pub fn run_experiment(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    dataset: &[Sample],
    test: Option<&[Sample]>,
    kinds: &[FusionKind],
    exec: Execution,
) -> Result<Report> {
    train_cfg.validate()?;
    if kinds.is_empty() {
        return Err(invalid("no fusion kinds selected"));
    }
    let jobs: Vec<(FusionKind, u64)> = kinds
        .iter()
        .flat_map(|&k| (0..train_cfg.repetitions as u64).map(move |r| (k, train_cfg.seed + r)))
        .collect();
    let runs = exec.map(&jobs, |&(kind, seed)| -> Result<RunRecord> {
        let (train_set, val_set) = split_train_val(dataset, train_cfg.val_fraction, seed)?;
        let cfg = TrainConfig {
            seed,
            ..train_cfg.clone()
        };
        let model = FusionModel::new(kind, *model_cfg, seed)?;
        let (model, history) = train(model, &train_set, &val_set, &cfg)?;
        let eval = evaluate(&model, test.unwrap_or(&val_set), cfg.batch_size)?;
        log::info!("{kind} seed {seed}: accuracy {:.3} after {} epochs", eval.metrics.accuracy, history.epochs.len());
        Ok(RunRecord {
            kind,
            seed,
            metrics: eval.metrics,
            best_epoch: history.best_epoch,
            epochs: history.epochs.len(),
            best_val_loss: history.best_val_loss,
            mean_gate: eval.mean_gate,
        })
    });
    Ok(Report::from_runs(runs.into_iter().collect::<Result<_>>()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::evaluate_metrics;

    fn run(kind: FusionKind, seed: u64, acc_hits: usize) -> RunRecord {
        let truth = [1, 1, 0, 0, 1, 0, 1, 0, 1, 0];
        let pred: Vec<u8> = truth.iter().enumerate().map(|(i, &t)| if i < acc_hits { t } else { 1 - t }).collect();
        RunRecord {
            kind,
            seed,
            metrics: evaluate_metrics(&pred, &truth).unwrap(),
            best_epoch: 1,
            epochs: 7,
            best_val_loss: 0.5,
            mean_gate: None,
        }
    }

    #[test]
    fn population_std_of_two_runs() {
        let r = Report::from_runs(vec![run(FusionKind::Gmu, 0, 8), run(FusionKind::Gmu, 1, 9)]);
        let acc = r.summary[&FusionKind::Gmu]["accuracy"];
        assert!((acc.mean - 0.85).abs() < 1e-15);
        assert!((acc.std - 0.05).abs() < 1e-15);
    }

    #[test]
    fn single_run_has_zero_spread_and_one_row_per_metric() {
        let r = Report::from_runs(vec![run(FusionKind::Concat, 0, 7), run(FusionKind::CrossAttention, 0, 6)]);
        assert_eq!(r.summary.len(), 2);
        for metrics in r.summary.values() {
            assert_eq!(metrics.len(), METRIC_NAMES.len());
            assert!(metrics.values().all(|m| m.std == 0.0));
        }
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["concat"]["f1"]["mean"].is_number());
        assert_eq!(json["per_run"].as_array().unwrap().len(), 2);
        assert_eq!(r.table().lines().count(), 3);
    }
}
