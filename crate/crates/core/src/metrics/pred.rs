use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredMode {
    SingleLabel,
    MultiLabel,
}

impl std::str::FromStr for PredMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "single" | "single_label" => Ok(PredMode::SingleLabel),
            "multi" | "multi_label" => Ok(PredMode::MultiLabel),
            _ => Err(format!("unknown mode `{s}` (expected single or multi)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PredEvalError {
    #[error("gold has {gold} items but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("item {index} has an empty label set")]
    EmptyLabelSet { index: usize },
    #[error("item {index} has {count} labels in single-label mode")]
    NotSingleLabel { index: usize, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold items carrying the label.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredEvalReport {
    pub mode: PredMode,
    pub items: usize,
    /// Exact match rate; subset accuracy in multi-label mode.
    pub accuracy: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_label: BTreeMap<String, LabelScores>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

/// Scores predicted label sets against gold. Labels seen in either gold or
/// predictions form the label universe for macro averaging; undefined
/// ratios count as 0.
pub fn eval_strategy_predictions(
    gold: &[Vec<String>],
    pred: &[Vec<String>],
    mode: PredMode,
) -> Result<PredEvalReport, PredEvalError> {
    if gold.len() != pred.len() {
        return Err(PredEvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(PredEvalError::Empty);
    }
    let mut sets = Vec::with_capacity(gold.len());
    for (index, (g, p)) in gold.iter().zip(pred).enumerate() {
        let g: BTreeSet<&str> = g.iter().map(String::as_str).collect();
        let p: BTreeSet<&str> = p.iter().map(String::as_str).collect();
        for set in [&g, &p] {
            if set.is_empty() {
                return Err(PredEvalError::EmptyLabelSet { index });
            }
            if mode == PredMode::SingleLabel && set.len() > 1 {
                return Err(PredEvalError::NotSingleLabel {
                    index,
                    count: set.len(),
                });
            }
        }
        sets.push((g, p));
    }

    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    let mut exact = 0;
    for (g, p) in &sets {
        if g == p {
            exact += 1;
        }
        for label in g.union(p) {
            let c = counts.entry(label).or_default();
            match (g.contains(label), p.contains(label)) {
                (true, true) => c.0 += 1,
                (false, true) => c.1 += 1,
                (true, false) => c.2 += 1,
                (false, false) => unreachable!(),
            }
        }
    }

    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut per_label = BTreeMap::new();
    for (label, &(t, f, n)) in &counts {
        tp += t;
        fp += f;
        fn_ += n;
        per_label.insert(
            label.to_string(),
            LabelScores {
                precision: ratio(t, t + f),
                recall: ratio(t, t + n),
                f1: f1(t, f, n),
                support: t + n,
            },
        );
    }
    let macro_f1 = per_label.values().map(|s| s.f1).sum::<f64>() / per_label.len() as f64;
    Ok(PredEvalReport {
        mode,
        items: sets.len(),
        accuracy: ratio(exact, sets.len()),
        micro_precision: ratio(tp, tp + fp),
        micro_recall: ratio(tp, tp + fn_),
        micro_f1: f1(tp, fp, fn_),
        macro_f1,
        per_label,
    })
}

pub fn render_pred_table(report: &PredEvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>9} {:>9} {:>9} {:>8}", "Label", "Precision", "Recall", "F1", "Support");
    for (label, s) in &report.per_label {
        let _ = writeln!(
            out,
            "{:<24} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            label, s.precision, s.recall, s.f1, s.support
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "items     {}", report.items);
    let _ = writeln!(out, "accuracy  {:.4}", report.accuracy);
    let _ = writeln!(out, "micro F1  {:.4}", report.micro_f1);
    let _ = writeln!(out, "macro F1  {:.4}", report.macro_f1);
    out
}
