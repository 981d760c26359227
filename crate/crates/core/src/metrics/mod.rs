//! Automatic conversation metrics, the fuzzy matcher they share with the
//! engines, and strategy-prediction scoring.

mod auto;
mod fuzzy;
mod pred;

pub use auto::{
    auto_metric_1, auto_metric_2, metrics_by_condition, metrics_report, percent, question_coverage,
    render_metrics_table, MetricsReport, TopicMetrics,
};
pub use fuzzy::{best_line_similarity, fuzzy_similarity, normalize_tokens, DEFAULT_MATCH_THRESHOLD};
pub use pred::{
    eval_strategy_predictions, render_pred_table, LabelScores, PredEvalError, PredEvalReport, PredMode,
};
