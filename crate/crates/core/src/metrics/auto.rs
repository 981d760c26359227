use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::fuzzy::fuzzy_similarity;
use crate::script::{NodeKind, ScriptError, ScriptLibrary};
use crate::transcript::{Condition, Transcript};

/// 1 if the transcript reached a natural conclusion, else 0.
fn concluded(t: &Transcript) -> f64 {
    if t.completed {
        1.0
    } else {
        0.0
    }
}

/// Share of transcripts that reached a natural conclusion. An empty input
/// gives 0.
pub fn auto_metric_1(transcripts: &[Transcript], library: &ScriptLibrary) -> Result<f64, ScriptError> {
    for t in transcripts {
        library.get(&t.topic_id)?;
    }
    if transcripts.is_empty() {
        return Ok(0.0);
    }
    Ok(transcripts.iter().map(concluded).sum::<f64>() / transcripts.len() as f64)
}

/// Question coverage of one transcript: the questions on the path selected
/// by the user's recorded option matches, and how many of them some bot
/// bubble delivered at or above `threshold`.
pub fn question_coverage(
    transcript: &Transcript,
    library: &ScriptLibrary,
    threshold: f64,
) -> Result<(usize, usize), ScriptError> {
    let script = library.get(&transcript.topic_id)?;
    let choices: Vec<String> = transcript
        .user_turns()
        .filter_map(|t| t.annotations.matched_node_id.as_deref())
        .filter(|id| script.node(id).is_some_and(|n| n.kind == NodeKind::UserOption))
        .map(str::to_string)
        .collect();
    let path = script.realized_path(&choices);
    let questions = script.questions_on_path(&path);
    let posed = questions
        .iter()
        .filter(|q| {
            let text = &script.node(q).expect("path node").text;
            transcript
                .bot_turns()
                .any(|t| fuzzy_similarity(&t.text, text) >= threshold)
        })
        .count();
    Ok((posed, questions.len()))
}

fn coverage_ratio(posed: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        posed as f64 / total as f64
    }
}

/// Mean per-transcript share of path questions that were posed. An empty
/// input gives 0.
pub fn auto_metric_2(
    transcripts: &[Transcript],
    library: &ScriptLibrary,
    threshold: f64,
) -> Result<f64, ScriptError> {
    let mut sum = 0.0;
    for t in transcripts {
        let (posed, total) = question_coverage(t, library, threshold)?;
        sum += coverage_ratio(posed, total);
    }
    if transcripts.is_empty() {
        return Ok(0.0);
    }
    Ok(sum / transcripts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMetrics {
    pub session_count: usize,
    pub metric1_ratio: f64,
    pub metric2_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub session_count: usize,
    pub metric1_ratio: f64,
    pub metric2_ratio: f64,
    pub threshold: f64,
    pub per_topic: BTreeMap<String, TopicMetrics>,
}

pub fn metrics_report(
    transcripts: &[Transcript],
    library: &ScriptLibrary,
    threshold: f64,
) -> Result<MetricsReport, ScriptError> {
    let mut by_topic: BTreeMap<&str, Vec<Transcript>> = BTreeMap::new();
    for t in transcripts {
        by_topic.entry(&t.topic_id).or_default().push(t.clone());
    }
    let mut per_topic = BTreeMap::new();
    for (topic, group) in by_topic {
        per_topic.insert(
            topic.to_string(),
            TopicMetrics {
                session_count: group.len(),
                metric1_ratio: auto_metric_1(&group, library)?,
                metric2_ratio: auto_metric_2(&group, library, threshold)?,
            },
        );
    }
    Ok(MetricsReport {
        session_count: transcripts.len(),
        metric1_ratio: auto_metric_1(transcripts, library)?,
        metric2_ratio: auto_metric_2(transcripts, library, threshold)?,
        threshold,
        per_topic,
    })
}

/// One report per condition present in `transcripts`.
pub fn metrics_by_condition(
    transcripts: &[Transcript],
    library: &ScriptLibrary,
    threshold: f64,
) -> Result<BTreeMap<Condition, MetricsReport>, ScriptError> {
    let mut out = BTreeMap::new();
    for condition in Condition::ALL {
        let group: Vec<Transcript> = transcripts
            .iter()
            .filter(|t| t.condition == condition)
            .cloned()
            .collect();
        if !group.is_empty() {
            out.insert(condition, metrics_report(&group, library, threshold)?);
        }
    }
    Ok(out)
}

/// Ratio as a percentage with two decimals, e.g. `0.857142` -> `85.71`.
pub fn percent(ratio: f64) -> String {
    format!("{:.2}", ratio * 100.0)
}

/// Aligned plain-text table with one row per condition.
pub fn render_metrics_table(reports: &BTreeMap<Condition, MetricsReport>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>8} {:>9} {:>9}", "Condition", "Sessions", "Metric 1", "Metric 2");
    for (condition, r) in reports {
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>9} {:>9}",
            condition.display_name(),
            r.session_count,
            percent(r.metric1_ratio),
            percent(r.metric2_ratio)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::test_support::script;
    use crate::script::NodeKind::*;
    use crate::turn::BubbleAnnotation;
    use chrono::{TimeZone, Utc};

    fn library() -> ScriptLibrary {
        ScriptLibrary::new(
            "t",
            [script(&[
                ("q", TherapeuticQuestion, "How confident are you today?", &["o1", "o2"]),
                ("o1", UserOption, "Low", &["q2"]),
                ("q2", TherapeuticQuestion, "What would help you feel more ready?", &["e1"]),
                ("e1", Terminal, "Thanks.", &[]),
                ("o2", UserOption, "High", &["e2"]),
                ("e2", Terminal, "Great.", &[]),
            ])],
        )
        .unwrap()
    }

    fn transcript(bot: &[&str], choice: Option<&str>, completed: bool) -> Transcript {
        let at = Utc.timestamp_opt(0, 0).unwrap();
        let mut t = Transcript::new("s", Condition::SagPrompt, "t");
        t.push_bot(bot[0], BubbleAnnotation::default(), at);
        t.push_user("x", choice.map(str::to_string), at);
        for b in &bot[1..] {
            t.push_bot(*b, BubbleAnnotation::default(), at);
        }
        t.completed = completed;
        t
    }

    #[test]
    fn coverage_follows_choices() {
        let lib = library();
        let low = transcript(&["How confident are you today?", "What would help you feel more ready?"], Some("o1"), true);
        assert_eq!(question_coverage(&low, &lib, 0.6).unwrap(), (2, 2));
        let high = transcript(&["How confident are you today?", "Great."], Some("o2"), true);
        assert_eq!(question_coverage(&high, &lib, 0.6).unwrap(), (1, 1));
        // No recorded choice: the first branch is assumed.
        let none = transcript(&["How confident do you feel today?"], None, false);
        assert_eq!(question_coverage(&none, &lib, 0.6).unwrap(), (0, 2));
        assert_eq!(question_coverage(&none, &lib, 0.5).unwrap(), (1, 2));
    }

    #[test]
    fn metric_values() {
        let lib = library();
        let ts = vec![
            transcript(&["How confident are you today?", "Great."], Some("o2"), true),
            transcript(&["Tell me more."], Some("o1"), false),
        ];
        assert_eq!(auto_metric_1(&ts, &lib).unwrap(), 0.5);
        assert_eq!(auto_metric_2(&ts, &lib, 0.6).unwrap(), 0.5);
        assert_eq!(auto_metric_1(&[], &lib).unwrap(), 0.0);
        let mut unknown = ts[0].clone();
        unknown.topic_id = "zzz".into();
        assert!(auto_metric_1(&[unknown], &lib).is_err());
    }

    #[test]
    fn table_rendering() {
        let lib = library();
        let ts = vec![transcript(&["How confident are you today?", "Great."], Some("o2"), true)];
        let table = render_metrics_table(&metrics_by_condition(&ts, &lib, 0.6).unwrap());
        assert!(table.contains("SAG-Prompt"));
        assert!(table.contains("100.00"));
        assert_eq!(percent(36.0 / 42.0), "85.71");
    }
}
