use std::collections::BTreeSet;

/// Default similarity a bot utterance needs to count as delivering a node.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.6;

/// Lowercases, drops every character that is neither alphanumeric nor
/// whitespace, and splits on whitespace.
pub fn normalize_tokens(text: &str) -> BTreeSet<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Token-set Jaccard similarity after normalization. Two texts without any
/// tokens are identical (1.0).
pub fn fuzzy_similarity(a: &str, b: &str) -> f64 {
    let ta = normalize_tokens(a);
    let tb = normalize_tokens(b);
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let shared = ta.intersection(&tb).count();
    let union = ta.len() + tb.len() - shared;
    shared as f64 / union as f64
}

/// Best similarity of `target` against the whole of `text` and each of its
/// non-empty lines.
pub fn best_line_similarity(text: &str, target: &str) -> f64 {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| fuzzy_similarity(l, target))
        .fold(fuzzy_similarity(text, target), f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_disjoint() {
        assert_eq!(fuzzy_similarity("How are you?", "How are you?"), 1.0);
        assert_eq!(fuzzy_similarity("red apple", "blue sky"), 0.0);
        assert_eq!(fuzzy_similarity("", "  ...  "), 1.0);
        assert_eq!(fuzzy_similarity("", "word"), 0.0);
    }

    #[test]
    fn four_of_seven() {
        let s = fuzzy_similarity(
            "how confident are you today",
            "how confident do you feel today",
        );
        assert!((s - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn case_and_punctuation_do_not_matter() {
        assert_eq!(fuzzy_similarity("Hello, WORLD!!", "hello world"), 1.0);
        assert_eq!(fuzzy_similarity("don't", "dont"), 1.0);
    }

    #[test]
    fn line_wise_best() {
        let text = "I hear you.\nWhat would help most?";
        assert_eq!(best_line_similarity(text, "What would help most?"), 1.0);
    }
}
