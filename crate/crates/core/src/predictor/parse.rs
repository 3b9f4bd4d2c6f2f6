//! Parsing of tagged model responses.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::graph::{Pair, SignedConfidence, VariableSet};

use super::{Decision, EdgeAssessment};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    MissingDecision,
    UnknownDecision,
    MissingConfidence,
    InvalidConfidence,
    ConfidenceOutOfRange,
    MissingBlock,
}

#[derive(Clone, Debug, Error, PartialEq)]
#[error("unparseable response ({kind:?}): {detail}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub detail: String,
    pub raw: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, detail: impl Into<String>, raw: &str) -> Self {
        ParseError { kind, detail: detail.into(), raw: raw.to_string() }
    }
}

fn tag_regex(tag: &str) -> Regex {
    // Tolerates whitespace inside the tag brackets, e.g. `< /confidence>`.
    Regex::new(&format!(r"(?is)<\s*{tag}\s*>(.*?)<\s*/\s*{tag}\s*>")).expect("valid tag regex")
}

fn decision_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| tag_regex("decision"))
}

fn confidence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| tag_regex("confidence"))
}

fn last_tag<'t>(re: &Regex, text: &'t str) -> Option<&'t str> {
    re.captures_iter(text).last().map(|c| c.get(1).expect("group").as_str().trim())
}

fn parse_decision(word: &str) -> Option<Decision> {
    let normalized = word.split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_uppercase();
    match normalized.as_str() {
        "YES" | "PARENT" => Some(Decision::Yes),
        "NO" | "NOT CAUSAL" => Some(Decision::No),
        _ => None,
    }
}

/// Extracts the decision and confidence from the last tag of each kind.
/// Accepts YES/PARENT as present and NO/NOT CAUSAL as absent.
pub fn parse_assessment(text: &str) -> Result<EdgeAssessment, ParseError> {
    let decision_text = last_tag(decision_re(), text)
        .ok_or_else(|| ParseError::new(ParseErrorKind::MissingDecision, "no <decision> tag", text))?;
    let decision = parse_decision(decision_text).ok_or_else(|| {
        ParseError::new(ParseErrorKind::UnknownDecision, format!("decision {decision_text:?}"), text)
    })?;
    let conf_text = last_tag(confidence_re(), text).ok_or_else(|| {
        ParseError::new(ParseErrorKind::MissingConfidence, "no <confidence> tag", text)
    })?;
    let value: i64 = conf_text.parse().map_err(|_| {
        ParseError::new(ParseErrorKind::InvalidConfidence, format!("confidence {conf_text:?}"), text)
    })?;
    if !(1..=100).contains(&value) {
        return Err(ParseError::new(
            ParseErrorKind::ConfidenceOutOfRange,
            format!("confidence {value} outside 1..=100"),
            text,
        ));
    }
    Ok(EdgeAssessment { decision, confidence: value as u8, raw_text: text.to_string() })
}

fn last_block<'t>(tag: &str, text: &'t str) -> Option<&'t str> {
    tag_regex(tag).captures_iter(text).last().map(|c| c.get(1).expect("group").as_str())
}

/// Resolves `A->B` to a pair, trying every `->` split so names may contain
/// the arrow characters.
fn resolve_arrow(variables: &VariableSet, s: &str) -> Option<Pair> {
    let s = s.trim();
    s.match_indices("->").find_map(|(at, _)| {
        let parent = variables.id_of(s[..at].trim())?;
        let child = variables.id_of(s[at + 2..].trim())?;
        (parent != child).then_some(Pair::new(parent, child))
    })
}

/// Edge proposals from the last `<experiments>` block, one `A->B` per line.
/// Lines naming unknown variables are skipped.
pub fn parse_edge_list(text: &str, variables: &VariableSet) -> Result<Vec<Pair>, ParseError> {
    let block = last_block("experiments", text)
        .ok_or_else(|| ParseError::new(ParseErrorKind::MissingBlock, "no <experiments> block", text))?;
    Ok(block
        .lines()
        .map(|l| l.trim().trim_start_matches(['-', '*']).trim())
        .map(|l| l.trim_start_matches('(').trim_end_matches(')'))
        .filter(|l| !l.is_empty())
        .filter_map(|l| resolve_arrow(variables, l))
        .collect())
}

fn revision_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\(\s*(NOT\s+)?(.+?)\s*,\s*(\d+)\s*\)$").expect("valid revision regex")
    })
}

/// Per-edge revisions from the last `<revisions>` block in
/// `(A->B,CONF)` / `(NOT A->B, CONF)` notation. Malformed lines are skipped.
pub fn parse_revisions(
    text: &str,
    variables: &VariableSet,
) -> Result<Vec<(Pair, SignedConfidence)>, ParseError> {
    let block = last_block("revisions", text)
        .ok_or_else(|| ParseError::new(ParseErrorKind::MissingBlock, "no <revisions> block", text))?;
    Ok(block
        .lines()
        .filter_map(|line| {
            let caps = revision_re().captures(line.trim())?;
            let pair = resolve_arrow(variables, &caps[2])?;
            let magnitude: f64 = caps[3].parse().ok()?;
            if magnitude > 100.0 {
                return None;
            }
            let sign = if caps.get(1).is_some() { -1.0 } else { 1.0 };
            Some((pair, SignedConfidence::new(sign * magnitude)))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simple_yes() {
        let a = parse_assessment("reasoning...<decision>YES</decision> <confidence>85</confidence>").unwrap();
        assert_eq!((a.decision, a.confidence), (Decision::Yes, 85));
    }

    #[test]
    fn last_tag_wins() {
        let text = "<decision>YES</decision> maybe... actually\n<decision>NOT CAUSAL</decision><confidence>60</confidence>";
        let a = parse_assessment(text).unwrap();
        assert_eq!((a.decision, a.confidence), (Decision::No, 60));
    }

    #[test]
    fn out_of_range_is_rejected_with_raw_text() {
        let text = "<decision>YES</decision><confidence>150</confidence>";
        let err = parse_assessment(text).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::ConfidenceOutOfRange);
        assert_eq!(err.raw, text);
    }

    #[test]
    fn tolerant_forms() {
        let a = parse_assessment("< decision > parent </decision>\n<confidence> 7 < /confidence>").unwrap();
        assert_eq!((a.decision, a.confidence), (Decision::Yes, 7));
        let a = parse_assessment("<DECISION>not   causal</DECISION><Confidence>100</Confidence>").unwrap();
        assert_eq!((a.decision, a.confidence), (Decision::No, 100));
    }

    #[test]
    fn edge_list_and_revisions() {
        let v = VariableSet::from_names("", [("A", ""), ("B", ""), ("C->D", "")]).unwrap();
        let pairs = parse_edge_list("x <experiments>\nA->B\n- B -> C->D\nZ->A\nA->A\n</experiments>", &v).unwrap();
        assert_eq!(pairs, vec![Pair::new(0, 1), Pair::new(1, 2)]);
        assert!(parse_edge_list("no block", &v).is_err());

        let revs = parse_revisions(
            "<revisions>\n(A->B,70)\n(NOT B->A, 35)\n(garbage)\n(A->B,170)\n</revisions>",
            &v,
        )
        .unwrap();
        assert_eq!(
            revs,
            vec![(Pair::new(0, 1), SignedConfidence::new(70.0)), (Pair::new(1, 0), SignedConfidence::new(-35.0))]
        );
    }

    proptest! {
        #[test]
        fn well_formed_emitter_round_trips(
            yes in any::<bool>(),
            update_vocab in any::<bool>(),
            confidence in 1u8..=100,
            preamble in "[a-zA-Z .,\n]{0,80}",
        ) {
            let word = match (yes, update_vocab) {
                (true, false) => "YES",
                (false, false) => "NO",
                (true, true) => "PARENT",
                (false, true) => "NOT CAUSAL",
            };
            let text = format!("{preamble}<decision>{word}</decision> <confidence>{confidence}</confidence>");
            let a = parse_assessment(&text).unwrap();
            prop_assert_eq!(a.decision, if yes { Decision::Yes } else { Decision::No });
            prop_assert_eq!(a.confidence, confidence);
        }
    }
}
