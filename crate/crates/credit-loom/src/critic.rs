//! The critic suite: turning raw completion text into structured signals.
//!
//! Three evaluators operate on a finished round or trajectory:
//! - a per-turn critic grading one agent answer against gold, with a closed
//!   failure-pattern taxonomy and an integer 0–5 score;
//! - a per-round judge scoring every role's contribution in one call;
//! - an aggregation check comparing the shared state's answer to gold.
//!
//! Parsers are tolerant of formatting drift but reject invented failure
//! labels and out-of-range scores. When a critic contradicts itself (correct
//! verdict with a failure label, or the reverse), the caller re-queries once
//! and then applies a deterministic repair, so no sample is ever dropped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::answer::{extract_answer, OptionLabel};
use crate::assets::PromptAssets;
use crate::datastore::TaskInstance;
use crate::error::{Error, Result};
use crate::gateway::{CallTag, CallerKind, CompletionPort, CompletionRequest};
use crate::protocol::{DecodingSettings, RoundTranscript, SharedState, Utterance};
use crate::wire;

/// Closed failure taxonomy. `None` means the answer was correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailurePattern {
    #[serde(rename = "DOMAIN_MISMATCH")]
    DomainMismatch,
    #[serde(rename = "KNOWLEDGE_DEFICIT")]
    KnowledgeDeficit,
    #[serde(rename = "MISINTERPRET_QUESTION")]
    MisinterpretQuestion,
    #[serde(rename = "INCOMPLETE_REASONING")]
    IncompleteReasoning,
    #[serde(rename = "OVERGENERALIZATION")]
    Overgeneralization,
    #[serde(rename = "MISALIGNED_OBJECTIVE")]
    MisalignedObjective,
    #[serde(rename = "INSUFFICIENT_JUSTIFICATION")]
    InsufficientJustification,
    #[serde(rename = "RANDOM_OR_UNGROUNDED")]
    RandomOrUngrounded,
    #[serde(rename = "NONE")]
    None,
}

impl FailurePattern {
    pub const ALL: [FailurePattern; 9] = [
        FailurePattern::DomainMismatch,
        FailurePattern::KnowledgeDeficit,
        FailurePattern::MisinterpretQuestion,
        FailurePattern::IncompleteReasoning,
        FailurePattern::Overgeneralization,
        FailurePattern::MisalignedObjective,
        FailurePattern::InsufficientJustification,
        FailurePattern::RandomOrUngrounded,
        FailurePattern::None,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FailurePattern::DomainMismatch => "DOMAIN_MISMATCH",
            FailurePattern::KnowledgeDeficit => "KNOWLEDGE_DEFICIT",
            FailurePattern::MisinterpretQuestion => "MISINTERPRET_QUESTION",
            FailurePattern::IncompleteReasoning => "INCOMPLETE_REASONING",
            FailurePattern::Overgeneralization => "OVERGENERALIZATION",
            FailurePattern::MisalignedObjective => "MISALIGNED_OBJECTIVE",
            FailurePattern::InsufficientJustification => "INSUFFICIENT_JUSTIFICATION",
            FailurePattern::RandomOrUngrounded => "RANDOM_OR_UNGROUNDED",
            FailurePattern::None => "NONE",
        }
    }
}

impl std::fmt::Display for FailurePattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One critic verdict on one agent turn. Post-repair, `correct` holds iff
/// `pattern == None`, and `q = raw_score / 5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub instance_id: String,
    pub role_id: String,
    pub round_index: u32,
    pub correct: bool,
    pub pattern: FailurePattern,
    pub explanation: String,
    pub raw_score: u8,
    pub q: f64,
}

/// Raw fields parsed from one critic completion, before consistency repair.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedEval {
    pub correct: bool,
    pub pattern: FailurePattern,
    pub explanation: String,
    pub raw_score: u8,
}

impl ParsedEval {
    fn is_consistent(&self) -> bool {
        self.correct == (self.pattern == FailurePattern::None)
    }

    /// Deterministic repair: a correct verdict forces `NONE`; an incorrect
    /// verdict with `NONE` becomes `RANDOM_OR_UNGROUNDED`.
    fn repaired(mut self) -> ParsedEval {
        if self.correct {
            self.pattern = FailurePattern::None;
        } else if self.pattern == FailurePattern::None {
            self.pattern = FailurePattern::RandomOrUngrounded;
        }
        self
    }
}

/// Judge scores for one round: contribution in `[0, 1]` per role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerScores {
    pub round_index: u32,
    pub scores: BTreeMap<String, f64>,
}

/// Outcome of checking one round's aggregated state against gold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationVerdict {
    pub round_index: u32,
    pub agg_answer: OptionLabel,
    pub quality: f64,
}

const FORMAT_REMINDER: &str =
    "\n\nReminder: follow the required output format exactly, using only the predefined labels.";

/// Tolerant line-oriented parse of a turn-critic completion.
///
/// Correctness comes from the first line containing "correct"/"incorrect",
/// the pattern from the labelled header line (exact taxonomy match only),
/// and the score from the first integer after `Score:`. Scores outside 0–5
/// and labels outside the taxonomy are rejected.
pub fn parse_eval_output(text: &str) -> Result<ParsedEval> {
    let mut correct: Option<bool> = None;
    let mut pattern: Option<FailurePattern> = None;
    let mut explanation = String::new();
    let mut raw_score: Option<u8> = None;

    for line in text.lines() {
        let lower = line.to_ascii_lowercase();
        if correct.is_none() {
            if lower.contains("incorrect") {
                correct = Some(false);
            } else if lower.contains("correct") {
                correct = Some(true);
            }
        }
        if pattern.is_none() {
            if let Some(found) = find_pattern_label(line) {
                pattern = Some(found);
            } else if lower.contains("pattern") && line.contains(':') {
                // A pattern header whose value matches no known label means
                // the critic invented one.
                let value = line.split_once(':').map(|x| x.1).unwrap_or("").trim();
                if !value.is_empty() {
                    return Err(Error::CriticParseFailure(format!(
                        "unknown failure label {value:?}"
                    )));
                }
            }
        }
        if explanation.is_empty() && lower.contains("explanation") && line.contains(':') {
            explanation = line
                .split_once(':')
                .map(|x| x.1)
                .unwrap_or("")
                .trim()
                .to_string();
        }
        if raw_score.is_none() {
            if let Some(at) = lower.find("score") {
                let rest = &line[at + "score".len()..];
                if let Some(colon) = rest.find(':') {
                    let value = rest[colon + 1..].trim();
                    let digits: String = value
                        .chars()
                        .take_while(|c| c.is_ascii_digit() || *c == '-')
                        .collect();
                    let parsed: i64 = digits.parse().map_err(|_| {
                        Error::CriticParseFailure(format!("unreadable score in {line:?}"))
                    })?;
                    if !(0..=5).contains(&parsed) {
                        return Err(Error::CriticParseFailure(format!(
                            "score {parsed} outside 0-5"
                        )));
                    }
                    raw_score = Some(parsed as u8);
                }
            }
        }
    }

    let correct =
        correct.ok_or_else(|| Error::CriticParseFailure("missing correctness field".into()))?;
    let pattern =
        pattern.ok_or_else(|| Error::CriticParseFailure("missing failure pattern".into()))?;
    let raw_score =
        raw_score.ok_or_else(|| Error::CriticParseFailure("missing score field".into()))?;
    Ok(ParsedEval {
        correct,
        pattern,
        explanation,
        raw_score,
    })
}

/// First exact taxonomy label appearing in `line` as a standalone word.
fn find_pattern_label(line: &str) -> Option<FailurePattern> {
    let mut best: Option<(usize, FailurePattern)> = None;
    for p in FailurePattern::ALL {
        let label = p.label();
        let mut from = 0;
        while let Some(rel) = line[from..].find(label) {
            let at = from + rel;
            let before = line[..at].chars().next_back();
            let after = line[at + label.len()..].chars().next();
            let word_char = |c: char| c.is_ascii_alphanumeric() || c == '_';
            if !before.is_some_and(word_char) && !after.is_some_and(word_char) {
                if best.is_none_or(|(b, _)| at < b) {
                    best = Some((at, p));
                }
                break;
            }
            from = at + label.len();
        }
    }
    best.map(|(_, p)| p)
}

fn turn_eval_user_text(instance: &TaskInstance, answer_text: &str) -> String {
    format!(
        "Question:\n{}\n\nOptions:\n{}\nGold correct answer: {}\n\n{}\n{}\n{}\n{}",
        instance.question,
        instance.options.block(),
        instance.gold,
        wire::AGENT_ANSWER_HEADER,
        wire::BLOCK_OPEN,
        answer_text,
        wire::BLOCK_CLOSE,
    )
}

/// Grades one agent turn with the turn-evaluation prompt, enforcing the
/// consistency rules. On an unparseable or self-contradictory reply the
/// critic is re-queried once (with a format reminder, so the retry is a
/// distinct request); contradictions that survive are repaired
/// deterministically rather than dropped.
pub fn evaluate_turn(
    utterance: &Utterance,
    instance: &TaskInstance,
    gateway: &dyn CompletionPort,
    decoding: &DecodingSettings,
    assets: &PromptAssets,
) -> Result<EvalRecord> {
    let base = CompletionRequest {
        system_text: assets.agent_turn_eval.clone(),
        user_text: turn_eval_user_text(instance, &utterance.text),
        temperature: decoding.eval_temperature,
        max_tokens: decoding.max_tokens,
        tag: CallTag::new(CallerKind::Critic)
            .role(utterance.role_id.clone())
            .round(utterance.round_index)
            .instance(instance.instance_id.clone()),
    };

    let first = parse_eval_output(&gateway.complete(&base)?);
    let parsed = match first {
        Ok(p) if p.is_consistent() => p,
        outcome => {
            let mut retry = base.clone();
            retry.user_text.push_str(FORMAT_REMINDER);
            match (parse_eval_output(&gateway.complete(&retry)?), outcome) {
                (Ok(p), _) => p.repaired(),
                (Err(_), Ok(p)) => p.repaired(),
                (Err(e), Err(_)) => return Err(e),
            }
        }
    };

    Ok(EvalRecord {
        instance_id: instance.instance_id.clone(),
        role_id: utterance.role_id.clone(),
        round_index: utterance.round_index,
        correct: parsed.correct,
        pattern: parsed.pattern,
        explanation: parsed.explanation,
        raw_score: parsed.raw_score,
        q: f64::from(parsed.raw_score) / 5.0,
    })
}

/// Scores every role's contribution to one round in a single judging call.
///
/// The judge reply carries one `role: value` line per role; bare integers
/// are on the 0–5 rubric scale and are normalized by 5, decimal values must
/// already lie in `[0, 1]`.
pub fn judge_round(
    transcript: &RoundTranscript,
    instance: &TaskInstance,
    gateway: &dyn CompletionPort,
    decoding: &DecodingSettings,
    assets: &PromptAssets,
) -> Result<PeerScores> {
    if transcript.utterances.is_empty() {
        return Err(Error::EmptyTranscript);
    }
    let base = CompletionRequest {
        system_text: assets.peer_judge.clone(),
        user_text: format!(
            "Question:\n{}\n\nOptions:\n{}\nRound {} contributions:\n\n{}",
            instance.question,
            instance.options.block(),
            transcript.round_index,
            wire::role_sections(&transcript.utterances),
        ),
        temperature: decoding.eval_temperature,
        max_tokens: decoding.max_tokens,
        tag: CallTag::new(CallerKind::Judge)
            .round(transcript.round_index)
            .instance(instance.instance_id.clone()),
    };

    let roles: Vec<&str> = transcript
        .utterances
        .iter()
        .map(|u| u.role_id.as_str())
        .collect();
    match parse_judge_output(&gateway.complete(&base)?, &roles) {
        Ok(scores) => Ok(PeerScores {
            round_index: transcript.round_index,
            scores,
        }),
        Err(_) => {
            let mut retry = base.clone();
            retry.user_text.push_str(FORMAT_REMINDER);
            let scores = parse_judge_output(&gateway.complete(&retry)?, &roles)?;
            Ok(PeerScores {
                round_index: transcript.round_index,
                scores,
            })
        }
    }
}

fn parse_judge_output(text: &str, roles: &[&str]) -> Result<BTreeMap<String, f64>> {
    let mut scores = BTreeMap::new();
    for line in text.lines() {
        let Some((name, value)) = line.split_once(':') else {
            continue;
        };
        let name = name.trim();
        if !roles.contains(&name) {
            continue;
        }
        let value = value.trim();
        let score = if value.contains('.') {
            let v: f64 = value
                .parse()
                .map_err(|_| Error::CriticParseFailure(format!("unreadable score {value:?}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::CriticParseFailure(format!(
                    "judge score {v} outside [0,1]"
                )));
            }
            v
        } else {
            let v: i64 = value
                .parse()
                .map_err(|_| Error::CriticParseFailure(format!("unreadable score {value:?}")))?;
            if !(0..=5).contains(&v) {
                return Err(Error::CriticParseFailure(format!(
                    "judge score {v} outside 0-5"
                )));
            }
            v as f64 / 5.0
        };
        scores.insert(name.to_string(), score);
    }
    for role in roles {
        if !scores.contains_key(*role) {
            return Err(Error::CriticParseFailure(format!(
                "judge reply missing role '{role}'"
            )));
        }
    }
    Ok(scores)
}

/// Binary aggregation check: extracts the state's answer and scores it 1.0
/// when it matches gold, 0.0 otherwise (including `Invalid`).
pub fn evaluate_aggregation(state: &SharedState, gold: OptionLabel) -> AggregationVerdict {
    let agg_answer = extract_answer(&state.text);
    AggregationVerdict {
        round_index: state.round_index,
        agg_answer,
        quality: if agg_answer == gold { 1.0 } else { 0.0 },
    }
}

/// Critic-scored aggregation check: one rubric call whose 0–5 score becomes
/// the quality. The answer extraction stays deterministic.
pub fn evaluate_aggregation_scored(
    state: &SharedState,
    instance: &TaskInstance,
    gateway: &dyn CompletionPort,
    decoding: &DecodingSettings,
    assets: &PromptAssets,
) -> Result<AggregationVerdict> {
    let request = CompletionRequest {
        system_text: assets.agent_turn_eval.clone(),
        user_text: turn_eval_user_text(instance, &state.text),
        temperature: decoding.eval_temperature,
        max_tokens: decoding.max_tokens,
        tag: CallTag::new(CallerKind::Critic)
            .round(state.round_index)
            .instance(instance.instance_id.clone()),
    };
    let parsed = parse_eval_output(&gateway.complete(&request)?)?;
    Ok(AggregationVerdict {
        round_index: state.round_index,
        agg_answer: extract_answer(&state.text),
        quality: f64::from(parsed.raw_score) / 5.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::OptionTexts;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn instance(gold: OptionLabel) -> TaskInstance {
        TaskInstance {
            instance_id: "q1".into(),
            question: "pick".into(),
            options: OptionTexts::new("one", "two", "three", "four"),
            gold,
            category: None,
        }
    }

    #[test]
    fn parses_a_well_formed_verdict() {
        let text = "Final answer correctness: correct\n\
                    Primary failure or risk pattern: NONE\n\
                    Brief explanation: Solid chain of reasoning.\n\
                    Score: 5";
        let parsed = parse_eval_output(text).unwrap();
        assert!(parsed.correct);
        assert_eq!(parsed.pattern, FailurePattern::None);
        assert_eq!(parsed.explanation, "Solid chain of reasoning.");
        assert_eq!(parsed.raw_score, 5);
    }

    #[test]
    fn parses_an_incorrect_verdict() {
        let text = "Final answer correctness: incorrect\n\
                    Primary failure or risk pattern: KNOWLEDGE_DEFICIT\n\
                    Brief explanation: Misremembered the key fact.\n\
                    Score: 1";
        let parsed = parse_eval_output(text).unwrap();
        assert!(!parsed.correct);
        assert_eq!(parsed.pattern, FailurePattern::KnowledgeDeficit);
        assert_eq!(parsed.raw_score, 1);
    }

    #[test]
    fn rejects_out_of_range_scores_and_invented_labels() {
        let high = "correctness: incorrect\npattern: KNOWLEDGE_DEFICIT\nScore: 7";
        assert!(matches!(
            parse_eval_output(high),
            Err(Error::CriticParseFailure(_))
        ));
        let invented =
            "correctness: incorrect\nPrimary failure or risk pattern: HALLUCINATION\nScore: 2";
        assert!(matches!(
            parse_eval_output(invented),
            Err(Error::CriticParseFailure(_))
        ));
    }

    #[test]
    fn missing_fields_fail() {
        assert!(parse_eval_output("Score: 3").is_err());
        assert!(parse_eval_output("correct\nNONE\nno score here").is_err());
    }

    struct Scripted {
        replies: Vec<String>,
        calls: AtomicU32,
    }

    impl Scripted {
        fn new(replies: &[&str]) -> Self {
            Scripted {
                replies: replies.iter().map(|s| s.to_string()).collect(),
                calls: AtomicU32::new(0),
            }
        }
    }

    impl CompletionPort for Scripted {
        fn complete(&self, _request: &CompletionRequest) -> Result<String> {
            let idx = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            Ok(self
                .replies
                .get(idx)
                .cloned()
                .unwrap_or_else(|| self.replies.last().cloned().unwrap_or_default()))
        }
    }

    #[test]
    fn consistency_violation_requeries_then_repairs() {
        let contradictory = "Final answer correctness: correct\n\
                             Primary failure or risk pattern: KNOWLEDGE_DEFICIT\n\
                             Brief explanation: odd\n\
                             Score: 4";
        let port = Scripted::new(&[contradictory, contradictory]);
        let utterance = Utterance {
            role_id: "planner".into(),
            round_index: 1,
            text: "my answer is B.".into(),
        };
        let record = evaluate_turn(
            &utterance,
            &instance(OptionLabel::B),
            &port,
            &DecodingSettings::default(),
            &PromptAssets::builtin(),
        )
        .unwrap();
        assert_eq!(port.calls.load(Ordering::SeqCst), 2);
        assert!(record.correct);
        assert_eq!(record.pattern, FailurePattern::None);
        assert_eq!(record.raw_score, 4);
        assert!((record.q - 0.8).abs() < 1e-12);
    }

    #[test]
    fn incorrect_with_none_repairs_to_ungrounded() {
        let contradictory = "Final answer correctness: incorrect\n\
                             Primary failure or risk pattern: NONE\n\
                             Score: 1";
        let port = Scripted::new(&[contradictory, contradictory]);
        let utterance = Utterance {
            role_id: "planner".into(),
            round_index: 1,
            text: "my answer is C.".into(),
        };
        let record = evaluate_turn(
            &utterance,
            &instance(OptionLabel::B),
            &port,
            &DecodingSettings::default(),
            &PromptAssets::builtin(),
        )
        .unwrap();
        assert!(!record.correct);
        assert_eq!(record.pattern, FailurePattern::RandomOrUngrounded);
    }

    #[test]
    fn parse_failure_errors_after_one_requery() {
        let port = Scripted::new(&["garbage", "still garbage"]);
        let utterance = Utterance {
            role_id: "planner".into(),
            round_index: 1,
            text: "my answer is A.".into(),
        };
        let err = evaluate_turn(
            &utterance,
            &instance(OptionLabel::A),
            &port,
            &DecodingSettings::default(),
            &PromptAssets::builtin(),
        )
        .unwrap_err();
        assert_eq!(port.calls.load(Ordering::SeqCst), 2);
        assert!(matches!(err, Error::CriticParseFailure(_)));
    }

    #[test]
    fn judge_normalizes_integer_scores() {
        let scores = parse_judge_output(
            "planner: 4\nsolver: 0\nskeptic: 0.25",
            &["planner", "solver", "skeptic"],
        )
        .unwrap();
        assert!((scores["planner"] - 0.8).abs() < 1e-12);
        assert!((scores["solver"]).abs() < 1e-12);
        assert!((scores["skeptic"] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn judge_requires_every_role() {
        assert!(parse_judge_output("planner: 4", &["planner", "solver"]).is_err());
        assert!(parse_judge_output("planner: 9\nsolver: 1", &["planner", "solver"]).is_err());
    }

    #[test]
    fn judging_a_round_is_one_call_not_one_per_pair() {
        let port = Scripted::new(&["planner: 5\nsolver: 2\nskeptic: 0"]);
        let transcript = RoundTranscript {
            round_index: 2,
            utterances: ["planner", "solver", "skeptic"]
                .iter()
                .map(|role| Utterance {
                    role_id: role.to_string(),
                    round_index: 2,
                    text: format!("as {role}, my answer is B."),
                })
                .collect(),
        };
        let peers = judge_round(
            &transcript,
            &instance(OptionLabel::B),
            &port,
            &DecodingSettings::default(),
            &PromptAssets::builtin(),
        )
        .unwrap();
        assert_eq!(port.calls.load(Ordering::SeqCst), 1);
        assert_eq!(peers.scores.len(), 3);
        assert!(peers.scores.values().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn aggregation_verdicts() {
        let state = SharedState {
            round_index: 2,
            text: "round consensus: C".into(),
        };
        let verdict = evaluate_aggregation(&state, OptionLabel::C);
        assert_eq!(verdict.agg_answer, OptionLabel::C);
        assert!((verdict.quality - 1.0).abs() < 1e-12);

        let silent = SharedState {
            round_index: 2,
            text: "nothing settled".into(),
        };
        let verdict = evaluate_aggregation(&silent, OptionLabel::B);
        assert_eq!(verdict.agg_answer, OptionLabel::Invalid);
        assert!((verdict.quality).abs() < 1e-12);
    }

    #[test]
    fn scored_aggregation_normalizes_by_five() {
        let reply = "Final answer correctness: incorrect\n\
                     Primary failure or risk pattern: INCOMPLETE_REASONING\n\
                     Score: 3";
        let port = Scripted::new(&[reply]);
        let state = SharedState {
            round_index: 1,
            text: "leaning D".into(),
        };
        let verdict = evaluate_aggregation_scored(
            &state,
            &instance(OptionLabel::B),
            &port,
            &DecodingSettings::default(),
            &PromptAssets::builtin(),
        )
        .unwrap();
        assert!((verdict.quality - 0.6).abs() < 1e-12);
    }
}
