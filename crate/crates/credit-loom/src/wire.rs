//! Shared text layouts for messages crossing the completion channel.
//!
//! Builders live next to their parsers so the orchestrator, the critic
//! suite, and the synthetic backend agree on one format.

use crate::answer::OptionLabel;
use crate::protocol::Utterance;

/// Opens a verbatim block whose content a critic or parser must treat as data.
pub(crate) const BLOCK_OPEN: &str = "<<<";
/// Closes a verbatim block.
pub(crate) const BLOCK_CLOSE: &str = ">>>";

pub(crate) const AGENT_ANSWER_HEADER: &str = "Agent's final answer:";
pub(crate) const FINAL_STATE_HEADER: &str = "Final shared state:";

const ROLE_SECTION_PREFIX: &str = "--- role: ";
const ROLE_SECTION_SUFFIX: &str = " ---";

/// Phrase the synthetic aggregator uses to name the round's answer; the
/// synthetic role agents look for it when anchoring on the prior state.
pub(crate) const STATE_ANSWER_PHRASE: &str = "the leading answer is ";

/// Renders one section per utterance, delimited so the set can be parsed back.
pub(crate) fn role_sections(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for u in utterances {
        out.push_str(ROLE_SECTION_PREFIX);
        out.push_str(&u.role_id);
        out.push_str(ROLE_SECTION_SUFFIX);
        out.push('\n');
        out.push_str(&u.text);
        out.push_str("\n\n");
    }
    out
}

/// Inverse of [`role_sections`]: returns `(role_id, body)` pairs in order.
pub(crate) fn parse_role_sections(text: &str) -> Vec<(String, String)> {
    let mut sections: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(ROLE_SECTION_PREFIX) {
            if let Some(role) = rest.strip_suffix(ROLE_SECTION_SUFFIX) {
                sections.push((role.to_string(), String::new()));
                continue;
            }
        }
        if let Some((_, body)) = sections.last_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    for (_, body) in &mut sections {
        *body = body.trim().to_string();
    }
    sections
}

/// Content between the first `<<<` line and the next `>>>` line.
pub(crate) fn delimited_block(text: &str) -> Option<String> {
    let mut inside = false;
    let mut body = String::new();
    for line in text.lines() {
        if !inside {
            if line.trim() == BLOCK_OPEN {
                inside = true;
            }
            continue;
        }
        if line.trim() == BLOCK_CLOSE {
            return Some(body.trim_end().to_string());
        }
        body.push_str(line);
        body.push('\n');
    }
    None
}

/// The answer named by a synthetic shared-state sentence, if any.
pub(crate) fn state_answer(text: &str) -> Option<OptionLabel> {
    let at = text.rfind(STATE_ANSWER_PHRASE)?;
    let rest = &text[at + STATE_ANSWER_PHRASE.len()..];
    match rest.as_bytes().first() {
        Some(b'A') => Some(OptionLabel::A),
        Some(b'B') => Some(OptionLabel::B),
        Some(b'C') => Some(OptionLabel::C),
        Some(b'D') => Some(OptionLabel::D),
        _ => None,
    }
}
