//! Option labels and the deterministic answer-extraction rule.
//!
//! All multiple-choice predictions funnel through [`extract_answer`]: the
//! first occurrence of a standalone `A`/`B`/`C`/`D` wins, where "standalone"
//! means both neighbors are non-alphanumeric (string boundaries count as
//! non-alphanumeric, and "alphanumeric" means ASCII `[0-9A-Za-z]`). Text with
//! no standalone option token maps to [`OptionLabel::Invalid`], which always
//! scores 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the four answer options, or `Invalid` when no option was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OptionLabel {
    A,
    B,
    C,
    D,
    Invalid,
}

impl OptionLabel {
    /// The four valid labels in alphabetical order.
    pub const VALID: [OptionLabel; 4] = [
        OptionLabel::A,
        OptionLabel::B,
        OptionLabel::C,
        OptionLabel::D,
    ];

    pub fn is_valid(self) -> bool {
        self != OptionLabel::Invalid
    }

    pub fn as_char(self) -> Option<char> {
        match self {
            OptionLabel::A => Some('A'),
            OptionLabel::B => Some('B'),
            OptionLabel::C => Some('C'),
            OptionLabel::D => Some('D'),
            OptionLabel::Invalid => None,
        }
    }

    fn from_byte(b: u8) -> Option<OptionLabel> {
        match b {
            b'A' => Some(OptionLabel::A),
            b'B' => Some(OptionLabel::B),
            b'C' => Some(OptionLabel::C),
            b'D' => Some(OptionLabel::D),
            _ => None,
        }
    }
}

impl std::fmt::Display for OptionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.as_char() {
            Some(c) => write!(f, "{c}"),
            None => write!(f, "Invalid"),
        }
    }
}

impl std::str::FromStr for OptionLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "A" => Ok(OptionLabel::A),
            "B" => Ok(OptionLabel::B),
            "C" => Ok(OptionLabel::C),
            "D" => Ok(OptionLabel::D),
            "Invalid" => Ok(OptionLabel::Invalid),
            other => Err(format!("not an option label: {other:?}")),
        }
    }
}

/// Returns the first standalone `A`/`B`/`C`/`D` in `text`, or `Invalid`.
///
/// A byte is standalone when the bytes on both sides are absent or not ASCII
/// alphanumeric. The scan is left-to-right and total: it never fails.
pub fn extract_answer(text: &str) -> OptionLabel {
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        let Some(label) = OptionLabel::from_byte(b) else {
            continue;
        };
        let left_ok = i == 0 || !bytes[i - 1].is_ascii_alphanumeric();
        let right_ok = i + 1 == bytes.len() || !bytes[i + 1].is_ascii_alphanumeric();
        if left_ok && right_ok {
            return label;
        }
    }
    OptionLabel::Invalid
}

/// Exact-match score: 1 iff `pred == gold`. `Invalid` predictions score 0.
///
/// An `Invalid` gold label marks a malformed dataset row and is an error.
pub fn score_exact(pred: OptionLabel, gold: OptionLabel) -> Result<u8> {
    if gold == OptionLabel::Invalid {
        return Err(Error::GoldInvalid);
    }
    Ok(u8::from(pred == gold))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_standalone_token_wins() {
        assert_eq!(extract_answer("The answer is B."), OptionLabel::B);
        assert_eq!(
            extract_answer("Both A and C tempt me, but C is right"),
            OptionLabel::A
        );
    }

    #[test]
    fn embedded_letters_are_not_standalone() {
        assert_eq!(
            extract_answer("ABCD are the options; answer: D"),
            OptionLabel::D
        );
        assert_eq!(extract_answer("CAB drivers"), OptionLabel::Invalid);
    }

    #[test]
    fn no_token_is_invalid() {
        assert_eq!(extract_answer("no letter here"), OptionLabel::Invalid);
        assert_eq!(extract_answer(""), OptionLabel::Invalid);
    }

    #[test]
    fn boundaries_count_as_non_alphanumeric() {
        assert_eq!(extract_answer("A"), OptionLabel::A);
        assert_eq!(extract_answer("(C)"), OptionLabel::C);
        assert_eq!(extract_answer("…B…"), OptionLabel::B);
    }

    #[test]
    fn lowercase_does_not_match() {
        assert_eq!(extract_answer("a b c d"), OptionLabel::Invalid);
    }

    #[test]
    fn scoring() {
        assert_eq!(score_exact(OptionLabel::B, OptionLabel::B).unwrap(), 1);
        assert_eq!(score_exact(OptionLabel::C, OptionLabel::B).unwrap(), 0);
        assert_eq!(
            score_exact(OptionLabel::Invalid, OptionLabel::B).unwrap(),
            0
        );
        assert!(matches!(
            score_exact(OptionLabel::A, OptionLabel::Invalid),
            Err(Error::GoldInvalid)
        ));
    }
}
