//! Prompt assets used by the critic suite and the optimizer.
//!
//! The texts ship embedded in the binary and can be overridden by a
//! directory containing files with the same names. SHA-256 hashes of the
//! texts actually in force are recorded in the run manifest so a run is
//! attributable to exact prompt content.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const AGENT_TURN_EVAL: &str = include_str!("../assets/prompts/agent_turn_eval.txt");
pub const AGENT_DIAGNOSIS: &str = include_str!("../assets/prompts/agent_diagnosis.txt");
pub const ROLE_PROMPT_OPTIMIZE: &str = include_str!("../assets/prompts/role_prompt_optimize.txt");
pub const PEER_JUDGE: &str = include_str!("../assets/prompts/peer_judge.txt");
pub const AGGREGATOR_OPTIMIZE: &str = include_str!("../assets/prompts/aggregator_optimize.txt");
pub const TERMINAL_DECISION: &str = include_str!("../assets/prompts/terminal_decision.txt");

const FILE_NAMES: [(&str, &str); 6] = [
    ("agent_turn_eval", "agent_turn_eval.txt"),
    ("agent_diagnosis", "agent_diagnosis.txt"),
    ("role_prompt_optimize", "role_prompt_optimize.txt"),
    ("peer_judge", "peer_judge.txt"),
    ("aggregator_optimize", "aggregator_optimize.txt"),
    ("terminal_decision", "terminal_decision.txt"),
];

/// The set of prompt assets in force for one run.
#[derive(Debug, Clone)]
pub struct PromptAssets {
    pub agent_turn_eval: String,
    pub agent_diagnosis: String,
    pub role_prompt_optimize: String,
    pub peer_judge: String,
    pub aggregator_optimize: String,
    pub terminal_decision: String,
}

impl Default for PromptAssets {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptAssets {
    /// The embedded asset texts.
    pub fn builtin() -> Self {
        PromptAssets {
            agent_turn_eval: AGENT_TURN_EVAL.to_string(),
            agent_diagnosis: AGENT_DIAGNOSIS.to_string(),
            role_prompt_optimize: ROLE_PROMPT_OPTIMIZE.to_string(),
            peer_judge: PEER_JUDGE.to_string(),
            aggregator_optimize: AGGREGATOR_OPTIMIZE.to_string(),
            terminal_decision: TERMINAL_DECISION.to_string(),
        }
    }

    /// Loads assets from `dir`, requiring every asset file to be present.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |file: &str| -> Result<String> {
            let path = dir.join(file);
            std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))
        };
        Ok(PromptAssets {
            agent_turn_eval: read("agent_turn_eval.txt")?,
            agent_diagnosis: read("agent_diagnosis.txt")?,
            role_prompt_optimize: read("role_prompt_optimize.txt")?,
            peer_judge: read("peer_judge.txt")?,
            aggregator_optimize: read("aggregator_optimize.txt")?,
            terminal_decision: read("terminal_decision.txt")?,
        })
    }

    fn text(&self, name: &str) -> &str {
        match name {
            "agent_turn_eval" => &self.agent_turn_eval,
            "agent_diagnosis" => &self.agent_diagnosis,
            "role_prompt_optimize" => &self.role_prompt_optimize,
            "peer_judge" => &self.peer_judge,
            "aggregator_optimize" => &self.aggregator_optimize,
            "terminal_decision" => &self.terminal_decision,
            other => unreachable!("unknown asset {other}"),
        }
    }

    /// SHA-256 hex digests of every asset, keyed by asset name.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        FILE_NAMES
            .iter()
            .map(|(name, _)| ((*name).to_string(), sha256_hex(self.text(name))))
            .collect()
    }
}

/// Hex-encoded SHA-256 of `text`.
pub fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
