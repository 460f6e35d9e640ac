//! The multi-agent, multi-round interaction engine.
//!
//! A debate runs a fixed set of roles for a fixed number of rounds. Each
//! round, every role answers from the task and the previous round's shared
//! state; an aggregation step then compresses the round's utterances into
//! the next shared state. Rounds are strictly sequential; the only channel
//! between rounds is the shared state, and each role reuses one prompt
//! template for every round.
//!
//! Role templates may reference `{question}`, `{options}`, and `{state}`;
//! composition is a pure substitution of those slots.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::answer::{extract_answer, score_exact, OptionLabel};
use crate::datastore::TaskInstance;
use crate::error::{Error, Result};
use crate::gateway::{CallTag, CallerKind, CompletionPort, CompletionRequest};
use crate::wire;

/// Sentinel text of the fixed initial shared state.
pub const INITIAL_STATE_TEXT: &str = "(no prior state)";

const TASK_NUDGE: &str =
    "Give your reasoning and end with a single line stating your final answer letter.";

/// Fixed interaction structure: which roles exist and how many rounds run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemTopology {
    role_ids: Vec<String>,
    num_rounds: u32,
}

impl SystemTopology {
    /// Validates that roles are non-empty and distinct and that at least one
    /// round runs. The given role order is canonical for the whole run.
    pub fn new(role_ids: Vec<String>, num_rounds: u32) -> Result<Self> {
        if role_ids.is_empty() {
            return Err(Error::Config("topology needs at least one role".into()));
        }
        if num_rounds == 0 {
            return Err(Error::Config("topology needs at least one round".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &role_ids {
            if id.trim().is_empty() {
                return Err(Error::Config("role ids must be non-empty".into()));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::Config(format!("duplicate role id '{id}'")));
            }
        }
        Ok(SystemTopology {
            role_ids,
            num_rounds,
        })
    }

    pub fn role_ids(&self) -> &[String] {
        &self.role_ids
    }

    pub fn num_roles(&self) -> usize {
        self.role_ids.len()
    }

    pub fn num_rounds(&self) -> u32 {
        self.num_rounds
    }

    /// Round indices `1..=R`.
    pub fn rounds(&self) -> impl Iterator<Item = u32> {
        1..=self.num_rounds
    }
}

/// A role's shared prompt template: one text used at every round, versioned
/// along its rewrite lineage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolePrompt {
    pub role_id: String,
    pub text: String,
    pub version: u32,
    pub parent_version: Option<u32>,
}

impl RolePrompt {
    pub fn initial(role_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Config("role prompt text must be non-empty".into()));
        }
        Ok(RolePrompt {
            role_id: role_id.into(),
            text,
            version: 0,
            parent_version: None,
        })
    }

    /// Next version in the lineage, carrying `self.version` as parent.
    pub fn evolved(&self, text: impl Into<String>) -> RolePrompt {
        RolePrompt {
            role_id: self.role_id.clone(),
            text: text.into(),
            version: self.version + 1,
            parent_version: Some(self.version),
        }
    }

    /// A generic starting template for `role_id` with all three slots.
    pub fn default_for(role_id: &str) -> RolePrompt {
        let text = format!(
            "You are {role_id}, one voice in a small panel solving a multiple-choice \
             question. Reason independently from your role's perspective, weigh every \
             option, and commit to exactly one letter.\n\nQuestion: {{question}}\n\
             Options:\n{{options}}\nPrior shared state: {{state}}\n\nEnd with a single \
             line of the form 'My answer is X.' where X is one of A, B, C, D."
        );
        RolePrompt {
            role_id: role_id.to_string(),
            text,
            version: 0,
            parent_version: None,
        }
    }
}

/// The aggregation instruction for one round, versioned like a role prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatorPrompt {
    pub round_index: u32,
    pub text: String,
    pub version: u32,
    pub parent_version: Option<u32>,
}

impl AggregatorPrompt {
    pub fn initial(round_index: u32, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Config(
                "aggregator prompt text must be non-empty".into(),
            ));
        }
        Ok(AggregatorPrompt {
            round_index,
            text,
            version: 0,
            parent_version: None,
        })
    }

    pub fn evolved(&self, text: impl Into<String>) -> AggregatorPrompt {
        AggregatorPrompt {
            round_index: self.round_index,
            text: text.into(),
            version: self.version + 1,
            parent_version: Some(self.version),
        }
    }

    pub fn default_for(round_index: u32) -> AggregatorPrompt {
        AggregatorPrompt {
            round_index,
            text: format!(
                "You are the aggregation module for debate round {round_index}. Read every \
                 contribution and the prior shared state, reconcile agreements and \
                 conflicts, and produce a concise shared summary that ends by naming the \
                 single leading answer letter."
            ),
            version: 0,
            parent_version: None,
        }
    }
}

/// The two optimization variable blocks: one prompt per role, one aggregator
/// prompt per round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PromptSet {
    pub roles: BTreeMap<String, RolePrompt>,
    pub aggregators: BTreeMap<u32, AggregatorPrompt>,
}

impl PromptSet {
    /// Generic starting prompts for every role and round of `topology`.
    pub fn defaults(topology: &SystemTopology) -> PromptSet {
        PromptSet {
            roles: topology
                .role_ids()
                .iter()
                .map(|r| (r.clone(), RolePrompt::default_for(r)))
                .collect(),
            aggregators: topology
                .rounds()
                .map(|t| (t, AggregatorPrompt::default_for(t)))
                .collect(),
        }
    }

    /// Checks one prompt per role and one aggregator per round.
    pub fn validate_for(&self, topology: &SystemTopology) -> Result<()> {
        for role in topology.role_ids() {
            if !self.roles.contains_key(role) {
                return Err(Error::Config(format!("missing prompt for role '{role}'")));
            }
        }
        for t in topology.rounds() {
            if !self.aggregators.contains_key(&t) {
                return Err(Error::Config(format!(
                    "missing aggregator prompt for round {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn role(&self, role_id: &str) -> Result<&RolePrompt> {
        self.roles
            .get(role_id)
            .ok_or_else(|| Error::Config(format!("missing prompt for role '{role_id}'")))
    }

    pub fn aggregator(&self, round: u32) -> Result<&AggregatorPrompt> {
        self.aggregators
            .get(&round)
            .ok_or_else(|| Error::Config(format!("missing aggregator prompt for round {round}")))
    }

    /// Current version of every prompt, for logs and manifests.
    pub fn versions(&self) -> crate::datastore::VersionStamp {
        crate::datastore::VersionStamp {
            roles: self
                .roles
                .iter()
                .map(|(k, v)| (k.clone(), v.version))
                .collect(),
            aggregators: self
                .aggregators
                .iter()
                .map(|(k, v)| (*k, v.version))
                .collect(),
        }
    }
}

/// The shared state after one round; index 0 is the fixed initial state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedState {
    pub round_index: u32,
    pub text: String,
}

impl SharedState {
    /// The fixed initial state `S_0`.
    pub fn initial() -> SharedState {
        SharedState {
            round_index: 0,
            text: INITIAL_STATE_TEXT.to_string(),
        }
    }
}

/// One role's output at one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role_id: String,
    pub round_index: u32,
    pub text: String,
}

/// All utterances of one round, in topology order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub round_index: u32,
    pub utterances: Vec<Utterance>,
}

/// One instance's complete rollout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub instance_id: String,
    pub transcripts: Vec<RoundTranscript>,
    pub states: Vec<SharedState>,
    pub final_answer: OptionLabel,
    /// 1 iff `final_answer` equals the gold label.
    pub score: u8,
}

impl Trajectory {
    /// The state fed into round `t` (so `S_{t-1}`; `t = 1` gets `S_0`).
    pub fn state_before(&self, t: u32) -> SharedState {
        if t <= 1 {
            SharedState::initial()
        } else {
            self.states[(t - 2) as usize].clone()
        }
    }
}

/// How the terminal decision is made from the final shared state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    /// Deterministic answer extraction from the final state.
    #[default]
    Extract,
    /// One extra completion asked to name the supported option.
    Llm,
}

/// Decoding parameters stamped onto requests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingSettings {
    /// Temperature for role turns (diverse debate).
    pub role_temperature: f64,
    /// Temperature for critics, judges, aggregators, and the optimizer
    /// (deterministic evaluation).
    pub eval_temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodingSettings {
    fn default() -> Self {
        DecodingSettings {
            role_temperature: 0.7,
            eval_temperature: 0.0,
            max_tokens: 512,
        }
    }
}

/// Substitutes `{question}`, `{options}`, and `{state}` in the role template.
/// Pure function of its inputs; round 1 receives the fixed initial state.
pub fn compose_prompt(
    role: &RolePrompt,
    instance: &TaskInstance,
    prev_state: &SharedState,
) -> Result<String> {
    let mut out = String::with_capacity(role.text.len() + 256);
    let bytes = role.text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(close) = role.text[i + 1..].find('}') {
                let name = &role.text[i + 1..i + 1 + close];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    match name {
                        "question" => out.push_str(&instance.question),
                        "options" => out.push_str(&instance.options.block()),
                        "state" => out.push_str(&prev_state.text),
                        other => {
                            return Err(Error::UnknownPlaceholder {
                                name: other.to_string(),
                            })
                        }
                    }
                    i += name.len() + 2;
                    continue;
                }
            }
        }
        let ch = role.text[i..].chars().next().expect("in bounds");
        out.push(ch);
        i += ch.len_utf8();
    }
    Ok(out)
}

/// Runs round `t`: one completion per role, all conditioned on the same
/// `prev_state`. Roles execute in topology order.
pub fn run_round(
    topology: &SystemTopology,
    instance: &TaskInstance,
    prev_state: &SharedState,
    t: u32,
    prompts: &PromptSet,
    gateway: &dyn CompletionPort,
    decoding: &DecodingSettings,
) -> Result<RoundTranscript> {
    let mut utterances = Vec::with_capacity(topology.num_roles());
    for role_id in topology.role_ids() {
        let role = prompts.role(role_id)?;
        let composed = compose_prompt(role, instance, prev_state)?;
        let request = CompletionRequest {
            system_text: composed,
            user_text: TASK_NUDGE.to_string(),
            temperature: decoding.role_temperature,
            max_tokens: decoding.max_tokens,
            tag: CallTag::new(CallerKind::Role)
                .role(role_id.clone())
                .round(t)
                .instance(instance.instance_id.clone()),
        };
        let text = gateway
            .complete(&request)
            .map_err(|e| Error::RoundIncomplete {
                role_id: role_id.clone(),
                round: t,
                source: Box::new(e),
            })?;
        utterances.push(Utterance {
            role_id: role_id.clone(),
            round_index: t,
            text,
        });
    }
    Ok(RoundTranscript {
        round_index: t,
        utterances,
    })
}

/// Compresses one round's utterances into the next shared state. The
/// aggregator prompt receives every utterance verbatim plus the prior state.
pub fn aggregate(
    instance: &TaskInstance,
    transcript: &RoundTranscript,
    psi: &AggregatorPrompt,
    prev_state: &SharedState,
    gateway: &dyn CompletionPort,
    decoding: &DecodingSettings,
) -> Result<SharedState> {
    if transcript.utterances.is_empty() {
        return Err(Error::EmptyTranscript);
    }
    if psi.round_index != transcript.round_index {
        return Err(Error::RoundMismatch {
            prompt_round: psi.round_index,
            transcript_round: transcript.round_index,
        });
    }
    let user_text = format!(
        "Prior shared state:\n{}\n\nRound {} contributions:\n\n{}",
        prev_state.text,
        transcript.round_index,
        wire::role_sections(&transcript.utterances)
    );
    let request = CompletionRequest {
        system_text: psi.text.clone(),
        user_text,
        temperature: decoding.eval_temperature,
        max_tokens: decoding.max_tokens,
        tag: CallTag::new(CallerKind::Aggregator)
            .round(transcript.round_index)
            .instance(instance.instance_id.clone()),
    };
    let text = gateway.complete(&request).map_err(|e| {
        if e.is_budget_exhaustion() {
            e
        } else {
            Error::CompletionFailure(e.to_string())
        }
    })?;
    Ok(SharedState {
        round_index: transcript.round_index,
        text,
    })
}

/// Terminal decision from the final shared state. The default mode extracts
/// the first standalone option token; the LLM mode spends one extra
/// completion and extracts from its reply. Absence of a valid option yields
/// `Invalid`, never an error.
pub fn finalize(
    instance: &TaskInstance,
    final_state: &SharedState,
    mode: DecisionMode,
    terminal_prompt: &str,
    gateway: &dyn CompletionPort,
    decoding: &DecodingSettings,
) -> Result<OptionLabel> {
    match mode {
        DecisionMode::Extract => Ok(extract_answer(&final_state.text)),
        DecisionMode::Llm => {
            let user_text = format!(
                "Question:\n{}\n\nOptions:\n{}\n\n{}\n{}\n{}\n{}",
                instance.question,
                instance.options.block(),
                wire::FINAL_STATE_HEADER,
                wire::BLOCK_OPEN,
                final_state.text,
                wire::BLOCK_CLOSE,
            );
            let request = CompletionRequest {
                system_text: terminal_prompt.to_string(),
                user_text,
                temperature: decoding.eval_temperature,
                max_tokens: decoding.max_tokens,
                tag: CallTag::new(CallerKind::Critic)
                    .round(final_state.round_index)
                    .instance(instance.instance_id.clone()),
            };
            let text = gateway.complete(&request).map_err(|e| {
                if e.is_budget_exhaustion() {
                    e
                } else {
                    Error::CompletionFailure(e.to_string())
                }
            })?;
            Ok(extract_answer(&text))
        }
    }
}

/// Rolls out all rounds for one instance: each round's state feeds the next,
/// and the score is the exact match of the terminal answer against gold.
pub fn run_trajectory(
    instance: &TaskInstance,
    topology: &SystemTopology,
    prompts: &PromptSet,
    gateway: &dyn CompletionPort,
    decoding: &DecodingSettings,
    decision: DecisionMode,
    terminal_prompt: &str,
) -> Result<Trajectory> {
    prompts.validate_for(topology)?;
    let mut transcripts = Vec::with_capacity(topology.num_rounds() as usize);
    let mut states: Vec<SharedState> = Vec::with_capacity(topology.num_rounds() as usize);
    let mut prev = SharedState::initial();
    for t in topology.rounds() {
        let wrap = |e: Error| Error::TrajectoryAborted {
            instance_id: instance.instance_id.clone(),
            round: t,
            source: Box::new(e),
        };
        let transcript =
            run_round(topology, instance, &prev, t, prompts, gateway, decoding).map_err(wrap)?;
        let state = aggregate(
            instance,
            &transcript,
            prompts.aggregator(t)?,
            &prev,
            gateway,
            decoding,
        )
        .map_err(wrap)?;
        transcripts.push(transcript);
        prev = state.clone();
        states.push(state);
    }
    let final_answer = finalize(
        instance,
        states.last().expect("at least one round"),
        decision,
        terminal_prompt,
        gateway,
        decoding,
    )?;
    let score = score_exact(final_answer, instance.gold)?;
    Ok(Trajectory {
        instance_id: instance.instance_id.clone(),
        transcripts,
        states,
        final_answer,
        score,
    })
}
