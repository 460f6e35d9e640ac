//! Seeded synthetic world: a scripted completion backend with planted
//! per-role competence and per-round aggregator reliability.
//!
//! The world answers every caller kind with plausible, parseable text whose
//! behavior is a pure function of the profile, the world seed, and the
//! request fingerprint. That makes whole-pipeline runs deterministic and
//! gives credit-recovery tests a ground truth: a role with low competence
//! really is the weak link, a round with low reliability really does lose
//! correct answers in aggregation.
//!
//! Behavior by caller:
//! - **Role**: emits the gold answer with the role's competence, otherwise a
//!   uniformly random wrong option. If the prior shared state already names
//!   the gold answer, the role anchors on it with probability `anchor`.
//! - **Aggregator**: a reliable draw reports the majority answer over the
//!   round's utterances (ties to the alphabetically smallest); an unreliable
//!   draw *loses* correct contributions, reporting the majority over wrong
//!   answers only (or a random wrong option when every agent was right).
//! - **Critic / Judge**: grade against the planted gold label; judge scores
//!   are perturbed by `judge_noise`.
//! - **Optimizer**: returns a canned rewrite prefixed with
//!   [`OPTIMIZED_MARKER`]; an optional [`UpliftRule`] makes prompts that
//!   carry the marker behave with improved competence or reliability.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::answer::{extract_answer, OptionLabel};
use crate::assets;
use crate::critic::FailurePattern;
use crate::datastore::{OptionTexts, TaskInstance};
use crate::error::{Error, Result};
use crate::wire;

use super::{CallerKind, CompletionRequest};

/// Marker the synthetic optimizer prepends to every rewrite. Prompts that
/// contain it are treated as "optimized" by an [`UpliftRule`].
pub const OPTIMIZED_MARKER: &str = "[refined]";

/// Planted behavior parameters. Probabilities are in `[0, 1]`; together with
/// the seed they fully determine synthetic behavior.
#[derive(Debug, Clone)]
pub struct SyntheticProfile {
    /// Per-role probability of producing the gold answer.
    pub role_competence: BTreeMap<String, f64>,
    /// Per-round probability of aggregating faithfully.
    pub aggregator_reliability: BTreeMap<u32, f64>,
    /// Half-width of the uniform perturbation applied to judge scores.
    pub judge_noise: f64,
    pub seed: u64,
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<()> {
        for (role, p) in &self.role_competence {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::RangeViolation(format!(
                    "competence for role '{role}' is {p}"
                )));
            }
        }
        for (round, p) in &self.aggregator_reliability {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::RangeViolation(format!(
                    "reliability for round {round} is {p}"
                )));
            }
        }
        if self.judge_noise < 0.0 {
            return Err(Error::RangeViolation(format!(
                "judge_noise is {}",
                self.judge_noise
            )));
        }
        Ok(())
    }
}

/// Competence/reliability overrides that apply to prompts carrying
/// [`OPTIMIZED_MARKER`]; this scripts the effect of a successful rewrite.
#[derive(Debug, Clone, Default)]
pub struct UpliftRule {
    pub role_competence: BTreeMap<String, f64>,
    pub aggregator_reliability: BTreeMap<u32, f64>,
}

pub struct SyntheticWorld {
    profile: SyntheticProfile,
    gold: BTreeMap<String, OptionLabel>,
    /// Probability that a role adopts a correct answer already named by the
    /// prior shared state instead of solving fresh.
    anchor: f64,
    uplift: Option<UpliftRule>,
}

impl SyntheticWorld {
    /// World over `profile` with the given instance → gold-label map.
    pub fn new(profile: SyntheticProfile, gold: BTreeMap<String, OptionLabel>) -> Self {
        SyntheticWorld {
            profile,
            gold,
            anchor: 0.5,
            uplift: None,
        }
    }

    pub fn for_instances(profile: SyntheticProfile, instances: &[TaskInstance]) -> Self {
        let gold = instances
            .iter()
            .map(|i| (i.instance_id.clone(), i.gold))
            .collect();
        SyntheticWorld::new(profile, gold)
    }

    pub fn with_anchor(mut self, anchor: f64) -> Self {
        self.anchor = anchor.clamp(0.0, 1.0);
        self
    }

    pub fn with_uplift(mut self, uplift: UpliftRule) -> Self {
        self.uplift = Some(uplift);
        self
    }

    pub fn profile(&self) -> &SyntheticProfile {
        &self.profile
    }

    fn rng_for(&self, fingerprint: &str) -> ChaCha8Rng {
        let head = u64::from_str_radix(&fingerprint[..16], 16).expect("hex fingerprint");
        ChaCha8Rng::seed_from_u64(self.profile.seed ^ head)
    }

    fn gold_for(&self, request: &CompletionRequest) -> Result<OptionLabel> {
        let id = request.tag.instance_id.as_deref().unwrap_or_default();
        self.gold.get(id).copied().ok_or_else(|| {
            Error::CompletionFailure(format!("synthetic world has no gold label for '{id}'"))
        })
    }

    fn competence(&self, role_id: &str, prompt_text: &str) -> Result<f64> {
        let base = *self
            .profile
            .role_competence
            .get(role_id)
            .ok_or_else(|| Error::UnknownRole(role_id.to_string()))?;
        if prompt_text.contains(OPTIMIZED_MARKER) {
            if let Some(rule) = &self.uplift {
                if let Some(&lifted) = rule.role_competence.get(role_id) {
                    return Ok(lifted);
                }
            }
        }
        Ok(base)
    }

    fn reliability(&self, round: u32, prompt_text: &str) -> f64 {
        let base = self
            .profile
            .aggregator_reliability
            .get(&round)
            .copied()
            .unwrap_or(1.0);
        if prompt_text.contains(OPTIMIZED_MARKER) {
            if let Some(rule) = &self.uplift {
                if let Some(&lifted) = rule.aggregator_reliability.get(&round) {
                    return lifted;
                }
            }
        }
        base
    }

    /// Serves one request. Pure in (world, request): repeated calls with an
    /// identical request return identical text.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String> {
        self.complete_keyed(request, &request.fingerprint())
    }

    /// Like [`complete`](Self::complete) with the fingerprint already
    /// computed (the gateway has it for cache lookup anyway).
    pub(crate) fn complete_keyed(
        &self,
        request: &CompletionRequest,
        fingerprint: &str,
    ) -> Result<String> {
        let mut rng = self.rng_for(fingerprint);
        match request.tag.caller {
            CallerKind::Role => self.role_turn(request, &mut rng),
            CallerKind::Aggregator => self.aggregate(request, &mut rng),
            CallerKind::Critic => self.critic(request, &mut rng),
            CallerKind::Judge => self.judge(request, &mut rng),
            CallerKind::Optimizer => Ok(self.optimizer(request)),
        }
    }

    fn role_turn(&self, request: &CompletionRequest, rng: &mut ChaCha8Rng) -> Result<String> {
        let role_id = request.tag.role_id.clone().unwrap_or_default();
        let round = request.tag.round.unwrap_or(1);
        let gold = self.gold_for(request)?;
        let competence = self.competence(&role_id, &request.system_text)?;
        // Anchoring: a correct prior state raises the effective competence.
        let effective = match wire::state_answer(&request.system_text) {
            Some(named) if named == gold => competence + self.anchor * (1.0 - competence),
            _ => competence,
        };
        let label = if rng.gen_bool(effective) {
            gold
        } else {
            wrong_label(gold, rng)
        };
        Ok(utterance_text(&role_id, round, label))
    }

    fn aggregate(&self, request: &CompletionRequest, rng: &mut ChaCha8Rng) -> Result<String> {
        let round = request.tag.round.unwrap_or(1);
        let gold = self.gold_for(request)?;
        let reliability = self.reliability(round, &request.system_text);
        let answers: Vec<OptionLabel> = wire::parse_role_sections(&request.user_text)
            .iter()
            .map(|(_, body)| extract_answer(body))
            .filter(|a| a.is_valid())
            .collect();
        if answers.is_empty() {
            return Ok(format!(
                "Round {round} synthesis: the contributions did not converge on any option."
            ));
        }
        let label = if rng.gen_bool(reliability) {
            majority(&answers).expect("non-empty answers")
        } else {
            // Unreliable aggregation loses the correct contributions.
            let wrong: Vec<OptionLabel> = answers.iter().copied().filter(|&a| a != gold).collect();
            match majority(&wrong) {
                Some(w) => w,
                None => wrong_label(gold, rng),
            }
        };
        Ok(format!(
            "Round {round} synthesis: after weighing all contributions, {}{label}.",
            wire::STATE_ANSWER_PHRASE
        ))
    }

    fn critic(&self, request: &CompletionRequest, rng: &mut ChaCha8Rng) -> Result<String> {
        let gold = self.gold_for(request)?;
        let answered = wire::delimited_block(&request.user_text)
            .map(|block| extract_answer(&block))
            .unwrap_or(OptionLabel::Invalid);
        if request.user_text.contains(wire::FINAL_STATE_HEADER) {
            // Terminal decision: echo the option supported by the state.
            return Ok(match answered {
                OptionLabel::Invalid => "Final decision: none.".to_string(),
                label => format!("Final decision: {label}."),
            });
        }
        Ok(if answered == gold {
            "Final answer correctness: correct\n\
             Primary failure or risk pattern: NONE\n\
             Brief explanation: The chosen option matches the evidence and the reasoning holds together.\n\
             Score: 5"
                .to_string()
        } else {
            let pattern = if answered == OptionLabel::Invalid {
                FailurePattern::RandomOrUngrounded
            } else {
                *[
                    FailurePattern::KnowledgeDeficit,
                    FailurePattern::MisinterpretQuestion,
                    FailurePattern::IncompleteReasoning,
                    FailurePattern::Overgeneralization,
                ]
                .choose(rng)
                .expect("non-empty patterns")
            };
            let score = if answered == OptionLabel::Invalid {
                0
            } else {
                rng.gen_range(1..=2)
            };
            format!(
                "Final answer correctness: incorrect\n\
                 Primary failure or risk pattern: {pattern}\n\
                 Brief explanation: The agent drifted from the question's constraints and settled on an unsupported option.\n\
                 Score: {score}"
            )
        })
    }

    fn judge(&self, request: &CompletionRequest, rng: &mut ChaCha8Rng) -> Result<String> {
        let gold = self.gold_for(request)?;
        let mut lines = Vec::new();
        for (role, body) in wire::parse_role_sections(&request.user_text) {
            let base = if extract_answer(&body) == gold {
                1.0
            } else {
                0.0
            };
            let noise = self.profile.judge_noise * rng.gen_range(-1.0..=1.0);
            let p = (base + noise).clamp(0.0, 1.0);
            lines.push(format!("{role}: {p:.4}"));
        }
        Ok(lines.join("\n"))
    }

    fn optimizer(&self, request: &CompletionRequest) -> String {
        if request.system_text == assets::AGENT_DIAGNOSIS
            || request.system_text.contains("attribution analyst")
        {
            return "The agent repeatedly anchors on surface heuristics, drifts from the \
                    question's actual constraints, and commits to options without grounding \
                    each step; interpretation discipline and evidence checking need \
                    reinforcement."
                .to_string();
        }
        if request.system_text == assets::AGGREGATOR_OPTIMIZE
            || request
                .system_text
                .contains("reconstructed aggregation prompt")
        {
            return format!(
                "{OPTIMIZED_MARKER} Review every contribution before concluding, weigh the \
                 reasoning quality of each proposal rather than majority size, keep dissenting \
                 answers visible, and end by naming the single leading answer letter."
            );
        }
        format!(
            "{OPTIMIZED_MARKER} You focus strictly on the question as asked, check every \
             option against the evidence, reason step by step, and justify your final \
             choice.\n\nQuestion: {{question}}\nOptions:\n{{options}}\nPrior shared state: \
             {{state}}\n\nEnd with a single line of the form 'My answer is X.' where X is \
             one of A, B, C, D."
        )
    }
}

/// Emits one planted utterance for `(role_id, round)` whose first standalone
/// option token is `gold` with probability `competence`, and a uniformly
/// random wrong option otherwise. Pure in the RNG state.
pub fn synthesize_utterance(
    profile: &SyntheticProfile,
    role_id: &str,
    round: u32,
    gold: OptionLabel,
    rng: &mut ChaCha8Rng,
) -> Result<String> {
    let competence = *profile
        .role_competence
        .get(role_id)
        .ok_or_else(|| Error::UnknownRole(role_id.to_string()))?;
    let label = if rng.gen_bool(competence) {
        gold
    } else {
        wrong_label(gold, rng)
    };
    Ok(utterance_text(role_id, round, label))
}

fn utterance_text(role_id: &str, round: u32, label: OptionLabel) -> String {
    format!(
        "As {role_id}, after weighing the options in round {round}, my answer is {label}. \
         I examined the alternatives and judged them weaker."
    )
}

fn wrong_label(gold: OptionLabel, rng: &mut ChaCha8Rng) -> OptionLabel {
    let wrong: Vec<OptionLabel> = OptionLabel::VALID
        .into_iter()
        .filter(|&l| l != gold)
        .collect();
    *wrong.choose(rng).expect("three wrong labels")
}

/// Majority label; ties break to the alphabetically smallest. `None` on empty.
fn majority(answers: &[OptionLabel]) -> Option<OptionLabel> {
    let mut counts: BTreeMap<OptionLabel, usize> = BTreeMap::new();
    for &a in answers {
        *counts.entry(a).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|(la, ca), (lb, cb)| ca.cmp(cb).then(lb.cmp(la)))
        .map(|(label, _)| label)
}

/// Deterministic multiple-choice instances for simulations and tests. Gold
/// labels are drawn uniformly from the seed.
pub fn synthetic_instances(count: usize, seed: u64) -> Vec<TaskInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let gold = *OptionLabel::VALID.choose(&mut rng).expect("labels");
            TaskInstance {
                instance_id: format!("syn-{i:05}"),
                question: format!("Synthetic question {i}: which option is planted as correct?"),
                options: OptionTexts::new(
                    "first candidate",
                    "second candidate",
                    "third candidate",
                    "fourth candidate",
                ),
                gold,
                category: None,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::CallTag;

    fn profile(competence: f64) -> SyntheticProfile {
        SyntheticProfile {
            role_competence: BTreeMap::from([("planner".to_string(), competence)]),
            aggregator_reliability: BTreeMap::from([(1, 1.0)]),
            judge_noise: 0.0,
            seed: 42,
        }
    }

    #[test]
    fn zero_competence_never_emits_gold() {
        let p = profile(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let text = synthesize_utterance(&p, "planner", 1, OptionLabel::A, &mut rng).unwrap();
            let got = extract_answer(&text);
            assert!(got.is_valid());
            assert_ne!(got, OptionLabel::A);
        }
    }

    #[test]
    fn full_competence_always_emits_gold() {
        let p = profile(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let text = synthesize_utterance(&p, "planner", 2, OptionLabel::B, &mut rng).unwrap();
            assert_eq!(extract_answer(&text), OptionLabel::B);
        }
    }

    #[test]
    fn same_rng_state_means_identical_text() {
        let p = profile(0.5);
        let a = synthesize_utterance(
            &p,
            "planner",
            1,
            OptionLabel::C,
            &mut ChaCha8Rng::seed_from_u64(7),
        )
        .unwrap();
        let b = synthesize_utterance(
            &p,
            "planner",
            1,
            OptionLabel::C,
            &mut ChaCha8Rng::seed_from_u64(7),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_role_is_rejected() {
        let p = profile(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            synthesize_utterance(&p, "ghost", 1, OptionLabel::A, &mut rng),
            Err(Error::UnknownRole(_))
        ));
    }

    #[test]
    fn monte_carlo_frequency_tracks_competence() {
        let p = profile(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let n = 10_000;
        let mut hits = 0;
        for _ in 0..n {
            let text = synthesize_utterance(&p, "planner", 1, OptionLabel::D, &mut rng).unwrap();
            if extract_answer(&text) == OptionLabel::D {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.30).abs() <= 0.01, "frequency {freq}");
    }

    #[test]
    fn majority_prefers_smallest_on_ties() {
        use OptionLabel::*;
        assert_eq!(majority(&[B, B, C]), Some(B));
        assert_eq!(majority(&[C, B]), Some(B));
        assert_eq!(majority(&[D]), Some(D));
        assert_eq!(majority(&[]), None);
    }

    #[test]
    fn world_is_pure_in_the_request() {
        let world = SyntheticWorld::new(
            profile(0.5),
            BTreeMap::from([("q1".to_string(), OptionLabel::A)]),
        );
        let req = CompletionRequest {
            system_text: "solve it".into(),
            user_text: "go".into(),
            temperature: 0.7,
            max_tokens: 64,
            tag: CallTag::new(CallerKind::Role)
                .role("planner")
                .round(1)
                .instance("q1"),
        };
        assert_eq!(world.complete(&req).unwrap(), world.complete(&req).unwrap());
    }
}
