//! One evaluation epoch: roll out a set of instances under fixed prompts,
//! grade the results, and produce the signals every downstream consumer
//! needs — fused role observations, round events, and log records.
//!
//! Instances run sequentially in input order, so an epoch is deterministic
//! under the synthetic and replay gateways.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::answer::extract_answer;
use crate::assets::PromptAssets;
use crate::credit::{fuse_role_signal, make_event, CreditConfig, RoleCreditState, RoundEvent};
use crate::critic::{evaluate_turn, judge_round, FailurePattern};
use crate::datastore::{LogRecord, TaskInstance};
use crate::error::Result;
use crate::gateway::CompletionPort;
use crate::protocol::{
    run_trajectory, DecisionMode, DecodingSettings, PromptSet, SystemTopology, Trajectory,
    Utterance,
};

/// Which rounds the turn critic evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RoundsFilter {
    /// Grade only each agent's final-round answer (the experimental protocol).
    #[default]
    Final,
    /// Grade every round of every agent.
    All,
}

/// Everything an epoch needs besides the data and prompts.
#[derive(Debug, Clone)]
pub struct EvaluationSettings {
    pub decoding: DecodingSettings,
    pub decision: DecisionMode,
    pub credit: CreditConfig,
    pub rounds_filter: RoundsFilter,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            decoding: DecodingSettings::default(),
            decision: DecisionMode::Extract,
            credit: CreditConfig::default(),
            rounds_filter: RoundsFilter::Final,
        }
    }
}

/// Results of one epoch.
#[derive(Debug)]
pub struct EpochOutcome {
    pub trajectories: Vec<Trajectory>,
    /// Mean terminal score over the epoch's instances.
    pub accuracy: f64,
    pub role_state: RoleCreditState,
    pub events: Vec<RoundEvent>,
    pub log_records: Vec<LogRecord>,
}

/// Round events derivable from a completed trajectory alone: one per round,
/// classifying the aggregated state against gold and the agent answers.
pub fn events_from_trajectory(
    trajectory: &Trajectory,
    gold: crate::answer::OptionLabel,
) -> Vec<RoundEvent> {
    trajectory
        .transcripts
        .iter()
        .zip(&trajectory.states)
        .map(|(transcript, state)| {
            let agent_answers: BTreeMap<String, crate::answer::OptionLabel> = transcript
                .utterances
                .iter()
                .map(|u| (u.role_id.clone(), extract_answer(&u.text)))
                .collect();
            make_event(
                trajectory.instance_id.clone(),
                transcript.round_index,
                gold,
                extract_answer(&state.text),
                agent_answers,
            )
        })
        .collect()
}

/// The earliest round whose shared state already named the final answer.
pub fn decided_round(trajectory: &Trajectory) -> u32 {
    trajectory
        .states
        .iter()
        .find(|s| extract_answer(&s.text) == trajectory.final_answer)
        .map(|s| s.round_index)
        .unwrap_or_else(|| trajectory.states.last().map_or(1, |s| s.round_index))
}

/// Rolls out every instance and measures terminal accuracy only — no critic
/// traffic. Used for held-out evaluation.
pub fn measure_accuracy(
    instances: &[&TaskInstance],
    topology: &SystemTopology,
    prompts: &PromptSet,
    gateway: &dyn CompletionPort,
    assets: &PromptAssets,
    settings: &EvaluationSettings,
) -> Result<f64> {
    if instances.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0u32;
    for instance in instances {
        let trajectory = run_trajectory(
            instance,
            topology,
            prompts,
            gateway,
            &settings.decoding,
            settings.decision,
            &assets.terminal_decision,
        )?;
        correct += u32::from(trajectory.score);
    }
    Ok(f64::from(correct) / instances.len() as f64)
}

/// Full epoch: rollouts, per-turn critic verdicts (per the rounds filter),
/// one judge call per evaluated round, fused role observations, round
/// events, and one log record per instance.
pub fn run_epoch(
    instances: &[&TaskInstance],
    topology: &SystemTopology,
    prompts: &PromptSet,
    gateway: &dyn CompletionPort,
    assets: &PromptAssets,
    settings: &EvaluationSettings,
) -> Result<EpochOutcome> {
    let mut trajectories = Vec::with_capacity(instances.len());
    let mut role_state = RoleCreditState::default();
    let mut events = Vec::new();
    let mut log_records = Vec::with_capacity(instances.len());
    let versions = prompts.versions();
    let mut correct_total = 0u32;

    for instance in instances {
        let trajectory = run_trajectory(
            instance,
            topology,
            prompts,
            gateway,
            &settings.decoding,
            settings.decision,
            &assets.terminal_decision,
        )?;
        correct_total += u32::from(trajectory.score);
        events.extend(events_from_trajectory(&trajectory, instance.gold));

        let evaluated_rounds: Vec<u32> = match settings.rounds_filter {
            RoundsFilter::Final => vec![topology.num_rounds()],
            RoundsFilter::All => topology.rounds().collect(),
        };
        for t in evaluated_rounds {
            let transcript = &trajectory.transcripts[(t - 1) as usize];
            let peers = judge_round(transcript, instance, gateway, &settings.decoding, assets)?;
            for utterance in &transcript.utterances {
                let record =
                    evaluate_turn(utterance, instance, gateway, &settings.decoding, assets)?;
                let p = peers.scores.get(&utterance.role_id).copied().unwrap_or(0.0);
                let fused = fuse_role_signal(record.q, p, settings.credit.lambda)?;
                role_state.record_observation(&utterance.role_id, fused)?;
                role_state.record_eval(record);
            }
        }

        log_records.push(final_verdict_record(
            instance,
            &trajectory,
            gateway,
            assets,
            settings,
            versions.clone(),
        )?);
        trajectories.push(trajectory);
    }

    let accuracy = if instances.is_empty() {
        0.0
    } else {
        f64::from(correct_total) / instances.len() as f64
    };
    Ok(EpochOutcome {
        trajectories,
        accuracy,
        role_state,
        events,
        log_records,
    })
}

/// Grades the debate's final answer (the last shared state) with the turn
/// critic and folds the verdict into a log record. Correctness in the record
/// is the exact-match outcome; the critic contributes pattern and score,
/// repaired to stay consistent with it.
fn final_verdict_record(
    instance: &TaskInstance,
    trajectory: &Trajectory,
    gateway: &dyn CompletionPort,
    assets: &PromptAssets,
    settings: &EvaluationSettings,
    versions: crate::datastore::VersionStamp,
) -> Result<LogRecord> {
    let final_state = trajectory.states.last().expect("at least one round");
    let pseudo = Utterance {
        role_id: "final".to_string(),
        round_index: final_state.round_index,
        text: final_state.text.clone(),
    };
    let verdict = evaluate_turn(&pseudo, instance, gateway, &settings.decoding, assets)?;
    let correct = trajectory.score == 1;
    let pattern = if correct {
        FailurePattern::None
    } else if verdict.pattern == FailurePattern::None {
        FailurePattern::RandomOrUngrounded
    } else {
        verdict.pattern
    };
    Ok(LogRecord {
        instance_id: instance.instance_id.clone(),
        final_answer: trajectory.final_answer,
        correct,
        decided_round: decided_round(trajectory),
        pattern,
        score: verdict.raw_score,
        versions,
        category: instance.category.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::OptionLabel;
    use crate::gateway::{synthetic_instances, Gateway, SyntheticProfile, SyntheticWorld};
    use crate::protocol::PromptSet;

    fn world(
        instances: &[TaskInstance],
        competences: &[(&str, f64)],
        reliabilities: &[(u32, f64)],
        seed: u64,
    ) -> Gateway {
        let profile = SyntheticProfile {
            role_competence: competences
                .iter()
                .map(|(r, c)| (r.to_string(), *c))
                .collect(),
            aggregator_reliability: reliabilities.iter().copied().collect(),
            judge_noise: 0.0,
            seed,
        };
        Gateway::synthetic(SyntheticWorld::for_instances(profile, instances))
    }

    #[test]
    fn epoch_shapes_and_perfect_accuracy() {
        let instances = synthetic_instances(10, 3);
        let topo = SystemTopology::new(vec!["a".into(), "b".into(), "c".into()], 2).unwrap();
        let gate = world(
            &instances,
            &[("a", 1.0), ("b", 1.0), ("c", 1.0)],
            &[(1, 1.0), (2, 1.0)],
            9,
        );
        let prompts = PromptSet::defaults(&topo);
        let refs: Vec<&TaskInstance> = instances.iter().collect();
        let outcome = run_epoch(
            &refs,
            &topo,
            &prompts,
            &gate,
            &PromptAssets::builtin(),
            &EvaluationSettings::default(),
        )
        .unwrap();

        assert_eq!(outcome.trajectories.len(), 10);
        assert!((outcome.accuracy - 1.0).abs() < 1e-12);
        // Final-round filter: one observation per instance per role.
        for role in ["a", "b", "c"] {
            assert_eq!(outcome.role_state.observation_count(role), 10);
        }
        // One event per instance per round.
        assert_eq!(outcome.events.len(), 20);
        assert_eq!(outcome.log_records.len(), 10);
        assert!(outcome.log_records.iter().all(|r| r.correct));
        assert!(outcome
            .log_records
            .iter()
            .all(|r| r.pattern == FailurePattern::None && r.score == 5));
    }

    #[test]
    fn all_rounds_filter_multiplies_observations() {
        let instances = synthetic_instances(4, 5);
        let topo = SystemTopology::new(vec!["a".into(), "b".into()], 3).unwrap();
        let gate = world(
            &instances,
            &[("a", 1.0), ("b", 1.0)],
            &[(1, 1.0), (2, 1.0), (3, 1.0)],
            2,
        );
        let prompts = PromptSet::defaults(&topo);
        let refs: Vec<&TaskInstance> = instances.iter().collect();
        let settings = EvaluationSettings {
            rounds_filter: RoundsFilter::All,
            ..EvaluationSettings::default()
        };
        let outcome = run_epoch(
            &refs,
            &topo,
            &prompts,
            &gate,
            &PromptAssets::builtin(),
            &settings,
        )
        .unwrap();
        assert_eq!(outcome.role_state.observation_count("a"), 12);
    }

    #[test]
    fn events_classify_lossy_aggregation_as_informative() {
        use crate::credit::RoundEventKind;
        let instances = synthetic_instances(40, 11);
        let topo = SystemTopology::new(vec!["a".into(), "b".into(), "c".into()], 1).unwrap();
        // Perfect roles, hopeless aggregator: every failure is informative.
        let gate = world(
            &instances,
            &[("a", 1.0), ("b", 1.0), ("c", 1.0)],
            &[(1, 0.0)],
            13,
        );
        let prompts = PromptSet::defaults(&topo);
        let refs: Vec<&TaskInstance> = instances.iter().collect();
        let outcome = run_epoch(
            &refs,
            &topo,
            &prompts,
            &gate,
            &PromptAssets::builtin(),
            &EvaluationSettings::default(),
        )
        .unwrap();
        assert!(outcome
            .events
            .iter()
            .all(|e| e.kind == RoundEventKind::InformativeFailure));
        assert!(outcome.accuracy < 1e-12);
        assert!(outcome
            .log_records
            .iter()
            .all(|r| !r.correct && r.pattern != FailurePattern::None));
    }

    #[test]
    fn decided_round_finds_first_matching_state() {
        let traj = Trajectory {
            instance_id: "x".into(),
            transcripts: vec![],
            states: vec![
                crate::protocol::SharedState {
                    round_index: 1,
                    text: "leaning B".into(),
                },
                crate::protocol::SharedState {
                    round_index: 2,
                    text: "answer is C".into(),
                },
                crate::protocol::SharedState {
                    round_index: 3,
                    text: "final C".into(),
                },
            ],
            final_answer: OptionLabel::C,
            score: 1,
        };
        assert_eq!(decided_round(&traj), 2);
    }
}
