//! Run one multi-role, multi-round debate in the synthetic world and print
//! the full trajectory: every utterance, every aggregated state, and the
//! terminal decision.
//!
//! Run with: cargo run --example debate_rollout

use std::collections::BTreeMap;

use credit_loom::datastore::{OptionTexts, TaskInstance};
use credit_loom::gateway::{Gateway, SyntheticProfile, SyntheticWorld};
use credit_loom::protocol::{
    run_trajectory, DecisionMode, DecodingSettings, PromptSet, SystemTopology,
};
use credit_loom::OptionLabel;

fn main() -> credit_loom::Result<()> {
    let topology =
        SystemTopology::new(vec!["planner".into(), "solver".into(), "skeptic".into()], 3)?;
    let instance = TaskInstance {
        instance_id: "demo-1".into(),
        question: "Which data structure gives O(1) average lookup by key?".into(),
        options: OptionTexts::new("Linked list", "Hash table", "Binary heap", "Stack"),
        gold: OptionLabel::B,
        category: None,
    };

    // A solid panel with one shaky member and a mid-debate weak aggregator.
    let profile = SyntheticProfile {
        role_competence: BTreeMap::from([
            ("planner".to_string(), 0.9),
            ("solver".to_string(), 0.9),
            ("skeptic".to_string(), 0.4),
        ]),
        aggregator_reliability: BTreeMap::from([(1, 0.95), (2, 0.6), (3, 0.95)]),
        judge_noise: 0.0,
        seed: 7,
    };
    let gateway = Gateway::synthetic(SyntheticWorld::new(
        profile,
        BTreeMap::from([(instance.instance_id.clone(), instance.gold)]),
    ));
    let prompts = PromptSet::defaults(&topology);

    let trajectory = run_trajectory(
        &instance,
        &topology,
        &prompts,
        &gateway,
        &DecodingSettings::default(),
        DecisionMode::Extract,
        "",
    )?;

    println!("question: {}", instance.question);
    println!("gold answer: {}\n", instance.gold);
    for (transcript, state) in trajectory.transcripts.iter().zip(&trajectory.states) {
        println!("--- round {} ---", transcript.round_index);
        for utterance in &transcript.utterances {
            println!("  [{}] {}", utterance.role_id, utterance.text);
        }
        println!("  => state: {}\n", state.text);
    }
    println!(
        "final answer: {} (score {})",
        trajectory.final_answer, trajectory.score
    );
    Ok(())
}
