//! Recover a planted weak role and a planted weak round from credit signals
//! alone.
//!
//! The synthetic world plants role competences (0.9, 0.9, 0.3) and
//! aggregator reliabilities (0.95, 0.5, 0.95). Critic and judge scores fuse
//! into per-role credit; informative failures (the aggregate went wrong
//! while someone was right) decay per-round credit. Both plants should fall
//! out of the tables.
//!
//! Run with: cargo run --example credit_assignment

use std::collections::BTreeMap;

use credit_loom::assets::PromptAssets;
use credit_loom::credit::{select_weak_roles, select_weak_rounds, CreditConfig, RoundCreditState};
use credit_loom::epoch::{run_epoch, EvaluationSettings};
use credit_loom::gateway::{synthetic_instances, Gateway, SyntheticProfile, SyntheticWorld};
use credit_loom::protocol::{PromptSet, SystemTopology};

fn main() -> credit_loom::Result<()> {
    let topology =
        SystemTopology::new(vec!["planner".into(), "solver".into(), "skeptic".into()], 3)?;
    let instances = synthetic_instances(100, 42);
    let profile = SyntheticProfile {
        role_competence: BTreeMap::from([
            ("planner".to_string(), 0.9),
            ("solver".to_string(), 0.9),
            ("skeptic".to_string(), 0.3),
        ]),
        aggregator_reliability: BTreeMap::from([(1, 0.95), (2, 0.5), (3, 0.95)]),
        judge_noise: 0.1,
        seed: 42,
    };
    let gateway = Gateway::synthetic(SyntheticWorld::for_instances(profile, &instances));
    let prompts = PromptSet::defaults(&topology);
    let settings = EvaluationSettings::default();

    let refs: Vec<_> = instances.iter().collect();
    let outcome = run_epoch(
        &refs,
        &topology,
        &prompts,
        &gateway,
        &PromptAssets::builtin(),
        &settings,
    )?;

    println!(
        "rolled out {} instances, accuracy {:.1}%\n",
        instances.len(),
        outcome.accuracy * 100.0
    );

    println!("structural credit (planted weak link: skeptic at 0.3)");
    let credits = outcome.role_state.credits()?;
    for (role, credit) in &credits {
        println!("  {role:<10} {credit:.4}");
    }
    let weak_roles = select_weak_roles(&credits, 1);
    println!("  -> weakest role: {}\n", weak_roles.join(", "));

    // A slow decay rate makes the alpha threshold demand many informative
    // failures, which only the planted round accumulates.
    let credit_config = CreditConfig {
        ema_rate: 0.02,
        ..CreditConfig::default()
    };
    let mut rounds = RoundCreditState::new(topology.num_rounds());
    rounds.apply_events(&outcome.events, &credit_config);
    println!("temporal credit (planted weak aggregator: round 2 at 0.5)");
    for t in topology.rounds() {
        println!(
            "  round {t}: alpha {:.4}, informative failures {}",
            rounds.alpha(t),
            rounds.buffer_len(t)
        );
    }
    let weak_rounds =
        select_weak_rounds(&rounds, credit_config.threshold, credit_config.buffer_min);
    println!("  -> weak rounds: {weak_rounds:?}");
    Ok(())
}
