//! The full optimization loop in the synthetic world: a scripted backend
//! whose rewrites genuinely lift the weak role's competence (0.3 -> 0.8) and
//! the weak round's aggregator reliability (0.5 -> 0.9), so two alternating
//! iterations produce a large held-out accuracy gain.
//!
//! Run with: cargo run --example optimize_prompts

use std::collections::BTreeMap;

use credit_loom::assets::PromptAssets;
use credit_loom::config::Config;
use credit_loom::credit::CreditConfig;
use credit_loom::datastore::{make_splits, select_instances};
use credit_loom::epoch::{measure_accuracy, EvaluationSettings};
use credit_loom::gateway::{
    synthetic_instances, Gateway, SyntheticProfile, SyntheticWorld, UpliftRule,
};
use credit_loom::optimizer::{run_optimization, BcdContext, OptimizerConfig};
use credit_loom::protocol::{PromptSet, SystemTopology};

fn main() -> credit_loom::Result<()> {
    let topology =
        SystemTopology::new(vec!["planner".into(), "solver".into(), "skeptic".into()], 3)?;
    let dataset = synthetic_instances(500, 2024);
    let split = make_splits(&dataset, 7)?;

    let profile = SyntheticProfile {
        role_competence: BTreeMap::from([
            ("planner".to_string(), 0.9),
            ("solver".to_string(), 0.9),
            ("skeptic".to_string(), 0.3),
        ]),
        aggregator_reliability: BTreeMap::from([(1, 0.95), (2, 0.95), (3, 0.5)]),
        judge_noise: 0.1,
        seed: 11,
    };
    let world = SyntheticWorld::for_instances(profile, &dataset).with_uplift(UpliftRule {
        role_competence: BTreeMap::from([("skeptic".to_string(), 0.8)]),
        aggregator_reliability: BTreeMap::from([(3, 0.9)]),
    });
    let gateway = Gateway::synthetic(world);
    let assets = PromptAssets::builtin();
    let settings = EvaluationSettings {
        credit: CreditConfig {
            bottom_k: 1,
            ..CreditConfig::default()
        },
        ..EvaluationSettings::default()
    };
    let optimizer = OptimizerConfig {
        max_iterations: 2,
        patience: 5,
        ..OptimizerConfig::default()
    };

    let initial = PromptSet::defaults(&topology);
    let test = select_instances(&dataset, &split.test_ids);
    let baseline = measure_accuracy(&test, &topology, &initial, &gateway, &assets, &settings)?;
    println!(
        "baseline held-out accuracy over {} instances: {:.1}%",
        test.len(),
        baseline * 100.0
    );

    let ctx = BcdContext {
        topology: &topology,
        instances: select_instances(&dataset, &split.optimization_ids),
        gateway: &gateway,
        assets: &assets,
        settings: &settings,
        optimizer: &optimizer,
    };
    let run = run_optimization(initial, &split, &Config::default(), &ctx)?;

    println!("\noptimization history:");
    for entry in &run.manifest.history {
        println!(
            "  iteration {} phase {:<11} accuracy {:>5.1}%  rewrote [{}]",
            entry.iteration,
            entry.phase,
            entry.accuracy * 100.0,
            entry.targets.join(", ")
        );
    }
    println!("\nfinal prompt versions:");
    for (role, prompt) in &run.prompts.roles {
        println!("  role {role}: v{}", prompt.version);
    }
    for (round, prompt) in &run.prompts.aggregators {
        println!("  aggregator round {round}: v{}", prompt.version);
    }

    let optimized = measure_accuracy(&test, &topology, &run.prompts, &gateway, &assets, &settings)?;
    println!(
        "\noptimized held-out accuracy: {:.1}% ({:+.1} points)",
        optimized * 100.0,
        (optimized - baseline) * 100.0
    );
    Ok(())
}
