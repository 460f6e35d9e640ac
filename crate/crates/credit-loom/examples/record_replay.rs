//! Record/replay caching: record a debate's completions to a JSONL cache,
//! then re-run it in replay-strict mode with no backend at all and get
//! byte-identical results.
//!
//! Run with: cargo run --example record_replay

use std::collections::BTreeMap;

use credit_loom::gateway::{
    synthetic_instances, CacheMode, Gateway, ReplayCache, SyntheticProfile, SyntheticWorld,
};
use credit_loom::protocol::{
    run_trajectory, DecisionMode, DecodingSettings, PromptSet, SystemTopology,
};

fn main() -> credit_loom::Result<()> {
    let dir = std::env::temp_dir().join("credit-loom-record-replay");
    std::fs::create_dir_all(&dir).ok();
    let cache_path = dir.join("completions.jsonl");
    std::fs::remove_file(&cache_path).ok();

    let topology = SystemTopology::new(vec!["planner".into(), "solver".into()], 2)?;
    let instances = synthetic_instances(5, 1);
    let prompts = PromptSet::defaults(&topology);
    let decoding = DecodingSettings::default();
    let profile = SyntheticProfile {
        role_competence: BTreeMap::from([
            ("planner".to_string(), 0.8),
            ("solver".to_string(), 0.6),
        ]),
        aggregator_reliability: BTreeMap::from([(1, 0.9), (2, 0.9)]),
        judge_noise: 0.0,
        seed: 3,
    };

    // Pass 1: synthetic backend with a recording cache.
    let recording = Gateway::synthetic(SyntheticWorld::for_instances(profile, &instances))
        .with_cache(ReplayCache::open(&cache_path, CacheMode::Record)?);
    let mut first = Vec::new();
    for instance in &instances {
        first.push(run_trajectory(
            instance,
            &topology,
            &prompts,
            &recording,
            &decoding,
            DecisionMode::Extract,
            "",
        )?);
    }
    let stats = recording.stats();
    println!(
        "recording pass: {} completions served, {} backend calls, cache file {}",
        stats.served,
        stats.backend_calls,
        cache_path.display()
    );

    // Pass 2: replay-strict, no backend configured at all.
    let replay = Gateway::replay_strict(ReplayCache::open(&cache_path, CacheMode::ReplayStrict)?);
    let mut second = Vec::new();
    for instance in &instances {
        second.push(run_trajectory(
            instance,
            &topology,
            &prompts,
            &replay,
            &decoding,
            DecisionMode::Extract,
            "",
        )?);
    }
    let stats = replay.stats();
    println!(
        "replay pass:    {} completions served, {} backend calls, {} cache hits",
        stats.served, stats.backend_calls, stats.cache_hits
    );
    println!(
        "trajectories byte-identical across passes: {}",
        first == second
    );
    Ok(())
}
