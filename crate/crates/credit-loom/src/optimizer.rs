//! Credit-guided block coordinate descent over the two prompt blocks.
//!
//! Each outer iteration alternates two phases. The structural phase rolls
//! out the optimization split, computes role credits, and rewrites only the
//! lowest-credit role prompts while every aggregator prompt stays untouched.
//! The temporal phase then rolls out again (or reuses the structural phase's
//! rollouts when nothing changed), feeds the round events into the temporal
//! ledger, and rewrites only the aggregator prompts of rounds whose credit
//! collapsed under enough informative failures — with every role prompt held
//! fixed. Rewrites are whole-prompt replacements produced by the optimizer
//! prompts, applied transactionally per phase: a failed phase leaves both
//! blocks at their last consistent versions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assets::PromptAssets;
use crate::config::Config;
use crate::credit::{
    select_weak_roles, select_weak_roles_below, select_weak_rounds, CreditSnapshot,
    FailureExemplar, RoleCreditState, RoundCreditState,
};
use crate::critic::{EvalRecord, FailurePattern};
use crate::datastore::{DatasetSplit, LogRecord, TaskInstance, VersionStamp};
use crate::epoch::{run_epoch, EpochOutcome, EvaluationSettings};
use crate::error::{Error, Result};
use crate::gateway::{CallTag, CallerKind, CompletionPort, CompletionRequest};
use crate::protocol::{AggregatorPrompt, PromptSet, RolePrompt, SystemTopology};
use crate::wire;

/// How the structural phase picks rewrite targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum RoleSelection {
    /// The K worst roles by credit (the default protocol).
    BottomK,
    /// Every role whose credit falls below a fixed threshold.
    Threshold(f64),
}

/// Stopping and reuse policy for the outer loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Maximum outer iterations (each runs both phases).
    pub max_iterations: u32,
    /// Minimum accuracy-point improvement that counts as progress.
    pub epsilon_points: f64,
    /// Consecutive non-improving iterations tolerated before stopping.
    pub patience: u32,
    /// Reuse the structural phase's rollouts for the temporal phase when the
    /// structural phase made no edits.
    pub reuse_rollouts: bool,
    pub role_selection: RoleSelection,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 5,
            epsilon_points: 0.5,
            patience: 2,
            reuse_rollouts: true,
            role_selection: RoleSelection::BottomK,
        }
    }
}

/// Natural-language feedback targeted at one prompt block member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextualGradient {
    pub target: GradientTarget,
    pub feedback_text: String,
    /// Identifiers of the records or exemplars the feedback was built from.
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientTarget {
    Role(String),
    Round(u32),
}

/// Failures of one role, grouped by pattern with representative explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureGroup {
    pub pattern: FailurePattern,
    pub count: usize,
    /// At most three example explanations.
    pub representatives: Vec<String>,
}

/// The structured failure summary plus the diagnosis completion built on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisSummary {
    pub role_id: String,
    pub groups: Vec<FailureGroup>,
    pub summary_text: String,
}

/// One phase's ledger entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: u32,
    /// `"roles"` for the structural phase, `"aggregators"` for the temporal.
    pub phase: String,
    pub targets: Vec<String>,
    /// Rollout accuracy on the optimization split under the prompts this
    /// phase started from.
    pub accuracy: f64,
}

/// The optimizer's full mutable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub iteration: u32,
    pub prompts: PromptSet,
    pub history: Vec<HistoryEntry>,
}

impl OptimizerState {
    pub fn new(prompts: PromptSet) -> Self {
        OptimizerState {
            iteration: 0,
            prompts,
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    Saturated,
    BudgetExhausted,
}

/// Reproducibility record of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub config: Config,
    pub asset_hashes: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub split_generator: String,
    pub history: Vec<HistoryEntry>,
    pub snapshots: Vec<CreditSnapshot>,
    pub final_versions: VersionStamp,
    pub stop_reason: StopReason,
}

impl RunManifest {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad manifest: {e}")))
    }
}

/// Everything the optimizer borrows for one run.
pub struct BcdContext<'a> {
    pub topology: &'a SystemTopology,
    pub instances: Vec<&'a TaskInstance>,
    pub gateway: &'a dyn CompletionPort,
    pub assets: &'a PromptAssets,
    pub settings: &'a EvaluationSettings,
    pub optimizer: &'a OptimizerConfig,
}

/// Groups one role's failures by pattern (counts plus up to three
/// representative explanations each) and asks the diagnosis prompt for an
/// attribution summary. Roles without failures are skipped by the caller.
pub fn summarize_failures(
    records: &[EvalRecord],
    gateway: &dyn CompletionPort,
    settings: &EvaluationSettings,
    assets: &PromptAssets,
) -> Result<DiagnosisSummary> {
    let role_id = records
        .first()
        .map(|r| r.role_id.clone())
        .unwrap_or_default();
    let failures: Vec<&EvalRecord> = records
        .iter()
        .filter(|r| r.pattern != FailurePattern::None)
        .collect();
    if failures.is_empty() {
        return Err(Error::NoFailures(role_id));
    }

    let mut grouped: BTreeMap<FailurePattern, FailureGroup> = BTreeMap::new();
    for record in &failures {
        let group = grouped
            .entry(record.pattern)
            .or_insert_with(|| FailureGroup {
                pattern: record.pattern,
                count: 0,
                representatives: Vec::new(),
            });
        group.count += 1;
        if group.representatives.len() < 3 && !record.explanation.trim().is_empty() {
            group.representatives.push(record.explanation.clone());
        }
    }
    let mut groups: Vec<FailureGroup> = grouped.into_values().collect();
    groups.sort_by(|a, b| b.count.cmp(&a.count).then(a.pattern.cmp(&b.pattern)));

    let total: usize = groups.iter().map(|g| g.count).sum();
    let mut user_text = format!("Agent: {role_id}\nFailure summary grouped by failure type:\n");
    for group in &groups {
        user_text.push_str(&format!(
            "\nFailure type: {}\nOccurrences: {} of {total} failures\n",
            group.pattern, group.count
        ));
        if !group.representatives.is_empty() {
            user_text.push_str("Representative explanations:\n");
            for rep in &group.representatives {
                user_text.push_str(&format!("- {rep}\n"));
            }
        }
    }

    let request = CompletionRequest {
        system_text: assets.agent_diagnosis.clone(),
        user_text,
        temperature: settings.decoding.eval_temperature,
        max_tokens: settings.decoding.max_tokens,
        tag: CallTag::new(CallerKind::Optimizer).role(role_id.clone()),
    };
    let summary_text = gateway.complete(&request)?.trim().to_string();
    if summary_text.is_empty() {
        return Err(Error::CompletionFailure(format!(
            "empty diagnosis for role '{role_id}'"
        )));
    }
    Ok(DiagnosisSummary {
        role_id,
        groups,
        summary_text,
    })
}

const TASK_BLOCK_SUFFIX: &str = "\n\nQuestion: {question}\nOptions:\n{options}\nPrior shared \
                                 state: {state}\n\nEnd with a single line of the form 'My \
                                 answer is X.' where X is one of A, B, C, D.";

/// Accepts a rewrite only if it is non-empty and references no unsupported
/// slots; repairs a missing task section by appending the standard one.
fn sanitize_role_rewrite(text: &str) -> Option<String> {
    let mut text = text.trim().to_string();
    if text.is_empty() {
        return None;
    }
    for slot in slot_names(&text) {
        if !matches!(slot.as_str(), "question" | "options" | "state") {
            return None;
        }
    }
    if !text.contains("{question}") {
        text.push_str(TASK_BLOCK_SUFFIX);
    }
    Some(text)
}

fn slot_names(text: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let tail = &rest[open + 1..];
        if let Some(close) = tail.find('}') {
            let name = &tail[..close];
            if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                names.push(name.to_string());
            }
            rest = &tail[close + 1..];
        } else {
            break;
        }
    }
    names
}

/// Rewrites one role prompt from its diagnosis. The completion is taken
/// verbatim (trimmed); an empty or malformed rewrite is retried once and
/// then reported as [`Error::EmptyRewrite`], leaving the old prompt in force.
pub fn role_opt(
    prompt: &RolePrompt,
    diagnosis: &DiagnosisSummary,
    gateway: &dyn CompletionPort,
    settings: &EvaluationSettings,
    assets: &PromptAssets,
) -> Result<RolePrompt> {
    if diagnosis.role_id != prompt.role_id {
        return Err(Error::Config(format!(
            "diagnosis for '{}' applied to prompt '{}'",
            diagnosis.role_id, prompt.role_id
        )));
    }
    let gradient = TextualGradient {
        target: GradientTarget::Role(prompt.role_id.clone()),
        feedback_text: diagnosis.summary_text.clone(),
        evidence: diagnosis
            .groups
            .iter()
            .map(|g| format!("{}x{}", g.pattern, g.count))
            .collect(),
    };
    let base = CompletionRequest {
        system_text: assets.role_prompt_optimize.clone(),
        user_text: format!(
            "Current role prompt:\n{}\n{}\n{}\n\nAttribution summary of systematic failures:\n{}",
            wire::BLOCK_OPEN,
            prompt.text,
            wire::BLOCK_CLOSE,
            gradient.feedback_text,
        ),
        temperature: settings.decoding.eval_temperature,
        max_tokens: settings.decoding.max_tokens,
        tag: CallTag::new(CallerKind::Optimizer).role(prompt.role_id.clone()),
    };

    if let Some(text) = sanitize_role_rewrite(&gateway.complete(&base)?) {
        return Ok(prompt.evolved(text));
    }
    let mut retry = base;
    retry
        .user_text
        .push_str("\n\nReminder: output only the reconstructed role prompt, nothing else.");
    match sanitize_role_rewrite(&gateway.complete(&retry)?) {
        Some(text) => Ok(prompt.evolved(text)),
        None => Err(Error::EmptyRewrite(prompt.role_id.clone())),
    }
}

/// Builds the temporal feedback text for one round from its failure buffer:
/// the cases where a correct agent answer was lost in aggregation.
pub fn aggregator_gradient(round: u32, buffer: &[FailureExemplar]) -> TextualGradient {
    let mut feedback = format!(
        "Aggregation failures observed at round {round} ({} cases where a correct \
         answer was present but lost):\n",
        buffer.len()
    );
    for ex in buffer {
        let answers = ex
            .agent_answers
            .iter()
            .map(|(role, ans)| format!("{role}={ans}"))
            .collect::<Vec<_>>()
            .join(", ");
        feedback.push_str(&format!(
            "- instance {}: agents answered [{answers}]; the summary concluded {}, \
             losing correct answer {}.\n",
            ex.instance_id, ex.agg_answer, ex.gold
        ));
    }
    TextualGradient {
        target: GradientTarget::Round(round),
        feedback_text: feedback,
        evidence: buffer.iter().map(|e| e.instance_id.clone()).collect(),
    }
}

/// Rewrites one round's aggregator prompt from its buffered failure
/// exemplars. Same retry/empty-rewrite policy as [`role_opt`].
pub fn agg_opt(
    psi: &AggregatorPrompt,
    buffer: &[FailureExemplar],
    gateway: &dyn CompletionPort,
    settings: &EvaluationSettings,
    assets: &PromptAssets,
) -> Result<AggregatorPrompt> {
    if buffer.is_empty() {
        return Err(Error::Config(format!(
            "aggregator rewrite for round {} needs a non-empty failure buffer",
            psi.round_index
        )));
    }
    let gradient = aggregator_gradient(psi.round_index, buffer);
    let base = CompletionRequest {
        system_text: assets.aggregator_optimize.clone(),
        user_text: format!(
            "Current aggregation prompt:\n{}\n{}\n{}\n\n{}",
            wire::BLOCK_OPEN,
            psi.text,
            wire::BLOCK_CLOSE,
            gradient.feedback_text,
        ),
        temperature: settings.decoding.eval_temperature,
        max_tokens: settings.decoding.max_tokens,
        tag: CallTag::new(CallerKind::Optimizer).round(psi.round_index),
    };

    let accept = |text: String| {
        let text = text.trim().to_string();
        (!text.is_empty()).then_some(text)
    };
    if let Some(text) = accept(gateway.complete(&base)?) {
        return Ok(psi.evolved(text));
    }
    let mut retry = base;
    retry
        .user_text
        .push_str("\n\nReminder: output only the reconstructed aggregation prompt, nothing else.");
    match accept(gateway.complete(&retry)?) {
        Some(text) => Ok(psi.evolved(text)),
        None => Err(Error::EmptyRewrite(format!("round {}", psi.round_index))),
    }
}

/// Result of one phase.
pub struct PhaseOutcome {
    pub prompts: PromptSet,
    pub targets: Vec<String>,
    pub accuracy: f64,
    pub role_credits: BTreeMap<String, f64>,
    pub epoch: EpochOutcome,
}

/// Structural phase: measure role credits under the current prompts and
/// rewrite only the selected weak roles. Aggregator prompts are not touched.
pub fn phase_roles(prompts: &PromptSet, ctx: &BcdContext<'_>) -> Result<PhaseOutcome> {
    let epoch = run_epoch(
        &ctx.instances,
        ctx.topology,
        prompts,
        ctx.gateway,
        ctx.assets,
        ctx.settings,
    )?;
    let role_credits = epoch.role_state.credits()?;
    let selected = match ctx.optimizer.role_selection {
        RoleSelection::BottomK => select_weak_roles(&role_credits, ctx.settings.credit.bottom_k),
        RoleSelection::Threshold(thr) => select_weak_roles_below(&role_credits, thr),
    };

    let mut next = prompts.clone();
    let mut targets = Vec::new();
    for role_id in selected {
        let records = epoch.role_state.records_for(&role_id);
        let diagnosis = match summarize_failures(records, ctx.gateway, ctx.settings, ctx.assets) {
            Ok(d) => d,
            Err(Error::NoFailures(_)) => {
                log::info!("role '{role_id}' selected but has no failures; skipping");
                continue;
            }
            Err(e) => return Err(e),
        };
        let current = next.role(&role_id)?.clone();
        match role_opt(&current, &diagnosis, ctx.gateway, ctx.settings, ctx.assets) {
            Ok(rewritten) => {
                next.roles.insert(role_id.clone(), rewritten);
                targets.push(role_id);
            }
            Err(Error::EmptyRewrite(_)) => {
                log::warn!("empty rewrite for role '{role_id}'; keeping the current prompt");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PhaseOutcome {
        prompts: next,
        targets,
        accuracy: epoch.accuracy,
        role_credits,
        epoch,
    })
}

/// Temporal phase: fold this iteration's round events into the temporal
/// ledger and rewrite only the aggregators of weak rounds. Role prompts are
/// not touched. `reuse` supplies the structural phase's rollouts when they
/// are still valid (no structural edits).
pub fn phase_aggregators(
    prompts: &PromptSet,
    round_state: &mut RoundCreditState,
    reuse: Option<&EpochOutcome>,
    ctx: &BcdContext<'_>,
) -> Result<PhaseOutcome> {
    let fresh: Option<EpochOutcome> = if reuse.is_some() {
        None
    } else {
        Some(run_epoch(
            &ctx.instances,
            ctx.topology,
            prompts,
            ctx.gateway,
            ctx.assets,
            ctx.settings,
        )?)
    };
    let epoch_ref = reuse.or(fresh.as_ref()).expect("one source of rollouts");
    round_state.apply_events(&epoch_ref.events, &ctx.settings.credit);

    let selected = select_weak_rounds(
        round_state,
        ctx.settings.credit.threshold,
        ctx.settings.credit.buffer_min,
    );

    let mut next = prompts.clone();
    let mut targets = Vec::new();
    for t in selected {
        let buffer: Vec<FailureExemplar> = round_state.buffer(t).to_vec();
        let current = next.aggregator(t)?.clone();
        match agg_opt(&current, &buffer, ctx.gateway, ctx.settings, ctx.assets) {
            Ok(rewritten) => {
                next.aggregators.insert(t, rewritten);
                targets.push(t.to_string());
                // Consumed: this evidence must not retrigger the next pass.
                round_state.drain_buffer(t);
            }
            Err(Error::EmptyRewrite(_)) => {
                log::warn!("empty rewrite for round {t} aggregator; keeping current prompt");
            }
            Err(e) => return Err(e),
        }
    }

    let accuracy = epoch_ref.accuracy;
    let epoch = match fresh {
        Some(e) => e,
        // The reused epoch stays owned by the caller; hand back an empty one.
        None => EpochOutcome {
            trajectories: Vec::new(),
            accuracy,
            role_state: RoleCreditState::default(),
            events: Vec::new(),
            log_records: Vec::new(),
        },
    };
    Ok(PhaseOutcome {
        prompts: next,
        targets,
        accuracy,
        role_credits: BTreeMap::new(),
        epoch,
    })
}

/// Output of one full BCD step.
pub struct StepOutcome {
    pub state: OptimizerState,
    pub snapshot: CreditSnapshot,
    /// Log records from the rollouts this step performed, in rollout order.
    pub log_records: Vec<LogRecord>,
}

/// One outer iteration: structural phase, then temporal phase, then `k + 1`.
/// On error the caller's state is untouched (both blocks stay at their last
/// consistent versions).
pub fn bcd_step(
    state: &OptimizerState,
    round_state: &mut RoundCreditState,
    ctx: &BcdContext<'_>,
) -> Result<StepOutcome> {
    let iteration = state.iteration + 1;
    let structural = phase_roles(&state.prompts, ctx)?;
    let mut log_records = structural.epoch.log_records.clone();

    let reuse = (ctx.optimizer.reuse_rollouts && structural.targets.is_empty())
        .then_some(&structural.epoch);
    let temporal = phase_aggregators(&structural.prompts, round_state, reuse, ctx)?;
    log_records.extend(temporal.epoch.log_records.iter().cloned());

    let mut history = state.history.clone();
    history.push(HistoryEntry {
        iteration,
        phase: "roles".to_string(),
        targets: structural.targets.clone(),
        accuracy: structural.accuracy,
    });
    history.push(HistoryEntry {
        iteration,
        phase: "aggregators".to_string(),
        targets: temporal.targets.clone(),
        accuracy: temporal.accuracy,
    });

    let snapshot = CreditSnapshot {
        iteration,
        role_credits: structural.role_credits.clone(),
        round_alpha: round_state.alphas(),
        round_buffer: round_state.buffer_lens(),
    };
    Ok(StepOutcome {
        state: OptimizerState {
            iteration,
            prompts: temporal.prompts,
            history,
        },
        snapshot,
        log_records,
    })
}

/// A finished optimization run.
#[derive(Debug)]
pub struct OptimizationRun {
    pub prompts: PromptSet,
    pub manifest: RunManifest,
    pub log_records: Vec<LogRecord>,
}

/// Repeats BCD steps until the iteration budget runs out or the optimization
/// split accuracy stops improving by more than `epsilon_points` for
/// `patience` consecutive iterations. A gateway budget exhaustion ends the
/// run gracefully with the best prompts so far; the test split is never
/// touched (any id outside the optimization split aborts with a data error).
pub fn run_optimization(
    initial: PromptSet,
    split: &DatasetSplit,
    config: &Config,
    ctx: &BcdContext<'_>,
) -> Result<OptimizationRun> {
    let outside: Vec<String> = ctx
        .instances
        .iter()
        .filter(|i| !split.is_optimization(&i.instance_id))
        .map(|i| i.instance_id.clone())
        .collect();
    if !outside.is_empty() {
        return Err(Error::TestSetExposure(outside));
    }
    initial.validate_for(ctx.topology)?;

    let mut state = OptimizerState::new(initial);
    let mut round_state = RoundCreditState::new(ctx.topology.num_rounds());
    let mut snapshots = Vec::new();
    let mut log_records = Vec::new();
    let mut best_accuracy: Option<f64> = None;
    let mut stall = 0u32;
    let mut stop_reason = StopReason::MaxIterations;

    for _ in 0..ctx.optimizer.max_iterations {
        match bcd_step(&state, &mut round_state, ctx) {
            Ok(outcome) => {
                let measured = outcome
                    .state
                    .history
                    .iter()
                    .rev()
                    .find(|h| h.phase == "roles")
                    .map(|h| h.accuracy)
                    .unwrap_or(0.0);
                snapshots.push(outcome.snapshot);
                log_records.extend(outcome.log_records);
                state = outcome.state;

                match best_accuracy {
                    None => best_accuracy = Some(measured),
                    Some(best) => {
                        let gain_points = (measured - best) * 100.0;
                        if gain_points > ctx.optimizer.epsilon_points {
                            best_accuracy = Some(measured);
                            stall = 0;
                        } else {
                            stall += 1;
                            if stall >= ctx.optimizer.patience {
                                stop_reason = StopReason::Saturated;
                                break;
                            }
                        }
                    }
                }
            }
            Err(e) if e.is_budget_exhaustion() => {
                stop_reason = StopReason::BudgetExhausted;
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let manifest = RunManifest {
        schema: crate::datastore::LOG_SCHEMA.to_string(),
        config: config.clone(),
        asset_hashes: ctx.assets.hashes(),
        seeds: BTreeMap::from([
            ("split".to_string(), split.seed),
            ("gateway".to_string(), config.gateway.seed),
        ]),
        split_generator: split.generator.clone(),
        history: state.history.clone(),
        snapshots,
        final_versions: state.prompts.versions(),
        stop_reason,
    };
    Ok(OptimizationRun {
        prompts: state.prompts,
        manifest,
        log_records,
    })
}
