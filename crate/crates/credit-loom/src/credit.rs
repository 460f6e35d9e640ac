//! Structural (per-role) and temporal (per-round) credit state.
//!
//! Role credit fuses the turn critic's quality score with the round judge's
//! contribution score and averages the fused observations. Round credit is a
//! per-round survival mass `alpha` that starts at 1.0 and decays
//! multiplicatively on *informative failures*: rounds where the aggregated
//! state was wrong although at least one agent that round was correct —
//! direct evidence the aggregator lost signal. Selection of weak components
//! is deterministic, with lexicographic tie-breaks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::answer::OptionLabel;
use crate::critic::EvalRecord;
use crate::error::{Error, Result};

/// Knobs for credit fusion, decay, and weak-component selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditConfig {
    /// Fusion weight between self-quality and peer contribution.
    pub lambda: f64,
    /// Decay rate applied to `alpha` per informative failure.
    pub ema_rate: f64,
    /// Rounds with `alpha` below this threshold are rewrite candidates.
    pub threshold: f64,
    /// Minimum informative failures before a round may be selected.
    pub buffer_min: u32,
    /// How many lowest-credit roles a structural pass rewrites.
    pub bottom_k: u32,
    /// Alternative to the multiplicative failure decay: move `alpha` toward
    /// the success indicator on every classified event.
    pub ema_mode: EmaMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmaMode {
    /// `alpha <- (1 - ema_rate) * alpha` on informative failures only.
    #[default]
    FailureDecay,
    /// `alpha <- (1 - ema_rate) * alpha + ema_rate * success` on every event.
    Symmetric,
}

impl Default for CreditConfig {
    fn default() -> Self {
        CreditConfig {
            lambda: 0.5,
            ema_rate: 0.2,
            threshold: 0.7,
            buffer_min: 5,
            bottom_k: 2,
            ema_mode: EmaMode::FailureDecay,
        }
    }
}

impl CreditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::RangeViolation(format!("lambda {}", self.lambda)));
        }
        if !(self.ema_rate > 0.0 && self.ema_rate <= 1.0) {
            return Err(Error::RangeViolation(format!("ema_rate {}", self.ema_rate)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::RangeViolation(format!(
                "threshold {}",
                self.threshold
            )));
        }
        if self.buffer_min == 0 {
            return Err(Error::RangeViolation("buffer_min 0".into()));
        }
        if self.bottom_k == 0 {
            return Err(Error::RangeViolation("bottom_k 0".into()));
        }
        Ok(())
    }
}

/// Convex fusion of self-quality `q` and peer score `p`.
pub fn fuse_role_signal(q: f64, p: f64, lambda: f64) -> Result<f64> {
    for (name, v) in [("q", q), ("p", p), ("lambda", lambda)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::RangeViolation(format!("{name} = {v}")));
        }
    }
    Ok(lambda * q + (1.0 - lambda) * p)
}

/// Arithmetic mean of fused observations; the role's structural credit.
pub fn role_credit(observations: &[f64]) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::EmptyObservations);
    }
    Ok(observations.iter().sum::<f64>() / observations.len() as f64)
}

/// What one (instance, round) pair contributed to temporal credit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundEventKind {
    /// The aggregated state named the gold answer.
    Success,
    /// The aggregate was wrong although at least one agent was correct.
    InformativeFailure,
    /// The aggregate was wrong and no agent was correct.
    UninformativeFailure,
}

/// Evidence kept for informative failures: who said what, what the
/// aggregator concluded, and what it should have preserved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureExemplar {
    pub instance_id: String,
    pub round_index: u32,
    pub gold: OptionLabel,
    pub agg_answer: OptionLabel,
    pub agent_answers: BTreeMap<String, OptionLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEvent {
    pub instance_id: String,
    pub round_index: u32,
    pub kind: RoundEventKind,
    /// Present exactly when `kind` is `InformativeFailure`.
    pub exemplar: Option<FailureExemplar>,
}

/// Classifies one aggregation outcome against gold and the agent answers.
pub fn classify_event(
    gold: OptionLabel,
    agg_answer: OptionLabel,
    agent_answers: &BTreeMap<String, OptionLabel>,
) -> RoundEventKind {
    if agg_answer == gold {
        RoundEventKind::Success
    } else if agent_answers.values().any(|&a| a == gold) {
        RoundEventKind::InformativeFailure
    } else {
        RoundEventKind::UninformativeFailure
    }
}

/// Builds the full event, attaching the failure exemplar when informative.
pub fn make_event(
    instance_id: impl Into<String>,
    round_index: u32,
    gold: OptionLabel,
    agg_answer: OptionLabel,
    agent_answers: BTreeMap<String, OptionLabel>,
) -> RoundEvent {
    let instance_id = instance_id.into();
    let kind = classify_event(gold, agg_answer, &agent_answers);
    let exemplar = (kind == RoundEventKind::InformativeFailure).then(|| FailureExemplar {
        instance_id: instance_id.clone(),
        round_index,
        gold,
        agg_answer,
        agent_answers,
    });
    RoundEvent {
        instance_id,
        round_index,
        kind,
        exemplar,
    }
}

/// Fused observations and critic records per role, for one evaluation epoch.
#[derive(Debug, Clone, Default)]
pub struct RoleCreditState {
    observations: BTreeMap<String, Vec<f64>>,
    records: BTreeMap<String, Vec<EvalRecord>>,
}

impl RoleCreditState {
    pub fn record_observation(&mut self, role_id: &str, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::RangeViolation(format!(
                "observation {value} for role '{role_id}'"
            )));
        }
        self.observations
            .entry(role_id.to_string())
            .or_default()
            .push(value);
        Ok(())
    }

    pub fn record_eval(&mut self, record: EvalRecord) {
        self.records
            .entry(record.role_id.clone())
            .or_default()
            .push(record);
    }

    /// Structural credit per role: the mean of its fused observations.
    pub fn credits(&self) -> Result<BTreeMap<String, f64>> {
        self.observations
            .iter()
            .map(|(role, obs)| Ok((role.clone(), role_credit(obs)?)))
            .collect()
    }

    pub fn records_for(&self, role_id: &str) -> &[EvalRecord] {
        self.records.get(role_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn observation_count(&self, role_id: &str) -> usize {
        self.observations.get(role_id).map_or(0, Vec::len)
    }
}

/// Per-round temporal credit: `alpha` plus the informative-failure buffer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundCreditState {
    rounds: BTreeMap<u32, RoundCredit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RoundCredit {
    alpha: f64,
    buffer: Vec<FailureExemplar>,
}

impl RoundCreditState {
    /// Fresh state with `alpha = 1.0` for rounds `1..=num_rounds`.
    pub fn new(num_rounds: u32) -> Self {
        RoundCreditState {
            rounds: (1..=num_rounds)
                .map(|t| {
                    (
                        t,
                        RoundCredit {
                            alpha: 1.0,
                            buffer: Vec::new(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn alpha(&self, round: u32) -> f64 {
        self.rounds.get(&round).map_or(1.0, |r| r.alpha)
    }

    pub fn buffer_len(&self, round: u32) -> usize {
        self.rounds.get(&round).map_or(0, |r| r.buffer.len())
    }

    pub fn buffer(&self, round: u32) -> &[FailureExemplar] {
        self.rounds
            .get(&round)
            .map(|r| r.buffer.as_slice())
            .unwrap_or(&[])
    }

    pub fn round_indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.rounds.keys().copied()
    }

    /// Applies one classified event.
    pub fn update(&mut self, event: &RoundEvent, config: &CreditConfig) {
        let Some(round) = self.rounds.get_mut(&event.round_index) else {
            return;
        };
        match config.ema_mode {
            EmaMode::FailureDecay => {
                if event.kind == RoundEventKind::InformativeFailure {
                    round.alpha *= 1.0 - config.ema_rate;
                }
            }
            EmaMode::Symmetric => {
                let target = if event.kind == RoundEventKind::Success {
                    1.0
                } else {
                    0.0
                };
                round.alpha = (1.0 - config.ema_rate) * round.alpha + config.ema_rate * target;
            }
        }
        if event.kind == RoundEventKind::InformativeFailure {
            if let Some(ex) = &event.exemplar {
                round.buffer.push(ex.clone());
            }
        }
    }

    /// Applies a batch of events in deterministic order (instance id, then
    /// round), so the order-sensitive decay reproduces regardless of how the
    /// events were produced.
    pub fn apply_events(&mut self, events: &[RoundEvent], config: &CreditConfig) {
        let mut ordered: Vec<&RoundEvent> = events.iter().collect();
        ordered
            .sort_by(|a, b| (&a.instance_id, a.round_index).cmp(&(&b.instance_id, b.round_index)));
        for event in ordered {
            self.update(event, config);
        }
    }

    /// Removes and returns a round's failure buffer (called when the
    /// optimizer has consumed the evidence).
    pub fn drain_buffer(&mut self, round: u32) -> Vec<FailureExemplar> {
        self.rounds
            .get_mut(&round)
            .map(|r| std::mem::take(&mut r.buffer))
            .unwrap_or_default()
    }

    pub fn alphas(&self) -> BTreeMap<u32, f64> {
        self.rounds.iter().map(|(t, r)| (*t, r.alpha)).collect()
    }

    pub fn buffer_lens(&self) -> BTreeMap<u32, u32> {
        self.rounds
            .iter()
            .map(|(t, r)| (*t, r.buffer.len() as u32))
            .collect()
    }
}

/// The `min(K, N)` lowest-credit roles, ties broken by ascending role id.
/// Pure in its inputs and stable under enumeration order of the map.
pub fn select_weak_roles(credits: &BTreeMap<String, f64>, k: u32) -> Vec<String> {
    let mut ranked: Vec<(&String, f64)> = credits.iter().map(|(r, &c)| (r, c)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(k as usize)
        .map(|(r, _)| r.clone())
        .collect()
}

/// Every role whose credit falls strictly below `threshold` (the
/// threshold-based alternative to bottom-K), sorted by ascending credit.
pub fn select_weak_roles_below(credits: &BTreeMap<String, f64>, threshold: f64) -> Vec<String> {
    let mut ranked: Vec<(&String, f64)> = credits
        .iter()
        .filter(|(_, &c)| c < threshold)
        .map(|(r, &c)| (r, c))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().map(|(r, _)| r.clone()).collect()
}

/// Rounds whose `alpha` fell below `tau` with at least `m` buffered
/// informative failures, in ascending round order.
pub fn select_weak_rounds(state: &RoundCreditState, tau: f64, m: u32) -> Vec<u32> {
    state
        .rounds
        .iter()
        .filter(|(_, r)| r.alpha < tau && r.buffer.len() as u32 >= m)
        .map(|(t, _)| *t)
        .collect()
}

/// Credit values frozen at the end of one optimizer iteration, for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditSnapshot {
    pub iteration: u32,
    pub role_credits: BTreeMap<String, f64>,
    pub round_alpha: BTreeMap<u32, f64>,
    pub round_buffer: BTreeMap<u32, u32>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn answers(pairs: &[(&str, OptionLabel)]) -> BTreeMap<String, OptionLabel> {
        pairs.iter().map(|(r, a)| (r.to_string(), *a)).collect()
    }

    #[test]
    fn fusion_arithmetic() {
        assert!((fuse_role_signal(0.8, 0.6, 0.5).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(fuse_role_signal(0.8, 0.6, 1.0).unwrap(), 0.8);
        assert_eq!(fuse_role_signal(0.8, 0.6, 0.0).unwrap(), 0.6);
        assert_eq!(fuse_role_signal(1.0, 1.0, 0.3).unwrap(), 1.0);
        assert!(fuse_role_signal(1.2, 0.5, 0.5).is_err());
    }

    #[test]
    fn role_credit_is_the_mean() {
        assert!((role_credit(&[0.5, 0.7, 0.9]).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(role_credit(&[0.42]).unwrap(), 0.42);
        assert!(matches!(role_credit(&[]), Err(Error::EmptyObservations)));
    }

    #[test]
    fn event_classification() {
        use OptionLabel::*;
        assert_eq!(
            classify_event(B, C, &answers(&[("a", A), ("b", B), ("c", D)])),
            RoundEventKind::InformativeFailure
        );
        assert_eq!(
            classify_event(B, B, &answers(&[("a", A), ("b", C), ("c", D)])),
            RoundEventKind::Success
        );
        assert_eq!(
            classify_event(B, C, &answers(&[("a", A), ("b", C), ("c", D)])),
            RoundEventKind::UninformativeFailure
        );
    }

    #[test]
    fn alpha_decays_only_on_informative_failures() {
        let config = CreditConfig::default();
        let mut state = RoundCreditState::new(2);
        let informative = make_event(
            "i1",
            1,
            OptionLabel::B,
            OptionLabel::C,
            answers(&[("a", OptionLabel::B)]),
        );
        for _ in 0..3 {
            state.update(&informative, &config);
        }
        assert!((state.alpha(1) - 0.512).abs() < 1e-12);
        assert_eq!(state.buffer_len(1), 3);

        let success = make_event(
            "i2",
            2,
            OptionLabel::B,
            OptionLabel::B,
            answers(&[("a", OptionLabel::B)]),
        );
        let uninformative = make_event(
            "i3",
            2,
            OptionLabel::B,
            OptionLabel::C,
            answers(&[("a", OptionLabel::D)]),
        );
        state.update(&success, &config);
        state.update(&uninformative, &config);
        assert_eq!(state.alpha(2), 1.0);
        assert_eq!(state.buffer_len(2), 0);
    }

    #[test]
    fn symmetric_mode_recovers_on_success() {
        let config = CreditConfig {
            ema_mode: EmaMode::Symmetric,
            ..CreditConfig::default()
        };
        let mut state = RoundCreditState::new(1);
        let failure = make_event(
            "i1",
            1,
            OptionLabel::B,
            OptionLabel::C,
            answers(&[("a", OptionLabel::B)]),
        );
        state.update(&failure, &config);
        assert!((state.alpha(1) - 0.8).abs() < 1e-12);
        let success = make_event(
            "i2",
            1,
            OptionLabel::B,
            OptionLabel::B,
            answers(&[("a", OptionLabel::B)]),
        );
        state.update(&success, &config);
        assert!((state.alpha(1) - (0.8 * 0.8 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn batch_application_sorts_by_instance_then_round() {
        let config = CreditConfig::default();
        let events = vec![
            make_event(
                "z",
                1,
                OptionLabel::B,
                OptionLabel::C,
                answers(&[("a", OptionLabel::B)]),
            ),
            make_event(
                "a",
                1,
                OptionLabel::B,
                OptionLabel::C,
                answers(&[("a", OptionLabel::B)]),
            ),
        ];
        let mut forward = RoundCreditState::new(1);
        forward.apply_events(&events, &config);
        let mut reversed = RoundCreditState::new(1);
        let mut rev = events.clone();
        rev.reverse();
        reversed.apply_events(&rev, &config);
        assert_eq!(forward.alpha(1), reversed.alpha(1));
        assert_eq!(
            forward.buffer(1)[0].instance_id,
            "a",
            "sorted application puts the smallest instance id first"
        );
        assert_eq!(reversed.buffer(1)[0].instance_id, "a");
    }

    #[test]
    fn weak_role_selection_rules() {
        let credits = BTreeMap::from([
            ("a".to_string(), 0.9),
            ("b".to_string(), 0.4),
            ("c".to_string(), 0.6),
        ]);
        assert_eq!(select_weak_roles(&credits, 2), vec!["b", "c"]);

        let tied = BTreeMap::from([
            ("a".to_string(), 0.5),
            ("b".to_string(), 0.5),
            ("c".to_string(), 0.9),
        ]);
        assert_eq!(select_weak_roles(&tied, 1), vec!["a"]);
        assert_eq!(select_weak_roles(&tied, 5).len(), 3);

        assert_eq!(select_weak_roles_below(&credits, 0.7), vec!["b", "c"]);
        assert!(select_weak_roles_below(&credits, 0.1).is_empty());
    }

    #[test]
    fn weak_round_selection_needs_both_conditions() {
        let config = CreditConfig {
            ema_rate: 0.2,
            ..CreditConfig::default()
        };
        let mut state = RoundCreditState::new(3);
        // Round 2: six informative failures -> alpha 0.262, buffer 6.
        for i in 0..6 {
            let e = make_event(
                format!("i{i}"),
                2,
                OptionLabel::B,
                OptionLabel::C,
                answers(&[("a", OptionLabel::B)]),
            );
            state.update(&e, &config);
        }
        // Round 3: three informative failures -> alpha 0.512 < 0.7 but buffer 3 < 5.
        for i in 0..3 {
            let e = make_event(
                format!("j{i}"),
                3,
                OptionLabel::B,
                OptionLabel::C,
                answers(&[("a", OptionLabel::B)]),
            );
            state.update(&e, &config);
        }
        assert_eq!(select_weak_rounds(&state, 0.7, 5), vec![2]);
        assert_eq!(select_weak_rounds(&state, 0.1, 1), Vec::<u32>::new());

        let drained = state.drain_buffer(2);
        assert_eq!(drained.len(), 6);
        assert_eq!(state.buffer_len(2), 0);
        assert!(select_weak_rounds(&state, 0.7, 5).is_empty());
    }
}
