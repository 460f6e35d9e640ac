//! Run configuration: a TOML file with `[topology]`, `[credit]`,
//! `[optimizer]`, `[gateway]`, and `[decision]` sections. Every key has a
//! default, so an empty file is a valid configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::credit::{CreditConfig, EmaMode};
use crate::datastore::{load_aggregator_prompts, load_role_prompts, TaskInstance};
use crate::epoch::{EvaluationSettings, RoundsFilter};
use crate::error::{Error, Result};
use crate::gateway::{
    CacheMode, Gateway, HttpClient, ReplayCache, SyntheticProfile, SyntheticWorld,
};
use crate::optimizer::{OptimizerConfig, RoleSelection};
use crate::protocol::{DecisionMode, DecodingSettings, PromptSet, SystemTopology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub topology: TopologySection,
    pub credit: CreditSection,
    pub optimizer: OptimizerSection,
    pub gateway: GatewaySection,
    pub decision: DecisionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub roles: Vec<String>,
    pub rounds: u32,
    /// Directory with one `<role_id>.txt` initial prompt per role; built-in
    /// generic prompts are used when unset.
    pub role_prompt_dir: Option<PathBuf>,
    /// Directory with `round<t>.txt` (or `default.txt`) aggregator prompts.
    pub aggregator_prompt_dir: Option<PathBuf>,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            roles: vec!["planner".into(), "solver".into(), "skeptic".into()],
            rounds: 3,
            role_prompt_dir: None,
            aggregator_prompt_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreditSection {
    pub lambda: f64,
    pub ema_rate: f64,
    pub threshold: f64,
    pub buffer_min: u32,
    pub bottom_k: u32,
    /// `failure_decay` (default) or `symmetric`.
    pub ema_mode: EmaMode,
    /// `final` (default) or `all`: which rounds the turn critic grades.
    pub rounds_filter: RoundsFilter,
    /// `binary` (default) or `critic`: how aggregation quality is scored.
    pub temporal_quality: TemporalQuality,
    /// `bottom_k` (default) or `threshold`: structural selection rule.
    pub selection: SelectionMode,
    /// Credit cutoff used when `selection = "threshold"`.
    pub role_threshold: f64,
}

impl Default for CreditSection {
    fn default() -> Self {
        CreditSection {
            lambda: 0.5,
            ema_rate: 0.2,
            threshold: 0.7,
            buffer_min: 5,
            bottom_k: 2,
            ema_mode: EmaMode::FailureDecay,
            rounds_filter: RoundsFilter::Final,
            temporal_quality: TemporalQuality::Binary,
            selection: SelectionMode::BottomK,
            role_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TemporalQuality {
    #[default]
    Binary,
    Critic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    BottomK,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_iterations: u32,
    pub epsilon_points: f64,
    pub patience: u32,
    pub reuse_rollouts: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            max_iterations: 5,
            epsilon_points: 0.5,
            patience: 2,
            reuse_rollouts: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    /// `live`, `synthetic`, or `replay`.
    pub mode: GatewayModeKey,
    pub base_url: String,
    pub model: String,
    pub role_temperature: f64,
    pub eval_temperature: f64,
    pub max_tokens: u32,
    pub retries: u32,
    pub backoff_ms: u64,
    pub requests_per_second: f64,
    /// `off`, `record`, `replay-strict`, or `replay-fallthrough`.
    pub cache: CacheKey,
    pub cache_path: PathBuf,
    /// Maximum backend calls; 0 means unlimited.
    pub budget: u64,
    // Synthetic-world knobs.
    pub seed: u64,
    pub default_competence: f64,
    pub default_reliability: f64,
    pub role_competence: BTreeMap<String, f64>,
    pub aggregator_reliability: BTreeMap<String, f64>,
    pub judge_noise: f64,
    pub anchor: f64,
}

impl Default for GatewaySection {
    fn default() -> Self {
        GatewaySection {
            mode: GatewayModeKey::Synthetic,
            base_url: "http://localhost:8000/v1".into(),
            model: "default-model".into(),
            role_temperature: 0.7,
            eval_temperature: 0.0,
            max_tokens: 512,
            retries: 2,
            backoff_ms: 250,
            requests_per_second: 0.0,
            cache: CacheKey::Off,
            cache_path: PathBuf::from("cache/completions.jsonl"),
            budget: 0,
            seed: 42,
            default_competence: 0.75,
            default_reliability: 0.9,
            role_competence: BTreeMap::new(),
            aggregator_reliability: BTreeMap::new(),
            judge_noise: 0.1,
            anchor: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GatewayModeKey {
    Live,
    #[default]
    Synthetic,
    Replay,
}

impl std::str::FromStr for GatewayModeKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "live" => Ok(GatewayModeKey::Live),
            "synthetic" => Ok(GatewayModeKey::Synthetic),
            "replay" => Ok(GatewayModeKey::Replay),
            other => Err(format!("unknown mode '{other}' (live|replay|synthetic)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CacheKey {
    #[default]
    Off,
    Record,
    ReplayStrict,
    ReplayFallthrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionSection {
    pub mode: DecisionMode,
}

impl Config {
    /// Loads and validates a config file. Relative paths inside the file
    /// are resolved against the file's own directory.
    pub fn load(path: &Path) -> Result<Config> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut config = Self::parse(&text)?;
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            let rebase = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            if let Some(dir) = &mut config.topology.role_prompt_dir {
                rebase(dir);
            }
            if let Some(dir) = &mut config.topology.aggregator_prompt_dir {
                rebase(dir);
            }
            rebase(&mut config.gateway.cache_path);
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Config> {
        let config: Config =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.credit_config().validate()?;
        if self.topology.roles.is_empty() || self.topology.rounds == 0 {
            return Err(Error::Config(
                "topology needs at least one role and one round".into(),
            ));
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<SystemTopology> {
        SystemTopology::new(self.topology.roles.clone(), self.topology.rounds)
    }

    pub fn credit_config(&self) -> CreditConfig {
        CreditConfig {
            lambda: self.credit.lambda,
            ema_rate: self.credit.ema_rate,
            threshold: self.credit.threshold,
            buffer_min: self.credit.buffer_min,
            bottom_k: self.credit.bottom_k,
            ema_mode: self.credit.ema_mode,
        }
    }

    pub fn decoding(&self) -> DecodingSettings {
        DecodingSettings {
            role_temperature: self.gateway.role_temperature,
            eval_temperature: self.gateway.eval_temperature,
            max_tokens: self.gateway.max_tokens,
        }
    }

    pub fn evaluation_settings(&self) -> EvaluationSettings {
        EvaluationSettings {
            decoding: self.decoding(),
            decision: self.decision.mode,
            credit: self.credit_config(),
            rounds_filter: self.credit.rounds_filter,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            max_iterations: self.optimizer.max_iterations,
            epsilon_points: self.optimizer.epsilon_points,
            patience: self.optimizer.patience,
            reuse_rollouts: self.optimizer.reuse_rollouts,
            role_selection: match self.credit.selection {
                SelectionMode::BottomK => RoleSelection::BottomK,
                SelectionMode::Threshold => RoleSelection::Threshold(self.credit.role_threshold),
            },
        }
    }

    /// Synthetic profile for `topology`, filling unlisted roles and rounds
    /// with the configured defaults.
    pub fn synthetic_profile(&self, topology: &SystemTopology) -> Result<SyntheticProfile> {
        let role_competence = topology
            .role_ids()
            .iter()
            .map(|r| {
                (
                    r.clone(),
                    self.gateway
                        .role_competence
                        .get(r)
                        .copied()
                        .unwrap_or(self.gateway.default_competence),
                )
            })
            .collect();
        let aggregator_reliability = topology
            .rounds()
            .map(|t| {
                (
                    t,
                    self.gateway
                        .aggregator_reliability
                        .get(&t.to_string())
                        .copied()
                        .unwrap_or(self.gateway.default_reliability),
                )
            })
            .collect();
        let profile = SyntheticProfile {
            role_competence,
            aggregator_reliability,
            judge_noise: self.gateway.judge_noise,
            seed: self.gateway.seed,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Builds the gateway for `mode` (the CLI `--mode` override or the
    /// configured one) over the given instances.
    pub fn build_gateway(
        &self,
        mode: GatewayModeKey,
        topology: &SystemTopology,
        instances: &[TaskInstance],
    ) -> Result<Gateway> {
        let cache =
            |required_mode: CacheMode| ReplayCache::open(&self.gateway.cache_path, required_mode);
        let gateway = match mode {
            GatewayModeKey::Replay => Gateway::replay_strict(cache(CacheMode::ReplayStrict)?),
            GatewayModeKey::Synthetic => {
                let profile = self.synthetic_profile(topology)?;
                let world = SyntheticWorld::for_instances(profile, instances)
                    .with_anchor(self.gateway.anchor);
                let g = Gateway::synthetic(world);
                match self.gateway.cache {
                    CacheKey::Off => g,
                    CacheKey::Record => g.with_cache(cache(CacheMode::Record)?),
                    CacheKey::ReplayStrict => g.with_cache(cache(CacheMode::ReplayStrict)?),
                    CacheKey::ReplayFallthrough => {
                        g.with_cache(cache(CacheMode::ReplayFallthrough)?)
                    }
                }
            }
            GatewayModeKey::Live => {
                let client = HttpClient::new(&self.gateway.base_url, &self.gateway.model);
                let g = Gateway::live(client)
                    .with_retries(
                        self.gateway.retries,
                        std::time::Duration::from_millis(self.gateway.backoff_ms),
                    )
                    .with_rate_limit(self.gateway.requests_per_second);
                match self.gateway.cache {
                    CacheKey::Off => g,
                    CacheKey::Record => g.with_cache(cache(CacheMode::Record)?),
                    CacheKey::ReplayStrict => g.with_cache(cache(CacheMode::ReplayStrict)?),
                    CacheKey::ReplayFallthrough => {
                        g.with_cache(cache(CacheMode::ReplayFallthrough)?)
                    }
                }
            }
        };
        Ok(if self.gateway.budget > 0 {
            gateway.with_budget(self.gateway.budget)
        } else {
            gateway
        })
    }

    /// Initial prompts: from the configured directories when set, otherwise
    /// the built-in generic templates.
    pub fn initial_prompts(&self, topology: &SystemTopology) -> Result<PromptSet> {
        let mut prompts = PromptSet::defaults(topology);
        if let Some(dir) = &self.topology.role_prompt_dir {
            prompts.roles = load_role_prompts(dir, topology)?;
        }
        if let Some(dir) = &self.topology.aggregator_prompt_dir {
            prompts.aggregators = load_aggregator_prompts(dir, topology)?;
        }
        Ok(prompts)
    }
}
