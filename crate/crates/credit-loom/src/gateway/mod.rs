//! The single choke point for text completions.
//!
//! Every completion in the system — role turns, aggregation, critics, judges,
//! optimizer rewrites — flows through [`Gateway::complete`]. The gateway runs
//! in exactly one backend mode (live HTTP, seeded synthetic world, or replay)
//! and can layer a record/replay cache over the backend. Requests are
//! identified by a stable fingerprint over all request fields, so equal
//! requests share cache entries and synthetic behavior while distinct callers
//! never alias (the tag is part of the fingerprint).

mod cache;
mod http;
mod synthetic;

pub use cache::{CacheMode, ReplayCache};
pub use http::HttpClient;
pub use synthetic::{
    synthesize_utterance, synthetic_instances, SyntheticProfile, SyntheticWorld, UpliftRule,
    OPTIMIZED_MARKER,
};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which subsystem issued a completion request. Closed enumeration; part of
/// the cache key so critic calls never alias agent calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallerKind {
    Role,
    Aggregator,
    Critic,
    Judge,
    Optimizer,
}

/// Caller label plus addressing fields. The addressing lets the synthetic
/// backend resolve which competence, reliability, and gold label apply; live
/// and replay backends carry it only as part of the fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTag {
    pub caller: CallerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
}

impl CallTag {
    pub fn new(caller: CallerKind) -> Self {
        CallTag {
            caller,
            role_id: None,
            round: None,
            instance_id: None,
        }
    }

    pub fn role(mut self, role_id: impl Into<String>) -> Self {
        self.role_id = Some(role_id.into());
        self
    }

    pub fn round(mut self, round: u32) -> Self {
        self.round = Some(round);
        self
    }

    pub fn instance(mut self, instance_id: impl Into<String>) -> Self {
        self.instance_id = Some(instance_id.into());
        self
    }
}

/// One completion request. Texts must be non-empty; the fingerprint covers
/// every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: CallTag,
}

impl CompletionRequest {
    /// Stable identity of this request: hex SHA-256 over the canonical JSON
    /// serialization. Equal requests collide; any field change separates.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("request serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

/// Anything that can serve completions. Implemented by [`Gateway`] and by
/// test doubles.
pub trait CompletionPort: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String>;
}

/// The configured backend behind the gateway.
pub enum Backend {
    Live(HttpClient),
    Synthetic(SyntheticWorld),
    /// Replay-strict: no backend at all; misses are errors.
    None,
}

/// Monotonic counters exposed for tests and cost reporting.
#[derive(Debug, Default)]
pub struct CallCounters {
    served: AtomicU64,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

/// Snapshot of the counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallStats {
    /// Completions returned to callers.
    pub served: u64,
    /// Backend invocations (network calls in live mode, synthetic draws otherwise).
    pub backend_calls: u64,
    /// Completions answered from the cache.
    pub cache_hits: u64,
}

pub struct Gateway {
    backend: Backend,
    cache: Option<ReplayCache>,
    retries: u32,
    backoff: Duration,
    min_interval: Option<Duration>,
    budget: Option<u64>,
    counters: CallCounters,
    last_call: Mutex<Option<Instant>>,
}

impl Gateway {
    fn new(backend: Backend) -> Self {
        Gateway {
            backend,
            cache: None,
            retries: 2,
            backoff: Duration::from_millis(250),
            min_interval: None,
            budget: None,
            counters: CallCounters::default(),
            last_call: Mutex::new(None),
        }
    }

    /// Gateway over the seeded synthetic world.
    pub fn synthetic(world: SyntheticWorld) -> Self {
        Gateway::new(Backend::Synthetic(world))
    }

    /// Gateway over a live OpenAI-compatible endpoint.
    pub fn live(client: HttpClient) -> Self {
        Gateway::new(Backend::Live(client))
    }

    /// Replay-strict gateway: served exclusively from `cache`, never
    /// touching any backend.
    pub fn replay_strict(cache: ReplayCache) -> Self {
        let mut g = Gateway::new(Backend::None);
        g.cache = Some(cache);
        g
    }

    /// Layers a record or replay-fallthrough cache over the backend.
    pub fn with_cache(mut self, cache: ReplayCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Retry count for live completions (replay and synthetic never retry).
    pub fn with_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    /// Token-bucket style pacing for live calls; `rps <= 0` disables.
    pub fn with_rate_limit(mut self, requests_per_second: f64) -> Self {
        self.min_interval =
            (requests_per_second > 0.0).then(|| Duration::from_secs_f64(1.0 / requests_per_second));
        self
    }

    /// Hard cap on backend invocations; exceeding it fails with
    /// [`Error::BudgetExceeded`]. Cache hits are free.
    pub fn with_budget(mut self, max_backend_calls: u64) -> Self {
        self.budget = (max_backend_calls > 0).then_some(max_backend_calls);
        self
    }

    pub fn stats(&self) -> CallStats {
        CallStats {
            served: self.counters.served.load(Ordering::Relaxed),
            backend_calls: self.counters.backend_calls.load(Ordering::Relaxed),
            cache_hits: self.counters.cache_hits.load(Ordering::Relaxed),
        }
    }

    fn pace(&self) {
        let Some(interval) = self.min_interval else {
            return;
        };
        let mut last = self.last_call.lock().expect("rate limiter lock");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < interval {
                std::thread::sleep(interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn call_backend(&self, request: &CompletionRequest, fingerprint: &str) -> Result<String> {
        if let Some(limit) = self.budget {
            if self.counters.backend_calls.load(Ordering::Relaxed) >= limit {
                return Err(Error::BudgetExceeded { limit });
            }
        }
        self.counters.backend_calls.fetch_add(1, Ordering::Relaxed);
        match &self.backend {
            Backend::Synthetic(world) => world.complete_keyed(request, fingerprint),
            Backend::Live(client) => {
                self.pace();
                let attempts = 1 + self.retries;
                let mut last_err = String::new();
                for attempt in 0..attempts {
                    if attempt > 0 {
                        std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
                    }
                    match client.complete_once(request) {
                        Ok(text) => return Ok(text),
                        Err(Error::NetworkFailure { detail, .. }) => last_err = detail,
                        Err(other) => return Err(other),
                    }
                }
                Err(Error::NetworkFailure {
                    attempts,
                    detail: last_err,
                })
            }
            Backend::None => Err(Error::CacheMiss {
                fingerprint: fingerprint.to_string(),
            }),
        }
    }
}

impl CompletionPort for Gateway {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let fingerprint = request.fingerprint();
        if let Some(cache) = &self.cache {
            if let Some(text) = cache.get(&fingerprint) {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                self.counters.served.fetch_add(1, Ordering::Relaxed);
                return Ok(text);
            }
            if cache.mode() == CacheMode::ReplayStrict {
                return Err(Error::CacheMiss { fingerprint });
            }
            let text = self.call_backend(request, &fingerprint)?;
            cache.put(&fingerprint, request, &text)?;
            self.counters.served.fetch_add(1, Ordering::Relaxed);
            return Ok(text);
        }
        let text = self.call_backend(request, &fingerprint)?;
        self.counters.served.fetch_add(1, Ordering::Relaxed);
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::OptionLabel;
    use std::collections::BTreeMap;

    fn request(user: &str) -> CompletionRequest {
        CompletionRequest {
            system_text: "system".into(),
            user_text: user.into(),
            temperature: 0.7,
            max_tokens: 64,
            tag: CallTag::new(CallerKind::Role)
                .role("planner")
                .round(1)
                .instance("q1"),
        }
    }

    #[test]
    fn fingerprint_is_stable_and_field_sensitive() {
        let a = request("hello");
        assert_eq!(a.fingerprint(), a.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());

        let mut b = request("hello");
        b.temperature = 0.0;
        assert_ne!(a.fingerprint(), b.fingerprint());

        let mut c = request("hello");
        c.tag.caller = CallerKind::Critic;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn rate_limit_paces_live_calls() {
        // An unroutable client: pacing happens before the send, so timing is
        // observable even though every call fails.
        let client = HttpClient::new("http://127.0.0.1:1", "m");
        let gate = Gateway::live(client)
            .with_retries(0, Duration::from_millis(1))
            .with_rate_limit(50.0);
        let started = Instant::now();
        let _ = gate.complete(&request("one"));
        let _ = gate.complete(&request("two"));
        let _ = gate.complete(&request("three"));
        assert!(
            started.elapsed() >= Duration::from_millis(35),
            "three calls at 50 rps must span roughly two 20ms intervals"
        );
    }

    #[test]
    fn budget_is_enforced_on_backend_calls() {
        let world = SyntheticWorld::new(
            SyntheticProfile {
                role_competence: BTreeMap::from([("planner".to_string(), 1.0)]),
                aggregator_reliability: BTreeMap::new(),
                judge_noise: 0.0,
                seed: 1,
            },
            BTreeMap::from([("q1".to_string(), OptionLabel::B)]),
        );
        let gate = Gateway::synthetic(world).with_budget(2);
        assert!(gate.complete(&request("one")).is_ok());
        assert!(gate.complete(&request("two")).is_ok());
        assert!(matches!(
            gate.complete(&request("three")),
            Err(Error::BudgetExceeded { limit: 2 })
        ));
    }
}
