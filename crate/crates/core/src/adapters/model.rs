use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ProviderError;
use crate::protocol::{PromptBundle, PromptSurface};

/// A multimodal chat model. Implementations must be total: text or a typed error.
pub trait ModelProvider: Send + Sync {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, ProviderError>;
}

impl<P: ModelProvider + ?Sized> ModelProvider for &P {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        (**self).complete(bundle)
    }
}

impl<P: ModelProvider + ?Sized> ModelProvider for Box<P> {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        (**self).complete(bundle)
    }
}

/// Condition under which a scripted reply may be used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    Any,
    /// Zero-based index of the call on this provider.
    CallIndex(usize),
    Surface(PromptSurface),
    /// Substring of the system or user text.
    Contains(String),
}

impl MatchRule {
    fn matches(&self, call: usize, bundle: &PromptBundle) -> bool {
        match self {
            MatchRule::Any => true,
            MatchRule::CallIndex(i) => *i == call,
            MatchRule::Surface(s) => *s == bundle.surface,
            MatchRule::Contains(needle) => bundle.system_text.contains(needle) || bundle.user_text.contains(needle),
        }
    }

    fn describe(&self) -> String {
        match self {
            MatchRule::Any => "any call".into(),
            MatchRule::CallIndex(i) => format!("call index {i}"),
            MatchRule::Surface(s) => format!("surface {s}"),
            MatchRule::Contains(n) => format!("prompt containing {n:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match", default = "any_rule")]
    pub rule: MatchRule,
    pub reply: String,
}

fn any_rule() -> MatchRule {
    MatchRule::Any
}

impl ScriptEntry {
    pub fn any(reply: impl Into<String>) -> Self {
        ScriptEntry { rule: MatchRule::Any, reply: reply.into() }
    }

    pub fn on(surface: PromptSurface, reply: impl Into<String>) -> Self {
        ScriptEntry { rule: MatchRule::Surface(surface), reply: reply.into() }
    }
}

/// One call as seen by a provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub surface: PromptSurface,
    pub digest: String,
    pub image_labels: Vec<String>,
    pub system_text: String,
    pub user_text: String,
    pub reply: Result<String, ProviderError>,
}

impl CallRecord {
    fn new(bundle: &PromptBundle, reply: &Result<String, ProviderError>) -> Self {
        CallRecord {
            surface: bundle.surface,
            digest: bundle.digest(),
            image_labels: bundle.images.iter().map(|i| i.label.clone()).collect(),
            system_text: bundle.system_text.clone(),
            user_text: bundle.user_text.clone(),
            reply: reply.clone(),
        }
    }
}

struct ScriptState {
    next: usize,
    calls: usize,
    log: Vec<(String, String)>,
}

/// Replies consumed strictly in order; a call that does not match the next entry is an error.
pub struct ScriptedProvider {
    entries: Vec<ScriptEntry>,
    state: Mutex<ScriptState>,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        ScriptedProvider { entries, state: Mutex::new(ScriptState { next: 0, calls: 0, log: Vec::new() }) }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    /// (bundle digest, reply) for every answered call.
    pub fn call_log(&self) -> Vec<(String, String)> {
        self.state.lock().expect("script state").log.clone()
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.state.lock().expect("script state").next
    }
}

impl ModelProvider for ScriptedProvider {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        let mut st = self.state.lock().expect("script state");
        let call = st.calls;
        st.calls += 1;
        let Some(entry) = self.entries.get(st.next) else {
            return Err(ProviderError::Exhausted { call, surface: bundle.surface.to_string() });
        };
        if !entry.rule.matches(call, bundle) {
            return Err(ProviderError::Unmatched {
                call,
                surface: bundle.surface.to_string(),
                entry: st.next,
                expected: entry.rule.describe(),
            });
        }
        st.next += 1;
        st.log.push((bundle.digest(), entry.reply.clone()));
        Ok(entry.reply.clone())
    }
}

/// A reusable reply rule: all conditions must hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(default)]
    pub surface: Option<PromptSurface>,
    #[serde(default)]
    pub contains: Vec<String>,
    pub reply: String,
}

/// First matching rule answers; rules are never consumed.
pub struct RuleProvider {
    rules: Vec<Rule>,
    calls: Mutex<usize>,
}

impl RuleProvider {
    pub fn new(rules: Vec<Rule>) -> Self {
        RuleProvider { rules, calls: Mutex::new(0) }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }
}

impl ModelProvider for RuleProvider {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        let call = {
            let mut c = self.calls.lock().expect("rule counter");
            *c += 1;
            *c - 1
        };
        self.rules
            .iter()
            .find(|r| {
                r.surface.is_none_or(|s| s == bundle.surface)
                    && r.contains.iter().all(|n| bundle.system_text.contains(n) || bundle.user_text.contains(n))
            })
            .map(|r| r.reply.clone())
            .ok_or(ProviderError::NoRule { call, surface: bundle.surface.to_string() })
    }
}

/// Replays recorded (surface, reply) pairs in order.
pub struct ReplayProvider {
    replies: Vec<(PromptSurface, String)>,
    next: Mutex<usize>,
}

impl ReplayProvider {
    pub fn new(replies: Vec<(PromptSurface, String)>) -> Self {
        ReplayProvider { replies, next: Mutex::new(0) }
    }

    pub fn consumed(&self) -> usize {
        *self.next.lock().expect("replay cursor")
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl ModelProvider for ReplayProvider {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        let mut next = self.next.lock().expect("replay cursor");
        let call = *next;
        let Some((surface, reply)) = self.replies.get(call) else {
            return Err(ProviderError::Exhausted { call, surface: bundle.surface.to_string() });
        };
        if *surface != bundle.surface {
            return Err(ProviderError::Unmatched {
                call,
                surface: bundle.surface.to_string(),
                entry: call,
                expected: format!("surface {surface}"),
            });
        }
        *next += 1;
        Ok(reply.clone())
    }
}

/// Wraps a provider and keeps every bundle it was asked to complete.
pub struct RecordingProvider<P> {
    inner: P,
    calls: Mutex<Vec<CallRecord>>,
}

impl<P: ModelProvider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider { inner, calls: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("recording").clone()
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: ModelProvider> ModelProvider for RecordingProvider<P> {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        let reply = self.inner.complete(bundle);
        self.calls.lock().expect("recording").push(CallRecord::new(bundle, &reply));
        reply
    }
}
