use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{CompletionRequest, LlmError, LlmProvider, PromptKind};

/// Canned responses keyed by prompt kind and request key.
///
/// Serialized as a JSON object of objects:
/// `{"reflection": {"loop-0": "..."}, "report": {"final": "..."}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Script {
    entries: BTreeMap<PromptKind, BTreeMap<String, String>>,
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kind: PromptKind, key: impl Into<String>, text: impl Into<String>) {
        self.entries
            .entry(kind)
            .or_default()
            .insert(key.into(), text.into());
    }

    pub fn with(mut self, kind: PromptKind, key: impl Into<String>, text: impl Into<String>) -> Self {
        self.insert(kind, key, text);
        self
    }

    pub fn get(&self, kind: PromptKind, key: &str) -> Option<&str> {
        self.entries.get(&kind)?.get(key).map(String::as_str)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn kinds(&self) -> impl Iterator<Item = PromptKind> + '_ {
        self.entries.keys().copied()
    }
}

/// Deterministic offline provider backed by a [`Script`].
#[derive(Debug)]
pub struct ScriptedProvider {
    script: Script,
    calls: Mutex<Vec<(PromptKind, String)>>,
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<(PromptKind, String)> {
        self.calls.lock().unwrap().clone()
    }
}

#[async_trait]
impl LlmProvider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn is_live(&self) -> bool {
        false
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let key = request.key().unwrap_or("").to_string();
        self.calls.lock().unwrap().push((request.kind, key.clone()));
        self.script
            .get(request.kind, &key)
            .map(str::to_string)
            .ok_or(LlmError::ScriptMiss {
                kind: request.kind,
                key,
            })
    }
}

/// Returns queued results in order regardless of the request; useful for
/// exercising retry and repair paths.
#[derive(Debug)]
pub struct SequenceProvider {
    responses: Mutex<VecDeque<Result<String, LlmError>>>,
    prompts: Mutex<Vec<String>>,
}

impl SequenceProvider {
    pub fn new(responses: Vec<Result<String, LlmError>>) -> Self {
        Self {
            responses: Mutex::new(responses.into()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.prompts.lock().unwrap().len()
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

#[async_trait]
impl LlmProvider for SequenceProvider {
    fn name(&self) -> &str {
        "sequence"
    }

    fn is_live(&self) -> bool {
        false
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(LlmError::Rejected("sequence exhausted".into())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn lookups_are_pure_and_misses_are_loud() {
        let script = Script::new().with(PromptKind::Reflection, "loop-2", "{\"research_complete\": true}");
        let provider = ScriptedProvider::new(script);
        let req = CompletionRequest::new(PromptKind::Reflection, "loop-2", "anything");
        let a = provider.complete(&req).await.unwrap();
        let b = provider.complete(&req).await.unwrap();
        assert_eq!(a, b);
        let miss = CompletionRequest::new(PromptKind::Reflection, "loop-3", "anything");
        assert_eq!(
            provider.complete(&miss).await,
            Err(LlmError::ScriptMiss {
                kind: PromptKind::Reflection,
                key: "loop-3".into()
            })
        );
    }

    #[test]
    fn script_json_shape() {
        let script = Script::from_json(r#"{"initial_plan": {"initial": "x"}, "report": {"final": "y"}}"#).unwrap();
        assert_eq!(script.get(PromptKind::InitialPlan, "initial"), Some("x"));
        assert_eq!(script.get(PromptKind::Report, "final"), Some("y"));
        assert!(Script::from_json(r#"{"bogus_kind": {}}"#).is_err());
    }
}
