use std::collections::VecDeque;
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;

use super::{AgentContext, Backend, BackendError, Reprompt};
use crate::gateway::{fixture_key, FixtureStore};
use crate::rng::GameRng;

/// Plays back a fixed list of utterances in order.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    lines: VecDeque<String>,
}

impl ScriptedBackend {
    pub fn new<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { lines: lines.into_iter().map(Into::into).collect() }
    }

    pub fn remaining(&self) -> usize {
        self.lines.len()
    }
}

impl Backend for ScriptedBackend {
    fn respond(
        &mut self,
        _context: &AgentContext,
        _reprompt: Option<&Reprompt>,
        _rng: &mut GameRng,
    ) -> Result<String, BackendError> {
        self.lines.pop_front().ok_or(BackendError::Exhausted)
    }
}

#[derive(Serialize)]
struct ContextFixtureKey<'a> {
    context: &'a AgentContext,
    reprompt: Option<&'a Reprompt>,
}

/// Fixture key of a backend call: hash of the serialized context plus any
/// pending re-prompt.
pub fn context_key(context: &AgentContext, reprompt: Option<&Reprompt>) -> String {
    fixture_key("utterance", &ContextFixtureKey { context, reprompt })
}

/// Wraps any backend and stores each utterance under its context key.
pub struct RecordingBackend<B> {
    inner: B,
    store: Arc<FixtureStore>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, store: Arc<FixtureStore>) -> Self {
        Self { inner, store }
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn respond(
        &mut self,
        context: &AgentContext,
        reprompt: Option<&Reprompt>,
        rng: &mut GameRng,
    ) -> Result<String, BackendError> {
        let text = self.inner.respond(context, reprompt, rng)?;
        let key = context_key(context, reprompt);
        let request = serde_json::to_value(ContextFixtureKey { context, reprompt })
            .expect("contexts serialize");
        self.store.put(&key, "utterance", request, Value::String(text.clone()))?;
        Ok(text)
    }
}

/// Serves utterances recorded by [`RecordingBackend`]; never consults the
/// generator.
pub struct ReplayBackend {
    store: Arc<FixtureStore>,
}

impl ReplayBackend {
    pub fn new(store: Arc<FixtureStore>) -> Self {
        Self { store }
    }
}

impl Backend for ReplayBackend {
    fn respond(
        &mut self,
        context: &AgentContext,
        reprompt: Option<&Reprompt>,
        _rng: &mut GameRng,
    ) -> Result<String, BackendError> {
        let key = context_key(context, reprompt);
        let fixture = self
            .store
            .get(&key)?
            .ok_or_else(|| BackendError::FixtureMissing(key.clone()))?;
        fixture
            .response
            .as_str()
            .map(str::to_string)
            .ok_or(BackendError::FixtureMissing(key))
    }
}
