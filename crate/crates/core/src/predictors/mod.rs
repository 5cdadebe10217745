//! Backends that answer predict requests.

pub mod mock;
pub mod remote;
pub mod schema;
pub mod tabular;

use std::sync::Arc;

use serde_json::Value as Json;

use crate::catalog::{ModelEntry, SecretStore};
use crate::error::{BackendError, Result};
use crate::predict::{PredictConfig, RenderKind, RenderedPrompt};
use crate::sql::{ModelKind, PromptTemplate};
use crate::types::{DataType, Value};

pub use mock::{MockPredictor, MockRule};
pub use remote::{CassetteTransport, HttpTransport, RemotePredictor, ReqwestTransport};
pub use tabular::TabularStub;

/// One backend invocation: a rendered prompt plus the structured view of
/// the same rows, for backends that do not read text.
#[derive(Debug, Clone, Copy)]
pub struct PredictRequest<'a> {
    pub model: &'a ModelEntry,
    pub prompt: &'a RenderedPrompt,
    pub template: &'a PromptTemplate,
    pub input_keys: &'a [String],
    pub rows: &'a [Vec<Json>],
    pub outputs: &'a [(String, DataType)],
    pub kind: RenderKind,
    /// Set on the re-prompt that follows unparsable output.
    pub strict: bool,
    pub config: &'a PredictConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictOutput {
    /// Raw model text, still to be parsed.
    Text(String),
    /// Already typed records, one per input row.
    Records(Vec<Vec<Value>>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictResponse {
    pub output: PredictOutput,
    /// Reported by the backend; estimated from the text when absent.
    pub usage: Option<Usage>,
    pub transport_retries: u32,
}

impl PredictResponse {
    pub fn text(s: impl Into<String>) -> Self {
        PredictResponse { output: PredictOutput::Text(s.into()), usage: None, transport_retries: 0 }
    }
}

pub trait Predictor: Send + Sync {
    fn name(&self) -> &str;

    /// Called once before the first request of a query.
    fn load(&self) -> std::result::Result<(), BackendError> {
        Ok(())
    }

    fn predict_chunk(&self, req: &PredictRequest<'_>) -> std::result::Result<PredictResponse, BackendError>;

    /// Table generation; `req.rows` is empty.
    fn scan_chunk(&self, req: &PredictRequest<'_>) -> std::result::Result<PredictResponse, BackendError> {
        self.predict_chunk(req)
    }
}

/// Chooses a backend for each model at query start.
pub trait BackendFactory: Send + Sync {
    fn create(&self, entry: &ModelEntry, secrets: &SecretStore) -> Result<Arc<dyn Predictor>>;
}

/// Scripted responses for every LLM model; tabular models use the stub.
pub struct MockFactory {
    pub mock: Arc<MockPredictor>,
}

impl BackendFactory for MockFactory {
    fn create(&self, entry: &ModelEntry, _secrets: &SecretStore) -> Result<Arc<dyn Predictor>> {
        Ok(match entry.kind {
            ModelKind::Tabular => Arc::new(TabularStub::new(entry)?),
            _ => self.mock.clone(),
        })
    }
}

/// Live HTTP backends for LLM models.
pub struct RemoteFactory {
    pub transport: Arc<dyn HttpTransport>,
}

impl BackendFactory for RemoteFactory {
    fn create(&self, entry: &ModelEntry, secrets: &SecretStore) -> Result<Arc<dyn Predictor>> {
        Ok(match entry.kind {
            ModelKind::Tabular => Arc::new(TabularStub::new(entry)?),
            _ => Arc::new(RemotePredictor::new(entry, secrets, self.transport.clone())?),
        })
    }
}
