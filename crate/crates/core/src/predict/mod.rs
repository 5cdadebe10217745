//! Executing semantic operators against a predictor backend.

pub mod cache;
pub mod config;
pub mod operator;
pub mod output;
pub mod render;
pub mod stats;

pub use cache::{CacheKey, DedupCache};
pub use config::{ErrorPolicy, PredictConfig, StructuredOutputMode, PREDICT_KEYS};
pub use operator::{PredictOperator, PredictTask, RateLimiter};
pub use output::{parse_structured_output, ParsedRow};
pub use render::{render_prompt, RenderKind, RenderedPrompt};
pub use stats::{CallCounts, CallStats, CallStatsSnapshot};
