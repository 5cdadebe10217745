use crate::error::{Error, Result};
use crate::sql::{OptionValue, Options};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorPolicy {
    /// Rows that still fail after fallback get Null predictions and a warning.
    Null,
    /// Any failed row aborts the query.
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuredOutputMode {
    /// Attach a JSON schema through the API's response-format parameter.
    JsonSchemaParam,
    /// Describe the format in the prompt only.
    InstructionOnly,
}

/// Settings of one predict operator, merged from clause options, model
/// options, session settings and defaults (in that order of precedence).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictConfig {
    pub batch_size: usize,
    pub n_threads: usize,
    pub use_batching: bool,
    pub use_dedup: bool,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub rate_limit_rpm: Option<f64>,
    pub max_generated_rows: usize,
    pub max_prompt_chars: Option<usize>,
    pub error_policy: ErrorPolicy,
    pub structured_output: StructuredOutputMode,
    pub timeout_ms: u64,
    pub temperature: Option<f64>,
    pub selectivity: f64,
    pub quality: f64,
    /// Unrecognized model options, passed through to the backend.
    pub kwargs: Options,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            batch_size: 16,
            n_threads: 16,
            use_batching: true,
            use_dedup: true,
            max_retries: 2,
            retry_backoff_ms: 250,
            rate_limit_rpm: None,
            max_generated_rows: 1024,
            max_prompt_chars: None,
            error_policy: ErrorPolicy::Null,
            structured_output: StructuredOutputMode::JsonSchemaParam,
            timeout_ms: 60_000,
            temperature: None,
            selectivity: 0.5,
            quality: 1.0,
            kwargs: Vec::new(),
        }
    }
}

/// Keys understood by [`PredictConfig`]; `SET` accepts exactly these plus session keys.
pub const PREDICT_KEYS: &[&str] = &[
    "batch_size",
    "n_threads",
    "use_batching",
    "use_dedup",
    "max_retries",
    "retry_backoff_ms",
    "rate_limit_rpm",
    "max_generated_rows",
    "max_prompt_chars",
    "error_policy",
    "structured_output",
    "timeout_ms",
    "temperature",
    "selectivity",
    "quality",
];

fn bad(key: &str, expected: &str, v: &OptionValue) -> Error {
    Error::Config(format!("option '{key}' expects {expected}, got {v}"))
}

fn positive(key: &str, v: &OptionValue) -> Result<usize> {
    match v.as_i64() {
        Some(n) if n >= 1 => Ok(n as usize),
        _ => Err(bad(key, "a positive integer", v)),
    }
}

fn non_negative(key: &str, v: &OptionValue) -> Result<u64> {
    match v.as_i64() {
        Some(n) if n >= 0 => Ok(n as u64),
        _ => Err(bad(key, "a non-negative integer", v)),
    }
}

fn boolean(key: &str, v: &OptionValue) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, "a boolean", v))
}

fn number(key: &str, v: &OptionValue) -> Result<f64> {
    v.as_f64().ok_or_else(|| bad(key, "a number", v))
}

impl PredictConfig {
    /// Merges option layers given from lowest to highest precedence.
    pub fn resolve(layers: &[&Options]) -> Result<PredictConfig> {
        let mut c = PredictConfig::default();
        for layer in layers {
            for (k, v) in layer.iter() {
                c.apply(k, v)?;
            }
        }
        Ok(c)
    }

    /// Applies one setting; unknown keys are kept as backend kwargs.
    pub fn apply(&mut self, key: &str, v: &OptionValue) -> Result<()> {
        let k = key.to_ascii_lowercase();
        match k.as_str() {
            "batch_size" => self.batch_size = positive(key, v)?,
            "n_threads" => self.n_threads = positive(key, v)?,
            "use_batching" => self.use_batching = boolean(key, v)?,
            "use_dedup" => self.use_dedup = boolean(key, v)?,
            "max_retries" => self.max_retries = non_negative(key, v)? as u32,
            "retry_backoff_ms" => self.retry_backoff_ms = non_negative(key, v)?,
            "rate_limit_rpm" => {
                let r = number(key, v)?;
                self.rate_limit_rpm = if r > 0.0 { Some(r) } else { None };
            }
            "max_generated_rows" => self.max_generated_rows = non_negative(key, v)? as usize,
            "max_prompt_chars" => {
                let n = non_negative(key, v)? as usize;
                self.max_prompt_chars = if n == 0 { None } else { Some(n) };
            }
            "error_policy" => {
                self.error_policy = match v.as_str().map(str::to_ascii_lowercase).as_deref() {
                    Some("null") => ErrorPolicy::Null,
                    Some("fail") => ErrorPolicy::Fail,
                    _ => return Err(bad(key, "'null' or 'fail'", v)),
                }
            }
            "structured_output" => {
                self.structured_output = match v.as_str().map(str::to_ascii_lowercase).as_deref() {
                    Some("json_schema") | Some("json_schema_param") => StructuredOutputMode::JsonSchemaParam,
                    Some("instruction") | Some("instruction_only") => StructuredOutputMode::InstructionOnly,
                    _ => return Err(bad(key, "'json_schema' or 'instruction'", v)),
                }
            }
            "timeout_ms" => self.timeout_ms = positive(key, v)? as u64,
            "temperature" => self.temperature = Some(number(key, v)?),
            "selectivity" => {
                let s = number(key, v)?;
                if !(0.0..=1.0).contains(&s) {
                    return Err(bad(key, "a number in [0, 1]", v));
                }
                self.selectivity = s;
            }
            "quality" => {
                let q = number(key, v)?;
                if !(q > 0.0 && q <= 1.0) {
                    return Err(bad(key, "a number in (0, 1]", v));
                }
                self.quality = q;
            }
            _ => {
                self.kwargs.retain(|(existing, _)| !existing.eq_ignore_ascii_case(key));
                self.kwargs.push((key.to_string(), v.clone()));
            }
        }
        Ok(())
    }

    /// Rows per prompt after applying `use_batching`.
    pub fn effective_batch(&self) -> usize {
        if self.use_batching {
            self.batch_size
        } else {
            1
        }
    }
}
