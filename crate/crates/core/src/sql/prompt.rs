//! Prompt templates: `{{column}}` inputs and `{name TYPE}` typed outputs.

use std::fmt;

use crate::error::{Error, Location, Result};
use crate::types::DataType;
use crate::util::fnv1a;

/// A column reference written inside a prompt, optionally qualified.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InputRef {
    pub qualifier: Option<String>,
    pub column: String,
}

impl InputRef {
    /// Key used for this input in the rendered JSON payload.
    pub fn key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for InputRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OutputSpec {
    pub name: String,
    pub data_type: DataType,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Segment {
    Text(String),
    Input(usize),
    Output(usize),
}

/// A parsed prompt: instruction text interleaved with typed placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptTemplate {
    pub raw: String,
    pub inputs: Vec<InputRef>,
    pub outputs: Vec<OutputSpec>,
    pub segments: Vec<Segment>,
}

const OUTPUT_TYPES: [&str; 6] = ["VARCHAR", "INTEGER", "DOUBLE", "DATETIME", "BOOLEAN", "BOOL"];

fn prompt_err(offset: usize, message: impl Into<String>) -> Error {
    // Column is relative to the start of the prompt text; callers that know where the
    // literal sits in the statement rebase it with `PromptTemplate::parse_at`.
    Error::Prompt { location: Location { line: 1, column: offset + 1 }, message: message.into() }
}

impl PromptTemplate {
    pub fn parse(raw: &str) -> Result<PromptTemplate> {
        let chars: Vec<char> = raw.chars().collect();
        let mut tpl =
            PromptTemplate { raw: raw.to_string(), inputs: Vec::new(), outputs: Vec::new(), segments: Vec::new() };
        let mut text = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            match c {
                '\\' if matches!(chars.get(i + 1), Some('{') | Some('}')) => {
                    text.push(chars[i + 1]);
                    i += 2;
                }
                '{' if chars.get(i + 1) == Some(&'{') => {
                    let start = i;
                    let close = find_seq(&chars, i + 2, "}}")
                        .ok_or_else(|| prompt_err(start, "unbalanced braces: '{{' without '}}'"))?;
                    let body: String = chars[i + 2..close].iter().collect();
                    let input = parse_input_ref(body.trim(), start)?;
                    tpl.flush_text(&mut text);
                    let idx = tpl.add_input(input);
                    tpl.segments.push(Segment::Input(idx));
                    i = close + 2;
                }
                '{' => {
                    let start = i;
                    let close = chars[i + 1..]
                        .iter()
                        .position(|&c| c == '}')
                        .map(|p| p + i + 1)
                        .ok_or_else(|| prompt_err(start, "unbalanced braces: '{' without '}'"))?;
                    let body: String = chars[i + 1..close].iter().collect();
                    if body.contains('{') {
                        return Err(prompt_err(start, "unbalanced braces: nested '{'"));
                    }
                    let words: Vec<&str> = body.split_whitespace().collect();
                    tpl.flush_text(&mut text);
                    match words.as_slice() {
                        [name, ty] => {
                            check_ident(name, start)?;
                            let upper = ty.to_ascii_uppercase();
                            if !OUTPUT_TYPES.contains(&upper.as_str()) {
                                return Err(prompt_err(
                                    start,
                                    format!("unknown output type '{ty}' (expected one of VARCHAR, INTEGER, DOUBLE, DATETIME, BOOLEAN)"),
                                ));
                            }
                            let data_type = DataType::from_keyword(&upper).expect("listed type");
                            if tpl.outputs.iter().any(|o| o.name.eq_ignore_ascii_case(name)) {
                                return Err(prompt_err(start, format!("duplicate output name '{name}'")));
                            }
                            tpl.outputs.push(OutputSpec { name: name.to_string(), data_type });
                            tpl.segments.push(Segment::Output(tpl.outputs.len() - 1));
                        }
                        // A bare `{column}` reads as an input reference.
                        [name] => {
                            let input = parse_input_ref(name, start)?;
                            let idx = tpl.add_input(input);
                            tpl.segments.push(Segment::Input(idx));
                        }
                        _ => return Err(prompt_err(start, format!("malformed placeholder '{{{body}}}'"))),
                    }
                    i = close + 1;
                }
                '}' => return Err(prompt_err(i, "unbalanced braces: stray '}'")),
                _ => {
                    text.push(c);
                    i += 1;
                }
            }
        }
        tpl.flush_text(&mut text);
        Ok(tpl)
    }

    /// Parses a prompt literal that starts at `location` in the statement text, so
    /// diagnostics point into the statement.
    pub fn parse_at(raw: &str, location: Location) -> Result<PromptTemplate> {
        PromptTemplate::parse(raw).map_err(|e| match e {
            Error::Prompt { location: inner, message } => Error::Prompt {
                location: Location { line: location.line, column: location.column + inner.column },
                message,
            },
            other => other,
        })
    }

    fn flush_text(&mut self, text: &mut String) {
        if !text.is_empty() {
            self.segments.push(Segment::Text(std::mem::take(text)));
        }
    }

    fn add_input(&mut self, input: InputRef) -> usize {
        match self.inputs.iter().position(|i| *i == input) {
            Some(idx) => idx,
            None => {
                self.inputs.push(input);
                self.inputs.len() - 1
            }
        }
    }

    /// Renders the template, substituting each placeholder through the callbacks.
    pub fn render_with(
        &self,
        mut input: impl FnMut(&InputRef) -> String,
        mut output: impl FnMut(&OutputSpec) -> String,
    ) -> String {
        let mut s = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => s.push_str(t),
                Segment::Input(i) => s.push_str(&input(&self.inputs[*i])),
                Segment::Output(o) => s.push_str(&output(&self.outputs[*o])),
            }
        }
        s
    }

    /// Instruction text with placeholders replaced by their names.
    pub fn instruction(&self) -> String {
        self.render_with(InputRef::key, |o| o.name.clone()).trim().to_string()
    }

    pub fn literal_text(&self) -> String {
        self.render_with(|_| String::new(), |_| String::new())
    }

    /// Stable across runs; part of the dedup cache key.
    pub fn template_hash(&self) -> u64 {
        let mut bytes = self.raw.clone().into_bytes();
        for o in &self.outputs {
            bytes.extend_from_slice(o.name.as_bytes());
            bytes.extend_from_slice(o.data_type.keyword().as_bytes());
        }
        fnv1a(&bytes)
    }

    /// Builds a template from already-resolved parts (used when merging prompts).
    pub fn from_parts(instruction: String, inputs: Vec<InputRef>, outputs: Vec<OutputSpec>) -> Self {
        PromptTemplate { raw: instruction.clone(), inputs, outputs, segments: vec![Segment::Text(instruction)] }
    }
}

fn find_seq(chars: &[char], from: usize, seq: &str) -> Option<usize> {
    let pat: Vec<char> = seq.chars().collect();
    (from..chars.len().saturating_sub(pat.len() - 1)).find(|&i| chars[i..i + pat.len()] == pat[..])
}

fn check_ident(s: &str, offset: usize) -> Result<()> {
    let ok = s.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_alphanumeric() || c == '_');
    if ok {
        Ok(())
    } else {
        Err(prompt_err(offset, format!("invalid identifier '{s}' in placeholder")))
    }
}

fn parse_input_ref(body: &str, offset: usize) -> Result<InputRef> {
    let parts: Vec<&str> = body.split('.').map(str::trim).collect();
    match parts.as_slice() {
        [col] => {
            check_ident(col, offset)?;
            Ok(InputRef { qualifier: None, column: col.to_string() })
        }
        [q, col] => {
            check_ident(q, offset)?;
            check_ident(col, offset)?;
            Ok(InputRef { qualifier: Some(q.to_string()), column: col.to_string() })
        }
        _ => Err(prompt_err(offset, format!("invalid column reference '{body}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_inference_prompt() {
        let p = PromptTemplate::parse("find{state VARCHAR},{country VARCHAR} from {{billing_address}}").unwrap();
        assert_eq!(p.inputs, vec![InputRef { qualifier: None, column: "billing_address".into() }]);
        assert_eq!(
            p.outputs,
            vec![
                OutputSpec { name: "state".into(), data_type: DataType::Varchar },
                OutputSpec { name: "country".into(), data_type: DataType::Varchar },
            ]
        );
    }

    #[test]
    fn qualified_input_and_bool_alias() {
        let p = PromptTemplate::parse("is the sentiment of the {{r.review}} {negative BOOL}?").unwrap();
        assert_eq!(p.inputs[0].key(), "r.review");
        assert_eq!(p.outputs[0].data_type, DataType::Boolean);
    }

    #[test]
    fn plain_text_has_no_outputs() {
        let p = PromptTemplate::parse("hello world").unwrap();
        assert!(p.outputs.is_empty() && p.inputs.is_empty());
    }

    #[test]
    fn errors() {
        assert!(PromptTemplate::parse("x {y BLOB}").is_err());
        assert!(PromptTemplate::parse("x {{y}").is_err());
        assert!(PromptTemplate::parse("x {y VARCHAR").is_err());
        assert!(PromptTemplate::parse("x } y").is_err());
        assert!(PromptTemplate::parse("{a VARCHAR} {a INTEGER}").is_err());
    }

    #[test]
    fn escaped_braces_are_literal() {
        let p = PromptTemplate::parse(r#"return \{"k": 1\} for {{x}} {y INTEGER}"#).unwrap();
        assert_eq!(p.literal_text(), r#"return {"k": 1} for  "#);
        assert_eq!(p.inputs.len(), 1);
    }

    #[test]
    fn bare_brace_is_input() {
        let p = PromptTemplate::parse("get the {vendor VARCHAR} from product {name}").unwrap();
        assert_eq!(p.inputs[0].column, "name");
        assert_eq!(p.outputs[0].name, "vendor");
    }

    #[test]
    fn repeated_input_maps_to_one_entry() {
        let p = PromptTemplate::parse("{{a}} vs {{a}} {b BOOLEAN}").unwrap();
        assert_eq!(p.inputs.len(), 1);
        assert_eq!(p.segments.iter().filter(|s| matches!(s, Segment::Input(0))).count(), 2);
    }

    #[test]
    fn instruction_drops_placeholders() {
        let p = PromptTemplate::parse("what is the  {language VARCHAR} of the movie {{title}}").unwrap();
        assert_eq!(p.instruction(), "what is the  language of the movie title");
    }

    #[test]
    fn error_location_is_rebased() {
        let e = PromptTemplate::parse_at("ab {x FOO}", Location { line: 3, column: 10 }).unwrap_err();
        let Error::Prompt { location, .. } = e else { panic!() };
        assert_eq!(location, Location { line: 3, column: 14 });
    }

    proptest! {
        #[test]
        fn literal_segments_are_position_stable(
            parts in proptest::collection::vec(("[a-z ,.?]{0,8}", 0u8..3, "[a-z]{1,6}"), 0..6)
        ) {
            let mut raw = String::new();
            let mut literal = String::new();
            for (i, (text, kind, name)) in parts.iter().enumerate() {
                raw.push_str(text);
                literal.push_str(text);
                match kind {
                    0 => raw.push_str(&format!("{{{{{name}}}}}")),
                    1 => raw.push_str(&format!("{{{name}_{i} VARCHAR}}")),
                    _ => {}
                }
            }
            let tpl = PromptTemplate::parse(&raw).unwrap();
            prop_assert_eq!(tpl.literal_text(), literal);
            let echoed = tpl.render_with(|i| format!("{{{{{}}}}}", i.key()), |o| format!("{{{} {}}}", o.name, o.data_type));
            prop_assert_eq!(PromptTemplate::parse(&echoed).unwrap().segments, tpl.segments);
        }
    }
}
