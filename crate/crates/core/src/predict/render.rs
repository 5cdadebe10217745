//! Turning a prompt template and a batch of input tuples into model messages.

use serde_json::Value as Json;

use crate::sql::PromptTemplate;
use crate::types::DataType;

/// What a prompt asks the model to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderKind {
    /// One output object per input tuple.
    Rows,
    /// One output object for a whole group; each input holds an array of values.
    Group,
    /// A new relation, no input tuples.
    Generation { max_rows: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
    /// Serialized length of each row object, separator included.
    row_chars: Vec<usize>,
}

impl RenderedPrompt {
    /// The whole prompt as a single text, as sent to single-message backends.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }

    pub fn char_len(&self) -> usize {
        self.system.chars().count() + 2 + self.user.chars().count()
    }

    /// Input tokens under the reference tokenizer, counted as the fixed
    /// preamble plus each row payload so the per-prompt overhead is explicit.
    pub fn input_tokens(&self) -> u64 {
        let rows: usize = self.row_chars.iter().sum();
        estimate_tokens_len(self.char_len() - rows)
            + self.row_chars.iter().map(|&c| estimate_tokens_len(c)).sum::<u64>()
    }

    pub fn preamble_tokens(&self) -> u64 {
        let rows: usize = self.row_chars.iter().sum();
        estimate_tokens_len(self.char_len() - rows)
    }
}

fn estimate_tokens_len(chars: usize) -> u64 {
    (chars as u64).div_ceil(4)
}

/// `name: type` lines describing the expected output fields.
pub fn schema_lines(outputs: &[(String, DataType)]) -> String {
    outputs.iter().map(|(n, t)| format!("- {n}: {}", t.json_name())).collect::<Vec<_>>().join("\n")
}

/// Serializes one row object with `row_id` first and inputs in prompt order.
pub fn row_json(row_id: Option<usize>, keys: &[String], values: &[Json]) -> String {
    let mut s = String::from("{");
    let mut first = true;
    if let Some(id) = row_id {
        s.push_str(&format!("\"row_id\":{id}"));
        first = false;
    }
    for (k, v) in keys.iter().zip(values) {
        if !first {
            s.push(',');
        }
        first = false;
        s.push_str(&Json::String(k.clone()).to_string());
        s.push(':');
        s.push_str(&v.to_string());
    }
    s.push('}');
    s
}

pub fn render_prompt(
    template: &PromptTemplate,
    outputs: &[(String, DataType)],
    keys: &[String],
    rows: &[Vec<Json>],
    kind: RenderKind,
    strict: bool,
) -> RenderedPrompt {
    let schema = schema_lines(outputs);
    let mut system = String::from("You are a data processing engine embedded in a SQL query.\n");
    match kind {
        RenderKind::Rows | RenderKind::Group => {
            system.push_str("For each input tuple, answer the task and fill these output fields:\n");
            system.push_str(&schema);
            system.push_str(
                "\nProduce a parsable JSON object or array and nothing else. Return a JSON array with exactly one \
                 object per input tuple; each object carries the tuple's \"row_id\" and every output field.",
            );
        }
        RenderKind::Generation { .. } => {
            system.push_str("Generate the rows of a relation with these fields:\n");
            system.push_str(&schema);
            system.push_str(
                "\nProduce a parsable JSON object or array and nothing else. Return a JSON array with one object \
                 per generated row; each object carries every field.",
            );
        }
    }
    if strict {
        system.push_str(
            "\nYour previous reply could not be parsed. Reply with the JSON array only: no code fences, no \
             commentary, no text before or after it. The output fields again:\n",
        );
        system.push_str(&schema);
    }

    let task = template.instruction();
    let mut user = String::new();
    if !task.is_empty() {
        user.push_str(&format!("Task: {task}\n"));
    }
    let mut row_chars = Vec::new();
    match kind {
        RenderKind::Generation { max_rows } => {
            user.push_str(&format!("Generate at most {max_rows} rows."));
        }
        RenderKind::Rows | RenderKind::Group => {
            if kind == RenderKind::Group {
                user.push_str("Each input field holds the values of every tuple in the group, as a JSON array.\n");
            }
            user.push_str(&format!("Number of tuples to process: {}\nInput tuples:\n[", rows.len()));
            for (i, r) in rows.iter().enumerate() {
                let mut obj = row_json(Some(i), keys, r);
                if i > 0 {
                    obj.insert(0, ',');
                }
                row_chars.push(obj.chars().count());
                user.push_str(&obj);
            }
            user.push(']');
        }
    }
    RenderedPrompt { system, user, row_chars }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::estimate_tokens;

    fn q2() -> PromptTemplate {
        PromptTemplate::parse("what is the {language VARCHAR} of the movie {{title}}").unwrap()
    }

    #[test]
    fn single_row_renders_as_array() {
        let p = render_prompt(
            &q2(),
            &[("language".into(), DataType::Varchar)],
            &["title".into()],
            &[vec![Json::String("Titanic".into())]],
            RenderKind::Rows,
            false,
        );
        assert!(p.user.contains(r#"[{"row_id":0,"title":"Titanic"}]"#), "{}", p.user);
        assert!(p.system.contains("- language: string"));
        assert!(p.user.contains("Task: what is the language of the movie title"));
        assert!(p.user.contains("Number of tuples to process: 1"));
    }

    #[test]
    fn token_count_is_preamble_plus_rows() {
        let rows: Vec<Vec<Json>> = (0..16).map(|i| vec![Json::String(format!("movie {i}"))]).collect();
        let p = render_prompt(
            &q2(),
            &[("language".into(), DataType::Varchar)],
            &["title".into()],
            &rows,
            RenderKind::Rows,
            false,
        );
        let row_sum: u64 = (0..16)
            .map(|i| {
                let mut s = row_json(Some(i), &["title".into()], &rows[i]);
                if i > 0 {
                    s.insert(0, ',');
                }
                estimate_tokens(&s)
            })
            .sum();
        assert_eq!(p.input_tokens(), p.preamble_tokens() + row_sum);
        assert!(p.text().contains(r#",{"row_id":15,"title":"movie 15"}]"#));
    }

    #[test]
    fn strict_mode_repeats_schema() {
        let out = [("language".to_string(), DataType::Varchar)];
        let p = render_prompt(&q2(), &out, &["title".into()], &[vec![Json::Null]], RenderKind::Rows, true);
        assert_eq!(p.system.matches("- language: string").count(), 2);
        assert!(p.user.contains(r#""title":null"#));
    }
}
