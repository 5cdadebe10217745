use std::fmt::Write;

use super::{AggCall, AggFunc, JoinType, LogicalPlan};
use crate::sql::options_to_string;

/// Renders a plan as an indented tree, one operator per line.
pub fn explain(plan: &LogicalPlan) -> String {
    explain_annotated(plan, &mut |_, _| Vec::new())
}

/// Like [`explain`], with extra lines under each predict operator. The callback
/// receives the operator's pre-order predict index (the executor uses the same
/// numbering for its statistics).
pub fn explain_annotated(plan: &LogicalPlan, annotate: &mut dyn FnMut(usize, &LogicalPlan) -> Vec<String>) -> String {
    let mut out = String::new();
    let mut predict_index = 0;
    render(plan, 0, &mut out, &mut predict_index, annotate);
    out
}

fn render(
    plan: &LogicalPlan,
    depth: usize,
    out: &mut String,
    predict_index: &mut usize,
    annotate: &mut dyn FnMut(usize, &LogicalPlan) -> Vec<String>,
) {
    let pad = "  ".repeat(depth);
    let _ = writeln!(out, "{pad}{}", header(plan));
    let own_predicts = match plan {
        LogicalPlan::Predict { .. } => 1,
        LogicalPlan::Aggregate { aggs, .. } => aggs.iter().filter(|a| a.predict.is_some()).count(),
        _ => 0,
    };
    for _ in 0..own_predicts {
        for line in annotate(*predict_index, plan) {
            let _ = writeln!(out, "{pad}  | {line}");
        }
        *predict_index += 1;
    }
    for c in plan.children() {
        render(c, depth + 1, out, predict_index, annotate);
    }
}

fn header(plan: &LogicalPlan) -> String {
    match plan {
        LogicalPlan::Get { table, alias, .. } => match alias {
            Some(a) if !a.eq_ignore_ascii_case(table) => format!("Get {table} AS {a}"),
            _ => format!("Get {table}"),
        },
        LogicalPlan::OneRow => "OneRow".into(),
        LogicalPlan::Filter { predicate, .. } => format!("Filter {predicate}"),
        LogicalPlan::Project { items, .. } => {
            let parts: Vec<String> = items
                .iter()
                .map(|(e, f)| {
                    let text = e.to_string();
                    let mut s =
                        if text == f.display_name() || text == f.name { text } else { format!("{text} AS {}", f.name) };
                    if f.hidden {
                        s.push_str(" (hidden)");
                    }
                    s
                })
                .collect();
            format!("Project {}", parts.join(", "))
        }
        LogicalPlan::Join { kind: JoinType::Cross, .. } => "CrossJoin".into(),
        LogicalPlan::Join { condition, .. } => match condition {
            Some(c) => format!("Join ON {c}"),
            None => "Join".into(),
        },
        LogicalPlan::Aggregate { groups, aggs, .. } => {
            let g: Vec<String> = groups.iter().map(|(e, _)| e.to_string()).collect();
            let a: Vec<String> = aggs.iter().map(agg_text).collect();
            format!("Aggregate group=[{}] aggs=[{}]", g.join(", "), a.join(", "))
        }
        LogicalPlan::Sort { keys, .. } => {
            let k: Vec<String> =
                keys.iter().map(|k| format!("{}{}", k.expr, if k.descending { " DESC" } else { "" })).collect();
            format!("Sort {}", k.join(", "))
        }
        LogicalPlan::Limit { limit, .. } => format!("Limit {limit}"),
        LogicalPlan::Predict { info, outputs, .. } => {
            let inputs: Vec<&str> = info.inputs.iter().map(|i| i.key.as_str()).collect();
            let outs: Vec<String> = outputs.iter().map(|f| format!("{} {}", f.name, f.data_type.keyword())).collect();
            let mut s = format!(
                "Predict {} model={} inputs=[{}] outputs=[{}]",
                info.mode.label(),
                info.model.name,
                inputs.join(", "),
                outs.join(", ")
            );
            if let Some(src) = &info.source {
                let _ = write!(s, " source={src}");
            }
            if !info.prompt.raw.is_empty() {
                let _ = write!(s, " prompt='{}'", info.prompt.raw.replace('\'', "''"));
            }
            if !info.options.is_empty() {
                let _ = write!(s, " options={}", options_to_string(&info.options));
            }
            s
        }
    }
}

fn agg_text(a: &AggCall) -> String {
    let body = match a.func {
        AggFunc::CountStar => "count(*)".to_string(),
        AggFunc::Semantic => {
            let p = a.predict.as_ref().expect("semantic aggregate carries predict info");
            let inputs: Vec<&str> = p.inputs.iter().map(|i| i.key.as_str()).collect();
            format!("llm_agg(model={}, inputs=[{}], prompt='{}')", p.model.name, inputs.join(", "), p.prompt.raw)
        }
        f => {
            let name = match f {
                AggFunc::Count => "count",
                AggFunc::Sum => "sum",
                AggFunc::Avg => "avg",
                AggFunc::Min => "min",
                _ => "max",
            };
            format!("{name}({})", a.arg.as_ref().map(|e| e.to_string()).unwrap_or_default())
        }
    };
    format!("{body} AS {}", a.field.name)
}
