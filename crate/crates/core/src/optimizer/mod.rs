//! Logical rewrites that treat predict operators as expensive.
//!
//! Rules run in a fixed order, repeatedly, until the plan stops changing.
//! Every change is recorded in a [`RewriteTrace`] as whole-plan EXPLAIN text,
//! so the last entry's `after` is always the final plan.

mod pushdown;
mod semantic;

use std::fmt;

use crate::error::{Error, Result};
use crate::plan::{explain, ColumnId, Field, LogicalPlan, PredictInfo, PredictMode, ScalarExpr};
use crate::predict::PredictConfig;
use crate::storage::TableCatalog;

pub use semantic::{place_select, SelectPlacement};

/// Default per-call latency model: fixed overhead plus a per-row cost, in seconds.
pub const CALL_OVERHEAD_S: f64 = 0.8;
pub const PER_ROW_S: f64 = 0.15;

const MAX_PASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    GuardPushdown,
    PullUpPredict,
    OrderSelectVsJoin,
    MergeSemanticPredicates,
    OrderSemanticPredicates,
}

impl Rule {
    pub const ALL: [Rule; 5] = [
        Rule::GuardPushdown,
        Rule::PullUpPredict,
        Rule::OrderSelectVsJoin,
        Rule::MergeSemanticPredicates,
        Rule::OrderSemanticPredicates,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::GuardPushdown => "guard_pushdown",
            Rule::PullUpPredict => "pull_up_predict",
            Rule::OrderSelectVsJoin => "order_select_vs_join",
            Rule::MergeSemanticPredicates => "merge_semantic_predicates",
            Rule::OrderSemanticPredicates => "order_semantic_predicates",
        }
    }

    pub fn from_name(name: &str) -> Option<Rule> {
        Rule::ALL.into_iter().find(|r| r.name().eq_ignore_ascii_case(name.trim()))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which rules run, and in what order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerRules {
    pub order: Vec<Rule>,
    pub merge_selectivity_threshold: f64,
}

impl Default for OptimizerRules {
    fn default() -> Self {
        OptimizerRules { order: Rule::ALL.to_vec(), merge_selectivity_threshold: 0.5 }
    }
}

impl OptimizerRules {
    pub fn none() -> Self {
        OptimizerRules { order: Vec::new(), ..Default::default() }
    }

    /// Parses a `SET optimizer_rules` value: `all`, `none`, or a comma-separated
    /// list of rule names. A list starting with `-name` entries removes those
    /// rules from the full set.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.eq_ignore_ascii_case("all") {
            return Ok(Self::default());
        }
        if spec.eq_ignore_ascii_case("none") || spec.is_empty() {
            return Ok(Self::none());
        }
        let parts: Vec<&str> = spec.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
        let subtractive = parts.iter().all(|p| p.starts_with('-'));
        let lookup = |p: &str| {
            Rule::from_name(p.trim_start_matches(['-', '+'])).ok_or_else(|| {
                let known: Vec<&str> = Rule::ALL.iter().map(|r| r.name()).collect();
                Error::Config(format!("unknown optimizer rule '{p}' (known: {}, all, none)", known.join(", ")))
            })
        };
        let mut order = if subtractive { Rule::ALL.to_vec() } else { Vec::new() };
        for p in parts {
            let rule = lookup(p)?;
            if subtractive {
                order.retain(|r| *r != rule);
            } else if p.starts_with('-') {
                return Err(Error::Config(format!("cannot mix added and removed rules in '{spec}'")));
            } else if !order.contains(&rule) {
                order.push(rule);
            }
        }
        Ok(OptimizerRules { order, ..Default::default() })
    }

    pub fn enabled(&self, rule: Rule) -> bool {
        self.order.contains(&rule)
    }
}

impl fmt::Display for OptimizerRules {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.order.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self.order.iter().map(|r| r.name()).collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteStep {
    pub rule: Rule,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decline {
    pub rule: Rule,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RewriteTrace {
    pub steps: Vec<RewriteStep>,
    pub declines: Vec<Decline>,
}

impl RewriteTrace {
    pub(crate) fn decline(&mut self, rule: Rule, reason: impl Into<String>) {
        let d = Decline { rule, reason: reason.into() };
        if !self.declines.contains(&d) {
            self.declines.push(d);
        }
    }

    pub fn applied(&self) -> Vec<Rule> {
        self.steps.iter().map(|s| s.rule).collect()
    }
}

impl fmt::Display for RewriteTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            writeln!(f, "applied {}", s.rule)?;
        }
        for d in &self.declines {
            writeln!(f, "declined {}: {}", d.rule, d.reason)?;
        }
        Ok(())
    }
}

/// Cost estimates for one predict operator.
#[derive(Debug, Clone, PartialEq)]
pub struct CostAnnotation {
    pub rows: f64,
    pub distinct: Option<f64>,
    pub latency_per_call_s: f64,
    pub selectivity: f64,
    pub quality: f64,
    /// Summed average text length of the prompt inputs; infinite when unknown.
    pub avg_input_bytes: f64,
}

pub struct Optimizer<'a> {
    pub tables: &'a TableCatalog,
    pub rules: OptimizerRules,
}

impl<'a> Optimizer<'a> {
    pub fn new(tables: &'a TableCatalog, rules: OptimizerRules) -> Self {
        Optimizer { tables, rules }
    }

    pub fn optimize(&self, plan: LogicalPlan) -> (LogicalPlan, RewriteTrace) {
        let mut trace = RewriteTrace::default();
        let mut plan = plan;
        for _ in 0..MAX_PASSES {
            let mut changed = false;
            for &rule in &self.rules.order {
                let before = explain(&plan);
                let next = self.apply(rule, plan.clone(), &mut trace);
                let after = explain(&next);
                if before != after {
                    trace.steps.push(RewriteStep { rule, before, after });
                    changed = true;
                }
                plan = next;
            }
            if !changed {
                break;
            }
        }
        (plan, trace)
    }

    pub fn apply(&self, rule: Rule, plan: LogicalPlan, trace: &mut RewriteTrace) -> LogicalPlan {
        match rule {
            Rule::GuardPushdown => pushdown::guard_pushdown(plan),
            Rule::PullUpPredict => semantic::pull_up_predict(self, plan, false, trace),
            Rule::OrderSelectVsJoin => semantic::order_select_vs_join(self, plan),
            Rule::MergeSemanticPredicates => semantic::merge_semantic_predicates(self, plan, trace),
            Rule::OrderSemanticPredicates => semantic::order_semantic_predicates(self, plan),
        }
    }

    /// Estimates for a predict with `info` reading from `input`.
    pub fn annotate(&self, info: &PredictInfo, input: &LogicalPlan) -> CostAnnotation {
        let (selectivity, quality, batch) = hints(info);
        let avg_input_bytes =
            info.input_columns().iter().map(|&c| self.avg_text_len(input, c).unwrap_or(f64::INFINITY)).sum();
        let distinct = match info.input_columns().as_slice() {
            [c] => self.distinct_count(input, *c),
            _ => None,
        };
        CostAnnotation {
            rows: self.estimate_rows(input),
            distinct,
            latency_per_call_s: CALL_OVERHEAD_S + PER_ROW_S * batch as f64,
            selectivity,
            quality,
            avg_input_bytes,
        }
    }

    /// Upper-bound row estimate. Classical filters are not estimated; semantic
    /// selects scale by their selectivity hint.
    pub fn estimate_rows(&self, plan: &LogicalPlan) -> f64 {
        match plan {
            LogicalPlan::Get { table, .. } => self.tables.get(table).map_or(0.0, |t| t.row_count() as f64),
            LogicalPlan::OneRow => 1.0,
            LogicalPlan::Filter { input, .. } => {
                let rows = self.estimate_rows(input);
                match semantic::unit_info(plan) {
                    Some(info) => rows * hints(info).0,
                    None => rows,
                }
            }
            LogicalPlan::Join { left, right, condition, .. } => {
                let (l, r) = (self.estimate_rows(left), self.estimate_rows(right));
                if condition.is_some() {
                    l.max(r)
                } else {
                    l * r
                }
            }
            LogicalPlan::Limit { input, limit } => self.estimate_rows(input).min(*limit as f64),
            LogicalPlan::Predict { input: None, info, .. } => {
                PredictConfig::resolve(&[&info.model.options, &info.options])
                    .map_or(1024.0, |c| c.max_generated_rows as f64)
            }
            other => other.children().first().map_or(0.0, |c| self.estimate_rows(c)),
        }
    }

    fn avg_text_len(&self, plan: &LogicalPlan, id: ColumnId) -> Option<f64> {
        let (table, column) = column_origin(plan, id)?;
        let t = self.tables.get(&table).ok()?;
        t.avg_text_len(t.column_index(&column)?)
    }

    fn distinct_count(&self, plan: &LogicalPlan, id: ColumnId) -> Option<f64> {
        let (table, column) = column_origin(plan, id)?;
        let t = self.tables.get(&table).ok()?;
        let i = t.column_index(&column)?;
        let set: std::collections::HashSet<_> = t.rows().into_iter().map(|mut r| r.swap_remove(i)).collect();
        Some(set.len() as f64)
    }
}

/// (selectivity, quality, batch size) from model and clause options.
pub(crate) fn hints(info: &PredictInfo) -> (f64, f64, usize) {
    let c = PredictConfig::resolve(&[&info.model.options, &info.options]).unwrap_or_default();
    (c.selectivity.clamp(0.0, 1.0), c.quality, c.effective_batch())
}

/// Base table and column a column id is read from, following plain column
/// references through projections.
pub fn column_origin(plan: &LogicalPlan, id: ColumnId) -> Option<(String, String)> {
    match plan {
        LogicalPlan::Get { table, fields, .. } => {
            fields.iter().find(|f| f.id == id).map(|f| (table.clone(), f.name.clone()))
        }
        LogicalPlan::Project { input, items } => match items.iter().find(|(_, f)| f.id == id) {
            Some((ScalarExpr::Column { id: inner, .. }, _)) => column_origin(input, *inner),
            _ => None,
        },
        LogicalPlan::Aggregate { input, groups, .. } => match groups.iter().find(|(_, f)| f.id == id) {
            Some((ScalarExpr::Column { id: inner, .. }, _)) => column_origin(input, *inner),
            _ => None,
        },
        other => other.children().into_iter().find_map(|c| column_origin(c, id)),
    }
}

pub(crate) fn is_scalar_predict(plan: &LogicalPlan) -> bool {
    matches!(plan, LogicalPlan::Predict { input: Some(_), info, .. } if info.mode == PredictMode::Scalar)
}

pub(crate) fn ids(fields: &[Field]) -> Vec<ColumnId> {
    fields.iter().map(|f| f.id).collect()
}
