//! The production-rule system: a textual rule language, its AST, and an
//! evaluator that fires rules against the current scan context.
//!
//! Rules are evaluated naively, one linear pass per scan. At the scale
//! this engine targets (hundreds of rules, one scan every couple of
//! seconds) that is ample; no discrimination network is built.
//!
//! `FIRST_VISIT()` is scoped per (client, rule): it holds until the rule's
//! antecedent (with `FIRST_VISIT` treated as true) first evaluates true,
//! and [`match_all`] commits that history only after a full pass, so
//! several first-visit rules see the same state within one scan. There is
//! no reset: once consumed, a first visit never recurs for that pair.

mod ast;
mod parse;

pub use ast::{ConditionNode, InvalidTime, Predicate, TimeOfDay};
pub use parse::{parse_rules, ParseError};

use std::collections::{BTreeMap, HashSet};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fingerprint::{Fingerprint, Mac};
use crate::groups::{self, GroupError};
use crate::proxlog::LogStore;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("proximity log required")]
    ProximityLogRequired,
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("rule {id}: {source}")]
    InRule {
        id: String,
        #[source]
        source: Box<RuleError>,
    },
}

/// A parsed production: condition tree plus the message it delivers.
/// The id is a stable hash of the rule's source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    id: String,
    condition: ConditionNode,
    message: String,
}

impl Rule {
    /// Builds a rule from an AST; the id comes from the canonical
    /// rendering, so structurally identical rules share an id.
    pub fn new(condition: ConditionNode, message: impl Into<String>) -> Self {
        let message = message.into();
        let rendered = render_parts(&condition, &message);
        Self {
            id: rule_id_from_source(&rendered),
            condition,
            message,
        }
    }

    pub(crate) fn from_parts(id: String, condition: ConditionNode, message: String) -> Self {
        Self {
            id,
            condition,
            message,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn condition(&self) -> &ConditionNode {
        &self.condition
    }

    pub fn message(&self) -> &str {
        &self.message
    }
}

pub(crate) fn rule_id_from_source(source: &str) -> String {
    let digest = Sha256::digest(source.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything a rule can ask about: the scan, the clock, the client, its
/// opaque integer attributes, group-query thresholds, and the proximity
/// log backing `IN_GROUP_OF`.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub scan: &'a Fingerprint,
    pub now: TimeOfDay,
    pub client: Mac,
    pub attrs: &'a BTreeMap<String, i64>,
    pub log: Option<&'a LogStore>,
    /// Candidate window Δ for `IN_GROUP_OF`, milliseconds.
    pub group_delta_ms: i64,
    /// Comparability threshold Ω for `IN_GROUP_OF`, dB.
    pub group_omega_db: f64,
}

/// Which (client, rule) pairs have already had their antecedent hold.
/// Single writer: one evaluation pass commits at a time; snapshot reads
/// are free.
#[derive(Debug, Clone, Default)]
pub struct VisitHistory {
    seen: HashSet<(Mac, String)>,
}

impl VisitHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seen(&self, client: Mac, rule_id: &str) -> bool {
        self.seen.contains(&(client, rule_id.to_string()))
    }

    pub fn mark(&mut self, client: Mac, rule_id: &str) {
        self.seen.insert((client, rule_id.to_string()));
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Evaluates one rule against the context and a history snapshot.
/// Pure: repeated calls without a history commit return the same result.
pub fn evaluate(rule: &Rule, ctx: &EvalContext, history: &VisitHistory) -> Result<bool, RuleError> {
    if rule.condition.uses_in_group_of() && ctx.log.is_none() {
        return Err(RuleError::ProximityLogRequired);
    }
    eval_node(&rule.condition, rule.id(), ctx, history, false)
}

/// Like [`evaluate`] but with `FIRST_VISIT` forced true: the condition
/// whose first truth consumes the visit.
fn antecedent_with_first_visit_true(
    rule: &Rule,
    ctx: &EvalContext,
    history: &VisitHistory,
) -> Result<bool, RuleError> {
    if rule.condition.uses_in_group_of() && ctx.log.is_none() {
        return Err(RuleError::ProximityLogRequired);
    }
    eval_node(&rule.condition, rule.id(), ctx, history, true)
}

fn eval_node(
    node: &ConditionNode,
    rule_id: &str,
    ctx: &EvalContext,
    history: &VisitHistory,
    force_first_visit: bool,
) -> Result<bool, RuleError> {
    match node {
        ConditionNode::And(l, r) => Ok(eval_node(l, rule_id, ctx, history, force_first_visit)?
            && eval_node(r, rule_id, ctx, history, force_first_visit)?),
        ConditionNode::Or(l, r) => Ok(eval_node(l, rule_id, ctx, history, force_first_visit)?
            || eval_node(r, rule_id, ctx, history, force_first_visit)?),
        ConditionNode::Not(c) => Ok(!eval_node(c, rule_id, ctx, history, force_first_visit)?),
        ConditionNode::Predicate(p) => eval_predicate(p, rule_id, ctx, history, force_first_visit),
    }
}

fn eval_predicate(
    pred: &Predicate,
    rule_id: &str,
    ctx: &EvalContext,
    history: &VisitHistory,
    force_first_visit: bool,
) -> Result<bool, RuleError> {
    match pred {
        Predicate::IsVisible(ssid) => Ok(ctx.scan.observations().any(|o| o.ssid() == ssid)),
        Predicate::IsVisibleMac(mac) => Ok(ctx.scan.get(*mac).is_some()),
        Predicate::RssiIn { ssid, lo, hi } => Ok(ctx
            .scan
            .observations()
            .any(|o| o.ssid() == ssid && (*lo..=*hi).contains(&o.rssi()))),
        Predicate::TimeBetween { from, to } => Ok(time_in_interval(ctx.now, *from, *to)),
        Predicate::ClientIs(mac) => Ok(ctx.client == *mac),
        Predicate::FirstVisit => {
            if force_first_visit {
                Ok(true)
            } else {
                Ok(!history.seen(ctx.client, rule_id))
            }
        }
        Predicate::InGroupOf { n, t_secs } => {
            let store = ctx.log.ok_or(RuleError::ProximityLogRequired)?;
            Ok(groups::in_group_of(
                store,
                ctx.client,
                *n,
                *t_secs,
                ctx.scan.t(),
                ctx.group_delta_ms,
                ctx.group_omega_db,
            )?)
        }
        Predicate::AttrGe { key, min } => {
            Ok(ctx.attrs.get(key).is_some_and(|v| *v >= *min))
        }
    }
}

/// Half-open interval [from, to) on the clock face; an interval wrapping
/// past midnight covers [from, 24:00) ∪ [00:00, to).
fn time_in_interval(now: TimeOfDay, from: TimeOfDay, to: TimeOfDay) -> bool {
    if from <= to {
        from <= now && now < to
    } else {
        now >= from || now < to
    }
}

/// Runs every rule against the context, in source order, and returns the
/// (rule id, message) pairs that fired.
///
/// Rules never see each other's effects within a pass: first-visit
/// history is committed only after all rules have evaluated.
pub fn match_all(
    rules: &[Rule],
    ctx: &EvalContext,
    history: &mut VisitHistory,
) -> Result<Vec<(String, String)>, RuleError> {
    let mut fired = Vec::new();
    let mut to_mark = Vec::new();
    for rule in rules {
        let annotate = |e: RuleError| RuleError::InRule {
            id: rule.id().to_string(),
            source: Box::new(e),
        };
        if evaluate(rule, ctx, history).map_err(annotate)? {
            fired.push((rule.id().to_string(), rule.message().to_string()));
        }
        if rule.condition.uses_first_visit()
            && antecedent_with_first_visit_true(rule, ctx, history).map_err(annotate)?
        {
            to_mark.push(rule.id().to_string());
        }
    }
    for id in to_mark {
        history.mark(ctx.client, &id);
    }
    Ok(fired)
}

/// Canonical pretty-printed form: `parse_rules(render_rule(r))` yields a
/// rule with an identical AST and message.
pub fn render_rule(rule: &Rule) -> String {
    render_parts(&rule.condition, &rule.message)
}

fn render_parts(condition: &ConditionNode, message: &str) -> String {
    format!(
        "IF {} THEN {{ {} }}",
        render_node(condition, 1),
        escape_message(message)
    )
}

fn node_precedence(node: &ConditionNode) -> u8 {
    match node {
        ConditionNode::Or(..) => 1,
        ConditionNode::And(..) => 2,
        ConditionNode::Not(..) => 3,
        ConditionNode::Predicate(..) => 4,
    }
}

fn render_node(node: &ConditionNode, min_precedence: u8) -> String {
    let rendered = match node {
        ConditionNode::Or(l, r) => format!("{} OR {}", render_node(l, 1), render_node(r, 2)),
        ConditionNode::And(l, r) => {
            format!("{} AND {}", render_node(l, 2), render_node(r, 3))
        }
        ConditionNode::Not(c) => format!("NOT {}", render_node(c, 3)),
        ConditionNode::Predicate(p) => render_predicate(p),
    };
    if node_precedence(node) < min_precedence {
        format!("({rendered})")
    } else {
        rendered
    }
}

fn render_predicate(pred: &Predicate) -> String {
    match pred {
        Predicate::IsVisible(ssid) => format!("IS_VISIBLE({})", quote(ssid)),
        Predicate::IsVisibleMac(mac) => format!("IS_VISIBLE_MAC('{mac}')"),
        Predicate::RssiIn { ssid, lo, hi } => {
            format!("RSSI_IN({}, {lo}, {hi})", quote(ssid))
        }
        Predicate::TimeBetween { from, to } => format!("TIME_BETWEEN('{from}', '{to}')"),
        Predicate::ClientIs(mac) => format!("CLIENT_IS('{mac}')"),
        Predicate::FirstVisit => "FIRST_VISIT()".to_string(),
        Predicate::InGroupOf { n, t_secs } => format!("IN_GROUP_OF({n}, {t_secs})"),
        Predicate::AttrGe { key, min } => format!("ATTR_GE({}, {min})", quote(key)),
    }
}

fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('\'');
    for c in text.chars() {
        if c == '\'' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('\'');
    out
}

fn escape_message(message: &str) -> String {
    let mut out = String::with_capacity(message.len());
    for c in message.chars() {
        if c == '}' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out
}
