use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::dsl::is_identifier;
use super::{ConstraintKind, Grammar, LinearExpr, ParamKind, ParamSpec, RelOp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationIssue {
    /// `dangling-reference`, `bad-range`, `duplicate-id`, `unsatisfiable`, ...
    pub code: String,
    pub message: String,
}

impl ValidationIssue {
    fn new(code: &str, message: String) -> Self {
        Self {
            code: code.to_string(),
            message,
        }
    }
}

fn check_range(issues: &mut Vec<ValidationIssue>, owner: &str, p: &ParamSpec) {
    if !is_identifier(&p.name) {
        issues.push(ValidationIssue::new(
            "bad-name",
            format!("{owner}: parameter name `{}` is not an identifier", p.name),
        ));
    }
    if !p.min.is_finite() || !p.max.is_finite() {
        issues.push(ValidationIssue::new(
            "bad-range",
            format!("{owner}: parameter `{}` has a non-finite bound", p.name),
        ));
        return;
    }
    if p.min > p.max {
        issues.push(ValidationIssue::new(
            "bad-range",
            format!(
                "{owner}: parameter `{}` has min {} > max {}",
                p.name, p.min, p.max
            ),
        ));
    }
    if p.kind == ParamKind::Integer && (p.min.fract() != 0.0 || p.max.fract() != 0.0) {
        issues.push(ValidationIssue::new(
            "bad-range",
            format!(
                "{owner}: integer parameter `{}` has non-integral bounds [{}, {}]",
                p.name, p.min, p.max
            ),
        ));
    }
}

fn check_expr_finite(issues: &mut Vec<ValidationIssue>, owner: &str, e: &LinearExpr) {
    if !e.constant.is_finite() || e.terms.iter().any(|(c, _)| !c.is_finite()) {
        issues.push(ValidationIssue::new(
            "bad-range",
            format!("{owner}: expression has a non-finite coefficient"),
        ));
    }
}

/// Lists every violated grammar invariant. An empty report means the grammar
/// is well formed and each constraint can be met on its own.
pub fn validate_grammar(g: &Grammar) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();

    if g.shape_types.is_empty() {
        issues.push(ValidationIssue::new(
            "missing",
            "grammar declares no shape types".to_string(),
        ));
    }
    let mut seen = HashSet::new();
    for st in &g.shape_types {
        if !seen.insert(st) {
            issues.push(ValidationIssue::new(
                "duplicate-id",
                format!("shape type {st:?} declared twice"),
            ));
        }
    }

    let mut unit_names = HashSet::new();
    for u in &g.units {
        if !is_identifier(&u.name) {
            issues.push(ValidationIssue::new(
                "bad-name",
                format!("unit name `{}` is not an identifier", u.name),
            ));
        }
        if !unit_names.insert(u.name.as_str()) {
            issues.push(ValidationIssue::new(
                "duplicate-id",
                format!("unit `{}` declared twice", u.name),
            ));
        }
        let owner = format!("unit `{}`", u.name);
        if u.size_params.len() != u.primitive.arity() {
            issues.push(ValidationIssue::new(
                "arity",
                format!(
                    "{owner}: {} needs {} size parameters, found {}",
                    u.primitive.keyword(),
                    u.primitive.arity(),
                    u.size_params.len()
                ),
            ));
        }
        let mut size_names = HashSet::new();
        for p in &u.size_params {
            check_range(&mut issues, &owner, p);
            if !size_names.insert(p.name.as_str()) {
                issues.push(ValidationIssue::new(
                    "duplicate-id",
                    format!("{owner}: size parameter `{}` declared twice", p.name),
                ));
            }
        }
        let mut port_names = HashSet::new();
        for port in &u.ports {
            if !is_identifier(&port.name) {
                issues.push(ValidationIssue::new(
                    "bad-name",
                    format!("{owner}: port name `{}` is not an identifier", port.name),
                ));
            }
            if !port_names.insert(port.name.as_str()) {
                issues.push(ValidationIssue::new(
                    "duplicate-id",
                    format!("{owner}: port `{}` declared twice", port.name),
                ));
            }
            if port.rotation.iter().any(|r| !r.is_finite()) {
                issues.push(ValidationIssue::new(
                    "bad-range",
                    format!("{owner}: port `{}` has a non-finite rotation", port.name),
                ));
            }
            for e in &port.position {
                check_expr_finite(&mut issues, &owner, e);
                for (_, name) in &e.terms {
                    if !size_names.contains(name.as_str()) {
                        issues.push(ValidationIssue::new(
                            "dangling-reference",
                            format!(
                                "{owner}: port `{}` position references undefined size parameter `{name}`",
                                port.name
                            ),
                        ));
                    }
                }
            }
        }
        if u.ports.is_empty() && u.name != g.axiom {
            issues.push(ValidationIssue::new(
                "missing",
                format!("{owner} has no ports; only the axiom body may have none"),
            ));
        }
    }
    if g.unit(&g.axiom).is_none() {
        issues.push(ValidationIssue::new(
            "dangling-reference",
            format!("axiom references undefined unit `{}`", g.axiom),
        ));
    }

    let mut rule_ids = HashSet::new();
    for r in &g.rules {
        let owner = format!("rule `{}`", r.id);
        if !is_identifier(&r.id) {
            issues.push(ValidationIssue::new(
                "bad-name",
                format!("rule id `{}` is not an identifier", r.id),
            ));
        }
        if !rule_ids.insert(r.id.as_str()) {
            issues.push(ValidationIssue::new(
                "duplicate-id",
                format!("rule id `{}` declared twice", r.id),
            ));
        }
        if g.unit(&r.adds_unit).is_none() {
            issues.push(ValidationIssue::new(
                "dangling-reference",
                format!("{owner} adds undefined unit `{}`", r.adds_unit),
            ));
        }
        match g.unit(&r.host.unit) {
            None => issues.push(ValidationIssue::new(
                "dangling-reference",
                format!("{owner} is hosted on undefined unit `{}`", r.host.unit),
            )),
            Some(hu) => {
                if hu.port(&r.host.port).is_none() {
                    issues.push(ValidationIssue::new(
                        "dangling-reference",
                        format!(
                            "{owner} references undefined port `{}` on unit `{}`",
                            r.host.port, r.host.unit
                        ),
                    ));
                }
            }
        }
        if r.symmetry_count < 1 {
            issues.push(ValidationIssue::new(
                "bad-range",
                format!("{owner} has symmetry count 0"),
            ));
        }
        let mut names = HashSet::new();
        for p in &r.params {
            check_range(&mut issues, &owner, p);
            if !names.insert(p.name.as_str()) {
                issues.push(ValidationIssue::new(
                    "duplicate-id",
                    format!("{owner}: parameter `{}` declared twice", p.name),
                ));
            }
        }
    }

    let mut constraint_ids = HashSet::new();
    for c in &g.constraints {
        let owner = format!("constraint `{}`", c.id);
        if !is_identifier(&c.id) {
            issues.push(ValidationIssue::new(
                "bad-name",
                format!("constraint id `{}` is not an identifier", c.id),
            ));
        }
        if !constraint_ids.insert(c.id.as_str()) {
            issues.push(ValidationIssue::new(
                "duplicate-id",
                format!("constraint id `{}` declared twice", c.id),
            ));
        }
        let rule_ref = |issues: &mut Vec<ValidationIssue>, id: &str| {
            if g.rule(id).is_none() {
                issues.push(ValidationIssue::new(
                    "dangling-reference",
                    format!("{owner} references undefined rule `{id}`"),
                ));
            }
        };
        match &c.kind {
            ConstraintKind::CountRange {
                unit,
                lo,
                hi,
                shape_type,
            } => {
                if g.unit(unit).is_none() {
                    issues.push(ValidationIssue::new(
                        "dangling-reference",
                        format!("{owner} references undefined unit `{unit}`"),
                    ));
                }
                if lo > hi {
                    issues.push(ValidationIssue::new(
                        "bad-range",
                        format!("{owner} has lo {lo} > hi {hi}"),
                    ));
                }
                if let Some(st) = shape_type {
                    if g.shape_type_index(st).is_none() {
                        issues.push(ValidationIssue::new(
                            "dangling-reference",
                            format!("{owner} references undefined shape type {st:?}"),
                        ));
                    }
                }
                let axiom_count = u32::from(*unit == g.axiom);
                let addable = g.rules.iter().any(|r| r.adds_unit == *unit);
                if lo <= hi && *lo > axiom_count && !addable {
                    issues.push(ValidationIssue::new(
                        "unsatisfiable",
                        format!("{owner} needs at least {lo} `{unit}` but no rule adds one"),
                    ));
                }
                if lo <= hi && *hi < axiom_count {
                    issues.push(ValidationIssue::new(
                        "unsatisfiable",
                        format!("{owner} allows at most {hi} `{unit}` but the axiom is one"),
                    ));
                }
            }
            ConstraintKind::Requires { rule, needs } => {
                rule_ref(&mut issues, rule);
                rule_ref(&mut issues, needs);
            }
            ConstraintKind::Excludes { a, b } => {
                rule_ref(&mut issues, a);
                rule_ref(&mut issues, b);
            }
            ConstraintKind::ParamRelation { lhs, op, rhs } => {
                check_expr_finite(&mut issues, &owner, lhs);
                if !rhs.is_finite() {
                    issues.push(ValidationIssue::new(
                        "bad-range",
                        format!("{owner} has a non-finite bound"),
                    ));
                }
                if lhs.terms.is_empty() {
                    issues.push(ValidationIssue::new(
                        "missing",
                        format!("{owner} references no parameters"),
                    ));
                }
                let mut resolved = true;
                for (_, name) in &lhs.terms {
                    let ok = name.split_once('.').is_some_and(|(unit, size)| {
                        g.unit(unit)
                            .is_some_and(|u| u.size_params.iter().any(|p| p.name == size))
                    });
                    if !ok {
                        resolved = false;
                        issues.push(ValidationIssue::new(
                            "dangling-reference",
                            format!(
                                "{owner} references undefined size parameter `{name}` (expected unit.size)"
                            ),
                        ));
                    }
                }
                if resolved && !lhs.terms.is_empty() && rhs.is_finite() {
                    if let Some(best) = relation_extreme(g, lhs, *op) {
                        if !op.holds(best, *rhs) {
                            issues.push(ValidationIssue::new(
                                "unsatisfiable",
                                format!(
                                    "{owner} cannot hold for any parameter values in range (best {best} vs {rhs})"
                                ),
                            ));
                        }
                    }
                }
            }
            ConstraintKind::NoCollision => {}
        }
    }

    issues
}

/// Most favourable LHS value over the union of size and rule parameter ranges.
fn relation_extreme(g: &Grammar, lhs: &LinearExpr, op: RelOp) -> Option<f64> {
    let mut acc = lhs.constant;
    for (coef, name) in &lhs.terms {
        let (unit, size) = name.split_once('.')?;
        let spec = g.unit(unit)?.size_params.iter().find(|p| p.name == size)?;
        let (mut lo, mut hi) = (spec.min, spec.max);
        for r in g.rules.iter().filter(|r| r.adds_unit == unit) {
            if let Some(p) = r.params.iter().find(|p| p.name == size) {
                lo = lo.min(p.min);
                hi = hi.max(p.max);
            }
        }
        let want_low = (op == RelOp::Le) == (*coef >= 0.0);
        acc += coef * if want_low { lo } else { hi };
    }
    Some(acc)
}
