//! Parameterized 3D shape grammars.
//!
//! A [`Grammar`] names the shape units of a product family, the production
//! rules that attach new units to ports of already-placed ones, and the
//! constraints every design must respect. A [`DesignSequence`] is an ordered
//! list of rule applications; replaying it from the axiom yields an
//! [`Assembly`] of placed primitives.

mod dsl;
mod geometry;
mod interp;
mod validate;
pub mod walk;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dsl::{parse_grammar, parse_unchecked, serialize_grammar};
pub use geometry::{Aabb, Assembly, Frame, Occurrence};
pub use interp::{
    apply_rule, check_constraints, legal_rules, realize, DesignState, LegalRule,
};
pub use validate::{validate_grammar, ValidationIssue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    Continuous,
    Integer,
}

/// A named, bounded numeric parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParamSpec {
    pub name: String,
    /// Free-text unit label (`mm`, `count`, `deg`, ...).
    pub unit: String,
    pub min: f64,
    pub max: f64,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn continuous(name: &str, unit: &str, min: f64, max: f64) -> Self {
        Self {
            name: name.to_string(),
            unit: unit.to_string(),
            min,
            max,
            kind: ParamKind::Continuous,
        }
    }

    pub fn integer(name: &str, unit: &str, min: f64, max: f64) -> Self {
        Self {
            kind: ParamKind::Integer,
            ..Self::continuous(name, unit, min, max)
        }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn midpoint(&self) -> f64 {
        self.snap(self.min + 0.5 * self.span())
    }

    /// Maps a value onto `[0, 1]` relative to the range. Degenerate ranges map to 0.
    pub fn normalize(&self, value: f64) -> f64 {
        let span = self.span();
        if span <= 0.0 {
            0.0
        } else {
            (value - self.min) / span
        }
    }

    /// Inverse of [`normalize`](Self::normalize), clamped to the range and
    /// rounded for integer parameters.
    pub fn denormalize(&self, unit_value: f64) -> f64 {
        self.snap(self.min + unit_value * self.span())
    }

    /// Clamps to `[min, max]` and rounds integer parameters.
    pub fn snap(&self, value: f64) -> f64 {
        let v = if value.is_nan() { self.min } else { value };
        let v = v.clamp(self.min, self.max);
        match self.kind {
            ParamKind::Continuous => v,
            ParamKind::Integer => v.round().clamp(self.min, self.max),
        }
    }

    pub fn admits(&self, value: f64) -> bool {
        value.is_finite()
            && value >= self.min
            && value <= self.max
            && (self.kind == ParamKind::Continuous || value.fract() == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Primitive {
    /// Size parameters: extent along x, y, z.
    Box,
    /// Size parameters: radius, length along x.
    Cylinder,
    /// Size parameters: radius.
    Sphere,
    /// Size parameters: depth along x, profile width (y), profile height (z).
    ExtrusionProfile,
}

impl Primitive {
    pub fn arity(self) -> usize {
        match self {
            Primitive::Box | Primitive::ExtrusionProfile => 3,
            Primitive::Cylinder => 2,
            Primitive::Sphere => 1,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Primitive::Box => "box",
            Primitive::Cylinder => "cylinder",
            Primitive::Sphere => "sphere",
            Primitive::ExtrusionProfile => "extrusion-profile",
        }
    }
}

/// Where a primitive sits relative to its local origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Anchor {
    /// Grows along local +x from the origin, centred in y and z.
    #[default]
    Base,
    /// Centred on the origin in all three axes.
    Center,
}

/// `Σ coefficient·name + constant`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LinearExpr {
    pub terms: Vec<(f64, String)>,
    pub constant: f64,
}

impl LinearExpr {
    pub fn constant(value: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn eval(&self, lookup: impl Fn(&str) -> Option<f64>) -> Option<f64> {
        let mut acc = self.constant;
        for (coef, name) in &self.terms {
            acc += coef * lookup(name)?;
        }
        Some(acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Port {
    pub name: String,
    /// Position in the owning unit's local frame, linear in its size parameters.
    pub position: [LinearExpr; 3],
    /// Rotation (x, y, z) in degrees, applied x first.
    pub rotation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ShapeUnit {
    pub name: String,
    pub primitive: Primitive,
    #[serde(default)]
    pub anchor: Anchor,
    pub size_params: Vec<ParamSpec>,
    pub ports: Vec<Port>,
}

impl ShapeUnit {
    pub fn port(&self, name: &str) -> Option<(usize, &Port)> {
        self.ports.iter().enumerate().find(|(_, p)| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HostPort {
    /// Unit an admissible host occurrence must be an instance of.
    pub unit: String,
    pub port: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Rule {
    pub id: String,
    pub adds_unit: String,
    pub host: HostPort,
    /// Canonical order; defines the parameter columns of the embedding.
    pub params: Vec<ParamSpec>,
    pub symmetry_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelOp {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

impl RelOp {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            RelOp::Le => lhs <= rhs,
            RelOp::Ge => lhs >= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::Le => "<=",
            RelOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", rename_all_fields = "camelCase")]
pub enum ConstraintKind {
    /// Occurrence count of `unit` must lie in `[lo, hi]`; optionally only for one shape type.
    CountRange {
        unit: String,
        lo: u32,
        hi: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shape_type: Option<String>,
    },
    /// `rule` may only be applied after `needs` has been applied.
    Requires { rule: String, needs: String },
    /// `a` and `b` never both appear in one design.
    Excludes { a: String, b: String },
    /// Linear relation over `unit.size` names. The first term's unit is the
    /// subject; the other names resolve along the subject's host chain.
    ParamRelation { lhs: LinearExpr, op: RelOp, rhs: f64 },
    /// No two occurrences other than a host and its direct child may have
    /// overlapping world bounding boxes.
    NoCollision,
}

impl ConstraintKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            ConstraintKind::CountRange { .. } => "count-range",
            ConstraintKind::Requires { .. } => "requires",
            ConstraintKind::Excludes { .. } => "excludes",
            ConstraintKind::ParamRelation { .. } => "param-relation",
            ConstraintKind::NoCollision => "no-collision",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Constraint {
    pub id: String,
    #[serde(flatten)]
    pub kind: ConstraintKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Grammar {
    pub product_kind: String,
    /// Condition labels, e.g. "4-motor Drone".
    pub shape_types: Vec<String>,
    /// Root unit; occurrence 0 of every design.
    pub axiom: String,
    pub units: Vec<ShapeUnit>,
    /// Order defines the rule-id vocabulary indices.
    pub rules: Vec<Rule>,
    pub constraints: Vec<Constraint>,
}

impl Grammar {
    pub fn unit(&self, name: &str) -> Option<&ShapeUnit> {
        self.units.iter().find(|u| u.name == name)
    }

    pub fn unit_index(&self, name: &str) -> Option<usize> {
        self.units.iter().position(|u| u.name == name)
    }

    pub fn rule(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn rule_index(&self, id: &str) -> Option<usize> {
        self.rules.iter().position(|r| r.id == id)
    }

    pub fn shape_type_index(&self, label: &str) -> Option<usize> {
        self.shape_types.iter().position(|s| s == label)
    }

    /// Largest parameter count over all rules.
    pub fn max_arity(&self) -> usize {
        self.rules.iter().map(|r| r.params.len()).max().unwrap_or(0)
    }

    pub fn constraint(&self, id: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.id == id)
    }
}

/// One rule instantiated with a host occurrence and bound parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RuleApplication {
    pub rule_id: String,
    /// Index into the occurrences placed so far (0 is the axiom).
    pub host: usize,
    pub params: Vec<f64>,
}

impl RuleApplication {
    pub fn new(rule_id: &str, host: usize, params: Vec<f64>) -> Self {
        Self {
            rule_id: rule_id.to_string(),
            host,
            params,
        }
    }
}

/// An ordered list of rule applications: one node of the design space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DesignSequence {
    pub shape_type: String,
    pub applications: Vec<RuleApplication>,
    /// Empty, or one optional designer id per application.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub author_tags: Vec<Option<String>>,
}

impl DesignSequence {
    pub fn empty(shape_type: &str) -> Self {
        Self {
            shape_type: shape_type.to_string(),
            applications: Vec::new(),
            author_tags: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.applications.len()
    }

    pub fn is_empty(&self) -> bool {
        self.applications.is_empty()
    }

    /// Same applications and shape type, ignoring authorship.
    pub fn same_design(&self, other: &DesignSequence) -> bool {
        self.shape_type == other.shape_type && self.applications == other.applications
    }

    pub fn count_rule(&self, rule_id: &str) -> usize {
        self.applications
            .iter()
            .filter(|a| a.rule_id == rule_id)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    UnknownRule,
    ShapeType,
    Host,
    Arity,
    ParamRange,
    CountRange,
    Requires,
    Excludes,
    ParamRelation,
    PortOccupied,
    NoCollision,
}

impl ViolationKind {
    /// Identifier used for checks that are built into the interpreter rather
    /// than declared as grammar constraints.
    pub fn builtin_id(self) -> &'static str {
        match self {
            ViolationKind::UnknownRule => "unknown-rule",
            ViolationKind::ShapeType => "shape-type",
            ViolationKind::Host => "host",
            ViolationKind::Arity => "arity",
            ViolationKind::ParamRange => "param-range",
            ViolationKind::CountRange => "count-range",
            ViolationKind::Requires => "requires",
            ViolationKind::Excludes => "excludes",
            ViolationKind::ParamRelation => "param-relation",
            ViolationKind::PortOccupied => "port-occupied",
            ViolationKind::NoCollision => "no-collision",
        }
    }
}

/// The error information sent back to a designer whose submission breaks the grammar.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{constraint_id}: {message}")]
#[serde(rename_all = "camelCase")]
pub struct GrammarViolation {
    /// Declared constraint id, or a built-in id such as `param-range`.
    pub constraint_id: String,
    pub kind: ViolationKind,
    /// Index of the offending application, when one is to blame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub application: Option<usize>,
    pub message: String,
}

impl GrammarViolation {
    pub(crate) fn builtin(kind: ViolationKind, application: Option<usize>, message: String) -> Self {
        Self {
            constraint_id: kind.builtin_id().to_string(),
            kind,
            application,
            message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrammarError {
    #[error("syntax error at line {line}, column {column}: expected {expected}, found {found}")]
    Syntax {
        line: usize,
        column: usize,
        expected: String,
        found: String,
    },
    #[error("semantic error: {}", format_issues(.issues))]
    Semantic { issues: Vec<ValidationIssue> },
}

fn format_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| i.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}
