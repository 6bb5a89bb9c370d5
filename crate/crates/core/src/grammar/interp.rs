//! Replaying rule sequences, checking constraints and enumerating legal moves.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::geometry::{local_box, volume, Aabb, Assembly, Frame, Occurrence};
use super::{
    ConstraintKind, DesignSequence, Grammar, GrammarViolation, RelOp, RuleApplication,
    ViolationKind,
};

const UNBOUNDED: u64 = u64::MAX;

/// Per-grammar tables that do not depend on the design being built.
#[derive(Debug)]
struct Tables {
    /// `capacity[target][unit][port]`: most `target` occurrences that filling
    /// `port` on a `unit` occurrence could ever add, ignoring upper bounds.
    capacity: Vec<Vec<Vec<u64>>>,
}

impl Tables {
    fn build(g: &Grammar) -> Tables {
        let n_units = g.units.len();
        let capacity = (0..n_units)
            .map(|target| {
                let mut memo: Vec<Vec<Option<Option<u64>>>> = g
                    .units
                    .iter()
                    .map(|u| vec![None; u.ports.len()])
                    .collect();
                (0..n_units)
                    .map(|unit| {
                        (0..g.units[unit].ports.len())
                            .map(|port| port_capacity(g, target, unit, port, &mut memo))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Tables { capacity }
    }
}

/// `memo[unit][port]`: `None` unvisited, `Some(None)` in progress, `Some(Some(v))` done.
fn port_capacity(
    g: &Grammar,
    target: usize,
    unit: usize,
    port: usize,
    memo: &mut Vec<Vec<Option<Option<u64>>>>,
) -> u64 {
    match memo[unit][port] {
        Some(Some(v)) => return v,
        // A cycle through this port: any number of repetitions is conceivable.
        Some(None) => return UNBOUNDED,
        None => {}
    }
    memo[unit][port] = Some(None);
    let host_name = &g.units[unit].name;
    let port_name = &g.units[unit].ports[port].name;
    let mut best = 0u64;
    for r in &g.rules {
        if r.host.unit != *host_name || r.host.port != *port_name {
            continue;
        }
        let Some(added) = g.unit_index(&r.adds_unit) else {
            continue;
        };
        let mut per_copy = u64::from(added == target);
        for q in 0..g.units[added].ports.len() {
            per_copy = per_copy.saturating_add(port_capacity(g, target, added, q, memo));
        }
        best = best.max(per_copy.saturating_mul(u64::from(r.symmetry_count.max(1))));
    }
    memo[unit][port] = Some(Some(best));
    best
}

/// A rule that can be applied next, with the host occurrences that admit it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LegalRule {
    pub rule_id: String,
    pub hosts: Vec<usize>,
}

/// Incremental interpreter state for one design.
#[derive(Debug, Clone)]
pub struct DesignState<'g> {
    grammar: &'g Grammar,
    tables: Arc<Tables>,
    shape_type: String,
    occurrences: Vec<Occurrence>,
    unit_of: Vec<usize>,
    used_ports: HashSet<(usize, usize)>,
    applications: Vec<RuleApplication>,
    unit_counts: Vec<u32>,
    rule_counts: Vec<u32>,
}

impl<'g> DesignState<'g> {
    /// The axiom alone, for the given shape type.
    pub fn new(grammar: &'g Grammar, shape_type: &str) -> Result<Self, GrammarViolation> {
        if grammar.shape_type_index(shape_type).is_none() {
            return Err(GrammarViolation::builtin(
                ViolationKind::ShapeType,
                None,
                format!("unknown shape type {shape_type:?}"),
            ));
        }
        let axiom_idx = grammar.unit_index(&grammar.axiom).ok_or_else(|| {
            GrammarViolation::builtin(
                ViolationKind::Host,
                None,
                format!("axiom unit `{}` is undefined", grammar.axiom),
            )
        })?;
        let unit = &grammar.units[axiom_idx];
        let sizes: Vec<f64> = unit.size_params.iter().map(|p| p.midpoint()).collect();
        let frame = Frame::IDENTITY;
        let bbox = world_box(&frame, unit.primitive, unit.anchor, &sizes);
        let mut unit_counts = vec![0; grammar.units.len()];
        unit_counts[axiom_idx] = 1;
        Ok(Self {
            grammar,
            tables: Arc::new(Tables::build(grammar)),
            shape_type: shape_type.to_string(),
            occurrences: vec![Occurrence {
                unit: unit.name.clone(),
                primitive: unit.primitive,
                anchor: unit.anchor,
                frame,
                sizes,
                bbox,
                parent: None,
                application: None,
            }],
            unit_of: vec![axiom_idx],
            used_ports: HashSet::new(),
            applications: Vec::new(),
            unit_counts,
            rule_counts: vec![0; grammar.rules.len()],
        })
    }

    /// Structural replay: hosts must exist and match, constraints are not checked.
    pub fn replay(grammar: &'g Grammar, seq: &DesignSequence) -> Result<Self, GrammarViolation> {
        let mut state = Self::new(grammar, &seq.shape_type)?;
        for a in &seq.applications {
            state.check_structure(a)?;
            state.place(a);
        }
        Ok(state)
    }

    /// Replay that also enforces every prefix-checkable constraint.
    pub fn replay_checked(
        grammar: &'g Grammar,
        seq: &DesignSequence,
    ) -> Result<Self, GrammarViolation> {
        let mut state = Self::new(grammar, &seq.shape_type)?;
        for a in &seq.applications {
            state.apply(a)?;
        }
        Ok(state)
    }

    pub fn grammar(&self) -> &'g Grammar {
        self.grammar
    }

    pub fn shape_type(&self) -> &str {
        &self.shape_type
    }

    pub fn applications(&self) -> &[RuleApplication] {
        &self.applications
    }

    pub fn occurrences(&self) -> &[Occurrence] {
        &self.occurrences
    }

    pub fn unit_count(&self, unit: &str) -> u32 {
        self.grammar
            .unit_index(unit)
            .map_or(0, |u| self.unit_counts[u])
    }

    /// Places `a` after structural checks only (host exists and fits).
    pub fn apply_structural(&mut self, a: &RuleApplication) -> Result<(), GrammarViolation> {
        self.check_structure(a)?;
        self.place(a);
        Ok(())
    }

    pub fn to_sequence(&self) -> DesignSequence {
        DesignSequence {
            shape_type: self.shape_type.clone(),
            applications: self.applications.clone(),
            author_tags: Vec::new(),
        }
    }

    pub fn assembly(&self) -> Assembly {
        let total_mass_proxy = self
            .occurrences
            .iter()
            .map(|o| volume(o.primitive, &o.sizes))
            .sum();
        Assembly {
            occurrences: self.occurrences.clone(),
            total_mass_proxy,
        }
    }

    fn active_count_ranges(&self) -> impl Iterator<Item = (&'g str, usize, u32, u32)> + '_ {
        let shape_type = self.shape_type.as_str();
        self.grammar.constraints.iter().filter_map(move |c| match &c.kind {
            ConstraintKind::CountRange {
                unit,
                lo,
                hi,
                shape_type: st,
            } if st.as_deref().is_none_or(|s| s == shape_type) => self
                .grammar
                .unit_index(unit)
                .map(|u| (c.id.as_str(), u, *lo, *hi)),
            _ => None,
        })
    }

    fn check_structure(&self, a: &RuleApplication) -> Result<usize, GrammarViolation> {
        let idx = self.applications.len();
        let g = self.grammar;
        let Some(ri) = g.rule_index(&a.rule_id) else {
            return Err(GrammarViolation::builtin(
                ViolationKind::UnknownRule,
                Some(idx),
                format!("unknown rule `{}`", a.rule_id),
            ));
        };
        let rule = &g.rules[ri];
        let Some(&host_unit) = self.unit_of.get(a.host) else {
            return Err(GrammarViolation::builtin(
                ViolationKind::Host,
                Some(idx),
                format!(
                    "rule `{}` targets occurrence {} but only {} are placed",
                    rule.id,
                    a.host,
                    self.occurrences.len()
                ),
            ));
        };
        if g.units[host_unit].name != rule.host.unit {
            return Err(GrammarViolation::builtin(
                ViolationKind::Host,
                Some(idx),
                format!(
                    "rule `{}` must be hosted on a `{}`, occurrence {} is a `{}`",
                    rule.id, rule.host.unit, a.host, g.units[host_unit].name
                ),
            ));
        }
        if g.units[host_unit].port(&rule.host.port).is_none() {
            return Err(GrammarViolation::builtin(
                ViolationKind::Host,
                Some(idx),
                format!("unit `{}` has no port `{}`", rule.host.unit, rule.host.port),
            ));
        }
        if g.unit_index(&rule.adds_unit).is_none() {
            return Err(GrammarViolation::builtin(
                ViolationKind::UnknownRule,
                Some(idx),
                format!("rule `{}` adds undefined unit `{}`", rule.id, rule.adds_unit),
            ));
        }
        if a.params.len() != rule.params.len() {
            return Err(GrammarViolation::builtin(
                ViolationKind::Arity,
                Some(idx),
                format!(
                    "rule `{}` takes {} parameters, got {}",
                    rule.id,
                    rule.params.len(),
                    a.params.len()
                ),
            ));
        }
        Ok(ri)
    }

    fn resolved_sizes(&self, ri: usize, params: &[f64]) -> Vec<f64> {
        let rule = &self.grammar.rules[ri];
        let unit = self.grammar.unit(&rule.adds_unit).expect("checked");
        unit.size_params
            .iter()
            .map(|sp| {
                rule.params
                    .iter()
                    .position(|p| p.name == sp.name)
                    .and_then(|i| params.get(i).copied())
                    .unwrap_or_else(|| sp.midpoint())
            })
            .collect()
    }

    /// Size lookup for `unit.size` names: the subject's own sizes, else the
    /// nearest ancestor of that unit starting at `host`.
    fn relation_lookup(
        &self,
        subject_unit: &str,
        subject_sizes: &[f64],
        host: usize,
        name: &str,
    ) -> Option<f64> {
        let (unit, size) = name.split_once('.')?;
        let spec = self.grammar.unit(unit)?;
        let k = spec.size_params.iter().position(|p| p.name == size)?;
        if unit == subject_unit {
            return subject_sizes.get(k).copied();
        }
        let mut cur = Some(host);
        while let Some(o) = cur {
            let occ = &self.occurrences[o];
            if occ.unit == unit {
                return occ.sizes.get(k).copied();
            }
            cur = occ.parent;
        }
        None
    }

    /// Every check that can be decided when `a` is applied to this prefix.
    pub fn check(&self, a: &RuleApplication) -> Result<(), GrammarViolation> {
        let ri = self.check_structure(a)?;
        let idx = Some(self.applications.len());
        let g = self.grammar;
        let rule = &g.rules[ri];
        for (p, v) in rule.params.iter().zip(&a.params) {
            if !p.admits(*v) {
                return Err(GrammarViolation::builtin(
                    ViolationKind::ParamRange,
                    idx,
                    format!(
                        "rule `{}`: parameter `{}` = {} outside [{}, {}]{}",
                        rule.id,
                        p.name,
                        v,
                        p.min,
                        p.max,
                        if p.kind == super::ParamKind::Integer {
                            " (integer)"
                        } else {
                            ""
                        }
                    ),
                ));
            }
        }
        let added = g.unit_index(&rule.adds_unit).expect("checked");
        for (cid, unit, _lo, hi) in self.active_count_ranges() {
            if unit == added && self.unit_counts[unit] + rule.symmetry_count > hi {
                return Err(GrammarViolation {
                    constraint_id: cid.to_string(),
                    kind: ViolationKind::CountRange,
                    application: idx,
                    message: format!(
                        "rule `{}` would bring `{}` to {} occurrences; at most {} allowed",
                        rule.id,
                        rule.adds_unit,
                        self.unit_counts[unit] + rule.symmetry_count,
                        hi
                    ),
                });
            }
        }
        for c in &g.constraints {
            match &c.kind {
                ConstraintKind::Excludes { a: ra, b: rb } => {
                    let other = if *ra == rule.id {
                        Some(rb)
                    } else if *rb == rule.id {
                        Some(ra)
                    } else {
                        None
                    };
                    if let Some(other) = other {
                        let present = g
                            .rule_index(other)
                            .is_some_and(|oi| self.rule_counts[oi] > 0);
                        if present {
                            return Err(GrammarViolation {
                                constraint_id: c.id.clone(),
                                kind: ViolationKind::Excludes,
                                application: idx,
                                message: format!(
                                    "rule `{}` cannot be combined with `{}`",
                                    rule.id, other
                                ),
                            });
                        }
                    }
                }
                ConstraintKind::Requires { rule: rr, needs } if *rr == rule.id => {
                    let present = g
                        .rule_index(needs)
                        .is_some_and(|ni| self.rule_counts[ni] > 0);
                    if !present {
                        return Err(GrammarViolation {
                            constraint_id: c.id.clone(),
                            kind: ViolationKind::Requires,
                            application: idx,
                            message: format!(
                                "rule `{}` requires `{}` to be applied first",
                                rule.id, needs
                            ),
                        });
                    }
                }
                _ => {}
            }
        }
        let sizes = self.resolved_sizes(ri, &a.params);
        for c in &g.constraints {
            let ConstraintKind::ParamRelation { lhs, op, rhs } = &c.kind else {
                continue;
            };
            let Some(subject) = relation_subject(lhs) else {
                continue;
            };
            if subject != rule.adds_unit {
                continue;
            }
            let value =
                lhs.eval(|name| self.relation_lookup(&rule.adds_unit, &sizes, a.host, name));
            if let Some(value) = value {
                if !op.holds(value, *rhs) {
                    return Err(GrammarViolation {
                        constraint_id: c.id.clone(),
                        kind: ViolationKind::ParamRelation,
                        application: idx,
                        message: format!(
                            "rule `{}`: relation evaluates to {} but must be {} {}",
                            rule.id,
                            value,
                            op.symbol(),
                            rhs
                        ),
                    });
                }
            }
        }
        let host_unit = &g.units[self.unit_of[a.host]];
        let (port_idx, _) = host_unit.port(&rule.host.port).expect("checked");
        if self.used_ports.contains(&(a.host, port_idx)) {
            return Err(GrammarViolation::builtin(
                ViolationKind::PortOccupied,
                idx,
                format!(
                    "port `{}` of occurrence {} (`{}`) is already occupied",
                    rule.host.port, a.host, host_unit.name
                ),
            ));
        }
        Ok(())
    }

    /// Places `a` without checking constraints. Structure must already be valid.
    fn place(&mut self, a: &RuleApplication) {
        let g = self.grammar;
        let ri = g.rule_index(&a.rule_id).expect("structure checked");
        let rule = &g.rules[ri];
        let added = g.unit_index(&rule.adds_unit).expect("structure checked");
        let unit = &g.units[added];
        let host_unit = &g.units[self.unit_of[a.host]];
        let (port_idx, port) = host_unit.port(&rule.host.port).expect("structure checked");
        let host = &self.occurrences[a.host];
        let host_sizes = &host.sizes;
        let lookup = |name: &str| {
            host_unit
                .size_params
                .iter()
                .position(|p| p.name == name)
                .map(|k| host_sizes[k])
        };
        let pos = [
            port.position[0].eval(lookup).unwrap_or(0.0),
            port.position[1].eval(lookup).unwrap_or(0.0),
            port.position[2].eval(lookup).unwrap_or(0.0),
        ];
        let port_frame = Frame::from_euler_deg(pos, port.rotation);
        let host_frame = host.frame;
        let sizes = self.resolved_sizes(ri, &a.params);
        let n = rule.symmetry_count.max(1);
        let app_idx = self.applications.len();
        for k in 0..n {
            let sym = Frame::rot_z_deg(360.0 * f64::from(k) / f64::from(n));
            let frame = host_frame.compose(&sym).compose(&port_frame);
            let bbox = world_box(&frame, unit.primitive, unit.anchor, &sizes);
            self.occurrences.push(Occurrence {
                unit: unit.name.clone(),
                primitive: unit.primitive,
                anchor: unit.anchor,
                frame,
                sizes: sizes.clone(),
                bbox,
                parent: Some(a.host),
                application: Some(app_idx),
            });
            self.unit_of.push(added);
        }
        self.used_ports.insert((a.host, port_idx));
        self.unit_counts[added] += n;
        self.rule_counts[ri] += 1;
        self.applications.push(a.clone());
    }

    /// Checks and places `a`.
    pub fn apply(&mut self, a: &RuleApplication) -> Result<(), GrammarViolation> {
        self.check(a)?;
        self.place(a);
        Ok(())
    }

    /// Whole-solution checks: count lower/upper bounds and collisions.
    pub fn final_violations(&self) -> Vec<GrammarViolation> {
        let mut out = Vec::new();
        for (cid, unit, lo, hi) in self.active_count_ranges() {
            let n = self.unit_counts[unit];
            if n < lo || n > hi {
                out.push(GrammarViolation {
                    constraint_id: cid.to_string(),
                    kind: ViolationKind::CountRange,
                    application: None,
                    message: format!(
                        "design has {} `{}`; expected between {} and {}",
                        n, self.grammar.units[unit].name, lo, hi
                    ),
                });
            }
        }
        let collision_ids: Vec<&str> = self
            .grammar
            .constraints
            .iter()
            .filter(|c| matches!(c.kind, ConstraintKind::NoCollision))
            .map(|c| c.id.as_str())
            .collect();
        if !collision_ids.is_empty() {
            let pairs = self.assembly().collisions();
            if let Some(&(i, j)) = pairs.first() {
                for cid in collision_ids {
                    out.push(GrammarViolation {
                        constraint_id: cid.to_string(),
                        kind: ViolationKind::NoCollision,
                        application: self.occurrences[j].application,
                        message: format!(
                            "{} overlapping pair(s); first: occurrence {} (`{}`) and {} (`{}`)",
                            pairs.len(),
                            i,
                            self.occurrences[i].unit,
                            j,
                            self.occurrences[j].unit
                        ),
                    });
                }
            }
        }
        out
    }

    /// True when the design as it stands is a valid complete solution,
    /// assuming every prefix check passed while building it.
    pub fn is_complete(&self) -> bool {
        self.final_violations().is_empty()
    }

    /// Occurrences that could host `rule_idx` right now (matching unit, free port).
    pub fn open_hosts(&self, rule_idx: usize) -> Vec<usize> {
        let g = self.grammar;
        let rule = &g.rules[rule_idx];
        let Some(host_unit) = g.unit_index(&rule.host.unit) else {
            return Vec::new();
        };
        let Some((port_idx, _)) = g.units[host_unit].port(&rule.host.port) else {
            return Vec::new();
        };
        (0..self.occurrences.len())
            .filter(|&o| self.unit_of[o] == host_unit && !self.used_ports.contains(&(o, port_idx)))
            .collect()
    }

    /// Whether every active count lower bound can still be reached by
    /// filling the free ports. Optimistic: upper bounds and exclusions are ignored.
    pub fn lower_bounds_reachable(&self) -> bool {
        for (_, unit, lo, _) in self.active_count_ranges() {
            let have = u64::from(self.unit_counts[unit]);
            if have >= u64::from(lo) {
                continue;
            }
            let mut potential = 0u64;
            for (o, &u) in self.unit_of.iter().enumerate() {
                for p in 0..self.grammar.units[u].ports.len() {
                    if !self.used_ports.contains(&(o, p)) {
                        potential = potential.saturating_add(self.tables.capacity[unit][u][p]);
                    }
                }
            }
            if have.saturating_add(potential) < u64::from(lo) {
                return false;
            }
        }
        true
    }

    /// Finds parameter values for `rule_idx` on `host` that pass every
    /// prefix check, keeping the `Some` entries of `fixed`.
    pub fn find_params(
        &self,
        rule_idx: usize,
        host: usize,
        fixed: &[Option<f64>],
    ) -> Option<Vec<f64>> {
        let g = self.grammar;
        let rule = &g.rules[rule_idx];
        let n = rule.params.len();
        let fixed_at = |i: usize| fixed.get(i).copied().flatten();
        let base: Vec<f64> = (0..n)
            .map(|i| fixed_at(i).unwrap_or_else(|| rule.params[i].midpoint()))
            .collect();
        let mut candidates = vec![base.clone()];
        for c in &g.constraints {
            let ConstraintKind::ParamRelation { lhs, op, .. } = &c.kind else {
                continue;
            };
            if relation_subject(lhs) != Some(rule.adds_unit.as_str()) {
                continue;
            }
            let mut corner = base.clone();
            for (coef, name) in &lhs.terms {
                let Some((unit, size)) = name.split_once('.') else {
                    continue;
                };
                if unit != rule.adds_unit {
                    continue;
                }
                if let Some(i) = rule.params.iter().position(|p| p.name == size) {
                    if fixed_at(i).is_none() {
                        let want_low = (*op == RelOp::Le) == (*coef >= 0.0);
                        let p = &rule.params[i];
                        corner[i] = if want_low { p.min } else { p.max };
                    }
                }
            }
            candidates.push(corner);
        }
        for extreme in [0.0, 1.0] {
            candidates.push(
                (0..n)
                    .map(|i| fixed_at(i).unwrap_or_else(|| rule.params[i].denormalize(extreme)))
                    .collect(),
            );
        }
        candidates.into_iter().find(|params| {
            let a = RuleApplication {
                rule_id: rule.id.clone(),
                host,
                params: params.clone(),
            };
            self.check(&a).is_ok()
        })
    }

    /// Rules (in grammar order) that can be applied next without breaking a
    /// prefix check or making a count lower bound unreachable.
    pub fn legal_rules(&self) -> Vec<LegalRule> {
        let mut out = Vec::new();
        for (ri, rule) in self.grammar.rules.iter().enumerate() {
            let mut hosts = Vec::new();
            for host in self.open_hosts(ri) {
                let Some(params) = self.find_params(ri, host, &[]) else {
                    continue;
                };
                let mut next = self.clone();
                next.place(&RuleApplication {
                    rule_id: rule.id.clone(),
                    host,
                    params,
                });
                if next.lower_bounds_reachable() {
                    hosts.push(host);
                }
            }
            if !hosts.is_empty() {
                out.push(LegalRule {
                    rule_id: rule.id.clone(),
                    hosts,
                });
            }
        }
        out
    }
}

pub(crate) fn relation_subject(lhs: &super::LinearExpr) -> Option<&str> {
    lhs.terms
        .first()
        .and_then(|(_, name)| name.split_once('.'))
        .map(|(unit, _)| unit)
}

fn world_box(
    frame: &Frame,
    primitive: super::Primitive,
    anchor: super::Anchor,
    sizes: &[f64],
) -> Aabb {
    let local = local_box(primitive, anchor, sizes);
    Aabb::from_points(local.corners().iter().map(|c| frame.apply(*c)))
}

/// Extends `seq` by `a`, enforcing every constraint checkable at the new prefix.
pub fn apply_rule(
    g: &Grammar,
    seq: &DesignSequence,
    a: &RuleApplication,
) -> Result<DesignSequence, GrammarViolation> {
    let state = DesignState::replay(g, seq)?;
    state.check(a)?;
    let mut out = seq.clone();
    out.applications.push(a.clone());
    if !out.author_tags.is_empty() {
        out.author_tags.push(None);
    }
    Ok(out)
}

/// Rules applicable next, each with its admissible host occurrences.
pub fn legal_rules(g: &Grammar, seq: &DesignSequence) -> Result<Vec<LegalRule>, GrammarViolation> {
    Ok(DesignState::replay(g, seq)?.legal_rules())
}

/// Geometry of a structurally valid sequence.
pub fn realize(g: &Grammar, seq: &DesignSequence) -> Result<Assembly, GrammarViolation> {
    Ok(DesignState::replay(g, seq)?.assembly())
}

/// Complete evaluation: every prefix check at every step plus the
/// whole-solution checks. Stops at the first structural failure.
pub fn check_constraints(g: &Grammar, seq: &DesignSequence) -> Vec<GrammarViolation> {
    let mut state = match DesignState::new(g, &seq.shape_type) {
        Ok(s) => s,
        Err(v) => return vec![v],
    };
    let mut out = Vec::new();
    for a in &seq.applications {
        if let Err(v) = state.check_structure(a) {
            out.push(v);
            return out;
        }
        if let Err(v) = state.check(a) {
            out.push(v);
        }
        state.place(a);
    }
    out.extend(state.final_violations());
    out
}
