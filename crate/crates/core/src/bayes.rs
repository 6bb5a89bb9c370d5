//! Bayesian causal maps: weighted criteria DAGs turned into binary Bayesian
//! networks, scored by exact variable elimination under partial evidence.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{ConstraintKind, DesignSequence, DesignState, Grammar, GrammarViolation};
use crate::nn::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub weight: f64,
}

/// File form: `{nodes, edges, biases, sink}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalMap {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub biases: BTreeMap<String, f64>,
    pub sink: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    High,
    Low,
}

impl Level {
    pub fn from_bool(high: bool) -> Self {
        if high {
            Level::High
        } else {
            Level::Low
        }
    }
}

pub type Evidence = BTreeMap<String, Level>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BayesError {
    #[error("causal map has a cycle through `{0}`")]
    Cycle(String),
    #[error("expected exactly one sink `{expected}`, found {found:?}")]
    Sinks { expected: String, found: Vec<String> },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` declared twice")]
    DuplicateNode(String),
    #[error("edge {from} -> {to} has weight {weight} outside [-1, 1]")]
    Weight { from: String, to: String, weight: f64 },
    #[error("causal map has {0} nodes, more than the {MAX_NODES} exact inference allows")]
    TooLarge(usize),
    #[error("the sink `{0}` cannot be observed")]
    SinkObserved(String),
}

/// Binary network with `P(high | parents) = σ(bias + Σ wᵢ sᵢ)`, `sᵢ = ±1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesNet {
    pub nodes: Vec<String>,
    pub parents: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub sink: usize,
    /// `cpts[n][mask]`: probability node `n` is high, where bit `i` of `mask`
    /// is set when parent `i` is high.
    pub cpts: Vec<Vec<f64>>,
}

/// Exact inference is exponential in the widest factor, so maps stay small.
pub const MAX_NODES: usize = 25;

pub fn causal_map_to_bayesnet(m: &CausalMap) -> Result<BayesNet, BayesError> {
    if m.nodes.len() > MAX_NODES {
        return Err(BayesError::TooLarge(m.nodes.len()));
    }
    let mut index = BTreeMap::new();
    for (i, n) in m.nodes.iter().enumerate() {
        if index.insert(n.clone(), i).is_some() {
            return Err(BayesError::DuplicateNode(n.clone()));
        }
    }
    let idx = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| BayesError::UnknownNode(name.to_string()))
    };
    let n = m.nodes.len();
    let sink = idx(&m.sink)?;
    for name in m.biases.keys() {
        idx(name)?;
    }
    let mut parents = vec![Vec::new(); n];
    let mut weights = vec![Vec::new(); n];
    let mut has_out = vec![false; n];
    for e in &m.edges {
        let (f, t) = (idx(&e.from)?, idx(&e.to)?);
        if !(-1.0..=1.0).contains(&e.weight) {
            return Err(BayesError::Weight {
                from: e.from.clone(),
                to: e.to.clone(),
                weight: e.weight,
            });
        }
        parents[t].push(f);
        weights[t].push(e.weight);
        has_out[f] = true;
    }
    let sinks: Vec<String> = (0..n)
        .filter(|&i| !has_out[i])
        .map(|i| m.nodes[i].clone())
        .collect();
    if sinks.len() != 1 || has_out[sink] {
        return Err(BayesError::Sinks {
            expected: m.sink.clone(),
            found: sinks,
        });
    }
    // Kahn's algorithm; whatever remains sits on a cycle.
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(v) = ready.pop() {
        seen += 1;
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.push(c);
            }
        }
    }
    if seen < n {
        let on_cycle = (0..n).find(|&i| indeg[i] > 0).expect("cycle member");
        return Err(BayesError::Cycle(m.nodes[on_cycle].clone()));
    }
    let biases: Vec<f64> = m
        .nodes
        .iter()
        .map(|name| m.biases.get(name).copied().unwrap_or(0.0))
        .collect();
    let cpts = (0..n)
        .map(|v| {
            (0..1usize << parents[v].len())
                .map(|mask| {
                    let x = biases[v]
                        + weights[v]
                            .iter()
                            .enumerate()
                            .map(|(i, w)| if mask >> i & 1 == 1 { *w } else { -*w })
                            .sum::<f64>();
                    sigmoid(x)
                })
                .collect()
        })
        .collect();
    Ok(BayesNet {
        nodes: m.nodes.clone(),
        parents,
        weights,
        biases,
        sink,
        cpts,
    })
}

/// Table over binary variables; bit `i` of an index is `vars[i]` (1 = high).
#[derive(Debug, Clone)]
struct Factor {
    vars: Vec<usize>,
    table: Vec<f64>,
}

impl Factor {
    fn value_at(&self, assignment: &BTreeMap<usize, bool>) -> f64 {
        let mut idx = 0;
        for (i, v) in self.vars.iter().enumerate() {
            if assignment[v] {
                idx |= 1 << i;
            }
        }
        self.table[idx]
    }

    fn product(&self, other: &Factor) -> Factor {
        let vars: Vec<usize> = self
            .vars
            .iter()
            .chain(&other.vars)
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pos = |v: &usize| vars.iter().position(|x| x == v).expect("in union");
        let a_pos: Vec<usize> = self.vars.iter().map(pos).collect();
        let b_pos: Vec<usize> = other.vars.iter().map(pos).collect();
        let table = (0..1usize << vars.len())
            .map(|idx| {
                let gather = |ps: &[usize]| {
                    ps.iter()
                        .enumerate()
                        .fold(0usize, |acc, (i, &p)| acc | ((idx >> p & 1) << i))
                };
                self.table[gather(&a_pos)] * other.table[gather(&b_pos)]
            })
            .collect();
        Factor { vars, table }
    }

    fn sum_out(&self, var: usize) -> Factor {
        let k = self.vars.iter().position(|&v| v == var).expect("var in factor");
        let vars: Vec<usize> = self.vars.iter().copied().filter(|&v| v != var).collect();
        let table = (0..1usize << vars.len())
            .map(|idx| {
                let low = idx & ((1 << k) - 1);
                let high = (idx >> k) << (k + 1);
                let base = low | high;
                self.table[base] + self.table[base | (1 << k)]
            })
            .collect();
        Factor { vars, table }
    }

    fn restrict(&self, var: usize, value: bool) -> Factor {
        let Some(k) = self.vars.iter().position(|&v| v == var) else {
            return self.clone();
        };
        let vars: Vec<usize> = self.vars.iter().copied().filter(|&v| v != var).collect();
        let table = (0..1usize << vars.len())
            .map(|idx| {
                let low = idx & ((1 << k) - 1);
                let high = (idx >> k) << (k + 1);
                self.table[low | high | (usize::from(value) << k)]
            })
            .collect();
        Factor { vars, table }
    }
}

impl BayesNet {
    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    /// `P(node = high | parent states)` with parents given in declaration order.
    pub fn p_high(&self, node: usize, parent_high: &[bool]) -> f64 {
        let mask = parent_high
            .iter()
            .enumerate()
            .fold(0usize, |m, (i, h)| m | (usize::from(*h) << i));
        self.cpts[node][mask]
    }

    fn observed(&self, ev: &Evidence) -> Result<BTreeMap<usize, bool>, BayesError> {
        let mut out = BTreeMap::new();
        for (name, level) in ev {
            let i = self
                .node_index(name)
                .ok_or_else(|| BayesError::UnknownNode(name.clone()))?;
            if i == self.sink {
                return Err(BayesError::SinkObserved(name.clone()));
            }
            out.insert(i, *level == Level::High);
        }
        Ok(out)
    }

    fn node_factor(&self, v: usize) -> Factor {
        let mut vars = vec![v];
        vars.extend(&self.parents[v]);
        // index bit 0 is the node itself, bits 1.. its parents
        let table = (0..1usize << vars.len())
            .map(|idx| {
                let p = self.cpts[v][idx >> 1];
                if idx & 1 == 1 {
                    p
                } else {
                    1.0 - p
                }
            })
            .collect();
        let f = Factor { vars, table };
        // store with sorted variables so products line up
        let mut sorted = f.vars.clone();
        sorted.sort_unstable();
        let pos: Vec<usize> = f
            .vars
            .iter()
            .map(|x| sorted.iter().position(|y| y == x).expect("same set"))
            .collect();
        let mut table = vec![0.0; f.table.len()];
        for (idx, val) in f.table.iter().enumerate() {
            let j = pos
                .iter()
                .enumerate()
                .fold(0usize, |acc, (i, &p)| acc | ((idx >> i & 1) << p));
            table[j] = *val;
        }
        Factor {
            vars: sorted,
            table,
        }
    }

    /// Exact `P(sink = high | ev)` by variable elimination with a greedy
    /// smallest-scope order.
    pub fn infer_score(&self, ev: &Evidence) -> Result<f64, BayesError> {
        let obs = self.observed(ev)?;
        let mut factors: Vec<Factor> = (0..self.nodes.len())
            .map(|v| {
                obs.iter()
                    .fold(self.node_factor(v), |f, (&var, &val)| f.restrict(var, val))
            })
            .collect();
        let mut hidden: BTreeSet<usize> = (0..self.nodes.len())
            .filter(|v| *v != self.sink && !obs.contains_key(v))
            .collect();
        while !hidden.is_empty() {
            let scope = |var: usize| {
                factors
                    .iter()
                    .filter(|f| f.vars.contains(&var))
                    .flat_map(|f| f.vars.iter().copied())
                    .collect::<BTreeSet<_>>()
                    .len()
            };
            let var = *hidden
                .iter()
                .min_by_key(|&&v| (scope(v), v))
                .expect("non-empty");
            hidden.remove(&var);
            let (touching, rest): (Vec<Factor>, Vec<Factor>) =
                factors.into_iter().partition(|f| f.vars.contains(&var));
            factors = rest;
            if let Some(first) = touching.first() {
                let prod = touching[1..].iter().fold(first.clone(), |a, b| a.product(b));
                factors.push(prod.sum_out(var));
            }
        }
        let mut joint = Factor {
            vars: Vec::new(),
            table: vec![1.0],
        };
        for f in &factors {
            joint = joint.product(f);
        }
        let high = joint.value_at(&BTreeMap::from([(self.sink, true)]));
        let low = joint.value_at(&BTreeMap::from([(self.sink, false)]));
        Ok(high / (high + low))
    }
}

/// Thresholds and unit names used to turn a design into criteria evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvidenceConfig {
    /// Units whose sub-assemblies must match for the design to be symmetric.
    pub symmetric_unit: String,
    pub motor_unit: String,
    pub gear_unit: String,
    pub mass_bound: f64,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        Self {
            symmetric_unit: "arm".into(),
            motor_unit: "motor".into(),
            gear_unit: "skid".into(),
            mass_bound: 900_000.0,
        }
    }
}

pub const SYMMETRY_CONSISTENT: &str = "symmetry_consistent";
pub const MOTOR_COUNT_MATCHES_TYPE: &str = "motor_count_matches_type";
pub const NO_COLLISION: &str = "no_collision";
pub const MASS_BELOW_BOUND: &str = "mass_below_bound";
pub const HAS_LANDING_GEAR: &str = "has_landing_gear";

/// Binary criteria read off the realized design.
///
/// On an empty design, symmetry, collision and mass hold vacuously; motor
/// count and landing gear do not.
pub fn derive_evidence(
    g: &Grammar,
    s: &DesignSequence,
    cfg: &EvidenceConfig,
) -> Result<Evidence, GrammarViolation> {
    let state = DesignState::replay(g, s)?;
    let asm = state.assembly();
    let occ = &asm.occurrences;

    // units under each symmetric occurrence, as sorted multisets
    let mut subtrees: BTreeMap<usize, Vec<&str>> = occ
        .iter()
        .enumerate()
        .filter(|(_, o)| o.unit == cfg.symmetric_unit)
        .map(|(i, _)| (i, Vec::new()))
        .collect();
    for (i, o) in occ.iter().enumerate() {
        let mut cur = o.parent;
        while let Some(p) = cur {
            if let Some(list) = subtrees.get_mut(&p) {
                list.push(occ[i].unit.as_str());
                break;
            }
            cur = occ[p].parent;
        }
    }
    let mut shapes: Vec<Vec<&str>> = subtrees.into_values().collect();
    for s in &mut shapes {
        s.sort_unstable();
    }
    let symmetric = shapes.windows(2).all(|w| w[0] == w[1]);

    let motors = asm.count_unit(&cfg.motor_unit) as u32;
    let motor_ok = g.constraints.iter().fold(true, |ok, c| match &c.kind {
        ConstraintKind::CountRange {
            unit,
            lo,
            hi,
            shape_type,
        } if *unit == cfg.motor_unit
            && shape_type.as_deref().is_none_or(|t| t == s.shape_type) =>
        {
            ok && motors >= *lo && motors <= *hi
        }
        _ => ok,
    }) && motors > 0;

    Ok(BTreeMap::from([
        (SYMMETRY_CONSISTENT.to_string(), Level::from_bool(symmetric)),
        (MOTOR_COUNT_MATCHES_TYPE.to_string(), Level::from_bool(motor_ok)),
        (
            NO_COLLISION.to_string(),
            Level::from_bool(asm.collisions().is_empty()),
        ),
        (
            MASS_BELOW_BOUND.to_string(),
            Level::from_bool(asm.total_mass_proxy <= cfg.mass_bound),
        ),
        (
            HAS_LANDING_GEAR.to_string(),
            Level::from_bool(asm.count_unit(&cfg.gear_unit) > 0),
        ),
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum SelectPolicy {
    Threshold { tau: f64 },
    TopK { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Indices of kept solutions, in input order.
    pub kept: Vec<usize>,
    /// Score of every input solution.
    pub scores: Vec<f64>,
}

/// Scores every solution and keeps those passing the policy.
/// Solutions whose evidence cannot be derived score 0.
pub fn select(
    solutions: &[DesignSequence],
    net: &BayesNet,
    g: &Grammar,
    cfg: &EvidenceConfig,
    policy: SelectPolicy,
) -> Result<Selection, BayesError> {
    let mut scores = Vec::with_capacity(solutions.len());
    for s in solutions {
        let score = match derive_evidence(g, s, cfg) {
            Ok(ev) => {
                let ev: Evidence = ev
                    .into_iter()
                    .filter(|(k, _)| net.node_index(k).is_some())
                    .collect();
                net.infer_score(&ev)?
            }
            Err(_) => 0.0,
        };
        scores.push(score);
    }
    let kept = select_scores(&scores, policy);
    Ok(Selection { kept, scores })
}

/// Scores and kept set keyed by solution id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub policy: SelectPolicy,
    pub scores: BTreeMap<String, f64>,
    pub kept: Vec<String>,
}

impl ScoreReport {
    /// `ids[i]` names solution `i` of the selection.
    pub fn new(ids: &[String], sel: &Selection, policy: SelectPolicy) -> Self {
        Self {
            policy,
            scores: ids.iter().cloned().zip(sel.scores.iter().copied()).collect(),
            kept: sel.kept.iter().map(|&i| ids[i].clone()).collect(),
        }
    }
}

/// Applies a policy to precomputed scores.
pub fn select_scores(scores: &[f64], policy: SelectPolicy) -> Vec<usize> {
    match policy {
        SelectPolicy::Threshold { tau } => (0..scores.len()).filter(|&i| scores[i] >= tau).collect(),
        SelectPolicy::TopK { k } => {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            // stable sort keeps earlier indices first among equal scores
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            let mut kept: Vec<usize> = order.into_iter().take(k).collect();
            kept.sort_unstable();
            kept
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> BayesNet {
        causal_map_to_bayesnet(&CausalMap {
            nodes: vec!["a".into(), "b".into()],
            edges: vec![Edge {
                from: "a".into(),
                to: "b".into(),
                weight: 1.0,
            }],
            biases: BTreeMap::new(),
            sink: "b".into(),
        })
        .unwrap()
    }

    #[test]
    fn chain_posterior_is_sigmoid_one() {
        let net = chain();
        let ev = Evidence::from([("a".to_string(), Level::High)]);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((net.infer_score(&ev).unwrap() - expected).abs() < 1e-12);
        assert!((net.infer_score(&Evidence::new()).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sink_cannot_be_observed() {
        let net = chain();
        let ev = Evidence::from([("b".to_string(), Level::High)]);
        assert!(matches!(net.infer_score(&ev), Err(BayesError::SinkObserved(_))));
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(select_scores(&[0.5, 0.9, 0.5, 0.5], SelectPolicy::TopK { k: 2 }), [0, 1]);
        assert!(select_scores(&[0.5], SelectPolicy::TopK { k: 0 }).is_empty());
    }
}
