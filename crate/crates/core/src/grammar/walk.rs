//! Seeded random walks through a grammar's design-solution space.
//!
//! Walks stand in for designer submissions when no human corpus exists.
//! A [`DesignerHabit`] biases the walk toward a preferred rule order, which
//! gives the sequence models a pattern to pick up.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DesignSequence, DesignState, Grammar, ParamKind, ParamSpec, Rule, RuleApplication};

/// Continuous parameters are drawn from this many equal steps across their range,
/// so their normalized values are exact binary fractions.
pub const PARAM_GRID: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HostPolicy {
    /// Lowest admissible occurrence index.
    Canonical,
    /// Uniform over admissible occurrences.
    Random,
}

/// A persona: the order in which a designer tends to apply rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DesignerHabit {
    pub name: String,
    /// Preferred rules, most preferred first.
    pub priority: Vec<String>,
    /// Optional rules this designer adds, each with probability `extra_prob`.
    pub extras: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WalkConfig {
    pub max_len: usize,
    pub host_policy: HostPolicy,
    pub habits: Vec<DesignerHabit>,
    /// Chance of a uniform pick over legal rules instead of the habit's choice.
    pub noise: f64,
    pub extra_prob: f64,
    /// Without habits: chance of stopping at each complete state.
    pub stop_prob: f64,
    pub max_attempts: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            max_len: 32,
            host_policy: HostPolicy::Canonical,
            habits: Vec::new(),
            noise: 0.1,
            extra_prob: 0.5,
            stop_prob: 0.3,
            max_attempts: 64,
        }
    }
}

/// Draws a value on the walk grid (integers uniformly).
pub fn sample_param<R: Rng + ?Sized>(p: &ParamSpec, rng: &mut R) -> f64 {
    match p.kind {
        ParamKind::Integer => {
            let lo = p.min as i64;
            let hi = p.max as i64;
            rng.gen_range(lo..=hi) as f64
        }
        ParamKind::Continuous => {
            let k = rng.gen_range(0..=PARAM_GRID);
            p.denormalize(f64::from(k) / f64::from(PARAM_GRID))
        }
    }
}

fn sample_application<R: Rng + ?Sized>(
    state: &DesignState<'_>,
    rule_idx: usize,
    rule: &Rule,
    host: usize,
    rng: &mut R,
) -> Option<RuleApplication> {
    for _ in 0..8 {
        let params = rule.params.iter().map(|p| sample_param(p, rng)).collect();
        let a = RuleApplication {
            rule_id: rule.id.clone(),
            host,
            params,
        };
        if state.check(&a).is_ok() {
            return Some(a);
        }
    }
    let params = state.find_params(rule_idx, host, &[])?;
    Some(RuleApplication {
        rule_id: rule.id.clone(),
        host,
        params,
    })
}

/// Rules that still serve a purpose: they add a unit below its lower bound,
/// or they are an extra the designer intends to add.
fn needed(state: &DesignState<'_>, rule: &Rule, pending: &[String]) -> bool {
    if pending.contains(&rule.id) {
        return true;
    }
    let g = state.grammar();
    g.constraints.iter().any(|c| match &c.kind {
        super::ConstraintKind::CountRange {
            unit,
            lo,
            shape_type,
            ..
        } => {
            *unit == rule.adds_unit
                && shape_type.as_deref().is_none_or(|s| s == state.shape_type())
                && state.unit_count(unit) < *lo
        }
        _ => false,
    })
}

/// One random valid complete design, or `None` if every attempt dead-ends.
pub fn random_walk<R: Rng + ?Sized>(
    g: &Grammar,
    shape_type: &str,
    cfg: &WalkConfig,
    rng: &mut R,
) -> Option<DesignSequence> {
    for _ in 0..cfg.max_attempts.max(1) {
        let mut state = DesignState::new(g, shape_type).ok()?;
        let habit = cfg.habits.choose(rng);
        let mut pending: Vec<String> = habit
            .map(|h| {
                h.extras
                    .iter()
                    .filter(|_| rng.gen_bool(cfg.extra_prob.clamp(0.0, 1.0)))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        let mut done = false;
        while state.applications().len() < cfg.max_len {
            let legal = state.legal_rules();
            let complete = state.is_complete();
            if legal.is_empty() {
                done = complete;
                break;
            }
            let pick = match habit {
                Some(h) if !rng.gen_bool(cfg.noise.clamp(0.0, 1.0)) => {
                    let preferred = h.priority.iter().find_map(|id| {
                        legal.iter().find(|l| {
                            l.rule_id == *id
                                && g.rule(id).is_some_and(|r| needed(&state, r, &pending))
                        })
                    });
                    match preferred {
                        Some(l) => Some(l),
                        None if complete => {
                            done = true;
                            break;
                        }
                        None => legal.choose(rng),
                    }
                }
                Some(_) => legal.choose(rng),
                None => {
                    if complete && rng.gen_bool(cfg.stop_prob.clamp(0.0, 1.0)) {
                        done = true;
                        break;
                    }
                    legal.choose(rng)
                }
            };
            let Some(choice) = pick else { break };
            let rule_idx = g.rule_index(&choice.rule_id).expect("legal rule exists");
            let host = match cfg.host_policy {
                HostPolicy::Canonical => choice.hosts[0],
                HostPolicy::Random => *choice.hosts.choose(rng).expect("hosts non-empty"),
            };
            let Some(a) = sample_application(&state, rule_idx, &g.rules[rule_idx], host, rng)
            else {
                break;
            };
            state.apply(&a).expect("checked application applies");
            pending.retain(|id| *id != a.rule_id);
        }
        if !done && state.applications().len() >= cfg.max_len {
            done = state.is_complete();
        }
        if done {
            return Some(state.to_sequence());
        }
    }
    None
}

/// `n` seeded walks, cycling through the grammar's shape types.
pub fn walk_corpus(g: &Grammar, n: usize, seed: u64, cfg: &WalkConfig) -> Vec<DesignSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    if g.shape_types.is_empty() {
        return out;
    }
    let mut i = 0usize;
    let mut misses = 0usize;
    while out.len() < n && misses < n.max(16) {
        let st = &g.shape_types[i % g.shape_types.len()];
        i += 1;
        match random_walk(g, st, cfg, &mut rng) {
            Some(s) => out.push(s),
            None => misses += 1,
        }
    }
    out
}
