//! Fixed-shape numeric encoding of design sequences.
//!
//! Each application becomes one row: a one-hot rule id, its parameters scaled
//! to `[0, 1]`, and an occupancy bit. Host attachments travel next to the
//! matrix rather than inside it and are recovered during [`snap_sequence`].

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{DesignSequence, DesignState, Grammar, GrammarViolation, RuleApplication};

pub const DEFAULT_MAX_RULES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpaceConfig {
    pub max_rules: usize,
    pub rule_vocab: usize,
    pub max_params: usize,
}

impl SpaceConfig {
    pub fn for_grammar(g: &Grammar) -> Self {
        Self {
            max_rules: DEFAULT_MAX_RULES,
            rule_vocab: g.rules.len(),
            max_params: g.max_arity(),
        }
    }

    pub fn with_max_rules(mut self, max_rules: usize) -> Self {
        self.max_rules = max_rules;
        self
    }

    pub fn row_width(&self) -> usize {
        self.rule_vocab + self.max_params + 1
    }

    pub fn mask_column(&self) -> usize {
        self.rule_vocab + self.max_params
    }

    pub fn matches(&self, g: &Grammar) -> bool {
        self.rule_vocab == g.rules.len() && self.max_params == g.max_arity()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EmbeddedSequence {
    pub shape_type: String,
    /// One-hot over the grammar's shape types.
    pub label: Vec<f64>,
    /// `max_rules` rows of `row_width` values.
    pub matrix: Vec<Vec<f64>>,
    /// Host occurrence per row, `-1` for empty rows.
    pub host_indices: Vec<i64>,
}

impl EmbeddedSequence {
    pub fn occupied_rows(&self, cfg: &SpaceConfig) -> usize {
        self.matrix
            .iter()
            .take_while(|r| r.get(cfg.mask_column()).is_some_and(|m| *m >= 0.5))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VecspaceError {
    #[error("sequence has {len} applications but the space holds at most {max}")]
    TooLong { len: usize, max: usize },
    #[error("unknown shape type {0:?}")]
    UnknownShapeType(String),
    #[error("space configuration does not match the grammar")]
    ConfigMismatch,
    #[error("invalid sequence: {0}")]
    Invalid(#[from] GrammarViolation),
    #[error("expected a {rows}x{cols} matrix")]
    Shape { rows: usize, cols: usize },
}

/// No legal rule exists for the occupied row `row`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("no legal rule at row {row}")]
pub struct SnapFailure {
    pub row: usize,
}

pub fn label_one_hot(g: &Grammar, shape_type: &str) -> Result<Vec<f64>, VecspaceError> {
    let idx = g
        .shape_type_index(shape_type)
        .ok_or_else(|| VecspaceError::UnknownShapeType(shape_type.to_string()))?;
    let mut label = vec![0.0; g.shape_types.len()];
    label[idx] = 1.0;
    Ok(label)
}

pub fn embed_sequence(
    g: &Grammar,
    cfg: &SpaceConfig,
    s: &DesignSequence,
) -> Result<EmbeddedSequence, VecspaceError> {
    if !cfg.matches(g) {
        return Err(VecspaceError::ConfigMismatch);
    }
    if s.len() > cfg.max_rules {
        return Err(VecspaceError::TooLong {
            len: s.len(),
            max: cfg.max_rules,
        });
    }
    let label = label_one_hot(g, &s.shape_type)?;
    DesignState::replay(g, s)?;
    let width = cfg.row_width();
    let mut matrix = vec![vec![0.0; width]; cfg.max_rules];
    let mut host_indices = vec![-1i64; cfg.max_rules];
    for (i, a) in s.applications.iter().enumerate() {
        let ri = g.rule_index(&a.rule_id).expect("replayed");
        let rule = &g.rules[ri];
        let row = &mut matrix[i];
        row[ri] = 1.0;
        for (j, (p, v)) in rule.params.iter().zip(&a.params).enumerate() {
            row[cfg.rule_vocab + j] = p.normalize(*v).clamp(0.0, 1.0);
        }
        row[cfg.mask_column()] = 1.0;
        host_indices[i] = a.host as i64;
    }
    Ok(EmbeddedSequence {
        shape_type: s.shape_type.clone(),
        label,
        matrix,
        host_indices,
    })
}

/// Index of the largest value; ties and NaN go to the lower index.
fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Reads one row back as a rule application. Never fails: the rule is the
/// argmax of the rule block, parameters are clamped and rounded into range.
pub fn decode_row(g: &Grammar, cfg: &SpaceConfig, row: &[f64], host: usize) -> RuleApplication {
    let at = |i: usize| row.get(i).copied().unwrap_or(0.0);
    let ri = argmax((0..cfg.rule_vocab.min(g.rules.len())).map(at));
    let rule = &g.rules[ri];
    let params = rule
        .params
        .iter()
        .enumerate()
        .map(|(j, p)| p.denormalize(at(cfg.rule_vocab + j)))
        .collect();
    RuleApplication {
        rule_id: rule.id.clone(),
        host,
        params,
    }
}

/// Greedy left-to-right repair into a sequence that passes every prefix check.
pub fn snap_sequence(
    g: &Grammar,
    cfg: &SpaceConfig,
    e: &EmbeddedSequence,
) -> Result<DesignSequence, SnapFailure> {
    let shape_type = if g.shape_type_index(&e.shape_type).is_some() {
        e.shape_type.clone()
    } else {
        g.shape_types
            .get(argmax(e.label.iter().copied()))
            .cloned()
            .ok_or(SnapFailure { row: 0 })?
    };
    let mut state = DesignState::new(g, &shape_type).map_err(|_| SnapFailure { row: 0 })?;
    let mask = cfg.mask_column();
    for (i, row) in e.matrix.iter().enumerate() {
        if !row.get(mask).is_some_and(|m| *m >= 0.5) {
            break;
        }
        let legal = state.legal_rules();
        let at = |k: usize| row.get(k).copied().unwrap_or(0.0);
        let mut pick: Option<(usize, f64, &crate::grammar::LegalRule)> = None;
        for l in &legal {
            let ri = g.rule_index(&l.rule_id).expect("legal rule exists");
            let score = at(ri);
            let better = match pick {
                None => true,
                Some((_, best, _)) => score > best || (best.is_nan() && !score.is_nan()),
            };
            if better {
                pick = Some((ri, score, l));
            }
        }
        let Some((ri, _, choice)) = pick else {
            return Err(SnapFailure { row: i });
        };
        let carried = e.host_indices.get(i).copied().unwrap_or(-1);
        let host = usize::try_from(carried)
            .ok()
            .filter(|h| choice.hosts.contains(h))
            .unwrap_or(choice.hosts[0]);
        let rule = &g.rules[ri];
        let decoded: Vec<f64> = rule
            .params
            .iter()
            .enumerate()
            .map(|(j, p)| p.denormalize(at(cfg.rule_vocab + j)))
            .collect();
        let mut app = RuleApplication {
            rule_id: rule.id.clone(),
            host,
            params: decoded.clone(),
        };
        if state.check(&app).is_err() {
            let witness = state
                .find_params(ri, host, &[])
                .ok_or(SnapFailure { row: i })?;
            let blended = [0.25, 0.5, 0.75, 1.0].into_iter().find_map(|t| {
                let params: Vec<f64> = rule
                    .params
                    .iter()
                    .zip(decoded.iter().zip(&witness))
                    .map(|(p, (d, w))| p.snap((1.0 - t) * d + t * w))
                    .collect();
                let a = RuleApplication {
                    rule_id: rule.id.clone(),
                    host,
                    params,
                };
                state.check(&a).is_ok().then_some(a)
            });
            app = blended.unwrap_or(RuleApplication {
                rule_id: rule.id.clone(),
                host,
                params: witness,
            });
        }
        state.apply(&app).map_err(|_| SnapFailure { row: i })?;
    }
    Ok(state.to_sequence())
}

/// The solution's node in the design space: the sum of its occupied rows.
pub fn solution_node(cfg: &SpaceConfig, e: &EmbeddedSequence) -> Vec<f64> {
    let mut node = vec![0.0; cfg.row_width()];
    for row in &e.matrix {
        if row.get(cfg.mask_column()).is_some_and(|m| *m >= 0.5) {
            for (acc, v) in node.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    node
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Seed,
    Generated,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetRecord {
    pub id: String,
    pub shape_type: String,
    pub matrix: Vec<Vec<f64>>,
    pub host_indices: Vec<i64>,
    pub provenance: Provenance,
}

impl DatasetRecord {
    pub fn new(id: String, e: &EmbeddedSequence, provenance: Provenance) -> Self {
        Self {
            id,
            shape_type: e.shape_type.clone(),
            matrix: e.matrix.clone(),
            host_indices: e.host_indices.clone(),
            provenance,
        }
    }

    pub fn to_embedded(&self, g: &Grammar, cfg: &SpaceConfig) -> Result<EmbeddedSequence, VecspaceError> {
        if self.matrix.len() != cfg.max_rules
            || self.matrix.iter().any(|r| r.len() != cfg.row_width())
        {
            return Err(VecspaceError::Shape {
                rows: cfg.max_rules,
                cols: cfg.row_width(),
            });
        }
        Ok(EmbeddedSequence {
            shape_type: self.shape_type.clone(),
            label: label_one_hot(g, &self.shape_type)?,
            matrix: self.matrix.clone(),
            host_indices: self.host_indices.clone(),
        })
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

pub fn write_dataset<W: Write>(mut w: W, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|source| DatasetError::Json { line: 0, source })?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| DatasetError::Json { line: i + 1, source })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{demo_drone, drone_grammar, QUAD};

    #[test]
    fn empty_sequence_embeds_to_zeros() {
        let g = drone_grammar();
        let cfg = SpaceConfig::for_grammar(&g);
        let e = embed_sequence(&g, &cfg, &DesignSequence::empty(QUAD)).unwrap();
        assert!(e.matrix.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(e.label, [1.0, 0.0]);
        assert_eq!(solution_node(&cfg, &e), vec![0.0; cfg.row_width()]);
    }

    #[test]
    fn demo_drone_layout() {
        let g = drone_grammar();
        let cfg = SpaceConfig::for_grammar(&g);
        assert_eq!((cfg.max_rules, cfg.row_width()), (32, 11));
        let e = embed_sequence(&g, &cfg, &demo_drone()).unwrap();
        for (i, row) in e.matrix.iter().enumerate() {
            let mask = row[cfg.mask_column()];
            if i < 11 {
                assert_eq!(mask, 1.0);
                assert_eq!(row[..cfg.rule_vocab].iter().filter(|v| **v == 1.0).count(), 1);
            } else {
                assert!(row.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn decode_row_clamps_and_argmaxes() {
        let g = drone_grammar();
        let cfg = SpaceConfig::for_grammar(&g);
        let mut row = vec![0.0; cfg.row_width()];
        row[0] = 0.7;
        row[1] = 0.2;
        row[cfg.rule_vocab] = 1.3;
        let a = decode_row(&g, &cfg, &row, 0);
        assert_eq!(a.rule_id, "arm_quad");
        assert_eq!(a.params, [160.0]);
        let nan_row = vec![f64::NAN; cfg.row_width()];
        let a = decode_row(&g, &cfg, &nan_row, 3);
        assert_eq!(a.rule_id, g.rules[0].id);
        assert_eq!(a.params, [60.0]);
    }
}
