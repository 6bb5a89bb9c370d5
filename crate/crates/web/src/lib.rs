//! The design library in the browser: a rule palette that only offers legal
//! moves, a geometry preview of the draft, and its causal-map score.
//!
//! Every method speaks JSON strings so the page needs no bindings beyond
//! `wasm-bindgen`'s. Errors are `{"message", "violation"?}` objects.

use serde::Serialize;
use serde_json::json;
use shapeflow_core::bayes::{derive_evidence, BayesNet, EvidenceConfig};
use shapeflow_core::fixtures::{drone_bayesnet, drone_grammar};
use shapeflow_core::grammar::{
    apply_rule, check_constraints, legal_rules, parse_grammar, realize, serialize_grammar, DesignSequence,
    DesignState, Grammar, GrammarViolation, ParamSpec, RuleApplication,
};
use wasm_bindgen::prelude::*;

fn error(message: impl Into<String>) -> String {
    json!({ "message": message.into() }).to_string()
}

fn violation(v: GrammarViolation) -> String {
    json!({ "message": v.to_string(), "violation": v }).to_string()
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct PaletteEntry<'a> {
    rule_id: &'a str,
    adds_unit: &'a str,
    host_unit: &'a str,
    enabled: bool,
    /// Occurrences the rule may attach to next.
    hosts: Vec<usize>,
    params: &'a [ParamSpec],
    /// Values that pass every prefix check on the first host.
    suggested: Option<Vec<f64>>,
}

#[wasm_bindgen]
pub struct Workbench {
    grammar: Grammar,
    net: BayesNet,
    evidence: EvidenceConfig,
    draft: DesignSequence,
}

impl Default for Workbench {
    fn default() -> Self {
        Self::new()
    }
}

#[wasm_bindgen]
impl Workbench {
    /// The drone fixture with an empty four-motor draft.
    #[wasm_bindgen(constructor)]
    pub fn new() -> Workbench {
        let grammar = drone_grammar();
        let draft = DesignSequence::empty(&grammar.shape_types[0]);
        Workbench {
            grammar,
            net: drone_bayesnet(),
            evidence: EvidenceConfig::default(),
            draft,
        }
    }

    /// A workbench over another grammar; scoring still uses the drone causal map.
    #[wasm_bindgen(js_name = withGrammar)]
    pub fn with_grammar(source: &str) -> Result<Workbench, String> {
        let grammar = parse_grammar(source).map_err(|e| error(e.to_string()))?;
        let draft = DesignSequence::empty(&grammar.shape_types[0]);
        Ok(Workbench {
            grammar,
            net: drone_bayesnet(),
            evidence: EvidenceConfig::default(),
            draft,
        })
    }

    #[wasm_bindgen(js_name = grammarSource)]
    pub fn grammar_source(&self) -> String {
        serialize_grammar(&self.grammar)
    }

    #[wasm_bindgen(js_name = shapeTypes)]
    pub fn shape_types(&self) -> String {
        to_json(&self.grammar.shape_types)
    }

    /// Starts an empty draft of `shape_type`.
    pub fn reset(&mut self, shape_type: &str) -> Result<(), String> {
        if self.grammar.shape_type_index(shape_type).is_none() {
            return Err(error(format!("unknown shape type {shape_type:?}")));
        }
        self.draft = DesignSequence::empty(shape_type);
        Ok(())
    }

    pub fn draft(&self) -> String {
        to_json(&self.draft)
    }

    /// Replaces the draft; it must replay cleanly.
    pub fn load(&mut self, draft_json: &str) -> Result<(), String> {
        let draft: DesignSequence = serde_json::from_str(draft_json).map_err(|e| error(e.to_string()))?;
        DesignState::replay(&self.grammar, &draft).map_err(violation)?;
        self.draft = draft;
        Ok(())
    }

    /// Every rule of the grammar, enabled when it is legal next.
    pub fn palette(&self) -> Result<String, String> {
        let state = DesignState::replay(&self.grammar, &self.draft).map_err(violation)?;
        let legal = state.legal_rules();
        let entries: Vec<PaletteEntry> = self
            .grammar
            .rules
            .iter()
            .enumerate()
            .map(|(ri, rule)| {
                let hosts = legal
                    .iter()
                    .find(|l| l.rule_id == rule.id)
                    .map(|l| l.hosts.clone())
                    .unwrap_or_default();
                PaletteEntry {
                    rule_id: &rule.id,
                    adds_unit: &rule.adds_unit,
                    host_unit: &rule.host.unit,
                    enabled: !hosts.is_empty(),
                    suggested: hosts.first().and_then(|&h| state.find_params(ri, h, &[])),
                    hosts,
                    params: &rule.params,
                }
            })
            .collect();
        Ok(to_json(&entries))
    }

    /// Parameter values for `rule_id` on `host` that pass every prefix check.
    pub fn suggest(&self, rule_id: &str, host: usize) -> Result<String, String> {
        let ri = self
            .grammar
            .rule_index(rule_id)
            .ok_or_else(|| error(format!("unknown rule {rule_id:?}")))?;
        let state = DesignState::replay(&self.grammar, &self.draft).map_err(violation)?;
        state
            .find_params(ri, host, &[])
            .map(|p| to_json(&p))
            .ok_or_else(|| error(format!("{rule_id} cannot attach to occurrence {host}")))
    }

    /// Appends one rule application, or explains which constraint it breaks.
    pub fn apply(&mut self, rule_id: &str, host: usize, params_json: &str) -> Result<(), String> {
        let params: Vec<f64> = serde_json::from_str(params_json).map_err(|e| error(e.to_string()))?;
        let a = RuleApplication::new(rule_id, host, params);
        self.draft = apply_rule(&self.grammar, &self.draft, &a).map_err(violation)?;
        Ok(())
    }

    /// Drops the last application; false when the draft is already empty.
    pub fn undo(&mut self) -> bool {
        let popped = self.draft.applications.pop().is_some();
        self.draft.author_tags.truncate(self.draft.applications.len());
        popped
    }

    /// Whole-design violations: empty once the draft is a finished design.
    pub fn violations(&self) -> String {
        to_json(&check_constraints(&self.grammar, &self.draft))
    }

    /// Triangle mesh of the draft as OBJ text, plus per-part metadata.
    pub fn preview(&self) -> Result<String, String> {
        let asm = realize(&self.grammar, &self.draft).map_err(violation)?;
        let parts: Vec<_> = asm
            .occurrences
            .iter()
            .map(|o| json!({ "unit": o.unit, "application": o.application, "bbox": o.bbox }))
            .collect();
        Ok(json!({
            "obj": asm.to_obj(),
            "parts": parts,
            "collisions": asm.collisions(),
            "massProxy": asm.total_mass_proxy,
        })
        .to_string())
    }

    /// Posterior that the sink concept is high, given the draft's evidence.
    pub fn score(&self) -> Result<String, String> {
        let ev = derive_evidence(&self.grammar, &self.draft, &self.evidence).map_err(violation)?;
        let score = self.net.infer_score(&ev).map_err(|e| error(e.to_string()))?;
        Ok(json!({ "score": score, "evidence": ev }).to_string())
    }
}

/// Legal rules of an arbitrary draft under the fixture grammar, in the
/// service's `/grammar/legal-rules` shape.
#[wasm_bindgen(js_name = legalRules)]
pub fn legal_rules_json(draft_json: &str) -> Result<String, String> {
    let draft: DesignSequence = serde_json::from_str(draft_json).map_err(|e| error(e.to_string()))?;
    let rules = legal_rules(&drone_grammar(), &draft).map_err(violation)?;
    Ok(json!({ "rules": rules }).to_string())
}
