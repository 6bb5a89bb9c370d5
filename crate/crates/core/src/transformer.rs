//! Grammar-constrained completion: rule sequences as token streams, a small
//! decoder-only attention model, and beam search that only ever proposes
//! applications the grammar accepts.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{DesignSequence, DesignState, Grammar, GrammarViolation, ParamSpec, RuleApplication};
use crate::nn::{log_softmax_row, Adam, Checkpoint, NnError, ParamStore, Tape, Tensor, Var};

pub const PARAM_BUCKETS: usize = 16;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

#[derive(Debug, Error)]
pub enum TransformerError {
    #[error("{len} tokens exceed the model limit of {max}")]
    TooLong { len: usize, max: usize },
    #[error("unknown shape type {0:?}")]
    UnknownShapeType(String),
    #[error("unknown rule {0:?}")]
    UnknownRule(String),
    #[error("malformed token stream: {0}")]
    Malformed(String),
    #[error("no training pairs")]
    EmptyPairs,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("vocabulary does not match the grammar")]
    VocabMismatch,
    #[error("invalid prefix: {0}")]
    InvalidPrefix(GrammarViolation),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Pad,
    Bos,
    Eos,
    Cond(usize),
    Rule(usize),
    Param(usize),
}

/// Dense token ids: specials, then one condition token per shape type, one
/// token per rule and `buckets` parameter tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TokenVocab {
    pub shape_types: Vec<String>,
    pub rules: Vec<String>,
    pub buckets: usize,
}

impl TokenVocab {
    pub fn for_grammar(g: &Grammar) -> Self {
        Self {
            shape_types: g.shape_types.clone(),
            rules: g.rules.iter().map(|r| r.id.clone()).collect(),
            buckets: PARAM_BUCKETS,
        }
    }

    pub fn size(&self) -> usize {
        3 + self.shape_types.len() + self.rules.len() + self.buckets
    }

    pub fn matches(&self, g: &Grammar) -> bool {
        *self == Self::for_grammar(g)
    }

    pub fn cond(&self, i: usize) -> usize {
        3 + i
    }

    pub fn rule(&self, i: usize) -> usize {
        3 + self.shape_types.len() + i
    }

    pub fn param(&self, bucket: usize) -> usize {
        3 + self.shape_types.len() + self.rules.len() + bucket
    }

    pub fn decode(&self, id: usize) -> Option<Token> {
        let s = self.shape_types.len();
        let r = self.rules.len();
        Some(match id {
            PAD => Token::Pad,
            BOS => Token::Bos,
            EOS => Token::Eos,
            _ if id < 3 + s => Token::Cond(id - 3),
            _ if id < 3 + s + r => Token::Rule(id - 3 - s),
            _ if id < self.size() => Token::Param(id - 3 - s - r),
            _ => return None,
        })
    }

    /// Human-readable token, for reports.
    pub fn name(&self, id: usize) -> String {
        match self.decode(id) {
            Some(Token::Pad) => "<pad>".into(),
            Some(Token::Bos) => "<bos>".into(),
            Some(Token::Eos) => "<eos>".into(),
            Some(Token::Cond(i)) => format!("<{}>", self.shape_types[i]),
            Some(Token::Rule(i)) => self.rules[i].clone(),
            Some(Token::Param(b)) => format!("P{b}"),
            None => format!("<{id}?>"),
        }
    }
}

/// Bucket of a parameter value: `floor(normalized · B)`, clamped to `B − 1`.
pub fn param_bucket(p: &ParamSpec, value: f64, buckets: usize) -> usize {
    let u = p.normalize(value).clamp(0.0, 1.0);
    ((u * buckets as f64).floor() as usize).min(buckets - 1)
}

/// Decoded value of a bucket: its midpoint, de-normalized.
pub fn bucket_value(p: &ParamSpec, bucket: usize, buckets: usize) -> f64 {
    p.denormalize((bucket as f64 + 0.5) / buckets as f64)
}

/// `BOS, COND, (rule, P…)*, EOS`.
pub fn tokenize(
    g: &Grammar,
    vocab: &TokenVocab,
    s: &DesignSequence,
    max_len: usize,
) -> Result<Vec<usize>, TransformerError> {
    let mut out = prefix_tokens(g, vocab, s)?;
    out.push(EOS);
    if out.len() > max_len {
        return Err(TransformerError::TooLong {
            len: out.len(),
            max: max_len,
        });
    }
    Ok(out)
}

/// Tokens without the closing EOS.
fn prefix_tokens(
    g: &Grammar,
    vocab: &TokenVocab,
    s: &DesignSequence,
) -> Result<Vec<usize>, TransformerError> {
    let st = vocab
        .shape_types
        .iter()
        .position(|t| *t == s.shape_type)
        .ok_or_else(|| TransformerError::UnknownShapeType(s.shape_type.clone()))?;
    let mut out = vec![BOS, vocab.cond(st)];
    for a in &s.applications {
        out.extend(application_tokens(g, vocab, a)?);
    }
    Ok(out)
}

fn application_tokens(
    g: &Grammar,
    vocab: &TokenVocab,
    a: &RuleApplication,
) -> Result<Vec<usize>, TransformerError> {
    let ri = g
        .rule_index(&a.rule_id)
        .ok_or_else(|| TransformerError::UnknownRule(a.rule_id.clone()))?;
    let rule = &g.rules[ri];
    let mut out = vec![vocab.rule(ri)];
    for (i, p) in rule.params.iter().enumerate() {
        let v = a.params.get(i).copied().unwrap_or(p.min);
        out.push(vocab.param(param_bucket(p, v, vocab.buckets)));
    }
    Ok(out)
}

/// Host a token stream implies: the first admissible host, else the first free one.
fn canonical_host(state: &DesignState, rule_idx: usize) -> Option<usize> {
    let id = &state.grammar().rules[rule_idx].id;
    state
        .legal_rules()
        .into_iter()
        .find(|l| l.rule_id == *id)
        .map(|l| l.hosts[0])
        .or_else(|| state.open_hosts(rule_idx).first().copied())
}

/// Inverse of [`tokenize`] up to parameter bucketing. Hosts are recovered
/// canonically, so sequences built with canonical hosts round-trip.
pub fn detokenize(
    g: &Grammar,
    vocab: &TokenVocab,
    tokens: &[usize],
) -> Result<DesignSequence, TransformerError> {
    let bad = |m: &str| TransformerError::Malformed(m.to_string());
    if tokens.first() != Some(&BOS) {
        return Err(bad("missing BOS"));
    }
    let shape_type = match tokens.get(1).and_then(|t| vocab.decode(*t)) {
        Some(Token::Cond(i)) => vocab.shape_types[i].clone(),
        _ => return Err(bad("missing condition token")),
    };
    let mut state =
        DesignState::new(g, &shape_type).map_err(|_| TransformerError::UnknownShapeType(shape_type.clone()))?;
    let mut i = 2;
    while i < tokens.len() {
        match vocab.decode(tokens[i]) {
            Some(Token::Eos) => {
                if i + 1 != tokens.len() {
                    return Err(bad("tokens after EOS"));
                }
                break;
            }
            Some(Token::Pad) => break,
            Some(Token::Rule(ri)) => {
                let rule = &g.rules[ri];
                let mut params = Vec::with_capacity(rule.params.len());
                for p in &rule.params {
                    i += 1;
                    match tokens.get(i).and_then(|t| vocab.decode(*t)) {
                        Some(Token::Param(b)) => params.push(bucket_value(p, b, vocab.buckets)),
                        _ => return Err(bad(&format!("rule {} is missing a parameter", rule.id))),
                    }
                }
                let host = canonical_host(&state, ri)
                    .ok_or_else(|| bad(&format!("no host for rule {}", rule.id)))?;
                let a = RuleApplication {
                    rule_id: rule.id.clone(),
                    host,
                    params,
                };
                state
                    .apply(&a)
                    .or_else(|_| state.apply_structural(&a))
                    .map_err(|v| bad(&v.message))?;
                i += 1;
            }
            _ => return Err(bad(&format!("unexpected token at {i}"))),
        }
    }
    Ok(state.to_sequence())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum SplitStrategy {
    /// Prefix of `m` rules, clamped to `M − 1`.
    Fixed { m: usize },
    /// `m` drawn uniformly from `1..=M−1` each time pairs are built.
    Uniform,
}

/// A prefix/suffix split of one solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub input: Vec<usize>,
    pub target: Vec<usize>,
    /// Rules in the whole solution.
    pub total_rules: usize,
    /// Rules in the prefix.
    pub prefix_rules: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairSet {
    pub pairs: Vec<TrainingPair>,
    /// Solutions with fewer than two rules.
    pub skipped: usize,
}

pub fn make_training_pairs(
    g: &Grammar,
    vocab: &TokenVocab,
    dataset: &[DesignSequence],
    split: SplitStrategy,
    seed: u64,
) -> Result<PairSet, TransformerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PairSet::default();
    for s in dataset {
        let total = s.applications.len();
        if total < 2 {
            out.skipped += 1;
            continue;
        }
        let m = match split {
            SplitStrategy::Fixed { m } => m.clamp(1, total - 1),
            SplitStrategy::Uniform => rng.gen_range(1..total),
        };
        let head = DesignSequence {
            shape_type: s.shape_type.clone(),
            applications: s.applications[..m].to_vec(),
            author_tags: Vec::new(),
        };
        let input = prefix_tokens(g, vocab, &head)?;
        let mut target = Vec::new();
        for a in &s.applications[m..] {
            target.extend(application_tokens(g, vocab, a)?);
        }
        target.push(EOS);
        out.pairs.push(TrainingPair {
            input,
            target,
            total_rules: total,
            prefix_rules: m,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompleterConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub max_tokens: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub split: SplitStrategy,
}

impl Default for CompleterConfig {
    fn default() -> Self {
        Self {
            model_dim: 32,
            heads: 2,
            layers: 2,
            ff_dim: 64,
            max_tokens: 128,
            epochs: 30,
            batch: 16,
            lr: 3e-3,
            seed: 7,
            split: SplitStrategy::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompleterModel {
    pub config: CompleterConfig,
    pub vocab: TokenVocab,
    pub params: ParamStore,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// One recommended continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Completion {
    pub suffix: Vec<RuleApplication>,
    /// Prefix plus suffix.
    pub sequence: DesignSequence,
    /// Sum of log-probabilities of the generated tokens, EOS included.
    pub log_likelihood: f64,
    /// `log_likelihood` divided by the number of generated tokens.
    pub score: f64,
}

impl CompleterModel {
    pub fn new(vocab: TokenVocab, config: CompleterConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, f, v) = (config.model_dim, config.ff_dim, vocab.size());
        let mut p = ParamStore::new(config.seed);
        p.init_uniform("tok", &[v, d], 0.1, &mut rng);
        p.init_uniform("pos", &[config.max_tokens, d], 0.1, &mut rng);
        for l in 0..config.layers {
            let n = |s: &str| format!("l{l}.{s}");
            p.init_const(&n("ln1.g"), &[d], 1.0);
            p.init_const(&n("ln1.b"), &[d], 0.0);
            p.init_glorot(&n("qkv.w"), &[d, 3 * d], d, 3 * d, &mut rng);
            p.init_const(&n("qkv.b"), &[3 * d], 0.0);
            p.init_glorot(&n("proj.w"), &[d, d], d, d, &mut rng);
            p.init_const(&n("proj.b"), &[d], 0.0);
            p.init_const(&n("ln2.g"), &[d], 1.0);
            p.init_const(&n("ln2.b"), &[d], 0.0);
            p.init_glorot(&n("ff1.w"), &[d, f], d, f, &mut rng);
            p.init_const(&n("ff1.b"), &[f], 0.0);
            p.init_glorot(&n("ff2.w"), &[f, d], f, d, &mut rng);
            p.init_const(&n("ff2.b"), &[d], 0.0);
        }
        p.init_const("lnf.g", &[d], 1.0);
        p.init_const("lnf.b", &[d], 0.0);
        p.init_glorot("out.w", &[d, v], d, v, &mut rng);
        p.init_const("out.b", &[v], 0.0);
        Self {
            config,
            vocab,
            params: p,
            loss_history: Vec::new(),
        }
    }

    /// Logits graph for `batch` rows of equal length `time`: `[batch·time, V]`.
    fn forward(&self, t: &mut Tape, tokens: &[usize], batch: usize, time: usize) -> Var {
        let p = &self.params;
        let tok = t.param(p, "tok");
        let pos = t.param(p, "pos");
        let x = t.embedding(tok, tokens);
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..time).collect();
        let pe = t.embedding(pos, &positions);
        let mut x = t.add(x, pe);
        for l in 0..self.config.layers {
            let n = |s: &str| format!("l{l}.{s}");
            let (g, b) = (t.param(p, &n("ln1.g")), t.param(p, &n("ln1.b")));
            let h = t.layer_norm(x, g, b);
            let (w, b) = (t.param(p, &n("qkv.w")), t.param(p, &n("qkv.b")));
            let qkv = t.dense(h, w, b);
            let a = t.causal_attention(qkv, batch, time, self.config.heads);
            let (w, b) = (t.param(p, &n("proj.w")), t.param(p, &n("proj.b")));
            let a = t.dense(a, w, b);
            x = t.add(x, a);
            let (g, b) = (t.param(p, &n("ln2.g")), t.param(p, &n("ln2.b")));
            let h = t.layer_norm(x, g, b);
            let (w, b) = (t.param(p, &n("ff1.w")), t.param(p, &n("ff1.b")));
            let h = t.dense(h, w, b);
            let h = t.relu(h);
            let (w, b) = (t.param(p, &n("ff2.w")), t.param(p, &n("ff2.b")));
            let h = t.dense(h, w, b);
            x = t.add(x, h);
        }
        let g = t.param(p, "lnf.g");
        let b = t.param(p, "lnf.b");
        let x = t.layer_norm(x, g, b);
        let (w, b) = (t.param(p, "out.w"), t.param(p, "out.b"));
        t.dense(x, w, b)
    }

    /// Logits for one token row, `[len, V]`.
    pub fn logits(&self, tokens: &[usize]) -> Result<Tensor, TransformerError> {
        self.check_len(tokens.len())?;
        let mut t = Tape::new();
        let out = self.forward(&mut t, tokens, 1, tokens.len());
        Ok(t.value(out).clone())
    }

    fn check_len(&self, len: usize) -> Result<(), TransformerError> {
        if len > self.config.max_tokens {
            return Err(TransformerError::TooLong {
                len,
                max: self.config.max_tokens,
            });
        }
        Ok(())
    }

    /// Teacher-forced passes over fixed pairs, `batch` pairs per step.
    pub fn train_pairs(&mut self, pairs: &[TrainingPair], epochs: usize) -> Result<(), TransformerError> {
        if pairs.is_empty() {
            return Err(TransformerError::EmptyPairs);
        }
        for _ in 0..epochs {
            self.epoch(pairs)?;
        }
        Ok(())
    }

    /// One epoch over `pairs` in a seeded shuffled order; returns the mean loss.
    fn epoch(&mut self, pairs: &[TrainingPair]) -> Result<f64, TransformerError> {
        let opt = Adam::new(self.config.lr);
        let epoch = self.loss_history.len() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch << 32) ^ 0x5eed);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.config.batch.max(1)) {
            let rows: Vec<(Vec<usize>, Vec<Option<usize>>)> = chunk
                .iter()
                .map(|&i| {
                    let p = &pairs[i];
                    let mut seq = p.input.clone();
                    seq.extend_from_slice(&p.target[..p.target.len() - 1]);
                    let mut targets = vec![None; seq.len()];
                    for (k, tok) in p.target.iter().enumerate() {
                        targets[p.input.len() - 1 + k] = Some(*tok);
                    }
                    (seq, targets)
                })
                .collect();
            let time = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
            self.check_len(time)?;
            let mut tokens = Vec::with_capacity(rows.len() * time);
            let mut targets = Vec::with_capacity(rows.len() * time);
            for (seq, tg) in &rows {
                tokens.extend(seq);
                tokens.extend(std::iter::repeat_n(PAD, time - seq.len()));
                targets.extend(tg);
                targets.extend(std::iter::repeat_n(None, time - seq.len()));
            }
            let mut t = Tape::new();
            let logits = self.forward(&mut t, &tokens, rows.len(), time);
            let loss = t.cross_entropy(logits, &targets);
            total += t.value(loss).item();
            steps += 1;
            let grads = t.backward(loss);
            opt.step(&mut self.params, &t.param_grads(&grads))?;
        }
        let mean = total / steps as f64;
        self.loss_history.push(mean);
        Ok(mean)
    }

    /// Log-probability of `suffix` followed by EOS after `prefix`.
    pub fn score_completion(
        &self,
        g: &Grammar,
        prefix: &DesignSequence,
        suffix: &[RuleApplication],
    ) -> Result<f64, TransformerError> {
        let mut tokens = prefix_tokens(g, &self.vocab, prefix)?;
        let start = tokens.len();
        for a in suffix {
            tokens.extend(application_tokens(g, &self.vocab, a)?);
        }
        tokens.push(EOS);
        self.check_len(tokens.len())?;
        let logits = self.logits(&tokens[..tokens.len() - 1])?;
        Ok((start..tokens.len())
            .map(|i| log_softmax_row(logits.row(i - 1))[tokens[i]])
            .sum())
    }

    /// Up to `k` completions of `prefix` adding at most `max_rules` rules,
    /// best first. An empty result means no valid completion was found.
    pub fn complete(
        &self,
        g: &Grammar,
        prefix: &DesignSequence,
        k: usize,
        max_rules: usize,
    ) -> Result<Vec<Completion>, TransformerError> {
        if k == 0 {
            return Err(TransformerError::ZeroK);
        }
        if !self.vocab.matches(g) {
            return Err(TransformerError::VocabMismatch);
        }
        let state = DesignState::replay_checked(g, prefix).map_err(TransformerError::InvalidPrefix)?;
        let start = prefix_tokens(g, &self.vocab, prefix)?;
        self.check_len(start.len() + 1)?;
        let width = k.max(4);
        let mut active = vec![Beam {
            tokens: start.clone(),
            logp: 0.0,
            state,
            pending: None,
            rules: 0,
        }];
        let mut finished: Vec<(Vec<usize>, f64, usize)> = Vec::new();
        while !active.is_empty() {
            let time = active[0].tokens.len();
            let flat: Vec<usize> = active.iter().flat_map(|b| b.tokens.iter().copied()).collect();
            let mut t = Tape::new();
            let out = self.forward(&mut t, &flat, active.len(), time);
            let logits = t.value(out);
            let mut cands: Vec<(f64, usize, usize, f64)> = Vec::new();
            for (bi, beam) in active.iter().enumerate() {
                let lp = log_softmax_row(logits.row(bi * time + time - 1));
                let room = self.config.max_tokens - time;
                for tok in self.allowed(g, beam, max_rules, room) {
                    let logp = beam.logp + lp[tok];
                    let n = time + 1 - start.len();
                    cands.push((logp / n as f64, bi, tok, logp));
                }
            }
            // best first; ties go to the earlier beam, then the smaller token
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            for (_, bi, tok, logp) in cands {
                if tok == EOS {
                    if finished.len() < width {
                        let mut toks = active[bi].tokens.clone();
                        toks.push(EOS);
                        finished.push((toks, logp, time + 1 - start.len()));
                    }
                    continue;
                }
                if next.len() < width {
                    let mut b = active[bi].clone();
                    b.push(g, &self.vocab, tok);
                    next.push(b);
                }
            }
            if finished.len() >= width {
                break;
            }
            active = next;
        }
        finished.sort_by(|a, b| (b.1 / b.2 as f64).total_cmp(&(a.1 / a.2 as f64)));
        let mut out = Vec::new();
        for (tokens, logp, n) in finished.into_iter().take(k) {
            let seq = detokenize(g, &self.vocab, &tokens)?;
            let mut full = prefix.clone();
            full.author_tags.clear();
            let suffix = seq.applications[prefix.applications.len()..].to_vec();
            full.applications.extend(suffix.iter().cloned());
            if !crate::grammar::check_constraints(g, &full).is_empty() {
                continue;
            }
            out.push(Completion {
                suffix,
                sequence: full,
                log_likelihood: logp,
                score: logp / n as f64,
            });
        }
        Ok(out)
    }

    /// Token ids the grammar admits next for `beam`.
    fn allowed(&self, g: &Grammar, beam: &Beam, max_rules: usize, room: usize) -> Vec<usize> {
        let vocab = &self.vocab;
        if room == 0 {
            return Vec::new();
        }
        if let Some((ri, host, params)) = &beam.pending {
            let rule = &g.rules[*ri];
            let p = &rule.params[params.len()];
            return (0..vocab.buckets)
                .filter(|&b| {
                    let mut fixed = params.clone();
                    fixed.push(bucket_value(p, b, vocab.buckets));
                    bucket_feasible(&beam.state, *ri, *host, &mut fixed, vocab.buckets)
                })
                .map(|b| vocab.param(b))
                .collect();
        }
        let mut out = Vec::new();
        if beam.state.is_complete() {
            out.push(EOS);
        }
        if beam.rules < max_rules {
            for l in beam.state.legal_rules() {
                let ri = g.rule_index(&l.rule_id).expect("legal rule exists");
                // a rule group plus EOS must still fit
                if g.rules[ri].params.len() + 2 > room {
                    continue;
                }
                if bucket_feasible(&beam.state, ri, l.hosts[0], &mut Vec::new(), vocab.buckets) {
                    out.push(vocab.rule(ri));
                }
            }
        }
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "completer",
            BTreeMap::from([("completer".to_string(), self.params.clone())]),
            serde_json::json!({
                "config": self.config,
                "vocab": self.vocab,
                "lossHistory": self.loss_history,
            }),
        )
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, TransformerError> {
        let bad = |what: &str| TransformerError::Nn(NnError::Format(format!("completer checkpoint lacks {what}")));
        if c.kind != "completer" {
            return Err(TransformerError::Nn(NnError::Format(format!(
                "expected a completer checkpoint, got {:?}",
                c.kind
            ))));
        }
        let field = |k: &str| c.meta.get(k).cloned().ok_or_else(|| bad(k));
        let parse = |e: serde_json::Error| TransformerError::Nn(NnError::Format(e.to_string()));
        Ok(Self {
            config: serde_json::from_value(field("config")?).map_err(parse)?,
            vocab: serde_json::from_value(field("vocab")?).map_err(parse)?,
            loss_history: serde_json::from_value(field("lossHistory")?).map_err(parse)?,
            params: c.stores.get("completer").cloned().ok_or_else(|| bad("parameters"))?,
        })
    }
}

/// Whether the remaining parameters of `ri` on `host` can take bucket values
/// that pass every prefix check, given the values already in `fixed`.
fn bucket_feasible(state: &DesignState, ri: usize, host: usize, fixed: &mut Vec<f64>, buckets: usize) -> bool {
    let rule = &state.grammar().rules[ri];
    if fixed.len() == rule.params.len() {
        let a = RuleApplication {
            rule_id: rule.id.clone(),
            host,
            params: fixed.clone(),
        };
        return state.check(&a).is_ok();
    }
    let p = &rule.params[fixed.len()];
    let mut last = None;
    for b in 0..buckets {
        let v = bucket_value(p, b, buckets);
        // integer parameters repeat values across buckets
        if last == Some(v) {
            continue;
        }
        last = Some(v);
        fixed.push(v);
        let ok = bucket_feasible(state, ri, host, fixed, buckets);
        fixed.pop();
        if ok {
            return true;
        }
    }
    false
}

#[derive(Clone)]
struct Beam<'g> {
    tokens: Vec<usize>,
    logp: f64,
    state: DesignState<'g>,
    /// Rule chosen but not all parameters emitted yet.
    pending: Option<(usize, usize, Vec<f64>)>,
    rules: usize,
}

impl Beam<'_> {
    fn push(&mut self, g: &Grammar, vocab: &TokenVocab, tok: usize) {
        self.tokens.push(tok);
        let (ri, host, params) = match (vocab.decode(tok), self.pending.take()) {
            (Some(Token::Rule(ri)), None) => {
                let host = canonical_host(&self.state, ri).expect("allowed rule has a host");
                (ri, host, Vec::new())
            }
            (Some(Token::Param(b)), Some((ri, host, mut params))) => {
                params.push(bucket_value(&g.rules[ri].params[params.len()], b, vocab.buckets));
                (ri, host, params)
            }
            _ => unreachable!("masking only admits rule and parameter tokens here"),
        };
        if params.len() == g.rules[ri].params.len() {
            let a = RuleApplication {
                rule_id: g.rules[ri].id.clone(),
                host,
                params,
            };
            self.state.apply(&a).expect("masked application is legal");
            self.rules += 1;
        } else {
            self.pending = Some((ri, host, params));
        }
    }
}

/// Builds pairs afresh each epoch (so uniform splits vary) and trains a new model.
pub fn train_completer(
    g: &Grammar,
    dataset: &[DesignSequence],
    config: CompleterConfig,
) -> Result<CompleterModel, TransformerError> {
    let vocab = TokenVocab::for_grammar(g);
    let mut model = CompleterModel::new(vocab, config);
    let epochs = model.config.epochs;
    model.train_dataset(g, dataset, epochs)?;
    Ok(model)
}

impl CompleterModel {
    /// Continues training on `dataset` with fresh splits per epoch.
    pub fn train_dataset(
        &mut self,
        g: &Grammar,
        dataset: &[DesignSequence],
        epochs: usize,
    ) -> Result<(), TransformerError> {
        for _ in 0..epochs {
            let seed = self.config.seed.wrapping_add(self.loss_history.len() as u64);
            let set = make_training_pairs(g, &self.vocab, dataset, self.config.split, seed)?;
            if set.pairs.is_empty() {
                return Err(TransformerError::EmptyPairs);
            }
            self.epoch(&set.pairs)?;
        }
        Ok(())
    }

    /// Top-1 accuracy of the next rule over every rule position of `held_out`,
    /// choosing among legal rules, alongside the uniform-over-legal baseline.
    pub fn next_rule_accuracy(
        &self,
        g: &Grammar,
        held_out: &[DesignSequence],
    ) -> Result<(f64, f64), TransformerError> {
        let (mut hits, mut baseline, mut n) = (0.0, 0.0, 0usize);
        for s in held_out {
            let tokens = tokenize(g, &self.vocab, s, self.config.max_tokens)?;
            let logits = self.logits(&tokens)?;
            let mut state = DesignState::new(g, &s.shape_type).map_err(TransformerError::InvalidPrefix)?;
            let mut pos = 2;
            for a in &s.applications {
                let legal = state.legal_rules();
                if !legal.is_empty() {
                    let row = logits.row(pos - 1);
                    let best = legal
                        .iter()
                        .map(|l| g.rule_index(&l.rule_id).expect("legal rule exists"))
                        .max_by(|x, y| {
                            row[self.vocab.rule(*x)]
                                .total_cmp(&row[self.vocab.rule(*y)])
                                .then(y.cmp(x))
                        })
                        .expect("non-empty");
                    if g.rules[best].id == a.rule_id {
                        hits += 1.0;
                    }
                    baseline += 1.0 / legal.len() as f64;
                    n += 1;
                }
                state.apply(a).map_err(TransformerError::InvalidPrefix)?;
                pos += 1 + a.params.len();
            }
        }
        if n == 0 {
            return Ok((0.0, 0.0));
        }
        Ok((hits / n as f64, baseline / n as f64))
    }
}
