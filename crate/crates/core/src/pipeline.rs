//! The end-to-end chain: seed designs, GAN expansion, Bayesian selection and
//! completion training, plus the helpers the CLI and service share.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{select, BayesError, EvidenceConfig, SelectPolicy};
use crate::fixtures::{drone_bayesnet, drone_grammar, drone_walk_config, QUAD, TWIN};
use crate::gan::{train_gan, GanConfig, GanError, GanModel};
use crate::grammar::walk::{walk_corpus, WalkConfig};
use crate::grammar::{check_constraints, validate_grammar, DesignSequence, Grammar, RuleApplication};
use crate::transformer::{train_completer, CompleterConfig, Completion, TransformerError};
use crate::vecspace::{
    embed_sequence, snap_sequence, write_dataset, DatasetError, DatasetRecord, EmbeddedSequence,
    Provenance, SpaceConfig, VecspaceError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error(transparent)]
    Completer(#[from] TransformerError),
    #[error(transparent)]
    Embed(#[from] VecspaceError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Walk settings for a grammar: the persona habits for the drone fixture,
/// plain random walks otherwise.
pub fn walk_config_for(g: &Grammar) -> WalkConfig {
    if *g == drone_grammar() {
        drone_walk_config()
    } else {
        WalkConfig::default()
    }
}

/// One GAN sample after repair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SnappedSample {
    pub embedding: EmbeddedSequence,
    /// `None` when snapping failed.
    pub sequence: Option<DesignSequence>,
    /// Snapped and passing every constraint.
    pub valid: bool,
}

pub fn snap_samples(g: &Grammar, samples: Vec<EmbeddedSequence>) -> Vec<SnappedSample> {
    let space = SpaceConfig::for_grammar(g);
    samples
        .into_iter()
        .map(|e| {
            let sequence = snap_sequence(g, &space, &e).ok();
            let valid = sequence
                .as_ref()
                .is_some_and(|s| check_constraints(g, s).is_empty());
            SnappedSample {
                embedding: e,
                sequence,
                valid,
            }
        })
        .collect()
}

/// Seeds and sizes of a demo run. Every artifact is a function of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DemoManifest {
    pub walk_seed: u64,
    pub gan_seed: u64,
    pub transformer_seed: u64,
    pub seed_walks: usize,
    /// Walks kept apart for completion and accuracy checks.
    pub held_out: usize,
    pub samples: usize,
    pub tau: f64,
    pub gan: GanConfig,
    pub completer: CompleterConfig,
    /// Rules of the held-out design given to the completer.
    pub prefix_rules: usize,
    pub k: usize,
}

impl DemoManifest {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            walk_seed: seed,
            gan_seed: seed,
            transformer_seed: seed,
            seed_walks: 500,
            held_out: 50,
            samples: 2000,
            tau: 0.5,
            gan: GanConfig::default(),
            completer: CompleterConfig::default(),
            prefix_rules: 3,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleCounts {
    pub total: usize,
    pub snapped: usize,
    pub valid: usize,
    pub quad_samples: usize,
    pub quad_four_motor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SelectionSummary {
    pub tau: f64,
    pub scored: usize,
    pub kept: usize,
    pub mean_score: f64,
    pub min_kept_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompletionSummary {
    pub prefix: DesignSequence,
    pub completions: Vec<Completion>,
    /// Every returned completion passes `check_constraints`.
    pub all_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DemoSummary {
    /// Seed designs come from persona random walks, not real designers.
    pub synthetic: bool,
    pub manifest: DemoManifest,
    pub grammar_issues: usize,
    pub seed_designs: usize,
    pub gan_final_loss: Option<crate::gan::LossRecord>,
    pub samples: SampleCounts,
    pub selection: SelectionSummary,
    pub completer_training_designs: usize,
    pub completer_final_loss: Option<f64>,
    pub next_rule_accuracy: f64,
    pub next_rule_baseline: f64,
    pub completion: CompletionSummary,
}

/// Runs the whole chain on the drone fixture. With `out`, datasets,
/// checkpoints and the summary are written there.
pub fn run_demo(m: &DemoManifest, out: Option<&Path>) -> Result<DemoSummary, PipelineError> {
    let g = drone_grammar();
    let space = SpaceConfig::for_grammar(&g);
    let grammar_issues = validate_grammar(&g).len();
    if let Some(dir) = out {
        fs::create_dir_all(dir.join("datasets"))?;
        fs::create_dir_all(dir.join("models"))?;
    }

    // seed designs and a disjoint held-out set
    let walks = walk_corpus(&g, m.seed_walks + m.held_out, m.walk_seed, &drone_walk_config());
    if walks.len() < m.seed_walks + m.held_out {
        return Err(PipelineError::Invalid("walk corpus came up short".into()));
    }
    let (seeds, held) = walks.split_at(m.seed_walks);
    let embedded = seeds
        .iter()
        .map(|s| embed_sequence(&g, &space, s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(dir) = out {
        let records: Vec<_> = embedded
            .iter()
            .enumerate()
            .map(|(i, e)| DatasetRecord::new(format!("seed-{i}"), e, Provenance::Seed))
            .collect();
        write_dataset(fs::File::create(dir.join("datasets/seed.jsonl"))?, &records)?;
    }

    // expansion
    let gan_cfg = GanConfig {
        seed: m.gan_seed,
        ..m.gan.clone()
    };
    let gan = train_gan(&embedded, space, g.shape_types.clone(), gan_cfg)?;
    if let Some(dir) = out {
        fs::write(dir.join("models/gan.json"), gan.to_checkpoint().to_json())?;
    }
    let quads = m.samples.div_ceil(2);
    let mut raw = gan.sample(QUAD, quads, m.gan_seed)?;
    raw.extend(gan.sample(TWIN, m.samples - quads, m.gan_seed.wrapping_add(1))?);
    let snapped = snap_samples(&g, raw);
    let counts = SampleCounts {
        total: snapped.len(),
        snapped: snapped.iter().filter(|s| s.sequence.is_some()).count(),
        valid: snapped.iter().filter(|s| s.valid).count(),
        quad_samples: quads,
        quad_four_motor: snapped[..quads]
            .iter()
            .filter(|s| s.sequence.as_ref().is_some_and(|q| q.count_rule("motor") == 4))
            .count(),
    };

    // selection over the grammar-valid samples
    let candidates: Vec<DesignSequence> = snapped
        .iter()
        .filter(|s| s.valid)
        .filter_map(|s| s.sequence.clone())
        .collect();
    let net = drone_bayesnet();
    let sel = select(
        &candidates,
        &net,
        &g,
        &EvidenceConfig::default(),
        SelectPolicy::Threshold { tau: m.tau },
    )?;
    let kept: Vec<DesignSequence> = sel.kept.iter().map(|&i| candidates[i].clone()).collect();
    let selection = SelectionSummary {
        tau: m.tau,
        scored: candidates.len(),
        kept: kept.len(),
        mean_score: if sel.scores.is_empty() {
            0.0
        } else {
            sel.scores.iter().sum::<f64>() / sel.scores.len() as f64
        },
        min_kept_score: sel.kept.iter().map(|&i| sel.scores[i]).min_by(f64::total_cmp),
    };
    if let Some(dir) = out {
        let records = kept
            .iter()
            .enumerate()
            .map(|(i, s)| {
                embed_sequence(&g, &space, s)
                    .map(|e| DatasetRecord::new(format!("gen-{i}"), &e, Provenance::Generated))
            })
            .collect::<Result<Vec<_>, _>>()?;
        write_dataset(fs::File::create(dir.join("datasets/generated.jsonl"))?, &records)?;
    }

    // completion model on seeds plus selected generated designs
    let mut corpus = seeds.to_vec();
    corpus.extend(kept);
    let completer_cfg = CompleterConfig {
        seed: m.transformer_seed,
        ..m.completer.clone()
    };
    let completer = train_completer(&g, &corpus, completer_cfg)?;
    if let Some(dir) = out {
        fs::write(dir.join("models/completer.json"), completer.to_checkpoint().to_json())?;
    }
    let (accuracy, baseline) = completer.next_rule_accuracy(&g, held)?;

    let target = held
        .iter()
        .find(|s| s.shape_type == QUAD && s.len() > m.prefix_rules)
        .ok_or_else(|| PipelineError::Invalid("no held-out design to complete".into()))?;
    let prefix = DesignSequence {
        shape_type: target.shape_type.clone(),
        applications: target.applications[..m.prefix_rules].to_vec(),
        author_tags: Vec::new(),
    };
    let completions = completer.complete(&g, &prefix, m.k, space.max_rules)?;
    let all_valid = !completions.is_empty()
        && completions
            .iter()
            .all(|c| check_constraints(&g, &c.sequence).is_empty());

    let summary = DemoSummary {
        synthetic: true,
        manifest: m.clone(),
        grammar_issues,
        seed_designs: seeds.len(),
        gan_final_loss: gan.loss_history.last().copied(),
        samples: counts,
        selection,
        completer_training_designs: corpus.len(),
        completer_final_loss: completer.loss_history.last().copied(),
        next_rule_accuracy: accuracy,
        next_rule_baseline: baseline,
        completion: CompletionSummary {
            prefix,
            completions,
            all_valid,
        },
    };
    if let Some(dir) = out {
        fs::write(dir.join("summary.json"), summary_json(&summary))?;
    }
    Ok(summary)
}

/// Pretty JSON with a trailing newline, the on-disk summary form.
pub fn summary_json(s: &DemoSummary) -> String {
    let mut text = serde_json::to_string_pretty(s).expect("summary serializes");
    text.push('\n');
    text
}

/// Named starting points for completion requests.
pub fn preset_prefix(name: &str) -> Option<DesignSequence> {
    let (shape_type, apps) = match name {
        "body" => (QUAD, vec![]),
        "body+4arms" => (QUAD, vec![RuleApplication::new("arm_quad", 0, vec![120.0])]),
        "body+2arms" => (TWIN, vec![RuleApplication::new("arm_pair", 0, vec![120.0])]),
        _ => return None,
    };
    Some(DesignSequence {
        shape_type: shape_type.to_string(),
        applications: apps,
        author_tags: Vec::new(),
    })
}

/// GAN samples for the service and CLI: balanced over `labels` when no label is given.
pub fn sample_labels(
    gan: &GanModel,
    label: Option<&str>,
    n: usize,
    seed: u64,
) -> Result<Vec<EmbeddedSequence>, GanError> {
    match label {
        Some(l) => gan.sample(l, n, seed),
        None => {
            let labels = gan.shape_types.clone();
            let mut out = Vec::with_capacity(n);
            for (i, l) in labels.iter().enumerate() {
                let share = n / labels.len() + usize::from(i < n % labels.len());
                out.extend(gan.sample(l, share, seed.wrapping_add(i as u64))?);
            }
            Ok(out)
        }
    }
}
