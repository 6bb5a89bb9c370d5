use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use shapeflow_core::bayes::{causal_map_to_bayesnet, select, CausalMap, EvidenceConfig, ScoreReport, SelectPolicy};
use shapeflow_core::fixtures::{drone_bayesnet, drone_grammar};
use shapeflow_core::gan::{train_gan, GanConfig, GanError, GanModel};
use shapeflow_core::grammar::walk::walk_corpus;
use shapeflow_core::grammar::{check_constraints, parse_grammar, DesignSequence, Grammar, GrammarError};
use shapeflow_core::nn::{load_checkpoint, save_checkpoint};
use shapeflow_core::pipeline::{
    preset_prefix, run_demo, sample_labels, snap_samples, summary_json, walk_config_for, DemoManifest,
};
use shapeflow_core::session::SessionStore;
use shapeflow_core::transformer::{train_completer, CompleterConfig, CompleterModel, TransformerError};
use shapeflow_core::vecspace::{
    embed_sequence, read_dataset, write_dataset, DatasetRecord, Provenance, SpaceConfig,
};
use shapeflow_service::ApiConfig;

use crate::{CliError, Command, GrammarArg, OutArg};

type Result<T> = std::result::Result<T, CliError>;

impl From<GrammarError> for CliError {
    fn from(e: GrammarError) -> Self {
        match e {
            GrammarError::Semantic { issues } => CliError::Validation {
                message: "grammar has validation issues".into(),
                issues,
                violation: None,
            },
            other => CliError::invalid(other.to_string()),
        }
    }
}

impl From<GanError> for CliError {
    fn from(e: GanError) -> Self {
        match e {
            GanError::Nn(_) => CliError::runtime(e),
            other => CliError::invalid(other.to_string()),
        }
    }
}

impl From<TransformerError> for CliError {
    fn from(e: TransformerError) -> Self {
        match e {
            TransformerError::InvalidPrefix(v) => CliError::Validation {
                message: v.to_string(),
                issues: Vec::new(),
                violation: Some(v),
            },
            TransformerError::Nn(_) => CliError::runtime(e),
            other => CliError::invalid(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn load_grammar(arg: &GrammarArg) -> Result<Grammar> {
    match &arg.grammar {
        None => Ok(drone_grammar()),
        Some(p) => Ok(parse_grammar(&read(p)?)?),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::invalid(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn output(out: &OutArg) -> Result<Box<dyn Write>> {
    Ok(match &out.out {
        None => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).map_err(|e| CliError::runtime(format!("{}: {e}", p.display())))?,
        )),
    })
}

fn write_lines<T: Serialize>(out: &OutArg, items: &[T]) -> Result<()> {
    let mut w = output(out)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(CliError::runtime)?;
        w.write_all(b"\n").map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    println!("{text}");
    Ok(())
}

fn save_model(path: &Path, c: &shapeflow_core::nn::Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::runtime)?;
    }
    save_checkpoint(path, c).map_err(CliError::runtime)
}

fn load_gan(path: &Path, g: &Grammar) -> Result<GanModel> {
    let c = load_checkpoint(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let m = GanModel::from_checkpoint(&c)?;
    if !m.space.matches(g) || m.shape_types != g.shape_types {
        return Err(CliError::invalid("the GAN was trained for a different grammar"));
    }
    Ok(m)
}

fn load_completer(path: &Path, g: &Grammar) -> Result<CompleterModel> {
    let c = load_checkpoint(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let m = CompleterModel::from_checkpoint(&c)?;
    if !m.vocab.matches(g) {
        return Err(CliError::invalid("the completer was trained for a different grammar"));
    }
    Ok(m)
}

/// A line of `select` input: a bare design, or a `sample` line.
#[derive(Deserialize)]
#[serde(untagged)]
enum SelectLine {
    Design(DesignSequence),
    Sample {
        #[serde(default)]
        id: Option<String>,
        sequence: Option<DesignSequence>,
    },
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SampleLine {
    sequence: Option<DesignSequence>,
    valid: bool,
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GrammarCheck { file } => {
            let src = read(&file)?;
            let g = shapeflow_core::grammar::parse_unchecked(&src)?;
            let issues = shapeflow_core::grammar::validate_grammar(&g);
            print_json(&json!({ "valid": issues.is_empty(), "issues": issues }))?;
            if issues.is_empty() {
                Ok(())
            } else {
                Err(CliError::Validation {
                    message: format!("{} validation issue(s)", issues.len()),
                    issues,
                    violation: None,
                })
            }
        }
        Command::Walk { grammar, n, seed, out } => {
            let g = load_grammar(&grammar)?;
            let walks = walk_corpus(&g, n, seed, &walk_config_for(&g));
            write_lines(&out, &walks)
        }
        Command::Embed { input, grammar, out } => {
            let g = load_grammar(&grammar)?;
            let space = SpaceConfig::for_grammar(&g);
            let designs: Vec<DesignSequence> = read_lines(&input)?;
            let mut records = Vec::with_capacity(designs.len());
            for (i, d) in designs.iter().enumerate() {
                let e = embed_sequence(&g, &space, d)
                    .map_err(|e| CliError::invalid(format!("design {}: {e}", i + 1)))?;
                records.push(DatasetRecord::new(format!("design-{i}"), &e, Provenance::Seed));
            }
            write_dataset(output(&out)?, &records).map_err(CliError::runtime)
        }
        Command::TrainGan {
            dataset,
            grammar,
            model,
            config,
            epochs,
            seed,
        } => {
            let g = load_grammar(&grammar)?;
            let space = SpaceConfig::for_grammar(&g);
            let f = fs::File::open(&dataset).map_err(|e| CliError::runtime(format!("{}: {e}", dataset.display())))?;
            let records = read_dataset(BufReader::new(f)).map_err(|e| CliError::invalid(e.to_string()))?;
            let data = records
                .iter()
                .map(|r| r.to_embedded(&g, &space))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| CliError::invalid(e.to_string()))?;
            let mut cfg: GanConfig = match &config {
                Some(p) => read_json(p)?,
                None => GanConfig::default(),
            };
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let m = train_gan(&data, space, g.shape_types.clone(), cfg)?;
            save_model(&model, &m.to_checkpoint())?;
            print_json(&json!({
                "trainingDesigns": data.len(),
                "epochs": m.loss_history.len(),
                "finalLoss": m.loss_history.last(),
            }))
        }
        Command::Sample {
            model,
            grammar,
            label,
            n,
            seed,
            out,
        } => {
            let g = load_grammar(&grammar)?;
            let m = load_gan(&model, &g)?;
            let snapped = snap_samples(&g, sample_labels(&m, label.as_deref(), n, seed)?);
            let lines: Vec<SampleLine> = snapped
                .into_iter()
                .map(|s| SampleLine {
                    sequence: s.sequence,
                    valid: s.valid,
                })
                .collect();
            write_lines(&out, &lines)?;
            if out.out.is_some() {
                print_json(&json!({
                    "total": lines.len(),
                    "snapped": lines.iter().filter(|l| l.sequence.is_some()).count(),
                    "valid": lines.iter().filter(|l| l.valid).count(),
                }))?;
            }
            Ok(())
        }
        Command::Select {
            input,
            grammar,
            tau,
            top_k,
            causal_map,
        } => {
            let g = load_grammar(&grammar)?;
            let net = match &causal_map {
                Some(p) => causal_map_to_bayesnet(&read_json::<CausalMap>(p)?)
                    .map_err(|e| CliError::invalid(e.to_string()))?,
                None => drone_bayesnet(),
            };
            let (mut ids, mut designs) = (Vec::new(), Vec::new());
            for (i, line) in read_lines::<SelectLine>(&input)?.into_iter().enumerate() {
                let (id, seq) = match line {
                    SelectLine::Design(d) => (None, Some(d)),
                    SelectLine::Sample { id, sequence } => (id, sequence),
                };
                if let Some(s) = seq {
                    ids.push(id.unwrap_or_else(|| format!("line-{}", i + 1)));
                    designs.push(s);
                }
            }
            let policy = match top_k {
                Some(k) => SelectPolicy::TopK { k },
                None => SelectPolicy::Threshold { tau },
            };
            let sel = select(&designs, &net, &g, &EvidenceConfig::default(), policy)
                .map_err(|e| CliError::invalid(e.to_string()))?;
            print_json(&ScoreReport::new(&ids, &sel, policy))
        }
        Command::TrainCompleter {
            input,
            grammar,
            model,
            config,
            epochs,
            seed,
        } => {
            let g = load_grammar(&grammar)?;
            let designs: Vec<DesignSequence> = read_lines(&input)?;
            let mut cfg: CompleterConfig = match &config {
                Some(p) => read_json(p)?,
                None => CompleterConfig::default(),
            };
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let m = train_completer(&g, &designs, cfg)?;
            save_model(&model, &m.to_checkpoint())?;
            print_json(&json!({
                "trainingDesigns": designs.len(),
                "epochs": m.loss_history.len(),
                "finalLoss": m.loss_history.last(),
            }))
        }
        Command::Complete {
            model,
            grammar,
            prefix,
            k,
            max_len,
        } => {
            let g = load_grammar(&grammar)?;
            let prefix = match preset_prefix(&prefix) {
                Some(p) => p,
                None if Path::new(&prefix).exists() => read_json(Path::new(&prefix))?,
                None => {
                    return Err(CliError::invalid(format!(
                        "{prefix:?} is neither a preset (body, body+4arms, body+2arms) nor a file"
                    )))
                }
            };
            let m = load_completer(&model, &g)?;
            let max_len = max_len.unwrap_or(SpaceConfig::for_grammar(&g).max_rules);
            let all = m.complete(&g, &prefix, k, max_len)?;
            let total = all.len();
            let completions: Vec<_> = all
                .into_iter()
                .filter(|c| check_constraints(&g, &c.sequence).is_empty())
                .collect();
            print_json(&json!({
                "prefix": prefix,
                "completions": completions,
                "rejected": total - completions.len(),
            }))
        }
        Command::Contributions {
            task_id,
            branch,
            data_dir,
        } => {
            let store = open_store(&data_dir)?;
            match branch {
                Some(b) => print_json(&store.estimate_contribution(&task_id, &b).map_err(session_error)?),
                None => print_json(&store.contributions(&task_id).map_err(session_error)?),
            }
        }
        Command::Serve {
            bind,
            data_dir,
            gan_model,
            completer_model,
            cors,
            max_body_bytes,
        } => {
            let mut cfg = ApiConfig::new(bind, data_dir);
            cfg.gan_model = gan_model;
            cfg.completer_model = completer_model;
            cfg.cors_allow = cors;
            cfg.max_body_bytes = max_body_bytes;
            serve(cfg)
        }
        Command::Demo { seed, manifest, out } => {
            let m = match &manifest {
                Some(p) => read_json(p)?,
                None => DemoManifest::with_seed(seed),
            };
            let summary = run_demo(&m, out.as_deref()).map_err(CliError::runtime)?;
            print!("{}", summary_json(&summary));
            Ok(())
        }
    }
}

fn open_store(data_dir: &Path) -> Result<SessionStore> {
    let dir: PathBuf = data_dir.join("sessions");
    if !dir.exists() {
        return Err(CliError::runtime(format!("no session data under {}", data_dir.display())));
    }
    SessionStore::open(dir).map_err(CliError::runtime)
}

fn session_error(e: shapeflow_core::session::SessionError) -> CliError {
    use shapeflow_core::session::SessionError::*;
    match e {
        Io(_) | Corrupt(_) => CliError::runtime(e),
        other => CliError::invalid(other.to_string()),
    }
}

fn serve(cfg: ApiConfig) -> Result<()> {
    let handle = shapeflow_service::start(cfg).map_err(CliError::runtime)?;
    println!("{}", json!({ "listening": format!("http://{}", handle.addr) }));
    io::stdout().flush().map_err(CliError::runtime)?;
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(CliError::runtime)?;
    rt.block_on(shutdown_signal());
    handle.shutdown().map_err(CliError::runtime)
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
