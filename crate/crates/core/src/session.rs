//! Collaborative design sessions.
//!
//! A publisher opens a [`Task`] against a registered grammar. Designers
//! submit rule applications to named solution branches; each submission is
//! checked against the grammar and recorded, accepted or not, in the task's
//! append-only event log. Branch state is a pure fold over the accepted
//! events, so replaying the log from empty reproduces any snapshot.
//!
//! With a data directory, every mutation is appended to disk before it is
//! acknowledged:
//!
//! ```text
//! <dir>/grammars/<ref>.sg
//! <dir>/tasks/<id>/task.json
//! <dir>/tasks/<id>/events.jsonl
//! <dir>/tasks/<id>/snapshot.json
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixtures::drone_grammar;
use crate::grammar::{
    check_constraints, parse_grammar, serialize_grammar, DesignSequence, DesignState, Grammar,
    GrammarError, GrammarViolation, RuleApplication, ValidationIssue,
};

/// Reference under which the drone fixture grammar is always registered.
pub const FIXTURE_GRAMMAR: &str = "drone";
pub const DEFAULT_BRANCH: &str = "main";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Task {
    pub id: String,
    pub product_kind: String,
    pub grammar_ref: String,
    pub shape_type: String,
    pub description: String,
    pub status: TaskStatus,
    pub created_by: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SubmissionKind {
    AppendRules {
        applications: Vec<RuleApplication>,
    },
    /// Drops everything from `index` on and appends `applications`. With
    /// `fork`, the result goes to a new branch and the source is untouched.
    ReplaceFromIndex {
        index: usize,
        applications: Vec<RuleApplication>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fork: Option<String>,
    },
    Finalize,
    /// Publisher closes the task; later submissions are refused.
    Close,
}

/// What a designer sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Submission {
    pub designer_id: String,
    #[serde(default = "default_branch")]
    pub branch: String,
    #[serde(flatten)]
    pub kind: SubmissionKind,
}

fn default_branch() -> String {
    DEFAULT_BRANCH.to_string()
}

impl Submission {
    pub fn append(designer: &str, branch: &str, applications: Vec<RuleApplication>) -> Self {
        Self {
            designer_id: designer.to_string(),
            branch: branch.to_string(),
            kind: SubmissionKind::AppendRules { applications },
        }
    }

    pub fn replace(designer: &str, branch: &str, index: usize, applications: Vec<RuleApplication>) -> Self {
        Self {
            designer_id: designer.to_string(),
            branch: branch.to_string(),
            kind: SubmissionKind::ReplaceFromIndex {
                index,
                applications,
                fork: None,
            },
        }
    }

    pub fn finalize(designer: &str, branch: &str) -> Self {
        Self {
            designer_id: designer.to_string(),
            branch: branch.to_string(),
            kind: SubmissionKind::Finalize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Outcome {
    Accepted,
    Rejected { violation: GrammarViolation },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubmissionEvent {
    /// Logical timestamp: position in the task's log, from 1.
    pub seq: u64,
    pub task_id: String,
    #[serde(flatten)]
    pub submission: Submission,
    pub outcome: Outcome,
}

impl SubmissionEvent {
    pub fn accepted(&self) -> bool {
        self.outcome == Outcome::Accepted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Branch {
    /// `author_tags` holds the designer of each application.
    pub sequence: DesignSequence,
    pub finalized: bool,
}

/// Snapshot of one task: its events and the branches they produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProcessLog {
    pub task: Task,
    pub events: Vec<SubmissionEvent>,
    pub branches: BTreeMap<String, Branch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Solution {
    /// `<task id>.<branch>`
    pub id: String,
    pub task_id: String,
    pub branch: String,
    pub sequence: DesignSequence,
}

pub fn solution_id(task_id: &str, branch: &str) -> String {
    format!("{task_id}.{branch}")
}

/// Splits a solution id into task id and branch.
pub fn parse_solution_id(id: &str) -> Option<(&str, &str)> {
    id.split_once('.')
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ContributionReport {
    pub solution_id: String,
    pub shares: BTreeMap<String, f64>,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("unknown grammar {0:?}")]
    UnknownGrammar(String),
    #[error("invalid grammar: {0}")]
    InvalidGrammar(#[from] GrammarError),
    #[error("grammar has validation issues")]
    GrammarIssues(Vec<ValidationIssue>),
    #[error("grammar reference {0:?} is already registered with different content")]
    GrammarExists(String),
    #[error("unknown shape type {0:?}")]
    UnknownShapeType(String),
    #[error("task {0} is closed")]
    TaskClosed(String),
    #[error("unknown branch {0:?}")]
    UnknownBranch(String),
    #[error("branch {0:?} already exists")]
    BranchExists(String),
    #[error("branch {0:?} is finalized")]
    Finalized(String),
    #[error("solution {0:?} is not finalized")]
    NotFinalized(String),
    #[error("solution {0:?} is empty")]
    EmptySolution(String),
    #[error("{0:?} is not a valid name")]
    BadName(String),
    #[error("index {index} is past the end of a {len}-rule branch")]
    BadIndex { index: usize, len: usize },
    #[error("only the publisher {0:?} may close the task")]
    NotPublisher(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt session data: {0}")]
    Corrupt(String),
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Event-sourced state of one task.
#[derive(Debug, Clone)]
struct TaskLog {
    task: Task,
    events: Vec<SubmissionEvent>,
    branches: BTreeMap<String, Branch>,
}

/// Result of checking a submission: the branch writes it would make.
enum Effect {
    Write(Vec<(String, Branch)>),
    Close,
}

impl TaskLog {
    fn new(task: Task) -> Self {
        Self {
            task,
            events: Vec::new(),
            branches: BTreeMap::new(),
        }
    }

    fn branch(&self, name: &str) -> Result<&Branch, SessionError> {
        self.branches
            .get(name)
            .ok_or_else(|| SessionError::UnknownBranch(name.to_string()))
    }

    fn open_branch(&self, name: &str) -> Result<Branch, SessionError> {
        match self.branches.get(name) {
            Some(b) if b.finalized => Err(SessionError::Finalized(name.to_string())),
            Some(b) => Ok(b.clone()),
            None => Ok(Branch {
                sequence: DesignSequence::empty(&self.task.shape_type),
                finalized: false,
            }),
        }
    }

    /// Checks `sub` against the current state. `Err` is a refusal that is not
    /// logged; `Ok(Err(v))` is a grammar rejection that is logged.
    fn evaluate(
        &self,
        g: &Grammar,
        sub: &Submission,
    ) -> Result<Result<Effect, GrammarViolation>, SessionError> {
        if !valid_name(&sub.designer_id) {
            return Err(SessionError::BadName(sub.designer_id.clone()));
        }
        if self.task.status == TaskStatus::Closed {
            return Err(SessionError::TaskClosed(self.task.id.clone()));
        }
        match &sub.kind {
            SubmissionKind::Close => {
                if sub.designer_id != self.task.created_by {
                    return Err(SessionError::NotPublisher(self.task.created_by.clone()));
                }
                Ok(Ok(Effect::Close))
            }
            SubmissionKind::Finalize => {
                let b = self.branch(&sub.branch)?;
                if b.finalized {
                    return Err(SessionError::Finalized(sub.branch.clone()));
                }
                if let Some(v) = check_constraints(g, &b.sequence).into_iter().next() {
                    return Ok(Err(v));
                }
                let done = Branch {
                    sequence: b.sequence.clone(),
                    finalized: true,
                };
                Ok(Ok(Effect::Write(vec![(sub.branch.clone(), done)])))
            }
            SubmissionKind::AppendRules { applications } => {
                if !valid_name(&sub.branch) {
                    return Err(SessionError::BadName(sub.branch.clone()));
                }
                let base = self.open_branch(&sub.branch)?;
                Ok(extend(g, base, applications, &sub.designer_id)
                    .map(|b| Effect::Write(vec![(sub.branch.clone(), b)])))
            }
            SubmissionKind::ReplaceFromIndex {
                index,
                applications,
                fork,
            } => {
                let source = self.branch(&sub.branch)?;
                let target = fork.as_deref().unwrap_or(&sub.branch);
                if let Some(f) = fork {
                    if !valid_name(f) {
                        return Err(SessionError::BadName(f.clone()));
                    }
                    if self.branches.contains_key(f) {
                        return Err(SessionError::BranchExists(f.clone()));
                    }
                } else if source.finalized {
                    return Err(SessionError::Finalized(sub.branch.clone()));
                }
                let len = source.sequence.len();
                if *index > len {
                    return Err(SessionError::BadIndex { index: *index, len });
                }
                let mut base = Branch {
                    sequence: source.sequence.clone(),
                    finalized: false,
                };
                base.sequence.applications.truncate(*index);
                base.sequence.author_tags.truncate(*index);
                Ok(extend(g, base, applications, &sub.designer_id)
                    .map(|b| Effect::Write(vec![(target.to_string(), b)])))
            }
        }
    }

    fn apply_effect(&mut self, effect: Effect) {
        match effect {
            Effect::Close => self.task.status = TaskStatus::Closed,
            Effect::Write(writes) => {
                for (name, b) in writes {
                    self.branches.insert(name, b);
                }
            }
        }
    }

    /// Re-applies a logged event; accepted events must still be accepted.
    fn replay_event(&mut self, g: &Grammar, ev: SubmissionEvent) -> Result<(), SessionError> {
        let expected = self.events.len() as u64 + 1;
        if ev.seq != expected || ev.task_id != self.task.id {
            return Err(SessionError::Corrupt(format!(
                "task {}: event {} out of order (expected {expected})",
                self.task.id, ev.seq
            )));
        }
        if ev.accepted() {
            match self.evaluate(g, &ev.submission) {
                Ok(Ok(effect)) => self.apply_effect(effect),
                other => {
                    return Err(SessionError::Corrupt(format!(
                        "task {}: accepted event {} no longer applies ({})",
                        self.task.id,
                        ev.seq,
                        match other {
                            Ok(Err(v)) => v.to_string(),
                            Err(e) => e.to_string(),
                            Ok(Ok(_)) => unreachable!(),
                        }
                    )));
                }
            }
        }
        self.events.push(ev);
        Ok(())
    }

    fn snapshot(&self) -> ProcessLog {
        ProcessLog {
            task: self.task.clone(),
            events: self.events.clone(),
            branches: self.branches.clone(),
        }
    }
}

/// Appends `apps` to `base`, tagging each with `designer`.
fn extend(
    g: &Grammar,
    mut base: Branch,
    apps: &[RuleApplication],
    designer: &str,
) -> Result<Branch, GrammarViolation> {
    let mut state = DesignState::replay_checked(g, &base.sequence)?;
    for a in apps {
        state.apply(a)?;
    }
    let tags = &mut base.sequence.author_tags;
    tags.resize(base.sequence.applications.len(), None);
    tags.extend(apps.iter().map(|_| Some(designer.to_string())));
    base.sequence.applications.extend(apps.iter().cloned());
    Ok(base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SnapshotFile {
    event_count: usize,
    task: Task,
    branches: BTreeMap<String, Branch>,
}

/// All tasks, the grammar registry and optional on-disk persistence.
///
/// Writes to one task are serialized by that task's mutex; different tasks
/// proceed independently.
#[derive(Debug)]
pub struct SessionStore {
    dir: Option<PathBuf>,
    grammars: RwLock<BTreeMap<String, Arc<Grammar>>>,
    tasks: RwLock<BTreeMap<String, Arc<Mutex<TaskLog>>>>,
    next_task: Mutex<u64>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl SessionStore {
    /// A store that keeps everything in memory.
    pub fn in_memory() -> Self {
        let mut grammars = BTreeMap::new();
        grammars.insert(FIXTURE_GRAMMAR.to_string(), Arc::new(drone_grammar()));
        Self {
            dir: None,
            grammars: RwLock::new(grammars),
            tasks: RwLock::new(BTreeMap::new()),
            next_task: Mutex::new(1),
        }
    }

    /// Opens (or creates) a persistent store, replaying and verifying every task log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, SessionError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join("grammars"))?;
        fs::create_dir_all(dir.join("tasks"))?;
        let mut store = Self::in_memory();
        store.dir = Some(dir.clone());

        let mut entries: Vec<_> = fs::read_dir(dir.join("grammars"))?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            let Some(name) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".sg"))
            else {
                continue;
            };
            let g = parse_grammar(&fs::read_to_string(&path)?)?;
            store
                .grammars
                .get_mut()
                .unwrap_or_else(|e| e.into_inner())
                .insert(name.to_string(), Arc::new(g));
        }

        let mut max_id = 0;
        let mut entries: Vec<_> = fs::read_dir(dir.join("tasks"))?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let log = store.load_task(&e.path())?;
            if let Some(n) = log.task.id.strip_prefix("task-").and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            store
                .tasks
                .get_mut()
                .unwrap_or_else(|e| e.into_inner())
                .insert(log.task.id.clone(), Arc::new(Mutex::new(log)));
        }
        *store.next_task.get_mut().unwrap_or_else(|e| e.into_inner()) = max_id + 1;
        Ok(store)
    }

    fn load_task(&self, path: &Path) -> Result<TaskLog, SessionError> {
        let corrupt = |what: &str, e: serde_json::Error| {
            SessionError::Corrupt(format!("{}: {what}: {e}", path.display()))
        };
        let task: Task = serde_json::from_str(&fs::read_to_string(path.join("task.json"))?)
            .map_err(|e| corrupt("task.json", e))?;
        let g = self.grammar(&task.grammar_ref)?;
        let snapshot: Option<SnapshotFile> = match fs::read_to_string(path.join("snapshot.json")) {
            Ok(s) => Some(serde_json::from_str(&s).map_err(|e| corrupt("snapshot.json", e))?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let mut log = TaskLog::new(task);
        let events = path.join("events.jsonl");
        if events.exists() {
            for (i, line) in BufReader::new(File::open(&events)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let ev = match serde_json::from_str::<SubmissionEvent>(&line) {
                    Ok(ev) => ev,
                    // a torn final line from a crash mid-append was never acknowledged
                    Err(_) if is_last_line(&events, i)? => break,
                    Err(e) => return Err(corrupt(&format!("events.jsonl line {}", i + 1), e)),
                };
                log.replay_event(&g, ev)?;
                if let Some(s) = &snapshot {
                    if s.event_count == log.events.len()
                        && (s.task != log.task || s.branches != log.branches)
                    {
                        return Err(SessionError::Corrupt(format!(
                            "{}: snapshot disagrees with replay",
                            path.display()
                        )));
                    }
                }
            }
        }
        if let Some(s) = &snapshot {
            if s.event_count > log.events.len() {
                return Err(SessionError::Corrupt(format!(
                    "{}: snapshot covers {} events but the log has {}",
                    path.display(),
                    s.event_count,
                    log.events.len()
                )));
            }
        }
        Ok(log)
    }

    pub fn grammar(&self, grammar_ref: &str) -> Result<Arc<Grammar>, SessionError> {
        self.grammars
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(grammar_ref)
            .cloned()
            .ok_or_else(|| SessionError::UnknownGrammar(grammar_ref.to_string()))
    }

    pub fn grammar_refs(&self) -> Vec<String> {
        self.grammars
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .cloned()
            .collect()
    }

    /// Parses, validates and registers grammar source under `grammar_ref`.
    /// Registering identical content twice is a no-op.
    pub fn register_grammar(&self, grammar_ref: &str, source: &str) -> Result<Arc<Grammar>, SessionError> {
        if !valid_name(grammar_ref) {
            return Err(SessionError::BadName(grammar_ref.to_string()));
        }
        let g = match parse_grammar(source) {
            Ok(g) => g,
            Err(GrammarError::Semantic { issues }) => return Err(SessionError::GrammarIssues(issues)),
            Err(e) => return Err(e.into()),
        };
        let mut reg = self.grammars.write().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = reg.get(grammar_ref) {
            if **existing == g {
                return Ok(existing.clone());
            }
            return Err(SessionError::GrammarExists(grammar_ref.to_string()));
        }
        if let Some(dir) = &self.dir {
            write_atomic(&dir.join("grammars").join(format!("{grammar_ref}.sg")), serialize_grammar(&g).as_bytes())?;
        }
        let g = Arc::new(g);
        reg.insert(grammar_ref.to_string(), g.clone());
        Ok(g)
    }

    pub fn publish_task(
        &self,
        publisher: &str,
        grammar_ref: &str,
        shape_type: &str,
        description: &str,
    ) -> Result<Task, SessionError> {
        if !valid_name(publisher) {
            return Err(SessionError::BadName(publisher.to_string()));
        }
        let g = self.grammar(grammar_ref)?;
        if g.shape_type_index(shape_type).is_none() {
            return Err(SessionError::UnknownShapeType(shape_type.to_string()));
        }
        let mut next = lock(&self.next_task);
        let task = Task {
            id: format!("task-{}", *next),
            product_kind: g.product_kind.clone(),
            grammar_ref: grammar_ref.to_string(),
            shape_type: shape_type.to_string(),
            description: description.to_string(),
            status: TaskStatus::Open,
            created_by: publisher.to_string(),
        };
        if let Some(dir) = &self.dir {
            let tdir = dir.join("tasks").join(&task.id);
            fs::create_dir_all(&tdir)?;
            write_atomic(&tdir.join("task.json"), &to_json(&task))?;
        }
        *next += 1;
        self.tasks
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(task.id.clone(), Arc::new(Mutex::new(TaskLog::new(task.clone()))));
        Ok(task)
    }

    fn task_log(&self, task_id: &str) -> Result<Arc<Mutex<TaskLog>>, SessionError> {
        self.tasks
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(task_id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownTask(task_id.to_string()))
    }

    pub fn task(&self, task_id: &str) -> Result<Task, SessionError> {
        let log = self.task_log(task_id)?;
        let task = lock(&log).task.clone();
        Ok(task)
    }

    pub fn tasks(&self) -> Vec<Task> {
        let logs: Vec<_> = self
            .tasks
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect();
        logs.iter().map(|l| lock(l).task.clone()).collect()
    }

    /// Records a submission. Grammar rejections are logged and returned as a
    /// rejected event; refusals (closed task, unknown branch, ...) are errors
    /// and leave no trace.
    pub fn submit(&self, task_id: &str, sub: Submission) -> Result<SubmissionEvent, SessionError> {
        let log = self.task_log(task_id)?;
        let mut log = lock(&log);
        let g = self.grammar(&log.task.grammar_ref)?;
        let (outcome, effect) = match log.evaluate(&g, &sub)? {
            Ok(effect) => (Outcome::Accepted, Some(effect)),
            Err(violation) => (Outcome::Rejected { violation }, None),
        };
        let ev = SubmissionEvent {
            seq: log.events.len() as u64 + 1,
            task_id: task_id.to_string(),
            submission: sub,
            outcome,
        };
        if let Some(dir) = &self.dir {
            let tdir = dir.join("tasks").join(task_id);
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(tdir.join("events.jsonl"))?;
            let mut line = to_json(&ev);
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        if let Some(effect) = effect {
            log.apply_effect(effect);
        }
        log.events.push(ev.clone());
        if let Some(dir) = &self.dir {
            // the snapshot only speeds up verification; the log is the record
            let snap = SnapshotFile {
                event_count: log.events.len(),
                task: log.task.clone(),
                branches: log.branches.clone(),
            };
            write_atomic(&dir.join("tasks").join(task_id).join("snapshot.json"), &to_json(&snap))?;
        }
        Ok(ev)
    }

    pub fn close_task(&self, task_id: &str, publisher: &str) -> Result<SubmissionEvent, SessionError> {
        self.submit(
            task_id,
            Submission {
                designer_id: publisher.to_string(),
                branch: default_branch(),
                kind: SubmissionKind::Close,
            },
        )
    }

    pub fn progress(&self, task_id: &str) -> Result<ProcessLog, SessionError> {
        let log = self.task_log(task_id)?;
        let snap = lock(&log).snapshot();
        Ok(snap)
    }

    /// Finalized branches, in branch-name order.
    pub fn collect_solutions(&self, task_id: &str) -> Result<Vec<Solution>, SessionError> {
        let log = self.task_log(task_id)?;
        let log = lock(&log);
        Ok(log
            .branches
            .iter()
            .filter(|(_, b)| b.finalized)
            .map(|(name, b)| Solution {
                id: solution_id(task_id, name),
                task_id: task_id.to_string(),
                branch: name.clone(),
                sequence: b.sequence.clone(),
            })
            .collect())
    }

    /// A branch's current sequence, finalized or not.
    pub fn branch(&self, task_id: &str, branch: &str) -> Result<Branch, SessionError> {
        let log = self.task_log(task_id)?;
        let log = lock(&log);
        log.branch(branch).cloned()
    }

    pub fn estimate_contribution(&self, task_id: &str, branch: &str) -> Result<ContributionReport, SessionError> {
        let b = self.branch(task_id, branch)?;
        let id = solution_id(task_id, branch);
        if !b.finalized {
            return Err(SessionError::NotFinalized(id));
        }
        contribution(&id, &b.sequence).ok_or(SessionError::EmptySolution(id))
    }

    /// Reports for every finalized branch.
    pub fn contributions(&self, task_id: &str) -> Result<Vec<ContributionReport>, SessionError> {
        Ok(self
            .collect_solutions(task_id)?
            .iter()
            .filter_map(|s| contribution(&s.id, &s.sequence))
            .collect())
    }

    /// Grammar and sequence for a solution id, finalized or not.
    pub fn solution(&self, id: &str) -> Result<(Arc<Grammar>, DesignSequence), SessionError> {
        let (task_id, branch) =
            parse_solution_id(id).ok_or_else(|| SessionError::UnknownBranch(id.to_string()))?;
        let task = self.task(task_id)?;
        let b = self.branch(task_id, branch)?;
        Ok((self.grammar(&task.grammar_ref)?, b.sequence))
    }
}

/// Share of each designer: applications they last wrote over the total.
/// `None` for an empty sequence.
pub fn contribution(solution_id: &str, seq: &DesignSequence) -> Option<ContributionReport> {
    let n = seq.len();
    if n == 0 {
        return None;
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for i in 0..n {
        let who = seq
            .author_tags
            .get(i)
            .cloned()
            .flatten()
            .unwrap_or_else(|| "unknown".to_string());
        *counts.entry(who).or_default() += 1;
    }
    Some(ContributionReport {
        solution_id: solution_id.to_string(),
        shares: counts
            .into_iter()
            .map(|(d, c)| (d, c as f64 / n as f64))
            .collect(),
    })
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("session types serialize")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
    }
    fs::rename(tmp, path)
}

fn is_last_line(path: &Path, index: usize) -> std::io::Result<bool> {
    let n = BufReader::new(File::open(path)?).lines().count();
    Ok(index + 1 == n)
}

