//! The iterative annotation loop with durable on-disk state.
//!
//! A project directory holds:
//!
//! ```text
//! project.json                 manifest, the commit point of every step
//! project.lock                 advisory single-writer lock
//! pool.conllu                  sentences to be annotated
//! batches/NNN/pseudo.conllu    parser output for batch NNN
//! batches/NNN/draft.conllu     working copy under correction
//! batches/NNN/audit.log        one JSON edit record per line
//! batches/NNN/gold.conllu      finalized annotation
//! batches/NNN/report.json      pseudo-vs-gold scores
//! batches/NNN/confusion.csv
//! models/iterNNN/              model versions, iter000 being the base
//! ```
//!
//! Batches move SAMPLED → PSEUDO_ANNOTATED → IN_CORRECTION → GOLD_FINALIZED
//! → FINETUNED, or to FAILED. Every mutating operation takes the project
//! lock, cleans up debris of interrupted runs, writes its data files
//! atomically and then the manifest. A crash at any point leaves either
//! the old or the new state.

mod audit;
mod manifest;
mod store;

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adapter::{self, AdapterError};
use crate::conllu::{
    self, validate, validate_unannotated, ParseError, Sentence, SentenceViolation, Treebank,
};
use crate::metrics::{self, MetricsError};
use crate::refparser::{self, ParserError, ParserModel};

pub use audit::{edits_towards, read_log, replay, AuditRecord, PriorValues, TokenEdit};
pub use manifest::{
    BatchRecord, BatchReport, BatchState, ModelRef, ParserBackend, ProjectManifest, Settings,
    StateChange, TrendPoint, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, MANIFEST_VERSION,
};
pub use store::FAILPOINT_ENV;

use store::{failpoint, write_atomic, ProjectLock, TEMP_PREFIX};

pub const MANIFEST_FILE: &str = "project.json";
pub const LOCK_FILE: &str = "project.lock";
pub const POOL_FILE: &str = "pool.conllu";
const STAGING_PREFIX: &str = ".staging-";

/// The basic UD relations, offered for autocompletion next to the labels
/// a project has actually seen.
pub const UD_RELATIONS: [&str; 37] = [
    "acl",
    "advcl",
    "advmod",
    "amod",
    "appos",
    "aux",
    "case",
    "cc",
    "ccomp",
    "clf",
    "compound",
    "conj",
    "cop",
    "csubj",
    "dep",
    "det",
    "discourse",
    "dislocated",
    "expl",
    "fixed",
    "flat",
    "goeswith",
    "iobj",
    "list",
    "mark",
    "nmod",
    "nsubj",
    "nummod",
    "obj",
    "obl",
    "orphan",
    "parataxis",
    "punct",
    "reparandum",
    "root",
    "vocative",
    "xcomp",
];

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("{0} is not empty")]
    NotEmpty(PathBuf),
    #[error("{0} is not a project (no {MANIFEST_FILE})")]
    NotAProject(PathBuf),
    #[error("unsupported manifest version {0}")]
    ManifestVersion(u32),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid pool: {}", join(.0))]
    InvalidPool(Vec<String>),
    #[error("batch {0} is still in progress")]
    BatchInProgress(usize),
    #[error("the pool has no remaining sentences")]
    PoolExhausted,
    #[error("invalid batch selection: {0}")]
    Selection(String),
    #[error("no batch {0}")]
    NoSuchBatch(usize),
    #[error("no sentence {0:?} in this batch")]
    NoSuchSentence(String),
    #[error("sentence {sent_id:?} has no token {token}")]
    NoSuchToken { sent_id: String, token: usize },
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("cannot {op} batch {batch} in state {state}")]
    WrongState {
        batch: usize,
        state: BatchState,
        op: &'static str,
    },
    #[error("batch {batch} has invalid sentences: {}", join(.violations))]
    InvalidBatch {
        batch: usize,
        violations: Vec<SentenceViolation>,
    },
    #[error("batch {batch} was annotated with {model_used}, but the current model is {current}")]
    NotLatestModel {
        batch: usize,
        model_used: String,
        current: String,
    },
    #[error("pseudo-annotation failed: {0}")]
    Predict(String),
    #[error("fine-tuning batch {batch} failed: {reason}")]
    FinetuneFailed { batch: usize, reason: String },
    #[error(transparent)]
    Parser(#[from] ParserError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

type Result<T, E = ProjectError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ProjectError + '_ {
    move |source| ProjectError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// How the base model `models/iter000` comes about.
#[derive(Clone, Debug)]
pub enum BaseModel {
    /// Copy an existing model directory.
    Directory(PathBuf),
    /// Train the builtin parser on an annotated treebank.
    Train(Treebank),
}

#[derive(Clone, Debug)]
pub struct InitOptions {
    pub name: String,
    pub batch_size: usize,
    pub backend: ParserBackend,
    pub settings: Settings,
    pub base: BaseModel,
}

impl InitOptions {
    pub fn builtin(name: impl Into<String>, base: BaseModel) -> Self {
        InitOptions {
            name: name.into(),
            batch_size: DEFAULT_BATCH_SIZE,
            backend: ParserBackend::Builtin,
            settings: Settings::default(),
            base,
        }
    }
}

/// What recovery cleaned up.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub removed: Vec<PathBuf>,
    pub rewritten: Vec<PathBuf>,
    pub manifest_updated: bool,
}

impl RecoveryReport {
    pub fn is_clean(&self) -> bool {
        self.removed.is_empty() && self.rewritten.is_empty() && !self.manifest_updated
    }
}

type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// Handle on a project directory. Holds no cached state: every call reads
/// the last durable manifest, so handles are cheap and may be shared.
#[derive(Clone)]
pub struct Project {
    dir: PathBuf,
    clock: Clock,
}

impl std::fmt::Debug for Project {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Project").field("dir", &self.dir).finish()
    }
}

pub fn batch_dir_name(index: usize) -> String {
    format!("batches/{index:03}")
}

pub fn model_id(version: usize) -> String {
    format!("iter{version:03}")
}

impl Project {
    /// Creates a project in `dir`, which must be absent or empty.
    pub fn init(dir: impl Into<PathBuf>, pool: &Treebank, opts: InitOptions) -> Result<Project> {
        Project::create(dir.into(), pool, opts, Arc::new(Utc::now))
    }

    /// Like [`Project::init`], with every timestamp taken from `clock`.
    pub fn init_with_clock(
        dir: impl Into<PathBuf>,
        pool: &Treebank,
        opts: InitOptions,
        clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static,
    ) -> Result<Project> {
        Project::create(dir.into(), pool, opts, Arc::new(clock))
    }

    fn create(dir: PathBuf, pool: &Treebank, opts: InitOptions, clock: Clock) -> Result<Project> {
        if dir.exists() {
            let mut entries = std::fs::read_dir(&dir).map_err(io_err(&dir))?;
            if entries.next().is_some() {
                return Err(ProjectError::NotEmpty(dir));
            }
        }
        check_pool(pool)?;
        if opts.batch_size == 0 {
            return Err(ProjectError::InvalidPool(vec![
                "batch size must be positive".into(),
            ]));
        }
        std::fs::create_dir_all(dir.join("batches")).map_err(io_err(&dir))?;
        std::fs::create_dir_all(dir.join("models")).map_err(io_err(&dir))?;
        let project = Project { dir, clock };
        let _lock = project.lock()?;

        let pool_path = project.dir.join(POOL_FILE);
        write_atomic(&pool_path, conllu::serialize(pool).as_bytes()).map_err(io_err(&pool_path))?;

        let base_id = model_id(0);
        let base_path = format!("models/{base_id}");
        let base_dir = project.dir.join(&base_path);
        match (&opts.base, &opts.backend) {
            (BaseModel::Train(tb), ParserBackend::Builtin) => {
                let model = refparser::train(
                    tb,
                    opts.settings.train_epochs,
                    opts.settings.train_seed,
                    None,
                )?;
                model.save(&base_dir)?;
            }
            (BaseModel::Train(_), ParserBackend::External(_)) => {
                return Err(AdapterError::Config(
                    "an external backend needs a base model directory".into(),
                )
                .into());
            }
            (BaseModel::Directory(src), backend) => {
                if let ParserBackend::External(cfg) = backend {
                    cfg.validate()?;
                }
                store::copy_dir(src, &base_dir).map_err(io_err(src))?;
                if *backend == ParserBackend::Builtin {
                    ParserModel::load(&base_dir)?;
                }
            }
        }

        let now = project.now();
        let manifest = ProjectManifest {
            format_version: MANIFEST_VERSION,
            name: opts.name,
            created: now,
            pool_file: POOL_FILE.to_string(),
            pool_size: pool.len(),
            batch_size: opts.batch_size,
            parser_backend: opts.backend,
            model_versions: vec![ModelRef {
                id: base_id,
                path: base_path,
                trained_on: None,
                created: now,
            }],
            batches: Vec::new(),
            settings: opts.settings,
        };
        project.write_manifest(&manifest)?;
        Ok(project)
    }

    /// Opens an existing project.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Project> {
        let project = Project::unchecked(dir.into());
        project.manifest()?;
        Ok(project)
    }

    fn unchecked(dir: PathBuf) -> Project {
        Project {
            dir,
            clock: Arc::new(Utc::now),
        }
    }

    /// Replaces the timestamp source, e.g. to make runs reproducible.
    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.dir.join(relative)
    }

    fn lock(&self) -> Result<ProjectLock> {
        let p = self.dir.join(LOCK_FILE);
        ProjectLock::acquire(&p).map_err(io_err(&p))
    }

    /// The last durable manifest.
    pub fn manifest(&self) -> Result<ProjectManifest> {
        let path = self.dir.join(MANIFEST_FILE);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ProjectError::NotAProject(self.dir.clone()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let m: ProjectManifest =
            serde_json::from_str(&text).map_err(|source| ProjectError::Json {
                path: path.clone(),
                source,
            })?;
        if m.format_version != MANIFEST_VERSION {
            return Err(ProjectError::ManifestVersion(m.format_version));
        }
        Ok(m)
    }

    fn write_manifest(&self, m: &ProjectManifest) -> Result<()> {
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(m).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes()).map_err(io_err(&path))
    }

    fn read_treebank(&self, relative: &str) -> Result<Treebank> {
        Ok(conllu::read_file(self.dir.join(relative))?)
    }

    fn write_treebank(&self, relative: &str, tb: &Treebank) -> Result<()> {
        let path = self.dir.join(relative);
        write_atomic(&path, conllu::serialize(tb).as_bytes()).map_err(io_err(&path))
    }

    pub fn pool(&self) -> Result<Treebank> {
        self.read_treebank(POOL_FILE)
    }

    /// Pool sentence ids not yet assigned to any batch, in pool order.
    pub fn remaining(&self) -> Result<Vec<String>> {
        let m = self.manifest()?;
        let used: HashSet<&str> = m
            .batches
            .iter()
            .flat_map(|b| b.sentence_ids.iter().map(String::as_str))
            .collect();
        Ok(self
            .pool()?
            .sentences
            .into_iter()
            .map(|s| s.sent_id)
            .filter(|id| !used.contains(id.as_str()))
            .collect())
    }

    fn batch_record(&self, m: &ProjectManifest, index: usize) -> Result<BatchRecord> {
        m.batch(index)
            .cloned()
            .ok_or(ProjectError::NoSuchBatch(index))
    }

    pub fn pseudo(&self, index: usize) -> Result<Treebank> {
        let b = self.batch_record(&self.manifest()?, index)?;
        self.read_treebank(&b.pseudo_file)
    }

    pub fn audit_log(&self, index: usize) -> Result<Vec<AuditRecord>> {
        let b = self.batch_record(&self.manifest()?, index)?;
        self.read_audit(&b)
    }

    fn read_audit(&self, b: &BatchRecord) -> Result<Vec<AuditRecord>> {
        let path = self.dir.join(&b.audit_file);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(&path)(e)),
        };
        read_log(&text).map_err(|source| ProjectError::Json { path, source })
    }

    /// The working copy: pseudo-annotation with all logged edits replayed.
    pub fn draft(&self, index: usize) -> Result<Treebank> {
        let b = self.batch_record(&self.manifest()?, index)?;
        let pseudo = self.read_treebank(&b.pseudo_file)?;
        Ok(replay(&pseudo, &self.read_audit(&b)?))
    }

    pub fn gold(&self, index: usize) -> Result<Treebank> {
        let m = self.manifest()?;
        let b = self.batch_record(&m, index)?;
        if !has_gold(&b) {
            return Err(ProjectError::WrongState {
                batch: index,
                state: b.state,
                op: "read gold of",
            });
        }
        self.read_treebank(&b.gold_file)
    }

    /// Gold once finalized, the draft before.
    pub fn working_copy(&self, index: usize) -> Result<Treebank> {
        let b = self.batch_record(&self.manifest()?, index)?;
        if has_gold(&b) {
            self.read_treebank(&b.gold_file)
        } else {
            self.draft(index)
        }
    }

    /// Latest batch containing `sent_id`.
    pub fn batch_of(&self, sent_id: &str) -> Result<Option<usize>> {
        Ok(self
            .manifest()?
            .batches
            .iter()
            .rev()
            .find(|b| b.sentence_ids.iter().any(|s| s == sent_id))
            .map(|b| b.index))
    }

    /// Relation labels for autocompletion: the basic UD set plus every label
    /// found in the pool, the batches and a builtin current model.
    pub fn labels(&self) -> Result<Vec<String>> {
        let m = self.manifest()?;
        let mut labels: BTreeSet<String> = UD_RELATIONS.iter().map(|s| s.to_string()).collect();
        let mut add = |tb: &Treebank| {
            labels.extend(
                tb.sentences
                    .iter()
                    .flat_map(|s| s.tokens.iter().filter_map(|t| t.deprel.clone())),
            );
        };
        add(&self.pool()?);
        for b in &m.batches {
            add(&self.read_treebank(&b.pseudo_file)?);
            add(&self.working_copy(b.index)?);
        }
        if m.parser_backend == ParserBackend::Builtin {
            if let Ok(model) = ParserModel::load(&self.dir.join(&m.current_model().path)) {
                labels.extend(model.label_set);
            }
        }
        Ok(labels.into_iter().collect())
    }

    fn predict(&self, m: &ProjectManifest, model: &ModelRef, tb: &Treebank) -> Result<Treebank> {
        let model_dir = self.dir.join(&model.path);
        let out = match &m.parser_backend {
            ParserBackend::Builtin => {
                let model = ParserModel::load(&model_dir)?;
                refparser::predict(&model, tb)?
            }
            ParserBackend::External(cfg) => {
                adapter::external_predict(&cfg.with_model_dir(model_dir), tb)?
            }
        };
        for s in &out.sentences {
            if let Some(v) = validate(s).first() {
                return Err(ProjectError::Predict(format!(
                    "sentence {}: {v}",
                    s.sent_id
                )));
            }
        }
        Ok(out)
    }

    /// Samples the next batch and pseudo-annotates it with the current
    /// model.
    ///
    /// Without `selection`, `min(batch_size, remaining)` sentences are drawn
    /// without replacement by a generator seeded with the sampling seed plus
    /// the batch index, and kept in pool order. With `selection`, exactly
    /// those remaining sentence ids form the batch. Nothing is recorded when
    /// prediction fails.
    pub fn next_batch(&self, selection: Option<&[String]>) -> Result<BatchRecord> {
        let _lock = self.lock()?;
        self.recover_locked()?;
        let mut m = self.manifest()?;
        if let Some(b) = m.in_progress() {
            return Err(ProjectError::BatchInProgress(b.index));
        }
        let pool = self.pool()?;
        let used: HashSet<&str> = m
            .batches
            .iter()
            .flat_map(|b| b.sentence_ids.iter().map(String::as_str))
            .collect();
        let remaining: Vec<&Sentence> = pool
            .sentences
            .iter()
            .filter(|s| !used.contains(s.sent_id.as_str()))
            .collect();
        if remaining.is_empty() {
            return Err(ProjectError::PoolExhausted);
        }
        let index = m.batches.len() + 1;

        let chosen: Vec<&Sentence> = match selection {
            Some(ids) => select(&remaining, ids)?,
            None => {
                let k = m.batch_size.min(remaining.len());
                let mut rng =
                    ChaCha8Rng::seed_from_u64(m.settings.sampling_seed.wrapping_add(index as u64));
                let mut picked = rand::seq::index::sample(&mut rng, remaining.len(), k).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| remaining[i]).collect()
            }
        };
        let batch = Treebank::new(chosen.into_iter().cloned().collect());
        let model = m.current_model().clone();
        let pseudo = self.predict(&m, &model, &batch)?;

        let dir = batch_dir_name(index);
        let abs = self.dir.join(&dir);
        store::remove_if_exists(&abs).map_err(io_err(&abs))?;
        std::fs::create_dir_all(&abs).map_err(io_err(&abs))?;
        let record = {
            let now = self.now();
            let mut r = BatchRecord {
                index,
                sentence_ids: batch.sentences.iter().map(|s| s.sent_id.clone()).collect(),
                state: BatchState::Sampled,
                history: vec![StateChange {
                    state: BatchState::Sampled,
                    at: now,
                }],
                pseudo_file: format!("{dir}/pseudo.conllu"),
                draft_file: format!("{dir}/draft.conllu"),
                gold_file: format!("{dir}/gold.conllu"),
                audit_file: format!("{dir}/audit.log"),
                report: None,
                model_used: model.id.clone(),
                model_produced: None,
                failure: None,
            };
            r.advance(BatchState::PseudoAnnotated, now);
            r
        };
        self.write_treebank(&record.pseudo_file, &pseudo)?;
        self.write_treebank(&record.draft_file, &pseudo)?;
        let audit = self.dir.join(&record.audit_file);
        write_atomic(&audit, b"").map_err(io_err(&audit))?;
        failpoint("next-batch:before-manifest");
        m.batches.push(record.clone());
        self.write_manifest(&m)?;
        tracing::info!(batch = index, size = record.sentence_ids.len(), model = %model.id, "batch sampled");
        Ok(record)
    }

    /// Applies `edits` to one sentence of the draft and logs them.
    ///
    /// Drafts may be structurally invalid; only finalization insists on
    /// valid trees.
    pub fn submit_correction(
        &self,
        index: usize,
        sent_id: &str,
        edits: &[TokenEdit],
        annotator: &str,
    ) -> Result<Sentence> {
        let _lock = self.lock()?;
        self.recover_locked()?;
        let mut m = self.manifest()?;
        let b = self.batch_record(&m, index)?;
        if !b.state.is_editable() {
            return Err(ProjectError::WrongState {
                batch: index,
                state: b.state,
                op: "edit",
            });
        }
        if !b.sentence_ids.iter().any(|s| s == sent_id) {
            return Err(ProjectError::NoSuchSentence(sent_id.to_string()));
        }
        let log = self.read_audit(&b)?;
        let pseudo = self.read_treebank(&b.pseudo_file)?;
        let mut draft = replay(&pseudo, &log);
        let sentence = draft
            .find_mut(sent_id)
            .ok_or_else(|| ProjectError::NoSuchSentence(sent_id.to_string()))?;

        let now = self.now();
        let mut lines = String::new();
        let mut seq = log.last().map_or(0, |r| r.seq);
        for edit in edits {
            check_edit(sentence, sent_id, edit)?;
            let prior = audit::apply(sentence, edit).expect("token checked");
            seq += 1;
            let record = AuditRecord {
                seq,
                at: now,
                annotator: annotator.to_string(),
                sentence_id: sent_id.to_string(),
                edit: edit.clone(),
                prior,
            };
            lines.push_str(&serde_json::to_string(&record).expect("record serializes"));
            lines.push('\n');
        }
        let updated = sentence.clone();
        if edits.is_empty() {
            return Ok(updated);
        }

        let audit_path = self.dir.join(&b.audit_file);
        store::append_line(&audit_path, lines.trim_end_matches('\n'))
            .map_err(io_err(&audit_path))?;
        self.write_treebank(&b.draft_file, &draft)?;
        if b.state == BatchState::PseudoAnnotated {
            m.batch_mut(index)
                .expect("exists")
                .advance(BatchState::InCorrection, now);
            self.write_manifest(&m)?;
        }
        Ok(updated)
    }

    /// Validates the draft, writes it as gold and scores the
    /// pseudo-annotation against it.
    pub fn finalize_batch(&self, index: usize) -> Result<BatchReport> {
        let _lock = self.lock()?;
        self.recover_locked()?;
        let mut m = self.manifest()?;
        let b = self.batch_record(&m, index)?;
        if !b.state.is_editable() {
            return Err(ProjectError::WrongState {
                batch: index,
                state: b.state,
                op: "finalize",
            });
        }
        let pseudo = self.read_treebank(&b.pseudo_file)?;
        let gold = replay(&pseudo, &self.read_audit(&b)?);
        let violations: Vec<SentenceViolation> = gold
            .sentences
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                validate(s).into_iter().map(move |v| SentenceViolation {
                    sentence: i + 1,
                    sent_id: s.sent_id.clone(),
                    violation: v,
                })
            })
            .collect();
        if !violations.is_empty() {
            return Err(ProjectError::InvalidBatch {
                batch: index,
                violations,
            });
        }

        let report = batch_report(&m, &b, &pseudo, &gold)?;
        failpoint("finalize:before-gold");
        self.write_treebank(&b.gold_file, &gold)?;
        failpoint("finalize:after-gold");
        let dir = self.dir.join(batch_dir_name(index));
        let report_path = dir.join("report.json");
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_atomic(&report_path, json.as_bytes()).map_err(io_err(&report_path))?;
        let csv_path = dir.join("confusion.csv");
        write_atomic(&csv_path, report.confusion.to_csv().as_bytes()).map_err(io_err(&csv_path))?;
        failpoint("finalize:after-report");

        let now = self.now();
        let rec = m.batch_mut(index).expect("exists");
        if rec.state == BatchState::PseudoAnnotated {
            // finalized without edits: pass through correction
            rec.advance(BatchState::InCorrection, now);
        }
        rec.advance(BatchState::GoldFinalized, now);
        rec.report = Some(report.clone());
        self.write_manifest(&m)?;
        failpoint("finalize:after-manifest");
        tracing::info!(
            batch = index,
            uas = report.attachment.uas_f1,
            las = report.attachment.las_f1,
            edits = report.edit_count,
            "batch finalized"
        );
        Ok(report)
    }

    /// Fine-tunes the model that annotated batch `index` on its gold data
    /// and makes the result the current model. On backend failure the batch
    /// becomes FAILED and the current model stays as it was.
    pub fn finetune_step(&self, index: usize) -> Result<ModelRef> {
        let _lock = self.lock()?;
        self.recover_locked()?;
        let mut m = self.manifest()?;
        let b = self.batch_record(&m, index)?;
        if b.state != BatchState::GoldFinalized {
            return Err(ProjectError::WrongState {
                batch: index,
                state: b.state,
                op: "fine-tune",
            });
        }
        let current = m.current_model().clone();
        if b.model_used != current.id {
            return Err(ProjectError::NotLatestModel {
                batch: index,
                model_used: b.model_used,
                current: current.id,
            });
        }
        let gold = self.read_treebank(&b.gold_file)?;
        let id = model_id(m.model_versions.len());
        let staging = self
            .dir
            .join("models")
            .join(format!("{STAGING_PREFIX}{id}"));
        store::remove_if_exists(&staging).map_err(io_err(&staging))?;

        let base_dir = self.dir.join(&current.path);
        let trained: std::result::Result<(), String> = match &m.parser_backend {
            ParserBackend::Builtin => ParserModel::load(&base_dir)
                .and_then(|base| {
                    refparser::train(
                        &gold,
                        m.settings.train_epochs,
                        m.settings.train_seed,
                        Some(&base),
                    )
                })
                .and_then(|model| model.save(&staging))
                .map_err(|e| e.to_string()),
            ParserBackend::External(cfg) => {
                adapter::external_train(&cfg.with_model_dir(&base_dir), &gold, &staging)
                    .map(|_| ())
                    .map_err(|e| e.to_string())
            }
        };
        let now = self.now();
        if let Err(reason) = trained {
            let _ = store::remove_if_exists(&staging);
            let rec = m.batch_mut(index).expect("exists");
            rec.advance(BatchState::Failed, now);
            rec.failure = Some(reason.clone());
            self.write_manifest(&m)?;
            tracing::warn!(batch = index, %reason, "fine-tuning failed");
            return Err(ProjectError::FinetuneFailed {
                batch: index,
                reason,
            });
        }
        failpoint("finetune:after-train");
        let path = format!("models/{id}");
        let target = self.dir.join(&path);
        store::remove_if_exists(&target).map_err(io_err(&target))?;
        store::rename_dir(&staging, &target).map_err(io_err(&target))?;
        failpoint("finetune:after-rename");

        let model = ModelRef {
            id: id.clone(),
            path,
            trained_on: Some(index),
            created: now,
        };
        m.model_versions.push(model.clone());
        let rec = m.batch_mut(index).expect("exists");
        rec.model_produced = Some(id);
        rec.advance(BatchState::Finetuned, now);
        self.write_manifest(&m)?;
        failpoint("finetune:after-manifest");
        tracing::info!(batch = index, model = %model.id, "model fine-tuned");
        Ok(model)
    }

    /// Per-batch scores of every finalized batch, in batch order.
    pub fn trend_report(&self) -> Result<Vec<TrendPoint>> {
        Ok(self
            .manifest()?
            .batches
            .iter()
            .filter_map(|b| {
                b.report.as_ref().map(|r| TrendPoint {
                    batch: b.index,
                    size: r.size,
                    avg_word_count: r.avg_word_count,
                    uas: r.attachment.uas_f1,
                    las: r.attachment.las_f1,
                    edit_count: r.edit_count,
                    model_used: r.model_used.clone(),
                })
            })
            .collect())
    }

    /// Removes debris of interrupted operations; see [`RecoveryReport`].
    /// Mutating operations run this implicitly.
    pub fn recover(&self) -> Result<RecoveryReport> {
        let _lock = self.lock()?;
        self.recover_locked()
    }

    fn recover_locked(&self) -> Result<RecoveryReport> {
        let mut report = RecoveryReport::default();
        let mut m = self.manifest()?;

        let remove = |path: PathBuf, report: &mut RecoveryReport| -> Result<()> {
            if store::remove_if_exists(&path).map_err(io_err(&path))? {
                tracing::info!(path = %path.display(), "recovery removed");
                report.removed.push(path);
            }
            Ok(())
        };

        for dir in [
            self.dir.clone(),
            self.dir.join("models"),
            self.dir.join("batches"),
        ] {
            for entry in read_dir_names(&dir)? {
                if entry.starts_with(TEMP_PREFIX) {
                    remove(dir.join(&entry), &mut report)?;
                }
            }
        }
        let known_batches: HashSet<String> = m
            .batches
            .iter()
            .map(|b| format!("{:03}", b.index))
            .collect();
        let batches_dir = self.dir.join("batches");
        for name in read_dir_names(&batches_dir)? {
            if !name.starts_with(TEMP_PREFIX) && !known_batches.contains(&name) {
                remove(batches_dir.join(name), &mut report)?;
            }
        }
        let known_models: HashSet<&str> =
            m.model_versions.iter().map(|v| v.path.as_str()).collect();
        let models_dir = self.dir.join("models");
        for name in read_dir_names(&models_dir)? {
            if !name.starts_with(TEMP_PREFIX)
                && !known_models.contains(format!("models/{name}").as_str())
            {
                remove(models_dir.join(name), &mut report)?;
            }
        }

        let now = self.now();
        for i in 0..m.batches.len() {
            let b = m.batches[i].clone();
            let dir = self.dir.join(batch_dir_name(b.index));
            for name in read_dir_names(&dir)? {
                if name.starts_with(TEMP_PREFIX) {
                    remove(dir.join(name), &mut report)?;
                }
            }
            if has_gold(&b) {
                continue;
            }
            for f in [
                self.dir.join(&b.gold_file),
                dir.join("report.json"),
                dir.join("confusion.csv"),
            ] {
                remove(f, &mut report)?;
            }
            let audit_path = self.dir.join(&b.audit_file);
            let raw = std::fs::read_to_string(&audit_path).unwrap_or_default();
            let log = read_log(&raw).map_err(|source| ProjectError::Json {
                path: audit_path.clone(),
                source,
            })?;
            let mut clean = String::new();
            for r in &log {
                clean.push_str(&serde_json::to_string(r).expect("record serializes"));
                clean.push('\n');
            }
            if clean != raw {
                write_atomic(&audit_path, clean.as_bytes()).map_err(io_err(&audit_path))?;
                report.rewritten.push(audit_path);
            }
            let draft = replay(&self.read_treebank(&b.pseudo_file)?, &log);
            let draft_text = conllu::serialize(&draft);
            let draft_path = self.dir.join(&b.draft_file);
            if std::fs::read_to_string(&draft_path).ok().as_deref() != Some(draft_text.as_str()) {
                write_atomic(&draft_path, draft_text.as_bytes()).map_err(io_err(&draft_path))?;
                report.rewritten.push(draft_path);
            }
            if !log.is_empty() && b.state == BatchState::PseudoAnnotated {
                m.batches[i].advance(BatchState::InCorrection, now);
                report.manifest_updated = true;
            }
        }
        if report.manifest_updated {
            self.write_manifest(&m)?;
        }
        Ok(report)
    }

    /// Checks every durable invariant of the project and returns the
    /// problems found. A project left by any interrupted operation followed
    /// by [`Project::recover`] has none.
    pub fn check_consistency(&self) -> Result<Vec<String>> {
        let m = self.manifest()?;
        let mut problems = Vec::new();
        let pool = self.pool()?;
        let pool_ids: HashSet<&str> = pool.sentences.iter().map(|s| s.sent_id.as_str()).collect();
        if pool.len() != m.pool_size {
            problems.push(format!(
                "pool has {} sentences, manifest says {}",
                pool.len(),
                m.pool_size
            ));
        }
        let mut seen = HashSet::new();
        for b in &m.batches {
            for id in &b.sentence_ids {
                if !pool_ids.contains(id.as_str()) {
                    problems.push(format!("batch {}: {id} is not in the pool", b.index));
                }
                if !seen.insert(id.clone()) {
                    problems.push(format!(
                        "batch {}: {id} already used by an earlier batch",
                        b.index
                    ));
                }
            }
        }
        let in_progress = m
            .batches
            .iter()
            .filter(|b| b.state.is_in_progress())
            .count();
        if in_progress > 1 {
            problems.push(format!("{in_progress} batches in progress"));
        }
        for (i, b) in m.batches.iter().enumerate() {
            if b.index != i + 1 {
                problems.push(format!("batch at position {} has index {}", i + 1, b.index));
            }
            let walk_ok = b.history.first().map(|h| h.state) == Some(BatchState::Sampled)
                && b.history
                    .windows(2)
                    .all(|w| w[0].state.can_advance_to(w[1].state))
                && b.history.last().map(|h| h.state) == Some(b.state);
            if !walk_ok {
                problems.push(format!(
                    "batch {}: history does not end in {} by legal steps",
                    b.index, b.state
                ));
            }
            match self.read_treebank(&b.pseudo_file) {
                Ok(p) => {
                    let ids: Vec<&str> = p.sentences.iter().map(|s| s.sent_id.as_str()).collect();
                    if ids
                        != b.sentence_ids
                            .iter()
                            .map(String::as_str)
                            .collect::<Vec<_>>()
                    {
                        problems.push(format!(
                            "batch {}: pseudo file sentences differ from record",
                            b.index
                        ));
                    }
                    if p.sentences.iter().any(|s| !validate(s).is_empty()) {
                        problems.push(format!("batch {}: pseudo file has invalid trees", b.index));
                    }
                    if !has_gold(b) {
                        let log = self.read_audit(b)?;
                        let draft = conllu::serialize(&replay(&p, &log));
                        let on_disk = std::fs::read_to_string(self.dir.join(&b.draft_file))
                            .unwrap_or_default();
                        if draft != on_disk {
                            problems.push(format!(
                                "batch {}: draft file differs from audit replay",
                                b.index
                            ));
                        }
                        if !log.is_empty() && b.state == BatchState::PseudoAnnotated {
                            problems.push(format!(
                                "batch {}: edits logged but state {}",
                                b.index, b.state
                            ));
                        }
                    }
                }
                Err(e) => problems.push(format!("batch {}: pseudo file: {e}", b.index)),
            }
            let gold_path = self.dir.join(&b.gold_file);
            let report_path = self.dir.join(batch_dir_name(b.index)).join("report.json");
            if has_gold(b) {
                match conllu::read_file(&gold_path) {
                    Ok(g) if g.sentences.iter().all(|s| validate(s).is_empty()) => {}
                    Ok(_) => {
                        problems.push(format!("batch {}: gold file has invalid trees", b.index))
                    }
                    Err(e) => problems.push(format!("batch {}: gold file: {e}", b.index)),
                }
                if !report_path.exists() || b.report.is_none() {
                    problems.push(format!("batch {}: report missing", b.index));
                }
            } else {
                if gold_path.exists() {
                    problems.push(format!(
                        "batch {}: gold file exists in state {}",
                        b.index, b.state
                    ));
                }
                if report_path.exists() || b.report.is_some() {
                    problems.push(format!(
                        "batch {}: report exists in state {}",
                        b.index, b.state
                    ));
                }
            }
            if b.state == BatchState::Finetuned {
                match &b.model_produced {
                    Some(id) if m.model(id).is_some() => {}
                    _ => problems.push(format!("batch {}: produced model not registered", b.index)),
                }
            }
            if m.model(&b.model_used).is_none() {
                problems.push(format!(
                    "batch {}: model {} not registered",
                    b.index, b.model_used
                ));
            }
        }
        for (i, v) in m.model_versions.iter().enumerate() {
            if v.id != model_id(i) {
                problems.push(format!("model {} at position {i}", v.id));
            }
            let dir = self.dir.join(&v.path);
            let empty = std::fs::read_dir(&dir)
                .map(|mut d| d.next().is_none())
                .unwrap_or(true);
            if empty {
                problems.push(format!("model {} has no files", v.id));
            }
        }
        let known: HashSet<String> = m.model_versions.iter().map(|v| v.path.clone()).collect();
        for name in read_dir_names(&self.dir.join("models"))? {
            if !known.contains(&format!("models/{name}")) {
                problems.push(format!("unregistered model directory {name}"));
            }
        }
        for dir in [
            self.dir.clone(),
            self.dir.join("models"),
            self.dir.join("batches"),
        ] {
            for name in read_dir_names(&dir)? {
                if name.starts_with(TEMP_PREFIX) {
                    problems.push(format!(
                        "leftover temporary file {}",
                        dir.join(name).display()
                    ));
                }
            }
        }
        Ok(problems)
    }
}

fn has_gold(b: &BatchRecord) -> bool {
    b.history
        .iter()
        .any(|h| h.state == BatchState::GoldFinalized)
}

fn read_dir_names(dir: &Path) -> Result<Vec<String>> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(dir)(e)),
    };
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        names.push(entry.file_name().to_string_lossy().into_owned());
    }
    names.sort();
    Ok(names)
}

fn check_pool(pool: &Treebank) -> Result<()> {
    let mut problems = Vec::new();
    if pool.is_empty() {
        problems.push("pool is empty".to_string());
    }
    for (i, s) in pool.sentences.iter().enumerate() {
        if s.sent_id.is_empty() {
            problems.push(format!("sentence {} has no sent_id", i + 1));
        }
        if s.is_empty() {
            problems.push(format!("sentence {} has no words", i + 1));
        }
        for v in validate_unannotated(s) {
            problems.push(format!("{}: {v}", s.sent_id));
        }
    }
    for id in pool.duplicate_ids() {
        problems.push(format!("duplicate sent_id {id}"));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(ProjectError::InvalidPool(problems))
    }
}

fn select<'a>(remaining: &[&'a Sentence], ids: &[String]) -> Result<Vec<&'a Sentence>> {
    if ids.is_empty() {
        return Err(ProjectError::Selection("no sentence ids given".into()));
    }
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    if wanted.len() != ids.len() {
        return Err(ProjectError::Selection("duplicate sentence ids".into()));
    }
    let chosen: Vec<&Sentence> = remaining
        .iter()
        .copied()
        .filter(|s| wanted.contains(s.sent_id.as_str()))
        .collect();
    if chosen.len() != ids.len() {
        let have: HashSet<&str> = chosen.iter().map(|s| s.sent_id.as_str()).collect();
        let missing: Vec<&str> = ids
            .iter()
            .map(String::as_str)
            .filter(|i| !have.contains(i))
            .collect();
        return Err(ProjectError::Selection(format!(
            "not among the remaining pool sentences: {}",
            missing.join(", ")
        )));
    }
    Ok(chosen)
}

fn check_edit(s: &Sentence, sent_id: &str, edit: &TokenEdit) -> Result<()> {
    if s.token(edit.token_id).is_none() {
        return Err(ProjectError::NoSuchToken {
            sent_id: sent_id.to_string(),
            token: edit.token_id,
        });
    }
    if edit.is_empty() {
        return Err(ProjectError::InvalidEdit(format!(
            "edit of token {} changes nothing",
            edit.token_id
        )));
    }
    if let Some(h) = edit.head {
        if h > s.len() {
            return Err(ProjectError::InvalidEdit(format!(
                "head {h} does not exist"
            )));
        }
    }
    for (what, value) in [("deprel", &edit.deprel), ("upos", &edit.upos)] {
        if let Some(v) = value {
            if v.is_empty() || v == "_" || v.chars().any(char::is_whitespace) {
                return Err(ProjectError::InvalidEdit(format!("bad {what} {v:?}")));
            }
        }
    }
    Ok(())
}

fn batch_report(
    m: &ProjectManifest,
    b: &BatchRecord,
    pseudo: &Treebank,
    gold: &Treebank,
) -> Result<BatchReport> {
    let opts = m.eval_options();
    let attachment = metrics::attachment_scores(pseudo, gold, &opts)?;
    let confusion = metrics::confusion_matrix(pseudo, gold, &opts, None)?;
    let mut edit_count = 0;
    let mut upos_edit_count = 0;
    for (ps, gs) in pseudo.sentences.iter().zip(&gold.sentences) {
        for (pt, gt) in ps.tokens.iter().zip(&gs.tokens) {
            if pt.head != gt.head || pt.deprel != gt.deprel {
                edit_count += 1;
            }
            if pt.upos != gt.upos {
                upos_edit_count += 1;
            }
        }
    }
    Ok(BatchReport {
        batch: b.index,
        size: gold.len(),
        avg_word_count: gold.word_count() as f64 / gold.len() as f64,
        attachment,
        confusion,
        edit_count,
        upos_edit_count,
        model_used: b.model_used.clone(),
    })
}
