use std::error::Error;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use iterbank::adapter::ExternalParserConfig;
use iterbank::agreement::{self, AgreementStudy};
use iterbank::conllu::{self, Treebank};
use iterbank::metrics::{self, EvalOptions};
use iterbank::project::{
    edits_towards, BaseModel, BatchState, InitOptions, ParserBackend, Project, TokenEdit,
};
use iterbank::refparser::{self, ParserModel};
use serde::Deserialize;

use crate::{AdapterAction, Cli, Command, EditArgs, InitArgs, PairArgs};

type Result<T> = std::result::Result<T, Box<dyn Error + Send + Sync>>;

pub fn run(cli: Cli) -> Result<ExitCode> {
    let flags = EvalOptions {
        ignore_punct: cli.ignore_punct,
        strip_subtypes: cli.strip_subtypes,
    };
    let seed = cli.seed;
    match cli.command {
        Command::Init(args) => init(args, seed, flags),
        Command::NextBatch { project, from_file } => {
            let p = Project::open(&project.project)?;
            let selection = match from_file {
                Some(path) => Some(read_ids(&path)?),
                None => None,
            };
            let b = p.next_batch(selection.as_deref())?;
            println!(
                "batch {} {} ({} sentences, model {})",
                b.index,
                b.state,
                b.sentence_ids.len(),
                b.model_used
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Edit(args) => edit(args),
        Command::Finalize { project, batch } => {
            let p = Project::open(&project.project)?;
            let index = match batch {
                Some(i) => i,
                None => p
                    .manifest()?
                    .in_progress()
                    .map(|b| b.index)
                    .ok_or("no batch in progress")?,
            };
            let r = p.finalize_batch(index)?;
            println!(
                "batch {index} finalized: {} sentences, {} edits",
                r.size, r.edit_count
            );
            println!("{}", r.attachment);
            Ok(ExitCode::SUCCESS)
        }
        Command::Finetune { project, batch } => {
            let p = Project::open(&project.project)?;
            let index = match batch {
                Some(i) => i,
                None => p
                    .manifest()?
                    .batches
                    .iter()
                    .rev()
                    .find(|b| b.state == BatchState::GoldFinalized)
                    .map(|b| b.index)
                    .ok_or("no finalized batch waiting for fine-tuning")?,
            };
            let m = p.finetune_step(index)?;
            println!("batch {index} fine-tuned: model {} at {}", m.id, m.path);
            Ok(ExitCode::SUCCESS)
        }
        Command::Report {
            project,
            batch,
            json,
            csv,
        } => report(&project.project, batch, json, csv),
        Command::Serve { project, bind, ui } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(iterbank_service::serve(project.project, bind, ui))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval(pair) => {
            let (system, gold, opts) = load_pair(&pair, flags)?;
            let score = metrics::attachment_scores(&system, &gold, &opts)?;
            if pair.json {
                println!("{}", serde_json::to_string_pretty(&score)?);
            } else {
                println!("{score}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Kappa(pair) => {
            let (a, b, opts) = load_pair(&pair, flags)?;
            let k = metrics::cohen_kappa(&a, &b, &opts)?;
            if pair.json {
                println!("{}", serde_json::to_string_pretty(&k)?);
            } else {
                println!("{k}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Confusion { pair, top_k } => {
            let (system, gold, opts) = load_pair(&pair, flags)?;
            let cm = metrics::confusion_matrix(&system, &gold, &opts, top_k)?;
            if pair.json {
                println!("{}", serde_json::to_string_pretty(&cm)?);
            } else {
                print!("{}", cm.to_csv());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { project, files } => validate(project.as_deref(), &files),
        Command::Agreement {
            project,
            study,
            a,
            b,
            disagreements,
            json,
        } => agreement(project, study, a, b, disagreements, json, flags),
        Command::Train {
            corpus,
            out,
            epochs,
            base,
        } => {
            let corpus = conllu::read_file(&corpus)?;
            let base = base.map(|d| ParserModel::load(&d)).transpose()?;
            let model = refparser::train(&corpus, epochs, seed.unwrap_or(0), base.as_ref())?;
            model.save(&out)?;
            println!(
                "trained on {} sentences, {} labels, saved to {}",
                corpus.len(),
                model.label_set.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Predict {
            model,
            input,
            output,
        } => {
            let model = ParserModel::load(&model)?;
            let tb = conllu::read_file(&input)?;
            let parsed = refparser::predict(&model, &tb)?;
            match output {
                Some(path) => conllu::write_file(path, &parsed)?,
                None => std::io::stdout().write_all(conllu::serialize(&parsed).as_bytes())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::AdapterBuiltin { epochs, action } => {
            adapter_builtin(epochs, seed.unwrap_or(0), action)
        }
    }
}

fn init(args: InitArgs, seed: Option<u64>, flags: EvalOptions) -> Result<ExitCode> {
    let pool = conllu::read_file(&args.pool)?;
    let base = match (&args.base_train, &args.base_model) {
        (Some(path), _) => BaseModel::Train(conllu::read_file(path)?),
        (None, Some(dir)) => BaseModel::Directory(dir.clone()),
        (None, None) => return Err("either --base-train or --base-model is required".into()),
    };
    let name = args.name.clone().unwrap_or_else(|| {
        args.project
            .project
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "project".into())
    });
    let mut opts = InitOptions::builtin(name, base);
    opts.batch_size = args.batch_size;
    opts.settings.ignore_punct = flags.ignore_punct;
    opts.settings.strip_subtypes = flags.strip_subtypes;
    opts.settings.misc_orig_key = args.orig_key.clone();
    opts.settings.train_epochs = args.epochs;
    if let Some(s) = seed {
        opts.settings.sampling_seed = s;
        opts.settings.train_seed = s;
    }
    if let Some(exe) = &args.external {
        let mut cfg = ExternalParserConfig::new(exe, "");
        cfg.base_args = args.external_args.clone();
        cfg.timeout = args.timeout;
        for kv in &args.env {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("--env expects KEY=VALUE, got {kv}"))?;
            cfg.env.push((k.to_string(), v.to_string()));
        }
        cfg.validate()?;
        opts.backend = ParserBackend::External(cfg);
    }
    let p = Project::init(&args.project.project, &pool, opts)?;
    let m = p.manifest()?;
    println!(
        "created project {} at {} with {} pool sentences, base model {}",
        m.name,
        p.dir().display(),
        m.pool_size,
        m.current_model().id
    );
    Ok(ExitCode::SUCCESS)
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

#[derive(Deserialize)]
struct ScriptLine {
    sentence_id: String,
    #[serde(flatten)]
    edit: TokenEdit,
}

fn edit(args: EditArgs) -> Result<ExitCode> {
    let p = Project::open(&args.project.project)?;
    let index = match args.batch {
        Some(i) => i,
        None => p
            .manifest()?
            .in_progress()
            .map(|b| b.index)
            .ok_or("no batch in progress")?,
    };
    // grouped per sentence, in input order
    let mut groups: Vec<(String, Vec<TokenEdit>)> = Vec::new();
    let mut push = |sid: String, e: TokenEdit| match groups.last_mut() {
        Some((last, edits)) if *last == sid => edits.push(e),
        _ => groups.push((sid, vec![e])),
    };
    if let Some(script) = &args.script {
        let text = std::fs::read_to_string(script)?;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: ScriptLine = serde_json::from_str(line)
                .map_err(|e| format!("{}:{}: {e}", script.display(), n + 1))?;
            push(l.sentence_id, l.edit);
        }
    } else if let Some(path) = &args.from_gold {
        let gold = conllu::read_file(path)?;
        let draft = p.draft(index)?;
        for s in &draft.sentences {
            let g = gold
                .find(&s.sent_id)
                .ok_or_else(|| format!("{} has no sentence {}", path.display(), s.sent_id))?;
            if !s.forms().eq(g.forms()) {
                return Err(format!(
                    "sentence {} has different words in {}",
                    s.sent_id,
                    path.display()
                )
                .into());
            }
            for e in edits_towards(s, g) {
                push(s.sent_id.clone(), e);
            }
        }
    } else {
        let sid = args.sentence.clone().ok_or("--sentence is required")?;
        let e = TokenEdit {
            token_id: args.token.ok_or("--token is required")?,
            head: args.head,
            deprel: args.deprel.clone(),
            upos: args.upos.clone(),
        };
        if e.is_empty() {
            return Err("nothing to change: give --head, --deprel or --upos".into());
        }
        push(sid, e);
    }
    let mut count = 0;
    let mut invalid = 0;
    for (sid, edits) in &groups {
        let s = p.submit_correction(index, sid, edits, &args.annotator)?;
        count += edits.len();
        let v = conllu::validate(&s);
        if !v.is_empty() {
            invalid += 1;
            for x in v {
                eprintln!("warning: {sid}: {x}");
            }
        }
    }
    println!(
        "applied {count} edits to {} sentences of batch {index}",
        groups.len()
    );
    if invalid > 0 {
        println!("{invalid} sentences are not valid trees yet");
    }
    Ok(ExitCode::SUCCESS)
}

fn report(dir: &Path, batch: Option<usize>, json: bool, csv: bool) -> Result<ExitCode> {
    let p = Project::open(dir)?;
    let m = p.manifest()?;
    match batch {
        Some(i) => {
            let b = m.batch(i).ok_or_else(|| format!("no batch {i}"))?;
            let r = b
                .report
                .as_ref()
                .ok_or_else(|| format!("batch {i} is {} and has no report yet", b.state))?;
            if csv {
                print!("{}", r.confusion.to_csv());
            } else if json {
                println!("{}", serde_json::to_string_pretty(r)?);
            } else {
                println!("batch {i} ({}), model {}", b.state, r.model_used);
                println!("sentences {}, mean length {:.2}", r.size, r.avg_word_count);
                println!("edits {} (upos {})", r.edit_count, r.upos_edit_count);
                println!("{}", r.attachment);
            }
        }
        None => {
            let trend = p.trend_report()?;
            if json {
                println!("{}", serde_json::to_string_pretty(&trend)?);
            } else {
                println!(
                    "{} ({} of {} pool sentences annotated)",
                    m.name,
                    m.batches
                        .iter()
                        .map(|b| b.sentence_ids.len())
                        .sum::<usize>(),
                    m.pool_size
                );
                println!("batch\tsize\tmean_len\tUAS\tLAS\tedits\tmodel");
                for t in trend {
                    println!(
                        "{}\t{}\t{:.2}\t{:.4}\t{:.4}\t{}\t{}",
                        t.batch, t.size, t.avg_word_count, t.uas, t.las, t.edit_count, t.model_used
                    );
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// The two treebanks to compare and the options to compare them with. For a
/// project batch these are its pseudo-annotation and its gold.
fn load_pair(pair: &PairArgs, flags: EvalOptions) -> Result<(Treebank, Treebank, EvalOptions)> {
    match (&pair.project, pair.batch) {
        (Some(dir), Some(i)) => {
            let p = Project::open(dir)?;
            let base = p.manifest()?.eval_options();
            let opts = EvalOptions {
                ignore_punct: base.ignore_punct || flags.ignore_punct,
                strip_subtypes: base.strip_subtypes || flags.strip_subtypes,
            };
            Ok((p.pseudo(i)?, p.gold(i)?, opts))
        }
        _ => {
            let system = pair.system.as_ref().ok_or("--system is required")?;
            let gold = pair.gold.as_ref().ok_or("--gold is required")?;
            Ok((conllu::read_file(system)?, conllu::read_file(gold)?, flags))
        }
    }
}

fn validate(project: Option<&Path>, files: &[PathBuf]) -> Result<ExitCode> {
    let mut problems = 0usize;
    let mut report = |name: &str, tb: &Treebank, allow_unannotated: bool| {
        for s in &tb.sentences {
            let v = if allow_unannotated {
                conllu::validate_unannotated(s)
            } else {
                conllu::validate(s)
            };
            for x in v {
                println!("{name}: {}: {x}", s.sent_id);
                problems += 1;
            }
        }
        for id in tb.duplicate_ids() {
            println!("{name}: duplicate sent_id {id}");
            problems += 1;
        }
    };
    if let Some(dir) = project {
        let p = Project::open(dir)?;
        let m = p.manifest()?;
        report("pool", &p.pool()?, true);
        for b in &m.batches {
            report(
                &format!("batch {}", b.index),
                &p.working_copy(b.index)?,
                false,
            );
        }
        for issue in p.check_consistency()? {
            println!("project: {issue}");
            problems += 1;
        }
    }
    for f in files {
        let name = f.display().to_string();
        let lenient = conllu::read_file_lenient(f)?;
        for v in &lenient.violations {
            println!("{name}: {v}");
            problems += 1;
        }
        for id in lenient.treebank.duplicate_ids() {
            println!("{name}: duplicate sent_id {id}");
            problems += 1;
        }
    }
    if problems == 0 {
        println!("ok");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{problems} problems");
        Ok(ExitCode::FAILURE)
    }
}

fn agreement(
    project: Option<PathBuf>,
    study: Option<String>,
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    disagreements: Option<PathBuf>,
    json: bool,
    flags: EvalOptions,
) -> Result<ExitCode> {
    let mut opts = flags;
    let loaded = match (a, b, study) {
        (Some(a), Some(b), _) => {
            let name = |p: &Path| {
                p.file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned()
            };
            let (na, nb) = (name(&a), name(&b));
            if na == nb {
                return Err("the two annotation files need different names".into());
            }
            AgreementStudy::new((&na, conllu::read_file(&a)?), (&nb, conllu::read_file(&b)?))
        }
        (_, _, Some(study)) => {
            let dir = match &project {
                Some(p) => {
                    let base = Project::open(p)?.manifest()?.eval_options();
                    opts.ignore_punct |= base.ignore_punct;
                    opts.strip_subtypes |= base.strip_subtypes;
                    p.join("agreement").join(&study)
                }
                None => PathBuf::from(&study),
            };
            AgreementStudy::load(&dir)?
        }
        _ => return Err("give --a and --b, or --study".into()),
    };
    let report = agreement::agreement_report(&loaded, &opts)?;
    let rows = agreement::list_disagreements(&loaded, &opts)?;
    if let Some(path) = disagreements {
        std::fs::write(&path, agreement::disagreements_csv(&rows))?;
    }
    if json {
        let out = serde_json::json!({ "report": report, "disagreements": rows });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!(
            "{} vs {} over {} sentences",
            report.annotator_a, report.annotator_b, report.sentences
        );
        println!("{}", report.kappa);
        println!("{}", report.attachment);
        println!("{} disagreements", rows.len());
    }
    Ok(ExitCode::SUCCESS)
}

/// Runs the builtin parser through the external parser protocol. Output
/// matches what a builtin-backed project produces with the same epochs and
/// seed.
fn adapter_builtin(epochs: usize, seed: u64, action: AdapterAction) -> Result<ExitCode> {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input)?;
    let tb = conllu::parse(&input)?;
    match action {
        AdapterAction::Predict { model } => {
            let model = ParserModel::load(&model)?;
            let parsed = refparser::predict(&model, &tb)?;
            let mut out = std::io::stdout().lock();
            out.write_all(conllu::serialize(&parsed).as_bytes())?;
            out.flush()?;
        }
        AdapterAction::Train { model, out } => {
            let base = ParserModel::load(&model)?;
            let trained = refparser::train(&tb, epochs, seed, Some(&base))?;
            trained.save(&out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
