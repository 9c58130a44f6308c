//! One PASS/FAIL line per primary acceptance criterion, written straight to
//! stderr so it shows up without `--nocapture`.

mod common;
#[path = "../../core/tests/common/mod.rs"]
mod oracle;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use common::*;
use iterbank::adapter::ExternalParserConfig;
use iterbank::conllu::{self, Treebank};
use iterbank::metrics::{attachment_scores, cohen_kappa, confusion_matrix, EvalOptions};
use iterbank::project::{
    edits_towards, BaseModel, BatchState, InitOptions, ParserBackend, Project, FAILPOINT_ENV,
};
use iterbank::refparser::{self, decode_with};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn metrics_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    for i in 0..200 {
        let gold = oracle::random_treebank(&mut rng, 10, 8);
        let system = oracle::perturb(&mut rng, &gold, i % 2 == 1);
        let opts = EvalOptions {
            ignore_punct: rng.random_bool(0.5),
            strip_subtypes: rng.random_bool(0.5),
        };
        let top_k = rng.random_bool(0.3).then(|| rng.random_range(1..=5));
        let c = oracle::naive_counts(&system, &gold, &opts);
        let s = attachment_scores(&system, &gold, &opts).map_err(|e| e.to_string())?;
        let counts_ok = (
            s.matched,
            s.head_correct,
            s.head_and_label_correct,
            s.system_total,
            s.gold_total,
        ) == (
            c.matched,
            c.head_correct,
            c.both_correct,
            c.system_total,
            c.gold_total,
        );
        check(counts_ok, format!("pair {i}: attachment counts differ"))?;
        let ratios_ok = close(s.uas_p, ratio(c.head_correct, c.system_total))
            && close(s.uas_r, ratio(c.head_correct, c.gold_total))
            && close(
                s.uas_f1,
                ratio(2 * c.head_correct, c.system_total + c.gold_total),
            )
            && close(s.las_p, ratio(c.both_correct, c.system_total))
            && close(s.las_r, ratio(c.both_correct, c.gold_total))
            && close(
                s.las_f1,
                ratio(2 * c.both_correct, c.system_total + c.gold_total),
            );
        check(ratios_ok, format!("pair {i}: attachment ratios differ"))?;
        if c.matched > 0 {
            let (po, pe, kappa, items) = oracle::naive_kappa(&system, &gold, &opts);
            let k = cohen_kappa(&system, &gold, &opts).map_err(|e| e.to_string())?;
            let kappa_ok = match (k.kappa, kappa) {
                (Some(a), Some(b)) => close(a, b),
                (a, b) => a == b,
            };
            check(
                k.item_count == items
                    && close(k.observed_agreement, po)
                    && close(k.expected_agreement, pe)
                    && kappa_ok,
                format!("pair {i}: kappa differs"),
            )?;
        }
        let (labels, cells) = oracle::naive_confusion(&system, &gold, &opts, top_k);
        let cm = confusion_matrix(&system, &gold, &opts, top_k).map_err(|e| e.to_string())?;
        let mut got = BTreeMap::new();
        for (gi, g) in cm.labels.iter().enumerate() {
            for (si, sl) in cm.labels.iter().enumerate() {
                if cm.counts[gi][si] > 0 {
                    got.insert((g.clone(), sl.clone()), cm.counts[gi][si]);
                }
            }
        }
        check(
            cm.labels == labels && got == cells,
            format!("pair {i}: confusion matrix differs"),
        )?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 5.0, format!("took {secs:.2} s"))?;
    Ok(format!(
        "200 random pairs match the naive counter in {secs:.2} s (limit 5 s)"
    ))
}

fn kappa_hand_case() -> Outcome {
    let build = |labels: [&str; 5]| {
        let heads = [4, 4, 4, 0, 4];
        let mut text = String::from("# sent_id = k\n");
        for i in 0..5 {
            text.push_str(&format!(
                "{}\tw{i}\t_\tX\t_\t_\t{}\t{}\t_\t_\n",
                i + 1,
                heads[i],
                labels[i]
            ));
        }
        text.push('\n');
        conllu::parse(&text).unwrap()
    };
    let a = build(["nsubj", "obj", "obj", "root", "punct"]);
    let b = build(["nsubj", "obl", "obj", "root", "punct"]);
    let k = cohen_kappa(&a, &b, &EvalOptions::default()).map_err(|e| e.to_string())?;
    check(
        k.observed_agreement == 0.8 && k.expected_agreement == 0.2 && k.kappa == Some(0.75),
        format!("got {k}"),
    )?;
    Ok(format!(
        "p_o = {}, p_e = {}, kappa = {}",
        k.observed_agreement,
        k.expected_agreement,
        k.kappa.unwrap()
    ))
}

fn decoder_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let n = rng.random_range(1..=6);
        let labels = rng.random_range(1..=3);
        let table = oracle::random_table(&mut rng, n, labels);
        let t = decode_with(&table, true);
        check(
            oracle::is_tree(&t.heads, true),
            format!("table {i}: not a single-root tree"),
        )?;
        let diff =
            (table.tree_score(&t.heads, &t.labels) - oracle::exhaustive_best(&table, true)).abs();
        worst = worst.max(diff);
        check(diff <= 1e-9, format!("table {i}: off by {diff}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, format!("took {secs:.2} s"))?;
    Ok(format!("500 tables (n <= 6) equal exhaustive search, max diff {worst:.1e}, {secs:.2} s (limit 30 s)"))
}

fn round_trip() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/testdata");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "conllu"))
        .collect();
    files.sort();
    check(
        files.iter().any(|f| f.ends_with("ota_dual_script.conllu")),
        "dual-script sample missing",
    )?;
    let mut sentences = 0;
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| e.to_string())?;
        let tb = conllu::parse(&text).map_err(|e| format!("{}: {e}", f.display()))?;
        check(
            conllu::serialize(&tb) == text,
            format!("{} is not byte-identical", f.display()),
        )?;
        for s in &tb.sentences {
            let v = conllu::validate(s);
            check(
                v.is_empty(),
                format!("{} {}: {v:?}", f.display(), s.sent_id),
            )?;
        }
        sentences += tb.len();
    }
    Ok(format!(
        "{} files, {sentences} sentences, byte-identical and zero violations",
        files.len()
    ))
}

fn scripted_annotation(p: &Project, index: usize, gold: &Treebank) {
    for s in &p.draft(index).unwrap().sentences {
        let edits = edits_towards(s, gold.find(&s.sent_id).unwrap());
        if !edits.is_empty() {
            p.submit_correction(index, &s.sent_id, &edits, "script")
                .unwrap();
        }
    }
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let tb = corpus();
    let (base, pool) = (slice(&tb, 0, 200), slice(&tb, 200, 300));
    let mut improved = 0;
    let mut rows = Vec::new();
    for seed in 0..10u64 {
        let dir = tempfile::tempdir().unwrap();
        let mut opts = InitOptions::builtin(format!("seed{seed}"), BaseModel::Train(base.clone()));
        opts.settings.sampling_seed = seed;
        opts.settings.train_seed = seed;
        let p = Project::init(dir.path().join("p"), &pool, opts).map_err(|e| e.to_string())?;
        let mut uas = Vec::new();
        for i in 1..=2 {
            p.next_batch(None).map_err(|e| e.to_string())?;
            scripted_annotation(&p, i, &pool);
            let r = p.finalize_batch(i).map_err(|e| e.to_string())?;
            check(
                r.size == 50
                    && r.avg_word_count > 0.0
                    && (0.0..=1.0).contains(&r.attachment.las_f1),
                format!("seed {seed} batch {i}: incomplete report"),
            )?;
            p.finetune_step(i).map_err(|e| e.to_string())?;
            uas.push(r.attachment.uas_f1);
        }
        let m = p.manifest().map_err(|e| e.to_string())?;
        let finetuned = m
            .batches
            .iter()
            .filter(|b| b.state == BatchState::Finetuned)
            .count();
        check(
            finetuned == 2,
            format!("seed {seed}: {finetuned} batches FINETUNED"),
        )?;
        if uas[1] >= uas[0] {
            improved += 1;
        }
        rows.push(format!("{:.3}->{:.3}", uas[0], uas[1]));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        improved >= 7,
        format!(
            "batch-2 UAS >= batch-1 UAS in only {improved}/10 seeds: {}",
            rows.join(" ")
        ),
    )?;
    check(secs < 180.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "batch-2 UAS >= batch-1 UAS in {improved}/10 seeds (need 7), {secs:.1} s (limit 180 s); {}",
        rows.join(" ")
    ))
}

fn fixed_clock() -> impl Fn() -> DateTime<Utc> + Send + Sync + Clone + 'static {
    || DateTime::from_timestamp(1_700_000_000, 0).unwrap()
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn run_two_iterations(p: &Project, gold: &Treebank) -> Result<(), String> {
    for i in 1..=2 {
        p.next_batch(None).map_err(|e| e.to_string())?;
        scripted_annotation(p, i, gold);
        p.finalize_batch(i).map_err(|e| e.to_string())?;
        p.finetune_step(i).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn adapter_protocol() -> Outcome {
    let tb = corpus();
    let (base, pool) = (slice(&tb, 0, 60), slice(&tb, 200, 240));
    let (epochs, seed) = (2usize, 11u64);
    let dir = tempfile::tempdir().unwrap();
    let settings = |o: &mut InitOptions| {
        o.batch_size = 20;
        o.settings.train_epochs = epochs;
        o.settings.train_seed = seed;
        o.settings.sampling_seed = seed;
    };

    let mut builtin = InitOptions::builtin("same", BaseModel::Train(base.clone()));
    settings(&mut builtin);
    let a = Project::init_with_clock(dir.path().join("builtin"), &pool, builtin, fixed_clock())
        .map_err(|e| e.to_string())?
        .with_clock(fixed_clock());
    run_two_iterations(&a, &pool)?;

    let base_model = dir.path().join("base-model");
    refparser::train(&base, epochs, seed, None)
        .and_then(|m| m.save(&base_model))
        .map_err(|e| e.to_string())?;
    let mut cfg = ExternalParserConfig::new(env!("CARGO_BIN_EXE_iterbank"), "");
    cfg.base_args = vec![
        "--seed".into(),
        seed.to_string(),
        "adapter-builtin".into(),
        "--epochs".into(),
        epochs.to_string(),
    ];
    cfg.timeout = 120;
    let mut external = InitOptions::builtin("same", BaseModel::Directory(base_model.clone()));
    external.backend = ParserBackend::External(cfg.clone());
    settings(&mut external);
    let b = Project::init_with_clock(dir.path().join("external"), &pool, external, fixed_clock())
        .map_err(|e| e.to_string())?
        .with_clock(fixed_clock());
    run_two_iterations(&b, &pool)?;

    let fa = files_under(a.dir());
    let fb = files_under(b.dir());
    check(
        fa.keys().eq(fb.keys()),
        format!("file sets differ: {:?} vs {:?}", fa.keys(), fb.keys()),
    )?;
    let mut compared = 0;
    for (name, bytes) in &fa {
        if name == "project.json" {
            let strip = |raw: &[u8]| {
                let mut v: serde_json::Value = serde_json::from_slice(raw).unwrap();
                v.as_object_mut().unwrap().remove("parser_backend");
                v
            };
            check(
                strip(bytes) == strip(&fb[name]),
                "manifests differ beyond the backend",
            )?;
        } else {
            check(*bytes == fb[name], format!("{name} differs"))?;
        }
        compared += 1;
    }

    // a trainer that fails (zero epochs) and a predictor that exits non-zero
    let mut failing = cfg.clone();
    failing.base_args = vec!["adapter-builtin".into(), "--epochs".into(), "0".into()];
    let mut o = InitOptions::builtin("fail", BaseModel::Directory(base_model.clone()));
    o.backend = ParserBackend::External(failing);
    settings(&mut o);
    let c = Project::init(dir.path().join("failing"), &pool, o).map_err(|e| e.to_string())?;
    c.next_batch(None).map_err(|e| e.to_string())?;
    scripted_annotation(&c, 1, &pool);
    c.finalize_batch(1).map_err(|e| e.to_string())?;
    check(c.finetune_step(1).is_err(), "zero-epoch training succeeded")?;
    let m = c.manifest().map_err(|e| e.to_string())?;
    check(
        m.current_model().id == "iter000"
            && m.model_versions.len() == 1
            && m.batch(1).unwrap().state == BatchState::Failed,
        "failed training moved the model lineage",
    )?;

    let mut broken = cfg.clone();
    broken.executable = "sh".into();
    broken.base_args = vec!["-c".into(), "echo boom >&2; exit 3".into(), "stub".into()];
    let mut o = InitOptions::builtin("broken", BaseModel::Directory(base_model));
    o.backend = ParserBackend::External(broken);
    settings(&mut o);
    let d = Project::init(dir.path().join("broken"), &pool, o).map_err(|e| e.to_string())?;
    let before = d.manifest().map_err(|e| e.to_string())?;
    let err = d
        .next_batch(None)
        .err()
        .ok_or("failing predictor succeeded")?;
    check(
        d.manifest().map_err(|e| e.to_string())? == before,
        "failed prediction changed the manifest",
    )?;
    check(
        d.check_consistency().unwrap().is_empty(),
        "inconsistent after failed prediction",
    )?;
    Ok(format!(
        "{compared} files bit-identical to the builtin path; failing trainer leaves iter000 current; failing predictor ({err}) leaves the manifest unchanged"
    ))
}

fn crash_safety() -> Outcome {
    let tb = corpus();
    let dir = tempfile::tempdir().unwrap();
    let base_file = write(dir.path(), "base.conllu", &slice(&tb, 0, 40));
    let pool_file = write(dir.path(), "pool.conllu", &slice(&tb, 200, 210));
    let make = |name: &str| {
        let p = dir.path().join(name);
        ok(&[
            "init",
            "-p",
            s(&p),
            "--pool",
            s(&pool_file),
            "--base-train",
            s(&base_file),
            "--batch-size",
            "5",
            "--epochs",
            "2",
        ]);
        p
    };
    // stage 0: fresh, 1: sampled and corrected, 2: finalized
    let prepare = |p: &Path, stage: usize| {
        if stage >= 1 {
            ok(&["next-batch", "-p", s(p)]);
            ok(&["edit", "-p", s(p), "--from-gold", s(&pool_file)]);
        }
        if stage >= 2 {
            ok(&["finalize", "-p", s(p)]);
        }
    };
    let clean = make("clean");
    prepare(&clean, 2);
    ok(&["finetune", "-p", s(&clean)]);

    let points = [
        ("next-batch", "next-batch:before-manifest", 0, false),
        ("finalize", "finalize:before-gold", 1, false),
        ("finalize", "finalize:after-gold", 1, false),
        ("finalize", "finalize:after-report", 1, false),
        ("finalize", "finalize:after-manifest", 1, true),
        ("finetune", "finetune:after-train", 2, false),
        ("finetune", "finetune:after-rename", 2, false),
        ("finetune", "finetune:after-manifest", 2, true),
    ];
    for (i, (verb, point, stage, committed)) in points.iter().enumerate() {
        let p = make(&format!("p{i}"));
        prepare(&p, *stage);
        let project = Project::open(&p).map_err(|e| e.to_string())?;
        let before = project.manifest().map_err(|e| e.to_string())?;
        let out = iterbank()
            .args([verb, "-p", s(&p)])
            .env(FAILPOINT_ENV, point)
            .output()
            .unwrap();
        check(!out.status.success(), format!("{point} did not fire"))?;

        let reopened = Project::open(&p).map_err(|e| format!("{point}: reload failed: {e}"))?;
        let after = reopened.manifest().map_err(|e| e.to_string())?;
        check(
            (after != before) == *committed,
            format!("{point}: manifest change does not match the commit point"),
        )?;
        reopened.recover().map_err(|e| e.to_string())?;
        let problems = reopened.check_consistency().map_err(|e| e.to_string())?;
        check(problems.is_empty(), format!("{point}: {problems:?}"))?;
        if !committed {
            ok(&[verb, "-p", s(&p)]);
        }
        let problems = reopened.check_consistency().map_err(|e| e.to_string())?;
        check(
            problems.is_empty(),
            format!("{point} after retry: {problems:?}"),
        )?;
        let compare = match *verb {
            "next-batch" => "batches/001/pseudo.conllu",
            "finalize" => "batches/001/gold.conllu",
            _ => "models/iter001/model.json",
        };
        check(
            std::fs::read(p.join(compare)).ok() == std::fs::read(clean.join(compare)).ok(),
            format!("{point}: {compare} differs from an uninterrupted run"),
        )?;
    }
    Ok(format!("{} injected crashes: each reloads consistent, all-or-nothing, and the retry matches an uninterrupted run", points.len()))
}

#[test]
fn primary_acceptance_criteria() {
    let criteria: [Criterion; 7] = [
        ("metrics oracle equivalence", metrics_oracle),
        ("kappa hand case", kappa_hand_case),
        ("decoder exactness", decoder_exactness),
        ("CoNLL-U round trip", round_trip),
        ("end-to-end loop", end_to_end),
        ("adapter protocol", adapter_protocol),
        ("crash safety", crash_safety),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let line = match &outcome {
            Ok(detail) => format!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed.push(*name);
                format!("FAIL [{}] {name}: {why}", i + 1)
            }
        };
        let _ = writeln!(std::io::stderr(), "{line}");
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
