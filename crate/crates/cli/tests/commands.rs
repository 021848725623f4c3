use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;
use kral_cli::cli::{CurveFile, DistillManifest};
use kral_cli::{exit, run, Cli};
use kral_core::corpus::{write_corpus, Document};
use kral_core::distill::write_jsonl;
use kral_core::PipelineConfig;

fn kral(data_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kral"))
        .env_remove("KRAL_CONFIG")
        .env("KRAL_DATA_DIR", data_dir)
        .args(args)
        .output()
        .unwrap()
}

fn run_args(args: &[&str]) -> Result<String, kral_cli::CliError> {
    let cli = Cli::try_parse_from(std::iter::once("kral").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    run(cli, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_docs(path: &Path) {
    let docs: Vec<Document> = [
        ("sepsis", "Sepsis: give vancomycin 15 mg/kg every 12 hours and monitor renal function."),
        ("cap", "Community-acquired pneumonia: amoxicillin 1 g three times daily for five days."),
    ]
    .iter()
    .map(|(id, body)| Document {
        doc_id: id.to_string(),
        title: String::new(),
        body: body.to_string(),
        page_no: None,
        source_tag: String::new(),
    })
    .collect();
    write_corpus(path, &docs).unwrap();
}

#[test]
fn estimate_prints_the_reduction_factors() {
    let dir = tempfile::tempdir().unwrap();
    let o = kral(dir.path(), &["estimate"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("flops_factor=0.1250"), "{s}");
    assert!(s.contains("vram_factor=0.0103"), "{s}");

    let s = stdout(&kral(dir.path(), &["estimate", "--enable", "lora,crm"]));
    assert!(s.contains("flops_factor=0.1250") && s.contains("vram_factor=0.1650"), "{s}");
    let o = kral(dir.path(), &["estimate", "--enable", "zero3"]);
    assert_eq!(o.status.code(), Some(exit::CONFIG as i32));
}

#[test]
fn train_with_the_same_seed_writes_identical_curves() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = kral(dir.path(), &["--seed", "42", "train", "--cases", "6", "--steps", "12", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let curve: CurveFile = serde_json::from_slice(&ta).unwrap();
    assert_eq!(curve.config.seed, 42);
    assert_eq!(curve.curve.steps.len(), 12);
    let mut cfg = PipelineConfig::default();
    cfg.grpo.seed = 42;
    cfg.evaluation.session.seed = 42;
    cfg.teacher.seed = 42;
    assert_eq!(curve.config_fingerprint, cfg.fingerprint());

    let c = dir.path().join("c.json");
    kral(dir.path(), &["--seed", "43", "train", "--cases", "6", "--steps", "12", "--out", c.to_str().unwrap()]);
    assert_ne!(std::fs::read(&c).unwrap(), ta);
}

#[test]
fn malformed_corpus_fails_with_its_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"doc_id\":\"a\",\"body\":\"fine\"}\n\n{\"doc_id\": \"b\", \"body\": 3}\n").unwrap();
    let o = kral(dir.path(), &["ingest", "--corpus", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::INPUT as i32));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.jsonl:3:"), "{err}");
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kral(dir.path(), &["frobnicate"]).status.code(), Some(exit::USAGE as i32));
    assert_eq!(kral(dir.path(), &["eval"]).status.code(), Some(exit::USAGE as i32));
    // No snapshot yet.
    assert_eq!(kral(dir.path(), &["query", "x"]).status.code(), Some(exit::IO as i32));

    let cfg = dir.path().join("kral.yaml");
    std::fs::write(&cfg, "retrieval:\n  top_k: 3\n  topk: 4\n").unwrap();
    let o = kral(dir.path(), &["--config", cfg.to_str().unwrap(), "estimate"]);
    assert_eq!(o.status.code(), Some(exit::INPUT as i32));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kral.yaml:3:"));
    std::fs::write(&cfg, "rewards:\n  hybrid:\n    alpha: 0.6\n    beta_lex: 0.2\n    gamma: 0.4\n").unwrap();
    assert_eq!(kral(dir.path(), &["--config", cfg.to_str().unwrap(), "estimate"]).status.code(), Some(exit::CONFIG as i32));

    let snapshot = dir.path().join("index.jsonl");
    std::fs::write(&snapshot, "{\"format\":\"something-else\"}\n").unwrap();
    assert_eq!(kral(dir.path(), &["query", "x"]).status.code(), Some(exit::INDEX as i32));

    let codes = [exit::USAGE, exit::CONFIG, exit::INPUT, exit::REMOTE, exit::INDEX, exit::TRAINING, exit::EVALUATION, exit::IO, exit::SERVER];
    let distinct: std::collections::BTreeSet<u8> = codes.iter().copied().collect();
    assert_eq!(distinct.len(), codes.len());
    assert!(!distinct.contains(&0) && !distinct.contains(&1));
}

#[test]
fn ingest_query_and_distill_stamp_the_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let corpus = dir.path().join("corpus.jsonl");
    write_docs(&corpus);
    let d = data.to_str().unwrap();
    let fp = PipelineConfig::default().fingerprint();

    let s = run_args(&["--data-dir", d, "ingest", "--corpus", corpus.to_str().unwrap()]).unwrap();
    assert!(s.contains("documents=2 chunks=2"), "{s}");
    let header = kral_core::index::Index::read_snapshot_header(data.join("index.jsonl")).unwrap();
    assert_eq!(header.config_fingerprint.as_deref(), Some(fp.as_str()));

    let s = run_args(&["--data-dir", d, "query", "vancomycin for sepsis", "--top-k", "1"]).unwrap();
    assert!(s.starts_with("1. sepsis#0"), "{s}");
    let json = run_args(&["--data-dir", d, "query", "amoxicillin", "--json"]).unwrap();
    let hits: Vec<kral_core::index::ScoredHit> = serde_json::from_str(&json).unwrap();
    assert_eq!(hits[0].chunk_id, "cap#0");

    let env = kral_core::grpo::make_env(3, 2).unwrap();
    let cases = dir.path().join("cases.jsonl");
    write_jsonl(&cases, &env.cases).unwrap();
    let out = dir.path().join("distilled");
    let s = run_args(&["--data-dir", d, "distill", "--cases", cases.to_str().unwrap(), "--augment", "2", "--out", out.to_str().unwrap()]).unwrap();
    assert!(s.contains("distilled"), "{s}");
    let manifest: DistillManifest = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config_fingerprint, fp);
    assert_eq!(manifest.seed_chunks, 2);
    assert_eq!(manifest.cases, 2);
    assert!(manifest.qa_pairs >= 2);
    let qa = std::fs::read_to_string(out.join("qa.jsonl")).unwrap();
    assert_eq!(qa.lines().count(), manifest.qa_pairs);
    assert_eq!(std::fs::read_to_string(out.join("trajectories.jsonl")).unwrap().lines().count(), manifest.valid_trajectories);
}

#[test]
fn eval_terminates_with_simulated_humans() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let s = run_args(&["--data-dir", d, "eval", "--synthetic", "45"]).unwrap();
    assert!(s.contains("status=terminated-pass round=1"), "{s}");
    assert_eq!(s.matches("kappa=1.0000").count(), 3, "{s}");

    let s = run_args(&["--data-dir", d, "--seed", "9", "eval", "--synthetic", "300", "--humans", "random"]).unwrap();
    assert!(s.contains("status=terminated-maxrounds round=3"), "{s}");

    // Sessions persist next to each other and carry the fingerprint.
    let journals: Vec<_> = std::fs::read_dir(dir.path().join("sessions")).unwrap().collect();
    assert_eq!(journals.len(), 2);
    let first = std::fs::read_to_string(dir.path().join("sessions/session-0001.jsonl")).unwrap();
    assert!(first.contains(&PipelineConfig::default().fingerprint()));
}

#[test]
fn ablate_and_benches_report_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let s = run_args(&["--data-dir", d, "ablate", "--factor", "clip-higher", "--cases", "4", "--steps", "5"]).unwrap();
    assert_eq!(s.lines().count(), 3, "{s}");
    assert!(s.lines().all(|l| l.starts_with("ablation factor=clip-higher seed=")));

    let s = run_args(&["bench-nih", "--queries", "20"]).unwrap();
    assert!(s.to_lowercase().contains("hybrid") && s.to_lowercase().contains("dense"), "{s}");
    let s = run_args(&["bench-latency", "--queries", "10"]).unwrap();
    assert!(s.to_lowercase().contains("warm"), "{s}");

    let s = run_args(&["config"]).unwrap();
    assert!(s.contains("chunk_size: 256"));
    assert!(s.contains(&PipelineConfig::default().fingerprint()));
}
