mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use common::*;
use serde_json::Value;

#[test]
fn build_corpus_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pairs.jsonl");
    let corpus = fixtures().join("corpus");
    let r = ctrltab_in(&corpus, &["build-corpus", "--xml", "articles", "--tables", "tables.jsonl", "--out", s(&out)], &[]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let golden = std::fs::read(corpus.join("pairs.golden.jsonl")).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), golden);
    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.path().join("pairs.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "build-corpus");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["config"]["theta_dup"], 0.8);
}

#[test]
fn usage_and_validation_errors_exit_1() {
    let r = ctrltab(&["stats", "--bogus"]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("Usage"), "{}", stderr(&r));
    let r = ctrltab(&["stats", "--pairs", "missing.jsonl"]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("missing.jsonl"));
    let r = ctrltab(&["train-retriever", "--pairs", "corpus/pairs.golden.jsonl", "--out", "/nonexistent/x.ckpt"]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("--seed"));
    let r = ctrltab(&["--threads", "0", "gradcheck"]);
    assert_eq!(code(&r), 1);
    assert_eq!(code(&ctrltab(&["--help"])), 0);
}

#[test]
fn stats_and_reference_check() {
    let r = ctrltab(&["stats", "--pairs", "corpus/pairs.golden.jsonl"]);
    assert_eq!(code(&r), 0);
    let v: Value = serde_json::from_str(&stdout(&r)).unwrap();
    assert_eq!(v["stats"]["n_pairs"], 3);
    assert!(v["reference_checks"].is_null());
    let r = ctrltab(&["stats", "--pairs", "corpus/pairs.golden.jsonl", "--check-reference"]);
    assert_eq!(code(&r), 1);
    assert!(stdout(&r).contains("FAIL n_pairs"));
}

#[test]
fn agreement_fixture_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("agreement.json");
    let r = ctrltab(&[
        "agreement",
        "--a",
        "agreement/annotator_a.jsonl",
        "--b",
        "agreement/annotator_b.jsonl",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(stdout(&r).contains("cells 66.7%  knowledge 70.6%"));
    let v: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!((v["cell_agreement"].as_f64(), v["kb_agreement"].as_f64()), (Some(0.667), Some(0.706)));
}

#[test]
fn agreement_from_verdict_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("verdicts.jsonl");
    let lines = [
        r#"{"seq":1,"verdict":{"pair_id":"a1-t2","annotator_id":"x","kb_decisions":[{"sentence_id":"a1:s7","accept":true}],"highlight_set":[[1,1],[2,1]],"timestamp":0}}"#,
        r#"{"seq":2,"verdict":{"pair_id":"a1-t2","annotator_id":"y","kb_decisions":[{"sentence_id":"a1:s7","accept":true}],"highlight_set":[[1,1]],"timestamp":0}}"#,
    ];
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();
    let r = ctrltab(&["agreement", "--pairs", "corpus/pairs.golden.jsonl", "--log", s(&log), "--a", "x", "--b", "y"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(stdout(&r).contains("cells 50.0%  knowledge 100.0%"), "{}", stdout(&r));
    let r = ctrltab(&["agreement", "--pairs", "corpus/pairs.golden.jsonl", "--log", s(&log), "--a", "x", "--b", "z"]);
    assert_eq!(code(&r), 1);
}

#[test]
fn gradcheck_passes() {
    let r = ctrltab(&["gradcheck"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let text = stdout(&r);
    assert!(text.contains("retriever") && text.contains("generator"), "{text}");
}

fn synth(dir: &std::path::Path, kind: &str, n: &str) -> std::path::PathBuf {
    let out = dir.join(format!("{kind}.jsonl"));
    let r = ctrltab(&["--seed", "42", "synth", "--kind", kind, "--n", n, "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    out
}

#[test]
fn train_generate_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = synth(dir.path(), "knowledge", "8");
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "d_model=16\nheads=2\nlayers=1\nepochs=2\nmax-len=12\n").unwrap();
    let gen_ckpt = dir.path().join("gen.ckpt");
    let r = ctrltab(&[
        "--seed", "7", "--config", s(&cfg), "train-generator", "--pairs", s(&pairs), "--out", s(&gen_ckpt), "--epochs", "1",
        "--selector", "leading",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.path().join("gen.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["train"]["epochs"], 1, "flags win over the config file");
    assert_eq!(manifest["config"]["model"]["d_model"], 16);
    assert_eq!(manifest["config"]["model"]["max_output_len"], 12);
    assert_eq!(manifest["report"]["epoch_losses"].as_array().unwrap().len(), 1);

    let gens = dir.path().join("gen.jsonl");
    let r = ctrltab(&[
        "--seed", "7", "generate", "--model", s(&gen_ckpt), "--pairs", s(&pairs), "--out", s(&gens), "--beam", "2",
        "--selector", "leading",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let first: Value = serde_json::from_str(std::fs::read_to_string(&gens).unwrap().lines().next().unwrap()).unwrap();
    for key in ["pair_id", "output", "retrieved", "decode"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert_eq!(first["decode"]["strategy"], "beam");
    assert_eq!(first["decode"]["beam_width"], 2);

    let report = dir.path().join("report.json");
    let sheet = dir.path().join("sheet.csv");
    let r = ctrltab(&["evaluate", "--gen", s(&gens), "--pairs", s(&pairs), "--out", s(&report), "--sheet", s(&sheet)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let v: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    for key in ["bleu", "meteor", "cell_recall"] {
        assert!(v[key].is_number(), "{key}");
    }
    let csv = std::fs::read_to_string(&sheet).unwrap();
    assert!(csv.starts_with("pair_id,output,reference,table,highlights,fluency,faithfulness,recall,valid_facts\n"));
    assert!(dir.path().join("sheet.csv.manifest.json").exists());
}

#[test]
fn retrieve_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = synth(dir.path(), "retrieval", "3");
    let out = dir.path().join("tfidf.jsonl");
    let r = ctrltab(&["retrieve", "--tfidf", "--pairs", s(&pairs), "--out", s(&out), "--n", "2"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    let v: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 2);
    assert!(v["results"][0]["score"].as_f64().unwrap() >= v["results"][1]["score"].as_f64().unwrap());

    let ckpt = dir.path().join("ret.ckpt");
    let r = ctrltab(&[
        "--seed", "1", "train-retriever", "--pairs", s(&pairs), "--out", s(&ckpt), "--d-model", "16", "--heads", "2",
        "--epochs", "1",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let out = dir.path().join("neural.jsonl");
    let r = ctrltab(&["retrieve", "--model", s(&ckpt), "--pairs", s(&pairs), "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let v: Value = serde_json::from_str(std::fs::read_to_string(&out).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 3);
    let r = ctrltab(&["retrieve", "--pairs", s(&pairs), "--out", s(&out)]);
    assert_eq!(code(&r), 1);
}

/// Answers every request with `{"text": "generated <n>"}`.
fn completion_server(n: usize) -> (String, std::thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let h = std::thread::spawn(move || {
        for i in 0..n {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let reply = format!(r#"{{"text":"generated {i}"}}"#);
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/complete"), h)
}

#[test]
fn generate_with_external_model() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = synth(dir.path(), "knowledge", "8");
    let (endpoint, server) = completion_server(2);
    let out = dir.path().join("llm.jsonl");
    let r = ctrltab_in(
        &fixtures(),
        &["--seed", "1", "generate", "--llm", "--pairs", s(&pairs), "--out", s(&out), "--threads", "1"],
        &[("CTRLTAB_LLM_ENDPOINT", &endpoint), ("CTRLTAB_LLM_KEY", "k")],
    );
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    server.join().unwrap();
    let rows: Vec<Value> =
        std::fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0]["output"].as_str().unwrap().starts_with("generated"));
    assert_eq!(rows[0]["decode"]["strategy"], "llm");
    assert_eq!(rows[0]["retrieved"].as_array().unwrap().len(), 2);
    assert_eq!(rows[0]["prompt_sha256"].as_str().unwrap().len(), 64);

    let r = ctrltab_in(
        &fixtures(),
        &["--seed", "1", "generate", "--llm", "--pairs", s(&pairs), "--out", s(&out)],
        &[("CTRLTAB_LLM_ENDPOINT", "http://127.0.0.1:9/none"), ("CTRLTAB_LLM_TIMEOUT_MS", "200")],
    );
    assert_eq!(code(&r), 2, "{}", stderr(&r));
}

#[test]
fn serve_bind_conflict_is_a_startup_error() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("v.jsonl");
    let r = ctrltab(&["serve", "--pairs", "corpus/pairs.golden.jsonl", "--log", s(&log), "--port", &port]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("cannot bind"), "{}", stderr(&r));
}
