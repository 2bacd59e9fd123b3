//! Binary-level behavior: help goldens, exit codes, artifact protection,
//! and the attention-cost report.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hlog() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hlog"))
}

fn run(args: &[&str]) -> Output {
    hlog().args(args).output().expect("binary runs")
}

fn stdout_json(output: &Output) -> serde_json::Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&output.stdout)
        )
    })
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

const SUBCOMMANDS: [&str; 13] = [
    "build-vocab",
    "train",
    "eval-mlm",
    "gen-fake",
    "detect",
    "export-embeddings",
    "pca",
    "classify",
    "recommend",
    "param-count",
    "mem-report",
    "gradcheck",
    "gen-corpus",
];

// Full help surface, golden-file checked. Regenerate with
// UPDATE_GOLDEN=1 cargo test -p hlogformer-cli --test cli.
#[test]
fn help_output_matches_golden() {
    let mut text = String::new();
    let top = run(&["--help"]);
    text.push_str(&String::from_utf8_lossy(&top.stdout));
    for sub in SUBCOMMANDS {
        text.push_str(&format!("\n===== hlog {sub} =====\n"));
        let out = run(&[sub, "--help"]);
        assert_eq!(exit_code(&out), 0, "help for {sub}");
        text.push_str(&String::from_utf8_lossy(&out.stdout));
    }
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/help.txt");
    if std::env::var("UPDATE_GOLDEN").is_ok() {
        std::fs::write(&golden_path, &text).unwrap();
        return;
    }
    let golden = std::fs::read_to_string(&golden_path)
        .expect("golden help file exists; run with UPDATE_GOLDEN=1 to create");
    assert_eq!(text, golden, "help output drifted; review and regenerate");
}

#[test]
fn missing_config_exits_with_config_code() {
    let out = run(&["train", "--config", "/nonexistent/config.toml"]);
    assert_eq!(exit_code(&out), 3); // unreadable file surfaces as io/data
    let json = stdout_json(&out);
    assert!(json["error"]["message"].is_string());

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "not toml at all ===").unwrap();
    let out = run(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert_eq!(stdout_json(&out)["error"]["category"], "config");
}

#[test]
fn malformed_corpus_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("bad.jsonl");
    std::fs::write(&corpus, "{\"a\": 1}\nnot json\n").unwrap();
    let out = run(&[
        "build-vocab",
        corpus.to_str().unwrap(),
        "--out",
        dir.path().join("vocab.txt").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 3);
    assert_eq!(stdout_json(&out)["error"]["category"], "data");
}

#[test]
fn artifacts_require_force_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    std::fs::write(&corpus, "{\"a\": 1, \"b\": 2}\n").unwrap();
    let vocab = dir.path().join("vocab.txt");
    let args = [
        "build-vocab",
        corpus.to_str().unwrap(),
        "--out",
        vocab.to_str().unwrap(),
    ];
    assert_eq!(exit_code(&run(&args)), 0);
    let again = run(&args);
    assert_eq!(exit_code(&again), 2);
    assert!(stdout_json(&again)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("--force"));
    let mut forced: Vec<&str> = args.to_vec();
    forced.push("--force");
    assert_eq!(exit_code(&run(&forced)), 0);
}

fn write_lines(path: &PathBuf, lines: &[String]) {
    std::fs::write(path, format!("{}\n", lines.join("\n"))).unwrap();
}

// A record of 20 flat leaves, 5 tokens each: 100 tokens total, chunked
// into ten equal segments of ten. With no summary slots the segment
// windows cost a tenth of one full-attention window.
#[test]
fn mem_report_shows_the_tenfold_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("wide.jsonl");
    let fields: Vec<String> = (0..20)
        .map(|i| format!("\"k{i:02}\":\"va{i:02} vb{i:02} vc{i:02}\""))
        .collect();
    write_lines(&corpus, &[format!("{{{}}}", fields.join(","))]);
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "[data]\ncorpus = \"unused\"\n").unwrap();

    let out = run(&[
        "mem-report",
        "--data",
        corpus.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--set",
        "model.summary_slots=0",
        "--max-segment-len",
        "10",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let json = stdout_json(&out);
    assert_eq!(json["rows"][0]["flat_tokens"], 100);
    assert_eq!(json["rows"][0]["flat_cost"], 10_000);
    assert_eq!(json["rows"][0]["steps"], 10);
    assert_eq!(json["rows"][0]["hier_cost"], 1_000);
    assert_eq!(json["rows"][0]["ratio"], 0.1);
    assert_eq!(json["total_ratio"], 0.1);
}

#[test]
fn gen_corpus_and_vocab_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "gen-corpus",
        "--kind",
        "logs",
        "--records",
        "12",
        "--seed",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let corpus = dir.path().join("corpus.jsonl");
    assert!(corpus.exists());
    assert!(dir.path().join("labels.csv").exists());

    let vocab_out = run(&[
        "build-vocab",
        corpus.to_str().unwrap(),
        "--out",
        dir.path().join("vocab.txt").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&vocab_out), 0);
    let json = stdout_json(&vocab_out);
    assert_eq!(json["records"], 12);
    let vocab_text = std::fs::read_to_string(dir.path().join("vocab.txt")).unwrap();
    let first: Vec<&str> = vocab_text.lines().take(4).collect();
    assert_eq!(
        first,
        vec!["\u{27E8}PAD\u{27E9}", "\u{27E8}UNK\u{27E9}", "\u{27E8}MASK\u{27E9}", "\u{27E8}SUM\u{27E9}"]
    );
}

#[test]
fn unknown_mode_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    std::fs::write(&corpus, "{\"a\": 1}\n").unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!("[data]\ncorpus = \"{}\"\n", corpus.display()),
    )
    .unwrap();
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--mode",
        "sideways",
    ]);
    assert_eq!(exit_code(&out), 2);
}

// Small end-to-end determinism check; the acceptance suite runs the full
// train-and-detect variant.
#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let gen = run(&[
        "gen-corpus",
        "--kind",
        "logs",
        "--records",
        "14",
        "--seed",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&gen), 0);
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "seed = 3\n[data]\ncorpus = \"{}\"\n[model]\nmodel_width = 16\nheads = 2\nffn_width = 32\nsummary_slots = 4\nmax_window = 64\n[train]\nepochs = 1\nbatch_size = 8\n",
            dir.path().join("corpus.jsonl").display()
        ),
    )
    .unwrap();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(
            exit_code(&out),
            0,
            "{}",
            String::from_utf8_lossy(&out.stdout)
        );
    }
    let metrics_a = std::fs::read(dir.path().join("a/metrics.json")).unwrap();
    let metrics_b = std::fs::read(dir.path().join("b/metrics.json")).unwrap();
    assert_eq!(metrics_a, metrics_b);
    let ckpt_a = std::fs::read(dir.path().join("a/checkpoint.ckpt")).unwrap();
    let ckpt_b = std::fs::read(dir.path().join("b/checkpoint.ckpt")).unwrap();
    assert_eq!(ckpt_a, ckpt_b);
}
