use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sslm_core::{CharVocab, Corpus, LanguageModel, LmConfig, Tokenizer};

const TRAIN: &str = "ukuhamba kwabo kuhle\nsihamba kakuhle namhlanje\nbahamba ekuseni kakhulu\n";
const VALID: &str = "uhamba kuhle\nbahamba namhlanje\n";

fn sslm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sslm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sslm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Dir(TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }

    fn file(&self, name: &str, contents: &str) -> String {
        let p = self.0.path().join(name);
        fs::write(&p, contents).unwrap();
        p.to_str().unwrap().to_string()
    }

    fn path(&self, name: &str) -> String {
        self.0.path().join(name).to_str().unwrap().to_string()
    }
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p).unwrap()
}

fn train_small(dir: &Dir, tag: &str, extra: &[&str]) -> (PathBuf, PathBuf, Output) {
    let train = dir.file("train.txt", TRAIN);
    let valid = dir.file("valid.txt", VALID);
    let out = dir.path(&format!("{tag}.ckpt"));
    let log = dir.path(&format!("{tag}.log"));
    let mut args = vec![
        "train", "--train", &train, "--valid", &valid, "--out", &out, "--log", &log, "--set", "embed_dim=8", "--set",
        "hidden_dim=8", "--set", "lexicon_size=30", "--set", "max_seg_len=4", "--set", "max_epochs=2",
    ];
    args.extend_from_slice(extra);
    let o = ok(&args);
    (out.into(), log.into(), o)
}

#[test]
fn build_lexicon_writes_header_and_is_repeatable() {
    let dir = Dir::new();
    let corpus = dir.file("c.txt", "aba bab abba\n");
    let a = dir.path("a.tsv");
    let b = dir.path("b.tsv");
    ok(&["build-lexicon", "--corpus", &corpus, "--out", &a]);
    ok(&["build-lexicon", "--corpus", &corpus, "--out", &b]);
    let text = fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("#lexicon\t"));
    assert!(text.lines().count() - 1 <= 1000);
    assert_eq!(read(&a), read(&b));
}

#[test]
fn build_lexicon_rejects_zero_size() {
    let dir = Dir::new();
    let corpus = dir.file("c.txt", "aba bab\n");
    let out = sslm(&["build-lexicon", "--corpus", &corpus, "--size", "0", "--out", &dir.path("x.tsv")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn training_is_repeatable() {
    let dir = Dir::new();
    let (c1, l1, _) = train_small(&dir, "one", &[]);
    let (c2, l2, _) = train_small(&dir, "two", &[]);
    assert_eq!(read(&c1), read(&c2));
    assert_eq!(read(&l1), read(&l2));
    let log = fs::read_to_string(&l1).unwrap();
    assert!(log.lines().any(|l| l.starts_with("1\ttrain\t")));
    assert!(log.lines().any(|l| l.starts_with("1\tvalid\t")));
    assert!(log.contains("# status="));
}

#[test]
fn training_needs_a_validation_file() {
    let dir = Dir::new();
    let train = dir.file("train.txt", TRAIN);
    let out = sslm(&[
        "train",
        "--train",
        &train,
        "--valid",
        &dir.path("missing.txt"),
        "--out",
        &dir.path("m.ckpt"),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flat_validation_loss_stops_early() {
    let dir = Dir::new();
    let (_, log, o) = train_small(&dir, "flat", &["--set", "lr=1e-300", "--set", "max_epochs=20"]);
    let log = fs::read_to_string(log).unwrap();
    assert!(log.contains("# status=early-stopped"), "{log}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("status=early-stopped"));
    let epochs = log.lines().filter(|l| l.contains("\tvalid\t")).count();
    assert_eq!(epochs, 7);
}

#[test]
fn segmenting_a_single_letter_and_repeating() {
    let dir = Dir::new();
    let (ckpt, _, _) = train_small(&dir, "m", &["--set", "max_epochs=1"]);
    let ckpt = ckpt.to_str().unwrap();
    let input = dir.file("in.txt", "a\n");
    let out = ok(&["segment", "--model", ckpt, "--input", &input]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "a\n");

    let input = dir.file("words.txt", "ukuhamba kahle\nbahamba\n");
    let a = ok(&["segment", "--model", ckpt, "--input", &input]).stdout;
    let b = ok(&["segment", "--model", ckpt, "--input", &input]).stdout;
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 3);

    let json = ok(&["segment", "--model", ckpt, "--input", &input, "--format", "json"]).stdout;
    let first: serde_json::Value = serde_json::from_slice(json.split(|&c| c == b'\n').next().unwrap()).unwrap();
    assert_eq!(first["word"], "ukuhamba");
    assert!(first["cuts"].is_array());
}

fn metric(stdout: &[u8], name: &str) -> f64 {
    String::from_utf8_lossy(stdout)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name}\t")).map(|v| v.parse().unwrap()))
        .unwrap_or_else(|| panic!("no {name}"))
}

#[test]
fn eval_perfect_and_unsegmented_predictions() {
    let dir = Dir::new();
    let gold = dir.file("gold.txt", "sesihambe\tse-si-hamb-e\nbahamba\tba-hamb-a\n");
    let same = dir.file("same.txt", "se-si-hamb-e\nba-hamb-a\n");
    let whole = dir.file("whole.txt", "sesihambe\nbahamba\n");

    let out = ok(&["eval", "--gold", &gold, "--predictions", &same]).stdout;
    for m in ["mi_precision", "mi_recall", "mi_f1", "mbi_precision", "mbi_recall", "mbi_f1"] {
        assert_eq!(metric(&out, m), 1.0, "{m}");
    }
    let out = ok(&["eval", "--gold", &gold, "--predictions", &whole]).stdout;
    for m in ["mi_f1", "mbi_recall", "mbi_f1"] {
        assert_eq!(metric(&out, m), 0.0, "{m}");
    }
}

#[test]
fn eval_fixture_scores() {
    let dir = Dir::new();
    let gold = dir.file("gold.txt", "sesihambe\tse-si-hamb-e\n");
    let pred = dir.file("pred.txt", "se-si-hambe\n");
    let out = ok(&["eval", "--gold", &gold, "--predictions", &pred]).stdout;
    assert_eq!(metric(&out, "mi_precision"), 0.666667);
    assert_eq!(metric(&out, "mi_recall"), 0.5);
}

#[test]
fn eval_reports_bpc_of_a_checkpoint() {
    let dir = Dir::new();
    let (ckpt, _, _) = train_small(&dir, "m", &[]);
    let text = dir.file("t.txt", VALID);
    let out = ok(&["eval", "--model", ckpt.to_str().unwrap(), "--bpc", &text]).stdout;
    let bpc = metric(&out, "bpc");
    assert!(bpc.is_finite() && bpc > 0.0);
}

#[test]
fn bpe_without_merges_splits_into_characters() {
    let dir = Dir::new();
    let corpus = dir.file("c.txt", "abab abab cab\n");
    let model = dir.path("bpe.txt");
    ok(&["baseline", "bpe", "--corpus", &corpus, "--merges", "0", "--out", &model]);
    let input = dir.file("in.txt", "abab cab\n");
    let out = ok(&["segment", "--model", &model, "--input", &input]).stdout;
    assert_eq!(String::from_utf8(out).unwrap(), "a-b-a-b\nc-a-b\n");
}

#[test]
fn ulm_keeps_a_repeated_word_whole() {
    let dir = Dir::new();
    let corpus = dir.file("c.txt", &"hamba ".repeat(50));
    let model = dir.path("ulm.txt");
    ok(&["baseline", "ulm", "--corpus", &corpus, "--vocab", "8", "--out", &model]);
    let input = dir.file("in.txt", "hamba\n");
    let out = ok(&["segment", "--model", &model, "--input", &input]).stdout;
    assert_eq!(String::from_utf8(out).unwrap(), "hamba\n");
}

#[test]
fn stddev_entropy_on_a_uniform_model_finds_no_boundaries() {
    let dir = Dir::new();
    let corpus = Corpus::from_text("abc cab", Some(&CharVocab::from_chars(['a', 'b', 'c', ' '])), 1);
    let mut lm = LanguageModel::new(
        corpus.vocab.clone(),
        Tokenizer::Char,
        &corpus.lines,
        LmConfig::default(),
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let (w, b) = lm.output_params();
    lm.params.get_mut(w).fill(0.0);
    lm.params.get_mut(b).fill(0.0);
    let ckpt = dir.path("lm.ckpt");
    lm.to_checkpoint(&[]).save(Path::new(&ckpt)).unwrap();
    let input = dir.file("in.txt", "abcabc cab\n");
    let out = ok(&[
        "baseline",
        "entropy",
        "--checkpoint",
        &ckpt,
        "--input",
        &input,
        "--criterion",
        "stddev",
    ])
    .stdout;
    assert_eq!(String::from_utf8(out).unwrap(), "abcabc\ncab\n");
}

#[test]
fn entropy_needs_a_language_model() {
    let dir = Dir::new();
    let (ckpt, _, _) = train_small(&dir, "m", &["--set", "max_epochs=1"]);
    let input = dir.file("in.txt", "abc\n");
    let out = sslm(&[
        "baseline",
        "entropy",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        &input,
        "--criterion",
        "spike",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let dir = Dir::new();
    let train = dir.file("train.txt", TRAIN);
    let valid = dir.file("valid.txt", VALID);
    let out = sslm(&[
        "train", "--train", &train, "--valid", &valid, "--out", &dir.path("m"), "--preset", "nope",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
