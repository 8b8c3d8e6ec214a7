use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kwattn::synthetic::{self, SyntheticSpec};

fn kwattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kwattn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a small synthetic train/val split and background dictionary.
fn small_corpus(dir: &Path, documents: usize) -> (String, String, String) {
    let spec = SyntheticSpec {
        documents,
        document_length: 12,
        topics_per_document: 2,
        topic_repeats: 2,
        topic_pool: 12,
        seed: 3,
    };
    let docs = synthetic::corpus(&spec).unwrap();
    let split = documents * 2 / 3;
    let train = dir.join("train.jsonl");
    let val = dir.join("val.jsonl");
    let bg = dir.join("bg.tsv");
    synthetic::write_corpus(&docs[..split], &train).unwrap();
    synthetic::write_corpus(&docs[split..], &val).unwrap();
    fs::write(&bg, synthetic::background(&spec).to_tsv()).unwrap();
    (p(&train).into(), p(&val).into(), p(&bg).into())
}

const SMALL_MODEL: &str = "\
model.d_model = 8
model.d_ff = 16
model.encoder_layers = 1
model.decoder_layers = 1
model.max_positions = 24
model.half_width = 2
train.epochs = 2
train.learning_rate = 0.01
generate.num_beams = 2
generate.max_length = 4
generate.min_length = 1
keywords.k = 2
";

#[test]
fn evaluate_identical_files_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("s.jsonl");
    fs::write(
        &f,
        "{\"id\":\"a\",\"summary\":\"the cat sat\"}\n{\"id\":\"b\",\"summary\":\"a dog ran far\"}\n",
    )
    .unwrap();
    let o = kwattn(&["evaluate", "--cand", p(&f), "--ref", p(&f)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "R-1/R-2/R-L: 100.0/100.0/100.0");
}

#[test]
fn evaluate_matches_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let cand = dir.path().join("c.jsonl");
    let refs = dir.path().join("r.jsonl");
    fs::write(&cand, "{\"id\":\"y\",\"generated\":\"x\"}\n{\"id\":\"x\",\"generated\":\"the cat\"}\n").unwrap();
    fs::write(&refs, "{\"id\":\"x\",\"summary\":\"the cat sat\"}\n").unwrap();
    let o = kwattn(&["evaluate", "--cand", p(&cand), "--ref", p(&refs)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "R-1/R-2/R-L: 80.0/66.7/80.0");

    fs::write(&refs, "{\"id\":\"z\",\"summary\":\"the cat sat\"}\n").unwrap();
    let o = kwattn(&["evaluate", "--cand", p(&cand), "--ref", p(&refs)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`z`"));
}

#[test]
fn pattern_egad_has_24_dark_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.pgm");
    let o = kwattn(&[
        "pattern", "--kind", "egad", "--n", "6", "--half-width", "1", "--globals", "0", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pgm = fs::read_to_string(&out).unwrap();
    let mut tokens = pgm.split_whitespace();
    assert_eq!(tokens.next(), Some("P2"));
    let cells: Vec<&str> = tokens.skip(3).collect();
    assert_eq!(cells.len(), 36);
    assert_eq!(cells.iter().filter(|c| **c == "0").count(), 24);
    let conf = fs::read_to_string(dir.path().join("m.pgm.resolved.conf")).unwrap();
    assert!(conf.contains("kind = egad"));
    assert!(conf.contains("globals = 0"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(kwattn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(kwattn(&["evaluate", "--bogus", "x"]).status.code(), Some(2));
    assert_eq!(kwattn(&["pattern", "--kind", "mystery", "--n", "4", "--out", "/dev/null"]).status.code(), Some(2));
    let o = kwattn(&["fewshot", "--set", "model.width=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.width"));
}

#[test]
fn missing_file_exits_1_with_path() {
    let o = kwattn(&["evaluate", "--cand", "/no/such/cand.jsonl", "--ref", "/no/such/ref.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/cand.jsonl"), "{}", stderr(&o));
    let o = kwattn(&["train", "--config", "/no/such/run.conf"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/run.conf"));
}

#[test]
fn keywords_prints_word_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("doc.txt");
    let bg = dir.path().join("bg.tsv");
    fs::write(&doc, "The cat and the dog. The cat!").unwrap();
    fs::write(&bg, "the\t1000\ncat\t3\ndog\t5\n").unwrap();
    let o = kwattn(&["keywords", "--input", p(&doc), "--background", p(&bg), "--k", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    // total 1008: cat 2*ln(336), dog ln(201.6); "and" and punctuation are OOV
    assert_eq!(lines, ["cat\t11.634222", "dog\t5.306286"]);

    let o = kwattn(&["keywords", "--input", p(&doc), "--source", "gibberish", "--k", "3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 3);
    assert!(stdout(&o).lines().all(|l| l.ends_with("\t-")));
}

#[test]
fn background_with_duplicate_word_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("doc.txt");
    let bg = dir.path().join("bg.tsv");
    fs::write(&doc, "cat").unwrap();
    fs::write(&bg, "cat\t3\ncat\t4\n").unwrap();
    let o = kwattn(&["keywords", "--input", p(&doc), "--background", p(&bg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn train_then_generate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val, bg) = small_corpus(dir.path(), 9);
    let conf = dir.path().join("run.conf");
    fs::write(&conf, SMALL_MODEL).unwrap();
    let out = dir.path().join("run");
    let o = kwattn(&[
        "train", "--config", p(&conf), "--seed", "5", "--train", &train, "--val", &val,
        "--background", &bg, "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,train_loss,val_loss"));
    assert_eq!(log.lines().count(), 3);
    let resolved = fs::read_to_string(out.join("resolved.conf")).unwrap();
    assert!(resolved.contains("seed = 5\n"));
    assert!(resolved.contains("model.d_model = 8\n"));

    let gen = dir.path().join("gen.jsonl");
    let o = kwattn(&[
        "generate", "--config", p(&conf), "--model", p(&out), "--corpus", &val, "--background", &bg,
        "--out", p(&gen),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = fs::read_to_string(&gen)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|v| v["id"].is_string() && v["generated"].is_string()));
    assert!(dir.path().join("gen.jsonl.resolved.conf").exists());

    // the generated file is scoreable against the references
    let o = kwattn(&["evaluate", "--cand", p(&gen), "--ref", &val]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("R-1/R-2/R-L: "));
}

#[test]
fn resolved_config_reproduces_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val, bg) = small_corpus(dir.path(), 9);
    let conf = dir.path().join("run.conf");
    fs::write(&conf, SMALL_MODEL).unwrap();
    let first = dir.path().join("first");
    let o = kwattn(&[
        "train", "--config", p(&conf), "--set", "train.epochs=1", "--seed", "8", "--train", &train,
        "--val", &val, "--background", &bg, "--out", p(&first),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let second = dir.path().join("second");
    let o = kwattn(&[
        "train", "--config", p(&first.join("resolved.conf")), "--set",
        &format!("output_dir={}", p(&second)),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["checkpoint/params.bin", "loss.csv", "vocab.txt"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn fewshot_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val, bg) = small_corpus(dir.path(), 18);
    let conf = dir.path().join("fs.conf");
    fs::write(
        &conf,
        format!(
            "{SMALL_MODEL}train_corpus = {train}\nval_corpus = {val}\nbackground = {bg}\n\
             fewshot.sample_sizes = 0,4\nfewshot.repetitions = 2\nfewshot.eval_size = 3\n\
             fewshot.keyword_counts = 0,2\nseed = 11\n"
        ),
    )
    .unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = kwattn(&["fewshot", "--config", p(&conf), "--out", p(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        reports.push(fs::read(out.join("report.csv")).unwrap());
        assert_eq!(
            fs::read(dir.path().join("a/draws.csv")).unwrap(),
            fs::read(out.join("draws.csv")).unwrap()
        );
    }
    assert_eq!(reports[0], reports[1]);
    let text = String::from_utf8(reports.remove(0)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sample_size,keyword_count,rouge1,rouge2,rougeL");
    let keys: Vec<(&str, &str)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0], f[1])
        })
        .collect();
    assert_eq!(keys, [("0", "0"), ("0", "2"), ("4", "0"), ("4", "2")]);
}
