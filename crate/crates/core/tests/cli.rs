use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use seglearn::ablation::mean_top_score;
use seglearn::trainer::evaluate;
use seglearn::{parse_bakeoff, Model, NormalizeMode};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn seglearn(args: &[&std::ffi::OsStr]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seglearn")).args(args).output().unwrap()
}

macro_rules! cli {
    ($($arg:expr),* $(,)?) => {
        seglearn(&[$(std::ffi::OsStr::new(&$arg)),*])
    };
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Model trained once on the toy corpus with default settings, plus its log.
fn toy_model() -> &'static (tempfile::TempDir, PathBuf, PathBuf) {
    static MODEL: OnceLock<(tempfile::TempDir, PathBuf, PathBuf)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("toy.model");
        let log = dir.path().join("toy.jsonl");
        let out = cli!(
            "train",
            fixture("toy_corpus.txt"),
            "--model",
            model,
            "--log",
            log,
            "--eval-train"
        );
        assert!(out.status.success(), "{}", stderr(&out));
        (dir, model, log)
    })
}

fn raw_copy(dir: &Path, gold: &Path) -> PathBuf {
    let text = std::fs::read_to_string(gold).unwrap();
    let raw: String = text.lines().map(|l| l.split_whitespace().collect::<String>() + "\n").collect();
    let path = dir.join("raw.txt");
    std::fs::write(&path, raw).unwrap();
    path
}

#[test]
fn train_reaches_full_training_f1_in_log() {
    let (_, model, log) = toy_model();
    assert!(model.exists());
    let text = std::fs::read_to_string(log).unwrap();
    let records: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 30);
    let last = &records[29];
    assert!(last["train_f1"].as_f64().unwrap() >= 0.99, "{last}");
    assert!(last.get("wall_seconds").is_none());
}

#[test]
fn missing_input_exits_with_two_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli!("train", "no/such/corpus.txt", "--model", dir.path().join("m"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no/such/corpus.txt"), "{}", stderr(&out));

    let out = cli!("segment", "--model", "missing.model", fixture("eval_gold.txt"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.model"));
}

#[test]
fn bad_flags_are_usage_errors() {
    let out = cli!("segment", "--beam");
    assert_eq!(out.status.code(), Some(2));
    let out = cli!("ablate", "no_such_mode", fixture("toy_corpus.txt"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_character_line_is_echoed() {
    let (dir, model, _) = toy_model();
    let input = dir.path().join("single.txt");
    std::fs::write(&input, "我\n\n。\n").unwrap();
    let out = cli!("segment", "--model", model, input);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), "我\n\n。\n");
    assert!(stderr(&out).contains("chars/s"));
}

#[test]
fn segment_restores_original_surfaces() {
    let (dir, model, _) = toy_model();
    let input = dir.path().join("mixed.txt");
    std::fs::write(&input, "他用ＩＰｈｏｎｅ买了3.5公斤苹果\n").unwrap();
    let out = cli!("segment", "--model", model, input);
    let line = stdout(&out);
    assert_eq!(line.replace("  ", ""), "他用ＩＰｈｏｎｅ买了3.5公斤苹果\n");
    assert!(line.contains("ＩＰｈｏｎｅ"), "{line}");
    assert!(line.contains("3.5"), "{line}");
}

#[test]
fn wider_beam_never_scores_lower_on_average() {
    let (_, model, _) = toy_model();
    let m = Model::load(model).unwrap();
    let corpus = parse_bakeoff(fixture("toy_corpus.txt"), true, NormalizeMode::Split).unwrap();
    let k1 = mean_top_score(&m, &corpus, 1, 4).unwrap();
    let k4 = mean_top_score(&m, &corpus, 4, 4).unwrap();
    assert!(k4 >= k1, "k=4 {k4} < k=1 {k1}");
}

#[test]
fn segment_then_eval_matches_library_f1() {
    let (dir, model, _) = toy_model();
    let gold = fixture("toy_corpus.txt");
    let raw = raw_copy(dir.path(), &gold);
    let out = cli!("segment", "--model", model, raw);
    assert!(out.status.success());
    let pred = dir.path().join("pred_pipeline.txt");
    std::fs::write(&pred, out.stdout).unwrap();

    let eval = cli!("eval", gold, pred);
    assert!(eval.status.success(), "{}", stderr(&eval));
    let m = Model::load(model).unwrap();
    let corpus = parse_bakeoff(&gold, true, NormalizeMode::Split).unwrap();
    let f1 = evaluate(&m, &corpus, 4, 4, 1).unwrap().f1;
    assert!(stdout(&eval).contains(&format!("F1\t{f1:.4}")), "{} vs {f1}", stdout(&eval));
}

#[test]
fn threaded_segmentation_keeps_line_order() {
    let (dir, model, _) = toy_model();
    let raw = raw_copy(dir.path(), &fixture("toy_corpus.txt"));
    let one = cli!("segment", "--model", model, raw, "--threads", "1");
    let four = cli!("segment", "--model", model, raw, "--threads", "4");
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn eval_reports_four_decimals() {
    let gold = fixture("eval_gold.txt");
    let same = cli!("eval", gold, gold);
    assert!(stdout(&same).contains("F1\t1.0000"));
    let out = cli!("eval", gold, fixture("eval_pred.txt"));
    let text = stdout(&out);
    assert!(text.contains("P\t0.5000") && text.contains("R\t0.3333") && text.contains("F1\t0.4000"), "{text}");
    let listed = cli!("eval", gold, fixture("eval_pred.txt"), "--errors");
    assert!(stdout(&listed).contains("line 1"));
}

#[test]
fn eval_rejects_misaligned_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let out = cli!("eval", fixture("eval_gold.txt"), empty);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));

    let other = dir.path().join("other.txt");
    std::fs::write(&other, "我们  去  了\n").unwrap();
    let out = cli!("eval", fixture("eval_gold.txt"), other);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn version_mismatch_names_manifest_version() {
    let (dir, model, _) = toy_model();
    let bytes = std::fs::read(model).unwrap();
    let text = String::from_utf8_lossy(&bytes[..64]).into_owned();
    assert!(text.contains("version 1"));
    let patched = dir.path().join("v9.model");
    let mut out = bytes.clone();
    let at = text.find("version 1").unwrap() + "version ".len();
    out[at] = b'9';
    std::fs::write(&patched, out).unwrap();
    let res = cli!("segment", "--model", patched, fixture("eval_gold.txt"));
    assert_ne!(res.status.code(), Some(0));
    assert!(stderr(&res).contains("version 9"), "{}", stderr(&res));
}

#[test]
fn inspect_lists_manifest() {
    let (_, model, _) = toy_model();
    let out = cli!("inspect", "--model", model);
    let text = stdout(&out);
    assert!(text.contains("composition\tgated"));
    assert!(text.contains("embedding.M"));
}

#[test]
fn config_file_and_flags_are_applied() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, "# tiny run\nd = 8\nH = 6\nepochs = 2\nw = 3\n").unwrap();
    let model = dir.path().join("small.model");
    let out = cli!("train", fixture("toy_corpus.txt"), "--config", cfg, "--model", model, "--max-word-len", "4");
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("epoch")).count(), 2);
    let m = Model::load(&model).unwrap();
    assert_eq!((m.config.dim, m.config.hidden, m.config.max_word_len), (8, 6, 4));
}

#[test]
fn frozen_pretrained_embeddings_survive_training() {
    let dir = tempfile::tempdir().unwrap();
    let vectors = dir.path().join("vec.txt");
    std::fs::write(&vectors, "3 4\n我 0.1 0.2 0.3 0.4\n们 -0.1 0.0 0.5 0.25\n囧 1 1 1 1\n").unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "d = 4\nH = 4\nepochs = 2\n").unwrap();
    let model = dir.path().join("frozen.model");
    let out = cli!(
        "train",
        fixture("toy_corpus.txt"),
        "--config",
        cfg,
        "--model",
        model,
        "--pretrained-emb",
        vectors,
        "--freeze-embeddings"
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let m = Model::load(&model).unwrap();
    let id = m.vocab.id_of_str("我").unwrap();
    let col = m.embedding.column(&m.store, id);
    let expected = [0.1f32, 0.2, 0.3, 0.4];
    for (a, b) in col.iter().zip(expected) {
        assert_eq!(*a, b as f64);
    }
}

#[test]
fn ablation_tables() {
    let corpus = fixture("toy_corpus.txt");
    let sweep = cli!("ablate", "beam_sweep", corpus);
    assert!(sweep.status.success(), "{}", stderr(&sweep));
    let table = stdout(&sweep);
    let f1 = |label: &str| -> f64 {
        let line = table.lines().find(|l| l.starts_with(label)).unwrap();
        line.split('\t').nth(3).unwrap().parse().unwrap()
    };
    assert_eq!(table.lines().count(), 5);
    assert!(f1("k=4") >= f1("k=1"), "{table}");

    let parts = cli!("ablate", "score_parts", corpus);
    let table = stdout(&parts);
    assert_eq!(table.lines().count(), 4, "{table}");
    let f1 = |label: &str| -> f64 {
        let line = table.lines().find(|l| l.starts_with(label)).unwrap();
        line.split('\t').nth(3).unwrap().parse().unwrap()
    };
    assert!(f1("both") >= f1("word_only"), "{table}");

    let composers = cli!("ablate", "simple_vs_gcnn", corpus);
    let table = stdout(&composers);
    assert!(table.contains("\nsimple\t") && table.contains("\ngated\t"), "{table}");
}

#[test]
fn thread_count_does_not_change_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut models = Vec::new();
    for threads in ["1", "4"] {
        let model = dir.path().join(format!("t{threads}.model"));
        let out = cli!(
            "train",
            fixture("toy_corpus.txt"),
            "--model",
            model,
            "--epochs",
            "3",
            "--threads",
            threads
        );
        assert!(out.status.success(), "{}", stderr(&out));
        models.push(std::fs::read(&model).unwrap());
    }
    assert!(models[0] == models[1]);
}
