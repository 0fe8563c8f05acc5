use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use qac_cli::{build_examples, eval_reports, load_engine, run, EngineArgs, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use qac_core::context::corpus_to_tsv;
use qac_core::dataset::{raw_pairs_to_tsv, SplitManifest};
use qac_core::engine::CompleteOptions;
use qac_core::metrics::{reports_to_tsv, EvalOptions, Quadrant};
use qac_core::synth::{generate, SynthConfig};
use qac_core::Source;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic")
}

fn qac(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = run(std::iter::once("qac").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Splits and models built once through the CLI itself.
fn pipeline() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let corpus = data_dir().join("corpus.tsv");
        let pairs = data_dir().join("pairs.tsv");
        let (splits, models) = (dir.join("splits"), dir.join("models"));
        let steps: [Vec<&str>; 4] = [
            vec!["make-splits", "--corpus", s(&corpus), "--pairs", s(&pairs), "--out", s(&splits)],
            vec!["train-tokenizer", "--corpus", s(&corpus), "--splits", s(&splits), "--models", s(&models)],
            vec!["train-lm", "--splits", s(&splits), "--models", s(&models)],
            vec!["build-trie", "--splits", s(&splits), "--models", s(&models)],
        ];
        for step in &steps {
            let (code, _) = qac(step);
            assert_eq!(code, EXIT_OK, "{step:?}");
        }
        dir
    })
}

fn engine_flags(dir: &Path) -> Vec<String> {
    vec![
        "--models".into(),
        dir.join("models").to_str().unwrap().into(),
        "--corpus".into(),
        data_dir().join("corpus.tsv").to_str().unwrap().into(),
        "--splits".into(),
        dir.join("splits").to_str().unwrap().into(),
    ]
}

fn with_engine(args: &[&str]) -> (i32, String) {
    let flags = engine_flags(pipeline());
    let mut all: Vec<&str> = args.to_vec();
    all.extend(flags.iter().map(String::as_str));
    qac(&all)
}

#[test]
fn shipped_corpus_matches_generator() {
    let c = generate(&SynthConfig::default());
    let corpus = std::fs::read_to_string(data_dir().join("corpus.tsv")).unwrap();
    let pairs = std::fs::read_to_string(data_dir().join("pairs.tsv")).unwrap();
    assert_eq!(corpus, corpus_to_tsv(&c.docs));
    assert_eq!(pairs, raw_pairs_to_tsv(&c.pairs));
}

#[test]
fn gen_corpus_writes_the_shipped_files() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = qac(&["gen-corpus", "--out", s(dir.path())]);
    assert_eq!(code, EXIT_OK);
    for f in ["corpus.tsv", "pairs.tsv"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(data_dir().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(qac(&["--help"]).0, EXIT_OK);
    assert_eq!(qac(&["--version"]).0, EXIT_OK);
    assert_eq!(qac(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(qac(&["complete"]).0, EXIT_USAGE);
    assert_eq!(qac(&["complete", "pa", "--mode", "magic"]).0, EXIT_USAGE);
    let missing = ["train-lm", "--splits", "/nonexistent/splits", "--models", "/nonexistent/models"];
    assert_eq!(qac(&missing).0, EXIT_DATA);
    let corpus = data_dir().join("corpus.tsv");
    let pairs = data_dir().join("pairs.tsv");
    let bad_fraction = ["make-splits", "--corpus", s(&corpus), "--pairs", s(&pairs), "--ss-fraction", "1.5"];
    assert_eq!(qac(&bad_fraction).0, EXIT_USAGE);
    assert_eq!(with_engine(&["complete", "pa", "--k", "0"]).0, EXIT_USAGE);
    assert_eq!(with_engine(&["complete", "pa", "--doc-id", "nope"]).0, EXIT_DATA);
    assert_eq!(with_engine(&["eval", "--contexts", "DENSE_RAG", "--limit", "1"]).0, EXIT_DATA);
}

#[test]
fn make_splits_is_deterministic() {
    let dir = pipeline();
    let again = tempfile::tempdir().unwrap();
    let corpus = data_dir().join("corpus.tsv");
    let pairs = data_dir().join("pairs.tsv");
    let (code, _) = qac(&["make-splits", "--corpus", s(&corpus), "--pairs", s(&pairs), "--out", s(again.path())]);
    assert_eq!(code, EXIT_OK);
    for f in ["train.tsv", "val.tsv", "test_ss.tsv", "test_su.tsv", "test_us.tsv", "test_uu.tsv", "manifest.json"] {
        assert_eq!(std::fs::read(dir.join("splits").join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap(), "{f}");
    }
    let m = SplitManifest::read(again.path()).unwrap();
    m.verify().unwrap();
}

#[test]
fn complete_prints_rank_score_text() {
    let (code, out) = with_engine(&["complete", "--doc-id", "doc000", "--k", "5", "pa"]);
    assert_eq!(code, EXIT_OK);
    let lines: Vec<&str> = out.lines().collect();
    assert!(!lines.is_empty() && lines.len() <= 5);
    for (i, l) in lines.iter().enumerate() {
        let cols: Vec<&str> = l.splitn(3, '\t').collect();
        assert_eq!(cols[0], (i + 1).to_string());
        cols[1].parse::<f64>().unwrap();
        assert!(cols[2].starts_with("pa"), "{l}");
    }
}

#[test]
fn zero_bias_guided_equals_lm() {
    for prefix in ["paris lo", "how to", "gar", "zz"] {
        let (c1, guided) = with_engine(&["complete", "--doc-id", "doc010", "--mode", "guided", "--bias", "0", prefix]);
        let (c2, lm) = with_engine(&["complete", "--doc-id", "doc010", "--mode", "lm", prefix]);
        assert_eq!((c1, c2), (EXIT_OK, EXIT_OK));
        assert!(!lm.is_empty());
        assert_eq!(guided, lm, "{prefix}");
    }
}

#[test]
fn eval_matches_library() {
    let dir = pipeline();
    let (code, out) = with_engine(&["eval", "--modes", "mpc,guided", "--limit", "15", "--seed", "5"]);
    assert_eq!(code, EXIT_OK);

    let args = EngineArgs {
        models: dir.join("models"),
        corpus: Some(data_dir().join("corpus.tsv")),
        splits: Some(dir.join("splits")),
        vectors: None,
    };
    let (engine, manifest) = load_engine(&args).map_err(|e| format!("{e:?}")).unwrap();
    let examples = build_examples(&manifest.unwrap(), &Quadrant::ALL, 15, 5).unwrap();
    let runs: Vec<CompleteOptions> = [Source::Mpc, Source::Guided]
        .into_iter()
        .map(|mode| CompleteOptions { mode, ..Default::default() })
        .collect();
    let reports = eval_reports(&engine, &examples, &runs, &EvalOptions::default());
    assert_eq!(out, reports_to_tsv(&reports));
    assert_eq!(out.lines().count(), 1 + 4 * 2);
}

#[test]
fn sweep_rows_follow_the_grid() {
    let (code, out) = with_engine(&["sweep", "--limit", "3", "--no-tes"]);
    assert_eq!(code, EXIT_OK);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0].split('\t').next(), Some("alpha"));
    assert_eq!(lines.len(), 49);
    assert!(lines[1].starts_with("0.05\t0.05\t20\t3\t"));
    assert!(lines[48].starts_with("0.5\t0.5\t40\t3\t"));
}
