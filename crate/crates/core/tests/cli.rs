use std::path::Path;

use causal_sfda::evaluation::ResultsFile;

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let code = causal_sfda::cli::run(std::iter::once("causal-sfda").chain(args.iter().copied()), &mut o, &mut e);
    (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/published_scores.results")
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, seed) in [(&a, "4"), (&b, "4"), (&c, "5")] {
        let (code, _, err) = run(&["synth", "--seed", seed, "--out", p(dir)]);
        assert_eq!(code, 0, "{err}");
    }
    for f in ["source.tsv", "target.tsv", "scenario.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(std::fs::read(a.join("target.tsv")).unwrap(), std::fs::read(c.join("target.tsv")).unwrap());
}

#[test]
fn synth_then_adapt_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let (code, _, err) = run(&["synth", "--seed", "1", "--setting", "partial", "--target-classes", "0,2,4", "--out", p(&data)]);
    assert_eq!(code, 0, "{err}");
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, "seed = 1\n\n[data]\ndescriptor = \"data/scenario.toml\"\n\n[adapt]\nepochs = 3\n").unwrap();
    let run_dir = tmp.path().join("run");
    let (code, out, err) = run(&["adapt", "--config", p(&config), "--out", p(&run_dir)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("partial setting"), "{out}");
    for f in ["config.toml", "loss.csv", "metrics.csv", "final.ckpt", "timing.txt", "scores.results", "dynamics.csv"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 1 + 3);

    let results = ResultsFile::load(&run_dir.join("scores.results")).unwrap();
    let methods: Vec<&str> = results.records.iter().map(|r| r.method.as_str()).collect();
    assert!(methods.contains(&"source") && methods.contains(&"causal-sfda"));

    let (code, out, err) = run(&["eval", p(&run_dir)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("causal-sfda") && out.contains("partial"), "{out}");
}

#[test]
fn missing_manifest_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(run(&["synth", "--seed", "1", "--out", p(&data)]).0, 0);
    std::fs::remove_file(data.join("target.tsv")).unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, "[data]\ndescriptor = \"data/scenario.toml\"\n").unwrap();
    let (code, _, err) = run(&["adapt", "--config", p(&config), "--out", p(&tmp.path().join("run"))]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("target.tsv"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, "[adapt]\nlearning_rate = 1.0\n").unwrap();
    let (code, _, err) = run(&["adapt", "--config", p(&config)]);
    assert_eq!(code, 2);
    assert!(err.contains("learning_rate"), "{err}");
}

#[test]
fn empty_results_directory_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["report", p(tmp.path())]);
    assert_eq!(code, 2);
    assert!(err.contains("no .results files"), "{err}");
}

#[test]
fn report_merges_split_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let whole = ResultsFile::load(&fixture()).unwrap();
    let (mut first, mut second) = (ResultsFile::default(), ResultsFile::default());
    for r in &whole.records {
        let half = if r.setting == "closed" || r.setting == "open" { &mut first } else { &mut second };
        half.push(&r.method, &r.setting, r.score);
    }
    first.save(&tmp.path().join("a.results")).unwrap();
    second.save(&tmp.path().join("b.results")).unwrap();
    let csv = |out: String| out[out.find("method,h_all").unwrap()..].to_string();
    let (code, merged, err) = run(&["report", p(tmp.path())]);
    assert_eq!(code, 0, "{err}");
    let (_, direct, _) = run(&["report", p(&fixture())]);
    assert_eq!(csv(merged), csv(direct));

    second.push("DIFO", "closed", 1.0);
    second.save(&tmp.path().join("b.results")).unwrap();
    let (code, _, err) = run(&["report", p(tmp.path())]);
    assert_eq!(code, 2);
    assert!(err.contains("DIFO"), "{err}");
}

#[test]
fn report_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("unification.csv");
    let (code, _, err) = run(&["report", p(&fixture()), "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("method,h_all,h_wrg,h_loso_closed"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn verify_dump_writes_both_sweeps() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("trials.csv");
    let (code, out, _) = run(&["verify", "--trials", "20", "--dump", p(&dump)]);
    assert_eq!(code, 0, "{out}");
    let lemma = std::fs::read_to_string(&dump).unwrap();
    let theorem = std::fs::read_to_string(tmp.path().join("trials.theorem1.csv")).unwrap();
    assert_eq!(lemma.lines().count(), 21);
    assert_eq!(theorem.lines().count(), 21);
}
