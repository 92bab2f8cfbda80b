use std::path::Path;
use std::process::{Command, Output};

fn emflow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emflow"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EMFLOW_CACHE_DIR")
        .output()
        .expect("run emflow")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

const TINY_MLE: &str = r#"
name = "tiny"
kind = "mle"
seeds = [0, 1, 2]

[dataset]
kind = "eight-gaussians"

[data]
train = 512
test = 256

[architecture]
name = "maf"
hidden = [8]

[train]
iterations = 20
batch_size = 64
eval_every = 5
"#;

#[test]
fn mle_three_seeds_writes_rows_and_sem() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY_MLE).unwrap();
    let out = emflow(&["train", "--config", "tiny.toml", "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));

    let run = dir.path().join("run");
    let csv = std::fs::read_to_string(run.join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4, "{csv}");
    assert!(lines[0].starts_with("seed,nll,"));

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n"], 3);
    let values: Vec<f64> = summary["runs"].as_array().unwrap().iter().map(|r| r["metric"].as_f64().unwrap()).collect();
    let mean = values.iter().sum::<f64>() / 3.0;
    let sem = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0 / 3.0).sqrt();
    assert!((summary["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((summary["sem"].as_f64().unwrap() - sem).abs() < 1e-12);

    for s in 0..3 {
        assert!(run.join(format!("trace-seed{s}.csv")).exists());
        assert!(run.join(format!("model-seed{s}.json")).exists());
    }
    // the resolved config reproduces the run bit for bit
    let again = emflow(&["train", "--config", "run/config.toml", "--out", "again"], dir.path());
    assert!(again.status.success(), "{}", text(&again.stderr));
    assert_eq!(csv, std::fs::read_to_string(dir.path().join("again/results.csv")).unwrap());
}

#[test]
fn seed_flags_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY_MLE).unwrap();
    let out = emflow(
        &["train", "--config", "tiny.toml", "--seed", "4", "--override", "train.iterations=3", "--out", "o", "--sequential"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("o/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("4,"));
    let cfg = std::fs::read_to_string(dir.path().join("o/config.toml")).unwrap();
    assert!(cfg.contains("iterations = 3"), "{cfg}");
}

#[test]
fn misspelled_key_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), TINY_MLE.replace("batch_size", "batchsize")).unwrap();
    let out = emflow(&["train", "--config", "bad.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("batchsize"), "{}", text(&out.stderr));
    assert!(!dir.path().join("o").exists());

    let out = emflow(&["train", "--config", "tiny.toml", "--override", "architecture.name=emf-t"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn wrong_subcommand_or_unknown_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY_MLE).unwrap();
    assert_eq!(emflow(&["vi", "--config", "tiny.toml"], dir.path()).status.code(), Some(2));
    let out = emflow(&["train", "--preset", "no-such-preset"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("desk-8g-maf"));
}

#[test]
fn training_failure_exits_3_with_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    // a learning rate this large drives the flow to non-finite values
    let cfg = TINY_MLE.replace("batch_size = 64", "batch_size = 64\nlr = 1e30\nclip_norm = 1e300");
    std::fs::write(dir.path().join("boom.toml"), cfg).unwrap();
    let out = emflow(&["train", "--config", "boom.toml", "--seed", "0", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    let o = dir.path().join("o");
    assert!(o.join("trace-seed0.csv").exists());
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(o.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["failures"].as_array().unwrap().len(), 1);
    assert!(o.join("results.csv").exists());
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |o: &str| {
        vec!["gen-data", "--preset", "desk-gen-brownian", "--override", "data.train=100", "--override", "data.test=50", "--out", o, "--csv"]
            .into_iter()
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    for o in ["a", "b"] {
        let a: Vec<String> = args(o);
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        let out = emflow(&a, dir.path());
        assert!(out.status.success(), "{}", text(&out.stderr));
    }
    let bin = "brownian-7-100.bin";
    let a = std::fs::read(dir.path().join("a").join(bin)).unwrap();
    let b = std::fs::read(dir.path().join("b").join(bin)).unwrap();
    assert_eq!(a, b);
    assert!(dir.path().join("a/brownian-7-100.csv").exists());
    assert!(dir.path().join("a/brownian-7-100.meta").exists());
}

#[test]
fn cache_dir_is_used_for_training_data() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY_MLE).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_emflow"))
        .args(["train", "--config", "tiny.toml", "--seed", "3", "--override", "train.iterations=2", "--out", "o"])
        .current_dir(dir.path())
        .env("EMFLOW_CACHE_DIR", dir.path().join("cache"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(dir.path().join("cache/eight-gaussians-3-512.bin").exists());
}

#[test]
fn vi_run_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    for (name, arch) in [("mf", "mf"), ("mvn", "mvn")] {
        let out = emflow(
            &[
                "vi",
                "--preset",
                "desk-conjugate-mf",
                "--override",
                &format!("architecture.name={arch}"),
                "--override",
                "train.iterations=200",
                "--override",
                "train.eval_mc_samples=500",
                "--seed",
                "1",
                "--seed",
                "2",
                "--out",
                name,
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", text(&out.stderr));
    }
    std::fs::write(
        dir.path().join("table.toml"),
        "[[row]]\nlabel = \"conjugate\"\nruns = { MF = \"mf\", MVN = \"mvn\" }\n",
    )
    .unwrap();
    let out = emflow(&["compare", "--config", "table.toml"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("dataset,MF,MVN,best"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("conjugate,") && row.contains(" ± "), "{row}");

    std::fs::write(dir.path().join("broken.toml"), "[[row]]\nlabel = \"x\"\nruns = { MF = \"absent\" }\n").unwrap();
    let out = emflow(&["compare", "--config", "broken.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("absent"), "{}", text(&out.stderr));
}

#[test]
fn verify_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = emflow(&["verify", "--only", "3", "--only", "11"], dir.path());
    let stdout = text(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("PASS C3") && stdout.contains("PASS C11"), "{stdout}");
    assert!(stdout.contains("2 passed, 0 failed"), "{stdout}");
}

#[test]
fn structure_from_program_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("walk.toml"),
        r#"
name = "walk"

[[param]]
name = "s"
value = [1.0]
transform = "softplus"
trainable = true

[[node]]
name = "a"
dist = "normal"
link = { mean = "0", std = "1" }

[[node]]
name = "b"
parents = ["a"]
dist = "normal"
link = { mean = "p0", std = "s" }
"#,
    )
    .unwrap();
    let cfg = TINY_MLE.replace("name = \"maf\"", "name = \"emf-t\"").replace("kind = \"mle\"", "kind = \"mle\"\nprogram = \"walk.toml\"");
    std::fs::write(dir.path().join("emf.toml"), cfg).unwrap();
    let out = emflow(&["train", "--config", "emf.toml", "--seed", "0", "--override", "train.iterations=5", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
}
