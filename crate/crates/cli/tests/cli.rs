use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reglab::domain::{read_dataset, summarize_counts};
use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn reglab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reglab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = reglab(args);
    assert_eq!(o.status.code(), Some(0), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

fn assert_schema(name: &str, doc: &Value) {
    let path = root().join("schemas").join(format!("{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn parse(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

fn fixture(name: &str) -> String {
    root()
        .join("fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn no_arguments_is_a_usage_error() {
    let o = reglab(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(
        reglab(&["weights", "--scheme", "nonsense"]).status.code(),
        Some(2)
    );
    assert_eq!(reglab(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        reglab(&["grad-check", "--trials", "many"]).status.code(),
        Some(2)
    );
}

#[test]
fn weights_match_the_annotation_table() {
    let counts = fixture("appendix_counts.json");
    let text = ok(&[
        "weights",
        "--counts",
        &counts,
        "--scheme",
        "inverse-frequency",
    ]);
    assert!(text.contains("\"Bus stops\": 73"), "{text}");
    let v = parse(&text);
    assert_schema("weights", &v);
    assert_eq!(v["total"], 3650);
    let poles = v["weights"]["Single-arm poles"].as_f64().unwrap();
    assert!((poles - 3650.0 / 1500.0).abs() <= 1e-12);

    let normalized = parse(&ok(&["weights", "--counts", &counts]));
    assert_eq!(normalized["scheme"], "inverse-frequency-normalized");
    let bus = normalized["weights"]["Bus stops"].as_f64().unwrap();
    assert!((bus - 73.0 / 7.0).abs() <= 1e-12);
}

#[test]
fn domain_errors_exit_one_with_a_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("c.json");
    std::fs::write(&counts, r#"{"a": 10, "b": 0}"#).unwrap();
    let o = reglab(&[
        "weights",
        "--counts",
        path_str(&counts),
        "--scheme",
        "inverse-frequency",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("zero annotations"));

    let missing = reglab(&["weights", "--counts", "/nonexistent/counts.json"]);
    assert_eq!(missing.status.code(), Some(1));

    let o = Command::new(env!("CARGO_BIN_EXE_reglab"))
        .args(["grad-check", "--trials", "1"])
        .env("REGLAB_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn grad_check_passes_at_seed_seven() {
    let v = parse(&ok(&["grad-check", "--seed", "7", "--trials", "100"]));
    assert_schema("grad-check", &v);
    assert_eq!(v["pass"], true);
    assert!(v["max_relative_error"].as_f64().unwrap() <= 1e-5);
    assert_eq!(v["losses"].as_array().unwrap().len(), 5);
}

#[test]
fn grad_check_failure_is_a_domain_error() {
    let o = reglab(&["grad-check", "--trials", "3", "--threshold", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(parse(&stdout(&o))["pass"], false);
}

#[test]
fn gen_data_is_reproducible_and_exact() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        ok(&[
            "gen-data",
            "--seed",
            "11",
            "--scenes",
            "120",
            "--miss-rate",
            "0.1",
            "--out",
            path_str(p),
        ]);
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_schema("dataset", &serde_json::from_slice(&bytes).unwrap());
    let ds = read_dataset(&a).unwrap();
    assert_eq!(
        summarize_counts(&ds.scenes, &ds.catalog, ds.task).total(),
        3650
    );

    let seg = dir.path().join("seg.json");
    ok(&[
        "gen-data",
        "--task",
        "segmentation",
        "--out",
        path_str(&seg),
    ]);
    let ds = read_dataset(&seg).unwrap();
    assert_eq!(
        summarize_counts(&ds.scenes, &ds.catalog, ds.task).total(),
        1200
    );

    let other = dir.path().join("c.json");
    ok(&[
        "gen-data",
        "--seed",
        "12",
        "--scenes",
        "120",
        "--miss-rate",
        "0.1",
        "--out",
        path_str(&other),
    ]);
    assert_ne!(bytes, std::fs::read(&other).unwrap());
}

#[test]
fn evaluate_scores_a_perfect_detector_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.json");
    ok(&[
        "gen-data",
        "--seed",
        "3",
        "--scenes",
        "100",
        "--out",
        path_str(&data),
    ]);
    let report = dir.path().join("r.json");
    let table = ok(&[
        "evaluate",
        "--dataset",
        path_str(&data),
        "--out",
        path_str(&report),
    ]);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_schema("metric-report", &v);
    for key in ["precision", "recall", "f1", "ap50", "ap50_95"] {
        assert_eq!(v["macro_avg"][key], 1.0, "{key}");
    }
    assert!(table.lines().last().unwrap().starts_with("all"));
    assert!(table.contains("100.00"));

    let rendered = ok(&["report", "--input", path_str(&report)]);
    assert_eq!(rendered, table);
}

#[test]
fn evaluate_noisy_detector_and_confidence_cutoff() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.json");
    ok(&[
        "gen-data",
        "--seed",
        "5",
        "--scenes",
        "150",
        "--miss-rate",
        "0.2",
        "--false-positive-rate",
        "1.5",
        "--noise-std",
        "4",
        "--out",
        path_str(&data),
    ]);
    let all = parse(&ok(&["evaluate", "--dataset", path_str(&data)]));
    let cut = parse(&ok(&[
        "evaluate",
        "--dataset",
        path_str(&data),
        "--threshold",
        "0.5",
    ]));
    assert_schema("metric-report", &all);
    let p = all["macro_avg"]["precision"].as_f64().unwrap();
    assert!(p > 0.0 && p < 1.0);
    // The cutoff never touches AP.
    assert_eq!(all["macro_avg"]["ap50"], cut["macro_avg"]["ap50"]);
    assert_eq!(
        reglab(&["evaluate", "--dataset", path_str(&data), "--threshold", "2"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn loss_eval_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("b.json");
    std::fs::write(
        &batch,
        r#"{"logits": [[2.0, 0.5, -1.0], [0.1, 0.2, 0.3]], "labels": [0, 2],
            "distances": [[0.5, 3.0, 2.0], [1.0, 2.5, 0.2]],
            "segmentation": {"logits": [[1.0, -1.0]], "labels": [1]}}"#,
    )
    .unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"loss": {"gamma": 1.0, "beta": 3.0}}"#).unwrap();
    let v = parse(&ok(&[
        "loss-eval",
        "--input",
        path_str(&batch),
        "--config",
        path_str(&cfg),
        "--gamma",
        "2.5",
    ]));
    assert_schema("loss-eval", &v);
    assert_eq!(v["objective"], "reg");
    assert_eq!(v["config"]["gamma"], 2.5);
    assert_eq!(v["config"]["beta"], 3.0);
    let per: Vec<f64> = v["per_sample"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!((v["value"].as_f64().unwrap() - per.iter().sum::<f64>() / 2.0).abs() <= 1e-12);
    let joint = &v["joint"];
    let expect = v["value"].as_f64().unwrap() + joint["segmentation"].as_f64().unwrap();
    assert!((joint["value"].as_f64().unwrap() - expect).abs() <= 1e-12);

    let zero = parse(&ok(&[
        "loss-eval",
        "--input",
        path_str(&batch),
        "--lambda",
        "0",
    ]));
    assert_eq!(zero["joint"]["value"], zero["value"]);

    let u = parse(&ok(&[
        "loss-eval",
        "--input",
        path_str(&batch),
        "--uncertainty",
        "--sigma-sq",
        "0",
    ]));
    let r = parse(&ok(&[
        "loss-eval",
        "--input",
        path_str(&batch),
        "--loss",
        "reg",
    ]));
    assert_eq!(u["objective"], "reg-u");
    assert!((u["value"].as_f64().unwrap() - r["value"].as_f64().unwrap()).abs() <= 1e-9);

    let far = parse(&ok(&[
        "loss-eval",
        "--input",
        path_str(&batch),
        "--direction",
        "farther",
        "--all-class-sum",
    ]));
    assert_eq!(far["config"]["refinement_direction"], "farther");
    assert_eq!(far["config"]["all_class_sum"], true);
}

#[test]
fn loss_eval_with_variational_state() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("b.json");
    std::fs::write(
        &batch,
        r#"{"probs": [[0.7, 0.3], [0.4, 0.6]], "labels": [0, 1], "distances": [[0.3, 2.0], [1.5, 0.1]],
            "mu": [[0.7, 0.3], [0.4, 0.6]], "sigma_sq": [[0.02, 0.02], [0.05, 0.05]]}"#,
    )
    .unwrap();
    let v = parse(&ok(&[
        "loss-eval",
        "--input",
        path_str(&batch),
        "--uncertainty",
    ]));
    assert_schema("loss-eval", &v);
    assert!(v["d_logits"].is_null());
    let bare = dir.path().join("bare.json");
    std::fs::write(&bare, r#"{"probs": [[0.7, 0.3], [0.4, 0.6]], "labels": [0, 1], "distances": [[0.3, 2.0], [1.5, 0.1]]}"#)
        .unwrap();
    let plain = parse(&ok(&[
        "loss-eval",
        "--input",
        path_str(&bare),
        "--loss",
        "reg",
    ]));
    // Spreading the probabilities raises the expected focal loss here.
    assert!(v["value"].as_f64().unwrap() > plain["value"].as_f64().unwrap());

    // A variational state is meaningless for the deterministic losses.
    let o = reglab(&["loss-eval", "--input", path_str(&batch), "--loss", "gfl"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn optimize_traces_validate() {
    let dir = tempfile::tempdir().unwrap();
    for alg in ["sgd", "rsgd", "proxgrad", "primaldual"] {
        let csv = dir.path().join(format!("{alg}.csv"));
        let v = parse(&ok(&[
            "optimize",
            "--algorithm",
            alg,
            "--iterations",
            "500",
            "--seed",
            "2",
            "--csv",
            path_str(&csv),
        ]));
        assert_schema("optimize", &v);
        let trace = v["trace"].as_array().unwrap();
        let first = trace[0]["loss"].as_f64().unwrap();
        let last = v["final_loss"].as_f64().unwrap();
        assert!(last <= first, "{alg}: {last} > {first}");
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("t,loss,residual,theta_norm"));
        assert_eq!(text.lines().count(), trace.len() + 1);
        if alg == "rsgd" {
            assert!(trace
                .iter()
                .all(|r| (r["theta_norm"].as_f64().unwrap() - 1.0).abs() <= 1e-12));
        }
        if alg == "primaldual" {
            let s: f64 = v["alpha"]
                .as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_f64().unwrap())
                .sum();
            assert!((s - 1.0).abs() <= 1e-6);
        }
    }
    assert_eq!(
        reglab(&["optimize", "--algorithm", "rsgd", "--problem", "lasso"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn train_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.json");
    ok(&[
        "train",
        "--loss",
        "weighted-ce",
        "--epochs",
        "50",
        "--seed",
        "4",
        "--out",
        path_str(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let v = parse(&text);
    assert_schema("train-report", &v);
    assert_eq!(v["per_epoch"].as_array().unwrap().len(), 50);
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert!(csv.starts_with("epoch,loss,class_0,class_1\n"));
    assert_eq!(csv.lines().count(), 51);

    let again = dir.path().join("u.json");
    ok(&[
        "train",
        "--loss",
        "weighted-ce",
        "--epochs",
        "50",
        "--seed",
        "4",
        "--out",
        path_str(&again),
    ]);
    assert_eq!(text, std::fs::read_to_string(&again).unwrap());

    let table = ok(&["report", "--input", path_str(&out)]);
    assert!(table.starts_with("Class"));
    assert!(table.contains("class-1"));

    let reg = parse(&ok(&[
        "train", "--loss", "reg", "--epochs", "5", "--gamma", "1",
    ]));
    assert_schema("train-report", &reg);
    assert_eq!(reg["loss_choice"], "reg");
}

#[test]
fn shipped_count_fixtures_validate() {
    for name in ["appendix_counts.json", "appendix_segmentation_counts.json"] {
        let v: Value =
            serde_json::from_str(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap();
        assert_schema("counts", &v);
    }
}
