use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nerleak(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nerleak"))
        .args(args)
        .env_remove("RUST_BACKTRACE")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nerleak(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn features_prints_json_lines() {
    let out = ok(&["features", "Threats", "ABCDEfghij", "--against", "ABCDefghij"]);
    let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["shape"], "Xxxxx");
    assert_eq!(lines[1]["shape"], "XXXXxxxx");
    assert_eq!(lines[1]["f_distance"], 0);
}

#[test]
fn gen_is_seeded_and_counted() {
    let a = ok(&["gen", "phone", "--count", "5", "--seed", "2"]);
    assert_eq!(a, ok(&["gen", "phone", "--count", "5", "--seed", "2"]));
    assert_eq!(a.lines().count(), 5);
    assert_ne!(a, ok(&["gen", "phone", "--count", "5", "--seed", "3"]));
    assert_eq!(ok(&["gen", "common", "--count", "3"]).lines().count(), 3);
    assert!(!nerleak(&["gen", "feature", "--count", "3"]).status.success());
}

#[test]
fn corpus_train_and_attack_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("c.json");
    ok(&["corpus", "synth", "--group", "person=40", "--group", "filler=10", "--seed", "1", "--out", p(&corpus)]);
    let (a, b) = (d.join("a.json"), d.join("b.json"));
    ok(&["corpus", "split", p(&corpus), "--first", p(&a), "--second", p(&b)]);
    let cfg = d.join("model.json");
    fs::write(&cfg, r#"{"hidden_dim":8,"embed_rows_per_feature":256}"#).unwrap();
    let model = d.join("m.bin");
    let log = ok(&["train", p(&a), "--out", p(&model), "--epochs", "2", "--model-config", p(&cfg), "--labels", "PERSON"]);
    assert_eq!(log.lines().count(), 2);
    let cands = d.join("cands.txt");
    fs::write(&cands, ok(&["gen", "password", "--count", "20"])).unwrap();
    let target = fs::read_to_string(&cands).unwrap().lines().next().unwrap().to_string();
    let ranks = ok(&["attack", "rank", "--model", p(&model), "--candidates", p(&cands), "--target", &target, "--template", "Patient ◆ was admitted .", "--label", "PERSON"]);
    assert!(ranks.starts_with("candidate,score,is_target,f_distance\n"));
    assert_eq!(ranks.lines().count(), 21);
    let mi = ok(&["attack", "mi", "--model", p(&model), "--members", p(&a), "--nonmembers", p(&b), "--label", "PERSON"]);
    assert!(mi.starts_with("text,truth,score\n"));
    let dummy = d.join("dummy.json");
    ok(&["corpus", "dummy", p(&a), "--labels", "PERSON", "--out", p(&dummy)]);
    assert_ne!(fs::read_to_string(&a).unwrap(), fs::read_to_string(&dummy).unwrap());
}

#[test]
fn timing_and_defense_on_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("c.json");
    ok(&["corpus", "synth", "--group", "person=20", "--out", p(&corpus)]);
    let model = d.join("m.bin");
    ok(&["train", p(&corpus), "--out", p(&model), "--epochs", "1", "--labels", "PERSON"]);
    let members = d.join("mem.txt");
    fs::write(&members, "Patient\nwas\nthe\n.\n").unwrap();
    let non = d.join("non.txt");
    fs::write(&non, "Qz7#kk\nWv9%jj\nXy8&hh\nUt6@gg\n").unwrap();
    let csv = ok(&["attack", "timing", "--model", p(&model), "--members", p(&members), "--nonmembers", p(&non), "--repeats", "3"]);
    assert!(csv.starts_with("word,truth,repeat,duration_ns,score\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 2 * 3);
    let defended = ok(&[
        "defend", "--model", p(&model), "--members", p(&members), "--nonmembers", p(&non), "--delay", "5", "--freeze-vocab",
        "--repeats", "1",
    ]);
    assert_eq!(defended.lines().count(), 1 + 4 * 2);
    assert!(!nerleak(&["defend", "--delay", "oops", "--model", p(&model), "--members", p(&members), "--nonmembers", p(&non)]).status.success());
    assert!(!nerleak(&["defend"]).status.success());
}

#[test]
fn run_with_overrides_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("timing.json");
    fs::write(&cfg, r#"{"kind":"timing","sizes":{"members":10,"nonmembers":10}}"#).unwrap();
    let runs = d.join("runs");
    let hash = ok(&["run", p(&cfg), "--out", p(&runs.join("a")), "--set", "sizes.repeats=3"]);
    let auc = fs::read_to_string(runs.join("a/timing_auc.csv")).unwrap();
    assert_eq!(auc.lines().next().unwrap(), format!("# manifest {}", hash.trim()));
    assert_eq!(auc.lines().count(), 2 + 3);
    let report = ok(&["report", p(&runs)]);
    assert_eq!(report, ok(&["report", p(&runs)]));
    assert!(report.lines().skip(1).all(|l| l.starts_with("timing,a,")));
}

#[test]
fn config_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"kind":"timing","repeatz":3}"#).unwrap();
    let out = nerleak(&["run", p(&cfg), "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("repeatz"));
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert!(!nerleak(&["report", p(&empty)]).status.success());
}
