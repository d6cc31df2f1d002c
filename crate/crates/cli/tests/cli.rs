use std::path::Path;
use std::process::{Command, Output};

fn aaut(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aaut"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("AAUT_BUDGET")
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn radius_zero_ball_is_the_identity_row() {
    let tmp = tempfile::tempdir().unwrap();
    let o = aaut(tmp.path(), &["bfs-ball", "--radius", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("ball.csv")).unwrap();
    assert_eq!(csv, "element_id,length,carets\n0,0,0\n");
    assert!(manifest(tmp.path())["outputs"]["ball.csv"].is_string());
}

#[test]
fn fill_writes_verified_traces_and_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let args =
        ["fill", "--d", "2", "--k", "2", "--D", "sym2", "--q", "2", "--n", "32", "--samples", "10", "--seed", "7"];
    let o = aaut(tmp.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traces = std::fs::read_dir(tmp.path().join("traces")).unwrap().count();
    assert_eq!(traces, 10);
    let profile = std::fs::read_to_string(tmp.path().join("profile.csv")).unwrap();
    let mut lines = profile.lines();
    assert_eq!(lines.next(), Some("n,samples,mean_area,max_area,nlogn_part,delta_part,c_hat"));
    assert!(lines.next().unwrap().starts_with("32,10,"));
    assert_eq!(std::fs::read_to_string(tmp.path().join("loops.jsonl")).unwrap().lines().count(), 10);
}

#[test]
fn identical_runs_have_identical_digests() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["dehn-profile", "--lengths", "8,16", "--samples", "4", "--seed", "3"];
    assert!(aaut(a.path(), &args).status.success());
    assert!(aaut(b.path(), &args).status.success());
    let (ma, mb) = (manifest(a.path()), manifest(b.path()));
    assert_eq!(ma["outputs"], mb["outputs"]);
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    for name in ["profile.csv", "samples.csv"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
    // A different seed changes the hash.
    let c = tempfile::tempdir().unwrap();
    assert!(aaut(c.path(), &["dehn-profile", "--lengths", "8,16", "--samples", "4", "--seed", "4"]).status.success());
    assert_ne!(manifest(c.path())["config_hash"], ma["config_hash"]);
}

#[test]
fn config_file_and_structured_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "d=2\nk=1\nseed=2\n").unwrap();
    let o = aaut(&tmp.path().join("ok"), &["compose-check", "--samples", "20", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(manifest(&tmp.path().join("ok"))["config"].as_str().unwrap().contains("k=1\n"));

    let o = aaut(&tmp.path().join("bad"), &["compose-check", "--D", "sym3"]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");

    let o =
        aaut(&tmp.path().join("budget"), &["level-image", "--spec", "lamplighter", "--levels", "8", "--budget", "300"]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "budget");
}

#[test]
fn self_similar_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let o = aaut(tmp.path(), &["nucleus", "--spec", "grigorchuk"]);
    assert!(o.status.success());
    let n: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("nucleus.json")).unwrap()).unwrap();
    assert_eq!(n["elements"].as_array().unwrap().len(), 5);
    assert_eq!(n["verified"], true);

    let spec = tmp.path().join("odometer.spec");
    std::fs::write(&spec, "degree 2\ngen a: perm=(1 2); sections=[e,a]\n").unwrap();
    let o = aaut(tmp.path(), &["branch-check", "--spec", spec.to_str().unwrap(), "--s", "2"]);
    assert!(o.status.success());
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("branch_check.json")).unwrap()).unwrap();
    assert_eq!(r["index"]["holds"], false);
}
