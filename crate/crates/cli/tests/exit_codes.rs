//! 0 success, 2 validation, 3 data, 4 predictor contract.

mod common;

use std::path::Path;

use common::{code, p};
use lesionseg::synthetic::write_disk_dataset;

fn manifest(dir: &Path) -> String {
    write_disk_dataset(&dir.join("data"), 2, 1, 64, 48).unwrap();
    p(&dir.join("data/manifest.jsonl"))
}

#[test]
fn validation_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let m = manifest(t.path());
    let out = p(&t.path().join("out"));
    let bad_config = t.path().join("bad.toml");
    std::fs::write(&bad_config, "[metrics]\njaccard_cutoff = 3.0\n").unwrap();

    assert_eq!(code(["predict", "--manifest", &m, "--out", &out, "--config", &p(&bad_config)]), 2);
    assert_eq!(code(["predict", "--manifest", &m, "--out", &out, "--task", "attribute:freckles"]), 2);
    assert_eq!(code(["predict", "--manifest", &m, "--out", &out, "--predictor", "oracle"]), 2);
    assert_eq!(code(["postprocess", "--maps", &out, "--out", &out, "--thresholds", "0.3,0.6"]), 2);
    assert_eq!(code(["folds", "--manifest", &m, "--out", &out, "--k", "1"]), 2);
    assert_eq!(code(["archcheck", "--input", "192,256"]), 2);
    // argument parsing errors share the code
    assert_eq!(code(["predict", "--out", &out]), 2);
    assert_eq!(code(["no-such-command"]), 2);
}

#[test]
fn data_errors_exit_3() {
    let t = tempfile::tempdir().unwrap();
    let out = p(&t.path().join("out"));
    let missing = p(&t.path().join("absent.jsonl"));
    assert_eq!(code(["predict", "--manifest", &missing, "--out", &out]), 3);

    let broken = t.path().join("broken.jsonl");
    std::fs::write(&broken, "{\"case_id\": 1}\n").unwrap();
    assert_eq!(code(["folds", "--manifest", &p(&broken), "--out", &out]), 3);

    let m = manifest(t.path());
    let empty = t.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(code(["evaluate", "--pred", &p(&empty), "--manifest", &m, "--out", &out]), 3);
    assert_eq!(code(["predict", "--manifest", &m, "--out", &out, "--predictor", "fixtures:/nonexistent"]), 3);
}

#[cfg(unix)]
#[test]
fn predictor_failures_exit_4() {
    use std::os::unix::fs::PermissionsExt;
    let t = tempfile::tempdir().unwrap();
    let m = manifest(t.path());
    let script = t.path().join("bad.sh");
    std::fs::write(&script, "#!/bin/sh\ncat >/dev/null\necho nothing-here\n").unwrap();
    std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
    let out = p(&t.path().join("out"));
    let predictor = format!("command:{}", p(&script));
    assert_eq!(code(["predict", "--manifest", &m, "--out", &out, "--predictor", &predictor]), 4);
}

#[test]
fn success_exits_0() {
    let t = tempfile::tempdir().unwrap();
    let m = manifest(t.path());
    let out = p(&t.path().join("out"));
    assert_eq!(code(["predict", "--manifest", &m, "--out", &out, "--folds", "1"]), 0);
    assert_eq!(code(["archcheck", "--builtin", "xception"]), 0);
}
