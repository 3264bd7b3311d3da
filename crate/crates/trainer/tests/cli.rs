use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--height", "24", "--width", "24", "--depth", "4", "--volumes", "4", "--labeled-volumes", "1",
    "--unlabeled-volumes", "1", "--val-volumes", "1", "--test-volumes", "1", "--stage1-epochs", "1",
    "--stage1-batch", "4", "--stage2-epochs", "1", "--lcl-start-epoch", "1",
];

fn dcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcl")).args(args).output().unwrap()
}

fn run(sub: &[&str], extra: &[&str]) -> Output {
    let mut args = sub.to_vec();
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    let out = dcl(&args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let s = |name: &str| p(name).to_str().unwrap().to_owned();

    run(&["gen-data"], &["--data-dir", &s("data")]);
    assert!(p("data/run_header.txt").is_file());

    run(&["pretrain"], &["--data-dir", &s("data"), "--out-dir", &s("s1")]);
    for f in ["encoder.dcln", "metrics_stage1.csv", "run_header.txt", "timing.txt"] {
        assert!(p("s1").join(f).is_file(), "{f}");
    }
    let header = read(&p("s1/run_header.txt"));
    assert!(header.contains("command = pretrain"));
    assert!(header.contains("config_sha256 = "));
    assert!(header.contains("precision = single"));
    assert_eq!(read(&p("s1/metrics_stage1.csv")).lines().count(), 2);

    run(
        &["train"],
        &["--data-dir", &s("data"), "--out-dir", &s("s2"), "--pretrained", &s("s1/encoder.dcln")],
    );
    assert!(p("s2/model.dcln").is_file());
    let metrics = read(&p("s2/metrics.csv"));
    assert!(metrics.starts_with("epoch,split,loss_gcl,loss_seg,loss_cons,loss_lcl,lambda3,dice_mean,ji_mean,dice_c1"));
    assert_eq!(metrics.lines().count(), 4);

    let cfg = p("eval.cfg");
    std::fs::write(&cfg, format!("data_dir = {}\nout_dir = {}\n", s("data"), s("ev"))).unwrap();
    let out = run(&["eval", "--checkpoint", &s("s2/model.dcln"), "--config", cfg.to_str().unwrap()], &[]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("dice"));
    let eval = read(&p("ev/metrics_eval.csv"));
    assert_eq!(eval.lines().count(), 2);
    // the student scored by eval equals the final test row of training
    let test_row = metrics.lines().last().unwrap();
    let eval_row = eval.lines().nth(1).unwrap();
    assert_eq!(test_row.split(',').skip(7).collect::<Vec<_>>(), eval_row.split(',').skip(7).collect::<Vec<_>>());
}

#[test]
fn missing_checkpoint_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.dcln");
    let out = dcl(&["eval", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.dcln"));
}

#[test]
fn missing_pretrained_and_data_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let enc = dir.path().join("enc.dcln");
    let out = dcl(&["train", "--pretrained", enc.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("enc.dcln"));
    let out = dcl(&["pretrain", "--data-dir", dir.path().join("empty").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(dcl(&["train", "--no-such-key", "1"]).status.code(), Some(1));
    assert_eq!(dcl(&["train", "--seed", "abc"]).status.code(), Some(1));
    assert_eq!(dcl(&["train", "--stage2-lr", "0"]).status.code(), Some(1));
    assert_eq!(dcl(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dcl(&[]).status.code(), Some(1));
    assert_eq!(dcl(&["--help"]).status.code(), Some(0));
}
