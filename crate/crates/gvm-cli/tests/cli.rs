//! Command-line behavior: exit codes, flag validation, file handling.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gvm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gvm"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    gvm().args(args).current_dir(dir).output().expect("spawn gvm")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth_small(dir: &Path, name: &str, rho: &str, seed: &str) -> PathBuf {
    let out = run(&["synth", "--n", "6", "--rho", rho, "--seed", seed, "-o", name], dir);
    assert!(out.status.success(), "{}", stderr(&out));
    dir.join(name)
}

#[test]
fn rho_out_of_range_exits_2_naming_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--n", "4", "--rho", "1.5", "--seed", "7", "-o", "d.gvmd"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--rho"), "{}", stderr(&out));
}

#[test]
fn unknown_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--n", "4", "--rho", "0.5", "--seed", "7", "--bogus", "1", "-o", "d.gvmd"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_seed_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--n", "4", "--rho", "0.5", "-o", "d.gvmd"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let data = synth_small(dir.path(), "d.gvmd", "0.5", "1");
    let out = run(
        &["train-gen", "--data", data.to_str().unwrap(), "-o", "g.gvmc", "--steps", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--seed"), "{}", stderr(&out));
}

#[test]
fn corrupt_dataset_is_a_clean_error_not_a_crash() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), "d.gvmd", "0.5", "3");
    let mut bytes = std::fs::read(&data).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(dir.path().join("cut.gvmd"), &bytes).unwrap();
    let out = run(
        &["train-gen", "--data", "cut.gvmd", "-o", "g.gvmc", "--seed", "1", "--steps", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("format error at byte"), "{msg}");

    bytes[0] = b'Z';
    std::fs::write(dir.path().join("bad.gvmd"), &bytes).unwrap();
    let out = run(
        &["train-gen", "--data", "bad.gvmd", "-o", "g.gvmc", "--seed", "1", "--steps", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bad magic"), "{}", stderr(&out));
}

#[test]
fn geometry_mismatch_between_config_and_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), "d.gvmd", "0.5", "4");
    std::fs::write(dir.path().join("small.conf"), "model.t = 4\n").unwrap();
    let out = run(
        &[
            "train-gen", "--data", data.to_str().unwrap(), "-o", "g.gvmc", "--seed", "1",
            "--steps", "1", "--config", "small.conf",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("does not match"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), "d.gvmd", "0.5", "5");
    std::fs::write(dir.path().join("bad.conf"), "model.d = 32\nnot.a.key = 1\n").unwrap();
    let out = run(
        &[
            "train-gen", "--data", data.to_str().unwrap(), "-o", "g.gvmc", "--seed", "1",
            "--steps", "1", "--config", "bad.conf",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("not.a.key") && msg.contains("line 2"), "{msg}");
}

#[test]
fn resume_rejects_conflicting_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), "d.gvmd", "0.5", "6");
    let out = run(
        &[
            "train-gen", "--data", data.to_str().unwrap(), "-o", "g.gvmc", "--seed", "1",
            "--steps", "2", "--batch", "2", "--log-every", "100",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(
        &[
            "train-gen", "--data", data.to_str().unwrap(), "-o", "h.gvmc", "--resume", "g.gvmc",
            "--lr", "0.5",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_requires_exactly_one_video_source() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), "d.gvmd", "0.5", "7");
    let out = run(
        &[
            "train-gen", "--data", data.to_str().unwrap(), "-o", "g.gvmc", "--seed", "1",
            "--steps", "1", "--batch", "2", "--log-every", "100",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&["generate", "--checkpoint", "g.gvmc", "-o", "x", "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = run(
        &[
            "generate", "--checkpoint", "g.gvmc", "-o", "x", "--seed", "1", "--data",
            data.to_str().unwrap(), "--index", "99",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--index"), "{}", stderr(&out));
}

#[test]
fn score_checkpoint_kind_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), "d.gvmd", "0.5", "8");
    let out = run(
        &[
            "train-gen", "--data", data.to_str().unwrap(), "-o", "g.gvmc", "--seed", "1",
            "--steps", "1", "--batch", "2", "--log-every", "100",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    // A generator checkpoint is not a scorer.
    let out = run(
        &["score", "--checkpoint", "g.gvmc", "--data", data.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("eval"), "{}", stderr(&out));
}

#[test]
fn score_feature_file_mode_emits_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), "d.gvmd", "0.5", "9");
    let out = run(
        &[
            "train-eval", "--data", data.to_str().unwrap(), "-o", "e.gvmc", "--seed", "2",
            "--steps", "2", "--batch", "4", "--log-every", "100",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));

    // Per-second feature files: [t, D] and [t, Hm] with toy defaults.
    let t = 8;
    let d = 32;
    let v = gvm_core::Tensor::filled(vec![t, d], 0.3);
    let m = gvm_core::Tensor::filled(vec![t, d], -0.2);
    gvm_cli::gvmt::save_f64(&dir.path().join("v.gvmt"), &v).unwrap();
    gvm_cli::gvmt::save_f64(&dir.path().join("m.gvmt"), &m).unwrap();

    let out = run(
        &[
            "score", "--checkpoint", "e.gvmc", "--video-features", "v.gvmt",
            "--music-features", "m.gvmt",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(fields.len(), 3, "{text}");
    assert_eq!(fields[0], "0");
    let ta: f64 = fields[1].parse().unwrap();
    let cmr: f64 = fields[2].parse().unwrap();
    assert!((0.0..=1.0).contains(&ta));
    assert!((-1.0..=1.0).contains(&cmr));
}

#[test]
fn gradcheck_reports_worst_parameter_and_honors_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run(&["gradcheck", "--seed", "3", "--model", "gen"], dir.path());
    assert!(ok.status.success(), "{}", stderr(&ok));
    let text = String::from_utf8_lossy(&ok.stdout).into_owned();
    assert!(text.contains("worst="), "{text}");
    assert!(text.contains("status=pass"), "{text}");

    let bad = run(&["gradcheck", "--seed", "3", "--model", "gen", "--inject-error"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("status=fail"));
}

#[test]
fn help_lists_all_subcommands() {
    let out = gvm().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    for cmd in ["synth", "train-gen", "generate", "train-eval", "score", "gradcheck", "ablate"] {
        assert!(text.contains(cmd), "missing {cmd} in help:\n{text}");
    }
}

#[test]
fn resume_continues_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), "d.gvmd", "0.8", "21");
    let base: &[&str] = &[
        "train-gen", "--data", "d.gvmd", "--seed", "2", "--steps", "10", "--batch", "3",
        "--lr", "1e-3", "--warmup", "3", "--log-every", "100",
    ];
    let _ = &data;

    let mut full = base.to_vec();
    full.extend(["-o", "full.gvmc"]);
    assert!(run(&full, dir.path()).status.success());

    let mut half = base.to_vec();
    half.extend(["-o", "half.gvmc", "--stop-at", "5"]);
    assert!(run(&half, dir.path()).status.success());

    let resumed = run(
        &["train-gen", "--data", "d.gvmd", "--resume", "half.gvmc", "-o", "resumed.gvmc", "--log-every", "100"],
        dir.path(),
    );
    assert!(resumed.status.success(), "{}", stderr(&resumed));
    assert_eq!(
        std::fs::read(dir.path().join("full.gvmc")).unwrap(),
        std::fs::read(dir.path().join("resumed.gvmc")).unwrap(),
        "resume is not bit-identical to an unsplit run"
    );
}
