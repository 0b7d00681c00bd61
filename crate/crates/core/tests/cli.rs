//! End-to-end drives of the `deformer` binary: each test invokes the real
//! executable in a scratch directory and inspects its exit code, stdout,
//! and the files it leaves behind.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eeg_deformer::saliency::parse_saliency_csv;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_deformer"));
    // Tests control seeding explicitly; a stray environment override would
    // make runs incomparable.
    cmd.env_remove("DEFORMER_SEED");
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn deformer");
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Three tiny subjects with a strong 8 Hz bump on channel 1 for class 1;
/// small enough that a two-epoch run finishes in seconds.
const TINY_SPEC: &str = r#"
n_subjects = 3
segments_per_class = 6
channels = 2
segment_len = 32
sampling_rate = 32.0
noise_amplitude = 0.3
amplitude_jitter = 0.1

[[classes]]

[[classes]]
[[classes.signatures]]
channels = [1]
center_hz = 8.0
width_hz = 2.0
amplitude = 1.5
"#;

fn make_dataset(dir: &Path, seed: u64) -> PathBuf {
    let spec = dir.join("spec.toml");
    std::fs::write(&spec, TINY_SPEC).unwrap();
    let data = dir.join("tiny.eegd");
    run_ok(bin()
        .arg("generate-data")
        .arg("--spec")
        .arg(&spec)
        .arg("--out")
        .arg(&data)
        .arg("--seed")
        .arg(seed.to_string()));
    data
}

fn train_args<'a>(cmd: &'a mut Command, data: &Path, out: &Path, seed: u64) -> &'a mut Command {
    cmd.arg("train")
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(out)
        .args(["--kernels", "4", "--heads", "2", "--head-dim", "2"])
        .args(["--depth", "1", "--epochs", "2", "--batch-size", "8"])
        .args(["--lr0", "0.01", "--seed", &seed.to_string()])
}

#[test]
fn generate_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_dataset(tmp.path(), 5);
    assert!(data.is_file());
    let manifest =
        std::fs::read_to_string(tmp.path().join("tiny.eegd.manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 5"), "{manifest}");
    assert!(manifest.contains("[synth]"), "{manifest}");
    assert!(manifest.contains("input_sha256"), "{manifest}");

    let run = tmp.path().join("run");
    let out = run_ok(train_args(&mut bin(), &data, &run, 1));
    assert!(stdout_of(&out).contains("best epoch"));
    for name in ["best.ckpt", "best.ckpt.bin", "history.csv", "metrics.toml", "manifest.toml"] {
        assert!(run.join(name).is_file(), "missing {name}");
    }
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3, "{history}");
    assert!(history.starts_with("epoch,lr,train_loss,val_acc"));

    let out = run_ok(bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(run.join("best.ckpt"))
        .arg("--data")
        .arg(&data));
    let text = stdout_of(&out);
    assert!(text.contains("accuracy"), "{text}");
    assert!(text.contains("macro F1"), "{text}");
    assert!(text.contains("confusion"), "{text}");
}

#[test]
fn identical_invocations_leave_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_dataset(tmp.path(), 9);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(train_args(&mut bin(), &data, &a, 3));
    run_ok(train_args(&mut bin(), &data, &b, 3));
    for name in ["best.ckpt", "best.ckpt.bin", "history.csv", "metrics.toml"] {
        let left = std::fs::read(a.join(name)).unwrap();
        let right = std::fs::read(b.join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical runs");
    }

    let c = tmp.path().join("c");
    run_ok(train_args(&mut bin(), &data, &c, 4));
    let left = std::fs::read(a.join("best.ckpt.bin")).unwrap();
    let right = std::fs::read(c.join("best.ckpt.bin")).unwrap();
    assert_ne!(left, right, "different seeds reached identical weights");
}

#[test]
fn seed_env_var_wins_over_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_dataset(tmp.path(), 9);
    let (flag2, env2) = (tmp.path().join("flag2"), tmp.path().join("env2"));
    run_ok(train_args(&mut bin(), &data, &flag2, 2));
    run_ok(train_args(&mut bin(), &data, &env2, 1).env("DEFORMER_SEED", "2"));
    assert_eq!(
        std::fs::read(flag2.join("best.ckpt.bin")).unwrap(),
        std::fs::read(env2.join("best.ckpt.bin")).unwrap()
    );
    let manifest = std::fs::read_to_string(env2.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 2"), "{manifest}");

    let bad = bin()
        .arg("info")
        .env("DEFORMER_SEED", "many")
        .output()
        .unwrap();
    // info ignores seeds entirely, so a broken override must not kill it.
    assert!(bad.status.success());
}

#[test]
fn loso_writes_per_subject_artifacts_and_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_dataset(tmp.path(), 11);
    let out_dir = tmp.path().join("loso");
    let out = run_ok(bin()
        .arg("loso")
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out_dir)
        .args(["--kernels", "4", "--heads", "2", "--head-dim", "2"])
        .args(["--depth", "1", "--epochs", "1", "--batch-size", "8", "--seed", "7"]));
    for subject in ["s01", "s02", "s03"] {
        for name in ["best.ckpt", "history.csv", "metrics.toml"] {
            assert!(
                out_dir.join(subject).join(name).is_file(),
                "missing {subject}/{name}"
            );
        }
    }
    let csv = std::fs::read_to_string(out_dir.join("loso.csv")).unwrap();
    assert!(csv.starts_with("subject,accuracy,macro_f1"), "{csv}");
    assert!(csv.contains("\ns02,"), "{csv}");
    assert!(csv.contains("\nmean,"), "{csv}");
    assert!(csv.contains("\nstd,"), "{csv}");
    let text = stdout_of(&out);
    assert!(text.contains("mean accuracy"), "{text}");
}

#[test]
fn saliency_exports_one_map_per_subject_plus_average() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_dataset(tmp.path(), 13);
    let run = tmp.path().join("run");
    run_ok(train_args(&mut bin(), &data, &run, 1));
    let sal = tmp.path().join("sal");
    run_ok(bin()
        .arg("saliency")
        .arg("--checkpoint")
        .arg(run.join("best.ckpt"))
        .arg("--data")
        .arg(&data)
        .args(["--class", "1", "--format", "csv"])
        .arg("--out")
        .arg(&sal));
    for name in ["s01.csv", "s02.csv", "s03.csv", "average.csv", "manifest.toml"] {
        assert!(sal.join(name).is_file(), "missing {name}");
    }
    assert!(!sal.join("s01.pgm").exists());
    let (scores, map) =
        parse_saliency_csv(&std::fs::read_to_string(sal.join("average.csv")).unwrap()).unwrap();
    assert_eq!(scores.len(), 2);
    assert_eq!(map.len(), 2);
    assert_eq!(map[0].len(), 32);

    let only = tmp.path().join("sal_one");
    run_ok(bin()
        .arg("saliency")
        .arg("--checkpoint")
        .arg(run.join("best.ckpt"))
        .arg("--data")
        .arg(&data)
        .args(["--class", "0", "--format", "pgm", "--subject", "s02"])
        .arg("--out")
        .arg(&only));
    assert!(only.join("s02.pgm").is_file());
    assert!(!only.join("s01.pgm").exists());
    assert!(!only.join("s02.csv").exists());
}

#[test]
fn gradcheck_reports_every_group_within_tolerance() {
    let out = run_ok(bin()
        .arg("gradcheck")
        .args(["--channels", "2", "--segment-len", "16", "--sampling-rate", "30"])
        .args(["--classes", "2", "--kernels", "4", "--heads", "2", "--head-dim", "2"])
        .args(["--depth", "1", "--seed", "3"]));
    let text = stdout_of(&out);
    assert!(text.contains("max rel err"), "{text}");
    assert!(text.contains("gradient check passed"), "{text}");
}

#[test]
fn info_prints_the_shape_story() {
    let out = run_ok(bin().arg("info").args([
        "--channels",
        "28",
        "--segment-len",
        "800",
        "--sampling-rate",
        "200",
        "--classes",
        "2",
    ]));
    let text = stdout_of(&out);
    assert!(text.contains("kernel length 21"), "{text}");
    assert!(text.contains("= 1856"), "{text}");
    assert!(text.contains("parameters:"), "{text}");
    assert!(text.contains("multiply-accumulates"), "{text}");
    assert!(text.contains("ip mode power"), "{text}");

    let ablated = run_ok(bin().arg("info").args(["--no-ftl", "--ip-mode", "none"]));
    let text = stdout_of(&ablated);
    assert!(text.contains("ftl off"), "{text}");
    assert!(text.contains("ip mode none"), "{text}");
}

#[test]
fn failures_map_to_the_documented_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();

    // Unknown flags and subcommands are clap usage errors.
    let out = bin().arg("train").arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().arg("explode").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Invalid configuration values are usage errors too.
    let data = make_dataset(tmp.path(), 1);
    let out = train_args(&mut bin(), &data, &tmp.path().join("x"), 1)
        .args(["--val-fraction", "1.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // A bad seed override is rejected before any work happens.
    let out = train_args(&mut bin(), &data, &tmp.path().join("y"), 1)
        .env("DEFORMER_SEED", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Missing input files are runtime failures.
    let out = bin()
        .arg("train")
        .args(["--data", "no-such.eegd", "--out"])
        .arg(tmp.path().join("z"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Geometry clashes between a config file and the dataset stop the run.
    let cfg = tmp.path().join("model.toml");
    std::fs::write(
        &cfg,
        "channels = 5\nsegment_len = 32\nsampling_rate = 32.0\nn_classes = 2\n",
    )
    .unwrap();
    let out = train_args(&mut bin(), &data, &tmp.path().join("w"), 1)
        .arg("--model-config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("channels 5 vs 2"), "{err}");
}
