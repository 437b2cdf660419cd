use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = r#"
seed = 11

[splits]
train = 8
dev = 2
test = 3

[synth]
vocab_size = 3
keypoints = 3
coords = 2
frames_per_gloss = 6
min_len = 1
max_len = 2

[model]
input_dim = 6
kernel = 3
channels = [8, 8]
strides = [1, 2]
hidden = 4

[train]
epochs = 2
batch_size = 4
"#;

fn signkd(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_signkd"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = signkd(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A temp dir holding `cfg.toml` and a generated dataset under `data/`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), BASE).unwrap();
    ok(dir.path(), &["synth", "-c", "cfg.toml", "--set", "output_dir=gen"]);
    dir
}

#[test]
fn eval_of_reference_against_itself_is_zero() {
    let dir = workspace();
    let out = ok(
        dir.path(),
        &["eval", "-c", "cfg.toml", "--set", "output_dir=ev", "--hyp", "gen/data/test.tsv", "--reference", "gen/data/test.tsv"],
    );
    let corpus = out.lines().last().unwrap();
    assert!(corpus.starts_with("corpus S=0 I=0 D=0"), "{corpus}");
    assert!(corpus.ends_with("wer=0.0000"), "{corpus}");
    let report = fs::read_to_string(dir.path().join("ev/eval_report.txt")).unwrap();
    assert!(report.starts_with("# config_hash="));
}

#[test]
fn training_replays_bit_identically() {
    let dir = workspace();
    let mut runs = Vec::new();
    for out in ["a", "b"] {
        ok(
            dir.path(),
            &["train", "-c", "cfg.toml", "--set", &format!("output_dir={out}"), "--set", "data.train='gen/data/train.tsv'"],
        );
        let ckpt = fs::read(dir.path().join(out).join("model.ckpt")).unwrap();
        let log = fs::read_to_string(dir.path().join(out).join("train_log.txt")).unwrap();
        runs.push((ckpt, log));
    }
    // output_dir is part of the config, so only the hash lines differ.
    let strip = |s: &str| s.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&runs[0].1), strip(&runs[1].1));
    assert_eq!(runs[0].1.lines().count(), 3);
    let a = signkd::archive::Archive::from_bytes(&runs[0].0).unwrap();
    let b = signkd::archive::Archive::from_bytes(&runs[1].0).unwrap();
    let tensors = |x: &signkd::archive::Archive| {
        x.entries.iter().filter(|e| !e.name.starts_with("meta.config_hash")).cloned().collect::<Vec<_>>()
    };
    assert_eq!(tensors(&a), tensors(&b));
    assert!(a.text("meta.config_hash").is_some());
}

#[test]
fn distillation_with_zero_alpha_logs_zero_kd_terms() {
    let dir = workspace();
    ok(dir.path(), &["train", "-c", "cfg.toml", "--set", "output_dir=t", "--set", "data.train='gen/data/train.tsv'"]);
    ok(
        dir.path(),
        &["export-teacher", "-c", "cfg.toml", "--set", "output_dir=t", "--checkpoint", "t/model.ckpt", "--manifest", "gen/data/train.tsv"],
    );
    let log = ok(
        dir.path(),
        &[
            "distill",
            "-c",
            "cfg.toml",
            "--set",
            "output_dir=d",
            "--set",
            "data.train='t/train_teacher.tsv'",
            "--set",
            "data.vocab='gen/data/vocab.txt'",
            "--set",
            "kd.alpha=0",
        ],
    );
    let epochs: Vec<&str> = log.lines().filter(|l| l.starts_with("epoch=")).collect();
    assert_eq!(epochs.len(), 2);
    for l in epochs {
        for key in ["l_c", "l_b", "l_s"] {
            assert!(l.contains(&format!("{key}=0.000000000 ")), "{l}");
        }
    }
}

#[test]
fn invalid_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let out = signkd(dir.path(), &["train", "--set", "train.epochs=0", "--set", "kd.alpha=-1", "--set", "data.train='nope.tsv'"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["seed", "kd.alpha", "train.epochs", "data.train"] {
        assert!(err.contains(needle), "missing {needle} in:\n{err}");
    }
}

#[test]
fn quantize_bench_and_correct_run() {
    let dir = workspace();
    ok(dir.path(), &["train", "-c", "cfg.toml", "--set", "output_dir=t", "--set", "data.train='gen/data/train.tsv'"]);
    let q = ok(
        dir.path(),
        &["quantize", "-c", "cfg.toml", "--set", "output_dir=t", "--checkpoint", "t/model.ckpt", "--calibration", "gen/data/train.tsv", "--manifest", "gen/data/test.tsv"],
    );
    assert!(q.contains("frame_agreement="));
    let b = ok(
        dir.path(),
        &["bench", "-c", "cfg.toml", "--set", "output_dir=t", "--checkpoint", "t/model.ckpt", "--quantized", "t/model.q8", "--manifest", "gen/data/test.tsv"],
    );
    assert!(b.contains("speedup="));
    let small = [
        "--set", "corrector.epochs=1", "--set", "corrector.d_model=8", "--set", "corrector.ffn=8",
        "--set", "corrector.encoder_layers=2", "--set", "corrector.batch_size=4", "--set", "textcorr.corpus_size=8",
        "--set", "output_dir=c",
    ];
    let mut args = vec!["pretrain-corrector", "-c", "cfg.toml"];
    args.extend(small);
    ok(dir.path(), &args);
    fs::write(dir.path().join("in.txt"), "t0s0o0 T0S0O0 t0s1o1\n").unwrap();
    let mut args = vec!["correct", "-c", "cfg.toml", "--corrector", "c/corrector.sgt", "--input", "in.txt"];
    args.extend(small);
    let out = ok(dir.path(), &args);
    assert_eq!(out.lines().count(), 1);
    assert!(out.split_whitespace().all(|t| t.starts_with('t')));
}
