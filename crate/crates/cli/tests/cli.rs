use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use photoseq_core::cache::{read_cache, MANIFEST_FILE, QUANTIZATION_TOLERANCE, SUM_IDENTITY_TOLERANCE};
use photoseq_core::synthetic::{generate_clip, noisy_bursts, ClipSpec};
use photoseq_core::training::model_path;
use photoseq_core::*;
use tempfile::TempDir;

const TINY: &str = r#"
[builder]
n_min = 3
n_max = 11
crop_size = 16
variance_to_n = [[0.0001, 5], [0.001, 11]]

[network]
short_head_channels = 1
long_head_channels = 2
trunk_channels = [4, 8, 16, 32, 64]

[evaluation]
crop_size = 32
examples_per_clip = 2
"#;

fn photoseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_photoseq")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = photoseq(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture { dir: tempfile::tempdir().unwrap() };
        std::fs::write(f.path("tiny.toml"), TINY).unwrap();
        std::fs::write(f.path("noise.toml"), "alpha = 0.01\nbeta = 0.0005\n").unwrap();
        ok(&["gen-corpus", "--out", s(&f.path("corpus")), "--clips", "2", "--frames", "24", "--height", "32", "--width", "32"]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn weights(&self) -> PathBuf {
        let w = self.path("w/net.safetensors");
        if !w.exists() {
            ok(&["train", "--config", s(&self.path("tiny.toml")), "--out", s(&w), "--iterations", "0"]);
        }
        w
    }
}

#[test]
fn help_lists_defaults() {
    let out = ok(&["train", "--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    let d = ToolkitConfig::default();
    for (flag, value) in [
        ("--iterations", d.schedule.total_iterations.to_string()),
        ("--lr ", format!("{:e}", d.schedule.initial_lr)),
        ("--lr-decay-every", d.schedule.lr_decay_every.to_string()),
        ("--lr-decay-factor", d.schedule.lr_decay_factor.to_string()),
        ("--batch-size", d.schedule.batch_size.to_string()),
        ("--lambda-sum", d.loss.lambda_sum.to_string()),
        ("--lambda-perc", d.loss.lambda_perc.to_string()),
        ("--lambda-adv", d.loss.lambda_adv.to_string()),
        ("--lambda-grad", d.loss.lambda_grad.to_string()),
    ] {
        let at = help.find(flag).unwrap_or_else(|| panic!("{flag} missing from help"));
        let entry = &help[at..help[at..].find("\n  -").map_or(help.len(), |e| at + e)];
        assert!(entry.contains(&format!("default: {value}]")), "{flag}: {entry}");
    }
    assert_eq!(d.schedule.initial_lr, 1e-4);
    assert_eq!(d.schedule.lr_decay_every, 25_000);
    for cmd in ["synth", "calibrate-noise", "sequence", "eval", "gen-corpus"] {
        ok(&[cmd, "--help"]);
    }
    let seq = String::from_utf8(ok(&["sequence", "--help"]).stdout).unwrap();
    assert!(seq.contains("default: 2]"));
    let eval = String::from_utf8(ok(&["eval", "--help"]).stdout).unwrap();
    assert!(eval.contains("default: 11]"));
}

#[test]
fn invalid_config_exits_2_without_outputs() {
    let f = Fixture::new();
    std::fs::write(f.path("bad.toml"), "[schedule]\ntotal_iterations = 10\nbogus = 1\n").unwrap();
    std::fs::write(f.path("bad2.toml"), "[builder]\nn_min = 4\n").unwrap();
    for bad in ["bad.toml", "bad2.toml"] {
        let out_dir = f.path("out");
        let out = photoseq(&["synth", "--config", s(&f.path(bad)), "--corpus", s(&f.path("corpus")), "--out", s(&out_dir), "--count", "1"]);
        assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(!out_dir.exists());
        let w = f.path("wout/net.safetensors");
        let out = photoseq(&["train", "--config", s(&f.path(bad)), "--out", s(&w), "--iterations", "0"]);
        assert_eq!(code(&out), 2);
        assert!(!f.path("wout").exists());
    }
    let out = photoseq(&["train", "--config", s(&f.path("tiny.toml")), "--out", s(&f.path("x/net.safetensors")), "--iterations", "5"]);
    assert_eq!(code(&out), 2, "perceptual weight without VGG weights");
    assert!(!f.path("x").exists());
    let missing = photoseq(&["synth", "--corpus", s(&f.path("nope")), "--out", s(&f.path("o")), "--count", "1"]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn synth_writes_verified_deterministic_caches() {
    let f = Fixture::new();
    let synth = |out: &str, count: &str| {
        ok(&[
            "synth", "--config", s(&f.path("tiny.toml")), "--noise", s(&f.path("noise.toml")),
            "--corpus", s(&f.path("corpus")), "--out", s(&f.path(out)), "--count", count, "--seed", "7",
        ]);
        std::fs::read(f.path(out).join(MANIFEST_FILE)).unwrap()
    };
    let empty = synth("empty", "0");
    let m: serde_json::Value = serde_json::from_slice(&empty).unwrap();
    assert_eq!(m["samples"].as_array().unwrap().len(), 0);
    assert_eq!(m["config"]["noise"]["alpha"], 0.01);

    assert_eq!(synth("a", "3"), synth("b", "3"));
    let (_, samples) = read_cache(&f.path("a")).unwrap();
    assert_eq!(samples.len(), 3);
    for smp in &samples {
        assert!(smp.sum_identity_residual() <= SUM_IDENTITY_TOLERANCE + QUANTIZATION_TOLERANCE);
        assert_eq!(smp.triplet.dims(), (16, 16));
    }
}

#[test]
fn calibrate_noise_recovers_parameters() {
    let f = Fixture::new();
    let truth = NoiseParams::new(0.004, 0.0002, "").unwrap();
    let spec = ClipSpec { height: 64, width: 64, ..ClipSpec::default() };
    for (k, burst) in noisy_bursts(&spec, &truth, 4, 24, 3).unwrap().iter().enumerate() {
        io::write_frames(&f.path("bursts").join(format!("b{k}")), "f_", burst.frames(), true).unwrap();
    }
    let out = f.path("cal/noise.toml");
    ok(&["calibrate-noise", "--burst", s(&f.path("bursts")), "--out", s(&out), "--gain-label", "iso800"]);
    let p = NoiseParams::load(&out).unwrap();
    assert!((p.alpha / truth.alpha - 1.0).abs() < 0.05, "{p:?}");
    assert!((p.beta / truth.beta - 1.0).abs() < 0.05, "{p:?}");
    assert_eq!(p.gain_label, "iso800");
    add_noise(&Image::constant(4, 4, 0.5).unwrap(), &p, 1).unwrap();

    let flat = Image::constant(32, 32, 0.4).unwrap();
    let frames: Vec<Image> = (0..16).map(|t| add_noise(&flat, &truth, t).unwrap()).collect();
    io::write_frames(&f.path("flat"), "f_", &frames, true).unwrap();
    let bad = photoseq(&["calibrate-noise", "--burst", s(&f.path("flat")), "--out", s(&f.path("flat.toml"))]);
    assert_ne!(code(&bad), 0);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("ill-posed"));
}

#[test]
fn train_outputs() {
    let f = Fixture::new();
    let cfg = ToolkitConfig::parse(TINY).unwrap();
    let w = f.weights();
    let fresh = Decomposer::init(&cfg.network, cfg.schedule.seed).unwrap();
    assert_eq!(Decomposer::load(&w, None).unwrap().value_digest(), fresh.value_digest());
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("w/net.safetensors.run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["network"]["trunk_channels"], serde_json::json!([4, 8, 16, 32, 64]));

    let log = f.path("dry.csv");
    std::fs::write(f.path("dry.toml"), format!("{TINY}\n[training]\nlog_every = 25000\n")).unwrap();
    ok(&["train", "--config", s(&f.path("dry.toml")), "--out", s(&f.path("dry/net.safetensors")), "--dry-run", "--log", s(&log), "--batch-size", "1"]);
    let text = std::fs::read_to_string(&log).unwrap();
    let rows: Vec<(u64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let mut c = l.split(',');
            (c.next().unwrap().parse().unwrap(), c.next().unwrap().parse().unwrap())
        })
        .collect();
    let expected = [(0, 1e-4), (25_000, 1e-5), (50_000, 1e-6), (75_000, 1e-7)];
    assert_eq!(rows.len(), 4);
    for ((it, lr), (eit, elr)) in rows.iter().zip(expected) {
        assert_eq!(*it, eit);
        assert!((lr / elr - 1.0).abs() < 1e-6, "{lr} vs {elr}");
    }

    let base = f.path("three/net.safetensors");
    ok(&[
        "train", "--config", s(&f.path("tiny.toml")), "--noise", s(&f.path("noise.toml")), "--corpus", s(&f.path("corpus")),
        "--out", s(&base), "--three-models", "--iterations", "2", "--batch-size", "2", "--lambda-perc", "0", "--lr", "1e-3",
    ]);
    let digests: Vec<String> = [2, 1, 0].iter().map(|&k| Decomposer::load(&model_path(&base, k), None).unwrap().value_digest()).collect();
    assert!(digests[0] != digests[1] && digests[1] != digests[2] && digests[0] != digests[2]);
    assert!(!base.exists());
    for k in [2, 1, 0] {
        assert!(model_path(&f.path("three/net.log.csv"), k).exists());
    }
}

#[test]
fn numerical_failure_exits_4() {
    let f = Fixture::new();
    let out = photoseq(&[
        "train", "--config", s(&f.path("tiny.toml")), "--corpus", s(&f.path("corpus")), "--out", s(&f.path("nan/net.safetensors")),
        "--iterations", "20", "--batch-size", "2", "--lambda-perc", "0", "--lr", "1e30",
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_dir(f.path("nan")).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("diagnostic_")));
}

fn write_triplet(dir: &Path) -> [PathBuf; 3] {
    let clip = generate_clip(&ClipSpec { height: 16, width: 16, frames: 20, ..ClipSpec::default() }, 2).unwrap();
    let (t, _) = make_triplet(&clip, 1, 15).unwrap();
    std::fs::create_dir_all(dir).unwrap();
    let names = ["pre.png", "long.png", "post.png"].map(|n| dir.join(n));
    for (p, img) in names.iter().zip([&t.short_pre, &t.long, &t.short_post]) {
        io::write_image(p, img, true).unwrap();
    }
    names
}

#[test]
fn sequence_command() {
    let f = Fixture::new();
    let w = f.weights();
    let [pre, long, post] = write_triplet(&f.path("trip"));
    let cfg = f.path("tiny.toml");
    let run = |levels: &str, out: &str, extra: &[&str]| {
        let mut args = vec!["sequence", "--config", s(&cfg), "--weights", s(&w), "--triplet", s(&pre), s(&long), s(&post)];
        let out = f.path(out);
        args.extend(["--levels", levels, "--out", s(&out)]);
        args.extend(extra);
        ok(&args);
        let mut names: Vec<String> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
        names.sort();
        names
    };
    assert_eq!(run("1", "one", &[]), vec!["frame_0001.png", "sequence.json"]);
    let four = run("4", "four", &["--n-frames", "15"]);
    assert_eq!(four.len(), 16);
    for k in 1..=15 {
        assert_eq!(four[k - 1], format!("frame_{k:04}.png"));
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("four/sequence.json")).unwrap()).unwrap();
    let t: Vec<f64> = manifest["timepoints"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(t, (1..16).map(|j| j as f64 / 16.0).collect::<Vec<_>>());
    assert_eq!(manifest["config"]["sequencer"]["levels"], 4);

    let caps = f.path("caps");
    std::fs::create_dir_all(&caps).unwrap();
    for n in ["pre.png", "long.png", "post.png"] {
        std::fs::copy(f.path("trip").join(n), caps.join(n)).unwrap();
    }
    std::fs::write(caps.join("exposures.txt"), "S pre.png\nL long.png\nS post.png\nL long.png\nS pre.png\n").unwrap();
    ok(&["sequence", "--config", s(&f.path("tiny.toml")), "--weights", s(&w), "--captures", s(&caps), "--out", s(&f.path("stream"))]);
    assert!(f.path("stream/seq_0002/frame_0003.png").exists());

    std::fs::write(caps.join("exposures.txt"), "S pre.png\nL long.png\nL long.png\nS post.png\nS pre.png\n").unwrap();
    let bad = photoseq(&["sequence", "--config", s(&f.path("tiny.toml")), "--weights", s(&w), "--captures", s(&caps), "--out", s(&f.path("bad"))]);
    assert_eq!(code(&bad), 3);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("short on both sides"));
}

#[test]
fn eval_command() {
    let f = Fixture::new();
    let cfg = s(&f.path("tiny.toml")).to_string();
    let corpus = s(&f.path("corpus")).to_string();
    let eval = |protocol: &str, out: &str, extra: &[&str]| {
        let out = f.path(out);
        let mut args = vec!["eval", "--config", &cfg, "--corpus", &corpus, "--protocol", protocol, "--out", s(&out)];
        args.extend(extra);
        ok(&args);
        std::fs::read_to_string(out.join("report.csv")).unwrap()
    };
    let gt = eval("timepoints", "gt", &["--ground-truth"]);
    let rows: Vec<&str> = gt.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("99.0000")), "{gt}");
    let sweep = eval("blur-sweep", "gts", &["--ground-truth"]);
    let keys: Vec<&str> = sweep.lines().skip(1).map(|r| r.split(',').nth(1).unwrap()).collect();
    assert_eq!(keys, vec!["9", "11", "15", "19"]);
    assert!(sweep.lines().skip(1).all(|r| r.split(',').nth(2) == Some("99.0000")));

    let w = f.weights();
    let a = eval("timepoints", "n1", &["--weights", s(&w), "--seed", "3"]);
    let b = eval("timepoints", "n2", &["--weights", s(&w), "--seed", "3"]);
    assert_eq!(a, b);
    let rel = eval("relative", "rel", &["--weights", s(&w), "--reference", s(&w)]);
    assert_eq!(rel.lines().skip(1).filter(|r| r.contains(",99.0000,")).count(), 3);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("n1/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["evaluation"]["seed"], 3);
    assert!(std::fs::read_to_string(f.path("n1/report.txt")).unwrap().contains("averaged over examples"));
}
